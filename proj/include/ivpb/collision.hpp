#pragma once

#include "ivpb/grid.hpp"
#include "ivpb/maxwellian.hpp"

#include <span>
#include <string>
#include <vector>

namespace ivpb {

enum class CollisionMode { hard_sphere, bgk };

/// How off-grid post-collision velocities are mapped back to nodes.
///   quadratic: 3-point Lagrange per axis (reproduces 1, v, |v|^2 exactly)
///   trilinear: 2-point per axis (reproduces 1, v)
enum class Interpolation { quadratic, trilinear };

CollisionMode parse_collision_mode(const std::string& s);
Interpolation parse_interpolation(const std::string& s);
std::string to_string(CollisionMode m);
std::string to_string(Interpolation i);

struct CollisionConfig {
    CollisionMode mode = CollisionMode::bgk;
    std::string angular_rule = "lebedev38";
    AngularQuadrature angular = lebedev38();
    bool conservation_fix = true;
    double bgk_rate = 1.0;
    Interpolation interpolation = Interpolation::quadratic;
    double krylov_tol = 1e-10;
    int max_krylov = 300;

    void validate() const;
};

/// Gain term and loss frequency of Q(F1, F2) = gain - nu[F1] * F2.
struct CollisionParts {
    std::vector<double> gain;
    std::vector<double> loss_frequency;
};

/// Discrete hard-sphere collision integral in gather form. For every node v,
/// partner node u and direction omega the gain adds
/// |(u - v).omega| F1(u') F2(v') with the post-collision values interpolated
/// from the grid (log-space interpolation where a field is single-signed,
/// plain polynomial interpolation otherwise); the loss frequency nu[F1] is the
/// nodal quadrature of |(u - v).omega| F1(u).
CollisionParts collision_parts(std::span<const double> F1, std::span<const double> F2, const VelocityGrid& grid,
                               const CollisionConfig& cfg);

std::vector<double> collide(std::span<const double> F1, std::span<const double> F2, const VelocityGrid& grid,
                            const CollisionConfig& cfg);

/// Adds shape * (l0 + l.v + l4 |v|^2) to `field` so that its (1, v, |v|^2)
/// moments equal `target`. The correction is the least-squares one in the
/// inner product weighted by 1/shape, so it decays with the shape.
void enforce_moments(std::vector<double>& field, std::span<const double> shape, const Moments& target,
                     const VelocityGrid& grid);

/// Collision frequency nu(v) = int int |(u - v).omega| mu(u) domega du of a
/// Maxwellian background, with both integrals done in closed form.
std::vector<double> collision_frequency(const LocalMaxwellianParams& background, const VelocityGrid& grid);

/// Linearized collision operator about a local Maxwellian. The attached basis
/// is not held to the resolution threshold of build_chi_basis, so small test
/// grids work; basis().gram_defect() reports the quality.
///
/// Hard-sphere mode uses the symmetric form
///   <L g, h> = 1/4 sum W (a(u') + a(v') - a(u) - a(v)) (b(u') + b(v') - b(u) - b(v)),
///   W = w_u w_v w_omega |(u - v).omega| mu(u) mu(v),  a = g/sqrt(mu), b = h/sqrt(mu),
/// with a, b interpolated at the post-collision velocities. It is symmetric and
/// positive semi-definite by construction, and annihilates the collision
/// invariants exactly when the interpolation reproduces them.
/// BGK mode: L = rate (I - P).
class LinearizedOperator {
public:
    LinearizedOperator(const LocalMaxwellianParams& background, const VelocityGrid& grid, CollisionConfig cfg);

    const LocalMaxwellianParams& background() const { return background_; }
    const VelocityGrid& grid() const { return *grid_; }
    const CollisionConfig& config() const { return cfg_; }
    const std::vector<double>& nu() const { return nu_; }
    const std::vector<double>& sqrt_mu() const { return sqrt_mu_; }
    const ChiBasis& basis() const { return basis_; }

    std::vector<double> apply(std::span<const double> g) const;
    /// Applies L to several fields at once, sharing the collision geometry.
    std::vector<std::vector<double>> apply_many(const std::vector<std::vector<double>>& gs) const;

private:
    LocalMaxwellianParams background_;
    const VelocityGrid* grid_;
    CollisionConfig cfg_;
    std::vector<double> nu_;
    std::vector<double> sqrt_mu_;
    ChiBasis basis_;
};

std::vector<double> apply_L(std::span<const double> g, const LinearizedOperator& op);

/// Gamma(g1, g2) = Q(sqrt(mu) g1, sqrt(mu) g2) / sqrt(mu) (hard-sphere mode only).
std::vector<double> apply_Gamma(std::span<const double> g1, std::span<const double> g2,
                                const LocalMaxwellianParams& background, const VelocityGrid& grid,
                                const CollisionConfig& cfg);

struct InvertResult {
    std::vector<double> g;
    int iterations = 0;
    double relative_residual = 0.0;
};

/// Solves L g = r on the microscopic subspace (P g = 0) by conjugate gradients
/// preconditioned with 1/nu, re-projecting every iterate.
InvertResult invert_L(std::span<const double> r, const LinearizedOperator& op);

/// rate * (M[F] - F) where M[F] is the Maxwellian carrying F's moments,
/// corrected on the grid so the moments agree to rounding.
std::vector<double> bgk_relax(std::span<const double> F, const VelocityGrid& grid, double rate);

/// The grid Maxwellian M[F] used by bgk_relax (moment-matched).
std::vector<double> discrete_maxwellian(std::span<const double> F, const VelocityGrid& grid);

} // namespace ivpb
