#pragma once

#include "ivpb/grid.hpp"

#include <array>
#include <span>
#include <vector>

namespace ivpb {

/// Pointwise hydrodynamic state (rho, u, theta) of a local Maxwellian.
struct LocalMaxwellianParams {
    double rho = 1.0;
    Vec3 u{0.0, 0.0, 0.0};
    double theta = 1.0;

    void validate() const;
};

struct GlobalMaxwellian {
    double theta_M = 1.0;
};

/// Polynomial velocity weight w(v) = (1 + |v|^2)^beta.
struct WeightConfig {
    double beta = 3.5;

    void validate() const;
    double operator()(const Vec3& v) const { return std::pow(1.0 + norm2(v), beta); }
};

struct Moments {
    double mass = 0.0;
    Vec3 momentum{0.0, 0.0, 0.0};
    double energy = 0.0;
};

std::vector<double> eval_local_maxwellian(const LocalMaxwellianParams& params, const VelocityGrid& grid);
std::vector<double> eval_global_maxwellian(const GlobalMaxwellian& gm, const VelocityGrid& grid);

Moments moments(std::span<const double> F, const VelocityGrid& grid);

/// Local Maxwellian parameters carrying the given moments. Throws NumericalError
/// when the moments are not those of a physical state (mass <= 0 or theta <= 0).
LocalMaxwellianParams maxwellian_params(const Moments& m);

/// Discrete inner product sum_j w_j a_j b_j (mirrored-pair order).
double inner(std::span<const double> a, std::span<const double> b, const VelocityGrid& grid);

/// Null-space basis chi_0..chi_4 of the linearized collision operator about a
/// local Maxwellian, sampled on a velocity grid. The projection uses the
/// discrete Gram matrix so that it is an exact orthogonal projection for the
/// quadrature inner product.
class ChiBasis {
public:
    ChiBasis(const LocalMaxwellianParams& params, const VelocityGrid& grid);

    const LocalMaxwellianParams& params() const { return params_; }
    const std::vector<double>& chi(int i) const { return chi_[static_cast<std::size_t>(i)]; }
    const std::vector<double>& sqrt_mu() const { return sqrt_mu_; }
    /// max_{ij} |<chi_i, chi_j> - delta_ij|
    double gram_defect() const { return gram_defect_; }
    const std::array<std::array<double, 5>, 5>& gram() const { return gram_; }

    /// Coefficients c with P g = sum_i c_i chi_i.
    std::array<double, 5> coefficients(std::span<const double> g, const VelocityGrid& grid) const;

private:
    LocalMaxwellianParams params_;
    std::array<std::vector<double>, 5> chi_;
    std::vector<double> sqrt_mu_;
    std::array<std::array<double, 5>, 5> gram_{};
    std::array<std::array<double, 5>, 5> gram_inv_{};
    double gram_defect_ = 0.0;
};

/// Gram defect above this threshold means the grid does not resolve the Maxwellian.
inline constexpr double kGramFailureThreshold = 1e-4;

ChiBasis build_chi_basis(const LocalMaxwellianParams& params, const VelocityGrid& grid);

struct HydroSplit {
    std::vector<double> Pg;
    std::vector<double> residual;
};

HydroSplit project_hydro(std::span<const double> g, const ChiBasis& basis, const VelocityGrid& grid);

struct HydroCoordinates {
    double rho = 0.0;
    Vec3 u{0.0, 0.0, 0.0};
    double theta = 0.0;
};

/// (rho_i, u_i, theta_i) of a coefficient F_i = sqrt(mu) g, normalized so that
/// int F_i = rho_i, int (v - u0) F_i = rho0 u_i, int |v - u0|^2 F_i = 3 theta_i rho0 + 3 theta0 rho_i.
HydroCoordinates hydro_coordinates(std::span<const double> g, const ChiBasis& basis, const VelocityGrid& grid);

/// Inverse of hydro_coordinates: the hydrodynamic field
/// rho_i/sqrt(rho0) chi_0 + sqrt(rho0/theta0) u_i . chi + sqrt(3 rho0 / 2) theta_i/theta0 chi_4.
std::vector<double> hydro_field(const HydroCoordinates& hc, const ChiBasis& basis);

/// Midpoint of the admissible bracket max(theta)/2 <= theta_M <= min(theta).
GlobalMaxwellian select_theta_M(std::span<const double> theta_field);

} // namespace ivpb
