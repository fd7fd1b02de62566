#pragma once

#include "ivpb/collision.hpp"
#include "ivpb/euler_poisson.hpp"
#include "ivpb/grid.hpp"
#include "ivpb/maxwellian.hpp"
#include "ivpb/poisson.hpp"

#include <array>
#include <functional>
#include <utility>
#include <string>
#include <vector>

namespace ivpb {

/// Phase-space field, index cell * velocity_nodes + node.
using PhaseField = std::vector<double>;

/// A_0..A_n with c_0 = e^phi_0, c_m = (1/m) sum_{j=1}^m j phi_j c_{m-j}, A_m = e^-phi_0 c_m.
std::vector<Field> exp_taylor_coeffs(const std::vector<Field>& phi);

/// H(eps) - sum_{m <= order} eps^m e^phi_0 A_m with H(eps) = exp(sum_j eps^j phi_j).
Field taylor_remainder(const std::vector<Field>& phi, double epsilon, int order);

struct CascadeOptions {
    /// Truncation order; coefficients F_0..F_{2k-1} are built.
    int k = 1;
    Stencil stencil = Stencil::spectral;
    EllipticSolveOptions elliptic{};
    /// Fraction of the linear stability limit used for the coefficient step.
    double cfl = 0.5;
    /// Hydrodynamic leakage of a closure argument above this fraction is an error.
    double leakage_tol = 1e-3;
    /// Half-width of the centered time difference of closures (orders >= 2 only),
    /// capped at a quarter of the background time window.
    double time_delta = 1e-2;

    void validate() const;
};

/// The background at one time on the cascade grid, with derived fields.
struct BackgroundSlice {
    FluidState state;
    FluidRates rates;
    /// grad[a] = d/dx_a of the field.
    VectorField grad_rho, grad_theta, grad_phi;
    /// grad_u[b][a] = d u_b / dx_a
    std::array<VectorField, 3> grad_u;
    std::vector<LocalMaxwellianParams> params;
    PhaseField mu;
    PhaseField sqrt_mu;
};

BackgroundSlice make_slice(const FluidState& state, const FluidRates& rates, const VelocityGrid& vgrid,
                           Stencil stencil);

/// Hydrodynamic unknowns (rho_n, u_n, theta_n) of one order.
struct CoefficientState {
    Field rho;
    VectorField u;
    Field theta;

    static CoefficientState zeros(std::size_t cells);
};

/// sqrt(mu) times the hydrodynamic field with coordinates U (cellwise).
PhaseField hydro_part(const CoefficientState& U, const BackgroundSlice& slice, const VelocityGrid& vgrid);

struct MicroResult {
    /// (I - P)(F_n / sqrt(mu)) as a phase field.
    PhaseField g;
    /// ||P S|| / ||S|| of the closure argument S.
    double leakage = 0.0;
};

/// Solves L g = S - P S cellwise. `source` is the closure argument S in
/// sqrt(mu) units; its hydrodynamic share is reported and removed. Throws
/// NumericalError("cascade inconsistency ...") when it exceeds leakage_tol.
MicroResult microscopic_part(const PhaseField& source, const BackgroundSlice& slice, const VelocityGrid& vgrid,
                             const CollisionConfig& cfg, double leakage_tol);

/// Closure argument for the microscopic part of F_n:
///   S = -[(d_t + v.grad_x) F_{n-1} - sum_{i+j=n-1} grad phi_i . grad_v F_j - N_n] / sqrt(mu),
/// N_n = sum_{i+j=n, i,j>=1} Q(F_i, F_j) (hard sphere) or the order-n Taylor
/// coefficient of the BGK operator along F_0 + ... + eps^{n-1} F_{n-1}.
/// F[0] is ignored in favour of the analytic Maxwellian; dF_dt[n-1] is used for n >= 2.
PhaseField closure_source(int n, const BackgroundSlice& slice, const std::vector<PhaseField>& F,
                          const std::vector<PhaseField>& dF_dt, const std::vector<Field>& phi,
                          const VelocityGrid& vgrid, const CollisionConfig& cfg, Stencil stencil);

struct MacroSources {
    VectorField f;
    Field g;
};

/// Momentum and energy sources of the order-n hydrodynamic equations from F_n
/// and the coupling sums over i + j = n (i, j >= 1).
MacroSources macro_sources(int n, const PhaseField& Fn, const BackgroundSlice& slice,
                           const std::vector<CoefficientState>& U, const std::vector<Field>& phi,
                           const VelocityGrid& vgrid, Stencil stencil);

/// Per-cell 5x5 matrices of the symmetrized linear system
///   A0 (d_t U + V) + sum_i A_i d_i U + B U = G.
struct SymmetricSystem {
    std::vector<std::array<double, 5>> A0; // diagonal
    std::vector<std::array<std::array<std::array<double, 5>, 5>, 3>> A;
    std::vector<std::array<std::array<double, 5>, 5>> B;

    /// max |A_i - A_i^T| over cells and active axes.
    double symmetry_defect(int dim) const;
};

SymmetricSystem assemble_symmetric_system(const BackgroundSlice& slice);

/// d_t U_n = -V_n + A0^-1 (G - sum_i A_i d_i U_n - B U_n), G = (0, f, g / (2 theta_0)).
CoefficientState coefficient_rate(const CoefficientState& U, const Field& phi_n, const MacroSources& src,
                                  const BackgroundSlice& slice, const SymmetricSystem& sys, Stencil stencil);

/// phi_n from (e^phi_0 - Delta) phi_n = rho_n - e^phi_0 (A_n - phi_n).
Field solve_phi_n(const Field& rho_n, const Field& An_minus_phi_n, const BackgroundSlice& slice,
                  const EllipticSolveOptions& elliptic);

/// Time series of a single order with prescribed sources, zero initial data.
struct CoefficientSeries {
    std::vector<double> times;
    std::vector<CoefficientState> states;
    std::vector<Field> phi;
    double symmetry_defect = 0.0;
};

using SourceFunction = std::function<MacroSources(double t, const BackgroundSlice& slice)>;

/// Integrates one order with SSP-RK3 (step dt, 0 selects the stability
/// bound), A_n - phi_n = 0, storing every step.
CoefficientSeries solve_coefficient_system(const EulerTrajectory& background, const VelocityGrid& vgrid,
                                           const SourceFunction& sources, double T, double dt,
                                           const CascadeOptions& opts);

struct ExpansionSnapshot {
    double time = 0.0;
    /// F_0..F_{2k-1}
    std::vector<PhaseField> F;
    std::vector<Field> phi, rho, theta;
    std::vector<VectorField> u;
    /// Closure leakage per order (index n for the microscopic part of F_n).
    std::vector<double> leakage;
};

struct ExpansionSet {
    int k = 1;
    SpatialGrid grid{1, 2, 1.0};
    VelocityGrid vgrid{2, 1.0};
    std::vector<ExpansionSnapshot> snapshots;
    std::string background_checksum;
    double symmetry_defect = 0.0;
    /// sup_t (||U_1|| + ||grad phi_1|| + ||phi_1||) / (T sup_t ||G_1||)
    double growth_ratio = 0.0;
    double max_leakage = 0.0;
    int steps = 0;

    /// Snapshot stored at time t (within 1e-9).
    const ExpansionSnapshot& at(double t) const;
};

/// Builds all orders in lockstep on [0, T] from zero hydrodynamic data,
/// storing snapshots at multiples of store_interval (and T).
ExpansionSet build_expansion(const EulerTrajectory& background, const VelocityGrid& vgrid, const CollisionConfig& cfg,
                             const CascadeOptions& opts, double T, double store_interval);

/// (F_trunc, phi_trunc) = sum_i eps^i (F_i, phi_i).
std::pair<PhaseField, Field> assemble_expansion(const ExpansionSnapshot& snap, double epsilon);

/// Raw little-endian doubles of every snapshot field in a fixed order.
std::string expansion_binary(const ExpansionSet& set);
/// JSON manifest describing the binary layout, grids, orders and diagnostics.
std::string expansion_manifest(const ExpansionSet& set, const std::string& binary_checksum);
ExpansionSet expansion_from_files(const std::string& manifest_json, const std::string& binary);

} // namespace ivpb
