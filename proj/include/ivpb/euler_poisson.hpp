#pragma once

#include "ivpb/grid.hpp"
#include "ivpb/poisson.hpp"

#include <array>
#include <string>
#include <vector>

namespace ivpb {

using Field = std::vector<double>;
using VectorField = std::array<Field, 3>;

/// Ion fluid state on the torus. theta = K rho^(2/3) is derived storage.
struct FluidState {
    SpatialGrid grid{1, 2, 1.0};
    double K = 1.0;
    double time = 0.0;
    Field rho;
    VectorField u;
    Field theta;
    Field phi;

    void refresh_theta();
};

struct EulerOptions {
    double K = 1.0;
    /// Fraction of the stability limit used for automatic time steps.
    double cfl = 0.4;
    /// Electrostatic margin on the acoustic speed in the CFL bound.
    double wave_margin = 1.5;
    bool muscl = false;
    /// Stencil for the time-derivative evaluation on sampled trajectories.
    Stencil rate_stencil = Stencil::spectral;
    EllipticSolveOptions elliptic{};

    void validate() const;
};

/// rho = 1 + a sum cos(k.x), u = grad chi with chi = velocity_ratio a sum sin(k.x)/|k|
/// (wave vectors in units of 2 pi / L), phi from the nonlinear Poisson solve.
FluidState init_irrotational(double amplitude, const std::vector<std::array<int, 3>>& modes, double K,
                             const SpatialGrid& grid, double velocity_ratio, const EllipticSolveOptions& elliptic);

/// Largest admissible step: h / (margin * max(|u_a| + c)), c^2 = (5/3) K rho^(2/3).
double euler_stability_limit(const FluidState& s, const EulerOptions& opts);

/// One SSP-RK2 step of the barotropic Euler-Poisson system (Rusanov flux,
/// optional MUSCL reconstruction with the van Leer limiter). Throws on
/// vacuum or a step above the stability limit.
FluidState step_euler_poisson(const FluidState& s, double dt, const EulerOptions& opts);

/// Time derivatives of (rho, u, theta, phi) from the PDE right-hand side.
struct FluidRates {
    Field rho;
    VectorField u;
    Field theta;
    Field phi;
};

FluidRates fluid_rates(const FluidState& s, Stencil stencil, const EllipticSolveOptions& elliptic);

class EulerTrajectory {
public:
    std::vector<FluidState> snapshots;
    std::vector<FluidRates> rates;
    /// Discretization used for rates and potentials off the snapshots.
    Stencil stencil = Stencil::spectral;
    EllipticSolveOptions elliptic{};

    double end_time() const { return snapshots.back().time; }
    /// Cubic Hermite interpolation of (rho, u) in time with phi re-solved from
    /// the interpolated density (snapshots are returned exactly).
    FluidState at(double t) const;
    /// Stored rates at snapshots; elsewhere the PDE right-hand side at at(t),
    /// so that state and rates are mutually consistent.
    FluidRates rate_at(double t) const;
    /// The same trajectory point-sampled on a coarser grid whose nodes are a
    /// subset of this grid's nodes; rates are recomputed there.
    EulerTrajectory sample(const SpatialGrid& coarse, Stencil stencil, const EllipticSolveOptions& elliptic) const;
};

/// Advances to time T with steps of at most `dt` (0 selects cfl * limit),
/// storing every `store_every` steps and the final state.
EulerTrajectory run_euler(const FluidState& initial, double T, double dt, int store_every, const EulerOptions& opts);

/// CSV with columns t, cell, rho, u1, u2, u3, theta, phi.
std::string trajectory_csv(const EulerTrajectory& traj);
/// Parses trajectory_csv output (rates are recomputed with `opts`).
EulerTrajectory trajectory_from_csv(const std::string& text, const SpatialGrid& grid, const EulerOptions& opts);

} // namespace ivpb
