#pragma once

#include "ivpb/cascade.hpp"
#include "ivpb/collision.hpp"
#include "ivpb/euler_poisson.hpp"
#include "ivpb/grid.hpp"
#include "ivpb/poisson.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace ivpb {

/// Ion distribution on the phase-space grid with its self-consistent potential.
struct KineticState {
    SpatialGrid grid{1, 2, 1.0};
    VelocityGrid vgrid{2, 1.0};
    PhaseField F;
    Field phi;
    double epsilon = 1.0;
    double time = 0.0;
};

struct KineticOptions {
    /// Step as a fraction of dx / (dim * v_max) when the caller passes dt = 0.
    double cfl = 0.5;
    /// The automatic step never exceeds this multiple of epsilon.
    double epsilon_fraction = 0.5;
    EllipticSolveOptions elliptic{1e-11, 30, 1e-12, 200, Stencil::spectral};
    /// Values below -clip_threshold * max F are clipped to zero.
    double clip_threshold = 1e-12;
    /// A run whose clipped share of phase-space cells exceeds this is invalid.
    double invalid_clip_share = 1e-3;

    void validate() const;
};

/// Per-step conservation record.
struct StepLedger {
    double time = 0.0;
    double dt = 0.0;
    double mass_before = 0.0;
    double mass_after = 0.0;
    /// Mass carried past the velocity truncation by the force substeps.
    double outflow = 0.0;
    /// Mass added by clipping negative values.
    double clipped_mass = 0.0;
    std::size_t clipped_cells = 0;
    /// Spatial cells whose force substep needed the moment-preserving positivity correction.
    std::size_t positivity_fixes = 0;
    /// Largest relative mass change applied by the moment projection after a
    /// velocity shift (interpolation non-conservation).
    double max_projection = 0.0;
    /// |after + outflow - clipped - before| / before
    double mass_defect = 0.0;
    /// Momentum and energy change against the exact work of the force substeps
    /// (net of outflow), relative to sum |momentum| resp. the energy.
    double momentum_defect = 0.0;
    double energy_defect = 0.0;
    double entropy = 0.0;
};

/// phi solved from the density of F.
KineticState make_kinetic_state(const SpatialGrid& grid, const VelocityGrid& vgrid, PhaseField F, double epsilon,
                                 double time, const EllipticSolveOptions& elliptic);

/// The local Maxwellian of the fluid state in every cell.
PhaseField local_maxwellian_field(const FluidState& fluid, const VelocityGrid& vgrid);

/// F = local Maxwellian of the fluid state in every cell.
KineticState well_prepared_state(const FluidState& fluid, const VelocityGrid& vgrid, double epsilon,
                                 const EllipticSolveOptions& elliptic);

Field kinetic_density(const PhaseField& F, const SpatialGrid& grid, const VelocityGrid& vgrid);
double total_mass(const PhaseField& F, const SpatialGrid& grid, const VelocityGrid& vgrid);
/// sum F log F over positive values, times the phase-space cell volume.
double entropy(const PhaseField& F, const SpatialGrid& grid, const VelocityGrid& vgrid);

/// Largest step allowed by the transport bound dim * v_max * dt <= dx.
double transport_dt_limit(const SpatialGrid& grid, const VelocityGrid& vgrid);
/// cfl * transport limit, capped at epsilon_fraction * epsilon.
double default_kinetic_dt(const KineticState& s, const KineticOptions& opts);

/// One Strang step: half transport, half force, full collision, half force,
/// half transport; phi re-solved after each transport substep. Throws
/// InvalidArgument on a CFL violation.
KineticState step_vpb(const KineticState& s, double dt, const CollisionConfig& cfg, const KineticOptions& opts,
                      StepLedger* ledger = nullptr);

struct KineticRun {
    std::vector<KineticState> snapshots;
    std::vector<StepLedger> ledger;
    std::size_t clipped_cells = 0;
    double max_mass_defect = 0.0;
    double max_momentum_defect = 0.0;
    double max_energy_defect = 0.0;
    double total_outflow = 0.0;
    /// False when clipping exceeded the budget.
    bool valid = true;
};

/// Advances to T with uniform steps of at most dt (0 selects the default),
/// storing every store_every steps plus the final state.
KineticRun run_vpb(const KineticState& initial, double T, double dt, int store_every, const CollisionConfig& cfg,
                   const KineticOptions& opts);

/// Raw doubles: per snapshot time, F, phi.
std::string kinetic_binary(const KineticRun& run);
std::string kinetic_manifest(const KineticRun& run, const std::string& binary_checksum);
/// Snapshots recovered from kinetic_binary / kinetic_manifest output.
std::vector<KineticState> kinetic_snapshots_from_files(const std::string& manifest_json, const std::string& binary);

} // namespace ivpb
