#pragma once

#include "ivpb/cascade.hpp"
#include "ivpb/collision.hpp"
#include "ivpb/euler_poisson.hpp"
#include "ivpb/kinetic.hpp"
#include "ivpb/maxwellian.hpp"

#include <string>
#include <utility>
#include <vector>

namespace ivpb {

/// Scaled discrepancy between a kinetic state and the truncated expansion.
struct RemainderFields {
    /// R = eps^-k (F - sum_{i<2k} eps^i F_i)
    PhaseField R;
    /// f = R / sqrt(mu)
    PhaseField f;
    /// h = w R / sqrt(mu_M), w = (1 + |v|^2)^beta
    PhaseField h;
    Field phi_R;
    int k = 1;
    double epsilon = 1.0;
    GlobalMaxwellian global{};
    WeightConfig weight{};
};

RemainderFields remainder_fields(const KineticState& kinetic, const ExpansionSnapshot& snap, const ExpansionSet& set,
                                 int k, const GlobalMaxwellian& global, const WeightConfig& weight);

struct NormEntry {
    std::string name;
    double value = 0.0;
    /// For sup-norms over velocity: the maximiser touches the velocity truncation.
    bool boundary_argmax = false;
};

/// The remainder norm list:
///   eps^{3/2} sup (1+|v|)^{2 beta + 1} |R| / sqrt(mu_M),  eps^{3/2} sup |D_x phi_R|,
///   eps^5 sup |D_{x,v}((1+|v|)^{2 beta} R / sqrt(mu_M))|,  eps^5 sup |D_x^2 phi_R|,
///   L2 norms of f, phi_R, grad phi_R and the Laplacian of phi_R.
/// Derivatives are centered differences (one-sided at the velocity edges).
std::vector<NormEntry> norm_package(const RemainderFields& rem, const SpatialGrid& grid, const VelocityGrid& vgrid,
                                    double beta);

/// Phase-space L2 norm sqrt(sum F^2 w_v dx).
double phase_l2(const PhaseField& F, const SpatialGrid& grid, const VelocityGrid& vgrid);
double space_l2(const Field& f, const SpatialGrid& grid);

struct FitResult {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    /// 95% Student-t interval of the slope.
    double slope_low = 0.0;
    double slope_high = 0.0;
    std::size_t points = 0;
};

/// Least squares on (log eps, log value).
FitResult fit_order(const std::vector<std::pair<double, double>>& points);

struct SweepConfig {
    std::vector<double> epsilons;
    double T = 0.5;
    /// Snapshot spacing shared with the expansion; sup over time is over these.
    double store_interval = 0.05;
    int k = 1;
    double beta = 3.5;
    /// Global Maxwellian temperature; 0 selects the midpoint of the admissible bracket.
    double theta_M = 0.0;
    CollisionConfig collision{};
    KineticOptions kinetic{};

    /// Sorted descending; throws InvalidArgument("need ≥ 3 epsilons") and on
    /// repeated values or a ratio other than 2 between neighbours.
    std::vector<double> checked_epsilons() const;
};

struct SweepRow {
    double epsilon = 0.0;
    /// sup_t ||F - mu||_L2
    double distance = 0.0;
    /// Norm package, each entry the sup over snapshots.
    std::vector<NormEntry> norms;
    std::size_t snapshots = 0;
    std::size_t steps = 0;
    double dt = 0.0;
    double max_mass_defect = 0.0;
    double max_momentum_defect = 0.0;
    double max_energy_defect = 0.0;
    double total_outflow = 0.0;
    std::size_t clipped_cells = 0;
    std::size_t positivity_fixes = 0;
    bool valid = true;
};

struct SweepReport {
    std::vector<SweepRow> rows;
    FitResult distance_fit;
    /// 2 v(eps_min) - v(2 eps_min): the linear extrapolation of the distance to eps = 0.
    double distance_floor = 0.0;
    /// max / min over rows of sup_t ||f||_L2
    double f_ratio = 0.0;
    bool any_boundary_argmax = false;
    bool valid = true;
    double theta_M = 0.0;
    double beta = 3.5;
    int k = 1;
    double T = 0.0;
    double store_interval = 0.0;
    std::string expansion_checksum;
};

/// Kinetic runs from well-prepared data for every epsilon against a shared
/// background and expansion, with the remainder norms at every stored time.
SweepReport epsilon_sweep(const EulerTrajectory& background, const ExpansionSet& expansion, const SweepConfig& cfg);

/// sup over stored snapshots of ||F - mu||_L2 with mu the local Maxwellian of
/// background.at(t).
double distance_to_background(const KineticRun& run, const EulerTrajectory& background);

std::string sweep_csv(const SweepReport& report);
std::string sweep_json(const SweepReport& report);

} // namespace ivpb
