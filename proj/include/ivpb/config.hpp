#pragma once

#include "ivpb/cascade.hpp"
#include "ivpb/collision.hpp"
#include "ivpb/diagnostics.hpp"
#include "ivpb/euler_poisson.hpp"
#include "ivpb/kinetic.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ivpb {

/// Rejected configuration; the message starts with the key path.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct RunConfig {
    // spatial grid of the kinetic solver and the expansion
    int dim = 0;
    int cells = 0;
    double length = 0.0;
    // velocity grid
    int velocity_nodes = 0;
    double v_max = 0.0;
    // physics
    double K = 0.0;
    double beta = 0.0;
    /// "midpoint" of the admissible bracket, or a number
    std::string theta_M;
    // background
    int euler_cells = 0;
    double amplitude = 0.0;
    int wave_number = 0;
    double velocity_ratio = 0.0;
    bool muscl = false;
    double euler_cfl = 0.0;
    double wave_margin = 0.0;
    int euler_store_every = 0;
    /// Poisson stencil of the fine background run.
    std::string euler_stencil;
    /// Saved trajectory CSV to reuse (empty: compute the background).
    std::string background;
    // collision
    std::string collision_mode;
    std::string angular_rule;
    bool conservation_fix = true;
    double bgk_rate = 0.0;
    std::string interpolation;
    // cascade
    int k = 0;
    double cascade_cfl = 0.0;
    double leakage_tol = 0.0;
    double time_delta = 0.0;
    double store_interval = 0.0;
    // kinetic
    std::vector<double> epsilons;
    double T = 0.0;
    double dt = 0.0;
    int store_every = 0;
    double kinetic_cfl = 0.0;
    double epsilon_fraction = 0.0;
    double clip_threshold = 0.0;
    double invalid_clip_share = 0.0;
    // solver tolerances
    double newton_tol = 0.0;
    int max_newton = 0;
    double krylov_tol = 0.0;
    int max_krylov = 0;
    std::string stencil;
    double collision_krylov_tol = 0.0;
    int collision_max_krylov = 0;
    // verify suite
    int verify_nodes = 0;
    int verify_samples = 0;
    // output and randomness
    std::string output_dir;
    std::uint64_t seed = 0;

    SpatialGrid grid() const;
    SpatialGrid euler_grid() const;
    VelocityGrid velocity_grid() const;
    EllipticSolveOptions elliptic() const;
    EulerOptions euler_options() const;
    CollisionConfig collision() const;
    CascadeOptions cascade_options() const;
    KineticOptions kinetic_options() const;
    SweepConfig sweep_config() const;
};

/// Parses "key = value" lines ('#' starts a comment). Unknown keys, repeated
/// keys, malformed values and violated constraints throw ConfigError. Also
/// accepts a run manifest (JSON with a "config" object of the same keys).
RunConfig parse_config(const std::string& text);

/// Every key with its materialized value, in schema order.
std::string echo_config(const RunConfig& cfg);

/// Names of all accepted keys, in schema order.
std::vector<std::string> config_keys();

/// Runs euler, cascade, kinetic, sweep or verify, writing artifacts and a
/// manifest to out_dir. Returns the process exit status: 0 success, 1 runtime
/// failure, 2 configuration rejection. Failures are written to failure.json.
int run_command(const std::string& command, const RunConfig& cfg, const std::string& out_dir);

/// One entry of the verify property suite.
struct CheckResult {
    std::string name;
    double measured = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

std::vector<CheckResult> verify_suite(const RunConfig& cfg);

} // namespace ivpb
