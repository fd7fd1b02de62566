#include "ivpb/config.hpp"

#include "ivpb/io.hpp"
#include "ivpb/maxwellian.hpp"
#include "ivpb/parallel.hpp"
#include "ivpb/poisson.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace ivpb {

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v)
{
    double x = 0.0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, x);
    if (ec != std::errc() || p != end || !std::isfinite(x))
        throw ConfigError(key + ": expected a real number, got '" + v + "'");
    return x;
}

long long parse_int(const std::string& key, const std::string& v)
{
    long long x = 0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, x);
    if (ec != std::errc() || p != end)
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return x;
}

bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "true")
        return true;
    if (v == "false")
        return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& v)
{
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(parse_double(key, trim(item)));
    if (out.empty())
        throw ConfigError(key + ": expected a comma-separated list of numbers");
    return out;
}

struct Key {
    std::string name;
    std::string default_value;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

Key int_key(const std::string& name, const std::string& def, int RunConfig::*m)
{
    return {name, def,
            [name, m](RunConfig& c, const std::string& v) {
                const long long x = parse_int(name, v);
                if (x < INT32_MIN || x > INT32_MAX)
                    throw ConfigError(name + ": integer out of range");
                c.*m = static_cast<int>(x);
            },
            [m](const RunConfig& c) { return std::to_string(c.*m); }};
}

Key real_key(const std::string& name, const std::string& def, double RunConfig::*m)
{
    return {name, def, [name, m](RunConfig& c, const std::string& v) { c.*m = parse_double(name, v); },
            [m](const RunConfig& c) { return format_double(c.*m); }};
}

Key bool_key(const std::string& name, const std::string& def, bool RunConfig::*m)
{
    return {name, def, [name, m](RunConfig& c, const std::string& v) { c.*m = parse_bool(name, v); },
            [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

Key text_key(const std::string& name, const std::string& def, std::string RunConfig::*m)
{
    return {name, def, [m](RunConfig& c, const std::string& v) { c.*m = v; },
            [m](const RunConfig& c) { return c.*m; }};
}

// The single place where every default lives.
const std::vector<Key>& schema()
{
    static const std::vector<Key> keys = [] {
        std::vector<Key> k;
        k.push_back(int_key("grid.dim", "1", &RunConfig::dim));
        k.push_back(int_key("grid.cells", "64", &RunConfig::cells));
        k.push_back(real_key("grid.length", "6.283185307179586", &RunConfig::length));
        k.push_back(int_key("velocity.nodes", "16", &RunConfig::velocity_nodes));
        k.push_back(real_key("velocity.v_max", "6.928203230275509", &RunConfig::v_max));
        k.push_back(real_key("physics.K", "1", &RunConfig::K));
        k.push_back(real_key("physics.beta", "3.5", &RunConfig::beta));
        k.push_back(text_key("physics.theta_M", "midpoint", &RunConfig::theta_M));
        k.push_back(int_key("background.cells", "512", &RunConfig::euler_cells));
        k.push_back(real_key("background.amplitude", "0.05", &RunConfig::amplitude));
        k.push_back(int_key("background.wave_number", "1", &RunConfig::wave_number));
        k.push_back(real_key("background.velocity_ratio", "1", &RunConfig::velocity_ratio));
        k.push_back(bool_key("background.muscl", "true", &RunConfig::muscl));
        k.push_back(real_key("background.cfl", "0.4", &RunConfig::euler_cfl));
        k.push_back(real_key("background.wave_margin", "1.5", &RunConfig::wave_margin));
        k.push_back(int_key("background.store_every", "4", &RunConfig::euler_store_every));
        k.push_back(text_key("background.stencil", "second_order", &RunConfig::euler_stencil));
        k.push_back(text_key("background.trajectory", "", &RunConfig::background));
        k.push_back(text_key("collision.mode", "bgk", &RunConfig::collision_mode));
        k.push_back(text_key("collision.angular_rule", "lebedev38", &RunConfig::angular_rule));
        k.push_back(bool_key("collision.conservation_fix", "true", &RunConfig::conservation_fix));
        k.push_back(real_key("collision.bgk_rate", "1", &RunConfig::bgk_rate));
        k.push_back(text_key("collision.interpolation", "quadratic", &RunConfig::interpolation));
        k.push_back(real_key("collision.krylov_tol", "1e-10", &RunConfig::collision_krylov_tol));
        k.push_back(int_key("collision.max_krylov", "300", &RunConfig::collision_max_krylov));
        k.push_back(int_key("cascade.k", "1", &RunConfig::k));
        k.push_back(real_key("cascade.cfl", "0.5", &RunConfig::cascade_cfl));
        k.push_back(real_key("cascade.leakage_tol", "0.001", &RunConfig::leakage_tol));
        k.push_back(real_key("cascade.time_delta", "0.01", &RunConfig::time_delta));
        k.push_back(real_key("cascade.store_interval", "0.05", &RunConfig::store_interval));
        k.push_back({"kinetic.epsilons", "0.2, 0.1, 0.05, 0.025",
                     [](RunConfig& c, const std::string& v) { c.epsilons = parse_list("kinetic.epsilons", v); },
                     [](const RunConfig& c) {
                         std::string s;
                         for (std::size_t i = 0; i < c.epsilons.size(); ++i)
                             s += (i ? ", " : "") + format_double(c.epsilons[i]);
                         return s;
                     }});
        k.push_back(real_key("kinetic.T", "0.5", &RunConfig::T));
        k.push_back(real_key("kinetic.dt", "0", &RunConfig::dt));
        k.push_back(int_key("kinetic.store_every", "8", &RunConfig::store_every));
        k.push_back(real_key("kinetic.cfl", "0.5", &RunConfig::kinetic_cfl));
        k.push_back(real_key("kinetic.epsilon_fraction", "0.5", &RunConfig::epsilon_fraction));
        k.push_back(real_key("kinetic.clip_threshold", "1e-12", &RunConfig::clip_threshold));
        k.push_back(real_key("kinetic.invalid_clip_share", "0.001", &RunConfig::invalid_clip_share));
        k.push_back(real_key("solver.newton_tol", "1e-11", &RunConfig::newton_tol));
        k.push_back(int_key("solver.max_newton", "30", &RunConfig::max_newton));
        k.push_back(real_key("solver.krylov_tol", "1e-12", &RunConfig::krylov_tol));
        k.push_back(int_key("solver.max_krylov", "200", &RunConfig::max_krylov));
        k.push_back(text_key("solver.stencil", "spectral", &RunConfig::stencil));
        k.push_back(int_key("verify.operator_nodes", "12", &RunConfig::verify_nodes));
        k.push_back(int_key("verify.samples", "5", &RunConfig::verify_samples));
        k.push_back(text_key("output.dir", "ivpb_out", &RunConfig::output_dir));
        k.push_back({"seed", "20240917",
                     [](RunConfig& c, const std::string& v) {
                         const long long x = parse_int("seed", v);
                         if (x < 0)
                             throw ConfigError("seed: must be non-negative");
                         c.seed = static_cast<std::uint64_t>(x);
                     },
                     [](const RunConfig& c) { return std::to_string(c.seed); }});
        return k;
    }();
    return keys;
}

// Runs a module validator and reports its message under the key section.
template <class F>
void check_section(const std::string& section, F&& f)
{
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(section + ": " + e.what());
    }
}

void validate(const RunConfig& c)
{
    if (c.dim < 1 || c.dim > 3)
        throw ConfigError("grid.dim: must be 1, 2 or 3");
    if (c.cells < 8)
        throw ConfigError("grid.cells: need at least 8 cells per axis");
    if (!(c.length > 0.0))
        throw ConfigError("grid.length: must be positive");
    if (c.velocity_nodes < 4)
        throw ConfigError("velocity.nodes: need at least 4 nodes per axis");
    if (c.velocity_nodes % 2 != 0)
        throw ConfigError("velocity.nodes: must be even so the midpoint grid is symmetric under v -> -v "
                          "(every node has its mirror node and no node sits at v = 0)");
    if (!(c.v_max > 0.0))
        throw ConfigError("velocity.v_max: must be positive");
    if (!(c.K > 0.0))
        throw ConfigError("physics.K: must be positive");
    if (!(c.beta >= 3.5))
        throw ConfigError("physics.beta: β ≥ 7/2 required");
    if (c.theta_M != "midpoint") {
        double t = 0.0;
        try {
            t = parse_double("physics.theta_M", c.theta_M);
        } catch (const ConfigError&) {
            throw ConfigError("physics.theta_M: expected 'midpoint' or a positive number");
        }
        if (!(t > 0.0))
            throw ConfigError("physics.theta_M: must be positive");
    }
    if (c.euler_cells < c.cells || c.euler_cells % c.cells != 0)
        throw ConfigError("background.cells: must be a multiple of grid.cells");
    if (!(c.amplitude >= 0.0 && c.amplitude < 1.0))
        throw ConfigError("background.amplitude: must lie in [0, 1)");
    if (c.wave_number < 0)
        throw ConfigError("background.wave_number: must be non-negative");
    if (c.euler_store_every < 1)
        throw ConfigError("background.store_every: must be at least 1");
    if (c.k < 1)
        throw ConfigError("cascade.k: must be at least 1");
    if (!(c.store_interval > 0.0))
        throw ConfigError("cascade.store_interval: must be positive");
    if (!(c.T >= 0.0))
        throw ConfigError("kinetic.T: must be non-negative");
    if (c.T > 0.0 && std::abs(std::round(c.T / c.store_interval) * c.store_interval - c.T) > 1e-9 * c.T)
        throw ConfigError("kinetic.T: must be a multiple of cascade.store_interval");
    if (!(c.dt >= 0.0))
        throw ConfigError("kinetic.dt: must be non-negative (0 selects the stability bound)");
    if (c.store_every < 1)
        throw ConfigError("kinetic.store_every: must be at least 1");
    for (double e : c.epsilons)
        if (!(e > 0.0))
            throw ConfigError("kinetic.epsilons: values must be positive");
    if (c.verify_nodes < 4 || c.verify_nodes % 2 != 0)
        throw ConfigError("verify.operator_nodes: must be even and at least 4");
    if (c.verify_samples < 1)
        throw ConfigError("verify.samples: must be at least 1");
    check_section("background", [&] { c.euler_options().validate(); });
    check_section("collision", [&] { c.collision().validate(); });
    check_section("cascade", [&] { c.cascade_options().validate(); });
    check_section("kinetic", [&] { c.kinetic_options().validate(); });
    check_section("solver", [&] { c.elliptic().validate(); });
}

std::map<std::string, std::string> read_pairs(const std::string& text)
{
    std::map<std::string, std::string> pairs;
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("manifest: not valid JSON: ") + e.what());
        }
        if (!j.contains("config") || !j["config"].is_object())
            throw ConfigError("manifest: no config object");
        for (const auto& [key, value] : j["config"].items()) {
            if (!value.is_string())
                throw ConfigError(key + ": manifest values must be strings");
            pairs[key] = value.get<std::string>();
        }
        return pairs;
    }
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (pairs.count(key))
            throw ConfigError(key + ": repeated key");
        pairs[key] = value;
    }
    return pairs;
}

} // namespace

std::vector<std::string> config_keys()
{
    std::vector<std::string> out;
    for (const auto& k : schema())
        out.push_back(k.name);
    return out;
}

RunConfig parse_config(const std::string& text)
{
    const auto pairs = read_pairs(text);
    std::set<std::string> known;
    for (const auto& k : schema())
        known.insert(k.name);
    for (const auto& [key, value] : pairs)
        if (!known.count(key))
            throw ConfigError(key + ": unknown key");
    RunConfig cfg;
    for (const auto& k : schema()) {
        const auto it = pairs.find(k.name);
        k.set(cfg, it == pairs.end() ? k.default_value : it->second);
    }
    validate(cfg);
    return cfg;
}

std::string echo_config(const RunConfig& cfg)
{
    std::string out;
    for (const auto& k : schema())
        out += k.name + " = " + k.get(cfg) + "\n";
    return out;
}

SpatialGrid RunConfig::grid() const { return SpatialGrid(dim, cells, length); }
SpatialGrid RunConfig::euler_grid() const { return SpatialGrid(dim, euler_cells, length); }
VelocityGrid RunConfig::velocity_grid() const { return VelocityGrid(velocity_nodes, v_max); }

EllipticSolveOptions RunConfig::elliptic() const
{
    EllipticSolveOptions e;
    e.newton_tol = newton_tol;
    e.max_newton = max_newton;
    e.krylov_tol = krylov_tol;
    e.max_krylov = max_krylov;
    e.stencil = parse_stencil(stencil);
    return e;
}

EulerOptions RunConfig::euler_options() const
{
    EulerOptions o;
    o.K = K;
    o.cfl = euler_cfl;
    o.wave_margin = wave_margin;
    o.muscl = muscl;
    o.rate_stencil = parse_stencil(stencil);
    o.elliptic = elliptic();
    o.elliptic.stencil = parse_stencil(euler_stencil);
    return o;
}

CollisionConfig RunConfig::collision() const
{
    CollisionConfig c;
    c.mode = parse_collision_mode(collision_mode);
    c.angular_rule = angular_rule;
    c.angular = ivpb::angular_rule(angular_rule);
    c.conservation_fix = conservation_fix;
    c.bgk_rate = bgk_rate;
    c.interpolation = parse_interpolation(interpolation);
    c.krylov_tol = collision_krylov_tol;
    c.max_krylov = collision_max_krylov;
    return c;
}

CascadeOptions RunConfig::cascade_options() const
{
    CascadeOptions o;
    o.k = k;
    o.stencil = parse_stencil(stencil);
    o.elliptic = elliptic();
    o.cfl = cascade_cfl;
    o.leakage_tol = leakage_tol;
    o.time_delta = time_delta;
    return o;
}

KineticOptions RunConfig::kinetic_options() const
{
    KineticOptions o;
    o.cfl = kinetic_cfl;
    o.epsilon_fraction = epsilon_fraction;
    o.elliptic = elliptic();
    o.clip_threshold = clip_threshold;
    o.invalid_clip_share = invalid_clip_share;
    return o;
}

SweepConfig RunConfig::sweep_config() const
{
    SweepConfig s;
    s.epsilons = epsilons;
    s.T = T;
    s.store_interval = store_interval;
    s.k = k;
    s.beta = beta;
    s.theta_M = theta_M == "midpoint" ? 0.0 : std::stod(theta_M);
    s.collision = collision();
    s.kinetic = kinetic_options();
    return s;
}

// ---------------------------------------------------------------- verify

namespace {

std::vector<double> random_distribution(std::mt19937_64& rng, const VelocityGrid& vg)
{
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    LocalMaxwellianParams a{1.0 + 0.3 * U(rng), {0.5 * U(rng), 0.5 * U(rng), 0.5 * U(rng)}, 1.0 + 0.2 * U(rng)};
    LocalMaxwellianParams b{0.5 + 0.2 * U(rng), {0.8 * U(rng), 0.8 * U(rng), 0.8 * U(rng)}, 0.8 + 0.2 * U(rng)};
    auto f = eval_local_maxwellian(a, vg);
    const auto g = eval_local_maxwellian(b, vg);
    for (std::size_t j = 0; j < f.size(); ++j)
        f[j] += g[j];
    return f;
}

double moment_defect(const std::vector<double>& Q, const std::vector<double>& F, const VelocityGrid& vg)
{
    const Moments q = moments(Q, vg), s = moments(F, vg);
    double d = std::abs(q.mass) / s.mass + std::abs(q.energy) / s.energy;
    for (int a = 0; a < 3; ++a)
        d += std::abs(q.momentum[a]) / std::sqrt(s.mass * s.energy);
    return d;
}

} // namespace

std::vector<CheckResult> verify_suite(const RunConfig& cfg)
{
    std::vector<CheckResult> out;
    auto add = [&](const std::string& name, double measured, double tol, bool passed) {
        out.push_back({name, measured, tol, passed});
    };
    auto below = [&](const std::string& name, double measured, double tol) {
        add(name, measured, tol, measured <= tol);
    };
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const VelocityGrid vg = cfg.velocity_grid();

    // orthonormality of the null-space basis
    {
        double d = 0.0;
        for (int s = 0; s < cfg.verify_samples; ++s) {
            LocalMaxwellianParams p{1.0 + 0.2 * U(rng), {0.3 * U(rng), 0.3 * U(rng), 0.3 * U(rng)},
                                    1.0 + 0.2 * U(rng)};
            d = std::max(d, ChiBasis(p, vg).gram_defect());
        }
        below("chi_orthonormality", d, 1e-6);
    }

    // conservation of the discrete collision operators
    const VelocityGrid small(cfg.verify_nodes, cfg.v_max);
    {
        CollisionConfig hs = cfg.collision();
        hs.mode = CollisionMode::hard_sphere;
        hs.conservation_fix = true;
        double d = 0.0, db = 0.0;
        for (int s = 0; s < cfg.verify_samples; ++s) {
            const auto F = random_distribution(rng, small);
            d = std::max(d, moment_defect(collide(F, F, small, hs), F, small));
            db = std::max(db, moment_defect(bgk_relax(F, small, 1.0), F, small));
        }
        below("hard_sphere_conservation", d, 1e-12);
        below("bgk_conservation", db, 1e-12);
    }

    // linearized operator: symmetry, sign, kernel, coercivity
    {
        CollisionConfig hs = cfg.collision();
        hs.mode = CollisionMode::hard_sphere;
        const LocalMaxwellianParams bg{1.0, {0.2, -0.1, 0.0}, 1.0};
        const LinearizedOperator L(bg, small, hs);
        const auto& sq = L.sqrt_mu();
        std::vector<std::vector<double>> gs;
        for (int s = 0; s < 2 * cfg.verify_samples; ++s) {
            std::vector<double> g(small.size());
            for (std::size_t j = 0; j < g.size(); ++j)
                g[j] = sq[j] * (U(rng) + 0.5 * small.node(j)[0] * U(rng));
            gs.push_back(std::move(g));
        }
        const auto Lg = L.apply_many(gs);
        double sym = 0.0, sign = INFINITY, coerc = INFINITY;
        for (int s = 0; s < cfg.verify_samples; ++s) {
            const auto& g = gs[2 * s];
            const auto& h = gs[2 * s + 1];
            const double a = inner(Lg[2 * s], h, small), b = inner(g, Lg[2 * s + 1], small);
            const double scale = std::sqrt(inner(Lg[2 * s], Lg[2 * s], small) * inner(h, h, small));
            sym = std::max(sym, std::abs(a - b) / scale);
            const double q = inner(Lg[2 * s], g, small);
            sign = std::min(sign, q / inner(g, g, small));
            const auto split = project_hydro(g, L.basis(), small);
            double nu_norm = 0.0;
            for (std::size_t j = 0; j < g.size(); ++j)
                nu_norm += small.weight() * L.nu()[j] * split.residual[j] * split.residual[j];
            coerc = std::min(coerc, q / nu_norm);
        }
        below("L_symmetry", sym, 1e-8);
        add("L_nonnegative", sign, -1e-8, sign >= -1e-8);
        std::vector<std::vector<double>> chis;
        for (int i = 0; i < 5; ++i)
            chis.push_back(L.basis().chi(i));
        double kernel = 0.0;
        for (const auto& r : L.apply_many(chis))
            kernel = std::max(kernel, std::sqrt(inner(r, r, small)));
        below("L_kernel", kernel, 1e-3);
        add("L_coercivity", coerc, 0.0, coerc > 0.0);
    }

    // exponential Taylor coefficients against closed forms
    {
        const std::size_t n = 16;
        std::vector<Field> phi(4, Field(n));
        for (auto& p : phi)
            for (auto& x : p)
                x = U(rng);
        const auto A = exp_taylor_coeffs(phi);
        double d = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            const double p1 = phi[1][c], p2 = phi[2][c], p3 = phi[3][c];
            d = std::max(d, std::abs(A[1][c] - p1));
            d = std::max(d, std::abs(A[2][c] - (p2 + 0.5 * p1 * p1)));
            d = std::max(d, std::abs(A[3][c] - (p3 + p1 * p2 + p1 * p1 * p1 / 6.0)));
        }
        below("taylor_closed_forms", d, 1e-12);
        double worst = 0.0;
        for (int order = 1; order <= 3; ++order) {
            std::vector<std::pair<double, double>> pts;
            for (double e : {0.08, 0.04, 0.02, 0.01}) {
                const auto r = taylor_remainder(phi, e, order);
                double m = 0.0;
                for (double x : r)
                    m = std::max(m, std::abs(x));
                pts.emplace_back(e, m);
            }
            worst = std::max(worst, std::abs(fit_order(pts).slope - (order + 1)));
        }
        below("taylor_remainder_order", worst, 0.3);
    }

    // nonlinear Poisson: manufactured solution, Newton contraction, comparison
    {
        const SpatialGrid g = cfg.grid();
        const auto opts = cfg.elliptic();
        Field exact(g.size());
        for (std::size_t c = 0; c < g.size(); ++c) {
            const Vec3 x = g.coordinate(c);
            double s = 0.0;
            for (int a = 0; a < g.dim(); ++a)
                s += std::cos(2.0 * std::numbers::pi * x[a] / g.length() + 0.3 * a);
            exact[c] = 0.4 * s;
        }
        const auto lap = laplacian(exact, g, opts.stencil);
        Field rho(g.size());
        for (std::size_t c = 0; c < g.size(); ++c)
            rho[c] = std::exp(exact[c]) - lap[c];
        NewtonReport rep;
        const auto phi = solve_nonlinear_poisson(rho, g, opts, &rep);
        double err = 0.0;
        for (std::size_t c = 0; c < g.size(); ++c)
            err = std::max(err, std::abs(phi[c] - exact[c]));
        below("poisson_manufactured", err, 1e-9);
        // observed order from the last three residuals above the rounding floor
        std::vector<double> r;
        for (double x : rep.residual_history)
            if (x > 1e-13)
                r.push_back(x);
        double order = 0.0;
        if (r.size() >= 3) {
            const std::size_t m = r.size();
            order = std::log(r[m - 1] / r[m - 2]) / std::log(r[m - 2] / r[m - 3]);
        } else {
            order = 2.0;
        }
        add("newton_quadratic_contraction", order, 1.5, order >= 1.5);
        double worst = INFINITY;
        for (int s = 0; s < 10; ++s) {
            Field r1(g.size()), r2(g.size());
            for (std::size_t c = 0; c < g.size(); ++c) {
                r1[c] = 1.0 + 0.3 * U(rng);
                r2[c] = r1[c] + 0.2 * (1.0 + U(rng));
            }
            const auto p1 = solve_nonlinear_poisson(r1, g, opts);
            const auto p2 = solve_nonlinear_poisson(r2, g, opts);
            for (std::size_t c = 0; c < g.size(); ++c)
                worst = std::min(worst, p2[c] - p1[c]);
        }
        add("poisson_comparison", worst, -1e-12, worst >= -1e-12);
    }

    // scalar bracket 3x^2 >= x e^x - e^x + 1 >= x^2 / 12 on |x| <= ln 6
    {
        int violations = 0;
        const double L6 = std::log(6.0);
        for (int s = 0; s < 10000; ++s) {
            const double x = L6 * U(rng);
            const double y = lyapunov_density(x);
            if (y > 3.0 * x * x || y < x * x / 12.0)
                ++violations;
        }
        add("lyapunov_bracket", violations, 0.0, violations == 0);
    }

    // fluid and kinetic equilibria
    {
        const SpatialGrid g = cfg.grid();
        const auto eo = cfg.euler_options();
        FluidState s = init_irrotational(0.0, {}, cfg.K, g, 0.0, eo.elliptic);
        const auto next = step_euler_poisson(s, 0.5 * euler_stability_limit(s, eo), eo);
        double d = 0.0;
        for (std::size_t c = 0; c < g.size(); ++c)
            d = std::max({d, std::abs(next.rho[c] - s.rho[c]), std::abs(next.u[0][c]), std::abs(next.phi[c])});
        below("euler_equilibrium", d, 0.0);

        const auto ko = cfg.kinetic_options();
        const auto mu = eval_global_maxwellian(GlobalMaxwellian{1.0}, vg);
        PhaseField F(g.size() * vg.size());
        for (std::size_t c = 0; c < g.size(); ++c)
            std::copy(mu.begin(), mu.end(), F.begin() + static_cast<std::ptrdiff_t>(c * vg.size()));
        const auto ks = make_kinetic_state(g, vg, F, 0.1, 0.0, ko.elliptic);
        StepLedger L;
        const auto kn = step_vpb(ks, default_kinetic_dt(ks, ko), cfg.collision(), ko, &L);
        double dk = 0.0;
        for (std::size_t i = 0; i < F.size(); ++i)
            dk = std::max(dk, std::abs(kn.F[i] - F[i]));
        below("kinetic_equilibrium", dk, 1e-8);
        below("kinetic_mass_conservation", L.mass_defect, 1e-12);
    }
    return out;
}

// ---------------------------------------------------------------- commands

namespace {

struct Background {
    EulerTrajectory fine;
    EulerTrajectory coarse;
    std::string csv;
    std::string checksum;
};

Background make_background(const RunConfig& cfg)
{
    Background b;
    const auto eo = cfg.euler_options();
    if (!cfg.background.empty()) {
        b.csv = read_file(cfg.background);
        b.fine = trajectory_from_csv(b.csv, cfg.euler_grid(), eo);
        if (b.fine.end_time() < cfg.T - 1e-12)
            throw ConfigError("background.trajectory: ends before kinetic.T");
    } else {
        std::vector<std::array<int, 3>> modes;
        if (cfg.wave_number > 0)
            modes.push_back({cfg.wave_number, 0, 0});
        const auto init = init_irrotational(cfg.amplitude, modes, cfg.K, cfg.euler_grid(), cfg.velocity_ratio,
                                            eo.elliptic);
        b.fine = run_euler(init, cfg.T, 0.0, cfg.euler_store_every, eo);
        b.csv = trajectory_csv(b.fine);
    }
    b.checksum = fnv1a_hex(b.csv);
    b.coarse = b.fine.sample(cfg.grid(), parse_stencil(cfg.stencil), cfg.elliptic());
    return b;
}

class Artifacts {
public:
    explicit Artifacts(std::string dir) : dir_(std::move(dir)) {}

    void write(const std::string& name, const std::string& bytes)
    {
        write_file(dir_ + "/" + name, bytes);
        checksums_[name] = fnv1a_hex(bytes);
    }
    const std::string& checksum(const std::string& name) const { return checksums_.at(name); }

    void manifest(const std::string& command, const RunConfig& cfg, double wall,
                  const nlohmann::ordered_json& extra)
    {
        nlohmann::ordered_json j;
        j["command"] = command;
        j["version"] = "ivpb 1.0.0";
        nlohmann::ordered_json c;
        for (const auto& k : schema())
            c[k.name] = k.get(cfg);
        j["config"] = c;
        nlohmann::ordered_json a;
        for (const auto& [name, sum] : checksums_)
            a[name] = sum;
        j["artifacts"] = a;
        j["summary"] = extra;
        j["threads"] = thread_count();
        j["wall_time_s"] = wall;
        write_file(dir_ + "/manifest.json", j.dump(2) + "\n");
    }

private:
    std::string dir_;
    std::map<std::string, std::string> checksums_;
};

int execute(const std::string& command, const RunConfig& cfg, const std::string& out_dir)
{
    const auto start = std::chrono::steady_clock::now();
    Artifacts art(out_dir);
    art.write("config.echo", echo_config(cfg));
    nlohmann::ordered_json summary;
    int status = 0;

    if (command == "verify") {
        const auto checks = verify_suite(cfg);
        nlohmann::ordered_json list = nlohmann::ordered_json::array();
        std::vector<std::string> failures;
        for (const auto& c : checks) {
            list.push_back({{"name", c.name}, {"measured", c.measured}, {"tolerance", c.tolerance},
                            {"passed", c.passed}});
            if (!c.passed)
                failures.push_back(c.name);
            std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " measured=" << format_double(c.measured)
                      << " tolerance=" << format_double(c.tolerance) << "\n";
        }
        nlohmann::ordered_json j;
        j["passed"] = failures.empty();
        j["checks"] = list;
        j["failures"] = failures;
        art.write("verify.json", j.dump(2) + "\n");
        summary["checks"] = checks.size();
        summary["failures"] = failures;
        status = failures.empty() ? 0 : 1;
    } else if (command == "sweep") {
        // reject the epsilon list before any expensive work
        cfg.sweep_config().checked_epsilons();
        const auto bg = make_background(cfg);
        auto set = build_expansion(bg.coarse, cfg.velocity_grid(), cfg.collision(), cfg.cascade_options(), cfg.T,
                                   cfg.store_interval);
        set.background_checksum = bg.checksum;
        const auto report = epsilon_sweep(bg.coarse, set, cfg.sweep_config());
        art.write("sweep.csv", sweep_csv(report));
        art.write("sweep.json", sweep_json(report));
        summary["background_checksum"] = bg.checksum;
        summary["slope"] = report.distance_fit.slope;
        summary["r2"] = report.distance_fit.r2;
        summary["valid"] = report.valid;
        std::cout << "slope " << format_double(report.distance_fit.slope) << " r2 "
                  << format_double(report.distance_fit.r2) << "\n";
        status = report.valid ? 0 : 1;
    } else if (command == "euler") {
        const auto bg = make_background(cfg);
        art.write("euler_trajectory.csv", bg.csv);
        const auto& s0 = bg.fine.snapshots.front();
        const auto& s1 = bg.fine.snapshots.back();
        summary["trajectory_checksum"] = bg.checksum;
        summary["snapshots"] = bg.fine.snapshots.size();
        summary["mass_change"] = integrate_space(s1.rho, s1.grid) - integrate_space(s0.rho, s0.grid);
    } else if (command == "cascade") {
        const auto bg = make_background(cfg);
        auto set = build_expansion(bg.coarse, cfg.velocity_grid(), cfg.collision(), cfg.cascade_options(), cfg.T,
                                   cfg.store_interval);
        set.background_checksum = bg.checksum;
        const auto bin = expansion_binary(set);
        art.write("expansion.bin", bin);
        art.write("expansion.json", expansion_manifest(set, fnv1a_hex(bin)));
        summary["background_checksum"] = bg.checksum;
        summary["max_leakage"] = set.max_leakage;
        summary["symmetry_defect"] = set.symmetry_defect;
        summary["growth_ratio"] = set.growth_ratio;
        summary["initial_data"] = "zero hydrodynamic coefficients at t = 0";
    } else if (command == "kinetic") {
        const auto bg = make_background(cfg);
        const auto ko = cfg.kinetic_options();
        nlohmann::ordered_json runs = nlohmann::ordered_json::array();
        bool valid = true;
        for (std::size_t i = 0; i < cfg.epsilons.size(); ++i) {
            const auto init = well_prepared_state(bg.coarse.at(0.0), cfg.velocity_grid(), cfg.epsilons[i],
                                                  ko.elliptic);
            const auto run = run_vpb(init, cfg.T, cfg.dt, cfg.store_every, cfg.collision(), ko);
            const std::string stem = "kinetic_" + std::to_string(i);
            const auto bin = kinetic_binary(run);
            art.write(stem + ".bin", bin);
            art.write(stem + ".json", kinetic_manifest(run, fnv1a_hex(bin)));
            runs.push_back({{"epsilon", cfg.epsilons[i]},
                            {"distance", distance_to_background(run, bg.coarse)},
                            {"valid", run.valid},
                            {"max_mass_defect", run.max_mass_defect}});
            valid = valid && run.valid;
        }
        summary["background_checksum"] = bg.checksum;
        summary["runs"] = runs;
        status = valid ? 0 : 1;
    } else {
        throw ConfigError("command: expected euler, cascade, kinetic, sweep or verify, got '" + command + "'");
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    art.manifest(command, cfg, wall, summary);
    return status;
}

void write_failure(const std::string& out_dir, int status, const std::string& kind, const std::string& message)
{
    nlohmann::ordered_json j;
    j["exit_code"] = status;
    j["kind"] = kind;
    j["failures"] = {message};
    try {
        write_file(out_dir + "/failure.json", j.dump(2) + "\n");
    } catch (...) {
        // the message still reaches stderr
    }
    std::cerr << "error: " << message << "\n";
}

} // namespace

int run_command(const std::string& command, const RunConfig& cfg, const std::string& out_dir)
{
    try {
        return execute(command, cfg, out_dir);
    } catch (const std::invalid_argument& e) {
        write_failure(out_dir, 2, "config", e.what());
        return 2;
    } catch (const std::exception& e) {
        write_failure(out_dir, 1, "runtime", e.what());
        return 1;
    }
}

} // namespace ivpb
