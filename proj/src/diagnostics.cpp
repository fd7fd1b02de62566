#include "ivpb/diagnostics.hpp"

#include "ivpb/io.hpp"
#include "ivpb/poisson.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ivpb {

RemainderFields remainder_fields(const KineticState& kinetic, const ExpansionSnapshot& snap, const ExpansionSet& set,
                                 int k, const GlobalMaxwellian& global, const WeightConfig& weight)
{
    if (!(kinetic.grid == set.grid) || !(kinetic.vgrid == set.vgrid))
        throw InvalidArgument("remainder_fields: kinetic and expansion grids differ");
    if (k < 1 || 2 * k > static_cast<int>(snap.F.size()))
        throw InvalidArgument("remainder_fields: expansion does not hold 2k orders");
    weight.validate();
    const double eps = kinetic.epsilon;
    const double scale = std::pow(eps, -k);
    const std::size_t cells = set.grid.size(), nv = set.vgrid.size();
    RemainderFields rem;
    rem.k = k;
    rem.epsilon = eps;
    rem.global = global;
    rem.weight = weight;
    rem.R = kinetic.F;
    rem.phi_R = kinetic.phi;
    double pw = 1.0;
    for (int i = 0; i < 2 * k; ++i, pw *= eps) {
        for (std::size_t n = 0; n < rem.R.size(); ++n)
            rem.R[n] -= pw * snap.F[i][n];
        for (std::size_t c = 0; c < cells; ++c)
            rem.phi_R[c] -= pw * snap.phi[i][c];
    }
    for (double& x : rem.R)
        x *= scale;
    for (double& x : rem.phi_R)
        x *= scale;
    const auto muM = eval_global_maxwellian(global, set.vgrid);
    std::vector<double> w(nv), inv_sqrt_muM(nv);
    for (std::size_t j = 0; j < nv; ++j) {
        w[j] = weight(set.vgrid.node(j));
        inv_sqrt_muM[j] = 1.0 / std::sqrt(muM[j]);
    }
    rem.f.resize(rem.R.size());
    rem.h.resize(rem.R.size());
    for (std::size_t c = 0; c < cells; ++c)
        for (std::size_t j = 0; j < nv; ++j) {
            const std::size_t n = c * nv + j;
            rem.f[n] = rem.R[n] / std::sqrt(snap.F[0][n]);
            rem.h[n] = w[j] * rem.R[n] * inv_sqrt_muM[j];
        }
    return rem;
}

double phase_l2(const PhaseField& F, const SpatialGrid& grid, const VelocityGrid& vgrid)
{
    double s = 0.0;
    for (double x : F)
        s += x * x;
    return std::sqrt(s * vgrid.weight() * grid.cell_volume());
}

double space_l2(const Field& f, const SpatialGrid& grid)
{
    double s = 0.0;
    for (double x : f)
        s += x * x;
    return std::sqrt(s * grid.cell_volume());
}

namespace {

double sup_abs(const Field& f)
{
    double m = 0.0;
    for (double x : f)
        m = std::max(m, std::abs(x));
    return m;
}

// Centered difference along a velocity axis, one-sided second order at the edges.
double velocity_derivative(const double* block, std::size_t j, int axis, const VelocityGrid& vgrid)
{
    const int n = vgrid.nodes_per_axis();
    auto idx = vgrid.index(j);
    const int i = idx[axis];
    auto at = [&](int m) {
        auto k = idx;
        k[axis] = m;
        return block[vgrid.flat(k[0], k[1], k[2])];
    };
    const double h = vgrid.spacing();
    if (i == 0)
        return (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h);
    if (i == n - 1)
        return (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h);
    return (at(i + 1) - at(i - 1)) / (2.0 * h);
}

} // namespace

std::vector<NormEntry> norm_package(const RemainderFields& rem, const SpatialGrid& grid, const VelocityGrid& vgrid,
                                    double beta)
{
    WeightConfig{beta}.validate();
    const std::size_t cells = grid.size(), nv = vgrid.size();
    if (rem.R.size() != cells * nv || rem.phi_R.size() != cells)
        throw InvalidArgument("norm_package: remainder does not match the grids");
    const double eps = rem.epsilon;
    const double e32 = std::pow(eps, 1.5), e5 = std::pow(eps, 5.0);
    const auto muM = eval_global_maxwellian(rem.global, vgrid);
    std::vector<double> w_hi(nv), w_lo(nv);
    for (std::size_t j = 0; j < nv; ++j) {
        const double r = 1.0 + std::sqrt(norm2(vgrid.node(j)));
        const double s = 1.0 / std::sqrt(muM[j]);
        w_lo[j] = std::pow(r, 2.0 * beta) * s;
        w_hi[j] = w_lo[j] * r;
    }
    std::vector<NormEntry> out;

    // weighted sup of R
    NormEntry sup_w{"eps32_weighted_sup", 0.0, false};
    std::size_t arg = 0;
    for (std::size_t n = 0; n < rem.R.size(); ++n) {
        const double v = w_hi[n % nv] * std::abs(rem.R[n]);
        if (v > sup_w.value) {
            sup_w.value = v;
            arg = n;
        }
    }
    sup_w.value *= e32;
    sup_w.boundary_argmax = sup_w.value > 0.0 && vgrid.on_boundary(arg % nv);

    const auto grad = gradient(rem.phi_R, grid, Stencil::second_order);
    double gsup = 0.0;
    for (int a = 0; a < grid.dim(); ++a)
        gsup = std::max(gsup, sup_abs(grad[a]));
    out.push_back(sup_w);
    out.push_back({"eps32_grad_phi_sup", e32 * gsup, false});

    // derivatives of the (1+|v|)^{2 beta}-weighted field
    PhaseField G(rem.R.size());
    for (std::size_t n = 0; n < G.size(); ++n)
        G[n] = w_lo[n % nv] * rem.R[n];
    NormEntry sup_d{"eps5_grad_weighted_sup", 0.0, false};
    const double hx = grid.spacing();
    arg = 0;
    for (std::size_t c = 0; c < cells; ++c) {
        const double* block = G.data() + c * nv;
        for (std::size_t j = 0; j < nv; ++j) {
            double m = 0.0;
            for (int a = 0; a < grid.dim(); ++a) {
                const double* up = G.data() + grid.shifted(c, a, 1) * nv;
                const double* dn = G.data() + grid.shifted(c, a, -1) * nv;
                m = std::max(m, std::abs(up[j] - dn[j]) / (2.0 * hx));
            }
            for (int a = 0; a < 3; ++a)
                m = std::max(m, std::abs(velocity_derivative(block, j, a, vgrid)));
            if (m > sup_d.value) {
                sup_d.value = m;
                arg = j;
            }
        }
    }
    sup_d.value *= e5;
    sup_d.boundary_argmax = sup_d.value > 0.0 && vgrid.on_boundary(arg);
    out.push_back(sup_d);

    double hsup = 0.0;
    for (int a = 0; a < grid.dim(); ++a)
        for (int b = 0; b < grid.dim(); ++b)
            hsup = std::max(hsup, sup_abs(derivative(grad[a], grid, b, Stencil::second_order)));
    out.push_back({"eps5_hess_phi_sup", e5 * hsup, false});

    out.push_back({"f_L2", phase_l2(rem.f, grid, vgrid), false});
    out.push_back({"phi_R_L2", space_l2(rem.phi_R, grid), false});
    double g2 = 0.0;
    for (int a = 0; a < grid.dim(); ++a)
        g2 += std::pow(space_l2(grad[a], grid), 2);
    out.push_back({"grad_phi_R_L2", std::sqrt(g2), false});
    out.push_back({"lap_phi_R_L2", space_l2(laplacian(rem.phi_R, grid, Stencil::second_order), grid), false});
    return out;
}

FitResult fit_order(const std::vector<std::pair<double, double>>& points)
{
    if (points.size() < 3)
        throw InvalidArgument("fit_order: need at least 3 points");
    const double n = static_cast<double>(points.size());
    double mx = 0.0, my = 0.0;
    for (const auto& [e, v] : points) {
        if (!(e > 0.0) || !(v > 0.0))
            throw InvalidArgument("fit_order: epsilons and values must be positive");
        mx += std::log(e);
        my += std::log(v);
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& [e, v] : points) {
        const double dx = std::log(e) - mx, dy = std::log(v) - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (!(sxx > 0.0))
        throw InvalidArgument("fit_order: epsilons must not all coincide");
    FitResult r;
    r.points = points.size();
    r.slope = sxy / sxx;
    r.intercept = my - r.slope * mx;
    const double sse = std::max(0.0, syy - r.slope * sxy);
    r.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
    const double se = std::sqrt(sse / (n - 2.0) / sxx);
    const boost::math::students_t dist(n - 2.0);
    const double q = boost::math::quantile(boost::math::complement(dist, 0.025));
    r.slope_low = r.slope - q * se;
    r.slope_high = r.slope + q * se;
    return r;
}

std::vector<double> SweepConfig::checked_epsilons() const
{
    std::vector<double> e = epsilons;
    if (e.size() < 3)
        throw InvalidArgument("need ≥ 3 epsilons");
    for (double x : e)
        if (!(x > 0.0))
            throw InvalidArgument("sweep.epsilons: values must be positive");
    std::sort(e.begin(), e.end(), std::greater<>());
    for (std::size_t i = 1; i < e.size(); ++i) {
        if (e[i] == e[i - 1])
            throw InvalidArgument("sweep.epsilons: repeated value makes the fit degenerate");
        if (std::abs(e[i - 1] / e[i] - 2.0) > 1e-9)
            throw InvalidArgument("sweep.epsilons: consecutive values must differ by a factor of 2");
    }
    if (!(T > 0.0) || !(store_interval > 0.0))
        throw InvalidArgument("sweep: T and store_interval must be positive");
    return e;
}

double distance_to_background(const KineticRun& run, const EulerTrajectory& background)
{
    double sup = 0.0;
    for (const auto& s : run.snapshots) {
        const auto fluid = background.at(s.time);
        if (!(fluid.grid == s.grid))
            throw InvalidArgument("distance_to_background: grids differ");
        const auto mu = local_maxwellian_field(fluid, s.vgrid);
        PhaseField d(mu.size());
        for (std::size_t n = 0; n < mu.size(); ++n)
            d[n] = s.F[n] - mu[n];
        sup = std::max(sup, phase_l2(d, s.grid, s.vgrid));
    }
    return sup;
}

SweepReport epsilon_sweep(const EulerTrajectory& background, const ExpansionSet& expansion, const SweepConfig& cfg)
{
    const auto epsilons = cfg.checked_epsilons();
    cfg.kinetic.validate();
    cfg.collision.validate();
    if (cfg.k != expansion.k)
        throw InvalidArgument("sweep: k differs from the expansion's truncation order");
    const double ratio = cfg.store_interval / cfg.T;
    const long intervals = std::lround(1.0 / ratio);
    if (std::abs(intervals * cfg.store_interval - cfg.T) > 1e-9 * cfg.T)
        throw InvalidArgument("sweep: T must be a multiple of store_interval");

    std::vector<double> thetas;
    for (const auto& s : background.snapshots)
        thetas.insert(thetas.end(), s.theta.begin(), s.theta.end());
    GlobalMaxwellian global = select_theta_M(thetas);
    if (cfg.theta_M > 0.0) {
        const auto [lo, hi] = std::minmax_element(thetas.begin(), thetas.end());
        if (cfg.theta_M < 0.5 * *hi || cfg.theta_M > *lo)
            throw InvalidArgument("theta_M outside the admissible bracket max(theta)/2 <= theta_M <= min(theta)");
        global.theta_M = cfg.theta_M;
    }
    const WeightConfig weight{cfg.beta};

    SweepReport rep;
    rep.theta_M = global.theta_M;
    rep.beta = cfg.beta;
    rep.k = cfg.k;
    rep.T = cfg.T;
    rep.store_interval = cfg.store_interval;
    rep.expansion_checksum = fnv1a_hex(expansion_binary(expansion));
    const auto& grid = expansion.grid;
    const auto& vgrid = expansion.vgrid;
    for (double eps : epsilons) {
        const auto initial = well_prepared_state(background.at(0.0), vgrid, eps, cfg.kinetic.elliptic);
        const long per = std::max(
            1L, static_cast<long>(std::ceil(cfg.store_interval / default_kinetic_dt(initial, cfg.kinetic) - 1e-9)));
        const double dt = cfg.store_interval / static_cast<double>(per);
        const auto run = run_vpb(initial, cfg.T, dt, static_cast<int>(per), cfg.collision, cfg.kinetic);
        SweepRow row;
        row.epsilon = eps;
        row.dt = dt;
        row.steps = run.ledger.size();
        row.snapshots = run.snapshots.size();
        row.valid = run.valid;
        row.clipped_cells = run.clipped_cells;
        row.max_mass_defect = run.max_mass_defect;
        row.max_momentum_defect = run.max_momentum_defect;
        row.max_energy_defect = run.max_energy_defect;
        row.total_outflow = run.total_outflow;
        for (const auto& L : run.ledger)
            row.positivity_fixes += L.positivity_fixes;
        for (const auto& ks : run.snapshots) {
            const auto& snap = expansion.at(ks.time);
            PhaseField d(ks.F.size());
            for (std::size_t n = 0; n < d.size(); ++n)
                d[n] = ks.F[n] - snap.F[0][n];
            row.distance = std::max(row.distance, phase_l2(d, grid, vgrid));
            const auto rem = remainder_fields(ks, snap, expansion, cfg.k, global, weight);
            const auto norms = norm_package(rem, grid, vgrid, cfg.beta);
            if (row.norms.empty()) {
                row.norms = norms;
                continue;
            }
            for (std::size_t i = 0; i < norms.size(); ++i)
                if (norms[i].value > row.norms[i].value)
                    row.norms[i] = norms[i];
        }
        rep.valid = rep.valid && row.valid;
        for (const auto& e : row.norms)
            rep.any_boundary_argmax = rep.any_boundary_argmax || e.boundary_argmax;
        rep.rows.push_back(std::move(row));
    }
    std::vector<std::pair<double, double>> pts;
    double fmin = INFINITY, fmax = 0.0;
    for (const auto& r : rep.rows) {
        pts.emplace_back(r.epsilon, r.distance);
        for (const auto& e : r.norms)
            if (e.name == "f_L2") {
                fmin = std::min(fmin, e.value);
                fmax = std::max(fmax, e.value);
            }
    }
    rep.distance_fit = fit_order(pts);
    const auto& last = rep.rows.back();
    const auto& prev = rep.rows[rep.rows.size() - 2];
    rep.distance_floor = 2.0 * last.distance - prev.distance;
    rep.f_ratio = fmin > 0.0 ? fmax / fmin : INFINITY;
    return rep;
}

std::string sweep_csv(const SweepReport& report)
{
    std::ostringstream os;
    os << "epsilon,distance";
    if (!report.rows.empty())
        for (const auto& e : report.rows.front().norms)
            os << ',' << e.name << (e.name.find("_sup") != std::string::npos ? "," + e.name + "_boundary" : "");
    os << ",steps,dt,max_mass_defect,max_momentum_defect,max_energy_defect,total_outflow,clipped_cells,"
          "positivity_fixes,valid\n";
    for (const auto& r : report.rows) {
        os << format_double(r.epsilon) << ',' << format_double(r.distance);
        for (const auto& e : r.norms) {
            os << ',' << format_double(e.value);
            if (e.name.find("_sup") != std::string::npos)
                os << ',' << (e.boundary_argmax ? 1 : 0);
        }
        os << ',' << r.steps << ',' << format_double(r.dt) << ',' << format_double(r.max_mass_defect) << ','
           << format_double(r.max_momentum_defect) << ',' << format_double(r.max_energy_defect) << ','
           << format_double(r.total_outflow) << ',' << r.clipped_cells << ',' << r.positivity_fixes << ','
           << (r.valid ? 1 : 0) << '\n';
    }
    return os.str();
}

std::string sweep_json(const SweepReport& report)
{
    nlohmann::ordered_json j;
    j["kind"] = "epsilon_sweep";
    j["k"] = report.k;
    j["beta"] = report.beta;
    j["theta_M"] = report.theta_M;
    j["T"] = report.T;
    j["store_interval"] = report.store_interval;
    j["time_sup"] = "maximum over stored snapshots, not continuous time";
    j["initial_data"] = "well-prepared: local Maxwellian of the fluid state; expansion coefficients start from zero";
    j["expansion_checksum"] = report.expansion_checksum;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : report.rows) {
        nlohmann::ordered_json row;
        row["epsilon"] = r.epsilon;
        row["distance"] = r.distance;
        nlohmann::ordered_json norms;
        for (const auto& e : r.norms)
            norms[e.name] = {{"value", e.value}, {"boundary_argmax", e.boundary_argmax}};
        row["norms"] = norms;
        row["ledger"] = {{"steps", r.steps},
                         {"dt", r.dt},
                         {"max_mass_defect", r.max_mass_defect},
                         {"max_momentum_defect", r.max_momentum_defect},
                         {"max_energy_defect", r.max_energy_defect},
                         {"total_outflow", r.total_outflow},
                         {"clipped_cells", r.clipped_cells},
                         {"positivity_fixes", r.positivity_fixes},
                         {"valid", r.valid}};
        rows.push_back(row);
    }
    j["rows"] = rows;
    const auto& f = report.distance_fit;
    j["distance_fit"] = {{"slope", f.slope},         {"intercept", f.intercept}, {"r2", f.r2},
                         {"slope_low", f.slope_low}, {"slope_high", f.slope_high}, {"points", f.points}};
    j["distance_floor"] = report.distance_floor;
    j["f_ratio"] = report.f_ratio;
    j["any_boundary_argmax"] = report.any_boundary_argmax;
    j["valid"] = report.valid;
    return j.dump(2) + "\n";
}

} // namespace ivpb
