#include "ivpb/kinetic.hpp"

#include "ivpb/io.hpp"
#include "ivpb/maxwellian.hpp"
#include "ivpb/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>

namespace ivpb {

void KineticOptions::validate() const
{
    if (!(cfl > 0.0 && cfl <= 1.0))
        throw InvalidArgument("kinetic.cfl must lie in (0, 1]");
    if (!(epsilon_fraction > 0.0))
        throw InvalidArgument("kinetic.epsilon_fraction must be positive");
    if (!(clip_threshold >= 0.0))
        throw InvalidArgument("kinetic.clip_threshold must be non-negative");
    if (!(invalid_clip_share >= 0.0 && invalid_clip_share <= 1.0))
        throw InvalidArgument("kinetic.invalid_clip_share must lie in [0, 1]");
    elliptic.validate();
}

Field kinetic_density(const PhaseField& F, const SpatialGrid& grid, const VelocityGrid& vgrid)
{
    const std::size_t nv = vgrid.size();
    if (F.size() != grid.size() * nv)
        throw InvalidArgument("kinetic field does not match the phase-space grid");
    Field rho(grid.size());
    for (std::size_t c = 0; c < grid.size(); ++c)
        rho[c] = moments(std::span<const double>(F.data() + c * nv, nv), vgrid).mass;
    return rho;
}

double total_mass(const PhaseField& F, const SpatialGrid& grid, const VelocityGrid& vgrid)
{
    const auto rho = kinetic_density(F, grid, vgrid);
    return integrate_space(rho, grid);
}

double entropy(const PhaseField& F, const SpatialGrid& grid, const VelocityGrid& vgrid)
{
    double s = 0.0;
    for (double f : F)
        if (f > 0.0)
            s += f * std::log(f);
    return s * vgrid.weight() * grid.cell_volume();
}

KineticState make_kinetic_state(const SpatialGrid& grid, const VelocityGrid& vgrid, PhaseField F, double epsilon,
                                 double time, const EllipticSolveOptions& elliptic)
{
    if (!(epsilon > 0.0))
        throw InvalidArgument("epsilon must be positive");
    KineticState s{grid, vgrid, std::move(F), {}, epsilon, time};
    s.phi = solve_nonlinear_poisson(kinetic_density(s.F, grid, vgrid), grid, elliptic);
    return s;
}

PhaseField local_maxwellian_field(const FluidState& fluid, const VelocityGrid& vgrid)
{
    const std::size_t cells = fluid.grid.size(), nv = vgrid.size();
    PhaseField F(cells * nv);
    for (std::size_t c = 0; c < cells; ++c) {
        LocalMaxwellianParams p{fluid.rho[c], {fluid.u[0][c], fluid.u[1][c], fluid.u[2][c]}, fluid.theta[c]};
        const auto mu = eval_local_maxwellian(p, vgrid);
        std::copy(mu.begin(), mu.end(), F.begin() + static_cast<std::ptrdiff_t>(c * nv));
    }
    return F;
}

KineticState well_prepared_state(const FluidState& fluid, const VelocityGrid& vgrid, double epsilon,
                                 const EllipticSolveOptions& elliptic)
{
    return make_kinetic_state(fluid.grid, vgrid, local_maxwellian_field(fluid, vgrid), epsilon, fluid.time, elliptic);
}

double transport_dt_limit(const SpatialGrid& grid, const VelocityGrid& vgrid)
{
    return grid.spacing() / (grid.dim() * vgrid.v_max());
}

double default_kinetic_dt(const KineticState& s, const KineticOptions& opts)
{
    return std::min(opts.cfl * transport_dt_limit(s.grid, s.vgrid), opts.epsilon_fraction * s.epsilon);
}

namespace {

// Fifth-order upwind face flux divided by the speed, for a speed of the given sign.
inline double upwind5(double fm2, double fm1, double f0, double fp1, double fp2, double fp3, bool positive)
{
    if (positive)
        return (2.0 * fm2 - 13.0 * fm1 + 47.0 * f0 + 27.0 * fp1 - 3.0 * fp2) / 60.0;
    return (2.0 * fp3 - 13.0 * fp2 + 47.0 * fp1 + 27.0 * f0 - 3.0 * fm1) / 60.0;
}

// Forward Euler step F + tau (-v . grad_x F) with fifth-order upwind fluxes,
// each blended toward the first-order upwind flux just enough that both
// neighbouring cells stay non-negative. Needs 2 dim tau |v| <= dx.
PhaseField transport_stage(const PhaseField& F, double tau, const SpatialGrid& grid, const VelocityGrid& vgrid)
{
    const std::size_t cells = grid.size(), nv = vgrid.size();
    const double lam = 2.0 * tau / grid.spacing();
    const double share = 1.0 / grid.dim();
    PhaseField out = F;
    for (int a = 0; a < grid.dim(); ++a) {
        // face[c] holds the limited flux through the face between c and c + 1
        PhaseField face(F.size());
        parallel_for(cells, [&](std::size_t c) {
            const double* s[6];
            for (int o = -2; o <= 3; ++o)
                s[o + 2] = F.data() + grid.shifted(c, a, o) * nv;
            double* out_face = face.data() + c * nv;
            for (std::size_t j = 0; j < nv; ++j) {
                const double v = vgrid.node(j)[a];
                const bool pos = v > 0.0;
                const double high = v * upwind5(s[0][j], s[1][j], s[2][j], s[3][j], s[4][j], s[5][j], pos);
                const double low = v * (pos ? s[2][j] : s[3][j]);
                // share * left - lam * flux >= 0 and share * right + lam * flux >= 0
                const double left = share * s[2][j], right = share * s[3][j];
                double theta = 1.0;
                const double diff = high - low;
                if (left - lam * high < 0.0 && diff > 0.0)
                    theta = std::min(theta, std::max(0.0, (left - lam * low) / (lam * diff)));
                if (right + lam * high < 0.0 && diff < 0.0)
                    theta = std::min(theta, std::max(0.0, (right + lam * low) / (-lam * diff)));
                out_face[j] = low + theta * diff;
            }
        });
        const double r = tau / grid.spacing();
        parallel_for(cells, [&](std::size_t c) {
            const double* fr = face.data() + c * nv;
            const double* fl = face.data() + grid.shifted(c, a, -1) * nv;
            double* o = out.data() + c * nv;
            for (std::size_t j = 0; j < nv; ++j)
                o[j] -= r * (fr[j] - fl[j]);
        });
    }
    return out;
}

// SSP-RK3 for d_t F = -v . grad_x F over tau; each stage is a limited Euler step.
void transport(PhaseField& F, double tau, const SpatialGrid& grid, const VelocityGrid& vgrid)
{
    const std::size_t n = F.size();
    const PhaseField F1 = transport_stage(F, tau, grid, vgrid);
    PhaseField F2 = transport_stage(F1, tau, grid, vgrid);
    for (std::size_t i = 0; i < n; ++i)
        F2[i] = 0.75 * F[i] + 0.25 * F2[i];
    const PhaseField F3 = transport_stage(F2, tau, grid, vgrid);
    for (std::size_t i = 0; i < n; ++i)
        F[i] = F[i] / 3.0 + 2.0 / 3.0 * F3[i];
}

// Moment bookkeeping of one cell during force substeps, in grid-weight units.
struct ForceBudget {
    double outflow_mass = 0.0;
    Vec3 outflow_momentum{0.0, 0.0, 0.0};
    double outflow_energy = 0.0;
    Vec3 work_momentum{0.0, 0.0, 0.0};
    double work_energy = 0.0;
    /// Cells whose shifted block needed the positivity correction.
    std::size_t positivity_fixes = 0;
    /// Largest relative mass change made by the moment projection.
    double max_projection = 0.0;
};

// Zeroes negative interpolation undershoots and restores the block's
// (1, v, |v|^2) moments with a correction proportional to the clipped block.
void restore_positivity(double* block, const VelocityGrid& vgrid, ForceBudget& budget)
{
    const std::size_t N = vgrid.size();
    if (std::none_of(block, block + N, [](double f) { return f < 0.0; }))
        return;
    std::vector<double> f(block, block + N);
    const Moments target = moments(f, vgrid);
    for (double& x : f)
        x = std::max(x, 0.0);
    const std::vector<double> shape = f;
    enforce_moments(f, shape, target, vgrid);
    std::copy(f.begin(), f.end(), block);
    ++budget.positivity_fixes;
}

// Translates the cell block by d along one velocity axis, F(v) -> F(v - d e_a).
// Lines with positive values are interpolated by cubic Lagrange in log F with
// log-quadratic extrapolation into ghost nodes, which is exact for Maxwellian
// lines; other lines use cubic Lagrange in F with zero ghosts. The exchange
// with the region beyond the grid is estimated on the extended line, and the
// block's (1, v, |v|^2) moments are then set to before + work - exchange.
void shift_axis(double* block, int axis, double d, const VelocityGrid& vgrid, ForceBudget& budget)
{
    const int n = vgrid.nodes_per_axis();
    const double h = vgrid.spacing();
    const double sigma = d / h;
    const double fl = std::floor(-sigma);
    const int off = static_cast<int>(fl);
    const double t = -sigma - fl;
    const std::array<double, 4> w{-t * (t - 1.0) * (t - 2.0) / 6.0, (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
                                  -(t + 1.0) * t * (t - 2.0) / 2.0, (t + 1.0) * t * (t - 1.0) / 6.0};
    const Moments before = moments(std::span<const double>(block, vgrid.size()), vgrid);
    Moments target = before;
    target.momentum[axis] += before.mass * d;
    target.energy += 2.0 * d * before.momentum[axis] + d * d * before.mass;
    budget.work_momentum[axis] += before.mass * d / vgrid.weight();
    budget.work_energy += (2.0 * d * before.momentum[axis] + d * d * before.mass) / vgrid.weight();

    const int ghosts = std::abs(off) + 3;
    const int ext = n + 2 * ghosts;
    std::vector<double> line(static_cast<std::size_t>(ext)), out(static_cast<std::size_t>(n));
    double x_mass = 0.0, x_energy = 0.0;
    Vec3 x_mom{0.0, 0.0, 0.0};
    bool linear_lines = false;
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q) {
            auto at = [&](int i) {
                if (axis == 0)
                    return vgrid.flat(i, p, q);
                if (axis == 1)
                    return vgrid.flat(p, i, q);
                return vgrid.flat(p, q, i);
            };
            bool positive = true;
            for (int i = 0; i < n; ++i) {
                const double f = block[at(i)];
                line[static_cast<std::size_t>(i + ghosts)] = f;
                positive = positive && f > 1e-300;
            }
            auto L = [&](int i) -> double& { return line[static_cast<std::size_t>(i + ghosts)]; };
            if (positive) {
                for (int i = 0; i < n; ++i)
                    L(i) = std::log(L(i));
                for (int g = 1; g <= ghosts; ++g) {
                    // quadratic through the three edge nodes, not rising outward
                    const double x = -static_cast<double>(g);
                    const double lo = L(0) * (x - 1.0) * (x - 2.0) / 2.0 - L(1) * x * (x - 2.0) +
                                      L(2) * x * (x - 1.0) / 2.0;
                    L(-g) = std::min(lo, L(-g + 1));
                    const double hi = L(n - 1) * (x - 1.0) * (x - 2.0) / 2.0 - L(n - 2) * x * (x - 2.0) +
                                      L(n - 3) * x * (x - 1.0) / 2.0;
                    L(n - 1 + g) = std::min(hi, L(n - 2 + g));
                }
            } else {
                linear_lines = true;
                for (int g = 1; g <= ghosts; ++g)
                    L(-g) = L(n - 1 + g) = 0.0;
            }
            const Vec3 base = vgrid.node(at(0));
            auto node_v = [&](int i) {
                Vec3 v = base;
                v[axis] = vgrid.axis_node(0) + i * h;
                return v;
            };
            auto value = [&](int i) { return positive ? std::exp(L(i)) : L(i); };
            // ghost sources whose every target is evaluated below
            for (int i = -ghosts + 3; i < n + ghosts - 3; ++i) {
                if (i >= 0 && i < n)
                    continue;
                const double f = value(i);
                if (f == 0.0)
                    continue;
                Vec3 v = node_v(i);
                v[axis] += d;
                x_mass -= f;
                for (int b = 0; b < 3; ++b)
                    x_mom[b] -= v[b] * f;
                x_energy -= norm2(v) * f;
            }
            for (int j = -ghosts - off + 1; j <= n + ghosts - off - 2; ++j) {
                const int i0 = j + off;
                double g = 0.0;
                for (int m = 0; m < 4; ++m) {
                    const int i = i0 - 1 + m;
                    if (i >= -ghosts && i < n + ghosts)
                        g += w[m] * L(i);
                }
                if (positive)
                    g = std::exp(g);
                if (j >= 0 && j < n) {
                    out[static_cast<std::size_t>(j)] = g;
                } else if (g != 0.0) {
                    const Vec3 v = node_v(j);
                    x_mass += g;
                    for (int b = 0; b < 3; ++b)
                        x_mom[b] += v[b] * g;
                    x_energy += norm2(v) * g;
                }
            }
            for (int i = 0; i < n; ++i)
                block[at(i)] = out[static_cast<std::size_t>(i)];
        }
    budget.outflow_mass += x_mass;
    budget.outflow_energy += x_energy;
    for (int b = 0; b < 3; ++b)
        budget.outflow_momentum[b] += x_mom[b];
    const double wt = vgrid.weight();
    target.mass -= x_mass * wt;
    for (int b = 0; b < 3; ++b)
        target.momentum[b] -= x_mom[b] * wt;
    target.energy -= x_energy * wt;
    std::vector<double> f(block, block + vgrid.size());
    if (linear_lines)
        restore_positivity(f.data(), vgrid, budget);
    std::vector<double> shape(f.size());
    for (std::size_t j = 0; j < f.size(); ++j)
        shape[j] = std::max(f[j], 0.0);
    const double interpolated_mass = moments(f, vgrid).mass;
    budget.max_projection = std::max(budget.max_projection, std::abs(interpolated_mass - target.mass) / before.mass);
    enforce_moments(f, shape, target, vgrid);
    std::copy(f.begin(), f.end(), block);
}

// Velocity advection by the force -grad phi over tau, field frozen.
void force_step(PhaseField& F, const Field& phi, double tau, const SpatialGrid& grid, const VelocityGrid& vgrid,
                Stencil stencil, std::vector<ForceBudget>& budgets)
{
    const auto grad = gradient(phi, grid, stencil);
    const std::size_t nv = vgrid.size();
    parallel_for(grid.size(), [&](std::size_t c) {
        for (int a = 0; a < grid.dim(); ++a) {
            const double d = -grad[a][c] * tau;
            if (d != 0.0)
                shift_axis(F.data() + c * nv, a, d, vgrid, budgets[c]);
        }
    });
}

void collision_step(PhaseField& F, double dt, double epsilon, const SpatialGrid& grid, const VelocityGrid& vgrid,
                    const CollisionConfig& cfg)
{
    const std::size_t nv = vgrid.size();
    parallel_for(grid.size(), [&](std::size_t c) {
        std::span<double> f(F.data() + c * nv, nv);
        const auto M = discrete_maxwellian(f, vgrid);
        if (cfg.mode == CollisionMode::bgk) {
            const double decay = std::exp(-cfg.bgk_rate * dt / epsilon);
            for (std::size_t j = 0; j < nv; ++j)
                f[j] = M[j] + decay * (f[j] - M[j]);
            return;
        }
        const Moments before = moments(f, vgrid);
        const auto parts = collision_parts(f, f, vgrid, cfg);
        std::vector<double> next(nv);
        for (std::size_t j = 0; j < nv; ++j) {
            const double nu = parts.loss_frequency[j];
            if (nu > 0.0) {
                const double decay = std::exp(-nu * dt / epsilon);
                next[j] = decay * f[j] + (1.0 - decay) * parts.gain[j] / nu;
            } else {
                next[j] = f[j];
            }
        }
        if (cfg.conservation_fix)
            enforce_moments(next, M, before, vgrid);
        std::copy(next.begin(), next.end(), f.begin());
    });
}

struct Totals {
    double mass = 0.0;
    Vec3 momentum{0.0, 0.0, 0.0};
    double energy = 0.0;
    double abs_momentum = 0.0;
};

Totals totals(const PhaseField& F, const SpatialGrid& grid, const VelocityGrid& vgrid)
{
    const std::size_t nv = vgrid.size();
    Totals t;
    for (std::size_t c = 0; c < grid.size(); ++c) {
        const auto m = moments(std::span<const double>(F.data() + c * nv, nv), vgrid);
        t.mass += m.mass;
        for (int a = 0; a < 3; ++a) {
            t.momentum[a] += m.momentum[a];
            t.abs_momentum += std::abs(m.momentum[a]);
        }
        t.energy += m.energy;
    }
    const double vol = grid.cell_volume();
    t.mass *= vol;
    for (auto& x : t.momentum)
        x *= vol;
    t.energy *= vol;
    t.abs_momentum *= vol;
    return t;
}

} // namespace

KineticState step_vpb(const KineticState& s, double dt, const CollisionConfig& cfg, const KineticOptions& opts,
                      StepLedger* ledger)
{
    opts.validate();
    if (!(dt > 0.0))
        throw InvalidArgument("step_vpb: dt must be positive");
    if (dt > transport_dt_limit(s.grid, s.vgrid) * (1.0 + 1e-12))
        throw InvalidArgument("CFL violation: dim * v_max * dt exceeds dx");
    const std::size_t cells = s.grid.size();
    const Totals before = ledger ? totals(s.F, s.grid, s.vgrid) : Totals{};

    KineticState out = s;
    std::vector<ForceBudget> budgets(cells);
    auto resolve = [&] {
        out.phi = solve_nonlinear_poisson(kinetic_density(out.F, out.grid, out.vgrid), out.grid, opts.elliptic,
                                          nullptr, &out.phi);
    };
    const double half = 0.5 * dt;
    transport(out.F, half, s.grid, s.vgrid);
    resolve();
    force_step(out.F, out.phi, half, s.grid, s.vgrid, opts.elliptic.stencil, budgets);
    collision_step(out.F, dt, s.epsilon, s.grid, s.vgrid, cfg);
    force_step(out.F, out.phi, half, s.grid, s.vgrid, opts.elliptic.stencil, budgets);
    transport(out.F, half, s.grid, s.vgrid);

    // clipping of negative undershoots
    const double fmax = *std::max_element(out.F.begin(), out.F.end());
    const double floor_value = -opts.clip_threshold * fmax;
    std::size_t clipped = 0;
    double clipped_sum = 0.0, clipped_energy = 0.0;
    Vec3 clipped_momentum{0.0, 0.0, 0.0};
    const std::size_t nv = s.vgrid.size();
    for (std::size_t i = 0; i < out.F.size(); ++i)
        if (out.F[i] < floor_value) {
            const Vec3& v = s.vgrid.node(i % nv);
            const double f = -out.F[i];
            clipped_sum += f;
            for (int a = 0; a < 3; ++a)
                clipped_momentum[a] += v[a] * f;
            clipped_energy += norm2(v) * f;
            out.F[i] = 0.0;
            ++clipped;
        }
    resolve();
    out.time = s.time + dt;

    if (ledger) {
        const Totals after = totals(out.F, s.grid, s.vgrid);
        const double wv = s.vgrid.weight() * s.grid.cell_volume();
        ForceBudget b;
        for (const auto& cb : budgets) {
            b.positivity_fixes += cb.positivity_fixes;
            b.max_projection = std::max(b.max_projection, cb.max_projection);
            b.outflow_mass += cb.outflow_mass;
            b.outflow_energy += cb.outflow_energy;
            b.work_energy += cb.work_energy;
            for (int a = 0; a < 3; ++a) {
                b.outflow_momentum[a] += cb.outflow_momentum[a];
                b.work_momentum[a] += cb.work_momentum[a];
            }
        }
        StepLedger& L = *ledger;
        L.time = out.time;
        L.dt = dt;
        L.mass_before = before.mass;
        L.mass_after = after.mass;
        L.outflow = b.outflow_mass * wv;
        L.clipped_mass = clipped_sum * wv;
        L.clipped_cells = clipped;
        L.positivity_fixes = b.positivity_fixes;
        L.max_projection = b.max_projection;
        L.mass_defect = std::abs(after.mass + L.outflow - L.clipped_mass - before.mass) / before.mass;
        double dm = 0.0;
        for (int a = 0; a < 3; ++a)
            dm += std::abs(after.momentum[a] + (b.outflow_momentum[a] - clipped_momentum[a]) * wv -
                           before.momentum[a] - b.work_momentum[a] * wv);
        L.momentum_defect = dm / (before.abs_momentum + before.mass);
        L.energy_defect = std::abs(after.energy + (b.outflow_energy - clipped_energy) * wv - before.energy -
                                   b.work_energy * wv) /
                          before.energy;
        L.entropy = entropy(out.F, s.grid, s.vgrid);
    }
    return out;
}

KineticRun run_vpb(const KineticState& initial, double T, double dt, int store_every, const CollisionConfig& cfg,
                   const KineticOptions& opts)
{
    opts.validate();
    cfg.validate();
    if (!(T >= 0.0))
        throw InvalidArgument("run_vpb: T must be non-negative");
    if (store_every < 1)
        throw InvalidArgument("run_vpb: store_every must be at least 1");
    KineticRun run;
    run.snapshots.push_back(initial);
    if (T == 0.0)
        return run;
    const double target = dt > 0.0 ? dt : default_kinetic_dt(initial, opts);
    const long steps = std::max(1L, static_cast<long>(std::ceil(T / target - 1e-9)));
    const double h = T / static_cast<double>(steps);
    KineticState s = initial;
    for (long i = 1; i <= steps; ++i) {
        StepLedger L;
        s = step_vpb(s, h, cfg, opts, &L);
        if (i == steps)
            s.time = initial.time + T;
        run.clipped_cells += L.clipped_cells;
        run.max_mass_defect = std::max(run.max_mass_defect, L.mass_defect);
        run.max_momentum_defect = std::max(run.max_momentum_defect, L.momentum_defect);
        run.max_energy_defect = std::max(run.max_energy_defect, L.energy_defect);
        run.total_outflow += L.outflow;
        run.ledger.push_back(L);
        if (i % store_every == 0 || i == steps)
            run.snapshots.push_back(s);
    }
    const double share = static_cast<double>(run.clipped_cells) /
                         (static_cast<double>(initial.F.size()) * static_cast<double>(steps));
    run.valid = share <= opts.invalid_clip_share;
    return run;
}

std::string kinetic_binary(const KineticRun& run)
{
    std::string out;
    for (const auto& s : run.snapshots) {
        append_doubles(out, &s.time, 1);
        append_doubles(out, s.F.data(), s.F.size());
        append_doubles(out, s.phi.data(), s.phi.size());
    }
    return out;
}

std::string kinetic_manifest(const KineticRun& run, const std::string& binary_checksum)
{
    const auto& s0 = run.snapshots.front();
    nlohmann::ordered_json j;
    j["kind"] = "kinetic_run";
    j["epsilon"] = s0.epsilon;
    j["spatial_grid"] = {{"dim", s0.grid.dim()}, {"cells_per_axis", s0.grid.cells_per_axis()},
                         {"length", s0.grid.length()}};
    j["velocity_grid"] = {{"nodes_per_axis", s0.vgrid.nodes_per_axis()}, {"v_max", s0.vgrid.v_max()}};
    std::vector<double> times;
    for (const auto& s : run.snapshots)
        times.push_back(s.time);
    j["times"] = times;
    j["layout"] = "per snapshot: time, F (cells x nodes), phi (cells)";
    j["binary_checksum"] = binary_checksum;
    j["valid"] = run.valid;
    j["clipped_cells"] = run.clipped_cells;
    j["max_mass_defect"] = run.max_mass_defect;
    j["max_momentum_defect"] = run.max_momentum_defect;
    j["max_energy_defect"] = run.max_energy_defect;
    j["total_outflow"] = run.total_outflow;
    nlohmann::ordered_json steps = nlohmann::ordered_json::array();
    for (const auto& L : run.ledger)
        steps.push_back({{"time", L.time},
                         {"dt", L.dt},
                         {"mass", L.mass_after},
                         {"outflow", L.outflow},
                         {"clipped_mass", L.clipped_mass},
                         {"clipped_cells", L.clipped_cells},
                         {"mass_defect", L.mass_defect},
                         {"momentum_defect", L.momentum_defect},
                         {"energy_defect", L.energy_defect},
                         {"entropy", L.entropy}});
    j["ledger"] = steps;
    return j.dump(2) + "\n";
}

std::vector<KineticState> kinetic_snapshots_from_files(const std::string& manifest_json, const std::string& binary)
{
    const auto j = nlohmann::json::parse(manifest_json);
    if (j.at("binary_checksum").get<std::string>() != fnv1a_hex(binary))
        throw InvalidArgument("kinetic binary does not match its manifest checksum");
    const auto& g = j.at("spatial_grid");
    const SpatialGrid grid(g.at("dim").get<int>(), g.at("cells_per_axis").get<int>(), g.at("length").get<double>());
    const auto& v = j.at("velocity_grid");
    const VelocityGrid vgrid(v.at("nodes_per_axis").get<int>(), v.at("v_max").get<double>());
    const double epsilon = j.at("epsilon").get<double>();
    const std::size_t count = j.at("times").size();
    DoubleReader r(binary);
    std::vector<KineticState> out;
    for (std::size_t i = 0; i < count; ++i) {
        KineticState s{grid, vgrid, PhaseField(grid.size() * vgrid.size()), Field(grid.size()), epsilon, 0.0};
        s.time = r.next();
        r.read(s.F.data(), s.F.size());
        r.read(s.phi.data(), s.phi.size());
        out.push_back(std::move(s));
    }
    if (!r.done())
        throw InvalidArgument("kinetic binary has trailing bytes");
    return out;
}

} // namespace ivpb
