#include "ivpb/config.hpp"
#include "ivpb/diagnostics.hpp"
#include "ivpb/io.hpp"
#include "ivpb/parallel.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>

using namespace ivpb;

namespace {

int failures = 0;
std::set<int> selected; // empty runs every criterion

bool wanted(int id) { return selected.empty() || selected.count(id) > 0; }

void report(int id, bool pass, const std::string& detail, double seconds)
{
    std::printf("%s criterion %d: %s (%.1f s)\n", pass ? "PASS" : "FAIL", id, detail.c_str(), seconds);
    std::fflush(stdout);
    if (!pass)
        ++failures;
}

template <class F>
void criterion(int id, F&& body)
{
    if (!wanted(id))
        return;
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool pass = false;
    try {
        pass = body(detail);
    } catch (const std::exception& e) {
        detail += std::string(" exception: ") + e.what();
    }
    report(id, pass, detail, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::vector<double> two_bump(std::mt19937_64& rng, const VelocityGrid& vg)
{
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const LocalMaxwellianParams a{1.0 + 0.3 * U(rng), {0.5 * U(rng), 0.5 * U(rng), 0.5 * U(rng)}, 1.0 + 0.2 * U(rng)};
    const LocalMaxwellianParams b{0.5 + 0.2 * U(rng), {0.8 * U(rng), 0.8 * U(rng), 0.8 * U(rng)}, 1.0 + 0.2 * U(rng)};
    auto f = eval_local_maxwellian(a, vg);
    const auto g = eval_local_maxwellian(b, vg);
    for (std::size_t j = 0; j < f.size(); ++j)
        f[j] += g[j];
    return f;
}

// Worst moment defect of Q over psi in {1, v, |v|^2}, relative both to the
// collision flux int nu F |psi| and to int F |psi|.
struct Defect {
    double flux = 0.0;
    double density = 0.0;
};

Defect moment_defect(const std::vector<double>& Q, const std::vector<double>& F, const std::vector<double>& nu,
                     const VelocityGrid& vg)
{
    double q[5] = {}, fl[5] = {}, fd[5] = {};
    for (std::size_t j = 0; j < F.size(); ++j) {
        const Vec3 v = vg.node(j);
        const double psi[5] = {1.0, v[0], v[1], v[2], norm2(v)};
        for (int m = 0; m < 5; ++m) {
            q[m] += Q[j] * psi[m];
            fl[m] += nu[j] * F[j] * std::abs(psi[m]);
            fd[m] += F[j] * std::abs(psi[m]);
        }
    }
    Defect d;
    for (int m = 0; m < 5; ++m) {
        d.flux = std::max(d.flux, std::abs(q[m]) / fl[m]);
        d.density = std::max(d.density, std::abs(q[m]) / fd[m]);
    }
    return d;
}

double max_abs(const std::vector<double>& v)
{
    double m = 0.0;
    for (double x : v)
        m = std::max(m, std::abs(x));
    return m;
}

struct OperatorStats {
    double symmetry = 0.0;
    double min_quotient = INFINITY;
    double kernel = 0.0;
    double coercivity = INFINITY;
};

// Properties of the linearized hard-sphere operator on a fixed family of smooth
// test functions sqrt(mu) p(v), p a polynomial of degree <= 3 with seeded coefficients.
OperatorStats operator_stats(int nodes)
{
    const VelocityGrid vg(nodes, 6.0);
    CollisionConfig hs;
    hs.mode = CollisionMode::hard_sphere;
    const LinearizedOperator L(LocalMaxwellianParams{1.0, {0.2, -0.1, 0.0}, 1.0}, vg, hs);
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::vector<std::vector<double>> gs;
    for (int s = 0; s < 8; ++s) {
        std::array<double, 10> c{};
        for (double& x : c)
            x = U(rng);
        std::vector<double> g(vg.size());
        for (std::size_t j = 0; j < g.size(); ++j) {
            const Vec3& v = vg.node(j);
            const double p = c[0] + c[1] * v[0] + c[2] * v[1] + c[3] * v[2] + c[4] * v[0] * v[0] +
                             c[5] * v[0] * v[1] + c[6] * v[1] * v[2] + c[7] * norm2(v) + c[8] * v[0] * norm2(v) +
                             c[9] * v[0] * v[1] * v[2];
            g[j] = L.sqrt_mu()[j] * p;
        }
        gs.push_back(std::move(g));
    }
    const auto Lg = L.apply_many(gs);
    OperatorStats st;
    for (std::size_t s = 0; s + 1 < gs.size(); s += 2) {
        const double a = inner(Lg[s], gs[s + 1], vg), b = inner(gs[s], Lg[s + 1], vg);
        const double scale = std::sqrt(inner(Lg[s], Lg[s], vg) * inner(gs[s + 1], gs[s + 1], vg));
        st.symmetry = std::max(st.symmetry, std::abs(a - b) / scale);
    }
    for (std::size_t s = 0; s < gs.size(); ++s) {
        const double q = inner(Lg[s], gs[s], vg);
        st.min_quotient = std::min(st.min_quotient, q / inner(gs[s], gs[s], vg));
        const auto split = project_hydro(gs[s], L.basis(), vg);
        double nu_norm = 0.0;
        for (std::size_t j = 0; j < vg.size(); ++j)
            nu_norm += vg.weight() * L.nu()[j] * split.residual[j] * split.residual[j];
        st.coercivity = std::min(st.coercivity, q / nu_norm);
    }
    std::vector<std::vector<double>> chis;
    for (int i = 0; i < 5; ++i)
        chis.push_back(L.basis().chi(i));
    for (const auto& r : L.apply_many(chis))
        st.kernel = std::max(st.kernel, std::sqrt(inner(r, r, vg)));
    return st;
}

double dispersion_error(int m)
{
    const SpatialGrid g(1, 64, 2.0 * std::numbers::pi);
    EulerOptions o;
    o.muscl = true;
    o.elliptic.stencil = Stencil::spectral;
    FluidState s = init_irrotational(1e-4, {{m, 0, 0}}, 1.0, g, 0.0, o.elliptic);
    auto amp = [&](const FluidState& st) {
        double a = 0.0;
        for (std::size_t c = 0; c < g.size(); ++c)
            a += (st.rho[c] - 1.0) * std::cos(m * g.coordinate(c)[0]);
        return a;
    };
    const double dt = 0.4 * euler_stability_limit(s, o);
    double prev = amp(s), t = 0.0;
    std::vector<double> crossings;
    while (crossings.size() < 4) {
        s = step_euler_poisson(s, dt, o);
        const double a = amp(s);
        if ((prev > 0) != (a > 0))
            crossings.push_back(t + dt * prev / (prev - a));
        prev = a;
        t += dt;
    }
    const double measured = std::numbers::pi * 3.0 / (crossings.back() - crossings.front());
    const double xi = m;
    const double exact = std::sqrt(5.0 / 3.0 * xi * xi + xi * xi / (1.0 + xi * xi));
    return std::abs(measured / exact - 1.0);
}

} // namespace

// Optional arguments pick criteria by number.
int main(int argc, char** argv)
{
    for (int i = 1; i < argc; ++i)
        selected.insert(std::atoi(argv[i]));
    const RunConfig defaults = parse_config("");
    std::printf("threads %d\n", thread_count());

    criterion(1, [](std::string& d) {
        const VelocityGrid vg(24, 8.0);
        std::mt19937_64 rng(1);
        std::uniform_real_distribution<double> U(-1.0, 1.0);
        double worst = 0.0;
        for (int s = 0; s < 5; ++s) {
            const LocalMaxwellianParams p{1.0 + 0.3 * U(rng), {0.5 * U(rng), 0.5 * U(rng), 0.5 * U(rng)},
                                          1.0 + 0.3 * U(rng)};
            worst = std::max(worst, ChiBasis(p, vg).gram_defect());
        }
        d = fmt("max Gram defect %.3e at 24^3, v_max 8 (tolerance 1e-6)", worst);
        return worst <= 1e-6;
    });

    criterion(2, [](std::string& d) {
        const VelocityGrid vg(16, 6.928203230275509);
        CollisionConfig raw;
        raw.mode = CollisionMode::hard_sphere;
        raw.conservation_fix = false;
        std::mt19937_64 rng(2);
        Defect with, without;
        double direct = 0.0;
        for (int s = 0; s < 20; ++s) {
            const auto F = two_bump(rng, vg);
            const auto parts = collision_parts(F, F, vg, raw);
            std::vector<double> Q(F.size()), shape(F.size());
            for (std::size_t j = 0; j < F.size(); ++j) {
                Q[j] = parts.gain[j] - parts.loss_frequency[j] * F[j];
                shape[j] = 2.0 * std::abs(F[j]);
            }
            const Defect a = moment_defect(Q, F, parts.loss_frequency, vg);
            // the fix as collide applies it
            enforce_moments(Q, shape, Moments{}, vg);
            const Defect b = moment_defect(Q, F, parts.loss_frequency, vg);
            without = {std::max(without.flux, a.flux), std::max(without.density, a.density)};
            with = {std::max(with.flux, b.flux), std::max(with.density, b.density)};
            if (s == 0) {
                CollisionConfig fix = raw;
                fix.conservation_fix = true;
                const auto Qc = collide(F, F, vg, fix);
                for (std::size_t j = 0; j < F.size(); ++j)
                    direct = std::max(direct, std::abs(Qc[j] - Q[j]));
                direct /= max_abs(Q);
            }
        }
        d = fmt("20 samples at 16^3: with fix %.2e (tolerance 1e-13), without fix %.2e (tolerance 1e-3), both "
                "relative to the collision flux int nu F |psi|; relative to int F |psi|: %.2e / %.2e; collide() "
                "agrees to %.1e",
                with.flux, without.flux, with.density, without.density, direct);
        return with.flux <= 1e-13 && with.density <= 1e-13 && without.flux <= 1e-3 && direct <= 1e-12;
    });

    criterion(3, [](std::string& d) {
        const auto a = operator_stats(12), b = operator_stats(16);
        const double drift = std::abs(b.coercivity / a.coercivity - 1.0);
        d = fmt("symmetry %.2e, min <Lg,g>/|g|^2 %.2e, |L chi| %.2e, coercivity %.4f (12^3) %.4f (16^3) drift %.1f%%",
                std::max(a.symmetry, b.symmetry), std::min(a.min_quotient, b.min_quotient),
                std::max(a.kernel, b.kernel), a.coercivity, b.coercivity, 100.0 * drift);
        return std::max(a.symmetry, b.symmetry) <= 1e-8 && std::min(a.min_quotient, b.min_quotient) >= -1e-8 &&
               std::max(a.kernel, b.kernel) <= 1e-3 && a.coercivity > 0.0 && b.coercivity > 0.0 && drift <= 0.2;
    });

    criterion(4, [](std::string& d) {
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<double> U(-1.0, 1.0);
        std::vector<Field> phi(4, Field(64));
        for (auto& p : phi)
            for (auto& x : p)
                x = U(rng);
        const auto A = exp_taylor_coeffs(phi);
        double closed = 0.0;
        for (std::size_t c = 0; c < 64; ++c) {
            const double p1 = phi[1][c], p2 = phi[2][c], p3 = phi[3][c];
            closed = std::max({closed, std::abs(A[1][c] - p1), std::abs(A[2][c] - (p2 + 0.5 * p1 * p1)),
                               std::abs(A[3][c] - (p3 + p1 * p2 + p1 * p1 * p1 / 6.0))});
        }
        std::string slopes;
        double worst = 0.0;
        for (int order = 1; order <= 3; ++order) {
            std::vector<std::pair<double, double>> pts;
            for (double e : {0.08, 0.04, 0.02, 0.01})
                pts.emplace_back(e, max_abs(taylor_remainder(phi, e, order)));
            const double s = fit_order(pts).slope;
            slopes += fmt(" %.3f", s);
            worst = std::max(worst, std::abs(s - (order + 1)));
        }
        d = fmt("closed-form defect %.2e, remainder slopes%s for orders 1..3", closed, slopes.c_str());
        return closed <= 1e-12 && worst <= 0.3;
    });

    criterion(5, [&](std::string& d) {
        const SpatialGrid g(2, 32, 2.0 * std::numbers::pi);
        const auto opts = defaults.elliptic();
        Field exact(g.size());
        for (std::size_t c = 0; c < g.size(); ++c) {
            const Vec3 x = g.coordinate(c);
            exact[c] = 0.2 * (std::sin(x[0]) + 0.5 * std::sin(x[1] + 0.3) * std::cos(x[0]));
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
        std::vector<double> r;
        for (double x : rep.residual_history)
            if (x > 1e-13)
                r.push_back(x);
        double order = 0.0;
        if (r.size() >= 3) {
            const std::size_t m = r.size();
            order = std::log(r[m - 1] / r[m - 2]) / std::log(r[m - 2] / r[m - 3]);
        }
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> U(-1.0, 1.0);
        double worst = INFINITY;
        for (int s = 0; s < 10; ++s) {
            Field r1(g.size()), r2(g.size());
            for (std::size_t c = 0; c < g.size(); ++c) {
                r1[c] = 1.0 + 0.3 * U(rng);
                r2[c] = r1[c] + 0.2 * (1.0 + U(rng));
            }
            const auto p1 = solve_nonlinear_poisson(r1, g, opts), p2 = solve_nonlinear_poisson(r2, g, opts);
            for (std::size_t c = 0; c < g.size(); ++c)
                worst = std::min(worst, p2[c] - p1[c]);
        }
        d = fmt("error %.2e (tolerance 1e-9), Newton order %.2f over %zu residuals, min(phi2 - phi1) %.3e on 10 pairs",
                err, order, r.size(), worst);
        return err <= 1e-9 && order >= 1.5 && worst >= -1e-12;
    });

    criterion(6, [](std::string& d) {
        std::mt19937_64 rng(6);
        std::uniform_real_distribution<double> U(-1.0, 1.0);
        const double L6 = std::log(6.0);
        int violations = 0;
        for (int s = 0; s < 10000; ++s) {
            const double x = L6 * U(rng);
            const double y = lyapunov_density(x);
            if (y > 3.0 * x * x || y < x * x / 12.0)
                ++violations;
        }
        d = fmt("%d violations in 10^4 samples", violations);
        return violations == 0;
    });

    criterion(7, [](std::string& d) {
        const SpatialGrid g(1, 128, 2.0 * std::numbers::pi);
        EulerOptions o;
        o.muscl = true;
        o.elliptic.stencil = Stencil::spectral;
        const FluidState eq = init_irrotational(0.0, {}, 1.0, g, 0.0, o.elliptic);
        const auto next = step_euler_poisson(eq, 0.5 * euler_stability_limit(eq, o), o);
        double change = 0.0;
        for (std::size_t c = 0; c < g.size(); ++c)
            change = std::max({change, std::abs(next.rho[c] - 1.0), std::abs(next.u[0][c]), std::abs(next.phi[c])});
        FluidState s = init_irrotational(0.1, {{1, 0, 0}, {3, 0, 0}}, 1.0, g, 1.0, o.elliptic);
        const double m0 = integrate_space(s.rho, g);
        double defect = 0.0;
        for (int i = 0; i < 100; ++i) {
            const double before = integrate_space(s.rho, g);
            s = step_euler_poisson(s, 0.4 * euler_stability_limit(s, o), o);
            defect = std::max(defect, std::abs(integrate_space(s.rho, g) - before) / m0);
        }
        const double e1 = dispersion_error(1), e2 = dispersion_error(2);
        d = fmt("equilibrium change %.1e, per-step mass defect %.2e, dispersion error %.3f%% (xi=1) %.3f%% (xi=2)",
                change, defect, 100.0 * e1, 100.0 * e2);
        return change == 0.0 && defect <= 1e-13 && e1 <= 0.03 && e2 <= 0.03;
    });

    criterion(8, [](std::string& d) {
        const SpatialGrid fine(1, 128, 2.0 * std::numbers::pi), coarse(1, 32, 2.0 * std::numbers::pi);
        EulerOptions eo;
        eo.muscl = true;
        EllipticSolveOptions sp;
        sp.stencil = Stencil::spectral;
        const auto init = init_irrotational(0.08, {{1, 0, 0}, {2, 0, 0}}, 1.0, fine, 1.0, eo.elliptic);
        const auto bg = run_euler(init, 0.2, 0.0, 2, eo).sample(coarse, Stencil::spectral, sp);
        const VelocityGrid vg(16, 6.928203230275509);
        const auto set = build_expansion(bg, vg, CollisionConfig{}, CascadeOptions{}, 0.2, 0.05);
        const SourceFunction zero = [](double, const BackgroundSlice& sl) {
            MacroSources m;
            for (auto& f : m.f)
                f.assign(sl.state.rho.size(), 0.0);
            m.g.assign(sl.state.rho.size(), 0.0);
            return m;
        };
        const auto series = solve_coefficient_system(bg, vg, zero, 0.2, 0.0, CascadeOptions{});
        double stays = 0.0;
        for (std::size_t i = 0; i < series.states.size(); ++i) {
            const auto& U = series.states[i];
            stays = std::max({stays, max_abs(U.rho), max_abs(U.u[0]), max_abs(U.theta), max_abs(series.phi[i])});
        }
        d = fmt("max leakage %.2e, zero-source max %.1e, symmetry defect %.1e (expansion) %.1e (system)",
                set.max_leakage, stays, set.symmetry_defect, series.symmetry_defect);
        return set.max_leakage <= 1e-3 && stays == 0.0 && set.symmetry_defect == 0.0 &&
               series.symmetry_defect == 0.0;
    });

    // criteria 9 and 10 share one sweep on the default configuration
    SweepReport sweep;
    bool sweep_ok = false;
    std::string sweep_error;
    const auto t9 = std::chrono::steady_clock::now();
    if (!wanted(9) && !wanted(10)) {
        std::printf("%s\n", failures == 0 ? "ALL PASS" : "SOME FAILED");
        return failures == 0 ? 0 : 1;
    }
    try {
        const auto eo = defaults.euler_options();
        const auto init = init_irrotational(defaults.amplitude, {{defaults.wave_number, 0, 0}}, defaults.K,
                                            defaults.euler_grid(), defaults.velocity_ratio, eo.elliptic);
        const auto fine = run_euler(init, defaults.T, 0.0, defaults.euler_store_every, eo);
        const auto bg = fine.sample(defaults.grid(), parse_stencil(defaults.stencil), defaults.elliptic());
        const auto set = build_expansion(bg, defaults.velocity_grid(), defaults.collision(),
                                         defaults.cascade_options(), defaults.T, defaults.store_interval);
        sweep = epsilon_sweep(bg, set, defaults.sweep_config());
        sweep_ok = true;
        std::printf("%s", sweep_csv(sweep).c_str());

        if (const char* slow = std::getenv("IVPB_SLOW"); slow && std::string(slow) == "1") {
            const auto ts = std::chrono::steady_clock::now();
            const VelocityGrid vg12(12, defaults.v_max);
            CollisionConfig hs = defaults.collision();
            hs.mode = CollisionMode::hard_sphere;
            const auto ko = defaults.kinetic_options();
            std::vector<double> dist;
            for (double eps : {0.1, 0.05}) {
                const auto s0 = well_prepared_state(bg.at(0.0), vg12, eps, ko.elliptic);
                const double h = defaults.store_interval /
                                 std::ceil(defaults.store_interval / default_kinetic_dt(s0, ko) - 1e-9);
                const int per = static_cast<int>(std::lround(defaults.store_interval / h));
                dist.push_back(distance_to_background(run_vpb(s0, defaults.T, h, per, hs, ko), bg));
            }
            const double ratio = dist[0] / dist[1];
            std::printf("%s criterion 9 (hard-sphere repeat, optional): distances %.4e %.4e, ratio %.3f (needs >= 1.7) "
                        "(%.1f s)\n",
                        ratio >= 1.7 ? "PASS" : "FAIL", dist[0], dist[1], ratio,
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - ts).count());
            if (ratio < 1.7)
                ++failures;
        } else {
            std::printf("note: hard-sphere repeat of criterion 9 skipped (set IVPB_SLOW=1)\n");
        }
    } catch (const std::exception& e) {
        sweep_error = e.what();
    }
    const double sweep_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t9).count();

    if (!sweep_ok) {
        report(9, false, "sweep failed: " + sweep_error, sweep_time);
        report(10, false, "sweep failed: " + sweep_error, 0.0);
    } else {
        const auto& f = sweep.distance_fit;
        report(9,
               f.slope >= 0.8 && f.slope <= 1.3 && f.r2 >= 0.98 && sweep.valid,
               fmt("slope %.4f in [0.8, 1.3], r2 %.5f, 95%% CI [%.3f, %.3f], floor estimate %.3e, valid %d", f.slope,
                   f.r2, f.slope_low, f.slope_high, sweep.distance_floor, int(sweep.valid)),
               sweep_time);
        bool finite = true;
        for (const auto& r : sweep.rows)
            for (const auto& n : r.norms)
                finite = finite && std::isfinite(n.value);
        report(10, sweep.f_ratio <= 5.0 && finite && !sweep.any_boundary_argmax,
               fmt("sup_t |f| max/min ratio %.4f (<= 5), norms finite %d, boundary argmax flags %d", sweep.f_ratio,
                   int(finite), int(sweep.any_boundary_argmax)),
               0.0);
    }
    std::printf("%s\n", failures == 0 ? "ALL PASS" : "SOME FAILED");
    return failures == 0 ? 0 : 1;
}
