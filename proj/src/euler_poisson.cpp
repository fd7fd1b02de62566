#include "ivpb/euler_poisson.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numbers>
#include <sstream>

namespace ivpb {

namespace {

constexpr double kGamma = 5.0 / 3.0;

double van_leer(double a, double b) { return a * b > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }

struct Conserved {
    Field rho;
    VectorField m;
};

Conserved to_conserved(const FluidState& s)
{
    Conserved U;
    U.rho = s.rho;
    for (int a = 0; a < 3; ++a) {
        U.m[a].resize(s.rho.size());
        for (std::size_t c = 0; c < s.rho.size(); ++c)
            U.m[a][c] = s.rho[c] * s.u[a][c];
    }
    return U;
}

// Right-hand side of the conservative update; phi must solve Poisson for U.rho.
Conserved euler_rhs(const Conserved& U, const Field& phi, const SpatialGrid& grid, double K, bool muscl)
{
    const std::size_t n = grid.size();
    const int dim = grid.dim();
    const double ih = 1.0 / grid.spacing();
    Conserved R;
    R.rho.assign(n, 0.0);
    for (auto& m : R.m)
        m.assign(n, 0.0);

    // Primitive values: rho, u_0..u_{dim-1}.
    std::vector<std::array<double, 4>> w(n);
    for (std::size_t c = 0; c < n; ++c) {
        w[c][0] = U.rho[c];
        for (int a = 0; a < dim; ++a)
            w[c][1 + a] = U.m[a][c] / U.rho[c];
    }
    auto flux = [&](const std::array<double, 4>& s, int axis, std::array<double, 4>& f, std::array<double, 4>& cons,
                    double& speed) {
        const double rho = s[0];
        const double p = K * std::pow(rho, kGamma);
        const double ua = s[1 + axis];
        f[0] = rho * ua;
        cons[0] = rho;
        for (int b = 0; b < dim; ++b) {
            f[1 + b] = rho * ua * s[1 + b] + (b == axis ? p : 0.0);
            cons[1 + b] = rho * s[1 + b];
        }
        speed = std::abs(ua) + std::sqrt(kGamma * p / rho);
    };
    const int nv = 1 + dim;
    for (int axis = 0; axis < dim; ++axis) {
        for (std::size_t c = 0; c < n; ++c) {
            const std::size_t cp = grid.shifted(c, axis, 1);
            std::array<double, 4> L = w[c], Rr = w[cp];
            if (muscl) {
                const std::size_t cm = grid.shifted(c, axis, -1);
                const std::size_t cpp = grid.shifted(c, axis, 2);
                for (int k = 0; k < nv; ++k) {
                    L[k] = w[c][k] + 0.5 * van_leer(w[c][k] - w[cm][k], w[cp][k] - w[c][k]);
                    Rr[k] = w[cp][k] - 0.5 * van_leer(w[cp][k] - w[c][k], w[cpp][k] - w[cp][k]);
                }
            }
            if (!(L[0] > 0.0) || !(Rr[0] > 0.0))
                throw NumericalError("Euler-Poisson: vacuum (rho <= 0) in reconstruction");
            std::array<double, 4> fL{}, fR{}, uL{}, uR{};
            double sL, sR;
            flux(L, axis, fL, uL, sL);
            flux(Rr, axis, fR, uR, sR);
            const double smax = std::max(sL, sR);
            for (int k = 0; k < nv; ++k) {
                const double F = 0.5 * (fL[k] + fR[k]) - 0.5 * smax * (uR[k] - uL[k]);
                double* dst = k == 0 ? R.rho.data() : R.m[k - 1].data();
                dst[c] -= F * ih;
                dst[cp] += F * ih;
            }
        }
    }
    for (int a = 0; a < dim; ++a) {
        const auto dphi = derivative(phi, grid, a, Stencil::second_order);
        for (std::size_t c = 0; c < n; ++c)
            R.m[a][c] -= U.rho[c] * dphi[c];
    }
    return R;
}

FluidState from_conserved(const Conserved& U, const FluidState& like, const EllipticSolveOptions& elliptic)
{
    FluidState s = like;
    s.rho = U.rho;
    for (double r : s.rho)
        if (!(r > 0.0))
            throw NumericalError("Euler-Poisson: vacuum (rho <= 0)");
    for (int a = 0; a < s.grid.dim(); ++a)
        for (std::size_t c = 0; c < s.rho.size(); ++c)
            s.u[a][c] = U.m[a][c] / U.rho[c];
    s.phi = solve_nonlinear_poisson(s.rho, s.grid, elliptic, nullptr, &like.phi);
    s.refresh_theta();
    return s;
}

} // namespace

void FluidState::refresh_theta()
{
    theta.resize(rho.size());
    for (std::size_t c = 0; c < rho.size(); ++c)
        theta[c] = K * std::pow(rho[c], 2.0 / 3.0);
}

void EulerOptions::validate() const
{
    if (!(K > 0.0))
        throw InvalidArgument("K must be positive");
    if (!(cfl > 0.0) || cfl > 1.0)
        throw InvalidArgument("euler cfl must lie in (0, 1]");
    if (!(wave_margin >= 1.0))
        throw InvalidArgument("euler wave_margin must be >= 1");
    elliptic.validate();
}

FluidState init_irrotational(double amplitude, const std::vector<std::array<int, 3>>& modes, double K,
                             const SpatialGrid& grid, double velocity_ratio, const EllipticSolveOptions& elliptic)
{
    if (std::abs(amplitude) > 0.1)
        throw InvalidArgument("init_irrotational: |amplitude| must be <= 0.1 (small-data regime)");
    if (!(K > 0.0))
        throw InvalidArgument("init_irrotational: K must be positive");
    const double k0 = 2.0 * std::numbers::pi / grid.length();
    for (const auto& m : modes) {
        bool zero = true;
        for (int a = 0; a < 3; ++a) {
            if (a >= grid.dim() && m[a] != 0)
                throw InvalidArgument("init_irrotational: wave vector has a component along an inactive axis");
            zero = zero && m[a] == 0;
        }
        if (zero)
            throw InvalidArgument("init_irrotational: zero wave vector");
    }
    FluidState s;
    s.grid = grid;
    s.K = K;
    const std::size_t n = grid.size();
    s.rho.assign(n, 1.0);
    for (auto& u : s.u)
        u.assign(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        const auto idx = grid.index(c);
        for (const auto& m : modes) {
            double phase = 0.0, kn2 = 0.0;
            for (int a = 0; a < grid.dim(); ++a) {
                // Integer phase keeps the sampled cosine exactly mean free.
                phase += 2.0 * std::numbers::pi * m[a] * idx[a] / grid.cells_per_axis();
                kn2 += static_cast<double>(m[a]) * m[a];
            }
            const double kn = std::sqrt(kn2) * k0;
            s.rho[c] += amplitude * std::cos(phase);
            // u = grad chi, chi = r a sin(k.x)/|k|: u_a = r a (k_a/|k|) cos(k.x)
            for (int a = 0; a < grid.dim(); ++a)
                s.u[a][c] += velocity_ratio * amplitude * (k0 * m[a] / kn) * std::cos(phase);
        }
    }
    s.phi = solve_nonlinear_poisson(s.rho, grid, elliptic);
    s.refresh_theta();
    return s;
}

double euler_stability_limit(const FluidState& s, const EulerOptions& opts)
{
    double vmax = 0.0;
    for (std::size_t c = 0; c < s.rho.size(); ++c) {
        const double cs = std::sqrt(kGamma * s.K * std::pow(s.rho[c], 2.0 / 3.0));
        for (int a = 0; a < s.grid.dim(); ++a)
            vmax = std::max(vmax, std::abs(s.u[a][c]) + cs);
    }
    return s.grid.spacing() / (opts.wave_margin * vmax);
}

FluidState step_euler_poisson(const FluidState& s, double dt, const EulerOptions& opts)
{
    if (!(dt > 0.0))
        throw InvalidArgument("step_euler_poisson: dt must be positive");
    const double limit = euler_stability_limit(s, opts);
    if (dt > limit * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "Euler-Poisson CFL violation: dt = " << dt << " exceeds the stability limit " << limit;
        throw NumericalError(os.str());
    }
    const std::size_t n = s.rho.size();
    const int dim = s.grid.dim();
    const Conserved U0 = to_conserved(s);
    const Conserved R0 = euler_rhs(U0, s.phi, s.grid, s.K, opts.muscl);
    Conserved U1 = U0;
    for (std::size_t c = 0; c < n; ++c) {
        U1.rho[c] += dt * R0.rho[c];
        for (int a = 0; a < dim; ++a)
            U1.m[a][c] += dt * R0.m[a][c];
    }
    const FluidState s1 = from_conserved(U1, s, opts.elliptic);
    const Conserved R1 = euler_rhs(U1, s1.phi, s.grid, s.K, opts.muscl);
    Conserved U2 = U0;
    for (std::size_t c = 0; c < n; ++c) {
        U2.rho[c] = 0.5 * U0.rho[c] + 0.5 * (U1.rho[c] + dt * R1.rho[c]);
        for (int a = 0; a < dim; ++a)
            U2.m[a][c] = 0.5 * U0.m[a][c] + 0.5 * (U1.m[a][c] + dt * R1.m[a][c]);
    }
    FluidState out = from_conserved(U2, s1, opts.elliptic);
    out.time = s.time + dt;
    return out;
}

FluidRates fluid_rates(const FluidState& s, Stencil stencil, const EllipticSolveOptions& elliptic)
{
    const std::size_t n = s.rho.size();
    const int dim = s.grid.dim();
    FluidRates r;
    r.rho.assign(n, 0.0);
    for (auto& u : r.u)
        u.assign(n, 0.0);
    for (int a = 0; a < dim; ++a) {
        Field flux(n);
        for (std::size_t c = 0; c < n; ++c)
            flux[c] = s.rho[c] * s.u[a][c];
        const auto d = derivative(flux, s.grid, a, stencil);
        for (std::size_t c = 0; c < n; ++c)
            r.rho[c] -= d[c];
    }
    Field p(n);
    for (std::size_t c = 0; c < n; ++c)
        p[c] = s.K * std::pow(s.rho[c], kGamma);
    for (int b = 0; b < dim; ++b) {
        const auto dp = derivative(p, s.grid, b, stencil);
        const auto dphi = derivative(s.phi, s.grid, b, stencil);
        for (std::size_t c = 0; c < n; ++c)
            r.u[b][c] = -dp[c] / s.rho[c] - dphi[c];
        for (int a = 0; a < dim; ++a) {
            const auto du = derivative(s.u[b], s.grid, a, stencil);
            for (std::size_t c = 0; c < n; ++c)
                r.u[b][c] -= s.u[a][c] * du[c];
        }
    }
    r.theta.resize(n);
    for (std::size_t c = 0; c < n; ++c)
        r.theta[c] = (2.0 / 3.0) * s.theta[c] / s.rho[c] * r.rho[c];
    Field ephi(n);
    for (std::size_t c = 0; c < n; ++c)
        ephi[c] = std::exp(s.phi[c]);
    EllipticSolveOptions opts = elliptic;
    opts.stencil = stencil;
    r.phi = solve_screened_poisson(ephi, r.rho, s.grid, opts);
    return r;
}

namespace {

// Hermite basis on [0, 1] and its derivative (divided by the interval length by the caller).
void hermite(double s, double& h00, double& h10, double& h01, double& h11)
{
    const double s2 = s * s, s3 = s2 * s;
    h00 = 2 * s3 - 3 * s2 + 1;
    h10 = s3 - 2 * s2 + s;
    h01 = -2 * s3 + 3 * s2;
    h11 = s3 - s2;
}

std::size_t locate(const std::vector<FluidState>& snaps, double t)
{
    const double t0 = snaps.front().time, t1 = snaps.back().time;
    const double tol = 1e-12 * std::max(1.0, std::abs(t1));
    if (t < t0 - tol || t > t1 + tol) {
        std::ostringstream os;
        os << "trajectory queried at t = " << t << " outside [" << t0 << ", " << t1 << "]";
        throw InvalidArgument(os.str());
    }
    std::size_t i = 0;
    while (i + 2 < snaps.size() && snaps[i + 1].time <= t)
        ++i;
    return i;
}

} // namespace

FluidState EulerTrajectory::at(double t) const
{
    if (snapshots.empty())
        throw InvalidArgument("empty trajectory");
    if (snapshots.size() == 1)
        return snapshots.front();
    const std::size_t i = locate(snapshots, t);
    const FluidState& a = snapshots[i];
    const FluidState& b = snapshots[i + 1];
    const FluidRates& ra = rates[i];
    const FluidRates& rb = rates[i + 1];
    const double H = b.time - a.time;
    const double s = std::clamp((t - a.time) / H, 0.0, 1.0);
    if (s == 0.0)
        return a;
    if (s == 1.0)
        return b;
    double h00, h10, h01, h11;
    hermite(s, h00, h10, h01, h11);
    auto mix = [&](const Field& fa, const Field& da, const Field& fb, const Field& db) {
        Field out(fa.size());
        for (std::size_t c = 0; c < fa.size(); ++c)
            out[c] = h00 * fa[c] + h10 * H * da[c] + h01 * fb[c] + h11 * H * db[c];
        return out;
    };
    FluidState out = a;
    out.time = t;
    out.rho = mix(a.rho, ra.rho, b.rho, rb.rho);
    for (int k = 0; k < 3; ++k)
        out.u[k] = mix(a.u[k], ra.u[k], b.u[k], rb.u[k]);
    const Field guess = mix(a.phi, ra.phi, b.phi, rb.phi);
    EllipticSolveOptions opts = elliptic;
    opts.stencil = stencil;
    out.phi = solve_nonlinear_poisson(out.rho, out.grid, opts, nullptr, &guess);
    out.refresh_theta();
    return out;
}

FluidRates EulerTrajectory::rate_at(double t) const
{
    if (snapshots.size() == 1)
        return rates.front();
    const std::size_t i = locate(snapshots, t);
    const double H = snapshots[i + 1].time - snapshots[i].time;
    const double s = std::clamp((t - snapshots[i].time) / H, 0.0, 1.0);
    if (s == 0.0)
        return rates[i];
    if (s == 1.0)
        return rates[i + 1];
    return fluid_rates(at(t), stencil, elliptic);
}

EulerTrajectory EulerTrajectory::sample(const SpatialGrid& coarse, Stencil stencil,
                                        const EllipticSolveOptions& elliptic) const
{
    const SpatialGrid& fine = snapshots.front().grid;
    if (coarse.dim() != fine.dim() || coarse.length() != fine.length() ||
        fine.cells_per_axis() % coarse.cells_per_axis() != 0)
        throw InvalidArgument("trajectory sampling needs a coarse grid whose nodes are fine-grid nodes");
    const int f = fine.cells_per_axis() / coarse.cells_per_axis();
    EllipticSolveOptions opts = elliptic;
    opts.stencil = stencil;
    EulerTrajectory out;
    out.stencil = stencil;
    out.elliptic = opts;
    for (const auto& s : snapshots) {
        FluidState c;
        c.grid = coarse;
        c.K = s.K;
        c.time = s.time;
        c.rho.resize(coarse.size());
        for (auto& u : c.u)
            u.assign(coarse.size(), 0.0);
        for (std::size_t k = 0; k < coarse.size(); ++k) {
            auto idx = coarse.index(k);
            for (int a = 0; a < coarse.dim(); ++a)
                idx[a] *= f;
            const std::size_t j = fine.flat(idx);
            c.rho[k] = s.rho[j];
            for (int a = 0; a < 3; ++a)
                c.u[a][k] = s.u[a][j];
        }
        // The potential is re-solved so that it satisfies the coarse discrete Poisson equation.
        std::vector<double> guess(coarse.size());
        for (std::size_t k = 0; k < coarse.size(); ++k) {
            auto idx = coarse.index(k);
            for (int a = 0; a < coarse.dim(); ++a)
                idx[a] *= f;
            guess[k] = s.phi[fine.flat(idx)];
        }
        c.phi = solve_nonlinear_poisson(c.rho, coarse, opts, nullptr, &guess);
        c.refresh_theta();
        out.rates.push_back(fluid_rates(c, stencil, opts));
        out.snapshots.push_back(std::move(c));
    }
    return out;
}

EulerTrajectory run_euler(const FluidState& initial, double T, double dt, int store_every, const EulerOptions& opts)
{
    opts.validate();
    if (T < 0.0)
        throw InvalidArgument("run_euler: T must be non-negative");
    if (store_every < 1)
        throw InvalidArgument("run_euler: store_every must be >= 1");
    EulerTrajectory traj;
    traj.stencil = opts.rate_stencil;
    traj.elliptic = opts.elliptic;
    traj.snapshots.push_back(initial);
    traj.rates.push_back(fluid_rates(initial, opts.rate_stencil, opts.elliptic));
    if (T == 0.0)
        return traj;
    const double target = dt > 0.0 ? dt : opts.cfl * euler_stability_limit(initial, opts);
    const int steps = static_cast<int>(std::ceil(T / target - 1e-9));
    const double h = T / steps;
    FluidState s = initial;
    for (int k = 1; k <= steps; ++k) {
        s = step_euler_poisson(s, h, opts);
        if (k == steps)
            s.time = T;
        if (k % store_every == 0 || k == steps) {
            traj.snapshots.push_back(s);
            traj.rates.push_back(fluid_rates(s, opts.rate_stencil, opts.elliptic));
        }
    }
    return traj;
}

std::string trajectory_csv(const EulerTrajectory& traj)
{
    std::string out = "t,cell,rho,u1,u2,u3,theta,phi\n";
    char buf[512];
    for (const auto& s : traj.snapshots)
        for (std::size_t c = 0; c < s.rho.size(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.time, c, s.rho[c],
                          s.u[0][c], s.u[1][c], s.u[2][c], s.theta[c], s.phi[c]);
            out += buf;
        }
    return out;
}

EulerTrajectory trajectory_from_csv(const std::string& text, const SpatialGrid& grid, const EulerOptions& opts)
{
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    if (line != "t,cell,rho,u1,u2,u3,theta,phi")
        throw InvalidArgument("trajectory CSV: unexpected header");
    EulerTrajectory traj;
    traj.stencil = opts.rate_stencil;
    traj.elliptic = opts.elliptic;
    FluidState cur;
    bool open = false;
    auto flush = [&] {
        if (!open)
            return;
        cur.refresh_theta();
        traj.rates.push_back(fluid_rates(cur, opts.rate_stencil, opts.elliptic));
        traj.snapshots.push_back(cur);
        open = false;
    };
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        double v[8];
        std::istringstream ls(line);
        std::string tok;
        for (int k = 0; k < 8; ++k) {
            if (!std::getline(ls, tok, ','))
                throw InvalidArgument("trajectory CSV: short row");
            v[k] = std::stod(tok);
        }
        const auto c = static_cast<std::size_t>(v[1]);
        if (c == 0) {
            flush();
            cur = FluidState{};
            cur.grid = grid;
            cur.K = opts.K;
            cur.time = v[0];
            cur.rho.assign(grid.size(), 0.0);
            for (auto& u : cur.u)
                u.assign(grid.size(), 0.0);
            cur.phi.assign(grid.size(), 0.0);
            open = true;
        }
        if (!open || c >= grid.size())
            throw InvalidArgument("trajectory CSV: cell index out of range");
        cur.rho[c] = v[2];
        cur.u[0][c] = v[3];
        cur.u[1][c] = v[4];
        cur.u[2][c] = v[5];
        cur.phi[c] = v[7];
    }
    flush();
    if (traj.snapshots.empty())
        throw InvalidArgument("trajectory CSV: no snapshots");
    return traj;
}

} // namespace ivpb
