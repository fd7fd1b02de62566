#include "ivpb/cascade.hpp"

#include "ivpb/io.hpp"
#include "ivpb/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

namespace ivpb {

std::vector<Field> exp_taylor_coeffs(const std::vector<Field>& phi)
{
    if (phi.empty())
        throw InvalidArgument("exp_taylor_coeffs: need at least phi_0");
    const std::size_t n = phi.size() - 1;
    const std::size_t cells = phi[0].size();
    for (const auto& p : phi)
        if (p.size() != cells)
            throw InvalidArgument("exp_taylor_coeffs: fields differ in size");
    // Recursion on A_m = e^-phi_0 c_m directly: A_0 = 1, A_m = (1/m) sum_j j phi_j A_{m-j}.
    std::vector<Field> A(n + 1, Field(cells, 0.0));
    std::fill(A[0].begin(), A[0].end(), 1.0);
    for (std::size_t m = 1; m <= n; ++m)
        for (std::size_t c = 0; c < cells; ++c) {
            double s = 0.0;
            for (std::size_t j = 1; j <= m; ++j)
                s += static_cast<double>(j) * phi[j][c] * A[m - j][c];
            A[m][c] = s / static_cast<double>(m);
        }
    return A;
}

Field taylor_remainder(const std::vector<Field>& phi, double epsilon, int order)
{
    if (!(epsilon > 0.0))
        throw InvalidArgument("taylor_remainder: epsilon must be positive");
    if (order < 0)
        throw InvalidArgument("taylor_remainder: order must be non-negative");
    std::vector<Field> ext = phi;
    while (static_cast<int>(ext.size()) <= order)
        ext.emplace_back(phi[0].size(), 0.0);
    const auto A = exp_taylor_coeffs(ext);
    const std::size_t cells = phi[0].size();
    Field out(cells);
    for (std::size_t c = 0; c < cells; ++c) {
        // H(eps) e^-phi_0 = exp(sum_{j>=1} eps^j phi_j); subtract the Taylor sum first
        // in the scaled variable so the difference keeps its relative accuracy.
        double x = 0.0, pw = epsilon;
        for (std::size_t j = 1; j < phi.size(); ++j, pw *= epsilon)
            x += pw * phi[j][c];
        double taylor_tail = 0.0; // sum_{m=1}^{order} eps^m A_m
        pw = epsilon;
        for (int m = 1; m <= order; ++m, pw *= epsilon)
            taylor_tail += pw * A[m][c];
        out[c] = std::exp(phi[0][c]) * (std::expm1(x) - taylor_tail);
    }
    return out;
}

void CascadeOptions::validate() const
{
    if (k < 1)
        throw InvalidArgument("cascade k must be >= 1");
    if (!(cfl > 0.0) || cfl > 1.0)
        throw InvalidArgument("cascade cfl must lie in (0, 1]");
    if (!(leakage_tol > 0.0))
        throw InvalidArgument("cascade leakage_tol must be positive");
    if (!(time_delta > 0.0))
        throw InvalidArgument("cascade time_delta must be positive");
    elliptic.validate();
}

CoefficientState CoefficientState::zeros(std::size_t cells)
{
    CoefficientState s;
    s.rho.assign(cells, 0.0);
    s.theta.assign(cells, 0.0);
    for (auto& u : s.u)
        u.assign(cells, 0.0);
    return s;
}

namespace {

VectorField grad_of(const Field& f, const SpatialGrid& grid, Stencil stencil)
{
    VectorField g;
    for (int a = 0; a < 3; ++a)
        g[a] = a < grid.dim() ? derivative(f, grid, a, stencil) : Field(f.size(), 0.0);
    return g;
}

/// d/dx_axis of a phase field, one spatial derivative per velocity node.
PhaseField phase_dx(const PhaseField& F, const SpatialGrid& grid, std::size_t nv, int axis, Stencil stencil)
{
    const std::size_t cells = grid.size();
    PhaseField out(F.size());
    parallel_for(nv, [&](std::size_t j) {
        Field col(cells);
        for (std::size_t c = 0; c < cells; ++c)
            col[c] = F[c * nv + j];
        const auto d = derivative(col, grid, axis, stencil);
        for (std::size_t c = 0; c < cells; ++c)
            out[c * nv + j] = d[c];
    });
    return out;
}

/// d/dv_axis by fourth-order centered differences, zero beyond the box.
PhaseField phase_dv(const PhaseField& F, const VelocityGrid& vg, std::size_t cells, int axis)
{
    const std::size_t nv = vg.size();
    const int n = vg.nodes_per_axis();
    const double ih = 1.0 / (12.0 * vg.spacing());
    PhaseField out(F.size());
    const std::size_t stride = axis == 0 ? static_cast<std::size_t>(n) * n : (axis == 1 ? n : 1);
    for (std::size_t c = 0; c < cells; ++c) {
        const double* f = F.data() + c * nv;
        double* o = out.data() + c * nv;
        for (std::size_t j = 0; j < nv; ++j) {
            const int i = vg.index(j)[axis];
            auto at = [&](int d) {
                const int k = i + d;
                if (k < 0 || k >= n)
                    return 0.0;
                return f[static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(d) * static_cast<std::ptrdiff_t>(stride)];
            };
            o[j] = (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) * ih;
        }
    }
    return out;
}

/// Order-n Taylor coefficient of the Maxwellian whose moments are
/// sum_{i<n} eps^i m_i, by the Cauchy integral on a circle in eps.
std::vector<double> bgk_maxwellian_coefficient(int n, const std::vector<Moments>& m, const VelocityGrid& vg)
{
    using cd = std::complex<double>;
    const int K = 32;
    const double rho0 = m[0].mass;
    const Vec3 u0{m[0].momentum[0] / rho0, m[0].momentum[1] / rho0, m[0].momentum[2] / rho0};
    const double th0 = (m[0].energy / rho0 - norm2(u0)) / 3.0;
    // Radius well inside the disc where the moment map stays physical.
    double r = 1.0;
    for (std::size_t i = 1; i < m.size(); ++i) {
        const double size = std::abs(m[i].mass) / rho0 +
                            std::sqrt(norm2(m[i].momentum)) / (rho0 * std::sqrt(th0)) +
                            std::abs(m[i].energy) / (rho0 * th0);
        if (size > 0.0)
            r = std::min(r, 0.25 * std::pow(size, -1.0 / static_cast<double>(i)));
    }
    std::vector<cd> acc(vg.size(), cd(0.0, 0.0));
    for (int q = 0; q < K; ++q) {
        const cd z = std::polar(r, 2.0 * std::numbers::pi * q / K);
        cd mass = 0.0, energy = 0.0;
        std::array<cd, 3> mom{};
        cd zp = 1.0;
        for (std::size_t i = 0; i < m.size(); ++i, zp *= z) {
            mass += zp * m[i].mass;
            energy += zp * m[i].energy;
            for (int a = 0; a < 3; ++a)
                mom[a] += zp * m[i].momentum[a];
        }
        std::array<cd, 3> u;
        cd u2 = 0.0;
        for (int a = 0; a < 3; ++a) {
            u[a] = mom[a] / mass;
            u2 += u[a] * u[a];
        }
        const cd th = (energy / mass - u2) / 3.0;
        const cd pref = mass * std::pow(2.0 * std::numbers::pi * th, -1.5);
        const cd weight = std::pow(z, -n) / static_cast<double>(K);
        for (std::size_t j = 0; j < vg.size(); ++j) {
            const Vec3& v = vg.node(j);
            cd c2 = 0.0;
            for (int a = 0; a < 3; ++a)
                c2 += (v[a] - u[a]) * (v[a] - u[a]);
            acc[j] += weight * pref * std::exp(-c2 / (2.0 * th));
        }
    }
    std::vector<double> out(vg.size());
    for (std::size_t j = 0; j < vg.size(); ++j)
        out[j] = acc[j].real();
    return out;
}

} // namespace

BackgroundSlice make_slice(const FluidState& state, const FluidRates& rates, const VelocityGrid& vgrid,
                           Stencil stencil)
{
    BackgroundSlice s;
    s.state = state;
    s.rates = rates;
    const auto& grid = state.grid;
    s.grad_rho = grad_of(state.rho, grid, stencil);
    s.grad_theta = grad_of(state.theta, grid, stencil);
    s.grad_phi = grad_of(state.phi, grid, stencil);
    for (int b = 0; b < 3; ++b)
        s.grad_u[b] = grad_of(state.u[b], grid, stencil);
    const std::size_t cells = grid.size(), nv = vgrid.size();
    s.params.resize(cells);
    s.mu.resize(cells * nv);
    s.sqrt_mu.resize(cells * nv);
    for (std::size_t c = 0; c < cells; ++c) {
        auto& p = s.params[c];
        p.rho = state.rho[c];
        p.u = {state.u[0][c], state.u[1][c], state.u[2][c]};
        p.theta = state.theta[c];
        p.validate();
        const auto mu = eval_local_maxwellian(p, vgrid);
        for (std::size_t j = 0; j < nv; ++j) {
            s.mu[c * nv + j] = mu[j];
            s.sqrt_mu[c * nv + j] = std::sqrt(mu[j]);
        }
    }
    return s;
}

PhaseField hydro_part(const CoefficientState& U, const BackgroundSlice& slice, const VelocityGrid& vgrid)
{
    const std::size_t cells = slice.params.size(), nv = vgrid.size();
    PhaseField out(cells * nv);
    for (std::size_t c = 0; c < cells; ++c) {
        const auto& p = slice.params[c];
        const Vec3 un{U.u[0][c], U.u[1][c], U.u[2][c]};
        for (std::size_t j = 0; j < nv; ++j) {
            const Vec3& v = vgrid.node(j);
            const Vec3 cv{v[0] - p.u[0], v[1] - p.u[1], v[2] - p.u[2]};
            const double poly = U.rho[c] / p.rho + dot(cv, un) / p.theta +
                                U.theta[c] / (2.0 * p.theta) * (norm2(cv) / p.theta - 3.0);
            out[c * nv + j] = slice.mu[c * nv + j] * poly;
        }
    }
    return out;
}

MicroResult microscopic_part(const PhaseField& source, const BackgroundSlice& slice, const VelocityGrid& vgrid,
                             const CollisionConfig& cfg, double leakage_tol)
{
    const std::size_t cells = slice.params.size(), nv = vgrid.size();
    if (source.size() != cells * nv)
        throw InvalidArgument("microscopic_part: source has the wrong size");
    MicroResult out;
    out.g.assign(cells * nv, 0.0);
    std::vector<double> hydro2(cells, 0.0), total2(cells, 0.0), scale2(cells, 0.0);
    parallel_for(cells, [&](std::size_t c) {
        const LinearizedOperator op(slice.params[c], vgrid, cfg);
        std::span<const double> S(source.data() + c * nv, nv);
        const auto split = project_hydro(S, op.basis(), vgrid);
        hydro2[c] = inner(split.Pg, split.Pg, vgrid);
        total2[c] = inner(S, S, vgrid);
        scale2[c] = inner(op.sqrt_mu(), op.sqrt_mu(), vgrid);
        const auto inv = invert_L(split.residual, op);
        std::copy(inv.g.begin(), inv.g.end(), out.g.begin() + static_cast<std::ptrdiff_t>(c * nv));
    });
    double h2 = 0.0, t2 = 0.0, s2 = 0.0;
    for (std::size_t c = 0; c < cells; ++c) {
        h2 += hydro2[c];
        t2 += total2[c];
        s2 += scale2[c];
    }
    // The floor keeps rounding noise of a vanishing source from reading as leakage.
    out.leakage = std::sqrt(h2) / std::max(std::sqrt(t2), 1e-10 * std::sqrt(s2));
    if (out.leakage > leakage_tol) {
        std::ostringstream os;
        os << "cascade inconsistency: hydrodynamic leakage " << out.leakage << " of the closure argument exceeds "
           << leakage_tol;
        throw NumericalError(os.str());
    }
    return out;
}

PhaseField closure_source(int n, const BackgroundSlice& slice, const std::vector<PhaseField>& F,
                          const std::vector<PhaseField>& dF_dt, const std::vector<Field>& phi,
                          const VelocityGrid& vgrid, const CollisionConfig& cfg, Stencil stencil)
{
    if (n < 1)
        throw InvalidArgument("closure_source: n must be >= 1");
    const auto& grid = slice.state.grid;
    const int dim = grid.dim();
    const std::size_t cells = grid.size(), nv = vgrid.size();
    PhaseField D(cells * nv, 0.0);
    if (n == 1) {
        // (d_t + v.grad_x - grad phi_0 . grad_v) mu in closed form.
        const auto& r = slice.rates;
        for (std::size_t c = 0; c < cells; ++c) {
            const auto& p = slice.params[c];
            for (std::size_t j = 0; j < nv; ++j) {
                const Vec3& v = vgrid.node(j);
                const Vec3 cv{v[0] - p.u[0], v[1] - p.u[1], v[2] - p.u[2]};
                const double c2 = norm2(cv);
                const double tcoef = c2 / (2.0 * p.theta * p.theta) - 1.5 / p.theta;
                double s = r.rho[c] / p.rho + tcoef * r.theta[c];
                for (int b = 0; b < 3; ++b)
                    s += cv[b] * r.u[b][c] / p.theta;
                for (int a = 0; a < dim; ++a) {
                    double da = slice.grad_rho[a][c] / p.rho + tcoef * slice.grad_theta[a][c];
                    for (int b = 0; b < 3; ++b)
                        da += cv[b] * slice.grad_u[b][a][c] / p.theta;
                    s += v[a] * da;
                    s += slice.grad_phi[a][c] * cv[a] / p.theta;
                }
                D[c * nv + j] = s * slice.mu[c * nv + j];
            }
        }
    } else {
        const PhaseField& Fm = F[static_cast<std::size_t>(n - 1)];
        const PhaseField& dFm = dF_dt[static_cast<std::size_t>(n - 1)];
        for (std::size_t q = 0; q < D.size(); ++q)
            D[q] = dFm[q];
        for (int a = 0; a < dim; ++a) {
            const auto dx = phase_dx(Fm, grid, nv, a, stencil);
            for (std::size_t c = 0; c < cells; ++c)
                for (std::size_t j = 0; j < nv; ++j)
                    D[c * nv + j] += vgrid.node(j)[a] * dx[c * nv + j];
        }
        // - sum_{i+j=n-1} grad phi_i . grad_v F_j
        for (int i = 0; i <= n - 1; ++i) {
            const int jj = n - 1 - i;
            const auto gphi = grad_of(phi[static_cast<std::size_t>(i)], grid, stencil);
            if (jj == 0) {
                for (std::size_t c = 0; c < cells; ++c) {
                    const auto& p = slice.params[c];
                    for (std::size_t j = 0; j < nv; ++j) {
                        const Vec3& v = vgrid.node(j);
                        double s = 0.0;
                        for (int a = 0; a < dim; ++a)
                            s += gphi[a][c] * (v[a] - p.u[a]) / p.theta;
                        D[c * nv + j] += s * slice.mu[c * nv + j]; // grad_v mu = -(v - u) mu / theta
                    }
                }
            } else {
                for (int a = 0; a < dim; ++a) {
                    const auto dv = phase_dv(F[static_cast<std::size_t>(jj)], vgrid, cells, a);
                    for (std::size_t c = 0; c < cells; ++c)
                        for (std::size_t j = 0; j < nv; ++j)
                            D[c * nv + j] -= gphi[a][c] * dv[c * nv + j];
                }
            }
        }
        // - N_n
        if (cfg.mode == CollisionMode::hard_sphere) {
            parallel_for(cells, [&](std::size_t c) {
                for (int i = 1; i <= n - 1; ++i) {
                    const int jj = n - i;
                    std::span<const double> Fi(F[static_cast<std::size_t>(i)].data() + c * nv, nv);
                    std::span<const double> Fj(F[static_cast<std::size_t>(jj)].data() + c * nv, nv);
                    const auto q = collide(Fi, Fj, vgrid, cfg);
                    for (std::size_t j = 0; j < nv; ++j)
                        D[c * nv + j] -= q[j];
                }
            });
        } else {
            parallel_for(cells, [&](std::size_t c) {
                std::vector<Moments> m(static_cast<std::size_t>(n));
                m[0] = moments(std::span<const double>(slice.mu.data() + c * nv, nv), vgrid);
                for (int i = 1; i < n; ++i)
                    m[static_cast<std::size_t>(i)] =
                        moments(std::span<const double>(F[static_cast<std::size_t>(i)].data() + c * nv, nv), vgrid);
                const auto Mn = bgk_maxwellian_coefficient(n, m, vgrid);
                for (std::size_t j = 0; j < nv; ++j)
                    D[c * nv + j] -= cfg.bgk_rate * Mn[j];
            });
        }
    }
    PhaseField S(cells * nv);
    for (std::size_t q = 0; q < S.size(); ++q)
        S[q] = -D[q] / slice.sqrt_mu[q];
    return S;
}

MacroSources macro_sources(int n, const PhaseField& Fn, const BackgroundSlice& slice,
                           const std::vector<CoefficientState>& U, const std::vector<Field>& phi,
                           const VelocityGrid& vgrid, Stencil stencil)
{
    const auto& grid = slice.state.grid;
    const int dim = grid.dim();
    const std::size_t cells = grid.size(), nv = vgrid.size();
    // Traceless stress S_ij and heat flux q_i of F_n about the background.
    std::array<std::array<Field, 3>, 3> Sij;
    std::array<Field, 3> q;
    for (int a = 0; a < 3; ++a) {
        q[a].assign(cells, 0.0);
        for (int b = 0; b < 3; ++b)
            Sij[a][b].assign(cells, 0.0);
    }
    const double w = vgrid.weight();
    for (std::size_t c = 0; c < cells; ++c) {
        const auto& p = slice.params[c];
        double s[3][3] = {}, qq[3] = {};
        for (std::size_t j = 0; j < nv; ++j) {
            const Vec3& v = vgrid.node(j);
            const Vec3 cv{v[0] - p.u[0], v[1] - p.u[1], v[2] - p.u[2]};
            const double c2 = norm2(cv);
            const double f = Fn[c * nv + j];
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b)
                    s[a][b] += (cv[a] * cv[b] - (a == b ? c2 / 3.0 : 0.0)) * f;
                qq[a] += cv[a] * (c2 - 5.0 * p.theta) * f;
            }
        }
        for (int a = 0; a < 3; ++a) {
            q[a][c] = qq[a] * w;
            for (int b = 0; b < 3; ++b)
                Sij[a][b][c] = s[a][b] * w;
        }
    }
    MacroSources out;
    for (auto& f : out.f)
        f.assign(cells, 0.0);
    out.g.assign(cells, 0.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < dim; ++j) {
            const auto d = derivative(Sij[i][j], grid, j, stencil);
            for (std::size_t c = 0; c < cells; ++c)
                out.f[i][c] -= d[c];
        }
    // Coupling sums over i + j = n with i, j >= 1.
    std::vector<VectorField> gphi(static_cast<std::size_t>(n + 1));
    for (int i = 1; i < n; ++i)
        gphi[static_cast<std::size_t>(i)] = grad_of(phi[static_cast<std::size_t>(i)], grid, stencil);
    for (int i = 1; i < n; ++i) {
        const int jj = n - i;
        const auto& gp = gphi[static_cast<std::size_t>(i)];
        const auto& Uj = U[static_cast<std::size_t>(jj)];
        for (int a = 0; a < dim; ++a)
            for (std::size_t c = 0; c < cells; ++c)
                out.f[a][c] -= Uj.rho[c] * gp[a][c];
    }
    for (int i = 0; i < dim; ++i) {
        Field flux(cells);
        for (std::size_t c = 0; c < cells; ++c) {
            double s = q[i][c];
            for (int j = 0; j < 3; ++j)
                s += 2.0 * slice.state.u[j][c] * Sij[i][j][c];
            flux[c] = s;
        }
        const auto d = derivative(flux, grid, i, stencil);
        for (std::size_t c = 0; c < cells; ++c)
            out.g[c] -= d[c];
    }
    for (std::size_t c = 0; c < cells; ++c)
        for (int a = 0; a < 3; ++a)
            out.g[c] -= 2.0 * slice.state.u[a][c] * out.f[a][c];
    for (int i = 1; i < n; ++i) {
        const int jj = n - i;
        const auto& gp = gphi[static_cast<std::size_t>(i)];
        const auto& Uj = U[static_cast<std::size_t>(jj)];
        for (int a = 0; a < dim; ++a)
            for (std::size_t c = 0; c < cells; ++c)
                out.g[c] -= (slice.state.rho[c] * Uj.u[a][c] + Uj.rho[c] * slice.state.u[a][c]) * gp[a][c];
    }
    return out;
}

double SymmetricSystem::symmetry_defect(int dim) const
{
    double d = 0.0;
    for (const auto& Ac : A)
        for (int i = 0; i < dim; ++i)
            for (int r = 0; r < 5; ++r)
                for (int s = 0; s < 5; ++s)
                    d = std::max(d, std::abs(Ac[i][r][s] - Ac[i][s][r]));
    return d;
}

SymmetricSystem assemble_symmetric_system(const BackgroundSlice& slice)
{
    const auto& st = slice.state;
    const int dim = st.grid.dim();
    const std::size_t cells = st.grid.size();
    SymmetricSystem sys;
    sys.A0.resize(cells);
    sys.A.resize(cells);
    sys.B.resize(cells);
    for (std::size_t c = 0; c < cells; ++c) {
        const double rho = st.rho[c], th = st.theta[c];
        const Vec3 u{st.u[0][c], st.u[1][c], st.u[2][c]};
        sys.A0[c] = {th / rho, rho, rho, rho, 1.5 * rho / th};
        for (int i = 0; i < 3; ++i) {
            auto& M = sys.A[c][i];
            for (auto& row : M)
                row.fill(0.0);
            M[0][0] = th / rho * u[i];
            M[0][1 + i] = th;
            M[1 + i][0] = th;
            for (int b = 0; b < 3; ++b)
                M[1 + b][1 + b] = rho * u[i];
            M[1 + i][4] = rho;
            M[4][1 + i] = rho;
            M[4][4] = 1.5 * rho / th * u[i];
        }
        double divu = 0.0;
        for (int a = 0; a < dim; ++a)
            divu += slice.grad_u[a][a][c];
        auto& B = sys.B[c];
        for (auto& row : B)
            row.fill(0.0);
        B[0][0] = th / rho * divu;
        for (int a = 0; a < dim; ++a) {
            B[0][1 + a] = th / rho * slice.grad_rho[a][c];
            B[1 + a][0] = -th * slice.grad_rho[a][c] / rho;
            B[1 + a][4] = slice.grad_rho[a][c];
            B[4][1 + a] = 1.5 * rho / th * slice.grad_theta[a][c];
        }
        for (int b = 0; b < 3; ++b)
            for (int a = 0; a < dim; ++a)
                B[1 + b][1 + a] = rho * slice.grad_u[b][a][c];
        B[4][4] = rho / th * divu;
    }
    return sys;
}

CoefficientState coefficient_rate(const CoefficientState& U, const Field& phi_n, const MacroSources& src,
                                  const BackgroundSlice& slice, const SymmetricSystem& sys, Stencil stencil)
{
    const auto& grid = slice.state.grid;
    const int dim = grid.dim();
    const std::size_t cells = grid.size();
    std::array<const Field*, 5> comp{&U.rho, &U.u[0], &U.u[1], &U.u[2], &U.theta};
    std::array<std::array<Field, 5>, 3> dU;
    for (int i = 0; i < dim; ++i)
        for (int r = 0; r < 5; ++r)
            dU[i][r] = derivative(*comp[r], grid, i, stencil);
    const auto gphi = grad_of(phi_n, grid, stencil);
    CoefficientState out = CoefficientState::zeros(cells);
    std::array<Field*, 5> oc{&out.rho, &out.u[0], &out.u[1], &out.u[2], &out.theta};
    for (std::size_t c = 0; c < cells; ++c) {
        std::array<double, 5> Uc, G{0.0, src.f[0][c], src.f[1][c], src.f[2][c],
                                     src.g[c] / (2.0 * slice.state.theta[c])};
        for (int r = 0; r < 5; ++r)
            Uc[r] = (*comp[r])[c];
        for (int r = 0; r < 5; ++r) {
            double s = G[r];
            for (int i = 0; i < dim; ++i)
                for (int q = 0; q < 5; ++q)
                    s -= sys.A[c][i][r][q] * dU[i][q][c];
            for (int q = 0; q < 5; ++q)
                s -= sys.B[c][r][q] * Uc[q];
            (*oc[r])[c] = s / sys.A0[c][r];
        }
        for (int a = 0; a < dim; ++a)
            out.u[a][c] -= gphi[a][c];
    }
    return out;
}

Field solve_phi_n(const Field& rho_n, const Field& An_minus_phi_n, const BackgroundSlice& slice,
                  const EllipticSolveOptions& elliptic)
{
    const std::size_t cells = rho_n.size();
    Field c(cells), rhs(cells);
    for (std::size_t i = 0; i < cells; ++i) {
        c[i] = std::exp(slice.state.phi[i]);
        rhs[i] = rho_n[i] - c[i] * An_minus_phi_n[i];
    }
    return solve_screened_poisson(c, rhs, slice.state.grid, elliptic);
}

namespace {

void axpy(CoefficientState& y, double a, const CoefficientState& x)
{
    for (std::size_t c = 0; c < y.rho.size(); ++c) {
        y.rho[c] += a * x.rho[c];
        y.theta[c] += a * x.theta[c];
        for (int b = 0; b < 3; ++b)
            y.u[b][c] += a * x.u[b][c];
    }
}

CoefficientState lincomb(double a, const CoefficientState& x, double b, const CoefficientState& y)
{
    CoefficientState z = x;
    for (std::size_t c = 0; c < z.rho.size(); ++c) {
        z.rho[c] = a * x.rho[c] + b * y.rho[c];
        z.theta[c] = a * x.theta[c] + b * y.theta[c];
        for (int k = 0; k < 3; ++k)
            z.u[k][c] = a * x.u[k][c] + b * y.u[k][c];
    }
    return z;
}

double coefficient_dt(const BackgroundSlice& slice, const CascadeOptions& opts)
{
    const auto& st = slice.state;
    double s = 0.0;
    for (std::size_t c = 0; c < st.rho.size(); ++c) {
        double umax = 0.0;
        for (int a = 0; a < st.grid.dim(); ++a)
            umax = std::max(umax, std::abs(st.u[a][c]));
        s = std::max(s, umax + std::sqrt(5.0 / 3.0 * st.theta[c] + 1.0));
    }
    const double kmax = opts.stencil == Stencil::spectral ? std::numbers::pi : 1.0;
    return opts.cfl * st.grid.spacing() / (s * kmax);
}

EllipticSolveOptions elliptic_for(const CascadeOptions& opts)
{
    EllipticSolveOptions e = opts.elliptic;
    e.stencil = opts.stencil;
    return e;
}

double field_norm2(const Field& f, const SpatialGrid& grid)
{
    double s = 0.0;
    for (double x : f)
        s += x * x;
    return s * grid.cell_volume();
}

/// The hierarchy F_0..F_m at one time for given hydrodynamic coordinates.
struct Hierarchy {
    BackgroundSlice slice;
    SymmetricSystem sys;
    std::vector<PhaseField> F;
    std::vector<Field> phi;
    std::vector<CoefficientState> dU;
    std::vector<MacroSources> src;
    std::vector<double> leakage;
};

class HierarchyBuilder {
public:
    HierarchyBuilder(const EulerTrajectory& bg, const VelocityGrid& vg, const CollisionConfig& cfg,
                     const CascadeOptions& opts)
        : bg_(bg), vg_(vg), cfg_(cfg), opts_(opts), elliptic_(elliptic_for(opts))
    {
    }

    Hierarchy evaluate(double t, const std::vector<CoefficientState>& U, int m) const
    {
        Hierarchy h;
        h.slice = make_slice(bg_.at(t), bg_.rate_at(t), vg_, opts_.stencil);
        h.sys = assemble_symmetric_system(h.slice);
        const std::size_t cells = h.slice.params.size();
        h.F.assign(static_cast<std::size_t>(m + 1), PhaseField{});
        h.phi.assign(static_cast<std::size_t>(m + 1), Field{});
        h.dU.assign(static_cast<std::size_t>(m + 1), CoefficientState{});
        h.src.assign(static_cast<std::size_t>(m + 1), MacroSources{});
        h.leakage.assign(static_cast<std::size_t>(m + 1), 0.0);
        h.F[0] = h.slice.mu;
        h.phi[0] = h.slice.state.phi;
        std::vector<PhaseField> dF(static_cast<std::size_t>(m + 1));
        for (int n = 1; n <= m; ++n) {
            const auto un = static_cast<std::size_t>(n);
            if (n >= 2)
                dF[un - 1] = time_derivative(t, U, h, n - 1);
            const auto S = closure_source(n, h.slice, h.F, dF, h.phi, vg_, cfg_, opts_.stencil);
            const auto micro = microscopic_part(S, h.slice, vg_, cfg_, opts_.leakage_tol);
            h.leakage[un] = micro.leakage;
            h.F[un] = hydro_part(U[un], h.slice, vg_);
            for (std::size_t q = 0; q < h.F[un].size(); ++q)
                h.F[un][q] += h.slice.sqrt_mu[q] * micro.g[q];
            std::vector<Field> phis(h.phi.begin(), h.phi.begin() + n);
            phis.emplace_back(cells, 0.0);
            const auto A = exp_taylor_coeffs(phis);
            h.phi[un] = solve_phi_n(U[un].rho, A[un], h.slice, elliptic_);
            h.src[un] = macro_sources(n, h.F[un], h.slice, U, h.phi, vg_, opts_.stencil);
            h.dU[un] = coefficient_rate(U[un], h.phi[un], h.src[un], h.slice, h.sys, opts_.stencil);
        }
        return h;
    }

private:
    /// d_t F_j from closures re-evaluated at nearby times, with the hydrodynamic
    /// coordinates advanced along their own evolution equations.
    PhaseField time_derivative(double t, const std::vector<CoefficientState>& U, const Hierarchy& h, int j) const
    {
        const double t0 = bg_.snapshots.front().time, t1 = bg_.end_time();
        // a one-sided stencil of width 2d must fit on one side of any t
        const double d = std::min(opts_.time_delta, 0.25 * (t1 - t0));
        std::vector<double> offsets, coefs;
        if (t - d >= t0 && t + d <= t1) {
            offsets = {-d, d};
            coefs = {-0.5 / d, 0.5 / d};
        } else if (t + 2 * d <= t1) {
            offsets = {0.0, d, 2 * d};
            coefs = {-1.5 / d, 2.0 / d, -0.5 / d};
        } else {
            offsets = {0.0, -d, -2 * d};
            coefs = {1.5 / d, -2.0 / d, 0.5 / d};
        }
        PhaseField out;
        for (std::size_t s = 0; s < offsets.size(); ++s) {
            std::vector<CoefficientState> Us(U.begin(), U.begin() + j + 1);
            for (int i = 1; i <= j; ++i)
                axpy(Us[static_cast<std::size_t>(i)], offsets[s], h.dU[static_cast<std::size_t>(i)]);
            const PhaseField Fj =
                offsets[s] == 0.0 ? h.F[static_cast<std::size_t>(j)] : evaluate(t + offsets[s], Us, j).F.back();
            if (out.empty())
                out.assign(Fj.size(), 0.0);
            for (std::size_t q = 0; q < Fj.size(); ++q)
                out[q] += coefs[s] * Fj[q];
        }
        return out;
    }

    const EulerTrajectory& bg_;
    const VelocityGrid& vg_;
    const CollisionConfig& cfg_;
    const CascadeOptions& opts_;
    EllipticSolveOptions elliptic_;
};

} // namespace

CoefficientSeries solve_coefficient_system(const EulerTrajectory& background, const VelocityGrid& vgrid,
                                           const SourceFunction& sources, double T, double dt,
                                           const CascadeOptions& opts)
{
    opts.validate();
    if (!(T > 0.0))
        throw InvalidArgument("solve_coefficient_system: T must be positive");
    const auto elliptic = elliptic_for(opts);
    const auto& grid = background.snapshots.front().grid;
    const std::size_t cells = grid.size();
    auto slice_at = [&](double t) { return make_slice(background.at(t), background.rate_at(t), vgrid, opts.stencil); };
    const auto first = slice_at(0.0);
    const double limit = coefficient_dt(first, opts);
    double h = dt > 0.0 ? dt : limit;
    if (h > limit / opts.cfl * (1.0 + 1e-12))
        throw NumericalError("coefficient system: CFL violation (dt above the stability limit)");
    const int steps = static_cast<int>(std::ceil(T / h - 1e-9));
    h = T / steps;
    const Field zero(cells, 0.0);
    CoefficientSeries out;
    auto rate = [&](double t, const CoefficientState& U, Field* phi_out) {
        const auto slice = slice_at(t);
        const auto sys = assemble_symmetric_system(slice);
        out.symmetry_defect = std::max(out.symmetry_defect, sys.symmetry_defect(grid.dim()));
        const auto phi = solve_phi_n(U.rho, zero, slice, elliptic);
        if (phi_out)
            *phi_out = phi;
        return coefficient_rate(U, phi, sources(t, slice), slice, sys, opts.stencil);
    };
    CoefficientState U = CoefficientState::zeros(cells);
    for (int s = 0; s <= steps; ++s) {
        const double t = s == steps ? T : s * h;
        Field phi;
        const auto k1 = rate(t, U, &phi);
        out.times.push_back(t);
        out.states.push_back(U);
        out.phi.push_back(phi);
        if (s == steps)
            break;
        CoefficientState U1 = U;
        axpy(U1, h, k1);
        CoefficientState U2 = lincomb(0.75, U, 0.25, U1);
        axpy(U2, 0.25 * h, rate(t + h, U1, nullptr));
        CoefficientState U3 = lincomb(1.0 / 3.0, U, 2.0 / 3.0, U2);
        axpy(U3, 2.0 / 3.0 * h, rate(t + 0.5 * h, U2, nullptr));
        U = std::move(U3);
    }
    return out;
}

const ExpansionSnapshot& ExpansionSet::at(double t) const
{
    for (const auto& s : snapshots)
        if (std::abs(s.time - t) <= 1e-9)
            return s;
    std::ostringstream os;
    os << "expansion has no snapshot at t = " << t;
    throw InvalidArgument(os.str());
}

ExpansionSet build_expansion(const EulerTrajectory& background, const VelocityGrid& vgrid, const CollisionConfig& cfg,
                             const CascadeOptions& opts, double T, double store_interval)
{
    opts.validate();
    cfg.validate();
    if (T < 0.0 || !(store_interval > 0.0))
        throw InvalidArgument("build_expansion: need T >= 0 and a positive store interval");
    if (T > background.end_time() * (1.0 + 1e-12))
        throw InvalidArgument("build_expansion: background trajectory ends before T");
    const int N = 2 * opts.k - 1;
    const auto& grid = background.snapshots.front().grid;
    const std::size_t cells = grid.size();
    const HierarchyBuilder builder(background, vgrid, cfg, opts);

    ExpansionSet set;
    set.k = opts.k;
    set.grid = grid;
    set.vgrid = vgrid;
    std::vector<CoefficientState> U(static_cast<std::size_t>(N + 1), CoefficientState::zeros(cells));

    double sup_U = 0.0, sup_G = 0.0;
    auto record = [&](double t, const Hierarchy& h) {
        ExpansionSnapshot snap;
        snap.time = t;
        snap.F = h.F;
        snap.phi = h.phi;
        snap.leakage = h.leakage;
        for (int n = 0; n <= N; ++n) {
            const auto un = static_cast<std::size_t>(n);
            if (n == 0) {
                snap.rho.push_back(h.slice.state.rho);
                snap.u.push_back(h.slice.state.u);
                snap.theta.push_back(h.slice.state.theta);
            } else {
                snap.rho.push_back(U[un].rho);
                snap.u.push_back(U[un].u);
                snap.theta.push_back(U[un].theta);
            }
            set.max_leakage = std::max(set.max_leakage, h.leakage[un]);
        }
        set.snapshots.push_back(std::move(snap));
        // Growth monitor for order 1.
        const auto& U1 = U[1];
        double u2 = field_norm2(U1.rho, grid) + field_norm2(U1.theta, grid);
        for (int b = 0; b < 3; ++b)
            u2 += field_norm2(U1.u[b], grid);
        const auto gphi = grad_of(h.phi[1], grid, opts.stencil);
        double v2 = 0.0;
        for (int a = 0; a < 3; ++a)
            v2 += field_norm2(gphi[a], grid);
        sup_U = std::max(sup_U, std::sqrt(u2) + std::sqrt(v2) + std::sqrt(field_norm2(h.phi[1], grid)));
        double g2 = 0.0;
        for (std::size_t c = 0; c < cells; ++c) {
            const double rho = h.slice.state.rho[c];
            for (int a = 0; a < 3; ++a)
                g2 += std::pow(h.src[1].f[a][c] / rho, 2);
            g2 += std::pow(h.src[1].g[c] / (3.0 * rho), 2);
        }
        sup_G = std::max(sup_G, std::sqrt(g2 * grid.cell_volume()));
    };

    if (T == 0.0) {
        const auto h = builder.evaluate(0.0, U, N);
        set.symmetry_defect = h.sys.symmetry_defect(grid.dim());
        record(0.0, h);
        return set;
    }
    const auto first = make_slice(background.at(0.0), background.rate_at(0.0), vgrid, opts.stencil);
    const double dt_max = coefficient_dt(first, opts);
    const int intervals = static_cast<int>(std::ceil(T / store_interval - 1e-9));
    double t = 0.0;
    for (int iv = 0; iv < intervals; ++iv) {
        const double t_end = iv + 1 == intervals ? T : (iv + 1) * store_interval;
        const int sub = static_cast<int>(std::ceil((t_end - t) / dt_max - 1e-9));
        const double h = (t_end - t) / sub;
        for (int s = 0; s < sub; ++s) {
            const auto H1 = builder.evaluate(t, U, N);
            set.symmetry_defect = std::max(set.symmetry_defect, H1.sys.symmetry_defect(grid.dim()));
            if (s == 0)
                record(t, H1);
            std::vector<CoefficientState> U1 = U, U2(U.size()), U3(U.size());
            for (int n = 1; n <= N; ++n)
                axpy(U1[static_cast<std::size_t>(n)], h, H1.dU[static_cast<std::size_t>(n)]);
            const auto H2 = builder.evaluate(t + h, U1, N);
            for (int n = 1; n <= N; ++n) {
                const auto un = static_cast<std::size_t>(n);
                U2[un] = lincomb(0.75, U[un], 0.25, U1[un]);
                axpy(U2[un], 0.25 * h, H2.dU[un]);
            }
            U2[0] = U[0];
            const auto H3 = builder.evaluate(t + 0.5 * h, U2, N);
            for (int n = 1; n <= N; ++n) {
                const auto un = static_cast<std::size_t>(n);
                U3[un] = lincomb(1.0 / 3.0, U[un], 2.0 / 3.0, U2[un]);
                axpy(U3[un], 2.0 / 3.0 * h, H3.dU[un]);
            }
            U3[0] = U[0];
            U = std::move(U3);
            t = s + 1 == sub ? t_end : t + h;
            ++set.steps;
        }
    }
    const auto last = builder.evaluate(T, U, N);
    record(T, last);
    set.growth_ratio = sup_G > 0.0 ? sup_U / (T * sup_G) : 0.0;
    return set;
}

std::pair<PhaseField, Field> assemble_expansion(const ExpansionSnapshot& snap, double epsilon)
{
    if (snap.F.empty())
        throw InvalidArgument("assemble_expansion: empty snapshot");
    PhaseField F(snap.F[0].size(), 0.0);
    Field phi(snap.phi[0].size(), 0.0);
    double pw = 1.0;
    for (std::size_t i = 0; i < snap.F.size(); ++i, pw *= epsilon) {
        for (std::size_t q = 0; q < F.size(); ++q)
            F[q] += pw * snap.F[i][q];
        for (std::size_t c = 0; c < phi.size(); ++c)
            phi[c] += pw * snap.phi[i][c];
    }
    return {F, phi};
}

std::string expansion_binary(const ExpansionSet& set)
{
    std::string out;
    for (const auto& s : set.snapshots) {
        append_doubles(out, &s.time, 1);
        for (std::size_t i = 0; i < s.F.size(); ++i) {
            append_doubles(out, s.F[i].data(), s.F[i].size());
            append_doubles(out, s.phi[i].data(), s.phi[i].size());
            append_doubles(out, s.rho[i].data(), s.rho[i].size());
            for (int a = 0; a < 3; ++a)
                append_doubles(out, s.u[i][a].data(), s.u[i][a].size());
            append_doubles(out, s.theta[i].data(), s.theta[i].size());
            append_doubles(out, &s.leakage[i], 1);
        }
    }
    return out;
}

std::string expansion_manifest(const ExpansionSet& set, const std::string& binary_checksum)
{
    nlohmann::ordered_json j;
    j["kind"] = "expansion_set";
    j["k"] = set.k;
    j["orders"] = 2 * set.k;
    j["spatial_grid"] = {{"dim", set.grid.dim()}, {"cells_per_axis", set.grid.cells_per_axis()},
                         {"length", set.grid.length()}};
    j["velocity_grid"] = {{"nodes_per_axis", set.vgrid.nodes_per_axis()}, {"v_max", set.vgrid.v_max()}};
    std::vector<double> times;
    for (const auto& s : set.snapshots)
        times.push_back(s.time);
    j["times"] = times;
    j["layout"] = "per snapshot: time, then per order i: F_i (cells x nodes), phi_i, rho_i, u_i[3], theta_i, leakage_i";
    j["background_checksum"] = set.background_checksum;
    j["binary_checksum"] = binary_checksum;
    j["symmetry_defect"] = set.symmetry_defect;
    j["growth_ratio"] = set.growth_ratio;
    j["max_leakage"] = set.max_leakage;
    j["steps"] = set.steps;
    return j.dump(2) + "\n";
}

ExpansionSet expansion_from_files(const std::string& manifest_json, const std::string& binary)
{
    const auto j = nlohmann::json::parse(manifest_json);
    if (j.at("binary_checksum").get<std::string>() != fnv1a_hex(binary))
        throw InvalidArgument("expansion binary does not match its manifest checksum");
    ExpansionSet set;
    set.k = j.at("k").get<int>();
    const auto& g = j.at("spatial_grid");
    set.grid = SpatialGrid(g.at("dim").get<int>(), g.at("cells_per_axis").get<int>(), g.at("length").get<double>());
    const auto& v = j.at("velocity_grid");
    set.vgrid = VelocityGrid(v.at("nodes_per_axis").get<int>(), v.at("v_max").get<double>());
    set.background_checksum = j.at("background_checksum").get<std::string>();
    set.symmetry_defect = j.at("symmetry_defect").get<double>();
    set.growth_ratio = j.at("growth_ratio").get<double>();
    set.max_leakage = j.at("max_leakage").get<double>();
    set.steps = j.at("steps").get<int>();
    const auto times = j.at("times").get<std::vector<double>>();
    const std::size_t cells = set.grid.size(), nv = set.vgrid.size();
    const int orders = 2 * set.k;
    DoubleReader r(binary);
    for (std::size_t s = 0; s < times.size(); ++s) {
        ExpansionSnapshot snap;
        snap.time = r.next();
        for (int i = 0; i < orders; ++i) {
            PhaseField F(cells * nv);
            r.read(F.data(), F.size());
            Field phi(cells), rho(cells), theta(cells);
            VectorField u;
            r.read(phi.data(), cells);
            r.read(rho.data(), cells);
            for (int a = 0; a < 3; ++a) {
                u[a].resize(cells);
                r.read(u[a].data(), cells);
            }
            r.read(theta.data(), cells);
            snap.F.push_back(std::move(F));
            snap.phi.push_back(std::move(phi));
            snap.rho.push_back(std::move(rho));
            snap.u.push_back(std::move(u));
            snap.theta.push_back(std::move(theta));
            snap.leakage.push_back(r.next());
        }
        set.snapshots.push_back(std::move(snap));
    }
    if (!r.done())
        throw InvalidArgument("expansion binary has trailing bytes");
    return set;
}

} // namespace ivpb
