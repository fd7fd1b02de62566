#include "ivpb/cascade.hpp"
#include "ivpb/io.hpp"
#include "ivpb/kinetic.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace ivpb;

namespace {

struct Setup {
    EulerTrajectory background;
    VelocityGrid vgrid{12, 6.0};
};

Setup make_setup(double T)
{
    const SpatialGrid fine(1, 64, 2.0 * std::numbers::pi), coarse(1, 16, 2.0 * std::numbers::pi);
    EulerOptions eo;
    eo.muscl = true;
    const auto init = init_irrotational(0.05, {{1, 0, 0}}, 1.0, fine, 1.0, eo.elliptic);
    Setup s;
    EllipticSolveOptions sp;
    sp.stencil = Stencil::spectral;
    s.background = run_euler(init, T, 0.0, 2, eo).sample(coarse, Stencil::spectral, sp);
    return s;
}

double max_abs(const std::vector<double>& v)
{
    double m = 0.0;
    for (double x : v)
        m = std::max(m, std::abs(x));
    return m;
}

} // namespace

TEST_CASE("exponential Taylor coefficients match closed forms")
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::vector<Field> phi(4, Field(10));
    for (auto& p : phi)
        for (auto& x : p)
            x = U(rng);
    const auto A = exp_taylor_coeffs(phi);
    for (std::size_t c = 0; c < 10; ++c) {
        const double p1 = phi[1][c], p2 = phi[2][c], p3 = phi[3][c];
        CHECK(A[0][c] == doctest::Approx(1.0));
        CHECK(A[1][c] == doctest::Approx(p1).epsilon(1e-13));
        CHECK(A[2][c] == doctest::Approx(p2 + 0.5 * p1 * p1).epsilon(1e-13));
        CHECK(A[3][c] == doctest::Approx(p3 + p1 * p2 + p1 * p1 * p1 / 6.0).epsilon(1e-13));
    }
    for (int order = 1; order <= 3; ++order) {
        const double r1 = max_abs(taylor_remainder(phi, 0.02, order));
        const double r2 = max_abs(taylor_remainder(phi, 0.01, order));
        CHECK(std::log2(r1 / r2) == doctest::Approx(order + 1).epsilon(0.1));
    }
    CHECK_THROWS_AS(taylor_remainder(phi, 0.0, 1), InvalidArgument);
}

TEST_CASE("hydro_part and microscopic_part on a smooth background")
{
    const auto s = make_setup(0.02);
    const auto& st = s.background.snapshots.front();
    const auto slice = make_slice(st, s.background.rate_at(0.0), s.vgrid, Stencil::spectral);
    const std::size_t cells = st.grid.size(), nv = s.vgrid.size();

    auto U = CoefficientState::zeros(cells);
    for (std::size_t c = 0; c < cells; ++c) {
        U.rho[c] = 0.1 * std::cos(st.grid.coordinate(c)[0]);
        U.u[0][c] = 0.05;
        U.theta[c] = -0.02;
    }
    const auto Fh = hydro_part(U, slice, s.vgrid);
    for (std::size_t c = 0; c < cells; c += 5) {
        std::vector<double> g(nv);
        for (std::size_t j = 0; j < nv; ++j)
            g[j] = Fh[c * nv + j] / slice.sqrt_mu[c * nv + j];
        const auto hc = hydro_coordinates(g, ChiBasis(slice.params[c], s.vgrid), s.vgrid);
        CHECK(hc.rho == doctest::Approx(U.rho[c]).scale(1.0).epsilon(1e-5));
        CHECK(hc.u[0] == doctest::Approx(0.05).epsilon(1e-5));
        CHECK(hc.theta == doctest::Approx(-0.02).epsilon(1e-5));
    }

    // purely microscopic source: odd third moment in v_1 with the hydro part removed
    PhaseField S(cells * nv);
    for (std::size_t c = 0; c < cells; ++c) {
        std::vector<double> g(nv);
        for (std::size_t j = 0; j < nv; ++j)
            g[j] = slice.sqrt_mu[c * nv + j] * std::pow(s.vgrid.node(j)[0] - slice.params[c].u[0], 3);
        const auto split = project_hydro(g, ChiBasis(slice.params[c], s.vgrid), s.vgrid);
        std::copy(split.residual.begin(), split.residual.end(), S.begin() + static_cast<std::ptrdiff_t>(c * nv));
    }
    const CollisionConfig bgk;
    const auto micro = microscopic_part(S, slice, s.vgrid, bgk, 1e-3);
    CHECK(micro.leakage < 1e-10);
    for (std::size_t i = 0; i < S.size(); i += 101)
        CHECK(micro.g[i] == doctest::Approx(S[i] / bgk.bgk_rate).scale(1.0).epsilon(1e-8));

    PhaseField H(cells * nv);
    for (std::size_t i = 0; i < H.size(); ++i)
        H[i] = Fh[i];
    CHECK_THROWS_AS(microscopic_part(H, slice, s.vgrid, bgk, 1e-3), NumericalError);
}

TEST_CASE("coefficient system: symmetry and zero sources stay zero")
{
    const auto s = make_setup(0.1);
    const auto& st = s.background.snapshots.back();
    const auto slice = make_slice(st, s.background.rate_at(st.time), s.vgrid, Stencil::spectral);
    CHECK(assemble_symmetric_system(slice).symmetry_defect(1) == 0.0);

    CascadeOptions o;
    const SourceFunction zero = [](double, const BackgroundSlice& sl) {
        MacroSources m;
        const std::size_t n = sl.state.rho.size();
        for (auto& f : m.f)
            f.assign(n, 0.0);
        m.g.assign(n, 0.0);
        return m;
    };
    const auto series = solve_coefficient_system(s.background, s.vgrid, zero, 0.1, 0.0, o);
    CHECK(series.symmetry_defect == 0.0);
    for (const auto& U : series.states) {
        CHECK(max_abs(U.rho) == 0.0);
        CHECK(max_abs(U.u[0]) == 0.0);
        CHECK(max_abs(U.theta) == 0.0);
    }
    for (const auto& p : series.phi)
        CHECK(max_abs(p) == 0.0);
}

TEST_CASE("k = 1 expansion: structure, leading order and binary round trip")
{
    const auto s = make_setup(0.1);
    CascadeOptions o;
    const CollisionConfig bgk;
    const auto set = build_expansion(s.background, s.vgrid, bgk, o, 0.1, 0.05);
    REQUIRE(set.snapshots.size() == 3);
    CHECK(set.snapshots[1].time == doctest::Approx(0.05));
    CHECK(set.at(0.1).F.size() == 2);
    CHECK(set.max_leakage < 1e-3);
    CHECK(set.symmetry_defect == 0.0);
    CHECK(std::isfinite(set.growth_ratio));

    // zero hydrodynamic data at t = 0
    const auto& s0 = set.snapshots.front();
    CHECK(max_abs(s0.rho[1]) == 0.0);
    CHECK(max_abs(s0.phi[1]) == 0.0);

    // at eps = 0 the truncated expansion is the local Maxwellian of the background
    const auto& last = set.snapshots.back();
    const auto F = assemble_expansion(last, 0.0).first;
    const auto mu = local_maxwellian_field(s.background.at(last.time), s.vgrid);
    double d = 0.0;
    for (std::size_t i = 0; i < F.size(); ++i)
        d = std::max(d, std::abs(F[i] - mu[i]));
    CHECK(d < 1e-12);

    // first order at eps: F0 + eps F1
    const auto F1 = assemble_expansion(last, 0.1).first;
    for (std::size_t i = 0; i < F1.size(); i += 97)
        CHECK(F1[i] == doctest::Approx(last.F[0][i] + 0.1 * last.F[1][i]).scale(1.0).epsilon(1e-14));

    const auto bin = expansion_binary(set);
    const auto back = expansion_from_files(expansion_manifest(set, fnv1a_hex(bin)), bin);
    CHECK(back.k == 1);
    CHECK(back.snapshots.size() == set.snapshots.size());
    CHECK(expansion_binary(back) == bin);
    CHECK_THROWS_AS(expansion_from_files(expansion_manifest(set, "0000000000000000"), bin), InvalidArgument);

    // deterministic rebuild
    const auto again = build_expansion(s.background, s.vgrid, bgk, o, 0.1, 0.05);
    CHECK(expansion_binary(again) == bin);
}

TEST_CASE("k = 2 expansion over a short horizon")
{
    const auto s = make_setup(0.02);
    CascadeOptions o;
    o.k = 2;
    const auto set = build_expansion(s.background, s.vgrid, CollisionConfig{}, o, 0.02, 0.01);
    REQUIRE(set.snapshots.size() == 3);
    CHECK(set.snapshots.back().F.size() == 4);
    CHECK(set.max_leakage < 1e-3);
    for (const auto& F : set.snapshots.back().F)
        for (double x : F)
            REQUIRE(std::isfinite(x));
}
