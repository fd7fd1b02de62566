#include "ivpb/io.hpp"
#include "ivpb/kinetic.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace ivpb;

namespace {

const SpatialGrid grid(1, 16, 2.0 * std::numbers::pi);
const VelocityGrid vgrid(12, 6.0);

PhaseField smooth_initial()
{
    PhaseField F(grid.size() * vgrid.size());
    for (std::size_t c = 0; c < grid.size(); ++c) {
        const double x = grid.coordinate(c)[0];
        const LocalMaxwellianParams p{1.0 + 0.3 * std::sin(x), {0.4 * std::cos(x), 0.1, 0.0}, 1.0 + 0.1 * std::sin(2 * x)};
        const auto m = eval_local_maxwellian(p, vgrid);
        std::copy(m.begin(), m.end(), F.begin() + static_cast<std::ptrdiff_t>(c * vgrid.size()));
    }
    return F;
}

double l2_diff(const PhaseField& a, const PhaseField& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

} // namespace

TEST_CASE("global Maxwellian is a kinetic equilibrium")
{
    const KineticOptions ko;
    const auto mu = eval_global_maxwellian(GlobalMaxwellian{1.0}, vgrid);
    PhaseField F(grid.size() * vgrid.size());
    for (std::size_t c = 0; c < grid.size(); ++c)
        std::copy(mu.begin(), mu.end(), F.begin() + static_cast<std::ptrdiff_t>(c * vgrid.size()));
    const auto s = make_kinetic_state(grid, vgrid, F, 0.1, 0.0, ko.elliptic);
    // phi = log of the discrete density, which the truncated grid puts slightly off 1
    const double rho = integrate_velocity(mu, vgrid);
    for (double p : s.phi)
        CHECK(p == doctest::Approx(std::log(rho)).scale(1.0).epsilon(1e-12));
    StepLedger L;
    const auto next = step_vpb(s, default_kinetic_dt(s, ko), CollisionConfig{}, ko, &L);
    double d = 0.0;
    for (std::size_t i = 0; i < F.size(); ++i)
        d = std::max(d, std::abs(next.F[i] - F[i]));
    CHECK(d < 1e-12);
    CHECK(L.mass_defect < 1e-13);
}

TEST_CASE("steps conserve mass, momentum and energy against the force budget")
{
    const KineticOptions ko;
    for (double eps : {1.0, 0.01}) {
        auto s = make_kinetic_state(grid, vgrid, smooth_initial(), eps, 0.0, ko.elliptic);
        for (int i = 0; i < 5; ++i) {
            StepLedger L;
            s = step_vpb(s, default_kinetic_dt(s, ko), CollisionConfig{}, ko, &L);
            CHECK(L.mass_defect < 1e-12);
            CHECK(L.momentum_defect < 1e-10);
            CHECK(L.energy_defect < 1e-10);
            CHECK(L.clipped_cells == 0);
            CHECK(L.max_projection < 1e-4);
        }
        for (double x : s.F)
            REQUIRE(x >= 0.0);
    }
}

TEST_CASE("hard-sphere collision steps conserve moments")
{
    const SpatialGrid g(1, 4, 2.0 * std::numbers::pi);
    const VelocityGrid v(10, 6.0);
    PhaseField F(g.size() * v.size());
    for (std::size_t c = 0; c < g.size(); ++c) {
        const auto m = eval_local_maxwellian({1.0 + 0.1 * c, {0.3, 0.0, 0.0}, 0.9}, v);
        std::copy(m.begin(), m.end(), F.begin() + static_cast<std::ptrdiff_t>(c * v.size()));
    }
    CollisionConfig hs;
    hs.mode = CollisionMode::hard_sphere;
    const KineticOptions ko;
    const auto s = make_kinetic_state(g, v, F, 0.5, 0.0, ko.elliptic);
    StepLedger L;
    step_vpb(s, default_kinetic_dt(s, ko), hs, ko, &L);
    CHECK(L.mass_defect < 1e-12);
    CHECK(L.momentum_defect < 1e-10);
    CHECK(L.energy_defect < 1e-10);
}

TEST_CASE("entropy does not increase under BGK relaxation of a bimodal state")
{
    const SpatialGrid g(1, 4, 1.0);
    PhaseField B(g.size() * vgrid.size());
    const auto m1 = eval_local_maxwellian({0.5, {1.5, 0, 0}, 0.6}, vgrid);
    const auto m2 = eval_local_maxwellian({0.5, {-1.5, 0, 0}, 0.6}, vgrid);
    for (std::size_t c = 0; c < g.size(); ++c)
        for (std::size_t j = 0; j < vgrid.size(); ++j)
            B[c * vgrid.size() + j] = m1[j] + m2[j];
    const KineticOptions ko;
    auto s = make_kinetic_state(g, vgrid, B, 1.0, 0.0, ko.elliptic);
    double H = entropy(s.F, g, vgrid);
    for (int i = 0; i < 30; ++i) {
        StepLedger L;
        s = step_vpb(s, 0.01, CollisionConfig{}, ko, &L);
        CHECK(L.entropy <= H + 1e-12 * std::abs(H));
        H = L.entropy;
    }
}

TEST_CASE("splitting error shrinks at second order under dt halving")
{
    const KineticOptions ko;
    const auto s = make_kinetic_state(grid, vgrid, smooth_initial(), 0.1, 0.0, ko.elliptic);
    std::vector<PhaseField> r;
    for (int h = 0; h < 3; ++h)
        r.push_back(run_vpb(s, 0.2, 0.02 / (1 << h), 1000, CollisionConfig{}, ko).snapshots.back().F);
    CHECK(l2_diff(r[0], r[1]) / l2_diff(r[1], r[2]) >= 3.0);
}

TEST_CASE("runs: storage, restart, zero horizon, CFL guard and binary round trip")
{
    const KineticOptions ko;
    const auto s = make_kinetic_state(grid, vgrid, smooth_initial(), 0.2, 0.0, ko.elliptic);
    const double dt = default_kinetic_dt(s, ko);
    CHECK(dt <= 0.5 * 0.2);
    CHECK(dt == doctest::Approx(0.5 * transport_dt_limit(grid, vgrid)));
    CHECK_THROWS_AS(step_vpb(s, 1.01 * transport_dt_limit(grid, vgrid), CollisionConfig{}, ko), InvalidArgument);

    const auto zero = run_vpb(s, 0.0, 0.0, 1, CollisionConfig{}, ko);
    REQUIRE(zero.snapshots.size() == 1);
    CHECK(zero.snapshots.front().F == s.F);

    const auto full = run_vpb(s, 0.4, 0.05, 4, CollisionConfig{}, ko);
    REQUIRE(full.snapshots.size() == 3);
    CHECK(full.snapshots[1].time == doctest::Approx(0.2));
    CHECK(full.valid);
    CHECK(full.clipped_cells == 0);
    const auto tail = run_vpb(full.snapshots[1], 0.2, 0.05, 4, CollisionConfig{}, ko);
    CHECK(tail.snapshots.back().F == full.snapshots.back().F);

    const auto bin = kinetic_binary(full);
    const auto back = kinetic_snapshots_from_files(kinetic_manifest(full, fnv1a_hex(bin)), bin);
    REQUIRE(back.size() == full.snapshots.size());
    CHECK(back.back().F == full.snapshots.back().F);
    CHECK(back.back().phi == full.snapshots.back().phi);
    CHECK(back.back().time == full.snapshots.back().time);
}

TEST_CASE("well-prepared data and densities")
{
    EllipticSolveOptions e;
    e.stencil = Stencil::spectral;
    const auto fluid = init_irrotational(0.05, {{1, 0, 0}}, 1.0, grid, 1.0, e);
    const auto s = well_prepared_state(fluid, vgrid, 0.1, e);
    const auto rho = kinetic_density(s.F, grid, vgrid);
    for (std::size_t c = 0; c < grid.size(); ++c) {
        CHECK(rho[c] == doctest::Approx(fluid.rho[c]).epsilon(1e-6));
        CHECK(s.phi[c] == doctest::Approx(fluid.phi[c]).scale(1.0).epsilon(1e-6));
    }
    CHECK(total_mass(s.F, grid, vgrid) == doctest::Approx(integrate_space(fluid.rho, grid)).epsilon(1e-6));
    KineticOptions bad;
    bad.cfl = 2.0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}
