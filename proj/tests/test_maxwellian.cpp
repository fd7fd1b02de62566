#include "ivpb/maxwellian.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace ivpb;

TEST_CASE("local Maxwellian carries its parameters as moments")
{
    const VelocityGrid v(24, 8.0);
    const LocalMaxwellianParams p{1.3, {0.4, -0.2, 0.1}, 0.8};
    const auto mu = eval_local_maxwellian(p, v);
    const auto m = moments(mu, v);
    CHECK(m.mass == doctest::Approx(1.3).epsilon(1e-10));
    for (int a = 0; a < 3; ++a)
        CHECK(m.momentum[a] == doctest::Approx(1.3 * p.u[a]).epsilon(1e-10));
    CHECK(m.energy == doctest::Approx(1.3 * (norm2(p.u) + 3 * 0.8)).epsilon(1e-10));
    const auto q = maxwellian_params(m);
    CHECK(q.rho == doctest::Approx(1.3).epsilon(1e-10));
    CHECK(q.theta == doctest::Approx(0.8).epsilon(1e-9));
    CHECK(q.u[1] == doctest::Approx(-0.2).epsilon(1e-10));
}

TEST_CASE("chi basis is orthonormal and the projection is idempotent")
{
    const VelocityGrid v(20, 8.0);
    const LocalMaxwellianParams p{0.9, {0.3, 0.0, -0.2}, 1.1};
    const ChiBasis b(p, v);
    CHECK(b.gram_defect() < 1e-8);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-1, 1);
    std::vector<double> g(v.size());
    for (std::size_t j = 0; j < g.size(); ++j)
        g[j] = b.sqrt_mu()[j] * U(rng);
    const auto s1 = project_hydro(g, b, v);
    const auto s2 = project_hydro(s1.Pg, b, v);
    double d = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j)
        d = std::max(d, std::abs(s2.Pg[j] - s1.Pg[j]));
    CHECK(d < 1e-12);
    for (int i = 0; i < 5; ++i)
        CHECK(std::abs(inner(s1.residual, b.chi(i), v)) < 1e-12);
}

TEST_CASE("hydro coordinates invert hydro_field")
{
    const VelocityGrid v(20, 8.0);
    const LocalMaxwellianParams p{1.2, {0.1, 0.2, 0.0}, 0.9};
    const ChiBasis b(p, v);
    const HydroCoordinates hc{0.3, {-0.1, 0.05, 0.2}, 0.07};
    const auto g = hydro_field(hc, b);
    const auto back = hydro_coordinates(g, b, v);
    CHECK(back.rho == doctest::Approx(0.3).epsilon(1e-10));
    CHECK(back.u[2] == doctest::Approx(0.2).epsilon(1e-10));
    CHECK(back.theta == doctest::Approx(0.07).epsilon(1e-10));
}

TEST_CASE("global Maxwellian selection and weight preconditions")
{
    const std::vector<double> theta{0.9, 1.0, 1.2};
    const auto gm = select_theta_M(theta);
    CHECK(gm.theta_M >= 0.6);
    CHECK(gm.theta_M <= 0.9);
    CHECK(gm.theta_M == doctest::Approx(0.75));
    CHECK_THROWS_AS(select_theta_M(std::vector<double>{0.5, 1.2}), InvalidArgument);
    CHECK_THROWS_WITH_AS(WeightConfig{2.0}.validate(), doctest::Contains("β ≥ 7/2 required"), InvalidArgument);
    CHECK_NOTHROW(WeightConfig{3.5}.validate());
}
