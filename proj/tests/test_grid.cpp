#include "ivpb/grid.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace ivpb;

TEST_CASE("spatial grid indexing is periodic and invertible")
{
    const SpatialGrid g(2, 6, 3.0);
    CHECK(g.size() == 36);
    CHECK(g.spacing() == doctest::Approx(0.5));
    CHECK(g.cell_volume() == doctest::Approx(0.25));
    for (std::size_t c = 0; c < g.size(); ++c) {
        CHECK(g.flat(g.index(c)) == c);
        CHECK(g.shifted(g.shifted(c, 0, 5), 0, -5) == c);
        CHECK(g.shifted(c, 1, 6) == c);
    }
    CHECK(g.shifted(g.flat({5, 0, 0}), 0, 1) == g.flat({0, 0, 0}));
    CHECK_THROWS_AS(SpatialGrid(4, 8, 1.0), InvalidArgument);
    CHECK_THROWS_AS(SpatialGrid(1, 8, -1.0), InvalidArgument);
}

TEST_CASE("velocity grid is mirror symmetric with midpoint nodes")
{
    const VelocityGrid v(8, 4.0);
    CHECK(v.size() == 512);
    CHECK(v.weight() == doctest::Approx(1.0));
    for (std::size_t j = 0; j < v.size(); ++j) {
        const auto& a = v.node(j);
        const auto& b = v.node(v.mirror(j));
        for (int k = 0; k < 3; ++k)
            CHECK(a[k] == -b[k]);
    }
    CHECK(v.axis_node(0) == doctest::Approx(-3.5));
    CHECK(v.on_boundary(v.flat(0, 3, 4)));
    CHECK_FALSE(v.on_boundary(v.flat(1, 3, 4)));
    CHECK_THROWS_AS(VelocityGrid(7, 4.0), InvalidArgument);
}

TEST_CASE("velocity quadrature integrates a Gaussian")
{
    const VelocityGrid v(24, 8.0);
    std::vector<double> f(v.size());
    for (std::size_t j = 0; j < v.size(); ++j)
        f[j] = std::exp(-0.5 * norm2(v.node(j)));
    CHECK(integrate_velocity(f, v) == doctest::Approx(std::pow(2.0 * std::numbers::pi, 1.5)).epsilon(1e-10));
}

TEST_CASE("38-point Lebedev rule integrates spherical monomials up to degree 9")
{
    const auto rule = lebedev38();
    const double four_pi = 4.0 * std::numbers::pi;
    auto integrate = [&](auto f) {
        double s = 0.0;
        for (std::size_t i = 0; i < rule.directions.size(); ++i)
            s += rule.weights[i] * f(rule.directions[i]);
        return s;
    };
    CHECK(rule.directions.size() == 38);
    CHECK(integrate([](const Vec3&) { return 1.0; }) == doctest::Approx(four_pi).epsilon(1e-14));
    CHECK(integrate([](const Vec3& d) { return d[0] * d[0]; }) == doctest::Approx(four_pi / 3).epsilon(1e-14));
    CHECK(integrate([](const Vec3& d) { return std::pow(d[2], 4); }) == doctest::Approx(four_pi / 5).epsilon(1e-13));
    CHECK(integrate([](const Vec3& d) { return d[0] * d[0] * d[1] * d[1]; }) ==
          doctest::Approx(four_pi / 15).epsilon(1e-13));
    // x^4 y^2 z^2 over the sphere: 4 pi * 3 / 945
    CHECK(integrate([](const Vec3& d) { return std::pow(d[0], 4) * d[1] * d[1] * d[2] * d[2]; }) ==
          doctest::Approx(four_pi * 3.0 / 945.0).epsilon(1e-12));
    CHECK(integrate([](const Vec3& d) { return std::pow(d[0], 3) * d[1]; }) == doctest::Approx(0.0));

    const auto folded = rule.folded();
    CHECK(folded.directions.size() == 19);
    double total = 0.0;
    for (double w : folded.weights)
        total += w;
    CHECK(total == doctest::Approx(four_pi));
    CHECK_THROWS_AS(angular_rule("gauss7"), InvalidArgument);
}
