#include "ivpb/poisson.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace ivpb;

namespace {

std::vector<double> mode(const SpatialGrid& g, int m)
{
    std::vector<double> f(g.size());
    for (std::size_t c = 0; c < g.size(); ++c)
        f[c] = std::sin(2.0 * std::numbers::pi * m * g.coordinate(c)[0] / g.length());
    return f;
}

} // namespace

TEST_CASE("Laplacian symbols on a Fourier mode")
{
    const SpatialGrid g(1, 32, 2.0 * std::numbers::pi);
    const auto f = mode(g, 3);
    const auto ls = laplacian(f, g, Stencil::spectral);
    const auto l2 = laplacian(f, g, Stencil::second_order);
    const double h = g.spacing();
    const double sym2 = 4.0 / (h * h) * std::pow(std::sin(3.0 * h / 2.0), 2);
    for (std::size_t c = 0; c < g.size(); ++c) {
        CHECK(ls[c] == doctest::Approx(-9.0 * f[c]).epsilon(1e-12).scale(1.0));
        CHECK(l2[c] == doctest::Approx(-sym2 * f[c]).epsilon(1e-12).scale(1.0));
    }
    const auto d = derivative(f, g, 0, Stencil::spectral);
    for (std::size_t c = 0; c < g.size(); ++c)
        CHECK(d[c] == doctest::Approx(3.0 * std::cos(3.0 * g.coordinate(c)[0])).scale(1.0));
}

TEST_CASE("nonlinear Poisson recovers a manufactured solution in 2D")
{
    const SpatialGrid g(2, 24, 2.0 * std::numbers::pi);
    for (Stencil st : {Stencil::spectral, Stencil::second_order}) {
        EllipticSolveOptions o;
        o.stencil = st;
        std::vector<double> exact(g.size());
        for (std::size_t c = 0; c < g.size(); ++c) {
            const Vec3 x = g.coordinate(c);
            exact[c] = 0.2 * std::cos(x[0]) * std::sin(x[1] + 0.2);
        }
        const auto lap = laplacian(exact, g, st);
        std::vector<double> rho(g.size());
        for (std::size_t c = 0; c < g.size(); ++c)
            rho[c] = std::exp(exact[c]) - lap[c];
        NewtonReport rep;
        const auto phi = solve_nonlinear_poisson(rho, g, o, &rep);
        for (std::size_t c = 0; c < g.size(); ++c)
            CHECK(phi[c] == doctest::Approx(exact[c]).scale(1.0).epsilon(1e-10));
        CHECK(rep.iterations < 10);
        double res = 0.0;
        for (double r : poisson_residual(phi, rho, g, st))
            res = std::max(res, std::abs(r));
        CHECK(res < 1e-10);
    }
}

TEST_CASE("Poisson solution is monotone in the density")
{
    const SpatialGrid g(1, 32, 6.0);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::vector<double> r1(g.size()), r2(g.size());
    for (std::size_t c = 0; c < g.size(); ++c) {
        r1[c] = 0.7 + 0.5 * U(rng);
        r2[c] = r1[c] + 0.3 * U(rng);
    }
    const EllipticSolveOptions o;
    const auto p1 = solve_nonlinear_poisson(r1, g, o), p2 = solve_nonlinear_poisson(r2, g, o);
    for (std::size_t c = 0; c < g.size(); ++c)
        CHECK(p2[c] >= p1[c] - 1e-12);
    const std::vector<double> one(g.size(), 1.0);
    for (double x : solve_nonlinear_poisson(one, g, o))
        CHECK(x == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
}

TEST_CASE("screened Poisson solve with variable coefficient")
{
    const SpatialGrid g(1, 64, 2.0 * std::numbers::pi);
    std::vector<double> c(g.size()), u(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = g.coordinate(i)[0];
        c[i] = 1.0 + 0.4 * std::cos(x);
        u[i] = std::sin(2.0 * x) + 0.3;
    }
    EllipticSolveOptions o;
    o.stencil = Stencil::spectral;
    const auto lap = laplacian(u, g, o.stencil);
    std::vector<double> rhs(g.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        rhs[i] = c[i] * u[i] - lap[i];
    const auto sol = solve_screened_poisson(c, rhs, g, o);
    for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(sol[i] == doctest::Approx(u[i]).epsilon(1e-10));
}

TEST_CASE("Lyapunov density is accurate near zero and bracketed")
{
    CHECK(lyapunov_density(0.0) == 0.0);
    CHECK(lyapunov_density(1e-6) == doctest::Approx(0.5e-12).epsilon(1e-8));
    CHECK(lyapunov_density(1.0) == doctest::Approx(1.0).epsilon(1e-14));
    const double L6 = std::log(6.0);
    for (int i = -100; i <= 100; ++i) {
        const double x = L6 * i / 100.0;
        CHECK(lyapunov_density(x) <= 3.0 * x * x);
        CHECK(lyapunov_density(x) >= x * x / 12.0);
    }
    CHECK_THROWS_AS(parse_stencil("fourth_order"), InvalidArgument);
}
