#include "ivpb/collision.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace ivpb;

namespace {

std::vector<double> two_bump(std::mt19937_64& rng, const VelocityGrid& vg)
{
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const LocalMaxwellianParams a{1.0 + 0.3 * U(rng), {0.5 * U(rng), 0.5 * U(rng), 0.5 * U(rng)}, 1.0 + 0.2 * U(rng)};
    const LocalMaxwellianParams b{0.5 + 0.2 * U(rng), {0.8 * U(rng), 0.8 * U(rng), 0.8 * U(rng)}, 0.8 + 0.2 * U(rng)};
    auto f = eval_local_maxwellian(a, vg);
    const auto g = eval_local_maxwellian(b, vg);
    for (std::size_t j = 0; j < f.size(); ++j)
        f[j] += g[j];
    return f;
}

double relative_moment_defect(const std::vector<double>& Q, const std::vector<double>& F, const VelocityGrid& vg)
{
    const Moments q = moments(Q, vg), s = moments(F, vg);
    double d = std::abs(q.mass) / s.mass + std::abs(q.energy) / s.energy;
    for (int a = 0; a < 3; ++a)
        d += std::abs(q.momentum[a]) / std::sqrt(s.mass * s.energy);
    return d;
}

CollisionConfig hard_sphere(bool fix)
{
    CollisionConfig c;
    c.mode = CollisionMode::hard_sphere;
    c.conservation_fix = fix;
    return c;
}

double max_abs(const std::vector<double>& v)
{
    double m = 0.0;
    for (double x : v)
        m = std::max(m, std::abs(x));
    return m;
}

} // namespace

TEST_CASE("collision frequency of a unit Maxwellian matches the mean relative speed")
{
    const VelocityGrid vg(8, 5.0);
    const auto nu = collision_frequency(LocalMaxwellianParams{}, vg);
    for (std::size_t j : {std::size_t{0}, vg.flat(3, 4, 4), vg.flat(1, 6, 2)}) {
        const double s = std::sqrt(norm2(vg.node(j)));
        const double mean = std::sqrt(2.0 / std::numbers::pi) * std::exp(-0.5 * s * s) +
                            (s + 1.0 / s) * std::erf(s / std::numbers::sqrt2);
        CHECK(nu[j] == doctest::Approx(2.0 * std::numbers::pi * mean).epsilon(1e-10));
    }
}

TEST_CASE("hard-sphere collision conserves moments and nearly vanishes at equilibrium")
{
    const VelocityGrid vg(10, 6.0);
    std::mt19937_64 rng(11);
    for (int s = 0; s < 3; ++s) {
        const auto F = two_bump(rng, vg);
        CHECK(relative_moment_defect(collide(F, F, vg, hard_sphere(true)), F, vg) < 1e-12);
    }
    // log-quadratic interpolation is exact for a Gaussian, so even the raw
    // operator conserves a shifted Maxwellian's invariants to rounding
    const auto M = eval_local_maxwellian(LocalMaxwellianParams{1.3, {0.4, -0.2, 0.1}, 0.9}, vg);
    CHECK(relative_moment_defect(collide(M, M, vg, hard_sphere(false)), M, vg) < 1e-11);
    // the raw gain reproduces the loss of a Maxwellian node by node
    const auto mu = eval_local_maxwellian(LocalMaxwellianParams{}, vg);
    const auto Q = collide(mu, mu, vg, hard_sphere(false));
    const auto parts = collision_parts(mu, mu, vg, hard_sphere(false));
    double q2 = 0.0, loss2 = 0.0;
    for (std::size_t j = 0; j < mu.size(); ++j) {
        q2 += Q[j] * Q[j];
        loss2 += std::pow(parts.loss_frequency[j] * mu[j], 2);
    }
    CHECK(std::sqrt(q2 / loss2) < 1e-12);
}

TEST_CASE("paired gain evaluation for equal arguments matches the general path")
{
    const VelocityGrid vg(8, 5.0);
    std::mt19937_64 rng(4);
    const auto F = two_bump(rng, vg);
    auto G = F;
    for (double& x : G)
        x *= 1.0 + 1e-12;
    const auto a = collision_parts(F, F, vg, hard_sphere(false));
    const auto b = collision_parts(F, G, vg, hard_sphere(false));
    for (std::size_t j = 0; j < F.size(); ++j)
        CHECK(a.gain[j] * (1.0 + 1e-12) == doctest::Approx(b.gain[j]).epsilon(1e-12));
}

TEST_CASE("BGK relaxation conserves moments and fixes Maxwellians")
{
    const VelocityGrid vg(12, 6.0);
    std::mt19937_64 rng(5);
    const auto F = two_bump(rng, vg);
    CHECK(relative_moment_defect(bgk_relax(F, vg, 2.0), F, vg) < 1e-13);
    const auto mu = eval_local_maxwellian(LocalMaxwellianParams{1.2, {0.3, 0, 0}, 0.9}, vg);
    CHECK(max_abs(bgk_relax(mu, vg, 1.0)) < 1e-6 * max_abs(mu));
    const auto M = discrete_maxwellian(F, vg);
    const Moments a = moments(M, vg), b = moments(F, vg);
    CHECK(a.mass == doctest::Approx(b.mass).epsilon(1e-13));
    CHECK(a.energy == doctest::Approx(b.energy).epsilon(1e-13));
}

TEST_CASE("enforce_moments hits the target moments")
{
    const VelocityGrid vg(12, 6.0);
    auto f = eval_local_maxwellian(LocalMaxwellianParams{}, vg);
    const auto shape = f;
    const Moments target{1.1, {0.05, -0.02, 0.0}, 3.4};
    enforce_moments(f, shape, target, vg);
    const Moments m = moments(f, vg);
    CHECK(m.mass == doctest::Approx(1.1).epsilon(1e-13));
    CHECK(m.momentum[0] == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(m.energy == doctest::Approx(3.4).epsilon(1e-13));
}

TEST_CASE("linearized hard-sphere operator is symmetric, nonnegative and annihilates invariants")
{
    const VelocityGrid vg(8, 5.0);
    const LinearizedOperator L(LocalMaxwellianParams{1.0, {0.2, -0.1, 0.0}, 1.0}, vg, hard_sphere(true));
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::vector<double> g(vg.size()), h(vg.size());
    for (std::size_t j = 0; j < g.size(); ++j) {
        g[j] = L.sqrt_mu()[j] * (U(rng) + vg.node(j)[0] * U(rng));
        h[j] = L.sqrt_mu()[j] * U(rng);
    }
    const auto Lg = L.apply(g), Lh = L.apply(h);
    const double scale = std::sqrt(inner(Lg, Lg, vg) * inner(h, h, vg));
    CHECK(std::abs(inner(Lg, h, vg) - inner(g, Lh, vg)) < 1e-8 * scale);
    CHECK(inner(Lg, g, vg) >= -1e-8 * inner(g, g, vg));
    for (int i = 0; i < 5; ++i) {
        const auto r = L.apply(L.basis().chi(i));
        CHECK(std::sqrt(inner(r, r, vg)) < 1e-3);
    }

    const auto split = project_hydro(g, L.basis(), vg);
    const auto r = L.apply(split.residual);
    const auto inv = invert_L(r, L);
    CHECK(inv.relative_residual < 1e-8);
    double err = 0.0, ref = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) {
        err = std::max(err, std::abs(inv.g[j] - split.residual[j]));
        ref = std::max(ref, std::abs(split.residual[j]));
    }
    CHECK(err < 1e-5 * ref);
}

TEST_CASE("linearized BGK operator is rate times the microscopic projection")
{
    const VelocityGrid vg(12, 6.0);
    CollisionConfig c;
    c.bgk_rate = 2.5;
    const LinearizedOperator L(LocalMaxwellianParams{}, vg, c);
    std::vector<double> g(vg.size());
    for (std::size_t j = 0; j < g.size(); ++j)
        g[j] = L.sqrt_mu()[j] * std::pow(vg.node(j)[0], 3);
    const auto split = project_hydro(g, L.basis(), vg);
    const auto Lg = L.apply(g);
    for (std::size_t j = 0; j < g.size(); j += 37)
        CHECK(Lg[j] == doctest::Approx(2.5 * split.residual[j]).epsilon(1e-10));
    const auto inv = invert_L(Lg, L);
    for (std::size_t j = 0; j < g.size(); j += 37)
        CHECK(inv.g[j] == doctest::Approx(split.residual[j]).epsilon(1e-8));
}

TEST_CASE("collision configuration parsing")
{
    CHECK(parse_collision_mode("hard_sphere") == CollisionMode::hard_sphere);
    CHECK(parse_interpolation("trilinear") == Interpolation::trilinear);
    CHECK_THROWS_AS(parse_collision_mode("maxwell"), InvalidArgument);
    CollisionConfig c;
    c.bgk_rate = -1.0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
}
