#include "ivpb/maxwellian.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <numbers>
#include <sstream>

namespace ivpb {

void LocalMaxwellianParams::validate() const
{
    if (!(rho > 0.0))
        throw InvalidArgument("local Maxwellian requires rho > 0");
    if (!(theta > 0.0))
        throw InvalidArgument("local Maxwellian requires theta > 0");
}

void WeightConfig::validate() const
{
    if (!(beta >= 3.5))
        throw InvalidArgument("β ≥ 7/2 required (got beta = " + std::to_string(beta) + ")");
}

std::vector<double> eval_local_maxwellian(const LocalMaxwellianParams& p, const VelocityGrid& grid)
{
    p.validate();
    const double norm = p.rho / std::pow(2.0 * std::numbers::pi * p.theta, 1.5);
    std::vector<double> mu(grid.size());
    for (std::size_t j = 0; j < grid.size(); ++j) {
        const Vec3& v = grid.node(j);
        const Vec3 c{v[0] - p.u[0], v[1] - p.u[1], v[2] - p.u[2]};
        mu[j] = norm * std::exp(-norm2(c) / (2.0 * p.theta));
    }
    return mu;
}

std::vector<double> eval_global_maxwellian(const GlobalMaxwellian& gm, const VelocityGrid& grid)
{
    return eval_local_maxwellian({1.0, {0, 0, 0}, gm.theta_M}, grid);
}

Moments moments(std::span<const double> F, const VelocityGrid& grid)
{
    if (F.size() != grid.size())
        throw InvalidArgument("moments: field length does not match the velocity grid");
    const std::size_t n = F.size();
    Moments m;
    for (std::size_t j = 0; j < n / 2; ++j) {
        const std::size_t r = n - 1 - j;
        const Vec3& v = grid.node(j);
        const Vec3& w = grid.node(r);
        m.mass += F[j] + F[r];
        for (int a = 0; a < 3; ++a)
            m.momentum[a] += v[a] * F[j] + w[a] * F[r];
        m.energy += norm2(v) * F[j] + norm2(w) * F[r];
    }
    const double wt = grid.weight();
    m.mass *= wt;
    for (auto& x : m.momentum)
        x *= wt;
    m.energy *= wt;
    return m;
}

LocalMaxwellianParams maxwellian_params(const Moments& m)
{
    if (!(m.mass > 0.0))
        throw NumericalError("non-physical moments: mass <= 0");
    LocalMaxwellianParams p;
    p.rho = m.mass;
    for (int a = 0; a < 3; ++a)
        p.u[a] = m.momentum[a] / m.mass;
    p.theta = (m.energy / m.mass - norm2(p.u)) / 3.0;
    if (!(p.theta > 0.0))
        throw NumericalError("non-physical moments: temperature <= 0");
    return p;
}

double inner(std::span<const double> a, std::span<const double> b, const VelocityGrid& grid)
{
    const std::size_t n = a.size();
    double s = 0.0;
    for (std::size_t j = 0; j < n / 2; ++j)
        s += a[j] * b[j] + a[n - 1 - j] * b[n - 1 - j];
    return s * grid.weight();
}

ChiBasis::ChiBasis(const LocalMaxwellianParams& params, const VelocityGrid& grid) : params_(params)
{
    params.validate();
    const auto mu = eval_local_maxwellian(params, grid);
    const std::size_t n = grid.size();
    sqrt_mu_.resize(n);
    for (auto& c : chi_)
        c.resize(n);
    const double rho = params.rho;
    const double theta = params.theta;
    const double c0 = 1.0 / std::sqrt(rho);
    const double c1 = 1.0 / std::sqrt(rho * theta);
    const double c4 = 1.0 / std::sqrt(6.0 * rho);
    for (std::size_t j = 0; j < n; ++j) {
        const double s = std::sqrt(mu[j]);
        sqrt_mu_[j] = s;
        const Vec3& v = grid.node(j);
        const Vec3 d{v[0] - params.u[0], v[1] - params.u[1], v[2] - params.u[2]};
        chi_[0][j] = c0 * s;
        for (int a = 0; a < 3; ++a)
            chi_[a + 1][j] = c1 * d[a] * s;
        chi_[4][j] = c4 * (norm2(d) / theta - 3.0) * s;
    }
    Eigen::Matrix<double, 5, 5> G;
    for (int i = 0; i < 5; ++i)
        for (int k = i; k < 5; ++k) {
            const double g = inner(chi_[i], chi_[k], grid);
            G(i, k) = G(k, i) = g;
            gram_[i][k] = gram_[k][i] = g;
            gram_defect_ = std::max(gram_defect_, std::abs(g - (i == k ? 1.0 : 0.0)));
        }
    const Eigen::Matrix<double, 5, 5> Gi = G.inverse();
    for (int i = 0; i < 5; ++i)
        for (int k = 0; k < 5; ++k)
            gram_inv_[i][k] = Gi(i, k);
}

std::array<double, 5> ChiBasis::coefficients(std::span<const double> g, const VelocityGrid& grid) const
{
    std::array<double, 5> b{};
    for (int i = 0; i < 5; ++i)
        b[i] = inner(g, chi_[i], grid);
    std::array<double, 5> c{};
    for (int i = 0; i < 5; ++i)
        for (int k = 0; k < 5; ++k)
            c[i] += gram_inv_[i][k] * b[k];
    return c;
}

ChiBasis build_chi_basis(const LocalMaxwellianParams& params, const VelocityGrid& grid)
{
    ChiBasis basis(params, grid);
    if (basis.gram_defect() > kGramFailureThreshold) {
        std::ostringstream os;
        os << "chi basis Gram defect " << basis.gram_defect()
           << " exceeds threshold: the velocity grid does not resolve the Maxwellian (rho=" << params.rho
           << ", theta=" << params.theta << ", v_max=" << grid.v_max() << ", nodes=" << grid.nodes_per_axis()
           << ")";
        throw NumericalError(os.str());
    }
    return basis;
}

HydroSplit project_hydro(std::span<const double> g, const ChiBasis& basis, const VelocityGrid& grid)
{
    const auto c = basis.coefficients(g, grid);
    HydroSplit out;
    out.Pg.assign(g.size(), 0.0);
    for (int i = 0; i < 5; ++i) {
        const auto& chi = basis.chi(i);
        for (std::size_t j = 0; j < g.size(); ++j)
            out.Pg[j] += c[i] * chi[j];
    }
    out.residual.resize(g.size());
    for (std::size_t j = 0; j < g.size(); ++j)
        out.residual[j] = g[j] - out.Pg[j];
    return out;
}

HydroCoordinates hydro_coordinates(std::span<const double> g, const ChiBasis& basis, const VelocityGrid& grid)
{
    const auto& p = basis.params();
    HydroCoordinates hc;
    hc.rho = std::sqrt(p.rho) * inner(g, basis.chi(0), grid);
    for (int a = 0; a < 3; ++a)
        hc.u[a] = std::sqrt(p.theta / p.rho) * inner(g, basis.chi(a + 1), grid);
    hc.theta = p.theta * std::sqrt(2.0 / (3.0 * p.rho)) * inner(g, basis.chi(4), grid);
    return hc;
}

std::vector<double> hydro_field(const HydroCoordinates& hc, const ChiBasis& basis)
{
    const auto& p = basis.params();
    const double a0 = hc.rho / std::sqrt(p.rho);
    const double au = std::sqrt(p.rho / p.theta);
    const double a4 = std::sqrt(1.5 * p.rho) * hc.theta / p.theta;
    const std::size_t n = basis.chi(0).size();
    std::vector<double> g(n);
    for (std::size_t j = 0; j < n; ++j)
        g[j] = a0 * basis.chi(0)[j] + au * (hc.u[0] * basis.chi(1)[j] + hc.u[1] * basis.chi(2)[j] +
                                            hc.u[2] * basis.chi(3)[j]) +
               a4 * basis.chi(4)[j];
    return g;
}

GlobalMaxwellian select_theta_M(std::span<const double> theta_field)
{
    if (theta_field.empty())
        throw InvalidArgument("select_theta_M: empty temperature field");
    const auto [lo, hi] = std::minmax_element(theta_field.begin(), theta_field.end());
    if (!(*lo > 0.0))
        throw InvalidArgument("select_theta_M: temperatures must be positive");
    if (*hi > 2.0 * *lo)
        throw InvalidArgument("temperature contrast exceeds the admissible bracket: max theta > 2 min theta");
    return {0.5 * (0.5 * *hi + *lo)};
}

} // namespace ivpb
