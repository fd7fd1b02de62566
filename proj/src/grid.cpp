#include "ivpb/grid.hpp"

#include <numbers>

namespace ivpb {

SpatialGrid::SpatialGrid(int dim, int cells_per_axis, double length)
    : dim_(dim), n_(cells_per_axis), length_(length)
{
    if (dim < 1 || dim > 3)
        throw InvalidArgument("spatial dimension must be 1, 2 or 3 (got " + std::to_string(dim) + ")");
    if (cells_per_axis < 2)
        throw InvalidArgument("cells_per_axis must be at least 2");
    if (!(length > 0.0))
        throw InvalidArgument("domain length must be positive");
    cell_volume_ = std::pow(length / cells_per_axis, dim);
    size_ = 1;
    for (int a = 0; a < dim; ++a)
        size_ *= static_cast<std::size_t>(n_);
    std::size_t s = 1;
    for (int a = dim - 1; a >= 0; --a) {
        strides_[a] = s;
        s *= static_cast<std::size_t>(n_);
    }
}

std::array<int, 3> SpatialGrid::index(std::size_t c) const
{
    std::array<int, 3> idx{0, 0, 0};
    for (int a = 0; a < dim_; ++a)
        idx[a] = static_cast<int>((c / strides_[a]) % n_);
    return idx;
}

std::size_t SpatialGrid::flat(const std::array<int, 3>& idx) const
{
    std::size_t c = 0;
    for (int a = 0; a < dim_; ++a)
        c += static_cast<std::size_t>(((idx[a] % n_) + n_) % n_) * strides_[a];
    return c;
}

Vec3 SpatialGrid::coordinate(std::size_t c) const
{
    const auto idx = index(c);
    Vec3 x{0, 0, 0};
    for (int a = 0; a < dim_; ++a)
        x[a] = idx[a] * spacing();
    return x;
}

std::size_t SpatialGrid::shifted(std::size_t c, int axis, int offset) const
{
    const int i = static_cast<int>((c / strides_[axis]) % n_);
    const int j = ((i + offset) % n_ + n_) % n_;
    return c + (static_cast<std::size_t>(j) - static_cast<std::size_t>(i)) * strides_[axis];
}

SpatialGrid build_spatial_grid(int dim, int cells_per_axis, double length)
{
    return SpatialGrid(dim, cells_per_axis, length);
}

VelocityGrid::VelocityGrid(int nodes_per_axis, double v_max) : n_(nodes_per_axis), v_max_(v_max)
{
    if (nodes_per_axis < 2)
        throw InvalidArgument("velocity nodes_per_axis must be at least 2");
    if (nodes_per_axis % 2 != 0)
        throw InvalidArgument("velocity nodes_per_axis must be even: the midpoint grid is then closed under "
                              "v -> -v with no node at v = 0, which exact odd-moment cancellation relies on");
    if (!(v_max > 0.0))
        throw InvalidArgument("v_max must be positive");
    const double h = spacing();
    weight_ = h * h * h;
    nodes_.reserve(static_cast<std::size_t>(n_) * n_ * n_);
    for (int i = 0; i < n_; ++i)
        for (int j = 0; j < n_; ++j)
            for (int k = 0; k < n_; ++k)
                nodes_.push_back({axis_node(i), axis_node(j), axis_node(k)});
}

std::array<int, 3> VelocityGrid::index(std::size_t j) const
{
    const auto n = static_cast<std::size_t>(n_);
    return {static_cast<int>(j / (n * n)), static_cast<int>((j / n) % n), static_cast<int>(j % n)};
}

std::size_t VelocityGrid::mirror(std::size_t j) const
{
    const auto idx = index(j);
    return flat(n_ - 1 - idx[0], n_ - 1 - idx[1], n_ - 1 - idx[2]);
}

bool VelocityGrid::on_boundary(std::size_t j) const
{
    for (int i : index(j))
        if (i == 0 || i == n_ - 1)
            return true;
    return false;
}

VelocityGrid build_velocity_grid(int nodes_per_axis, double v_max) { return VelocityGrid(nodes_per_axis, v_max); }

AngularQuadrature AngularQuadrature::folded() const
{
    AngularQuadrature out;
    out.degree = degree;
    std::vector<bool> used(directions.size(), false);
    for (std::size_t i = 0; i < directions.size(); ++i) {
        if (used[i])
            continue;
        double w = weights[i];
        for (std::size_t j = i + 1; j < directions.size(); ++j) {
            const Vec3& a = directions[i];
            const Vec3& b = directions[j];
            if (!used[j] && std::abs(a[0] + b[0]) < 1e-14 && std::abs(a[1] + b[1]) < 1e-14 &&
                std::abs(a[2] + b[2]) < 1e-14) {
                used[j] = true;
                w += weights[j];
                break;
            }
        }
        out.directions.push_back(directions[i]);
        out.weights.push_back(w);
    }
    return out;
}

AngularQuadrature lebedev38()
{
    constexpr double four_pi = 4.0 * std::numbers::pi;
    constexpr double a1 = 1.0 / 105.0;
    constexpr double a3 = 9.0 / 280.0;
    constexpr double c1 = 1.0 / 35.0;
    constexpr double p = 0.4597008433809831;
    constexpr double q = 0.8880738339771153;
    const double s = 1.0 / std::sqrt(3.0);

    AngularQuadrature rule;
    rule.degree = 9;
    auto add = [&](Vec3 d, double w) {
        rule.directions.push_back(d);
        rule.weights.push_back(four_pi * w);
    };
    for (int a = 0; a < 3; ++a)
        for (double sg : {1.0, -1.0}) {
            Vec3 d{0, 0, 0};
            d[a] = sg;
            add(d, a1);
        }
    for (double x : {s, -s})
        for (double y : {s, -s})
            for (double z : {s, -s})
                add({x, y, z}, a3);
    // (+-p, +-q, 0) and (+-q, +-p, 0) in each coordinate plane.
    const std::array<std::array<int, 2>, 3> planes{{{0, 1}, {0, 2}, {1, 2}}};
    for (const auto& pl : planes)
        for (auto [r, t] : {std::pair{p, q}, std::pair{q, p}})
            for (double sr : {1.0, -1.0})
                for (double st : {1.0, -1.0}) {
                    Vec3 d{0, 0, 0};
                    d[pl[0]] = sr * r;
                    d[pl[1]] = st * t;
                    add(d, c1);
                }
    return rule;
}

AngularQuadrature angular_rule(const std::string& name)
{
    if (name == "lebedev38")
        return lebedev38();
    throw InvalidArgument("unknown angular rule '" + name + "' (available: lebedev38)");
}

double integrate_velocity(std::span<const double> values, const VelocityGrid& grid)
{
    if (values.size() != grid.size())
        throw InvalidArgument("integrate_velocity: expected " + std::to_string(grid.size()) + " values, got " +
                              std::to_string(values.size()));
    // Node j and its mirror N-1-j are summed first; the pair sum is invariant
    // under v -> -v bit for bit and vanishes exactly for odd integrands.
    const std::size_t n = values.size();
    double s = 0.0;
    for (std::size_t j = 0; j < n / 2; ++j)
        s += values[j] + values[n - 1 - j];
    return s * grid.weight();
}

} // namespace ivpb
