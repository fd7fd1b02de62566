#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ivpb {

using Vec3 = std::array<double, 3>;

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm2(const Vec3& a) { return dot(a, a); }

/// Thrown for violated preconditions on user-supplied parameters.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a numerical procedure fails (divergence, stall, inconsistency).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Uniform periodic grid on the torus [0, L)^dim. Fields are stored cell-major
/// with the last active axis varying fastest.
class SpatialGrid {
public:
    SpatialGrid(int dim, int cells_per_axis, double length);

    int dim() const { return dim_; }
    int cells_per_axis() const { return n_; }
    double length() const { return length_; }
    double spacing() const { return length_ / n_; }
    double cell_volume() const { return cell_volume_; }
    std::size_t size() const { return size_; }

    /// Multi-index of cell `c`; inactive axes are 0.
    std::array<int, 3> index(std::size_t c) const;
    std::size_t flat(const std::array<int, 3>& idx) const;
    Vec3 coordinate(std::size_t c) const;
    /// Neighbor of `c` shifted by `offset` cells along `axis` (periodic).
    std::size_t shifted(std::size_t c, int axis, int offset) const;
    std::size_t stride(int axis) const { return strides_[axis]; }

    bool operator==(const SpatialGrid& o) const { return dim_ == o.dim_ && n_ == o.n_ && length_ == o.length_; }

private:
    int dim_;
    int n_;
    double length_;
    double cell_volume_;
    std::size_t size_;
    std::array<std::size_t, 3> strides_{};
};

SpatialGrid build_spatial_grid(int dim, int cells_per_axis, double length);

/// Cartesian midpoint grid on [-v_max, v_max]^3. Node (i, j, k) has flat index
/// (i * n + j) * n + k with i the v^1 index.
class VelocityGrid {
public:
    VelocityGrid(int nodes_per_axis, double v_max);

    int nodes_per_axis() const { return n_; }
    double v_max() const { return v_max_; }
    double spacing() const { return 2.0 * v_max_ / n_; }
    double weight() const { return weight_; }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<Vec3>& nodes() const { return nodes_; }
    const Vec3& node(std::size_t j) const { return nodes_[j]; }
    /// Coordinate of the axis node with index i in [0, n).
    double axis_node(int i) const { return -v_max_ + (i + 0.5) * spacing(); }
    std::size_t flat(int i, int j, int k) const { return (static_cast<std::size_t>(i) * n_ + j) * n_ + k; }
    std::array<int, 3> index(std::size_t j) const;
    /// Index of the node -v.
    std::size_t mirror(std::size_t j) const;
    /// True when the node touches the truncation boundary along any axis.
    bool on_boundary(std::size_t j) const;

    bool operator==(const VelocityGrid& o) const { return n_ == o.n_ && v_max_ == o.v_max_; }

private:
    int n_;
    double v_max_;
    double weight_;
    std::vector<Vec3> nodes_;
};

VelocityGrid build_velocity_grid(int nodes_per_axis, double v_max);

/// Quadrature rule on the unit sphere; weights sum to 4*pi.
struct AngularQuadrature {
    std::vector<Vec3> directions;
    std::vector<double> weights;
    int degree = 0;

    /// Rule with antipodal pairs merged: directions w and -w yield the same
    /// post-collision velocities, so one representative carries both weights.
    AngularQuadrature folded() const;
};

/// The 38-point Lebedev rule (exact for spherical polynomials of degree 9).
AngularQuadrature lebedev38();
AngularQuadrature angular_rule(const std::string& name);

/// sum_j w_j values_j in lexicographic node order.
double integrate_velocity(std::span<const double> values, const VelocityGrid& grid);

} // namespace ivpb
