#include "ivpb/collision.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <numbers>
#include <optional>
#include <sstream>

namespace ivpb {

CollisionMode parse_collision_mode(const std::string& s)
{
    if (s == "hard_sphere")
        return CollisionMode::hard_sphere;
    if (s == "bgk")
        return CollisionMode::bgk;
    throw InvalidArgument("unknown collision mode '" + s + "' (expected hard_sphere or bgk)");
}

Interpolation parse_interpolation(const std::string& s)
{
    if (s == "quadratic")
        return Interpolation::quadratic;
    if (s == "trilinear")
        return Interpolation::trilinear;
    throw InvalidArgument("unknown interpolation '" + s + "' (expected quadratic or trilinear)");
}

std::string to_string(CollisionMode m) { return m == CollisionMode::bgk ? "bgk" : "hard_sphere"; }
std::string to_string(Interpolation i) { return i == Interpolation::quadratic ? "quadratic" : "trilinear"; }

void CollisionConfig::validate() const
{
    double sum = 0.0;
    for (double w : angular.weights)
        sum += w;
    if (std::abs(sum - 4.0 * std::numbers::pi) > 1e-12)
        throw InvalidArgument("angular quadrature weights must sum to 4 pi");
    if (mode == CollisionMode::bgk && !(bgk_rate > 0.0))
        throw InvalidArgument("bgk_rate must be positive");
    if (!(krylov_tol > 0.0) || max_krylov < 1)
        throw InvalidArgument("collision Krylov tolerance and iteration cap must be positive");
}

namespace {

// Lagrange weights of a `width`-point stencil at continuous index `pos`;
// the stencil covers nodes shift .. shift + width - 1.
inline void lagrange_weights(double pos, int width, int& shift, double w[3])
{
    if (width == 3) {
        const int c = static_cast<int>(std::lround(pos));
        const double t = pos - c;
        shift = c - 1;
        w[0] = 0.5 * t * (t - 1.0);
        w[1] = 1.0 - t * t;
        w[2] = 0.5 * t * (t + 1.0);
    } else {
        const int b = static_cast<int>(std::floor(pos));
        const double t = pos - b;
        shift = b;
        w[0] = 1.0 - t;
        w[1] = t;
    }
}

inline int stencil_width(Interpolation kind) { return kind == Interpolation::quadratic ? 3 : 2; }

void require_stencil_support(const VelocityGrid& grid, const CollisionConfig& cfg)
{
    if (grid.nodes_per_axis() < stencil_width(cfg.interpolation) + 1)
        throw InvalidArgument("collision interpolation stencil is wider than the velocity grid");
}

} // namespace

namespace {

// Point evaluation of a nodal field at an off-grid velocity. Where the stencil
// values share one sign the interpolation acts on log|F|, which reproduces
// Gaussians exactly (so Maxwellians are exact discrete equilibria); mixed-sign
// stencils use the plain polynomial interpolant. Outside the velocity box the
// log interpolant extrapolates, capped by the stencil maximum, and the plain
// one returns zero.
// Stencil weights for a fixed offset from a node, valid wherever the whole
// stencil lies inside the grid.
struct FixedStencil {
    int shift[3];
    int width;
    double w[3][3];

    FixedStencil(const double off[3], Interpolation kind) : width(stencil_width(kind))
    {
        for (int a = 0; a < 3; ++a)
            lagrange_weights(off[a], width, shift[a], w[a]);
    }
};

class PointInterpolator {
public:
    struct Value {
        bool log_mode;
        int sign;
        double v; // log|F| in log mode, F otherwise
    };

    PointInterpolator(std::span<const double> F, const VelocityGrid& grid, Interpolation kind)
        : F_(F), n_(grid.nodes_per_axis()), width_(stencil_width(kind)),
          nb_(n_ - width_ + 1), logabs_(F.size())
    {
        std::vector<signed char> sign(F.size());
        for (std::size_t j = 0; j < F.size(); ++j) {
            sign[j] = F[j] > 0.0 ? 1 : (F[j] < 0.0 ? -1 : 0);
            logabs_[j] = sign[j] != 0 ? std::log(std::abs(F[j])) : 0.0;
        }
        const auto nb = static_cast<std::size_t>(nb_);
        block_sign_.assign(nb * nb * nb, 0);
        block_max_.assign(nb * nb * nb, 0.0);
        for (int a = 0; a < nb_; ++a)
            for (int b = 0; b < nb_; ++b)
                for (int c = 0; c < nb_; ++c) {
                    int s0 = sign[grid.flat(a, b, c)];
                    double mx = -1e300;
                    for (int i = 0; i < width_; ++i)
                        for (int j = 0; j < width_; ++j)
                            for (int k = 0; k < width_; ++k) {
                                const std::size_t idx = grid.flat(a + i, b + j, c + k);
                                if (sign[idx] != s0)
                                    s0 = 0;
                                mx = std::max(mx, logabs_[idx]);
                            }
                    const std::size_t blk = (static_cast<std::size_t>(a) * nb + b) * nb + c;
                    block_sign_[blk] = static_cast<signed char>(s0);
                    block_max_[blk] = mx;
                }
    }

    Value operator()(const double pos[3]) const
    {
        int base[3];
        double w[3][3];
        bool inside = true;
        for (int a = 0; a < 3; ++a) {
            const double p = pos[a];
            if (p < -0.5 || p > n_ - 0.5)
                inside = false;
            lagrange_weights(p, width_, base[a], w[a]);
            // off the grid the outermost stencil extrapolates
            const int b0 = std::clamp(base[a], 0, n_ - width_);
            if (b0 != base[a]) {
                base[a] = b0;
                for (int m = 0; m < width_; ++m) {
                    double l = 1.0;
                    for (int r = 0; r < width_; ++r)
                        if (r != m)
                            l *= (p - (b0 + r)) / static_cast<double>(m - r);
                    w[a][m] = l;
                }
            }
        }
        const auto nb = static_cast<std::size_t>(nb_);
        const std::size_t blk = (static_cast<std::size_t>(base[0]) * nb + base[1]) * nb + base[2];
        const int sign = block_sign_[blk];
        const auto nn = static_cast<std::size_t>(n_);
        const double* data = sign != 0 ? logabs_.data() : F_.data();
        double sum = 0.0;
        for (int i = 0; i < width_; ++i) {
            double si = 0.0;
            const std::size_t bi = static_cast<std::size_t>(base[0] + i) * nn;
            for (int j = 0; j < width_; ++j) {
                const double* row = data + (bi + static_cast<std::size_t>(base[1] + j)) * nn + base[2];
                double sj = 0.0;
                for (int k = 0; k < width_; ++k)
                    sj += w[2][k] * row[k];
                si += w[1][j] * sj;
            }
            sum += w[0][i] * si;
        }
        if (sign != 0) {
            if (!inside)
                sum = std::min(sum, block_max_[blk]);
            return {true, sign, sum};
        }
        return {false, 0, inside ? sum : 0.0};
    }

    /// Fast path for a precomputed stencil at node v; false when the stencil
    /// would leave the grid (the caller then uses operator()).
    bool fixed(const int v[3], const FixedStencil& st, Value& out) const
    {
        int base[3];
        for (int a = 0; a < 3; ++a) {
            base[a] = v[a] + st.shift[a];
            if (base[a] < 0 || base[a] > nb_ - 1)
                return false;
        }
        const auto nb = static_cast<std::size_t>(nb_);
        const std::size_t blk = (static_cast<std::size_t>(base[0]) * nb + base[1]) * nb + base[2];
        const int sign = block_sign_[blk];
        const double* data = sign != 0 ? logabs_.data() : F_.data();
        const auto nn = static_cast<std::size_t>(n_);
        double sum = 0.0;
        for (int i = 0; i < width_; ++i) {
            double si = 0.0;
            const std::size_t bi = static_cast<std::size_t>(base[0] + i) * nn;
            for (int j = 0; j < width_; ++j) {
                const double* row = data + (bi + static_cast<std::size_t>(base[1] + j)) * nn + base[2];
                double sj = 0.0;
                for (int k = 0; k < width_; ++k)
                    sj += st.w[2][k] * row[k];
                si += st.w[1][j] * sj;
            }
            sum += st.w[0][i] * si;
        }
        out = sign != 0 ? Value{true, sign, sum} : Value{false, 0, sum};
        return true;
    }

    static double value(const Value& x) { return x.log_mode ? x.sign * std::exp(x.v) : x.v; }

private:
    std::span<const double> F_;
    int n_;
    int width_;
    int nb_;
    std::vector<double> logabs_;
    std::vector<signed char> block_sign_;
    std::vector<double> block_max_;
};

} // namespace

namespace {

int uniform_sign(std::span<const double> F)
{
    int s = 0;
    for (double x : F) {
        const int t = x > 0.0 ? 1 : (x < 0.0 ? -1 : 0);
        if (t == 0 || (s != 0 && t != s))
            return 0;
        s = t;
    }
    return s;
}

// A nodal field extended beyond the velocity box, axis by axis, by the
// quadratic through the three outermost nodes. In log mode the field is
// log|F| and the extension is capped at the boundary value: a Gaussian then
// extends exactly, so Maxwellians stay exact discrete equilibria. The plain
// (uncapped) extension is linear and has an adjoint, fold().
struct PaddedLog {
    int n = 0;
    int pad = 0;
    int M = 0;
    bool capped = true;
    std::vector<double> data;

    PaddedLog(int nodes, int padding) : n(nodes), pad(padding), M(nodes + 2 * padding)
    {
        const auto m = static_cast<std::size_t>(M);
        data.assign(m * m * m, 0.0);
    }

    PaddedLog(std::span<const double> F, int nodes, int padding, bool log_mode = true) : PaddedLog(nodes, padding)
    {
        capped = log_mode;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k) {
                    const double x = F[(static_cast<std::size_t>(i) * n + j) * n + k];
                    at(i + pad, j + pad, k + pad) = log_mode ? std::log(std::abs(x)) : x;
                }
        // Axis 0 over the original (j, k) block, then axis 1 and 2 on growing blocks.
        extend(0, pad, pad + n - 1, pad, pad + n - 1);
        extend(1, 0, M - 1, pad, pad + n - 1);
        extend(2, 0, M - 1, 0, M - 1);
    }

    double& at(int i, int j, int k) { return data[(static_cast<std::size_t>(i) * M + j) * M + k]; }

    template <class Fn>
    void for_lines(int axis, int p0, int p1, int q0, int q1, Fn&& fn)
    {
        for (int p = p0; p <= p1; ++p)
            for (int q = q0; q <= q1; ++q)
                fn([&, p, q](int t) -> double& {
                    if (axis == 0)
                        return at(t, p, q);
                    if (axis == 1)
                        return at(p, t, q);
                    return at(p, q, t);
                });
    }

    void extend(int axis, int p0, int p1, int q0, int q1)
    {
        const int first = pad, last = pad + n - 1;
        for_lines(axis, p0, p1, q0, q1, [&](auto ref) {
            const double a0 = ref(last - 2), a1 = ref(last - 1), a2 = ref(last);
            const double b0 = ref(first + 2), b1 = ref(first + 1), b2 = ref(first);
            for (int e = 1; e <= pad; ++e) {
                const double de = e;
                const double c1 = de, c2 = 0.5 * de * (de + 1.0);
                const double hi = a2 + c1 * (a2 - a1) + c2 * (a2 - 2.0 * a1 + a0);
                const double lo = b2 + c1 * (b2 - b1) + c2 * (b2 - 2.0 * b1 + b0);
                ref(last + e) = capped ? std::min(hi, a2) : hi;
                ref(first - e) = capped ? std::min(lo, b2) : lo;
            }
        });
    }

    // Adjoint of extend for the uncapped extension.
    void fold_axis(int axis, int p0, int p1, int q0, int q1)
    {
        const int first = pad, last = pad + n - 1;
        for_lines(axis, p0, p1, q0, q1, [&](auto ref) {
            for (int e = 1; e <= pad; ++e) {
                const double de = e;
                const double c1 = de, c2 = 0.5 * de * (de + 1.0);
                const double x = ref(last + e), y = ref(first - e);
                ref(last) += (1.0 + c1 + c2) * x;
                ref(last - 1) += (-c1 - 2.0 * c2) * x;
                ref(last - 2) += c2 * x;
                ref(first) += (1.0 + c1 + c2) * y;
                ref(first + 1) += (-c1 - 2.0 * c2) * y;
                ref(first + 2) += c2 * y;
                ref(last + e) = 0.0;
                ref(first - e) = 0.0;
            }
        });
    }

    /// Transpose of the plain extension: maps padded values back to the n-grid.
    std::vector<double> fold()
    {
        fold_axis(2, 0, M - 1, 0, M - 1);
        fold_axis(1, 0, M - 1, pad, pad + n - 1);
        fold_axis(0, pad, pad + n - 1, pad, pad + n - 1);
        std::vector<double> out(static_cast<std::size_t>(n) * n * n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k)
                    out[(static_cast<std::size_t>(i) * n + j) * n + k] = at(i + pad, j + pad, k + pad);
        return out;
    }
};

// Interpolates the padded field at node + offset for every target node in the
// box [lo, hi] of the n-grid by three 1D passes; out is indexed on the n-grid.
void shifted_interpolation(const PaddedLog& src, const FixedStencil& st, const int lo[3], const int hi[3],
                           std::vector<double>& tmp0, std::vector<double>& tmp1, std::vector<double>& out)
{
    const int M = src.M, n = src.n, pad = src.pad;
    const auto mm = static_cast<std::size_t>(M);
    const auto nn = static_cast<std::size_t>(n);
    const int W = st.width;
    for (int a = 0; a < 3; ++a)
        if (lo[a] + pad + st.shift[a] < 0 || hi[a] + pad + st.shift[a] + W - 1 > M - 1)
            throw NumericalError("collision stencil leaves the padded velocity box");
    auto at = [mm](int i, int j, int k) { return (static_cast<std::size_t>(i) * mm + j) * mm + k; };
    const int j0 = lo[1] + pad + st.shift[1], j1 = hi[1] + pad + st.shift[1] + W - 1;
    const int k0 = lo[2] + pad + st.shift[2], k1 = hi[2] + pad + st.shift[2] + W - 1;
    const double* s = src.data.data();
    for (int i = lo[0]; i <= hi[0]; ++i) {
        const int si = i + pad + st.shift[0];
        for (int j = j0; j <= j1; ++j) {
            double* o = &tmp0[at(i, j, 0)];
            for (int m = 0; m < W; ++m) {
                const double* r = s + at(si + m, j, 0);
                const double w = st.w[0][m];
                if (m == 0)
                    for (int k = k0; k <= k1; ++k)
                        o[k] = w * r[k];
                else
                    for (int k = k0; k <= k1; ++k)
                        o[k] += w * r[k];
            }
        }
    }
    for (int i = lo[0]; i <= hi[0]; ++i)
        for (int j = lo[1]; j <= hi[1]; ++j) {
            double* o = &tmp1[at(i, j, 0)];
            for (int m = 0; m < W; ++m) {
                const double* r = &tmp0[at(i, j + pad + st.shift[1] + m, 0)];
                const double w = st.w[1][m];
                if (m == 0)
                    for (int k = k0; k <= k1; ++k)
                        o[k] = w * r[k];
                else
                    for (int k = k0; k <= k1; ++k)
                        o[k] += w * r[k];
            }
        }
    const int ks = pad + st.shift[2];
    for (int i = lo[0]; i <= hi[0]; ++i)
        for (int j = lo[1]; j <= hi[1]; ++j) {
            const double* r = &tmp1[at(i, j, 0)];
            double* o = &out[(static_cast<std::size_t>(i) * nn + j) * nn];
            for (int k = lo[2]; k <= hi[2]; ++k) {
                double acc = 0.0;
                for (int m = 0; m < W; ++m)
                    acc += st.w[2][m] * r[k + ks + m];
                o[k] = acc;
            }
        }
}

// Adjoint of shifted_interpolation: dst (padded) += S^T c.
void shifted_interpolation_adjoint(const std::vector<double>& c, const FixedStencil& st, const int lo[3],
                                   const int hi[3], std::vector<double>& tmp0, std::vector<double>& tmp1,
                                   PaddedLog& dst)
{
    const int M = dst.M, n = dst.n, pad = dst.pad;
    const auto mm = static_cast<std::size_t>(M);
    const auto nn = static_cast<std::size_t>(n);
    const int W = st.width;
    auto at = [mm](int i, int j, int k) { return (static_cast<std::size_t>(i) * mm + j) * mm + k; };
    const int j0 = lo[1] + pad + st.shift[1], j1 = hi[1] + pad + st.shift[1] + W - 1;
    const int k0 = lo[2] + pad + st.shift[2], k1 = hi[2] + pad + st.shift[2] + W - 1;
    const int ks = pad + st.shift[2];
    for (int i = lo[0]; i <= hi[0]; ++i)
        for (int j = lo[1]; j <= hi[1]; ++j) {
            double* r = &tmp1[at(i, j, 0)];
            for (int k = k0; k <= k1; ++k)
                r[k] = 0.0;
            const double* cr = &c[(static_cast<std::size_t>(i) * nn + j) * nn];
            for (int k = lo[2]; k <= hi[2]; ++k)
                for (int m = 0; m < W; ++m)
                    r[k + ks + m] += st.w[2][m] * cr[k];
        }
    for (int i = lo[0]; i <= hi[0]; ++i) {
        for (int j = j0; j <= j1; ++j) {
            double* o = &tmp0[at(i, j, 0)];
            for (int k = k0; k <= k1; ++k)
                o[k] = 0.0;
        }
        for (int j = lo[1]; j <= hi[1]; ++j) {
            const double* r = &tmp1[at(i, j, 0)];
            for (int m = 0; m < W; ++m) {
                double* o = &tmp0[at(i, j + pad + st.shift[1] + m, 0)];
                const double w = st.w[1][m];
                for (int k = k0; k <= k1; ++k)
                    o[k] += w * r[k];
            }
        }
    }
    double* d = dst.data.data();
    for (int i = lo[0]; i <= hi[0]; ++i) {
        const int si = i + pad + st.shift[0];
        for (int j = j0; j <= j1; ++j) {
            const double* r = &tmp0[at(i, j, 0)];
            for (int m = 0; m < W; ++m) {
                double* o = d + at(si + m, j, 0);
                const double w = st.w[0][m];
                for (int k = k0; k <= k1; ++k)
                    o[k] += w * r[k];
            }
        }
    }
}

int collision_padding(int n) { return static_cast<int>(std::ceil(0.7072 * (n - 1))) + 3; }

} // namespace

CollisionParts collision_parts(std::span<const double> F1, std::span<const double> F2, const VelocityGrid& grid,
                               const CollisionConfig& cfg)
{
    if (F1.size() != grid.size() || F2.size() != grid.size())
        throw InvalidArgument("collide: field length does not match the velocity grid");
    require_stencil_support(grid, cfg);
    const AngularQuadrature rule = cfg.angular.folded();
    const std::size_t nw = rule.directions.size();
    const int n = grid.nodes_per_axis();
    const double h = grid.spacing();
    const std::size_t N = grid.size();
    const PointInterpolator I1(F1, grid, cfg.interpolation);
    const PointInterpolator I2(F2, grid, cfg.interpolation);

    // Single-signed fields take the separable path on log|F|.
    const int sign1 = uniform_sign(F1), sign2 = uniform_sign(F2);
    const bool separable = sign1 != 0 && sign2 != 0;
    // Post-collision velocities lie on the sphere with diameter [u, v]; along
    // one axis they leave the box by at most (n - 1)/sqrt(2) nodes.
    const int pad = collision_padding(n);
    std::optional<PaddedLog> log1, log2;
    std::vector<double> tmp0, tmp1, a_log, b_log;
    if (separable) {
        log1.emplace(F1, n, pad);
        log2.emplace(F2, n, pad);
        tmp0.resize(log1->data.size());
        tmp1.resize(log1->data.size());
        a_log.resize(N);
        b_log.resize(N);
    }
    const double sign12 = sign1 * sign2;
    // For F1 = F2 the pair (v, v + d) and the pair (v + d, v) share one gain
    // value, so only differences d with positive leading component are needed.
    const bool paired = separable && std::equal(F1.begin(), F1.end(), F2.begin());

    std::vector<double> gain(N, 0.0), nu(N, 0.0);
    // Loop over the index difference d = u - v and the direction first: the
    // post-collision offsets, and with them the stencil weights, depend on
    // (d, omega) only.
    for (int d0 = -(n - 1); d0 <= n - 1; ++d0)
        for (int d1 = -(n - 1); d1 <= n - 1; ++d1)
            for (int d2 = -(n - 1); d2 <= n - 1; ++d2) {
                if (d0 == 0 && d1 == 0 && d2 == 0)
                    continue;
                const int d[3] = {d0, d1, d2};
                const bool mirrored = paired && (d0 < 0 || (d0 == 0 && (d1 < 0 || (d1 == 0 && d2 < 0))));
                int lo[3], hi[3];
                for (int a = 0; a < 3; ++a) {
                    lo[a] = std::max(0, -d[a]);
                    hi[a] = std::min(n - 1, n - 1 - d[a]);
                }
                double rate = 0.0;
                for (std::size_t q = 0; q < nw; ++q) {
                    const Vec3& w = rule.directions[q];
                    const double sh = d0 * w[0] + d1 * w[1] + d2 * w[2];
                    if (sh == 0.0)
                        continue;
                    const double B = rule.weights[q] * std::abs(sh) * h;
                    rate += B;
                    // v' = v + off_v, u' = v + off_u (index units)
                    const double off_v[3] = {sh * w[0], sh * w[1], sh * w[2]};
                    const double off_u[3] = {d0 - off_v[0], d1 - off_v[1], d2 - off_v[2]};
                    const FixedStencil su(off_u, cfg.interpolation), sv(off_v, cfg.interpolation);

                    if (mirrored)
                        continue;
                    if (separable) {
                        shifted_interpolation(*log1, su, lo, hi, tmp0, tmp1, a_log);
                        shifted_interpolation(*log2, sv, lo, hi, tmp0, tmp1, b_log);
                        const double Bs = B * sign12;
                        for (int i = lo[0]; i <= hi[0]; ++i)
                            for (int j = lo[1]; j <= hi[1]; ++j) {
                                const std::size_t row = grid.flat(i, j, 0);
                                if (paired) {
                                    const std::size_t partner = grid.flat(i + d0, j + d1, d2);
                                    for (int k = lo[2]; k <= hi[2]; ++k) {
                                        const double g = Bs * std::exp(a_log[row + k] + b_log[row + k]);
                                        gain[row + k] += g;
                                        gain[partner + k] += g;
                                    }
                                } else {
                                    for (int k = lo[2]; k <= hi[2]; ++k)
                                        gain[row + k] += Bs * std::exp(a_log[row + k] + b_log[row + k]);
                                }
                            }
                        continue;
                    }
                    for (int i = lo[0]; i <= hi[0]; ++i)
                        for (int j = lo[1]; j <= hi[1]; ++j)
                            for (int k = lo[2]; k <= hi[2]; ++k) {
                                const int v[3] = {i, j, k};
                                PointInterpolator::Value a, b;
                                if (!I1.fixed(v, su, a)) {
                                    const double p[3] = {i + off_u[0], j + off_u[1], k + off_u[2]};
                                    a = I1(p);
                                }
                                if (!I2.fixed(v, sv, b)) {
                                    const double p[3] = {i + off_v[0], j + off_v[1], k + off_v[2]};
                                    b = I2(p);
                                }
                                double val;
                                if (a.log_mode && b.log_mode)
                                    val = (a.sign * b.sign) * std::exp(a.v + b.v);
                                else
                                    val = PointInterpolator::value(a) * PointInterpolator::value(b);
                                gain[grid.flat(i, j, k)] += B * val;
                            }
                }
                for (int i = lo[0]; i <= hi[0]; ++i)
                    for (int j = lo[1]; j <= hi[1]; ++j)
                        for (int k = lo[2]; k <= hi[2]; ++k)
                            nu[grid.flat(i, j, k)] += rate * F1[grid.flat(i + d0, j + d1, k + d2)];
            }
    CollisionParts out;
    out.gain = std::move(gain);
    out.loss_frequency = std::move(nu);
    for (std::size_t j = 0; j < N; ++j) {
        out.gain[j] *= grid.weight();
        out.loss_frequency[j] *= grid.weight();
    }
    return out;
}

std::vector<double> collide(std::span<const double> F1, std::span<const double> F2, const VelocityGrid& grid,
                            const CollisionConfig& cfg)
{
    if (cfg.mode != CollisionMode::hard_sphere)
        throw InvalidArgument("collide evaluates the hard-sphere operator; configure mode = hard_sphere");
    const auto parts = collision_parts(F1, F2, grid, cfg);
    std::vector<double> Q(grid.size());
    for (std::size_t j = 0; j < Q.size(); ++j)
        Q[j] = parts.gain[j] - parts.loss_frequency[j] * F2[j];
    if (cfg.conservation_fix) {
        std::vector<double> shape(Q.size());
        for (std::size_t j = 0; j < Q.size(); ++j)
            shape[j] = std::abs(F1[j]) + std::abs(F2[j]);
        enforce_moments(Q, shape, Moments{}, grid);
    }
    return Q;
}

void enforce_moments(std::vector<double>& field, std::span<const double> shape, const Moments& target,
                     const VelocityGrid& grid)
{
    const std::size_t N = grid.size();
    Eigen::Matrix<double, 5, 5> M = Eigen::Matrix<double, 5, 5>::Zero();
    for (std::size_t j = 0; j < N; ++j) {
        const Vec3& v = grid.node(j);
        const double psi[5] = {1.0, v[0], v[1], v[2], norm2(v)};
        for (int a = 0; a < 5; ++a)
            for (int b = a; b < 5; ++b)
                M(a, b) += shape[j] * psi[a] * psi[b];
    }
    for (int a = 0; a < 5; ++a)
        for (int b = 0; b < a; ++b)
            M(a, b) = M(b, a);
    M *= grid.weight();
    // Two passes remove the rounding left by the first solve.
    for (int pass = 0; pass < 2; ++pass) {
        const Moments m = moments(field, grid);
        Eigen::Matrix<double, 5, 1> r;
        r << target.mass - m.mass, target.momentum[0] - m.momentum[0], target.momentum[1] - m.momentum[1],
            target.momentum[2] - m.momentum[2], target.energy - m.energy;
        const Eigen::Matrix<double, 5, 1> lam = M.ldlt().solve(r);
        for (std::size_t j = 0; j < N; ++j) {
            const Vec3& v = grid.node(j);
            field[j] += shape[j] * (lam(0) + lam(1) * v[0] + lam(2) * v[1] + lam(3) * v[2] + lam(4) * norm2(v));
        }
    }
}

std::vector<double> collision_frequency(const LocalMaxwellianParams& bg, const VelocityGrid& grid)
{
    bg.validate();
    const double st = std::sqrt(bg.theta);
    const double c = 2.0 * std::numbers::pi * bg.rho * st;
    const double k = std::sqrt(2.0 / std::numbers::pi);
    std::vector<double> nu(grid.size());
    for (std::size_t j = 0; j < grid.size(); ++j) {
        const Vec3& v = grid.node(j);
        const Vec3 d{v[0] - bg.u[0], v[1] - bg.u[1], v[2] - bg.u[2]};
        const double s = std::sqrt(norm2(d)) / st;
        // Mean of |X - v| for X ~ N(u, theta I), in units of sqrt(theta).
        const double mean = s < 1e-4 ? k * (2.0 + s * s / 3.0)
                                     : k * std::exp(-0.5 * s * s) + (s + 1.0 / s) * std::erf(s / std::numbers::sqrt2);
        nu[j] = c * mean;
    }
    return nu;
}

LinearizedOperator::LinearizedOperator(const LocalMaxwellianParams& background, const VelocityGrid& grid,
                                       CollisionConfig cfg)
    : background_(background), grid_(&grid), cfg_(std::move(cfg)), basis_(background, grid)
{
    cfg_.validate();
    if (cfg_.mode == CollisionMode::hard_sphere) {
        require_stencil_support(grid, cfg_);
        nu_ = collision_frequency(background, grid);
    } else {
        nu_.assign(grid.size(), cfg_.bgk_rate);
    }
    sqrt_mu_ = basis_.sqrt_mu();
}

std::vector<double> LinearizedOperator::apply(std::span<const double> g) const
{
    return apply_many({std::vector<double>(g.begin(), g.end())}).front();
}

std::vector<std::vector<double>> LinearizedOperator::apply_many(const std::vector<std::vector<double>>& gs) const
{
    const VelocityGrid& grid = *grid_;
    const std::size_t N = grid.size();
    for (const auto& g : gs)
        if (g.size() != N)
            throw InvalidArgument("apply_L: field length does not match the velocity grid");

    if (cfg_.mode == CollisionMode::bgk) {
        std::vector<std::vector<double>> out;
        out.reserve(gs.size());
        for (const auto& g : gs) {
            auto split = project_hydro(g, basis_, grid);
            for (auto& x : split.residual)
                x *= cfg_.bgk_rate;
            out.push_back(std::move(split.residual));
        }
        return out;
    }

    const std::size_t m = gs.size();
    const AngularQuadrature rule = cfg_.angular.folded();
    const std::size_t nw = rule.directions.size();
    const int n = grid.nodes_per_axis();
    const double h = grid.spacing();
    const int pad = collision_padding(n);

    std::vector<double> mu(N);
    for (std::size_t j = 0; j < N; ++j)
        mu[j] = sqrt_mu_[j] * sqrt_mu_[j];
    std::vector<std::vector<double>> a(m, std::vector<double>(N));
    std::vector<PaddedLog> ext, acc;
    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t j = 0; j < N; ++j)
            a[k][j] = gs[k][j] / sqrt_mu_[j];
        ext.emplace_back(a[k], n, pad, false);
        acc.emplace_back(n, pad);
    }
    const std::size_t MM = ext.front().data.size();
    std::vector<double> tmp0(MM), tmp1(MM), au(N), av(N), coef(N), weight(N);
    std::vector<char> mask_u[3], mask_v[3];

    // Pairs (u, v) = (v + d, v) with d lexicographically positive: d and -d
    // describe the same collisions, so each unordered pair is visited once and
    // carries half of W.
    for (int d0 = 0; d0 <= n - 1; ++d0)
        for (int d1 = -(n - 1); d1 <= n - 1; ++d1)
            for (int d2 = -(n - 1); d2 <= n - 1; ++d2) {
                if (d0 == 0 && (d1 < 0 || (d1 == 0 && d2 <= 0)))
                    continue;
                const int d[3] = {d0, d1, d2};
                int lo[3], hi[3];
                for (int ax = 0; ax < 3; ++ax) {
                    lo[ax] = std::max(0, -d[ax]);
                    hi[ax] = std::min(n - 1, n - 1 - d[ax]);
                }
                const std::size_t shift_d = (static_cast<std::size_t>(d0) * n + d1) * n + d2;
                for (int i = lo[0]; i <= hi[0]; ++i)
                    for (int j = lo[1]; j <= hi[1]; ++j)
                        for (int k = lo[2]; k <= hi[2]; ++k) {
                            const std::size_t v = grid.flat(i, j, k);
                            weight[v] = 0.5 * mu[v] * mu[v + shift_d];
                        }
                for (std::size_t q = 0; q < nw; ++q) {
                    const Vec3& w = rule.directions[q];
                    const double sh = d0 * w[0] + d1 * w[1] + d2 * w[2];
                    if (sh == 0.0)
                        continue;
                    const double B = rule.weights[q] * std::abs(sh) * h;
                    const double off_v[3] = {sh * w[0], sh * w[1], sh * w[2]};
                    const double off_u[3] = {d0 - off_v[0], d1 - off_v[1], d2 - off_v[2]};
                    const FixedStencil su(off_u, cfg_.interpolation), sv(off_v, cfg_.interpolation);
                    // Triples with a post-collision velocity outside the box are dropped.
                    int flo[3], fhi[3];
                    bool any = true;
                    for (int ax = 0; ax < 3; ++ax) {
                        const double lo_ok = -0.5 - std::min(off_u[ax], off_v[ax]);
                        const double hi_ok = n - 0.5 - std::max(off_u[ax], off_v[ax]);
                        flo[ax] = std::max(lo[ax], static_cast<int>(std::ceil(lo_ok)));
                        fhi[ax] = std::min(hi[ax], static_cast<int>(std::floor(hi_ok)));
                        if (flo[ax] > fhi[ax])
                            any = false;
                    }
                    if (!any)
                        continue;
                    for (std::size_t f = 0; f < m; ++f) {
                        shifted_interpolation(ext[f], su, flo, fhi, tmp0, tmp1, au);
                        shifted_interpolation(ext[f], sv, flo, fhi, tmp0, tmp1, av);
                        const std::vector<double>& af = a[f];
                        for (int i = flo[0]; i <= fhi[0]; ++i)
                            for (int j = flo[1]; j <= fhi[1]; ++j) {
                                const std::size_t row = grid.flat(i, j, 0);
                                for (int k = flo[2]; k <= fhi[2]; ++k) {
                                    const std::size_t v = row + k;
                                    coef[v] = B * weight[v] * (au[v] + av[v] - af[v + shift_d] - af[v]);
                                }
                            }
                        shifted_interpolation_adjoint(coef, su, flo, fhi, tmp0, tmp1, acc[f]);
                        shifted_interpolation_adjoint(coef, sv, flo, fhi, tmp0, tmp1, acc[f]);
                        for (int i = flo[0]; i <= fhi[0]; ++i)
                            for (int j = flo[1]; j <= fhi[1]; ++j) {
                                const std::size_t row = grid.flat(i, j, 0);
                                for (int k = flo[2]; k <= fhi[2]; ++k) {
                                    const std::size_t v = row + k;
                                    acc[f].at(i + d0 + pad, j + d1 + pad, k + d2 + pad) -= coef[v];
                                    acc[f].at(i + pad, j + pad, k + pad) -= coef[v];
                                }
                            }
                    }
                }
            }
    // (L g)_j = dE/db_j / (w_j sqrt(mu_j)); the pair weights carry w_u w_v = w^2.
    const double wq = grid.weight();
    std::vector<std::vector<double>> out(m);
    for (std::size_t f = 0; f < m; ++f) {
        out[f] = acc[f].fold();
        for (std::size_t j = 0; j < N; ++j)
            out[f][j] *= wq / sqrt_mu_[j];
    }
    return out;
}

std::vector<double> apply_L(std::span<const double> g, const LinearizedOperator& op) { return op.apply(g); }

std::vector<double> apply_Gamma(std::span<const double> g1, std::span<const double> g2,
                                const LocalMaxwellianParams& background, const VelocityGrid& grid,
                                const CollisionConfig& cfg)
{
    if (cfg.mode != CollisionMode::hard_sphere)
        throw InvalidArgument("apply_Gamma is defined for the hard-sphere operator only");
    const auto mu = eval_local_maxwellian(background, grid);
    const std::size_t N = grid.size();
    std::vector<double> F1(N), F2(N);
    for (std::size_t j = 0; j < N; ++j) {
        const double s = std::sqrt(mu[j]);
        F1[j] = s * g1[j];
        F2[j] = s * g2[j];
    }
    auto Q = collide(F1, F2, grid, cfg);
    for (std::size_t j = 0; j < N; ++j)
        Q[j] /= std::sqrt(mu[j]);
    return Q;
}

namespace {

void project_micro(std::vector<double>& x, const ChiBasis& basis, const VelocityGrid& grid)
{
    const auto c = basis.coefficients(x, grid);
    for (int i = 0; i < 5; ++i) {
        const auto& chi = basis.chi(i);
        for (std::size_t j = 0; j < x.size(); ++j)
            x[j] -= c[i] * chi[j];
    }
}

} // namespace

InvertResult invert_L(std::span<const double> r_in, const LinearizedOperator& op)
{
    const VelocityGrid& grid = op.grid();
    const ChiBasis& basis = op.basis();
    const std::size_t N = grid.size();
    if (r_in.size() != N)
        throw InvalidArgument("invert_L: field length does not match the velocity grid");
    const double rnorm = std::sqrt(inner(r_in, r_in, grid));
    InvertResult res;
    if (rnorm == 0.0) {
        res.g.assign(N, 0.0);
        return res;
    }
    for (int i = 0; i < 5; ++i) {
        const double c = inner(r_in, basis.chi(i), grid);
        if (std::abs(c) > 1e-6 * rnorm) {
            std::ostringstream os;
            os << "hydrodynamic component in L^{-1} argument: <r, chi_" << i << "> = " << c << " (|r| = " << rnorm
               << ")";
            throw NumericalError(os.str());
        }
    }
    std::vector<double> r(r_in.begin(), r_in.end());
    project_micro(r, basis, grid);

    if (op.config().mode == CollisionMode::bgk) {
        res.g = r;
        for (auto& x : res.g)
            x /= op.config().bgk_rate;
        return res;
    }

    const auto& nu = op.nu();
    std::vector<double> x(N, 0.0), resid = r, z(N), p(N);
    auto precondition = [&](const std::vector<double>& in, std::vector<double>& out) {
        for (std::size_t j = 0; j < N; ++j)
            out[j] = in[j] / nu[j];
        project_micro(out, basis, grid);
    };
    precondition(resid, z);
    p = z;
    double rz = inner(resid, z, grid);
    const double tol = op.config().krylov_tol;
    double rel = 1.0;
    int it = 0;
    for (; it < op.config().max_krylov; ++it) {
        auto q = op.apply(p);
        project_micro(q, basis, grid);
        const double pq = inner(p, q, grid);
        if (!(pq > 0.0))
            throw NumericalError("invert_L: non-positive curvature in conjugate gradients");
        const double alpha = rz / pq;
        for (std::size_t j = 0; j < N; ++j) {
            x[j] += alpha * p[j];
            resid[j] -= alpha * q[j];
        }
        rel = std::sqrt(inner(resid, resid, grid)) / rnorm;
        if (rel <= tol) {
            ++it;
            break;
        }
        precondition(resid, z);
        const double rz_new = inner(resid, z, grid);
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t j = 0; j < N; ++j)
            p[j] = z[j] + beta * p[j];
    }
    project_micro(x, basis, grid);
    // True residual of the returned iterate.
    auto Lx = op.apply(x);
    double num = 0.0;
    {
        std::vector<double> d(N);
        for (std::size_t j = 0; j < N; ++j)
            d[j] = Lx[j] - r[j];
        num = std::sqrt(inner(d, d, grid));
    }
    res.relative_residual = num / rnorm;
    res.iterations = it;
    if (res.relative_residual > 1e-8) {
        std::ostringstream os;
        os << "invert_L did not converge: relative residual " << res.relative_residual << " after " << it
           << " iterations";
        throw NumericalError(os.str());
    }
    res.g = std::move(x);
    return res;
}

std::vector<double> discrete_maxwellian(std::span<const double> F, const VelocityGrid& grid)
{
    const Moments m = moments(F, grid);
    const auto params = maxwellian_params(m);
    auto M = eval_local_maxwellian(params, grid);
    const std::vector<double> shape = M;
    enforce_moments(M, shape, m, grid);
    return M;
}

std::vector<double> bgk_relax(std::span<const double> F, const VelocityGrid& grid, double rate)
{
    if (!(rate > 0.0))
        throw InvalidArgument("bgk_relax: rate must be positive");
    const auto M = discrete_maxwellian(F, grid);
    std::vector<double> out(F.size());
    for (std::size_t j = 0; j < F.size(); ++j)
        out[j] = rate * (M[j] - F[j]);
    return out;
}

} // namespace ivpb
