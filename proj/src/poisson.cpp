#include "ivpb/poisson.hpp"

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>

namespace ivpb {

Stencil parse_stencil(const std::string& s)
{
    if (s == "second_order")
        return Stencil::second_order;
    if (s == "spectral")
        return Stencil::spectral;
    throw InvalidArgument("unknown stencil '" + s + "' (expected second_order or spectral)");
}

std::string to_string(Stencil s) { return s == Stencil::spectral ? "spectral" : "second_order"; }

void EllipticSolveOptions::validate() const
{
    if (!(newton_tol > 0.0) || !(krylov_tol > 0.0))
        throw InvalidArgument("elliptic solver tolerances must be positive");
    if (max_newton < 1 || max_krylov < 1)
        throw InvalidArgument("elliptic solver iteration caps must be positive");
}

namespace {

using cplx = std::complex<double>;

// Real-to-complex transforms on the torus with cached FFTW plans.
class Fourier {
public:
    explicit Fourier(const SpatialGrid& grid) : grid_(grid)
    {
        const int d = grid.dim(), n = grid.cells_per_axis();
        real_size_ = grid.size();
        complex_size_ = real_size_ / n * (n / 2 + 1);
        std::lock_guard<std::mutex> lock(mutex());
        auto& cache = plans();
        const auto key = std::make_pair(d, n);
        auto it = cache.find(key);
        if (it == cache.end()) {
            std::vector<int> dims(d, n);
            double* in = fftw_alloc_real(real_size_);
            fftw_complex* out = fftw_alloc_complex(complex_size_);
            Plans p;
            p.forward = fftw_plan_dft_r2c(d, dims.data(), in, out, FFTW_ESTIMATE);
            p.backward = fftw_plan_dft_c2r(d, dims.data(), out, in, FFTW_ESTIMATE);
            fftw_free(in);
            fftw_free(out);
            it = cache.emplace(key, p).first;
        }
        plans_ = it->second;
    }

    std::size_t complex_size() const { return complex_size_; }

    std::vector<cplx> forward(std::span<const double> f) const
    {
        double* in = fftw_alloc_real(real_size_);
        fftw_complex* out = fftw_alloc_complex(complex_size_);
        std::copy(f.begin(), f.end(), in);
        fftw_execute_dft_r2c(plans_.forward, in, out);
        std::vector<cplx> r(complex_size_);
        for (std::size_t i = 0; i < complex_size_; ++i)
            r[i] = cplx(out[i][0], out[i][1]);
        fftw_free(in);
        fftw_free(out);
        return r;
    }

    std::vector<double> backward(const std::vector<cplx>& c) const
    {
        double* out = fftw_alloc_real(real_size_);
        fftw_complex* in = fftw_alloc_complex(complex_size_);
        for (std::size_t i = 0; i < complex_size_; ++i) {
            in[i][0] = c[i].real();
            in[i][1] = c[i].imag();
        }
        fftw_execute_dft_c2r(plans_.backward, in, out);
        std::vector<double> r(out, out + real_size_);
        const double scale = 1.0 / static_cast<double>(real_size_);
        for (auto& x : r)
            x *= scale;
        fftw_free(in);
        fftw_free(out);
        return r;
    }

    /// Signed integer wave numbers of complex entry `idx` for the active axes.
    std::array<int, 3> mode(std::size_t idx) const
    {
        const int d = grid_.dim(), n = grid_.cells_per_axis();
        const std::size_t half = static_cast<std::size_t>(n / 2 + 1);
        std::array<int, 3> m{0, 0, 0};
        m[d - 1] = static_cast<int>(idx % half);
        std::size_t rest = idx / half;
        for (int a = d - 2; a >= 0; --a) {
            const int i = static_cast<int>(rest % static_cast<std::size_t>(n));
            rest /= static_cast<std::size_t>(n);
            m[a] = i <= n / 2 ? i : i - n;
        }
        return m;
    }

private:
    struct Plans {
        fftw_plan forward;
        fftw_plan backward;
    };
    static std::mutex& mutex()
    {
        static std::mutex m;
        return m;
    }
    static std::map<std::pair<int, int>, Plans>& plans()
    {
        static std::map<std::pair<int, int>, Plans> p;
        return p;
    }

    const SpatialGrid& grid_;
    std::size_t real_size_;
    std::size_t complex_size_;
    Plans plans_{};
};

// Symbol of -Delta_h for a mode.
double minus_laplacian_symbol(const std::array<int, 3>& m, const SpatialGrid& grid, Stencil stencil)
{
    const double k0 = 2.0 * std::numbers::pi / grid.length();
    const double h = grid.spacing();
    double s = 0.0;
    for (int a = 0; a < grid.dim(); ++a) {
        const double k = k0 * m[a];
        if (stencil == Stencil::spectral)
            s += k * k;
        else
            s += (2.0 - 2.0 * std::cos(k * h)) / (h * h);
    }
    return s;
}

double inf_norm(std::span<const double> f)
{
    double m = 0.0;
    for (double x : f)
        m = std::max(m, std::abs(x));
    return m;
}

double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

} // namespace

std::vector<double> laplacian(std::span<const double> f, const SpatialGrid& grid, Stencil stencil)
{
    if (f.size() != grid.size())
        throw InvalidArgument("laplacian: field length does not match the spatial grid");
    if (stencil == Stencil::spectral) {
        const Fourier fft(grid);
        auto c = fft.forward(f);
        for (std::size_t i = 0; i < c.size(); ++i)
            c[i] *= -minus_laplacian_symbol(fft.mode(i), grid, stencil);
        return fft.backward(c);
    }
    const double ih2 = 1.0 / (grid.spacing() * grid.spacing());
    std::vector<double> out(f.size(), 0.0);
    for (std::size_t c = 0; c < f.size(); ++c) {
        double s = 0.0;
        for (int a = 0; a < grid.dim(); ++a)
            s += f[grid.shifted(c, a, 1)] - 2.0 * f[c] + f[grid.shifted(c, a, -1)];
        out[c] = s * ih2;
    }
    return out;
}

std::vector<double> derivative(std::span<const double> f, const SpatialGrid& grid, int axis, Stencil stencil)
{
    if (f.size() != grid.size())
        throw InvalidArgument("derivative: field length does not match the spatial grid");
    if (axis < 0 || axis >= grid.dim())
        return std::vector<double>(f.size(), 0.0);
    if (stencil == Stencil::spectral) {
        const Fourier fft(grid);
        auto c = fft.forward(f);
        const int n = grid.cells_per_axis();
        const double k0 = 2.0 * std::numbers::pi / grid.length();
        for (std::size_t i = 0; i < c.size(); ++i) {
            const int m = fft.mode(i)[axis];
            c[i] *= (n % 2 == 0 && std::abs(m) == n / 2) ? cplx(0.0) : cplx(0.0, k0 * m);
        }
        return fft.backward(c);
    }
    const double i2h = 0.5 / grid.spacing();
    std::vector<double> out(f.size());
    for (std::size_t c = 0; c < f.size(); ++c)
        out[c] = (f[grid.shifted(c, axis, 1)] - f[grid.shifted(c, axis, -1)]) * i2h;
    return out;
}

std::array<std::vector<double>, 3> gradient(std::span<const double> f, const SpatialGrid& grid, Stencil stencil)
{
    std::array<std::vector<double>, 3> g;
    for (int a = 0; a < 3; ++a)
        g[a] = derivative(f, grid, a, stencil);
    return g;
}

std::vector<double> poisson_residual(std::span<const double> phi, std::span<const double> rho,
                                     const SpatialGrid& grid, Stencil stencil)
{
    auto r = laplacian(phi, grid, stencil);
    for (std::size_t c = 0; c < r.size(); ++c)
        r[c] += rho[c] - std::exp(phi[c]);
    return r;
}

std::vector<double> solve_screened_poisson(std::span<const double> c, std::span<const double> rhs,
                                           const SpatialGrid& grid, const EllipticSolveOptions& opts,
                                           int* iterations)
{
    opts.validate();
    const std::size_t n = grid.size();
    if (c.size() != n || rhs.size() != n)
        throw InvalidArgument("solve_screened_poisson: field length does not match the spatial grid");
    double cbar = 0.0;
    for (double x : c) {
        if (!(x > 0.0))
            throw InvalidArgument("solve_screened_poisson: screening coefficient must be positive");
        cbar += x;
    }
    cbar /= static_cast<double>(n);

    const Fourier fft(grid);
    std::vector<double> inv_symbol(fft.complex_size());
    for (std::size_t i = 0; i < inv_symbol.size(); ++i)
        inv_symbol[i] = 1.0 / (cbar + minus_laplacian_symbol(fft.mode(i), grid, opts.stencil));
    auto precondition = [&](const std::vector<double>& r) {
        auto z = fft.forward(r);
        for (std::size_t i = 0; i < z.size(); ++i)
            z[i] *= inv_symbol[i];
        return fft.backward(z);
    };
    auto apply = [&](const std::vector<double>& u) {
        auto Au = laplacian(u, grid, opts.stencil);
        for (std::size_t i = 0; i < n; ++i)
            Au[i] = c[i] * u[i] - Au[i];
        return Au;
    };

    std::vector<double> u(n, 0.0);
    const double bnorm = std::sqrt(dot(rhs, rhs));
    if (iterations)
        *iterations = 0;
    if (bnorm == 0.0)
        return u;
    std::vector<double> r(rhs.begin(), rhs.end());
    auto z = precondition(r);
    auto p = z;
    double rz = dot(r, z);
    double rnorm = bnorm;
    for (int it = 1; it <= opts.max_krylov; ++it) {
        const auto q = apply(p);
        const double alpha = rz / dot(p, q);
        for (std::size_t i = 0; i < n; ++i) {
            u[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        rnorm = std::sqrt(dot(r, r));
        if (rnorm <= opts.krylov_tol * bnorm) {
            if (iterations)
                *iterations = it;
            return u;
        }
        z = precondition(r);
        const double rz_new = dot(r, z);
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < n; ++i)
            p[i] = z[i] + beta * p[i];
    }
    std::ostringstream os;
    os << "screened Poisson solve stalled: relative residual " << rnorm / bnorm << " after " << opts.max_krylov
       << " iterations";
    throw NumericalError(os.str());
}

namespace {

bool newton_attempt(std::span<const double> rho, const SpatialGrid& grid, const EllipticSolveOptions& opts,
                    std::vector<double>& phi, bool damped, NewtonReport& rep)
{
    const std::size_t n = grid.size();
    int growth = 0;
    double last = std::numeric_limits<double>::infinity();
    EllipticSolveOptions inner = opts;
    for (int it = 0; it <= opts.max_newton; ++it) {
        const auto r = poisson_residual(phi, rho, grid, opts.stencil);
        const double rn = inf_norm(r);
        rep.residual_history.push_back(rn);
        if (!std::isfinite(rn))
            return false;
        if (rn <= opts.newton_tol) {
            rep.iterations = it;
            return true;
        }
        growth = rn > last ? growth + 1 : 0;
        if (growth >= 3)
            return false;
        last = rn;
        if (it == opts.max_newton)
            break;
        std::vector<double> cfield(n);
        for (std::size_t i = 0; i < n; ++i)
            cfield[i] = std::exp(phi[i]);
        const auto delta = solve_screened_poisson(cfield, r, grid, inner);
        if (!damped) {
            for (std::size_t i = 0; i < n; ++i)
                phi[i] += delta[i];
            continue;
        }
        // Halve the step until the residual decreases (at most 20 halvings).
        double t = 1.0;
        std::vector<double> trial(n);
        for (int k = 0; k < 20; ++k, t *= 0.5) {
            for (std::size_t i = 0; i < n; ++i)
                trial[i] = phi[i] + t * delta[i];
            if (inf_norm(poisson_residual(trial, rho, grid, opts.stencil)) < rn)
                break;
        }
        phi = trial;
    }
    return false;
}

} // namespace

std::vector<double> solve_nonlinear_poisson(std::span<const double> rho, const SpatialGrid& grid,
                                            const EllipticSolveOptions& opts, NewtonReport* report,
                                            const std::vector<double>* initial_guess)
{
    opts.validate();
    const std::size_t n = grid.size();
    if (rho.size() != n)
        throw InvalidArgument("solve_nonlinear_poisson: field length does not match the spatial grid");
    double mean = 0.0;
    for (double x : rho) {
        if (!(x > 0.0))
            throw InvalidArgument("solve_nonlinear_poisson: density must be positive");
        mean += x;
    }
    mean /= static_cast<double>(n);
    std::vector<double> start = initial_guess ? *initial_guess : std::vector<double>(n, std::log(mean));
    if (start.size() != n)
        throw InvalidArgument("solve_nonlinear_poisson: initial guess has the wrong length");

    NewtonReport rep;
    std::vector<double> phi = start;
    if (!newton_attempt(rho, grid, opts, phi, false, rep)) {
        rep.damped_retry = true;
        phi = start;
        if (!newton_attempt(rho, grid, opts, phi, true, rep)) {
            std::ostringstream os;
            os << "nonlinear Poisson Newton iteration diverged; residual history:";
            for (double r : rep.residual_history)
                os << ' ' << r;
            throw NumericalError(os.str());
        }
    }
    if (report)
        *report = rep;
    return phi;
}

double lyapunov_density(double x)
{
    if (std::abs(x) < 0.1) {
        // sum_{k>=2} (k - 1) x^k / k!
        double sum = 0.0, xk = x * x, kfact = 2.0;
        for (int k = 2; k <= 12; ++k) {
            if (k > 2) {
                xk *= x;
                kfact *= k;
            }
            sum += (k - 1) * xk / kfact;
        }
        return sum;
    }
    return x * std::exp(x) - std::expm1(x);
}

double lyapunov_energy(std::span<const double> psi, std::span<const double> H, const SpatialGrid& grid)
{
    if (psi.size() != grid.size() || H.size() != grid.size())
        throw InvalidArgument("lyapunov_energy: field length does not match the spatial grid");
    double s = 0.0;
    for (std::size_t c = 0; c < psi.size(); ++c)
        s += H[c] * lyapunov_density(psi[c]);
    return s * grid.cell_volume();
}

double integrate_space(std::span<const double> f, const SpatialGrid& grid)
{
    double s = 0.0;
    for (double x : f)
        s += x;
    return s * grid.cell_volume();
}

} // namespace ivpb
