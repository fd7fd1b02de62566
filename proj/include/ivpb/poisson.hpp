#pragma once

#include "ivpb/grid.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace ivpb {

/// Discretization of the spatial derivatives on the torus.
///   second_order: centered 3-point Laplacian, centered gradient
///   spectral:     Fourier symbols (-|k|^2, i k), Nyquist derivative zeroed
enum class Stencil { second_order, spectral };

Stencil parse_stencil(const std::string& s);
std::string to_string(Stencil s);

struct EllipticSolveOptions {
    double newton_tol = 1e-11;
    int max_newton = 30;
    double krylov_tol = 1e-12;
    int max_krylov = 200;
    Stencil stencil = Stencil::second_order;

    void validate() const;
};

std::vector<double> laplacian(std::span<const double> f, const SpatialGrid& grid, Stencil stencil);
/// Gradient components for the active axes; inactive components are zero.
std::array<std::vector<double>, 3> gradient(std::span<const double> f, const SpatialGrid& grid, Stencil stencil);
/// Derivative along one axis.
std::vector<double> derivative(std::span<const double> f, const SpatialGrid& grid, int axis, Stencil stencil);

struct NewtonReport {
    int iterations = 0;
    bool damped_retry = false;
    std::vector<double> residual_history; // infinity norm before each update
};

/// Solves Delta_h phi = e^phi - rho by Newton's method with Jacobian
/// (e^phi - Delta_h). Starts from `initial_guess` when given, else from
/// log(mean rho). A residual that grows three times in a row triggers one
/// retry with step halving; a second failure throws NumericalError.
std::vector<double> solve_nonlinear_poisson(std::span<const double> rho, const SpatialGrid& grid,
                                            const EllipticSolveOptions& opts, NewtonReport* report = nullptr,
                                            const std::vector<double>* initial_guess = nullptr);

/// Residual Delta_h phi - e^phi + rho.
std::vector<double> poisson_residual(std::span<const double> phi, std::span<const double> rho,
                                     const SpatialGrid& grid, Stencil stencil);

/// Solves (c - Delta_h) u = rhs by conjugate gradients preconditioned with the
/// Fourier inverse of (mean(c) - Delta_h).
std::vector<double> solve_screened_poisson(std::span<const double> c, std::span<const double> rhs,
                                           const SpatialGrid& grid, const EllipticSolveOptions& opts,
                                           int* iterations = nullptr);

/// x e^x - e^x + 1, accurate near x = 0.
double lyapunov_density(double x);

/// sum_cells H (psi e^psi - e^psi + 1) * cell_volume.
double lyapunov_energy(std::span<const double> psi, std::span<const double> H, const SpatialGrid& grid);

/// Plain quadrature over the torus: sum_cells f * cell_volume.
double integrate_space(std::span<const double> f, const SpatialGrid& grid);

} // namespace ivpb
