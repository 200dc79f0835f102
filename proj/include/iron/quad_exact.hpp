#pragma once

// Exact stationary analysis for quadratics in the fixed-damping regime.
// Each eigendirection of A follows an exact 2x2 linear stochastic recursion
// whose stationary covariance solves a discrete Lyapunov equation; summing
// the position entries over directions gives the exact stationary MSE.

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "iron/errors.hpp"
#include "iron/objectives.hpp"

namespace iron {

struct EigenRecursion {
    double a = 1.0; // eigenvalue of A along this direction
    double alpha = 1.0, gamma = 1.0, mu = 1.0, rho = 0.0;
    double tau = 0.0, s = 0.0;      // s = 1 + tau
    double lambda = 0.0, r = 0.0;   // r = 1/(1 + lambda*a), the resolvent gain
    Eigen::Matrix2d m;              // transition matrix of (e_k, w_k)
    Eigen::Vector2d g;              // noise injection vector
    double noise_var = 0.0;         // Var(xi) = alpha*rho^2/s^2
};

/// Coefficients of the per-eigendirection state-space recursion
/// z_{k+1} = M z_k + g xi_k.
inline EigenRecursion eigen_recursion(double a, double alpha, double gamma, double mu,
                                      double rho) {
    if (mu <= 0.0) throw InvalidInput("eigen_recursion: mu must be positive");
    if (a < mu * (1.0 - 1e-12)) throw InvalidInput("eigen_recursion: requires a >= mu");
    if (alpha < 1.0) throw InvalidInput("eigen_recursion: alpha must be >= 1");
    if (gamma <= 0.0) throw InvalidInput("eigen_recursion: gamma must be positive");
    if (rho < 0.0) throw InvalidInput("eigen_recursion: rho must be >= 0");

    EigenRecursion rec;
    rec.a = a;
    rec.alpha = alpha;
    rec.gamma = gamma;
    rec.mu = mu;
    rec.rho = rho;
    rec.tau = 1.0 / alpha + mu / gamma;
    rec.s = 1.0 + rec.tau;
    rec.lambda = alpha / (gamma * rec.s);
    rec.r = 1.0 / (1.0 + rec.lambda * a);

    const double a1 = rec.r * rec.tau / rec.s;
    const double b1 = rec.r / rec.s;
    const double lift = 1.0 + 1.0 / alpha;
    rec.m << a1, b1, lift * a1 - 1.0 / alpha, lift * b1;
    rec.g << rec.r, rec.r * lift;
    rec.noise_var = alpha * rho * rho / (rec.s * rec.s);
    return rec;
}

/// Exact spectral radius of a 2x2 matrix via trace and determinant.
inline double spectral_radius_2x2(const Eigen::Matrix2d& m) {
    const double tr = m.trace();
    const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    const double disc = tr * tr - 4.0 * det;
    if (disc >= 0.0) {
        const double root = std::sqrt(disc);
        return std::max(std::abs(tr + root), std::abs(tr - root)) / 2.0;
    }
    return std::sqrt(det); // complex pair, |eig| = sqrt(det)
}

namespace detail {

// Dense 3x3 solve by Gaussian elimination with partial pivoting.
inline std::array<double, 3> solve_3x3(std::array<std::array<double, 3>, 3> m,
                                       std::array<double, 3> b) {
    for (int col = 0; col < 3; ++col) {
        int pivot = col;
        for (int row = col + 1; row < 3; ++row)
            if (std::abs(m[row][col]) > std::abs(m[pivot][col])) pivot = row;
        if (std::abs(m[pivot][col]) < 1e-300)
            throw NumericalError("lyapunov_solve: degenerate 3x3 moment system");
        std::swap(m[col], m[pivot]);
        std::swap(b[col], b[pivot]);
        for (int row = col + 1; row < 3; ++row) {
            const double f = m[row][col] / m[col][col];
            for (int j = col; j < 3; ++j) m[row][j] -= f * m[col][j];
            b[row] -= f * b[col];
        }
    }
    std::array<double, 3> x{};
    for (int row = 2; row >= 0; --row) {
        double acc = b[row];
        for (int j = row + 1; j < 3; ++j) acc -= m[row][j] * x[j];
        x[row] = acc / m[row][row];
    }
    return x;
}

} // namespace detail

struct StationaryCovariance {
    Eigen::Matrix2d p = Eigen::Matrix2d::Zero(); // valid only when stable
    double spectral_radius = 0.0;
    bool stable = false;
};

/// Solve P = M P M^T + Q through the explicit 3x3 linear system for
/// (p11, p12, p22). Instability is a result, not an exception.
inline StationaryCovariance lyapunov_solve(const Eigen::Matrix2d& m, const Eigen::Matrix2d& q) {
    StationaryCovariance out;
    out.spectral_radius = spectral_radius_2x2(m);
    if (out.spectral_radius >= 1.0) return out;

    const double a1 = m(0, 0), b1 = m(0, 1), c1 = m(1, 0), d1 = m(1, 1);
    const std::array<std::array<double, 3>, 3> system{{
        {1.0 - a1 * a1, -2.0 * a1 * b1, -b1 * b1},
        {-a1 * c1, 1.0 - (a1 * d1 + b1 * c1), -b1 * d1},
        {-c1 * c1, -2.0 * c1 * d1, 1.0 - d1 * d1},
    }};
    const auto p = detail::solve_3x3(system, {q(0, 0), q(0, 1), q(1, 1)});
    out.p << p[0], p[1], p[1], p[2];
    out.stable = true;
    return out;
}

inline StationaryCovariance lyapunov_solve(const EigenRecursion& rec) {
    const Eigen::Matrix2d q = rec.noise_var * (rec.g * rec.g.transpose());
    return lyapunov_solve(rec.m, q);
}

struct StationaryMseResult {
    bool stable = false;
    double value = 0.0;                 // tr(P_xx) = sum of per-direction p11
    double max_spectral_radius = 0.0;
    double offending_eigenvalue = 0.0;  // set when some direction is unstable
};

/// Exact stationary position MSE, summed over eigendirections of A.
inline StationaryMseResult stationary_mse_exact(const Quadratic& quad, double alpha, double gamma,
                                                double mu, double rho) {
    StationaryMseResult out;
    const auto& eig = quad.eigen();
    for (Eigen::Index i = 0; i < eig.eigenvalues.size(); ++i) {
        const auto cov = lyapunov_solve(eigen_recursion(eig.eigenvalues[i], alpha, gamma, mu, rho));
        out.max_spectral_radius = std::max(out.max_spectral_radius, cov.spectral_radius);
        if (!cov.stable) {
            out.stable = false;
            out.offending_eigenvalue = eig.eigenvalues[i];
            out.value = 0.0;
            return out;
        }
        out.value += cov.p(0, 0);
    }
    out.stable = true;
    return out;
}

/// Asymptotic stationary constant gamma^2 * rho^2 * tr(A^{-2}); the limit of
/// alpha * MSE_inf as alpha grows.
inline double asymptotic_constant(const Quadratic& quad, double gamma, double rho) {
    const auto& eig = quad.eigen();
    double trace_inv_sq = 0.0;
    for (Eigen::Index i = 0; i < eig.eigenvalues.size(); ++i)
        trace_inv_sq += 1.0 / (eig.eigenvalues[i] * eig.eigenvalues[i]);
    return gamma * gamma * rho * rho * trace_inv_sq;
}

struct StabilityRow {
    double alpha = 0.0;
    std::vector<double> radii; // per eigendirection, ascending eigenvalue order
    double max_radius = 0.0;
    bool all_stable = false;
};

struct StabilityTable {
    std::vector<StabilityRow> rows;
    std::optional<double> smallest_stable_alpha;
};

/// Spectral radius of M per direction over an ascending alpha grid; flags the
/// smallest grid alpha with every direction stable. Independent of rho.
inline StabilityTable stability_threshold(const Quadratic& quad, double gamma, double mu,
                                          const std::vector<double>& alpha_grid) {
    for (std::size_t i = 1; i < alpha_grid.size(); ++i)
        if (alpha_grid[i] <= alpha_grid[i - 1])
            throw ConfigError("stability_threshold: alpha grid must ascend");

    StabilityTable table;
    const auto& eig = quad.eigen();
    for (double alpha : alpha_grid) {
        StabilityRow row;
        row.alpha = alpha;
        row.all_stable = true;
        for (Eigen::Index i = 0; i < eig.eigenvalues.size(); ++i) {
            const auto rec = eigen_recursion(eig.eigenvalues[i], alpha, gamma, mu, 0.0);
            const double radius = spectral_radius_2x2(rec.m);
            row.radii.push_back(radius);
            row.max_radius = std::max(row.max_radius, radius);
            row.all_stable = row.all_stable && radius < 1.0;
        }
        if (row.all_stable && !table.smallest_stable_alpha)
            table.smallest_stable_alpha = alpha;
        table.rows.push_back(std::move(row));
    }
    return table;
}

} // namespace iron
