#pragma once

// Small dense helpers: a cyclic Jacobi eigensolver for symmetric matrices
// (desk-scale n) and numerically careful summation used by the ensemble
// statistics.

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "iron/errors.hpp"

namespace iron {

struct SymmetricEigen {
    Eigen::VectorXd eigenvalues;  // ascending
    Eigen::MatrixXd eigenvectors; // columns; A = V diag(w) V^T
};

/// Cyclic Jacobi rotations for a symmetric matrix. Converges quadratically;
/// the off-diagonal Frobenius mass is driven below tol * ||A||_F.
inline SymmetricEigen jacobi_eigen_symmetric(Eigen::MatrixXd a, double tol = 1e-14,
                                             int max_sweeps = 64) {
    const Eigen::Index n = a.rows();
    if (a.cols() != n) throw InvalidInput("jacobi_eigen_symmetric: matrix must be square");

    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
    const double scale = a.norm();
    if (scale == 0.0) return {Eigen::VectorXd::Zero(n), v};

    auto off_norm = [&]() {
        double s = 0.0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) s += 2.0 * a(p, q) * a(p, q);
        return std::sqrt(s);
    };

    for (int sweep = 0; sweep < max_sweeps && off_norm() > tol * scale; ++sweep) {
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    Eigen::VectorXd w = a.diagonal();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(),
              [&](Eigen::Index i, Eigen::Index j) { return w[i] < w[j]; });

    SymmetricEigen result;
    result.eigenvalues.resize(n);
    result.eigenvectors.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        result.eigenvalues[i] = w[order[static_cast<std::size_t>(i)]];
        result.eigenvectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
    }
    return result;
}

/// Pairwise (tree) summation; error grows like log(n) rather than n.
inline double pairwise_sum(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n == 0) return 0.0;
    if (n <= 8) {
        double s = 0.0;
        for (double x : values) s += x;
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

} // namespace iron
