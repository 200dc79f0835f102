#pragma once

// Objective abstraction and the three concrete test objectives: a strongly
// convex quadratic, ridge-regularized binary logistic regression, and a
// mildly nonconvex log-cosh regression. All objectives are immutable after
// construction and safe to share across threads.

#include <cmath>
#include <memory>
#include <mutex>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "iron/errors.hpp"
#include "iron/linalg.hpp"
#include "iron/rng.hpp"

namespace iron {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class Objective {
public:
    virtual ~Objective() = default;

    virtual Eigen::Index dim() const = 0;
    /// Strong-convexity modulus; 0 for nonconvex objectives.
    virtual double mu() const = 0;

    virtual double value(const Vector& x) const = 0;
    virtual Vector gradient(const Vector& x) const = 0;
    /// Exact Hessian-vector product H(x) * p.
    virtual Vector hvp(const Vector& x, const Vector& p) const = 0;

    /// Dense Hessian; used by direct inner solves and the reference Newton
    /// solver. Default assembles columns through hvp.
    virtual Matrix hessian(const Vector& x) const {
        const Eigen::Index n = dim();
        Matrix h(n, n);
        Vector e = Vector::Zero(n);
        for (Eigen::Index j = 0; j < n; ++j) {
            e[j] = 1.0;
            h.col(j) = hvp(x, e);
            e[j] = 0.0;
        }
        return h;
    }

protected:
    void check_dim(const Vector& x, const char* where) const {
        if (x.size() != dim())
            throw InvalidInput(std::string(where) + ": expected dimension " +
                               std::to_string(dim()) + ", got " + std::to_string(x.size()));
    }
};

// ---------------------------------------------------------------------------
// Quadratic: f(x) = 1/2 x^T A x - b^T x, A symmetric positive definite.
// ---------------------------------------------------------------------------

class Quadratic final : public Objective {
public:
    Quadratic(Matrix a, Vector b) : a_(std::move(a)), b_(std::move(b)) {
        if (a_.rows() != a_.cols()) throw InvalidInput("Quadratic: A must be square");
        if (b_.size() != a_.rows()) throw InvalidInput("Quadratic: b dimension mismatch");
        const double scale = a_.norm();
        if ((a_ - a_.transpose()).norm() > 1e-12 * std::max(scale, 1.0))
            throw InvalidInput("Quadratic: A must be symmetric");
        a_ = 0.5 * (a_ + a_.transpose().eval()); // kill roundoff asymmetry
        Eigen::LLT<Matrix> llt(a_);
        if (llt.info() != Eigen::Success)
            throw InvalidInput("Quadratic: A must be positive definite");
        x_star_ = llt.solve(b_);
    }

    Eigen::Index dim() const override { return a_.rows(); }
    double mu() const override { return eigen().eigenvalues[0]; }

    double value(const Vector& x) const override {
        check_dim(x, "Quadratic::value");
        return 0.5 * x.dot(a_ * x) - b_.dot(x);
    }
    Vector gradient(const Vector& x) const override {
        check_dim(x, "Quadratic::gradient");
        return a_ * x - b_;
    }
    Vector hvp(const Vector& x, const Vector& p) const override {
        check_dim(x, "Quadratic::hvp");
        check_dim(p, "Quadratic::hvp");
        return a_ * p;
    }
    Matrix hessian(const Vector&) const override { return a_; }

    const Matrix& matrix() const { return a_; }
    const Vector& rhs() const { return b_; }
    const Vector& minimizer() const { return x_star_; }

    /// Eigendecomposition (cyclic Jacobi), computed on first use.
    const SymmetricEigen& eigen() const {
        std::call_once(eigen_once_, [this] { eigen_ = jacobi_eigen_symmetric(a_); });
        return eigen_;
    }

private:
    Matrix a_;
    Vector b_;
    Vector x_star_;
    mutable SymmetricEigen eigen_;
    mutable std::once_flag eigen_once_;
};

// ---------------------------------------------------------------------------
// RidgeLogistic: f(w) = (1/n) sum log(1 + exp(-y_i a_i^T w)) + reg/2 ||w||^2.
// ---------------------------------------------------------------------------

namespace detail {
/// log(1 + exp(t)) without overflow for |t| > 700.
inline double softplus(double t) {
    return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}
/// sigma(z) * (1 - sigma(z)), evaluated through exp(-|z|).
inline double sigmoid_slope(double z) {
    const double e = std::exp(-std::abs(z));
    const double d = 1.0 + e;
    return e / (d * d);
}
inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}
} // namespace detail

class RidgeLogistic final : public Objective {
public:
    RidgeLogistic(Matrix features, Vector labels, double lambda_reg)
        : features_(std::move(features)), labels_(std::move(labels)), lambda_(lambda_reg) {
        if (labels_.size() != features_.rows())
            throw InvalidInput("RidgeLogistic: labels/features row mismatch");
        if (lambda_ <= 0.0) throw InvalidInput("RidgeLogistic: lambda_reg must be positive");
        for (Eigen::Index i = 0; i < labels_.size(); ++i)
            if (labels_[i] != 1.0 && labels_[i] != -1.0)
                throw InvalidInput("RidgeLogistic: labels must be +/-1");
    }

    Eigen::Index dim() const override { return features_.cols(); }
    double mu() const override { return lambda_; }
    double lambda_reg() const { return lambda_; }
    Eigen::Index n_samples() const { return features_.rows(); }

    double value(const Vector& w) const override {
        check_dim(w, "RidgeLogistic::value");
        const Vector z = labels_.cwiseProduct(features_ * w);
        double loss = 0.0;
        for (Eigen::Index i = 0; i < z.size(); ++i) loss += detail::softplus(-z[i]);
        return loss / double(n_samples()) + 0.5 * lambda_ * w.squaredNorm();
    }

    Vector gradient(const Vector& w) const override {
        check_dim(w, "RidgeLogistic::gradient");
        const Vector z = labels_.cwiseProduct(features_ * w);
        Vector coeff(z.size());
        for (Eigen::Index i = 0; i < z.size(); ++i)
            coeff[i] = -labels_[i] * detail::sigmoid(-z[i]);
        return features_.transpose() * coeff / double(n_samples()) + lambda_ * w;
    }

    Vector hvp(const Vector& w, const Vector& p) const override {
        check_dim(w, "RidgeLogistic::hvp");
        check_dim(p, "RidgeLogistic::hvp");
        const Vector z = labels_.cwiseProduct(features_ * w);
        Vector d(z.size());
        for (Eigen::Index i = 0; i < z.size(); ++i) d[i] = detail::sigmoid_slope(z[i]);
        const Vector xp = features_ * p;
        return features_.transpose() * d.cwiseProduct(xp) / double(n_samples()) + lambda_ * p;
    }

    Matrix hessian(const Vector& w) const override {
        check_dim(w, "RidgeLogistic::hessian");
        const Vector z = labels_.cwiseProduct(features_ * w);
        Vector d(z.size());
        for (Eigen::Index i = 0; i < z.size(); ++i) d[i] = detail::sigmoid_slope(z[i]);
        Matrix h = features_.transpose() * d.asDiagonal() * features_ / double(n_samples());
        h.diagonal().array() += lambda_;
        return h;
    }

private:
    Matrix features_;
    Vector labels_;
    double lambda_;
};

// ---------------------------------------------------------------------------
// LogCosh: f(x) = 1/2 ||A u(x) - b||^2 with u_i(x) = log cosh(x_i).
// Nonconvex; gradient (Q u(x) - c) .* tanh(x) with Q = A^T A, c = A^T b.
// ---------------------------------------------------------------------------

namespace detail {
/// log cosh without overflow: |x| + log1p(exp(-2|x|)) - log 2.
inline double log_cosh(double x) {
    const double ax = std::abs(x);
    return ax + std::log1p(std::exp(-2.0 * ax)) - std::numbers::ln2;
}
} // namespace detail

class LogCosh final : public Objective {
public:
    LogCosh(Matrix a, Vector b) : a_(std::move(a)), b_(std::move(b)) {
        if (b_.size() != a_.rows()) throw InvalidInput("LogCosh: b dimension mismatch");
        q_ = a_.transpose() * a_;
        c_ = a_.transpose() * b_;
    }

    Eigen::Index dim() const override { return a_.cols(); }
    double mu() const override { return 0.0; }

    double value(const Vector& x) const override {
        check_dim(x, "LogCosh::value");
        return 0.5 * (a_ * features(x) - b_).squaredNorm();
    }

    Vector gradient(const Vector& x) const override {
        check_dim(x, "LogCosh::gradient");
        const Vector t = x.array().tanh();
        return (q_ * features(x) - c_).cwiseProduct(t);
    }

    Vector hvp(const Vector& x, const Vector& p) const override {
        check_dim(x, "LogCosh::hvp");
        check_dim(p, "LogCosh::hvp");
        const Vector t = x.array().tanh();
        const Vector g = q_ * features(x) - c_;
        const Vector sech2 = 1.0 - t.array().square();
        return t.cwiseProduct(q_ * t.cwiseProduct(p)) + g.cwiseProduct(sech2).cwiseProduct(p);
    }

    Matrix hessian(const Vector& x) const override {
        check_dim(x, "LogCosh::hessian");
        const Vector t = x.array().tanh();
        const Vector g = q_ * features(x) - c_;
        const Vector sech2 = 1.0 - t.array().square();
        Matrix h = t.asDiagonal() * q_ * t.asDiagonal();
        h.diagonal() += g.cwiseProduct(sech2);
        return h;
    }

    const Matrix& design() const { return a_; }
    const Vector& target() const { return b_; }

private:
    Vector features(const Vector& x) const {
        Vector u(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) u[i] = detail::log_cosh(x[i]);
        return u;
    }

    Matrix a_;
    Vector b_;
    Matrix q_;
    Vector c_;
};

// ---------------------------------------------------------------------------
// Synthetic ridge-logistic data: standard-normal features, labels drawn from
// the logistic model at a fixed true weight vector.
// ---------------------------------------------------------------------------

struct SyntheticLogistic {
    std::shared_ptr<RidgeLogistic> objective;
    Vector true_weights;
};

inline SyntheticLogistic make_synthetic_logistic(Eigen::Index n_samples, Eigen::Index dim,
                                                 double lambda_reg, std::uint64_t data_seed) {
    if (n_samples < 1 || dim < 1) throw InvalidInput("make_synthetic_logistic: bad sizes");
    const std::uint64_t key = derive_stream_key(data_seed, 0);

    GaussianStream feature_stream(key, 0, 0, GaussianStream::kDomainData);
    Matrix features(n_samples, dim);
    for (Eigen::Index i = 0; i < n_samples; ++i)
        for (Eigen::Index j = 0; j < dim; ++j) features(i, j) = feature_stream.next();

    GaussianStream weight_stream(key, 1, 0, GaussianStream::kDomainData);
    Vector w_true = weight_stream.normal_vector(dim);
    w_true *= 3.0 / w_true.norm(); // fixed signal strength

    GaussianStream label_stream(key, 2, 0, GaussianStream::kDomainData);
    Vector labels(n_samples);
    for (Eigen::Index i = 0; i < n_samples; ++i) {
        const double p = detail::sigmoid(features.row(i).dot(w_true));
        labels[i] = label_stream.uniform() < p ? 1.0 : -1.0;
    }

    return {std::make_shared<RidgeLogistic>(std::move(features), std::move(labels), lambda_reg),
            std::move(w_true)};
}

} // namespace iron
