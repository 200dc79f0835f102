#pragma once

// Resolvent point computation x = prox_{lambda f}(c) by Newton iteration on
// the fixed-point residual g(u) = u - c + lambda * grad f(u). Each step
// solves (I + lambda H(u)) s = -g either by a dense factorization or by
// matrix-free CG on Hessian-vector products, with optional backtracking.

#include <cmath>
#include <cstdint>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "iron/errors.hpp"
#include "iron/objectives.hpp"

namespace iron {

enum class LinearSolveKind { direct, cg };
enum class WarmStart { previous_x, center };

struct LinearSolve {
    LinearSolveKind kind = LinearSolveKind::direct;
    double cg_tol_rel = 1e-10; // relative to the Newton right-hand side
    int max_cg = 256;
};

struct InnerConfig {
    double residual_tol = 1e-10;
    int max_iters = 50;
    LinearSolve linear_solve{};
    double backtrack_beta = 0.5;
    int max_backtracks = 30;
    WarmStart warm_start = WarmStart::previous_x;

    void validate() const {
        if (residual_tol <= 0.0) throw ConfigError("inner: residual_tol must be positive");
        if (max_iters < 1) throw ConfigError("inner: max_iters must be >= 1");
        if (backtrack_beta <= 0.0 || backtrack_beta >= 1.0)
            throw ConfigError("inner: backtrack_beta must lie in (0,1)");
    }
};

struct InnerResult {
    Vector x;
    double residual_norm = 0.0;
    int iters = 0;
    int cg_iters_total = 0;
    bool converged = false;
    /// ||u - prox(c)|| <= residual_norm / (1 + lambda*mu) for mu-strongly
    /// convex objectives.
    double error_bound = 0.0;
    bool damped_fallback = false;
    bool backtrack_stalled = false;
};

/// Fixed-point residual g(u) = u - c + lambda * grad f(u); zero exactly at
/// the resolvent point.
inline Vector residual(const Objective& obj, double lambda, const Vector& c, const Vector& u) {
    if (c.size() != u.size()) throw InvalidInput("residual: center/iterate dimension mismatch");
    return u - c + lambda * obj.gradient(u);
}

namespace detail {

// Largest-eigenvalue estimate of -(I + lambda H(u)) by a few power
// iterations; used to size the damping shift when the Jacobian turns out
// indefinite. apply_j must evaluate v -> (I + lambda H(u)) v.
template <typename ApplyJ>
double negated_jacobian_top_eig(const ApplyJ& apply_j, Eigen::Index n, int iters = 5) {
    GaussianStream stream(0x1C0FFEEDULL, 0, 0, 3);
    Vector v = stream.normal_vector(n);
    v.normalize();
    double rayleigh = 0.0;
    for (int i = 0; i < iters; ++i) {
        Vector w = -apply_j(v);
        const double norm = w.norm();
        if (norm == 0.0) return 0.0;
        v = w / norm;
        rayleigh = v.dot(-apply_j(v));
    }
    return rayleigh;
}

// Damping shift per the indefiniteness estimate: eps = max(0, -lambda *
// lambda_min_hat(H) + 0.1), with lambda_min_hat recovered from the power
// iteration on -J.
inline double damping_shift(double top_eig_of_neg_j) {
    return std::max(0.0, top_eig_of_neg_j + 1.0 + 0.1);
}

struct CgOutcome {
    Vector x;
    int iters = 0;
    bool breakdown = false;
};

template <typename ApplyOp>
CgOutcome conjugate_gradient(const ApplyOp& apply, const Vector& rhs, double tol_rel,
                             int max_iters) {
    CgOutcome out;
    out.x = Vector::Zero(rhs.size());
    Vector r = rhs;
    Vector p = r;
    double rs = r.squaredNorm();
    const double threshold = std::max(tol_rel * rhs.norm(), 1e-300);
    while (out.iters < max_iters && std::sqrt(rs) > threshold) {
        const Vector ap = apply(p);
        const double pap = p.dot(ap);
        if (pap <= 1e-14 * p.squaredNorm()) {
            out.breakdown = true; // operator not positive definite here
            return out;
        }
        const double step = rs / pap;
        out.x += step * p;
        r -= step * ap;
        const double rs_next = r.squaredNorm();
        p = r + (rs_next / rs) * p;
        rs = rs_next;
        ++out.iters;
    }
    return out;
}

} // namespace detail

/// LM/Newton inner solve for the resolvent point. Returns the first iterate
/// with ||g|| <= residual_tol, or the best iterate seen when max_iters is
/// exhausted (converged=false).
inline InnerResult solve_prox(const Objective& obj, double lambda, const Vector& c,
                              const Vector& u0, const InnerConfig& cfg) {
    cfg.validate();
    if (lambda <= 0.0) throw InvalidInput("solve_prox: lambda must be positive");
    if (!u0.allFinite()) throw InvalidInput("solve_prox: non-finite warm start");
    if (u0.size() != c.size()) throw InvalidInput("solve_prox: center/start dimension mismatch");

    InnerResult result;
    Vector u = u0;
    Vector g = residual(obj, lambda, c, u);
    double gn = g.norm();
    Vector best_u = u;
    double best_gn = gn;

    const bool use_direct = cfg.linear_solve.kind == LinearSolveKind::direct;
    double shift = 0.0; // damping added to the Jacobian after a breakdown

    for (result.iters = 0;; ++result.iters) {
        if (gn <= cfg.residual_tol) {
            result.converged = true;
            best_u = u;
            best_gn = gn;
            break;
        }
        if (result.iters >= cfg.max_iters) break;

        Vector step;
        if (use_direct) {
            Matrix j = lambda * obj.hessian(u);
            j.diagonal().array() += 1.0 + shift;
            Eigen::LDLT<Matrix> ldlt(j);
            if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0) {
                const auto apply = [&](const Vector& v) -> Vector {
                    return v + lambda * obj.hvp(u, v);
                };
                shift = detail::damping_shift(
                    detail::negated_jacobian_top_eig(apply, u.size()));
                result.damped_fallback = true;
                j.diagonal().array() += shift;
                ldlt.compute(j);
                if (ldlt.info() != Eigen::Success)
                    throw NumericalError("solve_prox: damped Jacobian factorization failed");
            }
            step = ldlt.solve(-g);
        } else {
            const auto apply = [&](const Vector& v) -> Vector {
                return v + lambda * obj.hvp(u, v) + shift * v;
            };
            auto cg = detail::conjugate_gradient(apply, Vector(-g), cfg.linear_solve.cg_tol_rel,
                                                 cfg.linear_solve.max_cg);
            result.cg_iters_total += cg.iters;
            if (cg.breakdown) {
                shift = detail::damping_shift(
                    detail::negated_jacobian_top_eig(apply, u.size()));
                result.damped_fallback = true;
                cg = detail::conjugate_gradient(apply, Vector(-g), cfg.linear_solve.cg_tol_rel,
                                                cfg.linear_solve.max_cg);
                result.cg_iters_total += cg.iters;
                if (cg.breakdown)
                    throw NumericalError("solve_prox: CG breakdown persists after damping");
            }
            step = cg.x;
        }

        // Backtracking: shrink until the residual does not increase. If no
        // tested scale decreases it, keep the best trial and move on.
        Vector trial_u = u + step;
        Vector trial_g = residual(obj, lambda, c, trial_u);
        double trial_gn = trial_g.norm();
        Vector best_trial_u = trial_u;
        Vector best_trial_g = trial_g;
        double best_trial_gn = trial_gn;
        int halvings = 0;
        while (trial_gn > gn && halvings < cfg.max_backtracks) {
            step *= cfg.backtrack_beta;
            trial_u = u + step;
            trial_g = residual(obj, lambda, c, trial_u);
            trial_gn = trial_g.norm();
            if (trial_gn < best_trial_gn) {
                best_trial_u = trial_u;
                best_trial_g = trial_g;
                best_trial_gn = trial_gn;
            }
            ++halvings;
        }
        if (trial_gn > gn) {
            result.backtrack_stalled = true;
            trial_u = best_trial_u;
            trial_g = best_trial_g;
            trial_gn = best_trial_gn;
        }
        u = trial_u;
        g = trial_g;
        gn = trial_gn;
        if (gn < best_gn) {
            best_u = u;
            best_gn = gn;
        }
    }

    result.x = best_u;
    result.residual_norm = best_gn;
    result.error_bound = best_gn / (1.0 + lambda * obj.mu());
    return result;
}

/// Closed-form quadratic resolvent: x + lambda*(A x - b) = c, i.e. a dense
/// symmetric solve of (I + lambda A) x = c + lambda b. Exact and cheap; the
/// oracle for solve_prox and the fast path in quadratic ensembles.
inline Vector prox_quadratic_closed_form(const Quadratic& quad, double lambda, const Vector& c) {
    if (lambda < 0.0) throw InvalidInput("prox_quadratic_closed_form: lambda must be >= 0");
    if (c.size() != quad.dim())
        throw InvalidInput("prox_quadratic_closed_form: center dimension mismatch");
    if (lambda == 0.0) return c;
    Matrix j = lambda * quad.matrix();
    j.diagonal().array() += 1.0;
    return Eigen::LLT<Matrix>(j).solve(c + lambda * quad.rhs());
}

/// Reusable factorization of I + lambda A for ensembles that take many
/// quadratic resolvent steps at the same lambda.
class QuadraticProxCache {
public:
    QuadraticProxCache(const Quadratic& quad, double lambda)
        : shift_(lambda * quad.rhs()) {
        if (lambda < 0.0) throw InvalidInput("QuadraticProxCache: lambda must be >= 0");
        Matrix j = lambda * quad.matrix();
        j.diagonal().array() += 1.0;
        llt_.compute(j);
        if (llt_.info() != Eigen::Success)
            throw NumericalError("QuadraticProxCache: factorization failed");
    }

    Vector solve(const Vector& c) const { return llt_.solve(c + shift_); }

private:
    Vector shift_;
    Eigen::LLT<Matrix> llt_;
};

} // namespace iron
