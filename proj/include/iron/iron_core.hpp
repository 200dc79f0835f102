#pragma once

// Outer iteration of the fully implicit inertial-resolvent scheme: derived
// step parameters, inertial center, Gaussian center noise, resolvent step,
// and the velocity/damping updates.

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "iron/errors.hpp"
#include "iron/inner_solver.hpp"
#include "iron/objectives.hpp"
#include "iron/rng.hpp"

namespace iron {

struct IronState {
    Vector x;     // position
    Vector v;     // auxiliary velocity lift; v - x is the physical velocity
    double gamma; // damping, converges to mu under the updated mode
    long k = 0;   // iteration index
};

struct StepParams {
    double alpha = 1.0;
    double tau = 0.0;    // 1/alpha + mu/gamma
    double lambda = 0.0; // alpha / (gamma * (1 + tau))
    Vector center;       // (v + tau*x) / (1 + tau)
};

/// Per-iteration derived quantities. Requires alpha >= 1 (the regime the
/// analysis covers), gamma > 0, mu > 0.
inline StepParams step_params(double alpha, double gamma, double mu, const Vector& x,
                              const Vector& v) {
    if (alpha < 1.0) throw ConfigError("step_params: alpha must be >= 1");
    if (gamma <= 0.0) throw ConfigError("step_params: gamma must be positive");
    if (mu <= 0.0) throw ConfigError("step_params: mu must be positive");
    if (x.size() != v.size()) throw InvalidInput("step_params: x/v dimension mismatch");

    StepParams p;
    p.alpha = alpha;
    p.tau = 1.0 / alpha + mu / gamma;
    p.lambda = alpha / (gamma * (1.0 + p.tau));
    p.center = (v + p.tau * x) / (1.0 + p.tau);
    return p;
}

// ---------------------------------------------------------------------------
// Diffusion noise model: isotropic rho^2 I or a general covariance factor.
// ---------------------------------------------------------------------------

struct NoiseModel {
    enum class Kind { isotropic, general };

    Kind kind = Kind::isotropic;
    double rho = 0.0;
    Matrix sigma_sqrt; // covariance factor; Sigma = sigma_sqrt * sigma_sqrt^T
    std::uint64_t seed = 0;

    static NoiseModel isotropic(double rho, std::uint64_t seed) {
        if (rho < 0.0) throw ConfigError("NoiseModel: rho must be >= 0");
        NoiseModel m;
        m.kind = Kind::isotropic;
        m.rho = rho;
        m.seed = seed;
        return m;
    }

    static NoiseModel general(Matrix sigma_sqrt, std::uint64_t seed) {
        NoiseModel m;
        m.kind = Kind::general;
        m.sigma_sqrt = std::move(sigma_sqrt);
        m.seed = seed;
        return m;
    }

    /// Variance proxy sigma^2 = tr(Sigma); n*rho^2 in the isotropic case.
    double trace_sigma(Eigen::Index n) const {
        if (kind == Kind::isotropic) return double(n) * rho * rho;
        return sigma_sqrt.squaredNorm();
    }

    bool is_silent() const { return kind == Kind::isotropic && rho == 0.0; }
};

/// Center perturbation xi = sqrt(alpha)/(1+tau) * Sigma^{1/2} * eta with eta
/// standard normal, so E||xi||^2 = alpha * tr(Sigma) / (1+tau)^2.
inline Vector sample_center_noise(const NoiseModel& model, const StepParams& params,
                                  GaussianStream& stream) {
    const Eigen::Index n = params.center.size();
    if (model.is_silent()) return Vector::Zero(n);
    const double scale = std::sqrt(params.alpha) / (1.0 + params.tau);
    if (model.kind == NoiseModel::Kind::isotropic)
        return (scale * model.rho) * stream.normal_vector(n);
    if (model.sigma_sqrt.cols() != n || model.sigma_sqrt.rows() != n)
        throw InvalidInput("sample_center_noise: sigma_sqrt dimension mismatch");
    return scale * (model.sigma_sqrt * stream.normal_vector(n));
}

// ---------------------------------------------------------------------------
// Outer step and trajectories.
// ---------------------------------------------------------------------------

enum class GammaMode { updated, fixed };

struct StepOptions {
    double mu_dyn = 1.0; // dynamics parameter in tau and the gamma update;
                         // equals the convexity modulus in theory-mode runs
    GammaMode gamma_mode = GammaMode::updated;
    bool quad_closed_form = true; // use the exact resolvent for quadratics
    InnerConfig inner{};
};

struct StepReport {
    int inner_iters = 0;
    double residual_norm = 0.0;
    int cg_iters = 0;
    bool converged = true;
    bool damped_fallback = false;
};

namespace detail {

// Lazy (I + lambda A) factorization reused while lambda stays constant.
class QuadFastPath {
public:
    Vector solve(const Quadratic& quad, double lambda, const Vector& c) {
        if (!cache_ || lambda != cached_lambda_) {
            cache_.emplace(quad, lambda);
            cached_lambda_ = lambda;
        }
        return cache_->solve(c);
    }

private:
    std::optional<QuadraticProxCache> cache_;
    double cached_lambda_ = -1.0;
};

} // namespace detail

/// One implicit resolvent step under the center-noise model. Inner-solve
/// failure is reported (converged=false, best iterate kept), not thrown, so
/// one hard particle cannot abort an ensemble.
inline std::pair<IronState, StepReport> outer_step(const IronState& state, const Objective& obj,
                                                   double alpha, const NoiseModel& noise,
                                                   const StepOptions& opts,
                                                   GaussianStream& stream,
                                                   detail::QuadFastPath* fast_path = nullptr) {
    const StepParams params = step_params(alpha, state.gamma, opts.mu_dyn, state.x, state.v);
    const Vector center_hat = params.center + sample_center_noise(noise, params, stream);

    IronState next;
    StepReport report;

    const auto* quad = opts.quad_closed_form ? dynamic_cast<const Quadratic*>(&obj) : nullptr;
    if (quad != nullptr) {
        detail::QuadFastPath local;
        next.x = (fast_path ? *fast_path : local).solve(*quad, params.lambda, center_hat);
        report.inner_iters = 1;
    } else {
        const Vector u0 = opts.inner.warm_start == WarmStart::previous_x ? state.x : center_hat;
        const InnerResult inner = solve_prox(obj, params.lambda, center_hat, u0, opts.inner);
        next.x = inner.x;
        // Cost accounting: even a warm start that already meets the tolerance
        // pays one residual evaluation, so the per-step count is at least 1.
        report.inner_iters = std::max(1, inner.iters);
        report.residual_norm = inner.residual_norm;
        report.cg_iters = inner.cg_iters_total;
        report.converged = inner.converged;
        report.damped_fallback = inner.damped_fallback;
    }

    next.v = next.x + (next.x - state.x) / alpha;
    next.gamma = opts.gamma_mode == GammaMode::updated
                     ? (state.gamma + alpha * opts.mu_dyn) / (1.0 + alpha)
                     : state.gamma;
    next.k = state.k + 1;
    return {std::move(next), report};
}

struct Trajectory {
    std::vector<IronState> states; // states[0] is the initial state
    std::vector<StepReport> reports;
};

/// Run n_steps outer steps. The stepsize schedule holds either one entry
/// (constant) or at least n_steps entries. Deterministic given (noise seed,
/// run seed, particle index, schedule, initial state).
inline Trajectory run_trajectory(const IronState& state0, const Objective& obj,
                                 const std::vector<double>& schedule, const NoiseModel& noise,
                                 const StepOptions& opts, int n_steps, std::uint64_t run_seed = 0,
                                 std::uint32_t particle_index = 0) {
    if (n_steps < 0) throw ConfigError("run_trajectory: n_steps must be >= 0");
    if (schedule.empty()) throw ConfigError("run_trajectory: empty stepsize schedule");
    if (schedule.size() > 1 && static_cast<int>(schedule.size()) < n_steps)
        throw ConfigError("run_trajectory: schedule shorter than n_steps");

    const std::uint64_t key = derive_stream_key(noise.seed, run_seed);
    detail::QuadFastPath fast_path;

    Trajectory traj;
    traj.states.reserve(static_cast<std::size_t>(n_steps) + 1);
    traj.reports.reserve(static_cast<std::size_t>(n_steps));
    traj.states.push_back(state0);

    for (int k = 0; k < n_steps; ++k) {
        const double alpha = schedule.size() == 1 ? schedule[0]
                                                  : schedule[static_cast<std::size_t>(k)];
        GaussianStream stream(key, particle_index, static_cast<std::uint32_t>(k));
        auto [next, report] = outer_step(traj.states.back(), obj, alpha, noise, opts, stream,
                                         &fast_path);
        traj.states.push_back(std::move(next));
        traj.reports.push_back(report);
    }
    return traj;
}

} // namespace iron
