#pragma once

// Monte Carlo ensemble driver and metrics: per-iteration MSE with an exact
// bias-variance decomposition, stationary-window averaging with particle-wise
// standard errors, log-log slope fitting, a full-batch reference minimizer,
// and tolerance sweeps.
//
// Particles run in parallel over fixed-size blocks; statistics are merged by
// a deterministic pairwise fold, so results do not depend on the thread
// count or scheduling order.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "iron/errors.hpp"
#include "iron/iron_core.hpp"
#include "iron/linalg.hpp"
#include "iron/objectives.hpp"

namespace iron {

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

struct InitSpec {
    enum class Kind { point, gaussian_ball };
    Kind kind = Kind::point;
    Vector x0, v0;  // point init
    Vector center;  // ball init; v0 = x0
    double radius = 0.0;
};

struct EnsembleConfig {
    int n_particles = 1;
    int n_steps = 100;
    double burn_in_fraction = 0.5;
    InitSpec init;
    int threads = 0; // 0 -> hardware concurrency
    std::vector<int> snapshot_steps;

    /// First recorded iteration inside the stationary window.
    int window_start() const {
        return static_cast<int>(std::floor(burn_in_fraction * double(n_steps + 1)));
    }

    void validate() const {
        if (n_particles < 1) throw ConfigError("ensemble: n_particles must be >= 1");
        if (n_steps < 0) throw ConfigError("ensemble: n_steps must be >= 0");
        if (burn_in_fraction < 0.0 || burn_in_fraction >= 1.0)
            throw ConfigError("ensemble: burn_in_fraction must lie in [0,1)");
        if (n_steps + 1 - window_start() < 10)
            throw ConfigError("ensemble: burn-in must leave >= 10 stationary samples");
        for (int s : snapshot_steps)
            if (s < 0 || s > n_steps) throw ConfigError("ensemble: snapshot step out of range");
    }
};

/// Everything that varies between runs of the same ensemble configuration.
struct EnsembleRun {
    double alpha = 1.0;
    double gamma0 = 1.0;
    std::uint64_t run_seed = 0;
    StepOptions step{};
    NoiseModel noise = NoiseModel::isotropic(0.0, 0);
};

// ---------------------------------------------------------------------------
// Results.
// ---------------------------------------------------------------------------

struct IterationStats {
    double mse = 0.0;       // (1/N) sum ||x_k - x*||^2
    double bias_sq = 0.0;   // ||mean(x_k) - x*||^2
    double cov_trace = 0.0; // tr of the empirical covariance, 1/N normalized
    double mean_inner_iters = 0.0;
};

struct EnsembleStats {
    std::vector<IterationStats> per_iter;
    std::vector<Vector> coord_var; // per-iteration per-coordinate variance

    bool has_reference = false; // x* was available; mse/bias meaningful
    double stationary_mse = std::numeric_limits<double>::quiet_NaN();
    double stationary_se = 0.0; // std error over per-particle window averages
    double scaled_mse = std::numeric_limits<double>::quiet_NaN();
    double stationary_mean_inner = 0.0;

    long flagged_steps = 0; // inner solves that hit max_iters
    long damped_fallbacks = 0;
    std::map<int, Matrix> snapshots; // step -> (n_particles x dim) positions
};

// ---------------------------------------------------------------------------
// Deterministic streaming moments (Welford + Chan merging).
// ---------------------------------------------------------------------------

namespace detail {

struct VectorMoments {
    long count = 0;
    Vector mean;
    Vector m2; // per-coordinate sum of squared deviations

    void init(Eigen::Index dim) {
        mean = Vector::Zero(dim);
        m2 = Vector::Zero(dim);
    }
    void add(const Vector& x) {
        ++count;
        const Vector delta = x - mean;
        mean += delta / double(count);
        m2 += delta.cwiseProduct(x - mean);
    }
    void merge(const VectorMoments& other) {
        if (other.count == 0) return;
        if (count == 0) {
            *this = other;
            return;
        }
        const long n = count + other.count;
        const Vector delta = other.mean - mean;
        mean += delta * (double(other.count) / double(n));
        m2 += other.m2 +
              delta.cwiseProduct(delta) * (double(count) * double(other.count) / double(n));
        count = n;
    }
};

struct ScalarMoments {
    long count = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++count;
        const double delta = x - mean;
        mean += delta / double(count);
        m2 += delta * (x - mean);
    }
    void merge(const ScalarMoments& other) {
        if (other.count == 0) return;
        if (count == 0) {
            *this = other;
            return;
        }
        const long n = count + other.count;
        const double delta = other.mean - mean;
        mean += delta * (double(other.count) / double(n));
        m2 += other.m2 + delta * delta * (double(count) * double(other.count) / double(n));
        count = n;
    }
    double variance() const { return count > 1 ? m2 / double(count - 1) : 0.0; }
};

struct BlockAccumulator {
    std::vector<VectorMoments> per_iter;   // moments of y_k = x_k - x*
    std::vector<double> sum_err_sq;        // per-iteration sum of ||y_k||^2
    std::vector<double> sum_inner;         // per-iteration sum of inner iters
    ScalarMoments window_avg;              // per-particle stationary averages
    long flagged = 0;
    long fallbacks = 0;

    void init(int n_iters, Eigen::Index dim) {
        per_iter.resize(static_cast<std::size_t>(n_iters));
        for (auto& m : per_iter) m.init(dim);
        sum_err_sq.assign(static_cast<std::size_t>(n_iters), 0.0);
        sum_inner.assign(static_cast<std::size_t>(n_iters), 0.0);
    }

    void merge(const BlockAccumulator& other) {
        for (std::size_t k = 0; k < per_iter.size(); ++k) {
            per_iter[k].merge(other.per_iter[k]);
            sum_err_sq[k] += other.sum_err_sq[k];
            sum_inner[k] += other.sum_inner[k];
        }
        window_avg.merge(other.window_avg);
        flagged += other.flagged;
        fallbacks += other.fallbacks;
    }
};

// Fixed-shape pairwise reduction over block results.
inline BlockAccumulator reduce_blocks(std::vector<BlockAccumulator>& blocks, std::size_t lo,
                                      std::size_t hi) {
    if (hi - lo == 1) return std::move(blocks[lo]);
    const std::size_t mid = lo + (hi - lo) / 2;
    BlockAccumulator left = reduce_blocks(blocks, lo, mid);
    left.merge(reduce_blocks(blocks, mid, hi));
    return left;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Ensemble runner.
// ---------------------------------------------------------------------------

inline EnsembleStats run_ensemble(const EnsembleConfig& cfg, const Objective& obj,
                                  const EnsembleRun& run,
                                  const std::optional<Vector>& x_star) {
    cfg.validate();
    run.step.inner.validate();
    const Eigen::Index dim = obj.dim();
    if (x_star && x_star->size() != dim)
        throw InvalidInput("run_ensemble: x_star dimension mismatch");
    if (cfg.init.kind == InitSpec::Kind::point) {
        if (cfg.init.x0.size() != dim || cfg.init.v0.size() != dim)
            throw ConfigError("run_ensemble: point init dimension mismatch");
    } else if (cfg.init.center.size() != dim) {
        throw ConfigError("run_ensemble: ball init dimension mismatch");
    }

    constexpr int kBlock = 256;
    const int n_iters = cfg.n_steps + 1;
    const int n_blocks = (cfg.n_particles + kBlock - 1) / kBlock;
    const int window_start = cfg.window_start();
    const std::uint64_t key = derive_stream_key(run.noise.seed, run.run_seed);

    EnsembleStats stats;
    for (int s : cfg.snapshot_steps)
        stats.snapshots.emplace(s, Matrix::Zero(cfg.n_particles, dim));

    std::vector<detail::BlockAccumulator> blocks(static_cast<std::size_t>(n_blocks));
    std::atomic<int> next_block{0};

    auto worker = [&]() {
        for (;;) {
            const int b = next_block.fetch_add(1);
            if (b >= n_blocks) return;
            auto& acc = blocks[static_cast<std::size_t>(b)];
            acc.init(n_iters, dim);
            detail::QuadFastPath fast_path;

            const int p_begin = b * kBlock;
            const int p_end = std::min(cfg.n_particles, p_begin + kBlock);
            for (int p = p_begin; p < p_end; ++p) {
                IronState state;
                if (cfg.init.kind == InitSpec::Kind::point) {
                    state.x = cfg.init.x0;
                    state.v = cfg.init.v0;
                } else {
                    GaussianStream init_stream(key, static_cast<std::uint32_t>(p), 0,
                                               GaussianStream::kDomainInit);
                    state.x = cfg.init.center + cfg.init.radius * init_stream.normal_vector(dim);
                    state.v = state.x;
                }
                state.gamma = run.gamma0;

                double window_sum = 0.0;
                for (int k = 0; k < n_iters; ++k) {
                    const Vector y = x_star ? Vector(state.x - *x_star) : state.x;
                    acc.per_iter[static_cast<std::size_t>(k)].add(y);
                    if (x_star) {
                        const double err_sq = y.squaredNorm();
                        acc.sum_err_sq[static_cast<std::size_t>(k)] += err_sq;
                        if (k >= window_start) window_sum += err_sq;
                    }
                    if (auto it = stats.snapshots.find(k); it != stats.snapshots.end())
                        it->second.row(p) = state.x.transpose();

                    if (k == cfg.n_steps) break;
                    GaussianStream stream(key, static_cast<std::uint32_t>(p),
                                          static_cast<std::uint32_t>(k));
                    auto [next, report] =
                        outer_step(state, obj, run.alpha, run.noise, run.step, stream, &fast_path);
                    state = std::move(next);
                    acc.sum_inner[static_cast<std::size_t>(k) + 1] += report.inner_iters;
                    if (!report.converged) ++acc.flagged;
                    if (report.damped_fallback) ++acc.fallbacks;
                }
                if (x_star) acc.window_avg.add(window_sum / double(n_iters - window_start));
            }
        }
    };

    int n_threads = cfg.threads > 0 ? cfg.threads
                                    : static_cast<int>(std::thread::hardware_concurrency());
    n_threads = std::max(1, std::min(n_threads, n_blocks));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(static_cast<std::size_t>(n_threads));
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }

    detail::BlockAccumulator total =
        detail::reduce_blocks(blocks, 0, static_cast<std::size_t>(n_blocks));

    const double inv_n = 1.0 / double(cfg.n_particles);
    stats.per_iter.resize(static_cast<std::size_t>(n_iters));
    stats.coord_var.resize(static_cast<std::size_t>(n_iters));
    stats.has_reference = x_star.has_value();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (int k = 0; k < n_iters; ++k) {
        const auto& m = total.per_iter[static_cast<std::size_t>(k)];
        auto& row = stats.per_iter[static_cast<std::size_t>(k)];
        row.mse = x_star ? total.sum_err_sq[static_cast<std::size_t>(k)] * inv_n : nan;
        row.bias_sq = x_star ? m.mean.squaredNorm() : nan;
        stats.coord_var[static_cast<std::size_t>(k)] = m.m2 * inv_n;
        row.cov_trace = stats.coord_var[static_cast<std::size_t>(k)].sum();
        row.mean_inner_iters = total.sum_inner[static_cast<std::size_t>(k)] * inv_n;
    }

    if (x_star) {
        stats.stationary_mse = total.window_avg.mean;
        stats.stationary_se = total.window_avg.count > 1
                                  ? std::sqrt(total.window_avg.variance() /
                                              double(total.window_avg.count))
                                  : 0.0;
        stats.scaled_mse = run.alpha * stats.stationary_mse;
    }
    {
        std::vector<double> inner_window;
        for (int k = std::max(1, window_start); k < n_iters; ++k)
            inner_window.push_back(stats.per_iter[static_cast<std::size_t>(k)].mean_inner_iters);
        if (!inner_window.empty())
            stats.stationary_mean_inner =
                pairwise_sum(inner_window) / double(inner_window.size());
    }
    stats.flagged_steps = total.flagged;
    stats.damped_fallbacks = total.fallbacks;
    return stats;
}

// ---------------------------------------------------------------------------
// Stationary averaging and slope fits.
// ---------------------------------------------------------------------------

/// Mean of the series over the post-burn-in window.
inline double stationary_average(std::span<const double> series, double burn_in_fraction) {
    if (burn_in_fraction < 0.0 || burn_in_fraction >= 1.0)
        throw ConfigError("stationary_average: burn_in_fraction must lie in [0,1)");
    const std::size_t len = series.size();
    const auto start = static_cast<std::size_t>(std::floor(burn_in_fraction * double(len)));
    if (start >= len) throw ConfigError("stationary_average: window is empty");
    const auto window = series.subspan(start);
    return pairwise_sum(window) / double(window.size());
}

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    std::vector<double> per_seed_slopes;
    double ci_lo = 0.0, ci_hi = 0.0; // 95% interval over per-seed slopes
    double alpha_min = 0.0, alpha_max = 0.0;
};

namespace detail {
inline std::pair<double, double> least_squares_line(const std::vector<double>& x,
                                                    const std::vector<double>& y) {
    const double n = double(x.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw NumericalError("slope_fit: degenerate abscissae");
    const double slope = (n * sxy - sx * sy) / denom;
    return {slope, (sy - slope * sx) / n};
}
} // namespace detail

/// Least-squares fit of log(mse) against log(alpha), per seed and then
/// aggregated; ci95 = mean +/- 1.96 * stddev / sqrt(n_seeds).
inline SlopeFit slope_fit(const std::vector<double>& alphas, const std::vector<double>& mses,
                          const std::vector<std::vector<double>>& per_seed_mses) {
    if (alphas.size() < 3) throw InvalidInput("slope_fit: need at least 3 grid points");
    if (mses.size() != alphas.size()) throw InvalidInput("slope_fit: mses/alphas size mismatch");
    for (double a : alphas)
        if (a <= 0.0) throw InvalidInput("slope_fit: alphas must be positive");
    for (double m : mses)
        if (!(m > 0.0)) throw InvalidInput("slope_fit: nonpositive mse");

    std::vector<double> log_alpha(alphas.size());
    for (std::size_t i = 0; i < alphas.size(); ++i) log_alpha[i] = std::log(alphas[i]);

    SlopeFit fit;
    const auto& seed_curves = per_seed_mses.empty()
                                  ? std::vector<std::vector<double>>{mses}
                                  : per_seed_mses;
    for (const auto& curve : seed_curves) {
        if (curve.size() != alphas.size())
            throw InvalidInput("slope_fit: per-seed curve size mismatch");
        std::vector<double> log_mse(curve.size());
        for (std::size_t i = 0; i < curve.size(); ++i) {
            if (!(curve[i] > 0.0)) throw InvalidInput("slope_fit: nonpositive mse");
            log_mse[i] = std::log(curve[i]);
        }
        fit.per_seed_slopes.push_back(detail::least_squares_line(log_alpha, log_mse).first);
    }

    const double n_seeds = double(fit.per_seed_slopes.size());
    fit.slope = pairwise_sum(fit.per_seed_slopes) / n_seeds;
    double var = 0.0;
    for (double s : fit.per_seed_slopes) var += (s - fit.slope) * (s - fit.slope);
    const double stderr_slope =
        n_seeds > 1 ? std::sqrt(var / (n_seeds - 1.0) / n_seeds) : 0.0;
    fit.ci_lo = fit.slope - 1.96 * stderr_slope;
    fit.ci_hi = fit.slope + 1.96 * stderr_slope;

    std::vector<double> log_mean(mses.size());
    for (std::size_t i = 0; i < mses.size(); ++i) log_mean[i] = std::log(mses[i]);
    fit.intercept = detail::least_squares_line(log_alpha, log_mean).second;
    fit.alpha_min = *std::min_element(alphas.begin(), alphas.end());
    fit.alpha_max = *std::max_element(alphas.begin(), alphas.end());
    return fit;
}

// ---------------------------------------------------------------------------
// Reference minimizer (deterministic full-batch Newton).
// ---------------------------------------------------------------------------

inline Vector reference_minimizer(const Objective& obj, double tol = 1e-12,
                                  int max_newton = 100) {
    if (obj.mu() <= 0.0)
        throw InvalidInput("reference_minimizer: objective must be strongly convex");
    Vector x = Vector::Zero(obj.dim());
    Vector g = obj.gradient(x);
    for (int it = 0; it < max_newton; ++it) {
        if (g.norm() <= tol) return x;
        const Matrix h = obj.hessian(x);
        Vector step = Eigen::LDLT<Matrix>(h).solve(-g);
        // Guard the Newton step; full steps are accepted in the convex basin.
        Vector x_next = x + step;
        Vector g_next = obj.gradient(x_next);
        int halvings = 0;
        while (g_next.norm() > g.norm() && halvings < 30) {
            step *= 0.5;
            x_next = x + step;
            g_next = obj.gradient(x_next);
            ++halvings;
        }
        x = std::move(x_next);
        g = std::move(g_next);
    }
    if (g.norm() <= tol) return x;
    throw NumericalError("reference_minimizer: Newton did not reach tolerance");
}

// ---------------------------------------------------------------------------
// Tolerance sweep.
// ---------------------------------------------------------------------------

struct SweepRow {
    double alpha = 0.0;
    double delta = 0.0;
    std::uint64_t seed = 0;
    double stationary_mse = 0.0;
    double stationary_se = 0.0;
    double mean_inner_iters = 0.0;
    long flagged_steps = 0;
};

/// Full (alpha, delta, seed) cross product of ensemble runs.
inline std::vector<SweepRow> tolerance_sweep(const EnsembleConfig& cfg, const Objective& obj,
                                             const EnsembleRun& base,
                                             const std::vector<double>& alpha_grid,
                                             const std::vector<double>& delta_grid,
                                             const std::vector<std::uint64_t>& seeds,
                                             const Vector& x_star) {
    if (alpha_grid.empty() || delta_grid.empty() || seeds.empty())
        throw ConfigError("tolerance_sweep: grids and seeds must be nonempty");
    std::vector<SweepRow> rows;
    for (double delta : delta_grid) {
        for (double alpha : alpha_grid) {
            for (std::uint64_t seed : seeds) {
                EnsembleRun run = base;
                run.alpha = alpha;
                run.run_seed = seed;
                run.step.inner.residual_tol = delta;
                const auto stats = run_ensemble(cfg, obj, run, x_star);
                rows.push_back({alpha, delta, seed, stats.stationary_mse, stats.stationary_se,
                                stats.stationary_mean_inner, stats.flagged_steps});
            }
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Cloud snapshots.
// ---------------------------------------------------------------------------

struct CloudSnapshot {
    std::vector<std::pair<int, int>> planes;
    std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>> points; // per plane
    std::vector<double> spread; // per-plane trace of the empirical covariance
};

inline std::vector<std::pair<int, int>> coordinate_planes(Eigen::Index dim) {
    std::vector<std::pair<int, int>> planes;
    for (int i = 0; i < dim; ++i)
        for (int j = i + 1; j < dim; ++j) planes.emplace_back(i, j);
    return planes;
}

/// Project ensemble positions onto coordinate planes and report the
/// per-plane covariance trace (1/N normalization).
inline CloudSnapshot cloud_snapshot(const Matrix& positions,
                                    const std::vector<std::pair<int, int>>& planes) {
    if (positions.cols() < 2) throw InvalidInput("cloud_snapshot: need dimension >= 2");
    CloudSnapshot snap;
    snap.planes = planes;
    const double inv_n = 1.0 / double(positions.rows());
    for (auto [i, j] : planes) {
        if (i < 0 || j < 0 || i >= positions.cols() || j >= positions.cols())
            throw InvalidInput("cloud_snapshot: plane index out of range");
        Eigen::Matrix<double, Eigen::Dynamic, 2> pts(positions.rows(), 2);
        pts.col(0) = positions.col(i);
        pts.col(1) = positions.col(j);
        const double mi = pts.col(0).mean();
        const double mj = pts.col(1).mean();
        const double var =
            ((pts.col(0).array() - mi).square().sum() + (pts.col(1).array() - mj).square().sum()) *
            inv_n;
        snap.points.push_back(std::move(pts));
        snap.spread.push_back(var);
    }
    return snap;
}

} // namespace iron
