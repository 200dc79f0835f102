#pragma once

// Experiment subcommands behind the CLI. Each one maps a parsed config to
// CSV artifacts in the output directory; invariant violations and bad
// configs surface as exceptions (nonzero exit in the CLI).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "iron/config.hpp"
#include "iron/csv.hpp"
#include "iron/experiments.hpp"
#include "iron/quad_exact.hpp"

namespace iron {

namespace cmd_detail {

inline std::filesystem::path prepare_output(const ExperimentConfig& cfg) {
    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "config.json", std::ios::binary);
    out << serialize_config(cfg);
    return dir;
}

inline StepOptions make_step_options(const ExperimentConfig& cfg, Eigen::Index dim) {
    StepOptions opts;
    opts.mu_dyn = cfg.dynamics.mu_dyn;
    opts.gamma_mode = parse_gamma_mode(cfg.dynamics.gamma_mode);
    opts.inner = build_inner(cfg.inner, dim);
    return opts;
}

inline std::string plane_label(int i, int j) {
    return "x" + std::to_string(i + 1) + "x" + std::to_string(j + 1);
}

inline void check_decomposition_identity(const EnsembleStats& stats, double alpha) {
    for (std::size_t k = 0; k < stats.per_iter.size(); ++k) {
        const auto& row = stats.per_iter[k];
        const double gap = std::abs(row.mse - row.bias_sq - row.cov_trace);
        if (gap > 1e-12 * std::max(row.mse, 1e-300))
            throw NumericalError("bias-variance identity violated at alpha=" +
                                 std::to_string(alpha) + ", iter=" + std::to_string(k));
    }
}

inline void write_cloud_rows(CsvWriter& clouds, double alpha, int step, const Matrix& positions,
                             std::int64_t max_particles) {
    const auto planes = coordinate_planes(positions.cols());
    const auto snap = cloud_snapshot(positions, planes);
    const Eigen::Index n =
        std::min<Eigen::Index>(positions.rows(), static_cast<Eigen::Index>(max_particles));
    for (std::size_t pl = 0; pl < planes.size(); ++pl) {
        const std::string label = plane_label(planes[pl].first, planes[pl].second);
        for (Eigen::Index p = 0; p < n; ++p)
            clouds.row({alpha, step, label, long(p), snap.points[pl](p, 0),
                        snap.points[pl](p, 1)});
    }
}

} // namespace cmd_detail

// ---------------------------------------------------------------------------
// quad-sim: per-alpha MSE decomposition series plus first/last clouds.
// ---------------------------------------------------------------------------

inline void cmd_quad_sim(const ExperimentConfig& cfg) {
    const auto built = build_objective(cfg.objective);
    if (!built.quadratic) throw ConfigError("quad-sim requires a quadratic objective");
    if (cfg.grids.alpha.empty()) throw ConfigError("quad-sim: empty alpha grid");

    const auto out = cmd_detail::prepare_output(cfg);
    const NoiseModel noise = build_noise(cfg.noise);
    EnsembleConfig ens = build_ensemble(cfg.ensemble, built.objective->dim(), cfg.threads);
    ens.snapshot_steps = {0, ens.n_steps};

    CsvWriter decomposition(out / "mse_decomposition.csv",
                            {"alpha", "iter", "mse", "bias_sq", "cov_trace"});
    CsvWriter clouds(out / "clouds.csv", {"alpha", "step", "plane", "particle", "u", "v"});

    for (double alpha : cfg.grids.alpha) {
        EnsembleRun run;
        run.alpha = alpha;
        run.gamma0 = cfg.dynamics.gamma0;
        run.run_seed = cfg.seeds.empty() ? 0 : cfg.seeds.front();
        run.step = cmd_detail::make_step_options(cfg, built.objective->dim());
        run.noise = noise;

        const auto stats = run_ensemble(ens, *built.objective, run, built.minimizer);
        cmd_detail::check_decomposition_identity(stats, alpha);
        for (std::size_t k = 0; k < stats.per_iter.size(); ++k) {
            const auto& row = stats.per_iter[k];
            decomposition.row({alpha, long(k), row.mse, row.bias_sq, row.cov_trace});
        }
        for (const auto& [step, positions] : stats.snapshots)
            cmd_detail::write_cloud_rows(clouds, alpha, step, positions,
                                         cfg.ensemble.cloud_particles);
    }
}

// ---------------------------------------------------------------------------
// quad-lyapunov: scaled stationary MSE, Monte Carlo vs exact vs asymptotic.
// ---------------------------------------------------------------------------

inline void cmd_quad_lyapunov(const ExperimentConfig& cfg) {
    const auto built = build_objective(cfg.objective);
    if (!built.quadratic) throw ConfigError("quad-lyapunov requires a quadratic objective");
    if (cfg.grids.alpha.empty()) throw ConfigError("quad-lyapunov: empty alpha grid");
    if (parse_gamma_mode(cfg.dynamics.gamma_mode) != GammaMode::fixed)
        throw ConfigError("quad-lyapunov: exact stationary curve is defined for the "
                          "fixed-gamma regime only; set dynamics.gamma_mode = \"fixed\"");
    if (cfg.noise.kind != "isotropic")
        throw ConfigError("quad-lyapunov: general covariances do not decouple in the "
                          "eigenbasis; the exact per-direction analysis requires "
                          "isotropic noise");

    const auto out = cmd_detail::prepare_output(cfg);
    const NoiseModel noise = build_noise(cfg.noise);
    const EnsembleConfig ens = build_ensemble(cfg.ensemble, built.objective->dim(), cfg.threads);
    const double c_quad = asymptotic_constant(*built.quadratic, cfg.dynamics.gamma0,
                                              cfg.noise.rho);

    CsvWriter scaled(out / "scaled_mse.csv",
                     {"alpha", "mc_scaled_mse", "mc_scaled_se", "exact_scaled_mse", "c_quad",
                      "spectral_radius_max", "warnings"});
    const double nan = std::numeric_limits<double>::quiet_NaN();

    for (double alpha : cfg.grids.alpha) {
        const auto exact = stationary_mse_exact(*built.quadratic, alpha, cfg.dynamics.gamma0,
                                                cfg.dynamics.mu_dyn, cfg.noise.rho);
        if (!exact.stable) {
            char warn[96];
            std::snprintf(warn, sizeof(warn), "unstable eigendirection a=%.6g",
                          exact.offending_eigenvalue);
            scaled.row({alpha, nan, nan, nan, c_quad, exact.max_spectral_radius, warn});
            continue;
        }

        EnsembleRun run;
        run.alpha = alpha;
        run.gamma0 = cfg.dynamics.gamma0;
        run.run_seed = cfg.seeds.empty() ? 0 : cfg.seeds.front();
        run.step = cmd_detail::make_step_options(cfg, built.objective->dim());
        run.noise = noise;

        const auto stats = run_ensemble(ens, *built.objective, run, built.minimizer);
        scaled.row({alpha, stats.scaled_mse, alpha * stats.stationary_se, alpha * exact.value,
                    c_quad, exact.max_spectral_radius, ""});
    }
}

// ---------------------------------------------------------------------------
// logreg-sweep: stationary MSE over (alpha, delta, seed) plus slope fits.
// ---------------------------------------------------------------------------

inline void cmd_logreg_sweep(const ExperimentConfig& cfg) {
    const auto built = build_objective(cfg.objective);
    if (!built.ridge_logistic) throw ConfigError("logreg-sweep requires a ridge_logistic objective");
    if (cfg.grids.alpha.empty() || cfg.grids.delta.empty())
        throw ConfigError("logreg-sweep: alpha and delta grids must be nonempty");
    if (cfg.seeds.empty()) throw ConfigError("logreg-sweep: seeds must be nonempty");

    const auto out = cmd_detail::prepare_output(cfg);
    const Vector w_star = reference_minimizer(*built.objective, 1e-12);
    {
        CsvWriter ref(out / "reference_minimizer.csv", {"index", "value"});
        for (Eigen::Index i = 0; i < w_star.size(); ++i) ref.row({long(i), w_star[i]});
    }

    const NoiseModel noise = build_noise(cfg.noise);
    const EnsembleConfig ens = build_ensemble(cfg.ensemble, built.objective->dim(), cfg.threads);
    EnsembleRun base;
    base.gamma0 = cfg.dynamics.gamma0;
    base.step = cmd_detail::make_step_options(cfg, built.objective->dim());
    base.noise = noise;

    const auto rows = tolerance_sweep(ens, *built.objective, base, cfg.grids.alpha,
                                      cfg.grids.delta, cfg.seeds, w_star);
    {
        CsvWriter mse(out / "stationary_mse.csv",
                      {"alpha", "delta", "seed", "stationary_mse", "mean_inner_iters"});
        for (const auto& r : rows)
            mse.row({r.alpha, r.delta, r.seed, r.stationary_mse, r.mean_inner_iters});
    }

    // Aggregate per (delta, alpha): mean and std error over seeds.
    const std::size_t n_alpha = cfg.grids.alpha.size();
    const std::size_t n_seeds = cfg.seeds.size();
    std::map<double, std::vector<std::vector<double>>> per_seed_curves; // delta -> [seed][alpha]
    for (double delta : cfg.grids.delta)
        per_seed_curves[delta].assign(n_seeds, std::vector<double>(n_alpha, 0.0));
    for (const auto& r : rows) {
        const auto ai = static_cast<std::size_t>(
            std::find(cfg.grids.alpha.begin(), cfg.grids.alpha.end(), r.alpha) -
            cfg.grids.alpha.begin());
        const auto si = static_cast<std::size_t>(
            std::find(cfg.seeds.begin(), cfg.seeds.end(), r.seed) - cfg.seeds.begin());
        per_seed_curves[r.delta][si][ai] = r.stationary_mse;
    }
    auto seed_mean = [&](double delta, std::size_t ai) {
        double s = 0.0;
        for (std::size_t si = 0; si < n_seeds; ++si) s += per_seed_curves[delta][si][ai];
        return s / double(n_seeds);
    };
    auto seed_se = [&](double delta, std::size_t ai) {
        if (n_seeds < 2) return 0.0;
        const double m = seed_mean(delta, ai);
        double v = 0.0;
        for (std::size_t si = 0; si < n_seeds; ++si) {
            const double d = per_seed_curves[delta][si][ai] - m;
            v += d * d;
        }
        return std::sqrt(v / double(n_seeds - 1) / double(n_seeds));
    };

    // Slope fit over the large-alpha range (config floor, or the upper half
    // of the grid in log space).
    double fit_min = cfg.grids.fit_alpha_min;
    if (fit_min <= 0.0) {
        const auto [lo, hi] =
            std::minmax_element(cfg.grids.alpha.begin(), cfg.grids.alpha.end());
        fit_min = std::sqrt(*lo * *hi);
    }
    std::vector<std::size_t> fit_idx;
    for (std::size_t ai = 0; ai < n_alpha; ++ai)
        if (cfg.grids.alpha[ai] >= fit_min) fit_idx.push_back(ai);

    {
        CsvWriter slopes(out / "slope_fit.csv", {"delta", "slope", "ci_lo", "ci_hi"});
        if (fit_idx.size() < 3) {
            std::cerr << "logreg-sweep: slope fit skipped (needs >= 3 grid points in the "
                         "fit range)\n";
        } else {
            for (double delta : cfg.grids.delta) {
                std::vector<double> alphas, means;
                std::vector<std::vector<double>> per_seed(n_seeds);
                for (std::size_t ai : fit_idx) {
                    alphas.push_back(cfg.grids.alpha[ai]);
                    means.push_back(seed_mean(delta, ai));
                    for (std::size_t si = 0; si < n_seeds; ++si)
                        per_seed[si].push_back(per_seed_curves[delta][si][ai]);
                }
                const auto fit = slope_fit(alphas, means, per_seed);
                slopes.row({delta, fit.slope, fit.ci_lo, fit.ci_hi});
            }
        }
    }

    // Departure check against the tightest tolerance: loose inner solves
    // must be visible in the scaled-MSE curves.
    {
        const double tight = *std::min_element(cfg.grids.delta.begin(), cfg.grids.delta.end());
        CsvWriter dep(out / "tolerance_departures.csv",
                      {"delta", "max_abs_departure", "max_rel_departure", "flagged"});
        for (double delta : cfg.grids.delta) {
            double max_abs = 0.0, max_rel = 0.0;
            bool flagged = false;
            for (std::size_t ai = 0; ai < n_alpha; ++ai) {
                const double m_tight = seed_mean(tight, ai);
                const double m_delta = seed_mean(delta, ai);
                const double gap = std::abs(m_delta - m_tight);
                const double combined_se = std::hypot(seed_se(delta, ai), seed_se(tight, ai));
                max_abs = std::max(max_abs, gap);
                if (m_tight > 0.0) max_rel = std::max(max_rel, gap / m_tight);
                if (gap > std::max(3.0 * combined_se, 0.25 * m_tight)) flagged = true;
            }
            dep.row({delta, max_abs, max_rel, flagged ? "yes" : "no"});
        }
    }
}

// ---------------------------------------------------------------------------
// logcosh-sim: late-time particle clouds and quantitative spread per alpha.
// ---------------------------------------------------------------------------

inline void cmd_logcosh_sim(const ExperimentConfig& cfg) {
    const auto built = build_objective(cfg.objective);
    if (cfg.objective.kind != "log_cosh")
        throw ConfigError("logcosh-sim requires a log_cosh objective");
    if (cfg.grids.alpha.empty()) throw ConfigError("logcosh-sim: empty alpha grid");

    const auto out = cmd_detail::prepare_output(cfg);
    const NoiseModel noise = build_noise(cfg.noise);
    EnsembleConfig ens = build_ensemble(cfg.ensemble, built.objective->dim(), cfg.threads);
    ens.snapshot_steps = {0, ens.n_steps};
    const auto planes = coordinate_planes(built.objective->dim());

    CsvWriter clouds(out / "clouds.csv", {"alpha", "step", "plane", "particle", "u", "v"});
    CsvWriter spread(out / "spread.csv", {"alpha", "step", "plane", "cov_trace"});

    for (double alpha : cfg.grids.alpha) {
        EnsembleRun run;
        run.alpha = alpha;
        run.gamma0 = cfg.dynamics.gamma0;
        run.run_seed = cfg.seeds.empty() ? 0 : cfg.seeds.front();
        run.step = cmd_detail::make_step_options(cfg, built.objective->dim());
        run.noise = noise;

        const auto stats = run_ensemble(ens, *built.objective, run, std::nullopt);
        if (stats.flagged_steps > 0)
            std::cerr << "logcosh-sim: alpha=" << alpha << ": " << stats.flagged_steps
                      << " inner solves hit the iteration cap\n";
        for (std::size_t k = 0; k < stats.coord_var.size(); ++k)
            for (auto [i, j] : planes)
                spread.row({alpha, long(k), cmd_detail::plane_label(i, j),
                            stats.coord_var[k][i] + stats.coord_var[k][j]});
        for (const auto& [step, positions] : stats.snapshots)
            cmd_detail::write_cloud_rows(clouds, alpha, step, positions,
                                         cfg.ensemble.cloud_particles);
    }
}

// ---------------------------------------------------------------------------
// selftest: fast invariant suite with a pass/fail table.
// ---------------------------------------------------------------------------

inline bool cmd_selftest() {
    bool all_ok = true;
    auto report = [&](const char* name, bool ok) {
        std::cout << (ok ? "[ok]   " : "[FAIL] ") << name << "\n";
        all_ok = all_ok && ok;
    };

    // Center formula equivalence: (v + tau x)/(1+tau) == x + (v-x)/(1+tau).
    {
        GaussianStream stream(11, 0, 0);
        bool ok = true;
        for (int trial = 0; trial < 100 && ok; ++trial) {
            const Vector x = stream.normal_vector(4);
            const Vector v = stream.normal_vector(4);
            const double tau = std::abs(stream.next()) + 0.1;
            const Vector lhs = (v + tau * x) / (1.0 + tau);
            const Vector rhs = x + (v - x) / (1.0 + tau);
            ok = (lhs - rhs).norm() <= 1e-14 * std::max(1.0, lhs.norm());
        }
        report("center formula equivalence", ok);
    }

    // One noiseless step on the identity quadratic, frozen hand value.
    {
        Quadratic quad(Matrix::Identity(2, 2), Vector::Zero(2));
        IronState state{Vector::Zero(2), Vector::Zero(2), 1.0, 0};
        state.x << 3.0, 0.0;
        state.v = state.x;
        StepOptions opts;
        opts.mu_dyn = 1.0;
        GaussianStream stream(0, 0, 0);
        const auto [next, rep] = outer_step(state, quad, 1.0, NoiseModel::isotropic(0.0, 0),
                                            opts, stream);
        report("one-step quadratic hand value",
               std::abs(next.x[0] - 2.25) < 1e-12 && std::abs(next.x[1]) < 1e-12);
    }

    // Resolvent contraction on random quadratics.
    {
        GaussianStream stream(21, 0, 0);
        bool ok = true;
        for (int trial = 0; trial < 100 && ok; ++trial) {
            Matrix g(3, 3);
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) g(i, j) = stream.next();
            Matrix a = g * g.transpose();
            a.diagonal().array() += 0.5;
            Quadratic quad(a, Vector::Zero(3));
            const double lambda = std::abs(stream.next()) + 0.2;
            const Vector u = stream.normal_vector(3), v = stream.normal_vector(3);
            const double lhs = (prox_quadratic_closed_form(quad, lambda, u) -
                                prox_quadratic_closed_form(quad, lambda, v))
                                   .norm();
            ok = lhs <= (u - v).norm() / (1.0 + lambda * quad.mu()) + 1e-12;
        }
        report("resolvent contraction", ok);
    }

    // Scalar recursion matches the simulated outer step, shared noise.
    {
        const double a = 2.0, alpha = 7.0, gamma = 1.0, mu = 1.0, rho = 0.3;
        const auto rec = eigen_recursion(a, alpha, gamma, mu, rho);
        Quadratic quad(Matrix::Constant(1, 1, a), Vector::Zero(1));
        IronState state{Vector::Constant(1, 1.5), Vector::Constant(1, 0.5), gamma, 0};
        double e = 1.5, w = 0.5;
        StepOptions opts;
        opts.mu_dyn = mu;
        opts.gamma_mode = GammaMode::fixed;
        const NoiseModel noise = NoiseModel::isotropic(rho, 3);
        bool ok = true;
        const std::uint64_t key = derive_stream_key(noise.seed, 0);
        for (int k = 0; k < 100 && ok; ++k) {
            GaussianStream sim_stream(key, 0, static_cast<std::uint32_t>(k));
            GaussianStream rec_stream(key, 0, static_cast<std::uint32_t>(k));
            auto [next, repu] = outer_step(state, quad, alpha, noise, opts, sim_stream);
            const double xi = std::sqrt(rec.noise_var) * rec_stream.next();
            const double e_next = rec.m(0, 0) * e + rec.m(0, 1) * w + rec.g[0] * xi;
            const double w_next = rec.m(1, 0) * e + rec.m(1, 1) * w + rec.g[1] * xi;
            state = next;
            e = e_next;
            w = w_next;
            ok = std::abs(state.x[0] - e) <= 1e-12 && std::abs(state.v[0] - w) <= 1e-12;
        }
        report("eigendirection recursion matches simulator", ok);
    }

    // Lyapunov residual on random stable instances.
    {
        GaussianStream stream(31, 0, 0);
        bool ok = true;
        for (int trial = 0; trial < 100 && ok; ++trial) {
            const double a = 0.5 + std::abs(stream.next()) * 3.0;
            const double alpha = 1.0 + std::abs(stream.next()) * 50.0;
            const auto rec = eigen_recursion(std::max(a, 0.5), alpha, 1.0, 0.5, 0.7);
            const auto cov = lyapunov_solve(rec);
            if (!cov.stable) continue;
            const Eigen::Matrix2d q = rec.noise_var * (rec.g * rec.g.transpose());
            const double residual = (cov.p - rec.m * cov.p * rec.m.transpose() - q).norm();
            ok = residual <= 1e-12 * std::max(q.norm(), 1e-300);
        }
        report("lyapunov residual", ok);
    }

    // Exact bias-variance decomposition on a small ensemble.
    {
        Quadratic quad(Matrix::Identity(3, 3), Vector::Ones(3));
        EnsembleConfig ens;
        ens.n_particles = 64;
        ens.n_steps = 30;
        ens.init.kind = InitSpec::Kind::point;
        ens.init.x0 = Vector::Constant(3, 2.0);
        ens.init.v0 = ens.init.x0;
        EnsembleRun run;
        run.alpha = 5.0;
        run.noise = NoiseModel::isotropic(0.2, 17);
        const auto stats = run_ensemble(ens, quad, run, quad.minimizer());
        bool ok = true;
        for (const auto& row : stats.per_iter)
            ok = ok && std::abs(row.mse - row.bias_sq - row.cov_trace) <=
                           1e-12 * std::max(row.mse, 1e-300);
        report("bias-variance identity", ok);
    }

    // Residual-to-error bound against a high-accuracy self-oracle.
    {
        GaussianStream stream(41, 0, 0);
        bool ok = true;
        for (int trial = 0; trial < 20 && ok; ++trial) {
            Matrix g(4, 4);
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) g(i, j) = stream.next();
            Matrix a = g * g.transpose();
            a.diagonal().array() += 0.3;
            Quadratic quad(a, stream.normal_vector(4));
            const double lambda = std::abs(stream.next()) + 0.5;
            const Vector c = stream.normal_vector(4);
            InnerConfig loose;
            loose.residual_tol = 1e-4;
            InnerConfig tight;
            tight.residual_tol = 1e-13;
            tight.max_iters = 200;
            const auto approx = solve_prox(quad, lambda, c, Vector::Zero(4), loose);
            const auto oracle = solve_prox(quad, lambda, c, Vector::Zero(4), tight);
            ok = (approx.x - oracle.x).norm() <=
                 approx.residual_norm / (1.0 + lambda * quad.mu()) + 1e-10;
        }
        report("residual-to-error bound", ok);
    }

    std::cout << (all_ok ? "selftest: all checks passed" : "selftest: FAILURES present")
              << "\n";
    return all_ok;
}

} // namespace iron
