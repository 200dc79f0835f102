#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "iron/experiments.hpp"
#include "iron/quad_exact.hpp"

using namespace iron;

namespace {

Quadratic benchmark_quadratic() {
    Vector eigs(3);
    eigs << 1.0, 1.0, 3.0;
    return Quadratic(Matrix(eigs.asDiagonal()), Vector::Ones(3));
}

EnsembleConfig small_config(const Vector& x0, int particles = 256, int steps = 60) {
    EnsembleConfig cfg;
    cfg.n_particles = particles;
    cfg.n_steps = steps;
    cfg.burn_in_fraction = 0.5;
    cfg.init.kind = InitSpec::Kind::point;
    cfg.init.x0 = x0;
    cfg.init.v0 = x0;
    return cfg;
}

} // namespace

TEST_CASE("stationary_average examples") {
    const std::vector<double> constant(20, 3.5);
    CHECK(stationary_average(constant, 0.5) == Catch::Approx(3.5));

    std::vector<double> ramp(10);
    std::iota(ramp.begin(), ramp.end(), 1.0); // 1..10
    CHECK(stationary_average(ramp, 0.5) == Catch::Approx(8.0));

    // A decaying series averages between the window extremes.
    std::vector<double> decay(40);
    for (std::size_t i = 0; i < decay.size(); ++i) decay[i] = 1.0 / double(i + 1);
    const double avg = stationary_average(decay, 0.25);
    CHECK(avg <= 1.0 / 11.0);
    CHECK(avg >= 1.0 / 40.0);

    CHECK_THROWS_AS(stationary_average(std::vector<double>{}, 0.5), ConfigError);
    CHECK_THROWS_AS(stationary_average(constant, 1.0), ConfigError);
}

TEST_CASE("slope_fit recovers exact power laws") {
    const std::vector<double> alphas{10.0, 40.0, 160.0, 640.0};
    std::vector<double> inverse, flat;
    for (double a : alphas) {
        inverse.push_back(7.3 / a);
        flat.push_back(0.42);
    }
    const auto fit_inv = slope_fit(alphas, inverse, {inverse});
    CHECK(fit_inv.slope == Catch::Approx(-1.0).margin(1e-12));
    const auto fit_flat = slope_fit(alphas, flat, {flat});
    CHECK(fit_flat.slope == Catch::Approx(0.0).margin(1e-12));
    CHECK(fit_flat.alpha_min == 10.0);
    CHECK(fit_flat.alpha_max == 640.0);
}

TEST_CASE("slope_fit aggregates per-seed slopes with a bracketing interval") {
    const std::vector<double> alphas{10.0, 100.0, 1000.0};
    std::vector<std::vector<double>> per_seed;
    for (double c : {1.0, 2.0, 4.0}) {
        std::vector<double> curve;
        for (double a : alphas) curve.push_back(c / a);
        per_seed.push_back(curve);
    }
    const auto fit = slope_fit(alphas, per_seed[0], per_seed);
    REQUIRE(fit.per_seed_slopes.size() == 3);
    const double mean = (fit.per_seed_slopes[0] + fit.per_seed_slopes[1] +
                         fit.per_seed_slopes[2]) /
                        3.0;
    CHECK(fit.ci_lo <= mean);
    CHECK(fit.ci_hi >= mean);
    CHECK(fit.slope == Catch::Approx(mean));
}

TEST_CASE("slope_fit input validation") {
    CHECK_THROWS_AS(slope_fit({1.0, 2.0}, {1.0, 0.5}, {}), InvalidInput);
    CHECK_THROWS_AS(slope_fit({1.0, 2.0, 4.0}, {1.0, 0.5, 0.0}, {}), InvalidInput);
    CHECK_THROWS_AS(slope_fit({1.0, 2.0, 4.0}, {1.0, 0.5, -0.2}, {}), InvalidInput);
}

TEST_CASE("reference minimizer is exact on quadratics") {
    GaussianStream stream(12, 0, 0);
    Matrix g(4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) g(i, j) = stream.next();
    Matrix a = g * g.transpose() / 4.0;
    a.diagonal().array() += 0.4;
    Quadratic quad(a, stream.normal_vector(4));
    const Vector w = reference_minimizer(quad, 1e-12);
    CHECK((w - quad.minimizer()).norm() <= 1e-12 * (1.0 + quad.minimizer().norm()));
    CHECK(quad.gradient(w).norm() <= 1e-12);
}

TEST_CASE("reference minimizer agrees with the noiseless implicit dynamics") {
    auto synth = make_synthetic_logistic(120, 6, 0.2, 31);
    const Vector w_star = reference_minimizer(*synth.objective, 1e-12);
    CHECK(synth.objective->gradient(w_star).norm() <= 1e-12);

    // Independent oracle: a long noiseless run at large alpha lands there.
    IronState state{Vector::Zero(6), Vector::Zero(6), synth.objective->mu(), 0};
    StepOptions opts;
    opts.mu_dyn = synth.objective->mu();
    opts.inner.residual_tol = 1e-12;
    const auto traj = run_trajectory(state, *synth.objective, {1e3},
                                     NoiseModel::isotropic(0.0, 0), opts, 40);
    CHECK((traj.states.back().x - w_star).norm() <= 1e-8);
}

TEST_CASE("reference minimizer rejects nonconvex objectives") {
    LogCosh obj(Matrix::Identity(2, 2), Vector::Constant(2, 3.0));
    CHECK_THROWS_AS(reference_minimizer(obj), InvalidInput);
}

TEST_CASE("noiseless ensemble at the minimizer stays at zero mse") {
    const auto quad = benchmark_quadratic();
    auto cfg = small_config(quad.minimizer(), 32, 20);
    EnsembleRun run;
    run.alpha = 5.0;
    run.step.mu_dyn = 1.0;
    run.noise = NoiseModel::isotropic(0.0, 0);
    const auto stats = run_ensemble(cfg, quad, run, quad.minimizer());
    // The fixed point is reproduced to solver rounding, so the squared
    // error sits at the 1e-32 floor rather than exactly zero.
    for (const auto& row : stats.per_iter) {
        REQUIRE(row.mse < 1e-28);
        REQUIRE(row.bias_sq < 1e-28);
        REQUIRE(row.cov_trace < 1e-28);
    }
    CHECK(stats.stationary_mse < 1e-28);
}

TEST_CASE("single-particle ensembles have zero covariance") {
    const auto quad = benchmark_quadratic();
    auto cfg = small_config(quad.minimizer() + Vector::Constant(3, 1.0), 1, 30);
    EnsembleRun run;
    run.alpha = 3.0;
    run.noise = NoiseModel::isotropic(0.2, 4);
    const auto stats = run_ensemble(cfg, quad, run, quad.minimizer());
    for (const auto& row : stats.per_iter) {
        REQUIRE(row.cov_trace == 0.0);
        REQUIRE(row.mse == row.bias_sq);
    }
}

TEST_CASE("bias-variance decomposition is exact at every iteration") {
    const auto quad = benchmark_quadratic();
    auto cfg = small_config(quad.minimizer() + Vector::Constant(3, 2.0), 500, 80);
    EnsembleRun run;
    run.alpha = 10.0;
    run.noise = NoiseModel::isotropic(0.1, 21);
    const auto stats = run_ensemble(cfg, quad, run, quad.minimizer());
    for (const auto& row : stats.per_iter) {
        REQUIRE(row.mse >= 0.0);
        REQUIRE(row.bias_sq >= 0.0);
        REQUIRE(row.cov_trace >= 0.0);
        REQUIRE(std::abs(row.mse - row.bias_sq - row.cov_trace) <=
                1e-12 * std::max(row.mse, 1e-300));
    }
}

TEST_CASE("ensemble statistics are identical across thread counts") {
    const auto quad = benchmark_quadratic();
    auto cfg = small_config(quad.minimizer() + Vector::Constant(3, 1.5), 700, 40);
    cfg.snapshot_steps = {0, 40};
    EnsembleRun run;
    run.alpha = 8.0;
    run.noise = NoiseModel::isotropic(0.15, 5);

    cfg.threads = 1;
    const auto serial = run_ensemble(cfg, quad, run, quad.minimizer());
    cfg.threads = 4;
    const auto parallel = run_ensemble(cfg, quad, run, quad.minimizer());

    REQUIRE(serial.per_iter.size() == parallel.per_iter.size());
    for (std::size_t k = 0; k < serial.per_iter.size(); ++k) {
        REQUIRE(serial.per_iter[k].mse == parallel.per_iter[k].mse);
        REQUIRE(serial.per_iter[k].bias_sq == parallel.per_iter[k].bias_sq);
        REQUIRE(serial.per_iter[k].cov_trace == parallel.per_iter[k].cov_trace);
    }
    REQUIRE(serial.stationary_mse == parallel.stationary_mse);
    REQUIRE(serial.stationary_se == parallel.stationary_se);
    REQUIRE((serial.snapshots.at(40) - parallel.snapshots.at(40)).norm() == 0.0);
}

TEST_CASE("gaussian ball init is deterministic per particle") {
    const auto quad = benchmark_quadratic();
    EnsembleConfig cfg;
    cfg.n_particles = 64;
    cfg.n_steps = 20;
    cfg.burn_in_fraction = 0.0;
    cfg.init.kind = InitSpec::Kind::gaussian_ball;
    cfg.init.center = quad.minimizer();
    cfg.init.radius = 0.5;
    cfg.snapshot_steps = {0};
    EnsembleRun run;
    run.alpha = 2.0;
    run.noise = NoiseModel::isotropic(0.0, 9);
    const auto a = run_ensemble(cfg, quad, run, quad.minimizer());
    const auto b = run_ensemble(cfg, quad, run, quad.minimizer());
    REQUIRE((a.snapshots.at(0) - b.snapshots.at(0)).norm() == 0.0);
    // Spread at the start reflects the ball radius.
    CHECK(a.per_iter[0].cov_trace > 0.0);
}

TEST_CASE("doubling the particle count shrinks the standard error") {
    const auto quad = benchmark_quadratic();
    double se_small = 0.0, se_large = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        EnsembleRun run;
        run.alpha = 10.0;
        run.run_seed = seed;
        run.noise = NoiseModel::isotropic(0.2, 33);
        auto cfg = small_config(quad.minimizer() + Vector::Constant(3, 1.0), 512, 60);
        se_small += run_ensemble(cfg, quad, run, quad.minimizer()).stationary_se;
        cfg.n_particles = 1024;
        se_large += run_ensemble(cfg, quad, run, quad.minimizer()).stationary_se;
    }
    const double ratio = se_small / se_large;
    CHECK(ratio > 1.15);
    CHECK(ratio < 1.75); // sqrt(2) within statistical tolerance
}

TEST_CASE("monte carlo stationary mse matches the exact covariance") {
    const auto quad = benchmark_quadratic();
    const double alpha = 50.0, rho = 0.1;
    auto cfg = small_config(quad.minimizer() + Vector::Constant(3, 1.0), 4096, 240);
    EnsembleRun run;
    run.alpha = alpha;
    run.gamma0 = 1.0;
    run.step.mu_dyn = 1.0;
    run.step.gamma_mode = GammaMode::fixed;
    run.noise = NoiseModel::isotropic(rho, 2718);
    const auto stats = run_ensemble(cfg, quad, run, quad.minimizer());
    const auto exact = stationary_mse_exact(quad, alpha, 1.0, 1.0, rho);
    REQUIRE(exact.stable);
    REQUIRE(stats.stationary_se > 0.0);
    CHECK(std::abs(stats.stationary_mse - exact.value) <= 3.0 * stats.stationary_se);
}

TEST_CASE("exact stationary curve has log-log slope near -1") {
    const auto quad = benchmark_quadratic();
    std::vector<double> alphas, mses;
    for (double alpha = 50.0; alpha <= 1000.0; alpha *= 1.5) {
        const auto exact = stationary_mse_exact(quad, alpha, 1.0, 1.0, 0.1);
        REQUIRE(exact.stable);
        alphas.push_back(alpha);
        mses.push_back(exact.value);
    }
    const auto fit = slope_fit(alphas, mses, {mses});
    CHECK(fit.slope >= -1.05);
    CHECK(fit.slope <= -0.95);
}

TEST_CASE("tightening the inner tolerance does not move the quadratic mse") {
    // Newton is exact on quadratics, so delta=1e-10 and delta=1e-12 give the
    // same stationary value to well past 4 significant digits.
    const auto quad = benchmark_quadratic();
    auto cfg = small_config(quad.minimizer() + Vector::Constant(3, 1.0), 256, 60);
    EnsembleRun base;
    base.alpha = 50.0;
    base.step.gamma_mode = GammaMode::fixed;
    base.step.quad_closed_form = false; // exercise the real inner solver
    base.noise = NoiseModel::isotropic(0.1, 8);
    const auto rows = tolerance_sweep(cfg, quad, base, {50.0}, {1e-10, 1e-12}, {0},
                                      quad.minimizer());
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].stationary_mse ==
          Catch::Approx(rows[1].stationary_mse).epsilon(1e-4));
}

TEST_CASE("ensemble config validation") {
    EnsembleConfig cfg;
    cfg.n_particles = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.n_particles = 10;
    cfg.n_steps = 10;
    cfg.burn_in_fraction = 0.9; // leaves 2 samples
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.burn_in_fraction = 0.5;
    cfg.n_steps = 30;
    cfg.init.x0 = Vector::Zero(3);
    cfg.init.v0 = Vector::Zero(3);
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("general covariance factors drive ensembles with an exact identity") {
    const auto quad = benchmark_quadratic();
    Matrix sigma_sqrt(3, 3);
    sigma_sqrt << 0.2, 0.05, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.05;
    auto cfg = small_config(quad.minimizer() + Vector::Constant(3, 1.0), 300, 50);
    EnsembleRun run;
    run.alpha = 20.0;
    run.noise = NoiseModel::general(sigma_sqrt, 77);
    const auto stats = run_ensemble(cfg, quad, run, quad.minimizer());
    CHECK(stats.stationary_mse > 0.0);
    for (const auto& row : stats.per_iter)
        REQUIRE(std::abs(row.mse - row.bias_sq - row.cov_trace) <=
                1e-12 * std::max(row.mse, 1e-300));
}

TEST_CASE("tolerance sweep produces the full cross product") {
    auto synth = make_synthetic_logistic(80, 4, 0.2, 17);
    const Vector w_star = reference_minimizer(*synth.objective, 1e-12);
    EnsembleConfig cfg;
    cfg.n_particles = 2;
    cfg.n_steps = 40;
    cfg.burn_in_fraction = 0.5;
    cfg.init.kind = InitSpec::Kind::point;
    cfg.init.x0 = Vector::Zero(4);
    cfg.init.v0 = Vector::Zero(4);
    EnsembleRun base;
    base.gamma0 = synth.objective->mu();
    base.step.mu_dyn = synth.objective->mu();
    base.noise = NoiseModel::isotropic(0.05, 1);

    const std::vector<double> alphas{20.0, 60.0};
    const std::vector<double> deltas{1e-8, 1e-6};
    const std::vector<std::uint64_t> seeds{0, 1};
    const auto rows = tolerance_sweep(cfg, *synth.objective, base, alphas, deltas, seeds, w_star);
    REQUIRE(rows.size() == 8);
    for (const auto& r : rows) {
        REQUIRE(r.mean_inner_iters >= 1.0);
        REQUIRE(r.stationary_mse > 0.0);
    }
    CHECK_THROWS_AS(tolerance_sweep(cfg, *synth.objective, base, {}, deltas, seeds, w_star),
                    ConfigError);
}

TEST_CASE("cloud snapshot of identical particles has zero spread") {
    Matrix positions = Matrix::Zero(50, 3);
    positions.rowwise() = Eigen::RowVector3d(1.0, -2.0, 0.5);
    const auto snap = cloud_snapshot(positions, coordinate_planes(3));
    REQUIRE(snap.spread.size() == 3);
    for (double s : snap.spread) CHECK(s == 0.0);
    CHECK_THROWS_AS(cloud_snapshot(positions, {{0, 7}}), InvalidInput);
}

TEST_CASE("cloud snapshot spread matches the coordinate variances") {
    GaussianStream stream(3, 0, 0);
    Matrix positions(200, 3);
    for (int i = 0; i < 200; ++i)
        for (int j = 0; j < 3; ++j) positions(i, j) = stream.next() * double(j + 1);
    const auto snap = cloud_snapshot(positions, {{0, 1}});
    Vector var(3);
    for (int j = 0; j < 3; ++j) {
        const double m = positions.col(j).mean();
        var[j] = (positions.col(j).array() - m).square().sum() / 200.0;
    }
    CHECK(snap.spread[0] == Catch::Approx(var[0] + var[1]).epsilon(1e-12));
}
