#pragma once

// Experiment configuration: one JSON file fully determines one experiment.
// Parsing and serialization round-trip exactly, and re-running an identical
// config reproduces byte-identical CSV artifacts.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/QR>
#include <json.hpp>

#include "iron/errors.hpp"
#include "iron/experiments.hpp"
#include "iron/iron_core.hpp"
#include "iron/objectives.hpp"

namespace iron {

struct ObjectiveConfig {
    std::string kind = "quadratic"; // quadratic | ridge_logistic | log_cosh

    // quadratic: either an explicit matrix, or eigenvalues rotated by a
    // seeded random orthogonal basis. b is explicit or b_const * ones.
    std::vector<std::vector<double>> matrix;
    std::vector<double> eigenvalues;
    std::uint64_t rotation_seed = 7;
    std::vector<double> b;
    double b_const = 1.0;

    // ridge_logistic (synthetic data)
    std::int64_t n_samples = 1000;
    std::int64_t dim = 20;
    double lambda_reg = 0.1;
    std::uint64_t data_seed = 42;

    // log_cosh: design matrix plus either an explicit target or a reference
    // point x_ref with target = design * u(x_ref).
    std::vector<std::vector<double>> design;
    std::vector<double> target;
    std::vector<double> target_from_x;

    bool operator==(const ObjectiveConfig&) const = default;
};

struct DynamicsConfig {
    double mu_dyn = 1.0;
    double gamma0 = 1.0;
    std::string gamma_mode = "fixed"; // fixed | updated

    bool operator==(const DynamicsConfig&) const = default;
};

struct NoiseConfig {
    std::string kind = "isotropic"; // isotropic | general
    double rho = 0.0;
    std::string sigma_sqrt_path; // whitespace/comma separated matrix rows
    std::uint64_t master_seed = 0;

    bool operator==(const NoiseConfig&) const = default;
};

struct EnsembleSection {
    std::int64_t n_particles = 1000;
    std::int64_t n_steps = 200;
    double burn_in_fraction = 0.5;
    std::string init_kind = "point"; // point | gaussian_ball
    std::vector<double> x0, v0;      // point
    std::vector<double> center;      // gaussian_ball
    double radius = 0.0;
    std::int64_t cloud_particles = 2000; // per-alpha particles written to clouds.csv

    bool operator==(const EnsembleSection&) const = default;
};

struct GridsConfig {
    std::vector<double> alpha;
    std::vector<double> delta;
    double fit_alpha_min = 0.0; // 0 -> upper half of the grid in log space

    bool operator==(const GridsConfig&) const = default;
};

struct InnerSection {
    double residual_tol = 1e-10;
    std::int64_t max_iters = 50;
    std::string linear_solve = "auto"; // auto | direct | cg
    double cg_tol_rel = 1e-10;
    std::int64_t max_cg = 256;
    double backtrack_beta = 0.5;
    std::string warm_start = "previous_x"; // previous_x | center

    bool operator==(const InnerSection&) const = default;
};

struct ExperimentConfig {
    ObjectiveConfig objective;
    DynamicsConfig dynamics;
    NoiseConfig noise;
    EnsembleSection ensemble;
    GridsConfig grids;
    InnerSection inner;
    std::vector<std::uint64_t> seeds{0};
    std::string output_dir = "out";
    std::int64_t threads = 0;

    bool operator==(const ExperimentConfig&) const = default;
};

// ---------------------------------------------------------------------------
// JSON (de)serialization.
// ---------------------------------------------------------------------------

namespace cfg_detail {
using nlohmann::json;

template <typename T>
void get_if_present(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}
} // namespace cfg_detail

inline void to_json(nlohmann::json& j, const ObjectiveConfig& c) {
    j = {{"kind", c.kind},         {"matrix", c.matrix},
         {"eigenvalues", c.eigenvalues}, {"rotation_seed", c.rotation_seed},
         {"b", c.b},               {"b_const", c.b_const},
         {"n_samples", c.n_samples},     {"dim", c.dim},
         {"lambda_reg", c.lambda_reg},   {"data_seed", c.data_seed},
         {"design", c.design},     {"target", c.target},
         {"target_from_x", c.target_from_x}};
}
inline void from_json(const nlohmann::json& j, ObjectiveConfig& c) {
    using cfg_detail::get_if_present;
    get_if_present(j, "kind", c.kind);
    get_if_present(j, "matrix", c.matrix);
    get_if_present(j, "eigenvalues", c.eigenvalues);
    get_if_present(j, "rotation_seed", c.rotation_seed);
    get_if_present(j, "b", c.b);
    get_if_present(j, "b_const", c.b_const);
    get_if_present(j, "n_samples", c.n_samples);
    get_if_present(j, "dim", c.dim);
    get_if_present(j, "lambda_reg", c.lambda_reg);
    get_if_present(j, "data_seed", c.data_seed);
    get_if_present(j, "design", c.design);
    get_if_present(j, "target", c.target);
    get_if_present(j, "target_from_x", c.target_from_x);
}

inline void to_json(nlohmann::json& j, const DynamicsConfig& c) {
    j = {{"mu_dyn", c.mu_dyn}, {"gamma0", c.gamma0}, {"gamma_mode", c.gamma_mode}};
}
inline void from_json(const nlohmann::json& j, DynamicsConfig& c) {
    using cfg_detail::get_if_present;
    get_if_present(j, "mu_dyn", c.mu_dyn);
    get_if_present(j, "gamma0", c.gamma0);
    get_if_present(j, "gamma_mode", c.gamma_mode);
}

inline void to_json(nlohmann::json& j, const NoiseConfig& c) {
    j = {{"kind", c.kind},
         {"rho", c.rho},
         {"sigma_sqrt_path", c.sigma_sqrt_path},
         {"master_seed", c.master_seed}};
}
inline void from_json(const nlohmann::json& j, NoiseConfig& c) {
    using cfg_detail::get_if_present;
    get_if_present(j, "kind", c.kind);
    get_if_present(j, "rho", c.rho);
    get_if_present(j, "sigma_sqrt_path", c.sigma_sqrt_path);
    get_if_present(j, "master_seed", c.master_seed);
}

inline void to_json(nlohmann::json& j, const EnsembleSection& c) {
    j = {{"n_particles", c.n_particles},
         {"n_steps", c.n_steps},
         {"burn_in_fraction", c.burn_in_fraction},
         {"init_kind", c.init_kind},
         {"x0", c.x0},
         {"v0", c.v0},
         {"center", c.center},
         {"radius", c.radius},
         {"cloud_particles", c.cloud_particles}};
}
inline void from_json(const nlohmann::json& j, EnsembleSection& c) {
    using cfg_detail::get_if_present;
    get_if_present(j, "n_particles", c.n_particles);
    get_if_present(j, "n_steps", c.n_steps);
    get_if_present(j, "burn_in_fraction", c.burn_in_fraction);
    get_if_present(j, "init_kind", c.init_kind);
    get_if_present(j, "x0", c.x0);
    get_if_present(j, "v0", c.v0);
    get_if_present(j, "center", c.center);
    get_if_present(j, "radius", c.radius);
    get_if_present(j, "cloud_particles", c.cloud_particles);
}

inline void to_json(nlohmann::json& j, const GridsConfig& c) {
    j = {{"alpha", c.alpha}, {"delta", c.delta}, {"fit_alpha_min", c.fit_alpha_min}};
}
inline void from_json(const nlohmann::json& j, GridsConfig& c) {
    using cfg_detail::get_if_present;
    get_if_present(j, "alpha", c.alpha);
    get_if_present(j, "delta", c.delta);
    get_if_present(j, "fit_alpha_min", c.fit_alpha_min);
}

inline void to_json(nlohmann::json& j, const InnerSection& c) {
    j = {{"residual_tol", c.residual_tol},
         {"max_iters", c.max_iters},
         {"linear_solve", c.linear_solve},
         {"cg_tol_rel", c.cg_tol_rel},
         {"max_cg", c.max_cg},
         {"backtrack_beta", c.backtrack_beta},
         {"warm_start", c.warm_start}};
}
inline void from_json(const nlohmann::json& j, InnerSection& c) {
    using cfg_detail::get_if_present;
    get_if_present(j, "residual_tol", c.residual_tol);
    get_if_present(j, "max_iters", c.max_iters);
    get_if_present(j, "linear_solve", c.linear_solve);
    get_if_present(j, "cg_tol_rel", c.cg_tol_rel);
    get_if_present(j, "max_cg", c.max_cg);
    get_if_present(j, "backtrack_beta", c.backtrack_beta);
    get_if_present(j, "warm_start", c.warm_start);
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"objective", c.objective}, {"dynamics", c.dynamics}, {"noise", c.noise},
         {"ensemble", c.ensemble},   {"grids", c.grids},       {"inner", c.inner},
         {"seeds", c.seeds},         {"output_dir", c.output_dir}, {"threads", c.threads}};
}
inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    using cfg_detail::get_if_present;
    get_if_present(j, "objective", c.objective);
    get_if_present(j, "dynamics", c.dynamics);
    get_if_present(j, "noise", c.noise);
    get_if_present(j, "ensemble", c.ensemble);
    get_if_present(j, "grids", c.grids);
    get_if_present(j, "inner", c.inner);
    get_if_present(j, "seeds", c.seeds);
    get_if_present(j, "output_dir", c.output_dir);
    get_if_present(j, "threads", c.threads);
}

inline std::string serialize_config(const ExperimentConfig& cfg) {
    return nlohmann::json(cfg).dump(2) + "\n";
}

inline ExperimentConfig parse_config_string(const std::string& text) {
    try {
        return nlohmann::json::parse(text).get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse failed: ") + e.what());
    }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_string(buf.str());
}

// ---------------------------------------------------------------------------
// Builders: config sections -> runtime objects.
// ---------------------------------------------------------------------------

/// Random orthogonal basis from a seeded Gaussian matrix (QR with a fixed
/// sign convention), used to rotate configured eigenvalues.
inline Matrix random_orthogonal(Eigen::Index n, std::uint64_t seed) {
    GaussianStream stream(derive_stream_key(seed, 0x0514), 0, 0, GaussianStream::kDomainData);
    Matrix g(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) g(i, j) = stream.next();
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index i = 0; i < n; ++i)
        if (r(i, i) < 0.0) q.col(i) = -q.col(i);
    return q;
}

struct BuiltObjective {
    std::shared_ptr<Objective> objective;
    std::shared_ptr<Quadratic> quadratic;            // set when kind == quadratic
    std::shared_ptr<RidgeLogistic> ridge_logistic;   // set when kind == ridge_logistic
    std::optional<Vector> minimizer;                 // analytic minimizer when known
};

inline Vector to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Matrix to_matrix(const std::vector<std::vector<double>>& rows, const char* what) {
    if (rows.empty()) throw ConfigError(std::string(what) + ": empty matrix");
    const auto n_cols = rows.front().size();
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_cols));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != n_cols)
            throw ConfigError(std::string(what) + ": ragged matrix rows");
        for (std::size_t j = 0; j < n_cols; ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return m;
}

inline BuiltObjective build_objective(const ObjectiveConfig& c) {
    BuiltObjective built;
    if (c.kind == "quadratic") {
        Matrix a;
        if (!c.matrix.empty()) {
            a = to_matrix(c.matrix, "objective.matrix");
        } else if (!c.eigenvalues.empty()) {
            const auto n = static_cast<Eigen::Index>(c.eigenvalues.size());
            const Matrix q = random_orthogonal(n, c.rotation_seed);
            a = q.transpose() * to_vector(c.eigenvalues).asDiagonal() * q;
        } else {
            throw ConfigError("quadratic objective needs 'matrix' or 'eigenvalues'");
        }
        Vector b = c.b.empty() ? Vector::Constant(a.rows(), c.b_const) : to_vector(c.b);
        built.quadratic = std::make_shared<Quadratic>(std::move(a), std::move(b));
        built.objective = built.quadratic;
        built.minimizer = built.quadratic->minimizer();
    } else if (c.kind == "ridge_logistic") {
        if (c.n_samples < 1 || c.dim < 1)
            throw ConfigError("ridge_logistic objective needs positive n_samples and dim");
        auto synth = make_synthetic_logistic(c.n_samples, c.dim, c.lambda_reg, c.data_seed);
        built.ridge_logistic = synth.objective;
        built.objective = synth.objective;
    } else if (c.kind == "log_cosh") {
        if (c.design.empty()) throw ConfigError("log_cosh objective needs 'design'");
        Matrix a = to_matrix(c.design, "objective.design");
        Vector b;
        if (!c.target.empty()) {
            b = to_vector(c.target);
        } else if (!c.target_from_x.empty()) {
            const Vector x_ref = to_vector(c.target_from_x);
            Vector u(x_ref.size());
            for (Eigen::Index i = 0; i < x_ref.size(); ++i)
                u[i] = detail::log_cosh(x_ref[i]);
            b = a * u;
        } else {
            throw ConfigError("log_cosh objective needs 'target' or 'target_from_x'");
        }
        built.objective = std::make_shared<LogCosh>(std::move(a), std::move(b));
    } else {
        throw ConfigError("unknown objective kind: " + c.kind);
    }
    return built;
}

inline Matrix load_matrix_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open matrix file: " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        for (char& ch : line)
            if (ch == ',') ch = ' ';
        std::istringstream ls(line);
        std::vector<double> row;
        double v;
        while (ls >> v) row.push_back(v);
        if (!row.empty()) rows.push_back(std::move(row));
    }
    return to_matrix(rows, "sigma_sqrt");
}

inline NoiseModel build_noise(const NoiseConfig& c) {
    if (c.kind == "isotropic") return NoiseModel::isotropic(c.rho, c.master_seed);
    if (c.kind == "general") {
        if (c.sigma_sqrt_path.empty())
            throw ConfigError("general noise needs 'sigma_sqrt_path'");
        return NoiseModel::general(load_matrix_file(c.sigma_sqrt_path), c.master_seed);
    }
    throw ConfigError("unknown noise kind: " + c.kind);
}

inline GammaMode parse_gamma_mode(const std::string& mode) {
    if (mode == "fixed") return GammaMode::fixed;
    if (mode == "updated") return GammaMode::updated;
    throw ConfigError("unknown gamma_mode: " + mode);
}

/// Threshold for the automatic linear-solve choice: small systems use a
/// dense factorization of I + lambda*H, larger ones go matrix-free.
inline constexpr Eigen::Index kDirectSolveMaxDim = 512;

inline InnerConfig build_inner(const InnerSection& c, Eigen::Index dim) {
    InnerConfig inner;
    inner.residual_tol = c.residual_tol;
    inner.max_iters = static_cast<int>(c.max_iters);
    if (c.linear_solve == "auto")
        inner.linear_solve.kind = dim <= kDirectSolveMaxDim ? LinearSolveKind::direct
                                                            : LinearSolveKind::cg;
    else if (c.linear_solve == "direct")
        inner.linear_solve.kind = LinearSolveKind::direct;
    else if (c.linear_solve == "cg")
        inner.linear_solve.kind = LinearSolveKind::cg;
    else
        throw ConfigError("unknown linear_solve: " + c.linear_solve);
    inner.linear_solve.cg_tol_rel = c.cg_tol_rel;
    inner.linear_solve.max_cg = static_cast<int>(c.max_cg);
    inner.backtrack_beta = c.backtrack_beta;
    if (c.warm_start == "previous_x")
        inner.warm_start = WarmStart::previous_x;
    else if (c.warm_start == "center")
        inner.warm_start = WarmStart::center;
    else
        throw ConfigError("unknown warm_start: " + c.warm_start);
    inner.validate();
    return inner;
}

inline EnsembleConfig build_ensemble(const EnsembleSection& c, Eigen::Index dim,
                                     std::int64_t threads) {
    EnsembleConfig cfg;
    cfg.n_particles = static_cast<int>(c.n_particles);
    cfg.n_steps = static_cast<int>(c.n_steps);
    cfg.burn_in_fraction = c.burn_in_fraction;
    cfg.threads = static_cast<int>(threads);
    if (c.init_kind == "point") {
        cfg.init.kind = InitSpec::Kind::point;
        if (c.x0.size() != static_cast<std::size_t>(dim))
            throw ConfigError("ensemble.x0 dimension mismatch");
        cfg.init.x0 = to_vector(c.x0);
        cfg.init.v0 = c.v0.empty() ? cfg.init.x0 : to_vector(c.v0);
        if (cfg.init.v0.size() != dim) throw ConfigError("ensemble.v0 dimension mismatch");
    } else if (c.init_kind == "gaussian_ball") {
        cfg.init.kind = InitSpec::Kind::gaussian_ball;
        if (c.center.size() != static_cast<std::size_t>(dim))
            throw ConfigError("ensemble.center dimension mismatch");
        cfg.init.center = to_vector(c.center);
        cfg.init.radius = c.radius;
    } else {
        throw ConfigError("unknown init_kind: " + c.init_kind);
    }
    return cfg;
}

} // namespace iron
