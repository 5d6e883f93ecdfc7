#include "sams/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sams/csv.hpp"
#include "sams/error.hpp"
#include "sams/evaluation.hpp"
#include "sams/models.hpp"
#include "sams/rng.hpp"
#include "sams/variational.hpp"

namespace sams {

void SimConfig::validate() const {
    if (d_z < 1 || d_x < 1 || t < 1 || n_per_treatment < 1)
        throw ValidationError("sim config: all counts must be positive");
    if (!(mask_density > 0.0) || mask_density > 1.0)
        throw ValidationError("sim config: mask_density must be in (0, 1]");
    if (!(emb_var > 0.0)) throw ValidationError("sim config: emb_var must be positive");
    if (!(noise_fraction > 0.0) || !(noise_fraction < 1.0))
        throw ValidationError("sim config: noise_fraction must be in (0, 1)");
}

double fixed_sparsity_alpha(std::int64_t n_per_treatment) {
    if (n_per_treatment < 0) throw ValidationError("fixed_sparsity_alpha: negative sample count");
    const double raw = std::pow(10.0, -9.0 * static_cast<double>(n_per_treatment) / 50.0);
    return std::clamp(raw, 1e-300, 0.5);
}

namespace {

constexpr std::int64_t kPilotCells = 10000;

// Per-feature population variance of a (n, d) tensor.
std::vector<double> feature_variance(const Tensor& m) {
    const std::int64_t n = m.rows(), d = m.cols();
    const auto& v = m.values();
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j)
            mean[static_cast<std::size_t>(j)] += v[static_cast<std::size_t>(i * d + j)];
    for (auto& x : mean) x /= static_cast<double>(n);
    std::vector<double> var(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) {
            const double c =
                v[static_cast<std::size_t>(i * d + j)] - mean[static_cast<std::size_t>(j)];
            var[static_cast<std::size_t>(j)] += c * c;
        }
    for (auto& x : var) x /= static_cast<double>(n);
    return var;
}

Tensor compose_cells(const Tensor& Zb, const Tensor& D, const Tensor& E, const Tensor& M) {
    return add(Zb, perturbation_offset(D, E, M));
}

}  // namespace

SimResult simulate_dataset(const SimConfig& cfg) {
    cfg.validate();
    NoGradGuard guard;
    Rng root(cfg.seed);

    SimResult out;
    auto& truth = out.truth;

    {
        Rng mask_rng = root.child(0);
        std::vector<double> m(static_cast<std::size_t>(cfg.t * cfg.d_z));
        for (auto& v : m) v = mask_rng.bernoulli(cfg.mask_density) ? 1.0 : 0.0;
        truth.masks = Tensor::from({cfg.t, cfg.d_z}, std::move(m));
    }
    {
        Rng emb_rng = root.child(1);
        const double sd = std::sqrt(cfg.emb_var);
        std::vector<double> e(static_cast<std::size_t>(cfg.t * cfg.d_z));
        for (auto& v : e) v = emb_rng.normal(cfg.emb_mean, sd);
        truth.embeddings = Tensor::from({cfg.t, cfg.d_z}, std::move(e));
    }
    {
        Rng dec_rng = root.child(2);
        truth.decoder = Mlp(cfg.d_z, {20, 20}, cfg.d_x, dec_rng);
        orthogonal_init(truth.decoder, dec_rng);
    }

    // Noise calibration against a pilot draw from the same cell law.
    {
        Rng pilot_rng = root.child(3);
        std::vector<double> dosage(static_cast<std::size_t>(kPilotCells * cfg.t), 0.0);
        for (std::int64_t i = 0; i < kPilotCells; ++i) {
            const auto p = pilot_rng.below(cfg.t);
            dosage[static_cast<std::size_t>(i * cfg.t + p)] = 1.0;
        }
        auto Dp = Tensor::from({kPilotCells, cfg.t}, std::move(dosage));
        auto Zb = Tensor::from({kPilotCells, cfg.d_z},
                               pilot_rng.normal_vec(static_cast<std::size_t>(kPilotCells *
                                                                             cfg.d_z)));
        auto signal =
            truth.decoder.forward(compose_cells(Zb, Dp, truth.embeddings, truth.masks));
        const auto var = feature_variance(signal);
        const double ratio = cfg.noise_fraction / (1.0 - cfg.noise_fraction);
        truth.sigma_sq.resize(var.size());
        for (std::size_t j = 0; j < var.size(); ++j) truth.sigma_sq[j] = ratio * var[j];
    }

    const std::int64_t n = cfg.t * cfg.n_per_treatment;
    {
        std::vector<double> dosage(static_cast<std::size_t>(n * cfg.t), 0.0);
        for (std::int64_t i = 0; i < n; ++i)
            dosage[static_cast<std::size_t>(i * cfg.t + i / cfg.n_per_treatment)] = 1.0;
        out.ds.D = Tensor::from({n, cfg.t}, std::move(dosage));
    }
    {
        Rng cell_rng = root.child(4);
        auto Zb = Tensor::from({n, cfg.d_z},
                               cell_rng.normal_vec(static_cast<std::size_t>(n * cfg.d_z)));
        out.signal =
            truth.decoder.forward(compose_cells(Zb, out.ds.D, truth.embeddings, truth.masks));
    }
    {
        Rng noise_rng = root.child(5);
        auto x = out.signal.values();
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < cfg.d_x; ++j)
                x[static_cast<std::size_t>(i * cfg.d_x + j)] +=
                    noise_rng.normal(0.0, std::sqrt(truth.sigma_sq[static_cast<std::size_t>(j)]));
        out.ds.X = Tensor::from({n, cfg.d_x}, std::move(x));
    }

    for (std::int64_t j = 0; j < cfg.d_x; ++j)
        out.ds.gene_names.push_back("g" + std::to_string(j));
    for (std::int64_t j = 0; j < cfg.t; ++j)
        out.ds.perturbation_names.push_back("p" + std::to_string(j));
    out.ds.mode = DataMode::reals;
    out.ds.library_sizes.assign(static_cast<std::size_t>(n), 1.0);
    out.ds.split.assign(static_cast<std::size_t>(n), Split::train);
    out.ds.validate();
    return out;
}

namespace {

void write_named_matrix(const std::string& path, const std::vector<std::string>& names,
                        const Tensor& values) {
    CsvTable t;
    t.header.push_back("perturbation");
    for (std::int64_t j = 0; j < values.cols(); ++j) t.header.push_back("z" + std::to_string(j));
    const auto& v = values.values();
    for (std::int64_t i = 0; i < values.rows(); ++i) {
        std::vector<std::string> row;
        row.push_back(names[static_cast<std::size_t>(i)]);
        for (std::int64_t j = 0; j < values.cols(); ++j)
            row.push_back(format_double(v[static_cast<std::size_t>(i * values.cols() + j)]));
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

Tensor read_named_matrix(const std::string& path) {
    const auto t = read_csv(path);
    if (t.ncols() < 2) throw ValidationError(path + ": expected a name column plus values");
    const std::int64_t rows = t.nrows(), cols = t.ncols() - 1;
    std::vector<double> v(static_cast<std::size_t>(rows * cols));
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j)
            v[static_cast<std::size_t>(i * cols + j)] = parse_double_field(
                t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j + 1)],
                path + " row " + std::to_string(i));
    return Tensor::from({rows, cols}, std::move(v));
}

}  // namespace

void save_sim_truth(const std::string& dir, const SimConfig& cfg, const SimTruth& truth) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> names;
    for (std::int64_t j = 0; j < cfg.t; ++j) names.push_back("p" + std::to_string(j));
    write_named_matrix(dir + "/true_masks.csv", names, truth.masks);
    write_named_matrix(dir + "/true_embeddings.csv", names, truth.embeddings);

    nlohmann::json j;
    j["d_z"] = cfg.d_z;
    j["d_x"] = cfg.d_x;
    j["t"] = cfg.t;
    j["n_per_treatment"] = cfg.n_per_treatment;
    j["mask_density"] = cfg.mask_density;
    j["emb_mean"] = cfg.emb_mean;
    j["emb_var"] = cfg.emb_var;
    j["noise_fraction"] = cfg.noise_fraction;
    j["seed"] = cfg.seed;
    j["sigma_sq"] = truth.sigma_sq;
    std::ofstream f(dir + "/sim_manifest.json", std::ios::binary);
    if (!f) throw ValidationError("cannot write " + dir + "/sim_manifest.json");
    f << j.dump(2) << "\n";
}

SimTruthFiles load_sim_truth(const std::string& dir) {
    SimTruthFiles out;
    out.masks = read_named_matrix(dir + "/true_masks.csv");
    out.embeddings = read_named_matrix(dir + "/true_embeddings.csv");
    std::ifstream f(dir + "/sim_manifest.json", std::ios::binary);
    if (!f) throw ValidationError("cannot read " + dir + "/sim_manifest.json");
    nlohmann::json j;
    f >> j;
    out.sigma_sq = j.at("sigma_sq").get<std::vector<double>>();
    return out;
}

void RecoveryConfig::validate() const {
    if (regimes.empty()) throw ValidationError("recovery config: no regimes");
    for (const auto& r : regimes)
        if (r != "fixed_prior" && r != "fixed_sparsity")
            throw ValidationError("recovery config: unknown regime '" + r +
                                  "' (expected fixed_prior or fixed_sparsity)");
    if (grid_n.empty()) throw ValidationError("recovery config: empty sample-size grid");
    for (auto n : grid_n)
        if (n < 1) throw ValidationError("recovery config: sample sizes must be positive");
    if (seeds.empty()) throw ValidationError("recovery config: no seeds");
    if (t < 1 || d_z < 1 || d_x < 1)
        throw ValidationError("recovery config: all dimensions must be positive");
    if (!(fixed_prior_alpha > 0.0) || !(fixed_prior_alpha < 1.0))
        throw ValidationError("recovery config: fixed_prior_alpha must be in (0, 1)");
    if (!(beta > 0.0)) throw ValidationError("recovery config: beta must be positive");
    train.validate();
}

namespace {

double thresholded_density(const Tensor& probs) {
    const auto& v = probs.values();
    double active = 0.0;
    for (double p : v) active += p > 0.5 ? 1.0 : 0.0;
    return active / static_cast<double>(v.size());
}

RecoveryRow run_recovery_cell(const RecoveryConfig& cfg, const std::string& regime,
                              std::int64_t n_per_treatment, std::uint64_t seed) {
    const double alpha = regime == "fixed_prior" ? cfg.fixed_prior_alpha
                                                 : fixed_sparsity_alpha(n_per_treatment);

    SimConfig sc;
    sc.d_z = cfg.d_z;
    sc.d_x = cfg.d_x;
    sc.t = cfg.t;
    sc.n_per_treatment = n_per_treatment;
    // Both regimes fit the same simulated dataset for a given (n, seed).
    sc.seed = mix_seed(seed, static_cast<std::uint64_t>(n_per_treatment));
    auto sim = simulate_dataset(sc);
    make_splits(sim.ds, 0.8, 0.2, 0.0, mix_seed(sc.seed, 5), true);

    const std::uint64_t regime_key = regime == "fixed_prior" ? 1 : 2;
    Rng init_rng(mix_seed(sc.seed, 7 + regime_key));
    auto gp = GenerativeParams::make(ModelKind::sams, LikelihoodKind::gaussian, cfg.d_z, cfg.d_x,
                                     cfg.t, cfg.hidden, alpha, cfg.beta, init_rng);
    auto vp = VariationalParams::make(ModelKind::sams, InferenceMode::mean_field, cfg.d_z,
                                      cfg.d_x, cfg.t, cfg.hidden, cfg.hidden, init_rng);
    TrainConfig tc = cfg.train;
    tc.seed = mix_seed(sc.seed, 11 + regime_key);

    Trainer trainer(sim.ds, std::move(gp), std::move(vp), tc);
    trainer.run();
    auto params = trainer.all_params();
    load_snapshot(params, trainer.best_params());

    const auto probs = mask_probabilities(trainer.post());
    RecoveryRow row;
    row.n_per_treatment = n_per_treatment;
    row.regime = regime;
    row.alpha = alpha;
    row.f1 = mask_f1(MaskEstimate{probs}, sim.truth.masks);
    row.inferred_density = thresholded_density(probs);
    row.seed = seed;
    return row;
}

}  // namespace

std::vector<RecoveryRow> run_recovery_study(const RecoveryConfig& cfg) {
    cfg.validate();
    std::vector<RecoveryRow> rows;
    for (const std::string& regime : cfg.regimes) {
        for (auto n : cfg.grid_n) {
            for (auto seed : cfg.seeds) {
                const std::string ctx = "recovery regime=" + regime +
                                        " n_t=" + std::to_string(n) +
                                        " seed=" + std::to_string(seed);
                try {
                    rows.push_back(run_recovery_cell(cfg, regime, n, seed));
                } catch (const ShapeError& e) {
                    throw ShapeError(ctx + ": " + e.what());
                } catch (const NumericError& e) {
                    throw NumericError(ctx + ": " + e.what());
                } catch (const ValidationError& e) {
                    throw ValidationError(ctx + ": " + e.what());
                }
            }
        }
    }
    return rows;
}

void write_recovery_csv(const std::string& path, const std::vector<RecoveryRow>& rows,
                        bool append) {
    CsvTable t;
    t.header = {"n_t", "regime", "alpha", "f1", "inferred_density", "seed"};
    if (append && std::filesystem::exists(path)) {
        t = read_csv(path);
        if (t.header != std::vector<std::string>{"n_t", "regime", "alpha", "f1",
                                                 "inferred_density", "seed"})
            throw ValidationError(path + ": existing header does not match recovery format");
    }
    for (const auto& r : rows)
        t.rows.push_back({std::to_string(r.n_per_treatment), r.regime, format_double(r.alpha),
                          format_double(r.f1), format_double(r.inferred_density),
                          std::to_string(r.seed)});
    write_csv(path, t);
}

std::vector<RecoveryRow> read_recovery_csv(const std::string& path) {
    const auto t = read_csv(path);
    std::vector<RecoveryRow> rows;
    for (std::int64_t i = 0; i < t.nrows(); ++i) {
        const auto& r = t.rows[static_cast<std::size_t>(i)];
        const std::string ctx = path + " row " + std::to_string(i);
        RecoveryRow row;
        row.n_per_treatment = parse_int_field(r[0], ctx);
        row.regime = r[1];
        row.alpha = parse_double_field(r[2], ctx);
        row.f1 = parse_double_field(r[3], ctx);
        row.inferred_density = parse_double_field(r[4], ctx);
        row.seed = static_cast<std::uint64_t>(parse_int_field(r[5], ctx));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace sams
