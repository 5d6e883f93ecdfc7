#include "sams/pipeline.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sams/checkpoint.hpp"
#include "sams/csv.hpp"
#include "sams/error.hpp"
#include "sams/evaluation.hpp"
#include "sams/log.hpp"
#include "sams/rng.hpp"
#include "sams/simulate.hpp"

namespace fs = std::filesystem;

namespace sams {
namespace {

// Hidden widths are recoverable from the layer stack, so checkpoints never
// need a separate architecture record that could drift from the weights.
std::vector<std::int64_t> hidden_widths(const Mlp& m) {
    std::vector<std::int64_t> out;
    const auto& layers = m.layers();
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) out.push_back(layers[i].out_dim());
    return out;
}

// threads is part of the tool interface; execution is single-threaded, so
// the value is validated and otherwise ignored.
void consume_threads(Config& cfg) {
    const std::int64_t threads = cfg.get_i64("threads", 1);
    if (threads < 1) throw ValidationError("threads must be >= 1");
    if (threads > 1) log_debug("threads=" + std::to_string(threads) + " requested; running single-threaded");
}

// Optional re-split of a loaded dataset. Consumes the split_* keys whenever
// split_train is present.
void apply_config_splits(Config& cfg, PerturbDataset& ds, std::uint64_t fallback_seed) {
    if (!cfg.has("split_train")) return;
    const double tr = cfg.get_f64("split_train");
    const double va = cfg.get_f64("split_val", 0.0);
    const double te = cfg.get_f64("split_test", 0.0);
    const auto seed = static_cast<std::uint64_t>(
        cfg.get_i64("split_seed", static_cast<std::int64_t>(fallback_seed)));
    const bool stratified = cfg.get_bool("split_stratified", true);
    make_splits(ds, tr, va, te, seed, stratified);
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows, bool append) {
    CsvTable table;
    table.header = {"step", "train_neg_elbo", "val_elbo", "wall_ms"};
    if (append) {
        CsvTable old = read_csv(path);
        if (old.header != table.header)
            throw ValidationError("metrics append: unexpected header in " + path);
        table.comment = old.comment;
        table.rows = std::move(old.rows);
    }
    for (const auto& r : rows)
        table.rows.push_back({std::to_string(r.step), format_double(r.train_neg_elbo),
                              format_double(r.val_elbo), format_double(r.wall_ms)});
    write_csv(path, table);
}

nlohmann::json json_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json();
}

std::vector<double> f64_list(const nlohmann::json& j, const std::string& what) {
    if (!j.is_array()) throw ValidationError("checkpoint manifest: " + what + " must be a list");
    std::vector<double> out;
    for (const auto& e : j) out.push_back(e.get<double>());
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open " + path + " for writing");
    f << text;
    if (!f) throw ValidationError("write failed: " + path);
}

}  // namespace

void RestoredRun::apply_best() {
    if (best.empty()) return;
    NamedParams np;
    gp.named_params(np);
    vp.named_params(np);
    load_snapshot(np, best);
}

void save_training_checkpoint(const std::string& path, const Trainer& trainer,
                              const PerturbDataset& ds) {
    const GenerativeParams& gp = trainer.gen();
    const VariationalParams& vp = trainer.post();
    const TrainConfig& tc = trainer.config();

    nlohmann::json man;
    man["format"] = 1;
    man["model"] = model_kind_name(gp.kind);
    man["likelihood"] = likelihood_name(gp.likelihood);
    man["inference"] = inference_mode_name(vp.mode);
    man["d_z"] = gp.d_z;
    man["d_x"] = gp.d_x;
    man["t"] = gp.t;
    man["alpha"] = gp.alpha;
    man["beta"] = gp.beta;
    man["gen_library"] = gp.gen_library;
    man["tau"] = vp.tau;
    man["data_mode"] = ds.mode == DataMode::counts ? "counts" : "reals";
    man["perturbation_names"] = ds.perturbation_names;
    man["dec_hidden"] = hidden_widths(gp.decoder);
    man["enc_hidden"] = hidden_widths(vp.enc);
    man["emb_hidden"] = hidden_widths(vp.emb);
    man["train"] = {{"batch_size", tc.batch_size}, {"lr", tc.lr},
                    {"weight_decay", tc.weight_decay}, {"steps", tc.steps},
                    {"particles", tc.particles}, {"cadence", tc.cadence},
                    {"seed", tc.seed}};
    man["step"] = trainer.step();
    man["opt_t"] = trainer.optimizer().step_count();
    man["best_step"] = trainer.best_step();
    man["best_val"] = json_or_null(trainer.best_val_elbo());
    man["norm_mean"] = trainer.norm_stats().mean;
    man["norm_std"] = trainer.norm_stats().std;

    Checkpoint ck;
    ck.put_json("manifest", man);

    NamedParams np = trainer.all_params();
    for (const auto& [name, p] : np) ck.put_tensor("param." + name, p);

    const auto& best = trainer.best_params();
    for (const auto& [name, p] : np) {
        auto it = best.find(name);
        if (it == best.end()) continue;
        ck.put_tensor("best." + name,
                      Tensor::from({1, static_cast<std::int64_t>(it->second.size())}, it->second));
    }

    const Adam& opt = trainer.optimizer();
    if (opt.m().size() != np.size() || opt.v().size() != np.size())
        throw Error("checkpoint: optimizer state does not cover the parameter list");
    for (std::size_t i = 0; i < np.size(); ++i) {
        const auto len = static_cast<std::int64_t>(opt.m()[i].size());
        ck.put_tensor("opt.m." + np[i].first, Tensor::from({1, len}, opt.m()[i]));
        ck.put_tensor("opt.v." + np[i].first, Tensor::from({1, len}, opt.v()[i]));
    }

    ck.save(path);
}

RestoredRun load_training_checkpoint(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (!ck.has("manifest")) throw ValidationError("checkpoint: no manifest in " + path);
    const nlohmann::json man = ck.json("manifest");
    if (man.value("format", 0) != 1)
        throw ValidationError("checkpoint: unsupported format in " + path);

    const ModelKind kind = model_kind_from_name(man.at("model").get<std::string>());
    const LikelihoodKind lik = likelihood_from_name(man.at("likelihood").get<std::string>());
    const InferenceMode mode = inference_mode_from_name(man.at("inference").get<std::string>());
    const auto d_z = man.at("d_z").get<std::int64_t>();
    const auto d_x = man.at("d_x").get<std::int64_t>();
    const auto t = man.at("t").get<std::int64_t>();

    std::vector<std::int64_t> dec_hidden, enc_hidden, emb_hidden;
    for (const auto& e : man.at("dec_hidden")) dec_hidden.push_back(e.get<std::int64_t>());
    for (const auto& e : man.at("enc_hidden")) enc_hidden.push_back(e.get<std::int64_t>());
    for (const auto& e : man.at("emb_hidden")) emb_hidden.push_back(e.get<std::int64_t>());

    RestoredRun run;
    // Weights are overwritten below; the init stream only shapes the stacks.
    Rng scratch(0);
    run.gp = GenerativeParams::make(kind, lik, d_z, d_x, t, dec_hidden,
                                    man.at("alpha").get<double>(), man.at("beta").get<double>(),
                                    scratch);
    run.gp.gen_library = man.at("gen_library").get<double>();
    run.vp = VariationalParams::make(kind, mode, d_z, d_x, t, enc_hidden, emb_hidden, scratch);
    run.vp.tau = man.at("tau").get<double>();

    NamedParams np;
    run.gp.named_params(np);
    run.vp.named_params(np);

    std::map<std::string, std::vector<double>> live;
    for (const auto& [name, p] : np) {
        if (!ck.has("param." + name))
            throw ValidationError("checkpoint: missing tensor param." + name);
        live[name] = ck.tensor("param." + name).values();
    }
    load_snapshot(np, live);

    for (const auto& [name, p] : np) {
        if (!ck.has("best." + name)) continue;
        run.best[name] = ck.tensor("best." + name).values();
    }

    for (const auto& [name, p] : np) {
        if (!ck.has("opt.m." + name) || !ck.has("opt.v." + name))
            throw ValidationError("checkpoint: missing optimizer state for " + name);
        run.opt_m.push_back(ck.tensor("opt.m." + name).values());
        run.opt_v.push_back(ck.tensor("opt.v." + name).values());
        if (run.opt_m.back().size() != static_cast<std::size_t>(p.size()) ||
            run.opt_v.back().size() != static_cast<std::size_t>(p.size()))
            throw ValidationError("checkpoint: optimizer state size mismatch for " + name);
    }

    const nlohmann::json& tr = man.at("train");
    run.train.batch_size = tr.at("batch_size").get<std::int64_t>();
    run.train.lr = tr.at("lr").get<double>();
    run.train.weight_decay = tr.at("weight_decay").get<double>();
    run.train.steps = tr.at("steps").get<std::int64_t>();
    run.train.particles = tr.at("particles").get<std::int64_t>();
    run.train.cadence = tr.at("cadence").get<std::int64_t>();
    run.train.seed = tr.at("seed").get<std::uint64_t>();
    run.train.validate();

    run.step = man.at("step").get<std::int64_t>();
    run.opt_t = man.at("opt_t").get<std::int64_t>();
    run.best_step = man.at("best_step").get<std::int64_t>();
    run.best_val = man.at("best_val").is_null() ? -std::numeric_limits<double>::infinity()
                                                : man.at("best_val").get<double>();
    run.stats.mean = f64_list(man.at("norm_mean"), "norm_mean");
    run.stats.std = f64_list(man.at("norm_std"), "norm_std");
    if (run.stats.mean.size() != static_cast<std::size_t>(d_x) ||
        run.stats.std.size() != static_cast<std::size_t>(d_x))
        throw ValidationError("checkpoint: normalization stats do not match d_x");

    const std::string dm = man.at("data_mode").get<std::string>();
    if (dm != "counts" && dm != "reals")
        throw ValidationError("checkpoint: bad data_mode '" + dm + "'");
    run.data_mode = dm == "counts" ? DataMode::counts : DataMode::reals;
    run.perturbation_names = man.at("perturbation_names").get<std::vector<std::string>>();
    if (run.perturbation_names.size() != static_cast<std::size_t>(t))
        throw ValidationError("checkpoint: perturbation name count does not match t");
    return run;
}

void cmd_simulate(Config& cfg) {
    SimConfig sc;
    sc.d_z = cfg.get_i64("d_z", sc.d_z);
    sc.d_x = cfg.get_i64("d_x", sc.d_x);
    sc.t = cfg.get_i64("t", sc.t);
    sc.n_per_treatment = cfg.get_i64("n_per_treatment", sc.n_per_treatment);
    sc.mask_density = cfg.get_f64("mask_density", sc.mask_density);
    sc.emb_mean = cfg.get_f64("emb_mean", sc.emb_mean);
    sc.emb_var = cfg.get_f64("emb_var", sc.emb_var);
    sc.noise_fraction = cfg.get_f64("noise_fraction", sc.noise_fraction);
    sc.seed = static_cast<std::uint64_t>(cfg.get_i64("seed", 0));
    const std::string out = cfg.get_str("out");
    consume_threads(cfg);
    cfg.reject_unknown();

    SimResult sim = simulate_dataset(sc);
    fs::create_directories(out);
    save_dataset(sim.ds, out);
    save_sim_truth(out, sc, sim.truth);
    log_info("simulate: wrote " + std::to_string(sim.ds.X.rows()) + " cells x " +
             std::to_string(sim.ds.X.cols()) + " features for " + std::to_string(sc.t) +
             " perturbations to " + out);
}

void cmd_train(Config& cfg) {
    const std::string ds_dir = cfg.get_str("dataset");
    const std::string out = cfg.get_str("out");
    const std::string control = cfg.get_str("control", "");
    const auto seed = static_cast<std::uint64_t>(cfg.get_i64("seed", 0));

    PerturbDataset ds = load_dataset(ds_dir, control);
    apply_config_splits(cfg, ds, seed);

    const ModelKind kind = model_kind_from_name(cfg.get_str("model", "sams"));
    const std::string lik_default = ds.mode == DataMode::counts ? "counts" : "gaussian";
    const LikelihoodKind lik = likelihood_from_name(cfg.get_str("likelihood", lik_default));
    const InferenceMode mode = inference_mode_from_name(cfg.get_str("inference", "mean_field"));
    const std::int64_t d_z = cfg.get_i64("d_z");
    const double alpha = cfg.get_f64("alpha", 0.1);
    const double beta = cfg.get_f64("beta", 1.0);
    const auto dec_hidden = cfg.get_i64_list("dec_hidden", {100, 100});
    const auto enc_hidden = cfg.get_i64_list("enc_hidden", {100, 100});
    const auto emb_hidden = cfg.get_i64_list("emb_hidden", {100, 100});

    TrainConfig tc;
    tc.batch_size = cfg.get_i64("batch_size", tc.batch_size);
    tc.lr = cfg.get_f64("lr", tc.lr);
    tc.weight_decay = cfg.get_f64("weight_decay", tc.weight_decay);
    tc.steps = cfg.get_i64("steps", tc.steps);
    tc.particles = cfg.get_i64("particles", tc.particles);
    tc.cadence = cfg.get_i64("cadence", tc.cadence);
    tc.seed = seed;
    const bool resume = cfg.get_bool("resume", false);
    consume_threads(cfg);
    cfg.reject_unknown();
    tc.validate();

    fs::create_directories(out);
    const std::string ckpt_path = out + "/checkpoint.bin";
    const std::string metrics_path = out + "/metrics.csv";

    std::unique_ptr<Trainer> trainer;
    bool resumed = false;
    if (resume) {
        if (!fs::exists(ckpt_path))
            throw ValidationError("train: resume=true but no checkpoint at " + ckpt_path);
        RestoredRun run = load_training_checkpoint(ckpt_path);
        if (run.gp.d_x != ds.X.cols() || run.gp.t != ds.D.cols())
            throw ValidationError("train: checkpoint dimensions do not match the dataset");
        if (run.data_mode != ds.mode)
            throw ValidationError("train: checkpoint data mode does not match the dataset");
        // A resumed run must replay the original schedule bit for bit, so
        // every hyperparameter comes from the checkpoint; only a larger
        // step budget from the config takes effect.
        TrainConfig rtc = run.train;
        if (tc.steps > rtc.steps) rtc.steps = tc.steps;
        trainer = std::make_unique<Trainer>(ds, std::move(run.gp), std::move(run.vp), rtc);
        trainer->restore(run.step, run.opt_t, std::move(run.opt_m), std::move(run.opt_v),
                         run.best_val, run.best_step, std::move(run.best));
        resumed = true;
        log_info("train: resuming from step " + std::to_string(trainer->step()) + " of " +
                 std::to_string(rtc.steps));
    } else {
        Rng init(mix_seed(tc.seed, 9001));
        GenerativeParams gp = GenerativeParams::make(kind, lik, d_z, ds.X.cols(), ds.D.cols(),
                                                     dec_hidden, alpha, beta, init);
        VariationalParams vp = VariationalParams::make(kind, mode, d_z, ds.X.cols(), ds.D.cols(),
                                                       enc_hidden, emb_hidden, init);
        trainer = std::make_unique<Trainer>(ds, std::move(gp), std::move(vp), tc);
    }

    trainer->run();

    save_training_checkpoint(ckpt_path, *trainer, ds);
    write_metrics_csv(metrics_path, trainer->metrics(), resumed && fs::exists(metrics_path));

    if (trainer->gen().kind != ModelKind::conditional) {
        // Latents come from the best-validation snapshot when one exists;
        // the live values only matter for resuming.
        VariationalParams best_vp = trainer->post();
        GenerativeParams best_gp = trainer->gen();
        if (!trainer->best_params().empty()) {
            NamedParams np;
            best_gp.named_params(np);
            best_vp.named_params(np);
            load_snapshot(np, trainer->best_params());
        }
        export_latents(best_vp, ds.perturbation_names, out);
    }
    log_info("train: finished at step " + std::to_string(trainer->step()) + ", best val elbo " +
             format_double(trainer->best_val_elbo()) + " at step " +
             std::to_string(trainer->best_step()));
}

namespace {

// Distinct dosage rows of a split, in lexicographic order.
std::map<std::vector<double>, std::int64_t> split_dosage_patterns(
    const PerturbDataset& ds, const std::vector<std::int64_t>& rows) {
    std::map<std::vector<double>, std::int64_t> out;
    const auto& dv = ds.D.values();
    const auto t = ds.D.cols();
    for (const auto r : rows) {
        std::vector<double> row(dv.begin() + r * t, dv.begin() + (r + 1) * t);
        ++out[row];
    }
    return out;
}

std::string pattern_label(const std::vector<double>& d,
                          const std::vector<std::string>& names) {
    std::string label;
    for (std::size_t j = 0; j < d.size(); ++j) {
        if (d[j] == 0.0) continue;
        if (!label.empty()) label += "+";
        label += names[j];
    }
    return label.empty() ? "none" : label;
}

}  // namespace

void cmd_eval(Config& cfg) {
    const std::string ckpt_path = cfg.get_str("checkpoint");
    const std::string ds_dir = cfg.get_str("dataset");
    const std::string out = cfg.get_str("out");
    const std::string control = cfg.get_str("control", "");
    const std::string split_s = cfg.get_str("split", "test");
    const std::int64_t K = cfg.get_i64("k", 100);
    const std::int64_t reps = cfg.get_i64("repetitions", 10);
    const bool want_ate = cfg.get_bool("ate", true);
    const std::int64_t ate_K = cfg.get_i64("ate_particles", 100);
    const std::int64_t ate_S = cfg.get_i64("ate_draws", 0);
    const std::string truth_dir = cfg.get_str("mask_truth", "");
    const bool use_best = cfg.get_bool("use_best", true);
    const auto seed = static_cast<std::uint64_t>(cfg.get_i64("seed", 0));

    RestoredRun run = load_training_checkpoint(ckpt_path);
    PerturbDataset ds = load_dataset(ds_dir, control);
    apply_config_splits(cfg, ds, seed);
    consume_threads(cfg);
    cfg.reject_unknown();

    if (ds.X.cols() != run.gp.d_x || ds.D.cols() != run.gp.t)
        throw ValidationError("eval: dataset dimensions do not match the checkpoint");
    if (ds.mode != run.data_mode)
        throw ValidationError("eval: dataset mode does not match the checkpoint");
    if (use_best) run.apply_best();

    const Split split = split_from_name(split_s);
    const auto rows = ds.rows_in(split);
    if (rows.empty()) throw ValidationError("eval: split '" + split_s + "' has no rows");

    // Encoder features use the training-time normalization.
    const Tensor Xn_all = normalize_for_encoder(ds, run.stats);
    const Tensor X_s = take_rows(ds.X, rows);
    const Tensor Xn_s = take_rows(Xn_all, rows);
    const Tensor D_s = take_rows(ds.D, rows);
    std::vector<double> lib_v;
    lib_v.reserve(rows.size());
    for (const auto r : rows) lib_v.push_back(ds.library_sizes[r]);
    const Tensor lib_s = Tensor::from({static_cast<std::int64_t>(rows.size()), 1}, lib_v);

    Rng iw_rng(mix_seed(seed, 301));
    const IwelboEstimate est =
        iwelbo_repeated(X_s, Xn_s, D_s, lib_s, run.vp, run.gp, K, reps, iw_rng);

    nlohmann::json report;
    report["checkpoint"] = ckpt_path;
    report["dataset"] = ds_dir;
    report["seed"] = seed;
    report["iwelbo"] = {{"split", split_s}, {"k", K}, {"repetitions", reps},
                        {"value", est.value}, {"stderr", est.stderr_}};

    report["ate_pearson"] = nlohmann::json();
    if (want_ate) {
        const auto t = ds.D.cols();
        std::vector<double> d0(t, 0.0);
        if (ds.control_index >= 0) {
            d0[ds.control_index] = 1.0;
        } else {
            bool any_zero = false;
            const auto& dvals = ds.D.values();
            for (const auto r : rows) {
                bool zero = true;
                for (std::int64_t j = 0; j < t; ++j)
                    if (dvals[r * t + j] != 0.0) { zero = false; break; }
                if (zero) { any_zero = true; break; }
            }
            if (!any_zero)
                throw ValidationError(
                    "eval: ate needs a reference condition: pass --control NAME or include "
                    "zero-dosage cells in the split");
        }

        const auto patterns = split_dosage_patterns(ds, rows);
        Rng ate_rng(mix_seed(seed, 302));
        nlohmann::json per = nlohmann::json::object();
        std::vector<double> pooled_model, pooled_data;
        std::uint64_t idx = 0;
        for (const auto& [pattern, count] : patterns) {
            ++idx;
            if (pattern == d0) continue;
            Rng prng = ate_rng.child(idx);
            const auto model_effect = ate_estimate(pattern, d0, run.vp, run.gp, ate_K, ate_S, prng);
            const auto data_effect = de_estimate(ds, split, pattern, d0);
            per[pattern_label(pattern, ds.perturbation_names)] =
                ate_pearson(model_effect, data_effect);
            pooled_model.insert(pooled_model.end(), model_effect.begin(), model_effect.end());
            pooled_data.insert(pooled_data.end(), data_effect.begin(), data_effect.end());
        }
        if (!pooled_model.empty())
            report["ate_pearson"] = {{"pooled", ate_pearson(pooled_model, pooled_data)},
                                     {"per_perturbation", per}};
    }

    report["mask_f1"] = nlohmann::json();
    if (!truth_dir.empty()) {
        if (run.gp.kind == ModelKind::conditional)
            throw ValidationError("eval: mask_truth given but the conditional model has no masks");
        const SimTruthFiles truth = load_sim_truth(truth_dir);
        MaskEstimate me;
        me.probabilities = mask_probabilities(run.vp);
        report["mask_f1"] = mask_f1(me, truth.masks);
    }

    fs::create_directories(out);
    write_text(out + "/eval_report.json", report.dump(2) + "\n");
    log_info("eval: iwelbo(" + split_s + ", k=" + std::to_string(K) +
             ") = " + format_double(est.value) + " +- " + format_double(est.stderr_));
}

void cmd_recovery_study(Config& cfg) {
    RecoveryConfig rc;
    {
        std::string def;
        for (const auto& r : rc.regimes) def += (def.empty() ? "" : ",") + r;
        std::string spec = cfg.get_str("regimes", def);
        rc.regimes.clear();
        std::size_t pos = 0;
        while (pos <= spec.size()) {
            const std::size_t comma = spec.find(',', pos);
            const std::string item =
                spec.substr(pos, comma == std::string::npos ? spec.size() - pos : comma - pos);
            if (!item.empty()) rc.regimes.push_back(item);
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
    }
    rc.grid_n = cfg.get_i64_list("grid_n", rc.grid_n);
    std::vector<std::int64_t> seed_defaults;
    for (const auto s : rc.seeds) seed_defaults.push_back(static_cast<std::int64_t>(s));
    rc.seeds.clear();
    for (const auto s : cfg.get_i64_list("seeds", seed_defaults))
        rc.seeds.push_back(static_cast<std::uint64_t>(s));
    rc.t = cfg.get_i64("t", rc.t);
    rc.d_z = cfg.get_i64("d_z", rc.d_z);
    rc.d_x = cfg.get_i64("d_x", rc.d_x);
    rc.fixed_prior_alpha = cfg.get_f64("fixed_prior_alpha", rc.fixed_prior_alpha);
    rc.beta = cfg.get_f64("beta", rc.beta);
    rc.hidden = cfg.get_i64_list("hidden", rc.hidden);
    rc.train.batch_size = cfg.get_i64("batch_size", rc.train.batch_size);
    rc.train.lr = cfg.get_f64("lr", rc.train.lr);
    rc.train.weight_decay = cfg.get_f64("weight_decay", rc.train.weight_decay);
    rc.train.steps = cfg.get_i64("steps", rc.train.steps);
    rc.train.particles = cfg.get_i64("particles", rc.train.particles);
    rc.train.cadence = cfg.get_i64("cadence", rc.train.cadence);
    const std::string out = cfg.get_str("out");
    consume_threads(cfg);
    cfg.reject_unknown();

    const std::vector<RecoveryRow> rows = run_recovery_study(rc);

    fs::create_directories(out);
    const std::string csv_path = out + "/recovery.csv";
    const bool append = fs::exists(csv_path);
    write_recovery_csv(csv_path, rows, append);

    // Summary over everything accumulated in the file, not just this run.
    const auto all_rows = read_recovery_csv(csv_path);
    std::map<std::pair<std::string, std::int64_t>, std::pair<std::vector<double>, std::vector<double>>>
        cells;
    for (const auto& r : all_rows) {
        auto& cell = cells[{r.regime, r.n_per_treatment}];
        cell.first.push_back(r.f1);
        cell.second.push_back(r.inferred_density);
    }
    CsvTable summary;
    summary.header = {"regime", "n_t", "mean_f1", "mean_density", "runs"};
    for (const auto& [key, cell] : cells) {
        double f1 = 0.0, density = 0.0;
        for (const auto v : cell.first) f1 += v;
        for (const auto v : cell.second) density += v;
        const auto n = static_cast<double>(cell.first.size());
        summary.rows.push_back({key.first, std::to_string(key.second), format_double(f1 / n),
                                format_double(density / n),
                                std::to_string(cell.first.size())});
    }
    write_csv(out + "/recovery_summary.csv", summary);
    log_info("recovery-study: " + std::to_string(rows.size()) + " grid cells appended to " +
             csv_path);
}

void cmd_export_latents(Config& cfg) {
    const std::string ckpt_path = cfg.get_str("checkpoint");
    const std::string out = cfg.get_str("out");
    const bool use_best = cfg.get_bool("use_best", true);
    consume_threads(cfg);
    cfg.reject_unknown();

    RestoredRun run = load_training_checkpoint(ckpt_path);
    if (use_best) run.apply_best();
    export_latents(run.vp, run.perturbation_names, out);
    log_info("export-latents: wrote masks.csv and embeddings.csv to " + out);
}

}  // namespace sams
