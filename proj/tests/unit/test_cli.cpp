#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sams/config.hpp"
#include "sams/csv.hpp"
#include "sams/dataset.hpp"
#include "sams/error.hpp"
#include "sams/pipeline.hpp"
#include "sams/simulate.hpp"

using namespace sams;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream buf;
    buf << f.rdbuf();
    return buf.str();
}

Config make_config(const std::string& text) { return Config::parse_string(text, "<test>"); }

// Small simulated dataset most command tests start from.
void write_sim(const std::string& dir, std::uint64_t seed = 2) {
    fs::remove_all(dir);
    Config cfg = make_config("out = " + dir +
                             "\nt = 3\nd_z = 3\nd_x = 6\nn_per_treatment = 8\nseed = " +
                             std::to_string(seed) + "\n");
    cmd_simulate(cfg);
}

std::string train_text(const std::string& ds_dir, const std::string& out) {
    return "dataset = " + ds_dir + "\nout = " + out +
           "\nd_z = 3\nsteps = 6\ncadence = 2\nbatch_size = 16\n"
           "dec_hidden = 8\nenc_hidden = 8\nemb_hidden = 8\n"
           "split_train = 0.75\nsplit_val = 0.25\nseed = 3\n";
}

// Metrics with the wall-clock column blanked out, for determinism checks.
std::vector<std::vector<std::string>> metrics_without_wall(const std::string& path) {
    CsvTable t = read_csv(path);
    REQUIRE(t.header == std::vector<std::string>{"step", "train_neg_elbo", "val_elbo", "wall_ms"});
    std::vector<std::vector<std::string>> out;
    for (auto row : t.rows) {
        row[3].clear();
        out.push_back(row);
    }
    return out;
}

}  // namespace

TEST_CASE("simulate command writes a dataset the loader round-trips") {
    const std::string dir = "tmp_cmd_sim";
    write_sim(dir);

    PerturbDataset ds = load_dataset(dir);
    CHECK(ds.X.rows() == 24);
    CHECK(ds.X.cols() == 6);
    CHECK(ds.D.cols() == 3);
    CHECK(ds.mode == DataMode::reals);
    CHECK(ds.rows_in(Split::train).size() == 24);

    SimTruthFiles truth = load_sim_truth(dir);
    CHECK(truth.masks.rows() == 3);
    CHECK(truth.masks.cols() == 3);
    CHECK(truth.embeddings.rows() == 3);
    CHECK(truth.sigma_sq.size() == 6);

    fs::remove_all(dir);
}

TEST_CASE("simulate command is deterministic in the seed") {
    const std::string a = "tmp_cmd_sim_a";
    const std::string b = "tmp_cmd_sim_b";
    write_sim(a, 11);
    write_sim(b, 11);
    CHECK(slurp(a + "/X.csv") == slurp(b + "/X.csv"));
    CHECK(slurp(a + "/D.csv") == slurp(b + "/D.csv"));
    CHECK(slurp(a + "/true_masks.csv") == slurp(b + "/true_masks.csv"));

    write_sim(b, 12);
    CHECK(slurp(a + "/X.csv") != slurp(b + "/X.csv"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("commands reject unknown keys and bad common flags") {
    const std::string dir = "tmp_cmd_badkeys";
    fs::remove_all(dir);

    Config bogus = make_config("out = " + dir + "\nbogus = 1\n");
    CHECK_THROWS_WITH_AS(cmd_simulate(bogus), doctest::Contains("bogus"), ValidationError);

    Config bad_noise = make_config("out = " + dir + "\nnoise_fraction = 1.5\n");
    CHECK_THROWS_WITH_AS(cmd_simulate(bad_noise), doctest::Contains("noise_fraction"),
                         ValidationError);

    Config bad_threads = make_config("out = " + dir + "\nthreads = 0\n");
    CHECK_THROWS_WITH_AS(cmd_simulate(bad_threads), doctest::Contains("threads"), ValidationError);

    Config ok_threads = make_config("out = " + dir + "\nt = 2\nd_z = 2\nd_x = 4\n"
                                    "n_per_treatment = 3\nthreads = 4\n");
    CHECK_NOTHROW(cmd_simulate(ok_threads));
    fs::remove_all(dir);
}

TEST_CASE("train command emits a checkpoint, metrics, and latent tables") {
    const std::string data = "tmp_cmd_train_data";
    const std::string out = "tmp_cmd_train_out";
    write_sim(data);
    fs::remove_all(out);

    Config cfg = make_config(train_text(data, out));
    cmd_train(cfg);

    CHECK(fs::exists(out + "/checkpoint.bin"));
    CsvTable metrics = read_csv(out + "/metrics.csv");
    REQUIRE(metrics.nrows() == 3);  // cadence 2 over 6 steps: rows at 0, 2, 4
    CHECK(metrics.rows[0][0] == "0");
    CHECK(metrics.rows[1][0] == "2");
    CHECK(metrics.rows[2][0] == "4");

    CsvTable masks = read_csv(out + "/masks.csv");
    CHECK(masks.nrows() == 3);
    CHECK(fs::exists(out + "/embeddings.csv"));

    RestoredRun run = load_training_checkpoint(out + "/checkpoint.bin");
    CHECK(run.gp.kind == ModelKind::sams);
    CHECK(run.gp.likelihood == LikelihoodKind::gaussian);
    CHECK(run.gp.d_z == 3);
    CHECK(run.gp.d_x == 6);
    CHECK(run.gp.t == 3);
    CHECK(run.step == 6);
    CHECK(run.opt_t == 6);
    CHECK(run.train.steps == 6);
    CHECK(run.train.seed == 3);
    CHECK(run.perturbation_names == std::vector<std::string>{"p0", "p1", "p2"});
    CHECK(run.stats.mean.size() == 6);
    CHECK(run.best_step >= 0);
    CHECK_FALSE(run.best.empty());

    NamedParams np;
    run.gp.named_params(np);
    run.vp.named_params(np);
    CHECK(run.opt_m.size() == np.size());
    CHECK(run.opt_v.size() == np.size());

    fs::remove_all(data);
    fs::remove_all(out);
}

TEST_CASE("train on the all-ones-mask ablation exports unit masks") {
    const std::string data = "tmp_cmd_cpa_data";
    const std::string out = "tmp_cmd_cpa_out";
    write_sim(data);
    fs::remove_all(out);

    Config cfg = make_config(train_text(data, out) + "model = cpa\n");
    cmd_train(cfg);

    CsvTable masks = read_csv(out + "/masks.csv");
    REQUIRE(masks.nrows() == 3);
    for (const auto& row : masks.rows)
        for (std::size_t j = 1; j < row.size(); ++j)
            CHECK(parse_double_field(row[j], "mask") == 1.0);

    fs::remove_all(data);
    fs::remove_all(out);
}

TEST_CASE("conditional train skips the latent export") {
    const std::string data = "tmp_cmd_cond_data";
    const std::string out = "tmp_cmd_cond_out";
    write_sim(data);
    fs::remove_all(out);

    Config cfg = make_config(train_text(data, out) + "model = conditional\n");
    cmd_train(cfg);
    CHECK(fs::exists(out + "/checkpoint.bin"));
    CHECK_FALSE(fs::exists(out + "/masks.csv"));
    CHECK_FALSE(fs::exists(out + "/embeddings.csv"));

    RestoredRun run = load_training_checkpoint(out + "/checkpoint.bin");
    CHECK(run.gp.kind == ModelKind::conditional);

    fs::remove_all(data);
    fs::remove_all(out);
}

TEST_CASE("train rejects a counts likelihood on real-valued data") {
    const std::string data = "tmp_cmd_lik_data";
    write_sim(data);
    Config cfg = make_config(train_text(data, "tmp_cmd_lik_out") + "likelihood = counts\n");
    CHECK_THROWS_AS(cmd_train(cfg), ValidationError);
    fs::remove_all(data);
    fs::remove_all("tmp_cmd_lik_out");
}

TEST_CASE("resume reproduces an uninterrupted run bit for bit") {
    const std::string data = "tmp_cmd_resume_data";
    const std::string full = "tmp_cmd_resume_full";
    const std::string part = "tmp_cmd_resume_part";
    write_sim(data);
    fs::remove_all(full);
    fs::remove_all(part);

    Config one_shot = make_config(train_text(data, full));
    cmd_train(one_shot);

    const std::string base = train_text(data, part);
    std::string short_text = base;
    const auto pos = short_text.find("steps = 6");
    REQUIRE(pos != std::string::npos);
    short_text.replace(pos, 9, "steps = 3");
    Config first_leg = make_config(short_text);
    cmd_train(first_leg);

    Config second_leg = make_config(base + "resume = true\n");
    cmd_train(second_leg);

    RestoredRun a = load_training_checkpoint(full + "/checkpoint.bin");
    RestoredRun b = load_training_checkpoint(part + "/checkpoint.bin");
    CHECK(a.step == b.step);
    CHECK(a.opt_t == b.opt_t);
    CHECK(a.best_step == b.best_step);
    CHECK(a.best_val == b.best_val);

    NamedParams na, nb;
    a.gp.named_params(na);
    a.vp.named_params(na);
    b.gp.named_params(nb);
    b.vp.named_params(nb);
    CHECK(snapshot_params(na) == snapshot_params(nb));
    CHECK(a.best == b.best);
    for (std::size_t i = 0; i < a.opt_m.size(); ++i) {
        CHECK(a.opt_m[i] == b.opt_m[i]);
        CHECK(a.opt_v[i] == b.opt_v[i]);
    }

    CHECK(metrics_without_wall(full + "/metrics.csv") ==
          metrics_without_wall(part + "/metrics.csv"));
    CHECK(slurp(full + "/masks.csv") == slurp(part + "/masks.csv"));
    CHECK(slurp(full + "/embeddings.csv") == slurp(part + "/embeddings.csv"));

    fs::remove_all(data);
    fs::remove_all(full);
    fs::remove_all(part);
}

TEST_CASE("resume without a checkpoint is an error") {
    const std::string data = "tmp_cmd_noresume_data";
    write_sim(data);
    Config cfg = make_config(train_text(data, "tmp_cmd_noresume_out") + "resume = true\n");
    CHECK_THROWS_WITH_AS(cmd_train(cfg), doctest::Contains("resume"), ValidationError);
    fs::remove_all(data);
    fs::remove_all("tmp_cmd_noresume_out");
}

TEST_CASE("eval writes a deterministic report with agreement metrics") {
    const std::string data = "tmp_cmd_eval_data";
    const std::string model = "tmp_cmd_eval_model";
    const std::string out = "tmp_cmd_eval_out";
    write_sim(data);
    fs::remove_all(model);
    fs::remove_all(out);
    Config tcfg = make_config(train_text(data, model));
    cmd_train(tcfg);

    const std::string eval_text = "checkpoint = " + model + "/checkpoint.bin\ndataset = " + data +
                                  "\nout = " + out +
                                  "\nsplit = train\nk = 3\nrepetitions = 2\n"
                                  "control = p0\nate_particles = 5\nmask_truth = " + data +
                                  "\nseed = 4\n";
    {
        Config ecfg = make_config(eval_text);
        cmd_eval(ecfg);
    }

    const std::string first = slurp(out + "/eval_report.json");
    const nlohmann::json report = nlohmann::json::parse(first);
    CHECK(report.at("iwelbo").at("split") == "train");
    CHECK(report.at("iwelbo").at("k") == 3);
    CHECK(std::isfinite(report.at("iwelbo").at("value").get<double>()));
    CHECK(std::isfinite(report.at("iwelbo").at("stderr").get<double>()));

    const auto& ate = report.at("ate_pearson");
    REQUIRE(ate.is_object());
    const double pooled = ate.at("pooled").get<double>();
    CHECK(pooled <= 1.0);
    CHECK(pooled >= -1.0);
    const auto& per = ate.at("per_perturbation");
    CHECK(per.contains("p1"));
    CHECK(per.contains("p2"));
    CHECK_FALSE(per.contains("p0"));  // the reference condition is excluded

    const double f1 = report.at("mask_f1").get<double>();
    CHECK(f1 >= 0.0);
    CHECK(f1 <= 1.0);

    {
        Config ecfg = make_config(eval_text);
        cmd_eval(ecfg);
    }
    CHECK(slurp(out + "/eval_report.json") == first);

    fs::remove_all(data);
    fs::remove_all(model);
    fs::remove_all(out);
}

TEST_CASE("eval without a reference condition names the control flag") {
    const std::string data = "tmp_cmd_eval_noctrl_data";
    const std::string model = "tmp_cmd_eval_noctrl_model";
    write_sim(data);
    fs::remove_all(model);
    Config tcfg = make_config(train_text(data, model));
    cmd_train(tcfg);

    Config cfg = make_config("checkpoint = " + model + "/checkpoint.bin\ndataset = " + data +
                             "\nout = tmp_cmd_eval_noctrl_out\nsplit = train\nk = 2\n"
                             "repetitions = 1\n");
    CHECK_THROWS_WITH_AS(cmd_eval(cfg), doctest::Contains("--control"), ValidationError);

    Config empty_split = make_config("checkpoint = " + model + "/checkpoint.bin\ndataset = " +
                                     data + "\nout = tmp_cmd_eval_noctrl_out\nsplit = test\n");
    CHECK_THROWS_WITH_AS(cmd_eval(empty_split), doctest::Contains("test"), ValidationError);

    fs::remove_all(data);
    fs::remove_all(model);
    fs::remove_all("tmp_cmd_eval_noctrl_out");
}

TEST_CASE("export command reproduces the training-time latent files") {
    const std::string data = "tmp_cmd_export_data";
    const std::string model = "tmp_cmd_export_model";
    const std::string out = "tmp_cmd_export_out";
    write_sim(data);
    fs::remove_all(model);
    fs::remove_all(out);
    Config tcfg = make_config(train_text(data, model));
    cmd_train(tcfg);

    Config cfg = make_config("checkpoint = " + model + "/checkpoint.bin\nout = " + out + "\n");
    cmd_export_latents(cfg);

    CHECK(slurp(out + "/masks.csv") == slurp(model + "/masks.csv"));
    CHECK(slurp(out + "/embeddings.csv") == slurp(model + "/embeddings.csv"));

    fs::remove_all(data);
    fs::remove_all(model);
    fs::remove_all(out);
}

TEST_CASE("recovery study command accumulates rows and a summary") {
    const std::string out = "tmp_cmd_recovery";
    fs::remove_all(out);
    const std::string text =
        "out = " + out +
        "\ngrid_n = 6\nseeds = 1\nt = 3\nd_z = 4\nd_x = 8\nhidden = 12\n"
        "steps = 12\nbatch_size = 32\ncadence = 6\n";
    {
        Config rcfg = make_config(text);
        cmd_recovery_study(rcfg);
    }

    auto rows = read_recovery_csv(out + "/recovery.csv");
    REQUIRE(rows.size() == 2);  // two regimes x one n x one seed

    CsvTable summary = read_csv(out + "/recovery_summary.csv");
    CHECK(summary.header ==
          std::vector<std::string>{"regime", "n_t", "mean_f1", "mean_density", "runs"});
    CHECK(summary.nrows() == 2);

    {
        Config rcfg = make_config(text);
        cmd_recovery_study(rcfg);
    }
    CHECK(read_recovery_csv(out + "/recovery.csv").size() == 4);
    CsvTable summary2 = read_csv(out + "/recovery_summary.csv");
    CHECK(summary2.nrows() == 2);
    CHECK(summary2.rows[0][4] == "2");

    fs::remove_all(out);
}
