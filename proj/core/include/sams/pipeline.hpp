#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sams/config.hpp"
#include "sams/dataset.hpp"
#include "sams/inference.hpp"
#include "sams/models.hpp"
#include "sams/variational.hpp"

namespace sams {

// Everything needed to continue or evaluate a run without the original
// process: final parameter values, optimizer moments, the best-validation
// snapshot, and the train-split normalization the encoder was fit with.
struct RestoredRun {
    GenerativeParams gp;  // final (live) values
    VariationalParams vp;
    TrainConfig train;
    DataMode data_mode = DataMode::counts;
    std::vector<std::string> perturbation_names;

    std::int64_t step = 0;
    std::int64_t opt_t = 0;
    std::vector<std::vector<double>> opt_m;  // aligned with generative-then-
    std::vector<std::vector<double>> opt_v;  // variational parameter order
    double best_val = 0.0;
    std::int64_t best_step = -1;
    std::map<std::string, std::vector<double>> best;
    NormStats stats;

    // Overwrites the live values with the best-validation snapshot when one
    // was recorded; no-op otherwise.
    void apply_best();
};

void save_training_checkpoint(const std::string& path, const Trainer& trainer,
                              const PerturbDataset& ds);
RestoredRun load_training_checkpoint(const std::string& path);

// Command entry points behind the command-line tool. Each consumes its keys
// from the config, rejects anything left over, and throws on failure
// (ValidationError / ShapeError for bad input, NumericError for runtime
// numerical trouble). All outputs are deterministic in the configured seed
// except wall-clock columns.
void cmd_simulate(Config& cfg);
void cmd_train(Config& cfg);
void cmd_eval(Config& cfg);
void cmd_recovery_study(Config& cfg);
void cmd_export_latents(Config& cfg);

}  // namespace sams
