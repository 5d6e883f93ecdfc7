#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sams/dataset.hpp"
#include "sams/inference.hpp"
#include "sams/nn.hpp"
#include "sams/tensor.hpp"

namespace sams {

// Ground-truth generator for the mask-recovery benchmark: sparse binary
// masks, offset embeddings centered away from zero, an orthogonal-initialized
// decoder, and additive gaussian noise sized so each feature keeps a fixed
// signal-variance share.
struct SimConfig {
    std::int64_t d_z = 15;
    std::int64_t d_x = 50;
    std::int64_t t = 20;
    std::int64_t n_per_treatment = 100;
    double mask_density = 0.1;
    double emb_mean = 5.0;
    double emb_var = 0.5;
    double noise_fraction = 0.2;  // residual share of per-feature variance
    std::uint64_t seed = 0;

    void validate() const;
};

struct SimTruth {
    Tensor masks;       // (t, d_z), binary
    Tensor embeddings;  // (t, d_z)
    Mlp decoder;        // d_z -> d_x, orthogonal-initialized
    std::vector<double> sigma_sq;  // d_x, frozen from the pilot draw
};

struct SimResult {
    PerturbDataset ds;  // reals mode, one one-hot perturbation per cell
    SimTruth truth;
    Tensor signal;  // noiseless decoder output per cell (n, d_x)
};

// Draws truth, calibrates noise on a 10^4-cell pilot, then generates
// t * n_per_treatment cells in blocks by perturbation. Deterministic in
// cfg.seed.
SimResult simulate_dataset(const SimConfig& cfg);

// Sample-size-matched mask prior 10^(-(9/50) n), clamped to [1e-300, 0.5].
double fixed_sparsity_alpha(std::int64_t n_per_treatment);

// true_masks.csv, true_embeddings.csv and sim_manifest.json under dir.
void save_sim_truth(const std::string& dir, const SimConfig& cfg, const SimTruth& truth);

struct SimTruthFiles {
    Tensor masks;
    Tensor embeddings;
    std::vector<double> sigma_sq;
};
SimTruthFiles load_sim_truth(const std::string& dir);

// One grid cell of the recovery study.
struct RecoveryRow {
    std::int64_t n_per_treatment = 0;
    std::string regime;  // "fixed_prior" or "fixed_sparsity"
    double alpha = 0.0;
    double f1 = 0.0;
    double inferred_density = 0.0;
    std::uint64_t seed = 0;
};

struct RecoveryConfig {
    std::vector<std::string> regimes{"fixed_prior", "fixed_sparsity"};
    std::vector<std::int64_t> grid_n{50, 100, 200};
    std::vector<std::uint64_t> seeds{0};
    std::int64_t t = 20;
    std::int64_t d_z = 15;
    std::int64_t d_x = 50;
    double fixed_prior_alpha = 0.1;
    double beta = 10.0;  // wide embedding prior for the recovery fit
    std::vector<std::int64_t> hidden{100, 100};
    TrainConfig train;

    void validate() const;
};

// Simulates, fits the sparse model, and scores mask recovery for every
// (regime, n_per_treatment, seed) grid cell. Failures are annotated with
// their grid coordinates.
std::vector<RecoveryRow> run_recovery_study(const RecoveryConfig& cfg);

// recovery.csv with columns n_t, regime, alpha, f1, inferred_density, seed.
// Append keeps the existing header and rows.
void write_recovery_csv(const std::string& path, const std::vector<RecoveryRow>& rows,
                        bool append = false);
std::vector<RecoveryRow> read_recovery_csv(const std::string& path);

}  // namespace sams
