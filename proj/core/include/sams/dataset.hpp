#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sams/tensor.hpp"

namespace sams {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

// counts: non-negative integer X with per-cell library sizes.
// reals: continuous X (simulation data); library sizes fixed at 1.
enum class DataMode : std::uint8_t { counts = 0, reals = 1 };

struct PerturbDataset {
    Tensor X;  // (N, D_x)
    Tensor D;  // (N, T), entries in {0,1}
    std::vector<std::string> gene_names;
    std::vector<std::string> perturbation_names;
    std::vector<double> library_sizes;  // N; row sums in counts mode, 1 otherwise
    std::vector<Split> split;           // N
    DataMode mode = DataMode::counts;
    std::int64_t control_index = -1;  // column of D, -1 when undesignated

    std::int64_t n() const { return X.rows(); }
    std::int64_t d_x() const { return X.cols(); }
    std::int64_t t() const { return D.cols(); }

    std::vector<std::int64_t> rows_in(Split s) const;
    // Treated-cell count per perturbation over one split (the n_t of the
    // objective reweighting).
    std::vector<double> treated_counts(Split s) const;
    std::int64_t perturbation_index(const std::string& name) const;  // -1 if absent

    void validate() const;
};

// Directory layout: X.csv (gene header), D.csv (perturbation header, optional
// leading "#control=NAME" line), optional obs.csv with a split column.
// control_name, when non-empty, overrides the file designation.
PerturbDataset load_dataset(const std::string& dir, const std::string& control_name = "");
void save_dataset(const PerturbDataset& ds, const std::string& dir);

struct NormStats {
    std::vector<double> mean;  // per feature, train rows only
    std::vector<double> std;   // population standard deviation
};

// Train-split statistics of the encoder transform: log1p in counts mode,
// identity in reals mode.
NormStats encoder_stats(const PerturbDataset& ds);
// (transform(x) - mean) / max(std, 1e-8) with the given (train) statistics.
Tensor normalize_for_encoder(const PerturbDataset& ds, const NormStats& stats);

double median_train_library(const PerturbDataset& ds);
// Row i scaled by median train library size / l_i.
Tensor library_normalize(const PerturbDataset& ds);

// Seeded assignment of rows to train/val/test. Stratified mode apportions
// within each distinct dosage pattern.
void make_splits(PerturbDataset& ds, double train_frac, double val_frac, double test_frac,
                 std::uint64_t seed, bool stratified);

}  // namespace sams
