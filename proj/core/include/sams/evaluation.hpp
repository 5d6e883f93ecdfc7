#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sams/dataset.hpp"
#include "sams/models.hpp"
#include "sams/rng.hpp"
#include "sams/tensor.hpp"
#include "sams/variational.hpp"

namespace sams {

// Importance-weighted bound over the given cells: each particle draws one
// joint posterior sample, its log-weight is the full-batch objective at
// that draw, and the bound is logsumexp(log w) - log K. Globals are drawn
// once per particle and shared across cells; perturbations absent from D
// contribute no global factor.
double iwelbo(const Tensor& X, const Tensor& Xn, const Tensor& D, const Tensor& library,
              const VariationalParams& vp, const GenerativeParams& gp, std::int64_t K, Rng& rng);

struct IwelboEstimate {
    double value = 0.0;   // mean over repetitions
    double stderr_ = 0.0;  // standard error of that mean
    std::int64_t k = 0;
    std::int64_t repetitions = 0;
};

// Repeats the K-particle bound with independent streams to attach a
// standard error.
IwelboEstimate iwelbo_repeated(const Tensor& X, const Tensor& Xn, const Tensor& D,
                               const Tensor& library, const VariationalParams& vp,
                               const GenerativeParams& gp, std::int64_t K,
                               std::int64_t repetitions, Rng& rng);

// Model average treatment effect of condition d_star against condition d0:
// global latents from the posterior, basal states from the prior (one draw
// shared by both conditions, so d_star = d0 cancels exactly). Inner means
// are closed-form (counts: rate * generation library, matching the
// library-normalized DE units) unless s >= 1 requests that many likelihood
// draws per condition; draws share one noise stream across conditions.
std::vector<double> ate_estimate(const std::vector<double>& d_star,
                                 const std::vector<double>& d0, const VariationalParams& vp,
                                 const GenerativeParams& gp, std::int64_t K, std::int64_t s,
                                 Rng& rng);

// Data differential expression: mean library-normalized expression of the
// cells matching d_star exactly, minus that of the cells matching d0, over
// one split. Errors name the condition with no matching cells.
std::vector<double> de_estimate(const PerturbDataset& ds, Split split,
                                const std::vector<double>& d_star,
                                const std::vector<double>& d0);

// Pearson correlation across features; errors when either input is
// constant (undefined correlation).
double ate_pearson(const std::vector<double>& a, const std::vector<double>& b);

struct MaskEstimate {
    Tensor probabilities;  // (t, d_z)

    // Entries with probability > 0.5.
    Tensor binary() const;
};

// Best-permutation F1 between inferred and true masks: an exact assignment
// on the d_z x d_z true-positive count matrix aligns inferred to true
// columns, then a global F1 over all entries. Empty masks on both sides
// score 1.
double mask_f1(const MaskEstimate& inferred, const Tensor& truth);

// Row-to-column assignment maximizing the total score of an n x n matrix
// (row-major), in O(n^3). Returned vector maps each row to its column.
std::vector<std::int64_t> max_assignment(const std::vector<double>& score, std::int64_t n);

// Writes masks.csv (mask probabilities; all ones for the fixed-mask model)
// and embeddings.csv (embedding posterior means; the mask-conditioned head
// is evaluated at the thresholded mask), rows labeled by perturbation name.
void export_latents(const VariationalParams& vp,
                    const std::vector<std::string>& perturbation_names,
                    const std::string& out_dir);

}  // namespace sams
