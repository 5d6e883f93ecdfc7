#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sams/models.hpp"
#include "sams/nn.hpp"
#include "sams/rng.hpp"
#include "sams/tensor.hpp"

namespace sams {

// Which posterior factors condition on which others. mean_field keeps all
// three groups independent; corr_e routes the sampled mask into the
// embedding posterior; corr_z routes the composed perturbation shift into
// the cell encoder; corr_both does both.
enum class InferenceMode { mean_field, corr_e, corr_z, corr_both };

std::string inference_mode_name(InferenceMode m);
InferenceMode inference_mode_from_name(const std::string& name);

// Learnable posterior state: mask logits (q(m_t) = Bern(sigmoid)), the
// embedding posterior (per-perturbation gaussians, or a network consuming
// the sampled mask plus a perturbation one-hot), and the cell encoder.
struct VariationalParams {
    ModelKind kind = ModelKind::sams;
    InferenceMode mode = InferenceMode::mean_field;
    std::int64_t d_z = 0;
    std::int64_t d_x = 0;
    std::int64_t t = 0;
    double tau = 1.0;  // straight-through relaxation temperature

    Tensor mask_logits;  // (t, d_z); sams only
    Tensor e_mean;       // (t, d_z); independent embedding posterior
    Tensor e_std_raw;    // (t, d_z); softplus-parameterized scale
    Mlp emb;             // mask-conditioned embedding head: d_z + t -> 2 d_z
    Mlp enc;             // cell encoder: encoder_in() -> 2 d_z

    static VariationalParams make(ModelKind kind, InferenceMode mode, std::int64_t d_z,
                                  std::int64_t d_x, std::int64_t t,
                                  const std::vector<std::int64_t>& enc_hidden,
                                  const std::vector<std::int64_t>& emb_hidden, Rng& rng);

    bool correlated_e() const {
        return kind != ModelKind::conditional &&
               (mode == InferenceMode::corr_e || mode == InferenceMode::corr_both);
    }
    bool correlated_z() const {
        return kind != ModelKind::conditional &&
               (mode == InferenceMode::corr_z || mode == InferenceMode::corr_both);
    }
    std::int64_t encoder_in() const { return d_x + (correlated_z() ? d_z : 0); }

    void validate() const;
    void named_params(NamedParams& out) const;
};

// One joint draw plus the per-factor log-densities the objectives need.
// Rows absent for a model kind stay undefined and contribute nothing.
struct PosteriorSample {
    LatentSample latents;
    Tensor log_q_m_rows;   // (t, 1)
    Tensor log_q_e_rows;   // (t, 1)
    Tensor log_q_zb_rows;  // (batch, 1)
};

// sigmoid(mask_logits) for sams; all-ones for cpa.
Tensor mask_probabilities(const VariationalParams& vp);

// Splits a gaussian head output (n, 2k) into mean and a strictly positive
// softplus std (floored at 1e-8 against underflow).
std::pair<Tensor, Tensor> split_gaussian_head(const Tensor& raw);

// Draws masks, then embeddings, then basal states, consuming the stream in
// that fixed order. Training draws masks with the straight-through
// estimator; hard_threshold instead takes the noise-free p > 1/2 mask for
// analysis. Xn must already be encoder-normalized.
PosteriorSample sample_posterior(const Tensor& Xn, const Tensor& Dbatch,
                                 const VariationalParams& vp, Rng& rng,
                                 bool hard_threshold = false);

// Log-densities of already-drawn latents under the posterior; no sampling,
// no stream use. Lets objectives re-score one draw under different
// parameters or batch arrangements.
PosteriorSample score_posterior(const Tensor& Xn, const Tensor& Dbatch,
                                const VariationalParams& vp, const LatentSample& latents);

// Masks and embeddings only (no basal states); used where basal states come
// from the model prior, as in treatment-effect estimation.
PosteriorSample sample_posterior_globals(const VariationalParams& vp, Rng& rng,
                                         bool hard_threshold = false);

}  // namespace sams
