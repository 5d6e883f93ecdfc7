#pragma once

#include <cstdint>
#include <string>

#include "sams/distributions.hpp"
#include "sams/nn.hpp"
#include "sams/rng.hpp"
#include "sams/tensor.hpp"

namespace sams {

// sams: sparse additive mechanism shift; cpa: masks fixed to all-ones;
// conditional: dosage concatenated to the decoder input, no E/M latents.
enum class ModelKind : std::uint8_t { sams = 0, cpa = 1, conditional = 2 };
enum class LikelihoodKind : std::uint8_t { counts = 0, gaussian = 1 };

std::string model_kind_name(ModelKind k);
ModelKind model_kind_from_name(const std::string& name);
std::string likelihood_name(LikelihoodKind k);
LikelihoodKind likelihood_from_name(const std::string& name);

struct GenerativeParams {
    ModelKind kind = ModelKind::sams;
    LikelihoodKind likelihood = LikelihoodKind::counts;
    std::int64_t d_z = 0;
    std::int64_t d_x = 0;
    std::int64_t t = 0;
    double alpha = 0.1;  // mask prior probability, in (0,1)
    double beta = 1.0;   // embedding prior variance, > 0
    Mlp decoder;         // input d_z, or d_z + t for the conditional model
    Tensor theta_d_raw;    // (1, d_x); inverse dispersion = exp(theta_d_raw)
    Tensor log_sigma_sq;   // (1, d_x); gaussian-mode per-feature log variance
    double gen_library = 1.0;  // library size used when generating from the prior

    // Fresh parameters with default initialization drawn from the stream.
    static GenerativeParams make(ModelKind kind, LikelihoodKind lik, std::int64_t d_z,
                                 std::int64_t d_x, std::int64_t t,
                                 const std::vector<std::int64_t>& decoder_hidden, double alpha,
                                 double beta, Rng& rng);

    std::int64_t decoder_in() const { return kind == ModelKind::conditional ? d_z + t : d_z; }
    void validate() const;
    void named_params(NamedParams& out) const;
};

struct LatentSample {
    Tensor Zb;  // (N, d_z)
    Tensor E;   // (T, d_z); undefined for the conditional model
    Tensor M;   // (T, d_z) binary; all-ones for cpa, undefined for conditional
};

// z^p rows: D (N, T) x (E ⊙ M) (T, d_z) -> (N, d_z).
Tensor perturbation_offset(const Tensor& D, const Tensor& E, const Tensor& M);

// The observation distribution decoded from a latent batch. In counts mode
// mu = softmax(decoder(z)) ⊙ l with shared inverse dispersion; in gaussian
// mode the decoder output is the mean with per-feature variance.
struct DecodedLikelihood {
    LikelihoodKind kind;
    Tensor rho;   // (N, d_x) softmax rows, counts mode only
    Tensor mean;  // (N, d_x)
    Tensor theta; // (1, d_x) counts mode
    Tensor var;   // (1, d_x) gaussian mode

    Tensor log_prob(const Tensor& x) const;  // (N, 1)
    Tensor sample(Rng& rng) const;
};

// z is the decoder input: the composed latent for sams/cpa, or [z ; d] for
// the conditional model (see conditional_decoder_input). library: (N, 1) in
// counts mode (error when missing); ignored in gaussian mode.
DecodedLikelihood decode_likelihood(const GenerativeParams& gp, const Tensor& z,
                                    const Tensor& library);

Tensor conditional_decoder_input(const Tensor& z, const Tensor& D);

// Per-row prior log-densities; each returns a column vector.
Tensor prior_e_rows(const Tensor& E, double beta);    // (T,1): N(0, beta I) rows
Tensor prior_m_rows(const Tensor& M, double alpha);   // (T,1): Bern(alpha), exact scalar form
Tensor prior_zb_rows(const Tensor& Zb);               // (N,1): N(0, I) rows

struct LogJointTerms {
    Tensor prior_e;   // scalar; zero for conditional
    Tensor prior_m;   // scalar; zero for cpa and conditional
    Tensor prior_zb;  // scalar
    Tensor lik;       // scalar
    Tensor total;     // sum of the four
};

// Joint log-density of observations and latents. library as in
// decode_likelihood. Raises NumericError naming the first non-finite term.
LogJointTerms log_joint(const Tensor& X, const Tensor& D, const LatentSample& latents,
                        const GenerativeParams& gp, const Tensor& library);

// Ancestral draw from the generative model; dosage rows given. Returns the
// latents and an X draw. Library sizes fixed at gp.gen_library (counts mode).
struct GenerativeDraw {
    LatentSample latents;
    Tensor X;
    Tensor signal;  // noiseless decoder mean (N, d_x)
};
GenerativeDraw sample_generative(const GenerativeParams& gp, const Tensor& D, Rng& rng);

}  // namespace sams
