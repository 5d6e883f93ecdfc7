#include "sams/variational.hpp"

#include <cmath>

#include "sams/distributions.hpp"
#include "sams/error.hpp"

namespace sams {

std::string inference_mode_name(InferenceMode m) {
    switch (m) {
        case InferenceMode::mean_field: return "mean_field";
        case InferenceMode::corr_e: return "corr_e";
        case InferenceMode::corr_z: return "corr_z";
        case InferenceMode::corr_both: return "corr_both";
    }
    throw Error("inference_mode_name: bad tag");
}

InferenceMode inference_mode_from_name(const std::string& name) {
    if (name == "mean_field") return InferenceMode::mean_field;
    if (name == "corr_e") return InferenceMode::corr_e;
    if (name == "corr_z") return InferenceMode::corr_z;
    if (name == "corr_both") return InferenceMode::corr_both;
    throw ValidationError("inference mode must be mean_field/corr_e/corr_z/corr_both, got '" +
                          name + "'");
}

VariationalParams VariationalParams::make(ModelKind kind, InferenceMode mode, std::int64_t d_z,
                                          std::int64_t d_x, std::int64_t t,
                                          const std::vector<std::int64_t>& enc_hidden,
                                          const std::vector<std::int64_t>& emb_hidden, Rng& rng) {
    VariationalParams vp;
    vp.kind = kind;
    vp.mode = mode;
    vp.d_z = d_z;
    vp.d_x = d_x;
    vp.t = t;
    if (kind == ModelKind::conditional && mode != InferenceMode::mean_field)
        throw ValidationError(
            "conditional model has no mask/embedding posterior to correlate; use mean_field");

    const auto td = static_cast<std::size_t>(t * d_z);
    // Gates start mostly open (p ~ 0.9) so embeddings receive gradient while
    // the mask prior is still pruning; a closed gate passes no learning
    // signal to its offset.
    if (kind == ModelKind::sams)
        vp.mask_logits = Tensor::param({t, d_z}, std::vector<double>(td, 2.2));
    if (kind != ModelKind::conditional) {
        if (vp.correlated_e()) {
            vp.emb = Mlp(d_z + t, emb_hidden, 2 * d_z, rng);
        } else {
            vp.e_mean = Tensor::param({t, d_z}, std::vector<double>(td, 0.0));
            vp.e_std_raw = Tensor::param({t, d_z}, std::vector<double>(td, 0.0));
        }
    }
    vp.enc = Mlp(vp.encoder_in(), enc_hidden, 2 * d_z, rng);
    vp.validate();
    return vp;
}

void VariationalParams::validate() const {
    if (d_z < 1 || d_x < 1 || t < 0) throw ValidationError("bad posterior dimensions");
    if (!(tau > 0.0)) throw ValidationError("straight-through temperature must be positive");
    if (kind == ModelKind::conditional && mode != InferenceMode::mean_field)
        throw ValidationError("conditional model supports only mean_field inference");
    if (kind == ModelKind::sams) {
        if (!mask_logits.defined() || mask_logits.rows() != t || mask_logits.cols() != d_z)
            throw ValidationError("mask logits missing or mis-shaped for sams posterior");
    }
    if (kind != ModelKind::conditional) {
        if (correlated_e()) {
            if (emb.in_dim() != d_z + t || emb.out_dim() != 2 * d_z)
                throw ValidationError("embedding network shape disagrees with corr_e mode");
        } else if (!e_mean.defined() || !e_std_raw.defined() || e_mean.rows() != t ||
                   e_mean.cols() != d_z) {
            throw ValidationError("independent embedding posterior missing or mis-shaped");
        }
    }
    if (enc.in_dim() != encoder_in() || enc.out_dim() != 2 * d_z)
        throw ValidationError("encoder shape disagrees with inference mode");
}

void VariationalParams::named_params(NamedParams& out) const {
    if (kind == ModelKind::sams) out.emplace_back("q.mask_logits", mask_logits);
    if (kind != ModelKind::conditional) {
        if (correlated_e()) {
            emb.named_params("q.emb", out);
        } else {
            out.emplace_back("q.e_mean", e_mean);
            out.emplace_back("q.e_std_raw", e_std_raw);
        }
    }
    enc.named_params("q.enc", out);
}

Tensor mask_probabilities(const VariationalParams& vp) {
    if (vp.kind == ModelKind::sams) return sigmoid(vp.mask_logits);
    if (vp.kind == ModelKind::cpa) return Tensor::full({vp.t, vp.d_z}, 1.0);
    throw ValidationError("conditional model has no masks");
}

std::pair<Tensor, Tensor> split_gaussian_head(const Tensor& raw) {
    if (raw.cols() % 2 != 0) throw ShapeError("gaussian head needs an even column count");
    const std::int64_t k = raw.cols() / 2;
    auto mean = slice_cols(raw, 0, k);
    auto std = add_scalar(softplus(slice_cols(raw, k, 2 * k)), 1e-8);
    return {mean, std};
}

namespace {

// (t, t) identity used as the perturbation one-hot block for the
// mask-conditioned embedding head.
Tensor onehot_rows(std::int64_t t) {
    std::vector<double> v(static_cast<std::size_t>(t * t), 0.0);
    for (std::int64_t i = 0; i < t; ++i) v[static_cast<std::size_t>(i * t + i)] = 1.0;
    return Tensor::from({t, t}, std::move(v));
}

// Masks then embeddings, in that fixed stream order.
void draw_globals(const VariationalParams& vp, Rng& rng, bool hard_threshold,
                  PosteriorSample& out) {
    if (vp.kind == ModelKind::sams) {
        if (hard_threshold) {
            std::vector<double> hard(static_cast<std::size_t>(vp.t * vp.d_z));
            const auto& lv = vp.mask_logits.values();
            for (std::size_t i = 0; i < hard.size(); ++i) hard[i] = lv[i] > 0.0 ? 1.0 : 0.0;
            out.latents.M = Tensor::from({vp.t, vp.d_z}, std::move(hard));
        } else {
            out.latents.M = RelaxedBernoulli(vp.mask_logits, vp.tau).st_sample(rng);
        }
        out.log_q_m_rows = RelaxedBernoulli(vp.mask_logits, vp.tau).log_prob(out.latents.M);
    } else if (vp.kind == ModelKind::cpa) {
        out.latents.M = Tensor::full({vp.t, vp.d_z}, 1.0);
    }

    if (vp.kind != ModelKind::conditional) {
        Tensor mean, std;
        if (vp.correlated_e()) {
            auto head = vp.emb.forward(concat_cols(out.latents.M, onehot_rows(vp.t)));
            std::tie(mean, std) = split_gaussian_head(head);
        } else {
            mean = vp.e_mean;
            std = add_scalar(softplus(vp.e_std_raw), 1e-8);
        }
        DiagGaussian qe(mean, std);
        out.latents.E = qe.rsample(rng);
        out.log_q_e_rows = qe.log_prob(out.latents.E);
    }
}

}  // namespace

PosteriorSample sample_posterior_globals(const VariationalParams& vp, Rng& rng,
                                         bool hard_threshold) {
    vp.validate();
    if (vp.kind == ModelKind::conditional)
        throw ValidationError("conditional model has no global latents to sample");
    PosteriorSample out;
    draw_globals(vp, rng, hard_threshold, out);
    return out;
}

PosteriorSample sample_posterior(const Tensor& Xn, const Tensor& Dbatch,
                                 const VariationalParams& vp, Rng& rng, bool hard_threshold) {
    vp.validate();
    if (Xn.cols() != vp.d_x) throw ShapeError("sample_posterior: feature width != d_x");
    if (Dbatch.cols() != vp.t) throw ShapeError("sample_posterior: dosage width != t");
    if (Xn.rows() != Dbatch.rows())
        throw ShapeError("sample_posterior: X and D row counts disagree");

    PosteriorSample out;
    draw_globals(vp, rng, hard_threshold, out);

    // Basal state last, seeing the composed shift in corr_z.
    Tensor enc_in = Xn;
    if (vp.correlated_z())
        enc_in = concat_cols(Xn, perturbation_offset(Dbatch, out.latents.E, out.latents.M));
    auto [zb_mean, zb_std] = split_gaussian_head(vp.enc.forward(enc_in));
    DiagGaussian qz(zb_mean, zb_std);
    out.latents.Zb = qz.rsample(rng);
    out.log_q_zb_rows = qz.log_prob(out.latents.Zb);
    return out;
}

PosteriorSample score_posterior(const Tensor& Xn, const Tensor& Dbatch,
                                const VariationalParams& vp, const LatentSample& latents) {
    vp.validate();
    if (Xn.cols() != vp.d_x) throw ShapeError("score_posterior: feature width != d_x");
    if (Dbatch.cols() != vp.t) throw ShapeError("score_posterior: dosage width != t");
    if (latents.Zb.rows() != Xn.rows())
        throw ShapeError("score_posterior: basal rows != batch rows");

    PosteriorSample out;
    out.latents = latents;
    if (vp.kind == ModelKind::sams)
        out.log_q_m_rows = RelaxedBernoulli(vp.mask_logits, vp.tau).log_prob(latents.M);
    if (vp.kind != ModelKind::conditional) {
        Tensor mean, std;
        if (vp.correlated_e()) {
            auto head = vp.emb.forward(concat_cols(latents.M, onehot_rows(vp.t)));
            std::tie(mean, std) = split_gaussian_head(head);
        } else {
            mean = vp.e_mean;
            std = add_scalar(softplus(vp.e_std_raw), 1e-8);
        }
        out.log_q_e_rows = DiagGaussian(mean, std).log_prob(latents.E);
    }
    Tensor enc_in = Xn;
    if (vp.correlated_z())
        enc_in = concat_cols(Xn, perturbation_offset(Dbatch, latents.E, latents.M));
    auto [zb_mean, zb_std] = split_gaussian_head(vp.enc.forward(enc_in));
    out.log_q_zb_rows = DiagGaussian(zb_mean, zb_std).log_prob(latents.Zb);
    return out;
}

}  // namespace sams
