#include "sams/models.hpp"

#include <cmath>
#include <limits>

#include "sams/error.hpp"

namespace sams {

std::string model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::sams: return "sams";
        case ModelKind::cpa: return "cpa";
        case ModelKind::conditional: return "conditional";
    }
    throw Error("model_kind_name: bad tag");
}

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "sams") return ModelKind::sams;
    if (name == "cpa") return ModelKind::cpa;
    if (name == "conditional") return ModelKind::conditional;
    throw ValidationError("model must be sams/cpa/conditional, got '" + name + "'");
}

std::string likelihood_name(LikelihoodKind k) {
    return k == LikelihoodKind::counts ? "counts" : "gaussian";
}

LikelihoodKind likelihood_from_name(const std::string& name) {
    if (name == "counts") return LikelihoodKind::counts;
    if (name == "gaussian") return LikelihoodKind::gaussian;
    throw ValidationError("likelihood must be counts/gaussian, got '" + name + "'");
}

GenerativeParams GenerativeParams::make(ModelKind kind, LikelihoodKind lik, std::int64_t d_z,
                                        std::int64_t d_x, std::int64_t t,
                                        const std::vector<std::int64_t>& decoder_hidden,
                                        double alpha, double beta, Rng& rng) {
    GenerativeParams gp;
    gp.kind = kind;
    gp.likelihood = lik;
    gp.d_z = d_z;
    gp.d_x = d_x;
    gp.t = t;
    gp.alpha = alpha;
    gp.beta = beta;
    gp.decoder = Mlp(gp.decoder_in(), decoder_hidden, d_x, rng);
    gp.theta_d_raw = Tensor::param({1, d_x}, std::vector<double>(static_cast<std::size_t>(d_x), 0.0));
    gp.log_sigma_sq =
        Tensor::param({1, d_x}, std::vector<double>(static_cast<std::size_t>(d_x), 0.0));
    gp.validate();
    return gp;
}

void GenerativeParams::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ValidationError("alpha must lie in (0,1), got " + std::to_string(alpha));
    if (!(beta > 0.0)) throw ValidationError("beta must be positive");
    if (d_z < 1 || d_x < 1 || t < 0) throw ValidationError("bad model dimensions");
    if (decoder.out_dim() != d_x) throw ValidationError("decoder output dimension != d_x");
    if (decoder.in_dim() != decoder_in())
        throw ValidationError("decoder input dimension disagrees with model kind");
    if (!(gen_library > 0.0)) throw ValidationError("generation library size must be positive");
}

void GenerativeParams::named_params(NamedParams& out) const {
    decoder.named_params("decoder", out);
    out.emplace_back("theta_d", theta_d_raw);
    if (likelihood == LikelihoodKind::gaussian) out.emplace_back("log_sigma_sq", log_sigma_sq);
}

Tensor perturbation_offset(const Tensor& D, const Tensor& E, const Tensor& M) {
    return matmul(D, mul(E, M));
}

Tensor DecodedLikelihood::log_prob(const Tensor& x) const {
    if (kind == LikelihoodKind::counts) return GammaPoisson(mean, theta).log_prob(x);
    return gaussian_likelihood_log_prob(x, mean, var);
}

Tensor DecodedLikelihood::sample(Rng& rng) const {
    if (kind == LikelihoodKind::counts) return GammaPoisson(mean, theta).sample(rng);
    std::vector<double> out(static_cast<std::size_t>(mean.size()));
    const auto& m = mean.values();
    const auto& v = var.values();
    const std::int64_t c = mean.cols();
    for (std::int64_t i = 0; i < mean.size(); ++i)
        out[static_cast<std::size_t>(i)] =
            m[i] + std::sqrt(v[static_cast<std::size_t>(i % c)]) * rng.normal();
    return Tensor::from(mean.shape(), std::move(out));
}

DecodedLikelihood decode_likelihood(const GenerativeParams& gp, const Tensor& z,
                                    const Tensor& library) {
    DecodedLikelihood out;
    out.kind = gp.likelihood;
    auto raw = gp.decoder.forward(z);
    if (gp.likelihood == LikelihoodKind::counts) {
        if (!library.defined())
            throw ValidationError("decode_likelihood: counts mode requires library sizes");
        if (library.rows() != z.rows() || library.cols() != 1)
            throw ShapeError("decode_likelihood: library must be (batch, 1)");
        out.rho = softmax_rows(raw);
        // Softmax can underflow to exact zero under saturation; keep the mean
        // strictly positive for the log-pmf.
        out.mean = clamp(mul(out.rho, library), 1e-300, std::numeric_limits<double>::max());
        out.theta = exp(gp.theta_d_raw);
    } else {
        out.mean = raw;
        out.var = exp(gp.log_sigma_sq);
    }
    return out;
}

Tensor conditional_decoder_input(const Tensor& z, const Tensor& D) {
    return concat_cols(z, D);
}

Tensor prior_e_rows(const Tensor& E, double beta) {
    DiagGaussian prior(Tensor::zeros(E.shape()), Tensor::full(E.shape(), std::sqrt(beta)));
    return prior.log_prob(E);
}

Tensor prior_m_rows(const Tensor& M, double alpha) {
    if (!(alpha > 0.0) || !(alpha < 1.0))
        throw NumericError("prior_m_rows: alpha must lie in (0,1)");
    const double lp = std::log(alpha);
    const double l1mp = std::log1p(-alpha);
    const double d = static_cast<double>(M.cols());
    // Exact per-row form; no probability clamping so extreme sparsity priors
    // keep their full strength.
    return add_scalar(mul_scalar(rowsum(M), lp - l1mp), d * l1mp);
}

Tensor prior_zb_rows(const Tensor& Zb) {
    DiagGaussian prior(Tensor::zeros(Zb.shape()), Tensor::full(Zb.shape(), 1.0));
    return prior.log_prob(Zb);
}

namespace {

void check_finite(const Tensor& t, const char* term) {
    for (double v : t.values())
        if (!std::isfinite(v))
            throw NumericError(std::string("log_joint: non-finite ") + term + " term");
}

}  // namespace

LogJointTerms log_joint(const Tensor& X, const Tensor& D, const LatentSample& latents,
                        const GenerativeParams& gp, const Tensor& library) {
    gp.validate();
    if (X.rows() != D.rows()) throw ShapeError("log_joint: X and D row counts disagree");

    LogJointTerms terms;
    Tensor z;
    if (gp.kind == ModelKind::conditional) {
        terms.prior_e = Tensor::scalar(0.0);
        terms.prior_m = Tensor::scalar(0.0);
        z = conditional_decoder_input(latents.Zb, D);
    } else {
        terms.prior_e = gp.t > 0 ? sum(prior_e_rows(latents.E, gp.beta)) : Tensor::scalar(0.0);
        if (gp.kind == ModelKind::sams) {
            for (double v : latents.M.values())
                if (v != 0.0 && v != 1.0)
                    throw ValidationError("log_joint: mask entries must be binary");
            terms.prior_m =
                gp.t > 0 ? sum(prior_m_rows(latents.M, gp.alpha)) : Tensor::scalar(0.0);
        } else {  // cpa: masks pinned to one, no mask prior term
            for (double v : latents.M.values())
                if (v != 1.0)
                    throw ValidationError("log_joint: cpa masks must be all-ones");
            terms.prior_m = Tensor::scalar(0.0);
        }
        z = gp.t > 0 ? add(latents.Zb, perturbation_offset(D, latents.E, latents.M))
                     : latents.Zb;
    }
    terms.prior_zb = sum(prior_zb_rows(latents.Zb));
    terms.lik = sum(decode_likelihood(gp, z, library).log_prob(X));

    check_finite(terms.prior_e, "embedding prior");
    check_finite(terms.prior_m, "mask prior");
    check_finite(terms.prior_zb, "basal prior");
    check_finite(terms.lik, "likelihood");
    terms.total = add(add(terms.prior_e, terms.prior_m), add(terms.prior_zb, terms.lik));
    return terms;
}

GenerativeDraw sample_generative(const GenerativeParams& gp, const Tensor& D, Rng& rng) {
    gp.validate();
    const std::int64_t n = D.rows();
    if (D.cols() != gp.t) throw ShapeError("sample_generative: dosage width != t");

    GenerativeDraw out;
    if (gp.kind != ModelKind::conditional) {
        // Draw order fixed: E, M, Zb, then the observation noise.
        const auto te = static_cast<std::size_t>(gp.t * gp.d_z);
        std::vector<double> e(te), m(te);
        for (auto& v : e) v = rng.normal(0.0, std::sqrt(gp.beta));
        if (gp.kind == ModelKind::cpa)
            std::fill(m.begin(), m.end(), 1.0);
        else
            for (auto& v : m) v = static_cast<double>(rng.bernoulli(gp.alpha));
        out.latents.E = Tensor::from({gp.t, gp.d_z}, std::move(e));
        out.latents.M = Tensor::from({gp.t, gp.d_z}, std::move(m));
    }
    out.latents.Zb =
        Tensor::from({n, gp.d_z}, rng.normal_vec(static_cast<std::size_t>(n * gp.d_z)));

    NoGradGuard guard;
    Tensor z = gp.kind == ModelKind::conditional
                   ? conditional_decoder_input(out.latents.Zb, D)
                   : (gp.t > 0 ? add(out.latents.Zb,
                                     perturbation_offset(D, out.latents.E, out.latents.M))
                               : out.latents.Zb);
    auto lik = decode_likelihood(gp, z, Tensor::full({n, 1}, gp.gen_library));
    out.signal = lik.mean;
    out.X = lik.sample(rng);
    return out;
}

}  // namespace sams
