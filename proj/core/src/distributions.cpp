#include "sams/distributions.hpp"

#include <cmath>
#include <limits>

#include "sams/error.hpp"
#include "sams/special.hpp"

namespace sams {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kProbEps = 1e-6;

void require_positive(const Tensor& t, const char* what) {
    for (double v : t.values())
        if (!(v > 0.0) || !std::isfinite(v))
            throw NumericError(std::string(what) + " must be strictly positive and finite");
}

Tensor fresh_like(const Tensor& t, std::vector<double> data) {
    return Tensor::from(t.shape(), std::move(data));
}

}  // namespace

DiagGaussian::DiagGaussian(Tensor mean_, Tensor std_)
    : mean(std::move(mean_)), std(std::move(std_)) {
    require_positive(std, "DiagGaussian: std");
}

Tensor DiagGaussian::log_prob(const Tensor& x) const {
    auto d = div(sub(x, mean), std);
    auto per = sub(mul_scalar(mul(d, d), -0.5), add_scalar(log(std), 0.5 * kLog2Pi));
    return rowsum(per);
}

Tensor DiagGaussian::rsample(Rng& rng) const {
    auto eps = fresh_like(std, rng.normal_vec(static_cast<std::size_t>(std.size())));
    return add(mean, mul(std, eps));
}

RelaxedBernoulli::RelaxedBernoulli(Tensor logits_, double tau_)
    : logits(std::move(logits_)), tau(tau_) {
    if (!(tau > 0.0)) throw ValidationError("RelaxedBernoulli: temperature must be > 0");
}

Tensor RelaxedBernoulli::st_sample(Rng& rng) const {
    auto noise = fresh_like(logits, rng.logistic_vec(static_cast<std::size_t>(logits.size())));
    return straight_through_bernoulli(logits, noise, tau);
}

Tensor RelaxedBernoulli::log_prob(const Tensor& m) const {
    return bernoulli_log_prob(m, sigmoid(logits));
}

Tensor bernoulli_log_prob(const Tensor& m, const Tensor& p) {
    auto pc = clamp(p, kProbEps, 1.0 - kProbEps);
    auto per = add(mul(m, log(pc)), mul(add_scalar(neg(m), 1.0), log1p(neg(pc))));
    return rowsum(per);
}

Tensor bernoulli_log_prob_scalar(const Tensor& m, double p) {
    if (!(p > 0.0) || !(p < 1.0))
        throw NumericError("bernoulli_log_prob_scalar: p must lie in (0,1)");
    const double lp = std::log(p);
    const double l1mp = std::log1p(-p);
    const auto numel = static_cast<double>(m.size());
    // (sum m) lp + (numel - sum m) l1mp, kept as a graph so straight-through
    // gradients reach the sample.
    return add_scalar(mul_scalar(sum(m), lp - l1mp), numel * l1mp);
}

GammaPoisson::GammaPoisson(Tensor mu_, Tensor theta_)
    : mu(std::move(mu_)), theta(std::move(theta_)) {
    require_positive(mu, "GammaPoisson: mu");
    require_positive(theta, "GammaPoisson: theta");
}

Tensor GammaPoisson::log_prob(const Tensor& x) const {
    for (double v : x.values())
        if (v < 0.0 || v != std::floor(v))
            throw NumericError("GammaPoisson: counts must be non-negative integers");
    // lgamma(x+th) - lgamma(th) - lgamma(x+1)
    //   + th (log th - log(th+mu)) + x (log mu - log(th+mu))
    auto log_denom = log(add(theta, mu));
    auto gam = sub(sub(lgamma(add(x, theta)), lgamma(theta)), lgamma(add_scalar(x, 1.0)));
    auto lin = add(mul(theta, sub(log(theta), log_denom)), mul(x, sub(log(mu), log_denom)));
    return rowsum(add(gam, lin));
}

Tensor GammaPoisson::sample(Rng& rng) const {
    const std::int64_t n = mu.size();
    std::vector<double> out(static_cast<std::size_t>(n));
    const auto& mv = mu.values();
    const auto& tv = theta.values();
    const bool shared = theta.size() != mu.size();
    const std::int64_t c = mu.ndim() == 2 ? mu.cols() : n;
    for (std::int64_t i = 0; i < n; ++i) {
        const double th = shared ? tv[static_cast<std::size_t>(i % c)] : tv[i];
        out[i] = static_cast<double>(rng.negative_binomial(mv[i], th));
    }
    return Tensor::from(mu.shape(), std::move(out));
}

Tensor gaussian_likelihood_log_prob(const Tensor& x, const Tensor& mean, const Tensor& var) {
    require_positive(var, "gaussian_likelihood_log_prob: variance");
    auto d = sub(x, mean);
    auto per = mul_scalar(add(add(log(var), div(mul(d, d), var)), Tensor::scalar(kLog2Pi)), -0.5);
    return rowsum(per);
}

}  // namespace sams
