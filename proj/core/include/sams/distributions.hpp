#pragma once

#include "sams/rng.hpp"
#include "sams/tensor.hpp"

namespace sams {

// Each row of the argument tensors is one vector-valued variate; every
// log-prob below sums over columns and returns shape (R, 1).

// Diagonal Gaussian parameterized by standard deviation.
struct DiagGaussian {
    Tensor mean;  // (R, C)
    Tensor std;   // (R, C) or broadcastable row, strictly positive

    DiagGaussian(Tensor mean_, Tensor std_);

    Tensor log_prob(const Tensor& x) const;
    // mean + std * eps with fresh standard-normal eps; gradients flow into
    // mean and std through the sample.
    Tensor rsample(Rng& rng) const;
};

// Bernoulli with concrete (Gumbel-Softmax) relaxation for gradients.
struct RelaxedBernoulli {
    Tensor logits;  // (R, C)
    double tau;     // temperature > 0

    RelaxedBernoulli(Tensor logits_, double tau_);

    // Hard {0,1} forward draw, relaxed-sigmoid gradient to logits. The
    // logistic noise makes the marginal exactly Bernoulli(sigmoid(logits)).
    Tensor st_sample(Rng& rng) const;
    // log q(m) under Bernoulli(sigmoid(logits)); probabilities clamped to
    // [1e-6, 1-1e-6]. Gradient reaches both logits and (through m) the
    // straight-through sample.
    Tensor log_prob(const Tensor& m) const;
};

// Bernoulli log-prob with variable probabilities; p clamped to
// [1e-6, 1-1e-6].
Tensor bernoulli_log_prob(const Tensor& m, const Tensor& p);

// Bernoulli log-prob with a fixed scalar probability evaluated exactly (no
// clamping): (sum m) log p + (numel - sum m) log(1-p). Used for mask priors
// where p may be far below the clamp floor.
Tensor bernoulli_log_prob_scalar(const Tensor& m, double p);

// Negative binomial in (mean, inverse dispersion) form.
struct GammaPoisson {
    Tensor mu;     // (R, C), strictly positive
    Tensor theta;  // (1, C) or (R, C), strictly positive inverse dispersion

    GammaPoisson(Tensor mu_, Tensor theta_);

    Tensor log_prob(const Tensor& x) const;  // x, non-negative integer counts
    // Poisson(Gamma(theta, mu/theta)) draws; no gradient.
    Tensor sample(Rng& rng) const;
};

// Gaussian likelihood in (mean, variance) form.
Tensor gaussian_likelihood_log_prob(const Tensor& x, const Tensor& mean, const Tensor& var);

}  // namespace sams
