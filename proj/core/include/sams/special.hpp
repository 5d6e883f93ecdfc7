#pragma once

namespace sams {

// log Gamma(x) for x > 0, Lanczos approximation (g = 7, 9 coefficients).
// Accurate to ~1e-13 relative over the range the likelihoods touch.
double lgamma_lanczos(double x);

// d/dx log Gamma(x) for x > 0: upward recurrence into the asymptotic region.
double digamma(double x);

// Numerically stable log(1 + exp(x)).
double log1pexp(double x);

// log of the logistic sigmoid, stable for large |x|.
double log_sigmoid(double x);

}  // namespace sams
