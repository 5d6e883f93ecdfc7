#include "sams/special.hpp"

#include <cmath>

#include "sams/error.hpp"

namespace sams {

namespace {

constexpr double kLanczosG = 7.0;
constexpr double kLanczos[9] = {
    0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
    771.32342877765313,   -176.61502916214059,   12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7,
};

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // log(2*pi)/2

}  // namespace

double lgamma_lanczos(double x) {
    if (!(x > 0.0)) throw NumericError("lgamma: argument must be positive");
    // Shift arguments below 0.5 up by one: log G(x) = log G(x+1) - log x.
    double shift = 0.0;
    if (x < 0.5) {
        shift = -std::log(x);
        x += 1.0;
    }
    const double z = x - 1.0;
    double a = kLanczos[0];
    for (int i = 1; i < 9; ++i) a += kLanczos[i] / (z + i);
    const double t = z + kLanczosG + 0.5;
    return shift + kHalfLog2Pi + (z + 0.5) * std::log(t) - t + std::log(a);
}

double digamma(double x) {
    if (!(x > 0.0)) throw NumericError("digamma: argument must be positive");
    double r = 0.0;
    // psi(x) = psi(x + 1) - 1/x until the asymptotic series is accurate.
    while (x < 10.0) {
        r -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // Asymptotic expansion with Bernoulli-number coefficients.
    double s = std::log(x) - 0.5 * inv;
    s -= inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132)))));
    return r + s;
}

double log1pexp(double x) {
    if (x > 0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double log_sigmoid(double x) { return -log1pexp(-x); }

}  // namespace sams
