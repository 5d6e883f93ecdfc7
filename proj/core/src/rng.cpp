#include "sams/rng.hpp"

#include <cmath>

#include "sams/error.hpp"
#include "sams/special.hpp"

namespace sams {

namespace {
constexpr double kTwoPi = 6.283185307179586476925;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

Rng Rng::child(std::uint64_t key) const { return Rng(mix_seed(seed_, key)); }

double Rng::uniform() {
    // 53-bit mantissa; in [0, 1). Never returns 1.
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double rad = std::sqrt(-2.0 * std::log(u1));
    spare_ = rad * std::sin(kTwoPi * u2);
    have_spare_ = true;
    return rad * std::cos(kTwoPi * u2);
}

double Rng::normal(double mu, double sigma) { return mu + sigma * normal(); }

double Rng::logistic() {
    double u = uniform();
    while (u <= 0.0 || u >= 1.0) u = uniform();
    return std::log(u) - std::log1p(-u);
}

double Rng::gumbel() {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return -std::log(-std::log(u));
}

double Rng::gamma(double alpha, double scale) {
    if (!(alpha > 0.0) || !(scale > 0.0))
        throw NumericError("gamma sampler: shape and scale must be positive");
    // Marsaglia-Tsang squeeze; boost for alpha < 1.
    if (alpha < 1.0) {
        const double u = std::pow(uniform(), 1.0 / alpha);
        return gamma(alpha + 1.0, scale) * u;
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
            return d * v * scale;
    }
}

std::int64_t Rng::poisson(double mu) {
    if (mu < 0.0 || !std::isfinite(mu)) throw NumericError("poisson sampler: mean must be finite and >= 0");
    if (mu == 0.0) return 0;
    if (mu < 30.0) {
        // Knuth product of uniforms.
        const double l = std::exp(-mu);
        std::int64_t k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform();
        } while (p > l);
        return k - 1;
    }
    // PTRS transformed rejection (Hormann 1993).
    const double slam = std::sqrt(mu);
    const double loglam = std::log(mu);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
        const double u = uniform() - 0.5;
        const double v = uniform();
        const double us = 0.5 - std::abs(u);
        const double k = std::floor((2.0 * a / us + b) * u + mu + 0.43);
        if (us >= 0.07 && v <= vr) return static_cast<std::int64_t>(k);
        if (k < 0.0 || (us < 0.013 && v > us)) continue;
        if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
            k * loglam - mu - lgamma_lanczos(k + 1.0))
            return static_cast<std::int64_t>(k);
    }
}

std::int64_t Rng::negative_binomial(double mu, double r) {
    if (!(mu >= 0.0) || !(r > 0.0))
        throw NumericError("negative binomial sampler: need mean >= 0, dispersion > 0");
    if (mu == 0.0) return 0;
    return poisson(gamma(r, mu / r));
}

std::int64_t Rng::bernoulli(double p) { return uniform() < p ? 1 : 0; }

std::int64_t Rng::below(std::int64_t n) {
    if (n <= 0) throw NumericError("Rng::below: bound must be positive");
    // Rejection to remove modulo bias.
    const auto un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return static_cast<std::int64_t>(v % un);
}

std::vector<double> Rng::normal_vec(std::size_t n) {
    std::vector<double> out(n);
    for (auto& v : out) v = normal();
    return out;
}

std::vector<double> Rng::uniform_vec(std::size_t n) {
    std::vector<double> out(n);
    for (auto& v : out) v = uniform();
    return out;
}

std::vector<double> Rng::logistic_vec(std::size_t n) {
    std::vector<double> out(n);
    for (auto& v : out) v = logistic();
    return out;
}

std::vector<std::int64_t> Rng::permutation(std::int64_t n) {
    std::vector<std::int64_t> p(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) p[i] = i;
    for (std::int64_t i = n - 1; i > 0; --i) std::swap(p[i], p[below(i + 1)]);
    return p;
}

}  // namespace sams
