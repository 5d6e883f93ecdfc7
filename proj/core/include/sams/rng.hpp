#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace sams {

// Deterministic random source. All transforms from raw engine output to
// floating-point variates are implemented here so streams are reproducible
// across standard libraries, given the same seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    // Independent stream derived from (this stream's seed, key). Used to give
    // each training step / eval particle its own stream so that resuming a run
    // regenerates exactly the noise of a fresh run.
    Rng child(std::uint64_t key) const;

    std::uint64_t seed() const { return seed_; }

    double uniform();                      // [0, 1)
    double uniform(double lo, double hi);  // [lo, hi)
    double normal();                       // standard normal, Box-Muller
    double normal(double mu, double sigma);
    double logistic();  // log(u) - log(1-u)
    double gumbel();    // -log(-log(u))
    double gamma(double alpha, double scale);
    std::int64_t poisson(double mu);
    // Gamma-Poisson mixture: Poisson(Gamma(r, mu/r)), mean mu, inverse
    // dispersion r.
    std::int64_t negative_binomial(double mu, double r);
    std::int64_t bernoulli(double p);
    // Uniform integer in [0, n).
    std::int64_t below(std::int64_t n);

    std::vector<double> normal_vec(std::size_t n);
    std::vector<double> uniform_vec(std::size_t n);
    std::vector<double> logistic_vec(std::size_t n);

    // Fisher-Yates over [0, n).
    std::vector<std::int64_t> permutation(std::int64_t n);

private:
    std::uint64_t seed_;
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;

    std::uint64_t next_u64() { return eng_(); }
};

// splitmix64 finalizer; used for seed derivation.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace sams
