#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "sams/csv.hpp"
#include "sams/dataset.hpp"
#include "sams/error.hpp"
#include "sams/evaluation.hpp"
#include "sams/inference.hpp"
#include "sams/models.hpp"
#include "sams/nn.hpp"
#include "sams/rng.hpp"
#include "sams/variational.hpp"

using namespace sams;

namespace {

struct Fixture {
    PerturbDataset ds;
    GenerativeParams gp;
    VariationalParams vp;
    Tensor Xn;
    Tensor library;
};

// Small dataset drawn from a ground-truth model, with a fresh untrained
// model and posterior to evaluate.
Fixture make_fixture(std::int64_t n, ModelKind kind, LikelihoodKind lik,
                     InferenceMode mode = InferenceMode::mean_field, std::uint64_t seed = 1,
                     std::int64_t t = 2, std::int64_t d_x = 6, std::int64_t d_z = 2) {
    Fixture f;
    Rng truth_rng(mix_seed(seed, 100));
    auto truth = GenerativeParams::make(kind, lik, d_z, d_x, t, {8}, 0.2, 1.0, truth_rng);
    truth.gen_library = 200.0;

    std::vector<double> dosage(static_cast<std::size_t>(n * t), 0.0);
    Rng drng(mix_seed(seed, 101));
    for (std::int64_t i = 0; i < n; ++i) {
        const auto r = drng.below(static_cast<std::uint64_t>(t + 1));
        if (r > 0) dosage[static_cast<std::size_t>(i * t) + r - 1] = 1.0;
    }
    auto D = Tensor::from({n, t}, std::move(dosage));
    Rng grng(mix_seed(seed, 102));
    auto draw = sample_generative(truth, D, grng);

    f.ds.X = draw.X;
    f.ds.D = D;
    for (std::int64_t j = 0; j < d_x; ++j) f.ds.gene_names.push_back("g" + std::to_string(j));
    for (std::int64_t j = 0; j < t; ++j)
        f.ds.perturbation_names.push_back("p" + std::to_string(j));
    f.ds.mode = lik == LikelihoodKind::counts ? DataMode::counts : DataMode::reals;
    f.ds.split.assign(static_cast<std::size_t>(n), Split::train);
    f.ds.library_sizes.assign(static_cast<std::size_t>(n), 1.0);
    if (lik == LikelihoodKind::counts) {
        auto& xv = f.ds.X.raw();
        for (std::int64_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < d_x; ++j) s += xv[static_cast<std::size_t>(i * d_x + j)];
            if (s == 0.0) {
                xv[static_cast<std::size_t>(i * d_x)] = 1.0;
                s = 1.0;
            }
            f.ds.library_sizes[static_cast<std::size_t>(i)] = s;
        }
    }
    f.ds.validate();

    Rng mrng(mix_seed(seed, 103));
    f.gp = GenerativeParams::make(kind, lik, d_z, d_x, t, {8}, 0.2, 1.0, mrng);
    f.gp.gen_library = lik == LikelihoodKind::counts ? median_train_library(f.ds) : 1.0;
    f.vp = VariationalParams::make(kind, mode, d_z, d_x, t, {16}, {16}, mrng);
    f.Xn = normalize_for_encoder(f.ds, encoder_stats(f.ds));
    f.library = Tensor::from({n, 1}, f.ds.library_sizes);
    return f;
}

std::vector<std::int64_t> all_rows(std::int64_t n) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

std::vector<double> presence_counts(const Tensor& D) {
    const auto c = colsum(D);
    const auto& cv = c.values();
    return std::vector<double>(cv.begin(), cv.end());
}

double softplus_inv(double y) { return y + std::log1p(-std::exp(-y)); }

// Linear-gaussian model whose evidence has a closed form: decoder weight
// s Q with orthonormal rows Q, isotropic noise, and an encoder set to the
// exact basal posterior N(x Q^T s / (s^2 + sigma^2), sigma^2 / (s^2 +
// sigma^2) I). With mask and embedding posteriors pinned to their priors,
// every importance weight collapses to the evidence.
struct Conjugate {
    GenerativeParams gp;
    VariationalParams vp;
    Tensor X, D;
    double analytic = 0.0;
};

Conjugate make_conjugate(std::int64_t n, bool treated, double alpha) {
    const std::int64_t d_z = 3, d_x = 7;
    const double s = 0.8, s2 = s * s, sigma2 = 0.49;
    Conjugate c;

    std::vector<double> Q(static_cast<std::size_t>(d_z * d_x), 0.0);
    Rng qrng(901);
    orthogonalize(Q, d_z, d_x, qrng);

    Rng mrng(902);
    c.gp = GenerativeParams::make(ModelKind::sams, LikelihoodKind::gaussian, d_z, d_x, 1, {},
                                  alpha, 1.0, mrng);
    {
        auto& w = c.gp.decoder.layers()[0].weight.raw();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = s * Q[i];
        auto& b = c.gp.decoder.layers()[0].bias.raw();
        std::fill(b.begin(), b.end(), 0.0);
        auto& ls = c.gp.log_sigma_sq.raw();
        std::fill(ls.begin(), ls.end(), std::log(sigma2));
    }

    Rng vrng(903);
    c.vp = VariationalParams::make(ModelKind::sams, InferenceMode::mean_field, d_z, d_x, 1, {},
                                   {8}, vrng);
    {
        auto& w = c.vp.enc.layers()[0].weight.raw();  // (d_x, 2 d_z)
        std::fill(w.begin(), w.end(), 0.0);
        for (std::int64_t i = 0; i < d_x; ++i)
            for (std::int64_t j = 0; j < d_z; ++j)
                w[static_cast<std::size_t>(i * 2 * d_z + j)] =
                    s * Q[static_cast<std::size_t>(j * d_x + i)] / (s2 + sigma2);
        auto& b = c.vp.enc.layers()[0].bias.raw();
        std::fill(b.begin(), b.end(), 0.0);
        const double post_std = std::sqrt(sigma2 / (s2 + sigma2));
        for (std::int64_t j = 0; j < d_z; ++j)
            b[static_cast<std::size_t>(d_z + j)] = softplus_inv(post_std - 1e-8);
        auto& ml = c.vp.mask_logits.raw();
        std::fill(ml.begin(), ml.end(), std::log(alpha) - std::log1p(-alpha));
        auto& em = c.vp.e_mean.raw();
        std::fill(em.begin(), em.end(), 0.0);
        auto& es = c.vp.e_std_raw.raw();
        std::fill(es.begin(), es.end(), softplus_inv(1.0 - 1e-8));
    }

    Rng xrng(904);
    auto xv = xrng.normal_vec(static_cast<std::size_t>(n * d_x));
    for (auto& v : xv) v *= 1.3;
    c.X = Tensor::from({n, d_x}, xv);
    c.D = treated ? Tensor::full({n, 1}, 1.0) : Tensor::zeros({n, 1});

    const double log2pi = std::log(2.0 * std::acos(-1.0));
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double xx = 0.0, xq = 0.0;
        for (std::int64_t j = 0; j < d_x; ++j) {
            const double x = xv[static_cast<std::size_t>(i * d_x + j)];
            xx += x * x;
        }
        for (std::int64_t k = 0; k < d_z; ++k) {
            double dot = 0.0;
            for (std::int64_t j = 0; j < d_x; ++j)
                dot += xv[static_cast<std::size_t>(i * d_x + j)] *
                       Q[static_cast<std::size_t>(k * d_x + j)];
            xq += dot * dot;
        }
        total += -0.5 * (static_cast<double>(d_x) * log2pi +
                         static_cast<double>(d_z) * std::log(s2 + sigma2) +
                         static_cast<double>(d_x - d_z) * std::log(sigma2) + xq / (s2 + sigma2) +
                         (xx - xq) / sigma2);
    }
    c.analytic = total;
    return c;
}

double brute_force_best(const std::vector<double>& score, std::int64_t n) {
    std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = -std::numeric_limits<double>::infinity();
    do {
        double s = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
            s += score[static_cast<std::size_t>(i * n + perm[static_cast<std::size_t>(i)])];
        best = std::max(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace

TEST_CASE("iwelbo with one particle equals the single-draw objective") {
    auto f = make_fixture(24, ModelKind::sams, LikelihoodKind::counts, InferenceMode::corr_both);
    const auto n_t = presence_counts(f.ds.D);

    Rng r1(42);
    const double single =
        elbo_minibatch(all_rows(f.ds.n()), f.ds.X, f.Xn, f.ds.D, f.library, f.vp, f.gp, n_t, 1,
                       r1)
            .item();
    Rng r2(42);
    const double bound = iwelbo(f.ds.X, f.Xn, f.ds.D, f.library, f.vp, f.gp, 1, r2);
    CHECK(std::abs(bound - single) < 1e-12);
}

TEST_CASE("iwelbo is deterministic in the stream seed") {
    auto f = make_fixture(16, ModelKind::sams, LikelihoodKind::counts, InferenceMode::mean_field);
    Rng a(5), b(5), other(6);
    const double va = iwelbo(f.ds.X, f.Xn, f.ds.D, f.library, f.vp, f.gp, 4, a);
    const double vb = iwelbo(f.ds.X, f.Xn, f.ds.D, f.library, f.vp, f.gp, 4, b);
    const double vc = iwelbo(f.ds.X, f.Xn, f.ds.D, f.library, f.vp, f.gp, 4, other);
    CHECK(va == vb);
    CHECK(va != vc);
}

TEST_CASE("iwelbo matches the analytic evidence in a conjugate linear model") {
    // Untreated cells: the exact basal posterior makes every particle's
    // weight equal the evidence, so the bound is tight for any K.
    auto c = make_conjugate(20, false, 0.2);
    Rng r1(7), r2(8);
    const double k1 = iwelbo(c.X, c.X, c.D, Tensor(), c.vp, c.gp, 1, r1);
    const double k7 = iwelbo(c.X, c.X, c.D, Tensor(), c.vp, c.gp, 7, r2);
    CHECK(std::abs(k1 - c.analytic) < 1e-8);
    CHECK(std::abs(k7 - c.analytic) < 1e-8);
    CHECK(std::abs(k1 - k7) < 1e-10);  // zero weight variance
}

TEST_CASE("iwelbo stays tight when global latents are active but pinned to the prior") {
    // Treated cells with a near-zero mask prior: masks are never active, so
    // the basal posterior stays exact and the global posterior-to-prior
    // ratios cancel per draw.
    auto c = make_conjugate(18, true, 1e-6);
    Rng r(11);
    const double k3 = iwelbo(c.X, c.X, c.D, Tensor(), c.vp, c.gp, 3, r);
    CHECK(std::abs(k3 - c.analytic) < 1e-6);
}

TEST_CASE("more particles tighten the bound for a mismatched posterior") {
    auto f = make_fixture(30, ModelKind::sams, LikelihoodKind::gaussian, InferenceMode::mean_field,
                          2);
    Rng ra(11), rb(11), rc(11);
    const auto m1 = iwelbo_repeated(f.ds.X, f.Xn, f.ds.D, f.library, f.vp, f.gp, 1, 40, ra);
    const auto m4 = iwelbo_repeated(f.ds.X, f.Xn, f.ds.D, f.library, f.vp, f.gp, 4, 40, rb);
    const auto m16 = iwelbo_repeated(f.ds.X, f.Xn, f.ds.D, f.library, f.vp, f.gp, 16, 40, rc);
    CHECK(m4.value > m1.value);
    CHECK(m16.value > m4.value);
    CHECK(m16.stderr_ > 0.0);
}

TEST_CASE("iwelbo is a symmetric function of the particle set") {
    auto f = make_fixture(14, ModelKind::sams, LikelihoodKind::counts, InferenceMode::corr_e, 4);
    const auto n_t = presence_counts(f.ds.D);
    const std::int64_t K = 6;

    std::vector<double> log_w;
    for (std::int64_t k = 0; k < K; ++k) {
        Rng prng = Rng(33).child(static_cast<std::uint64_t>(k));
        auto ps = sample_posterior(f.Xn, f.ds.D, f.vp, prng);
        log_w.push_back(
            elbo_with_frozen_draw(all_rows(f.ds.n()), f.ds.X, f.ds.D, f.library, ps, f.gp, n_t)
                .item());
    }
    auto lse = [](std::vector<double> v) {
        const double m = *std::max_element(v.begin(), v.end());
        double acc = 0.0;
        for (double x : v) acc += std::exp(x - m);
        return m + std::log(acc);
    };
    const double forward = lse(log_w) - std::log(static_cast<double>(K));
    std::reverse(log_w.begin(), log_w.end());
    const double reversed = lse(log_w) - std::log(static_cast<double>(K));
    CHECK(std::abs(forward - reversed) < 1e-12);

    Rng r(33);
    const double bound = iwelbo(f.ds.X, f.Xn, f.ds.D, f.library, f.vp, f.gp, K, r);
    CHECK(std::abs(bound - forward) < 1e-12);
}

TEST_CASE("frozen-draw objective does not depend on cell enumeration order") {
    auto f = make_fixture(20, ModelKind::sams, LikelihoodKind::counts, InferenceMode::corr_both,
                          6);
    const auto n_t = presence_counts(f.ds.D);
    Rng r(17);
    auto ps = sample_posterior(f.Xn, f.ds.D, f.vp, r);

    auto forward = all_rows(f.ds.n());
    auto shuffled = forward;
    Rng perm_rng(18);
    for (std::size_t i = shuffled.size(); i > 1; --i)
        std::swap(shuffled[i - 1], shuffled[static_cast<std::size_t>(
                                       perm_rng.below(static_cast<std::int64_t>(i)))]);

    const double a =
        elbo_with_frozen_draw(forward, f.ds.X, f.ds.D, f.library, ps, f.gp, n_t).item();
    const double b =
        elbo_with_frozen_draw(shuffled, f.ds.X, f.ds.D, f.library, ps, f.gp, n_t).item();
    CHECK(std::abs(a - b) < 1e-9);
}

TEST_CASE("iwelbo_repeated aggregates independent child streams") {
    auto f = make_fixture(12, ModelKind::cpa, LikelihoodKind::counts, InferenceMode::mean_field,
                          9);
    Rng parent(25);
    const auto est = iwelbo_repeated(f.ds.X, f.Xn, f.ds.D, f.library, f.vp, f.gp, 3, 5, parent);

    std::vector<double> vals;
    for (std::int64_t rep = 0; rep < 5; ++rep) {
        Rng rrng = Rng(25).child(static_cast<std::uint64_t>(rep));
        vals.push_back(iwelbo(f.ds.X, f.Xn, f.ds.D, f.library, f.vp, f.gp, 3, rrng));
    }
    const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / 5.0;
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    const double se = std::sqrt(ss / 4.0 / 5.0);

    CHECK(est.value == mean);
    CHECK(std::abs(est.stderr_ - se) < 1e-15);
    CHECK(est.k == 3);
    CHECK(est.repetitions == 5);

    Rng single(25);
    const auto one = iwelbo_repeated(f.ds.X, f.Xn, f.ds.D, f.library, f.vp, f.gp, 3, 1, single);
    CHECK(one.stderr_ == 0.0);
}

TEST_CASE("iwelbo input validation") {
    auto f = make_fixture(8, ModelKind::sams, LikelihoodKind::counts);
    Rng r(1);
    CHECK_THROWS_AS(iwelbo(f.ds.X, f.Xn, f.ds.D, f.library, f.vp, f.gp, 0, r), ValidationError);
    auto short_xn = slice_rows(f.Xn, 0, 4);
    CHECK_THROWS_AS(iwelbo(f.ds.X, short_xn, f.ds.D, f.library, f.vp, f.gp, 2, r), ShapeError);
    Rng r2(1);
    CHECK_THROWS_AS(
        iwelbo_repeated(f.ds.X, f.Xn, f.ds.D, f.library, f.vp, f.gp, 2, 0, r2), ValidationError);
}

TEST_CASE("ate of a condition against itself is exactly zero") {
    struct Case {
        ModelKind kind;
        LikelihoodKind lik;
        InferenceMode mode;
    };
    const Case cases[] = {
        {ModelKind::sams, LikelihoodKind::counts, InferenceMode::corr_both},
        {ModelKind::cpa, LikelihoodKind::gaussian, InferenceMode::mean_field},
        {ModelKind::conditional, LikelihoodKind::counts, InferenceMode::mean_field},
    };
    for (const auto& tc : cases) {
        auto f = make_fixture(10, tc.kind, tc.lik, tc.mode, 13);
        const std::vector<double> d{1.0, 0.0};
        for (std::int64_t s : {0, 3}) {
            Rng r(99);
            const auto effect = ate_estimate(d, d, f.vp, f.gp, 4, s, r);
            REQUIRE(effect.size() == static_cast<std::size_t>(f.gp.d_x));
            for (double v : effect) CHECK(v == 0.0);
        }
    }
}

TEST_CASE("ate matches the linear-model effect under a point-mass posterior") {
    const std::int64_t d_z = 2, d_x = 5, t = 2;
    Rng mrng(55);
    auto gp = GenerativeParams::make(ModelKind::sams, LikelihoodKind::gaussian, d_z, d_x, t, {},
                                     0.2, 1.0, mrng);
    auto vp = VariationalParams::make(ModelKind::sams, InferenceMode::mean_field, d_z, d_x, t,
                                      {8}, {8}, mrng);
    {
        auto& em = vp.e_mean.raw();
        em = {0.7, -1.2, 0.3, 2.0};
        auto& es = vp.e_std_raw.raw();
        std::fill(es.begin(), es.end(), -40.0);  // posterior std at its floor
        auto& ml = vp.mask_logits.raw();
        ml = {40.0, -40.0, 40.0, 40.0};  // deterministic masks {{1,0},{1,1}}
    }
    const std::vector<double> d_star{1.0, 0.0}, d0{0.0, 1.0};

    // Effect of a linear decoder: (d_star - d0) (E o M) W, basal state and
    // bias cancel.
    const std::vector<double> em_eff{0.7, 0.0, 0.3, 2.0};
    const std::vector<double> dz_shift{
        1.0 * em_eff[0] - 1.0 * em_eff[2],
        1.0 * em_eff[1] - 1.0 * em_eff[3],
    };
    const auto& w = gp.decoder.layers()[0].weight.values();  // (d_z, d_x)
    std::vector<double> expected(static_cast<std::size_t>(d_x), 0.0);
    for (std::int64_t k = 0; k < d_z; ++k)
        for (std::int64_t j = 0; j < d_x; ++j)
            expected[static_cast<std::size_t>(j)] +=
                dz_shift[static_cast<std::size_t>(k)] * w[static_cast<std::size_t>(k * d_x + j)];

    Rng r(3);
    const auto effect = ate_estimate(d_star, d0, vp, gp, 6, 0, r);
    REQUIRE(effect.size() == expected.size());
    for (std::size_t j = 0; j < expected.size(); ++j)
        CHECK(std::abs(effect[j] - expected[j]) < 1e-6);
}

TEST_CASE("finite-draw ate with shared noise equals the closed form in the gaussian model") {
    auto f = make_fixture(10, ModelKind::sams, LikelihoodKind::gaussian, InferenceMode::corr_both,
                          21);
    const std::vector<double> d_star{1.0, 0.0}, d0{0.0, 0.0};
    Rng r1(7), r2(7);
    const auto closed = ate_estimate(d_star, d0, f.vp, f.gp, 3, 0, r1);
    const auto sampled = ate_estimate(d_star, d0, f.vp, f.gp, 3, 5, r2);
    REQUIRE(closed.size() == sampled.size());
    bool any_nonzero = false;
    for (std::size_t j = 0; j < closed.size(); ++j) {
        CHECK(std::abs(closed[j] - sampled[j]) < 1e-10);
        if (std::abs(closed[j]) > 1e-6) any_nonzero = true;
    }
    CHECK(any_nonzero);
}

TEST_CASE("counts-mode ate scales with the generation library") {
    auto f = make_fixture(10, ModelKind::sams, LikelihoodKind::counts, InferenceMode::mean_field,
                          23);
    const std::vector<double> d_star{0.0, 1.0}, d0{0.0, 0.0};
    f.gp.gen_library = 100.0;
    Rng r1(9);
    const auto a1 = ate_estimate(d_star, d0, f.vp, f.gp, 4, 0, r1);
    f.gp.gen_library = 200.0;
    Rng r2(9);
    const auto a2 = ate_estimate(d_star, d0, f.vp, f.gp, 4, 0, r2);
    bool any_nonzero = false;
    for (std::size_t j = 0; j < a1.size(); ++j) {
        CHECK(std::abs(a2[j] - 2.0 * a1[j]) < 1e-12 + 1e-12 * std::abs(a2[j]));
        if (a1[j] != 0.0) any_nonzero = true;
    }
    CHECK(any_nonzero);
}

TEST_CASE("conditional-model ate responds to dosage through the decoder input") {
    auto f = make_fixture(10, ModelKind::conditional, LikelihoodKind::counts,
                          InferenceMode::mean_field, 29);
    const std::vector<double> d_star{1.0, 0.0}, d0{0.0, 0.0};
    Rng r(31);
    const auto effect = ate_estimate(d_star, d0, f.vp, f.gp, 4, 0, r);
    double norm = 0.0;
    for (double v : effect) norm += std::abs(v);
    CHECK(norm > 1e-8);
}

TEST_CASE("ate input validation") {
    auto f = make_fixture(8, ModelKind::sams, LikelihoodKind::counts);
    const std::vector<double> d{1.0, 0.0};
    Rng r(1);
    CHECK_THROWS_AS(ate_estimate(d, d, f.vp, f.gp, 0, 0, r), ValidationError);
    CHECK_THROWS_AS(ate_estimate(d, d, f.vp, f.gp, 2, -1, r), ValidationError);
    const std::vector<double> bad{1.0};
    CHECK_THROWS_AS(ate_estimate(bad, d, f.vp, f.gp, 2, 0, r), ShapeError);
    CHECK_THROWS_AS(ate_estimate(d, bad, f.vp, f.gp, 2, 0, r), ShapeError);

    auto other = make_fixture(8, ModelKind::sams, LikelihoodKind::counts,
                              InferenceMode::mean_field, 1, 2, 6, 3);
    CHECK_THROWS_AS(ate_estimate(d, d, other.vp, f.gp, 2, 0, r), ValidationError);
}

namespace {

// Four cells, one perturbation, two genes, library sizes equal to row sums.
PerturbDataset tiny_counts_dataset() {
    PerturbDataset ds;
    ds.X = Tensor::from({4, 2}, {2, 2, 6, 2, 1, 3, 2, 2});
    ds.D = Tensor::from({4, 1}, {1, 1, 0, 0});
    ds.gene_names = {"g0", "g1"};
    ds.perturbation_names = {"p0"};
    ds.library_sizes = {4, 8, 4, 4};
    ds.split.assign(4, Split::train);
    ds.mode = DataMode::counts;
    ds.validate();
    return ds;
}

}  // namespace

TEST_CASE("de matches a hand computation on a tiny counts dataset") {
    auto ds = tiny_counts_dataset();
    // Median train library 4; normalized rows (2,2), (3,1), (1,3), (2,2).
    const auto de = de_estimate(ds, Split::train, {1.0}, {0.0});
    REQUIRE(de.size() == 2);
    CHECK(std::abs(de[0] - 1.0) < 1e-12);
    CHECK(std::abs(de[1] - (-1.0)) < 1e-12);
}

TEST_CASE("de of a condition against itself is exactly zero") {
    auto ds = tiny_counts_dataset();
    const auto de = de_estimate(ds, Split::train, {1.0}, {1.0});
    for (double v : de) CHECK(v == 0.0);
}

TEST_CASE("de is invariant to row order") {
    auto ds = tiny_counts_dataset();
    PerturbDataset rev;
    rev.X = Tensor::from({4, 2}, {2, 2, 1, 3, 6, 2, 2, 2});
    rev.D = Tensor::from({4, 1}, {0, 0, 1, 1});
    rev.gene_names = ds.gene_names;
    rev.perturbation_names = ds.perturbation_names;
    rev.library_sizes = {4, 4, 8, 4};
    rev.split.assign(4, Split::train);
    rev.mode = DataMode::counts;
    rev.validate();

    const auto a = de_estimate(ds, Split::train, {1.0}, {0.0});
    const auto b = de_estimate(rev, Split::train, {1.0}, {0.0});
    REQUIRE(a.size() == b.size());
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(std::abs(a[j] - b[j]) < 1e-12);
}

TEST_CASE("de restricts matching to the requested split and names empty conditions") {
    auto ds = tiny_counts_dataset();
    ds.split = {Split::val, Split::val, Split::train, Split::train};

    try {
        de_estimate(ds, Split::train, {1.0}, {0.0});
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("d_star") != std::string::npos);
        CHECK(msg.find("train") != std::string::npos);
    }
    try {
        de_estimate(ds, Split::val, {1.0}, {0.0});
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("d0") != std::string::npos);
    }
    // Both conditions present in val after reassignment of a control cell.
    ds.split = {Split::val, Split::val, Split::val, Split::train};
    const auto de = de_estimate(ds, Split::val, {1.0}, {0.0});
    // val rows: (2,2), (3,1) treated; (1,3) control.
    CHECK(std::abs(de[0] - 1.5) < 1e-12);
    CHECK(std::abs(de[1] - (-1.5)) < 1e-12);
}

TEST_CASE("de input validation") {
    auto ds = tiny_counts_dataset();
    CHECK_THROWS_AS(de_estimate(ds, Split::train, {1.0, 0.0}, {0.0}), ShapeError);
    CHECK_THROWS_AS(de_estimate(ds, Split::train, {1.0}, {0.0, 1.0}), ShapeError);
}

TEST_CASE("pearson correlation oracles") {
    // Hand value: r((1,2,3), (1,2,4)) = 3 / sqrt(2 * 14/3).
    const double r = ate_pearson({1, 2, 3}, {1, 2, 4});
    CHECK(std::abs(r - 3.0 / std::sqrt(2.0 * 14.0 / 3.0)) < 1e-12);

    CHECK(std::abs(ate_pearson({1, 2, 3}, {2, 4, 6}) - 1.0) < 1e-12);
    CHECK(std::abs(ate_pearson({1, 2, 3}, {-2, -4, -6}) + 1.0) < 1e-12);

    // Affine rescaling of either argument leaves r unchanged.
    const std::vector<double> a{0.3, -1.1, 2.2, 0.7}, b{1.4, 0.2, -0.5, 0.9};
    std::vector<double> b_affine(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) b_affine[i] = 3.0 * b[i] + 7.0;
    CHECK(std::abs(ate_pearson(a, b) - ate_pearson(a, b_affine)) < 1e-12);

    CHECK_THROWS_AS(ate_pearson({1, 1, 1}, {1, 2, 3}), ValidationError);
    CHECK_THROWS_AS(ate_pearson({1, 2, 3}, {5, 5, 5}), ValidationError);
    CHECK_THROWS_AS(ate_pearson({1, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(ate_pearson({1}, {2}), ValidationError);
}

TEST_CASE("mask f1 scores a perfect recovery as one") {
    Rng r(61);
    std::vector<double> m(6 * 4);
    for (auto& v : m) v = r.bernoulli(0.4) ? 1.0 : 0.0;
    auto truth = Tensor::from({6, 4}, m);
    MaskEstimate est{truth};
    CHECK(mask_f1(est, truth) == 1.0);
}

TEST_CASE("mask f1 matches the worked two-by-two example") {
    auto truth = Tensor::from({2, 2}, {1, 0, 0, 0});
    MaskEstimate est{Tensor::from({2, 2}, {0.9, 0.8, 0.1, 0.2})};
    CHECK(std::abs(mask_f1(est, truth) - 2.0 / 3.0) < 1e-12);
}

TEST_CASE("mask f1 aligns latent dimensions before scoring") {
    // A cyclic column shift of the truth still scores one.
    auto truth = Tensor::from({3, 3}, {1, 0, 0, 1, 1, 0, 0, 0, 1});
    auto shifted = Tensor::from({3, 3}, {0, 1, 0, 0, 1, 1, 1, 0, 0});
    MaskEstimate est{shifted};
    CHECK(mask_f1(est, truth) == 1.0);
}

TEST_CASE("mask f1 is invariant to latent permutation of either argument") {
    Rng r(67);
    const std::int64_t t = 8, d = 5;
    std::vector<double> tv(static_cast<std::size_t>(t * d)), pv(tv.size());
    for (auto& v : tv) v = r.bernoulli(0.3) ? 1.0 : 0.0;
    for (auto& v : pv) v = r.uniform();
    auto truth = Tensor::from({t, d}, tv);
    auto probs = Tensor::from({t, d}, pv);
    const double base = mask_f1(MaskEstimate{probs}, truth);

    const std::vector<std::int64_t> perm{3, 0, 4, 1, 2};
    auto permute_cols = [&](const std::vector<double>& src) {
        std::vector<double> out(src.size());
        for (std::int64_t i = 0; i < t; ++i)
            for (std::int64_t j = 0; j < d; ++j)
                out[static_cast<std::size_t>(i * d + j)] =
                    src[static_cast<std::size_t>(i * d + perm[static_cast<std::size_t>(j)])];
        return out;
    };
    CHECK(mask_f1(MaskEstimate{Tensor::from({t, d}, permute_cols(pv))}, truth) == base);
    CHECK(mask_f1(MaskEstimate{probs}, Tensor::from({t, d}, permute_cols(tv))) == base);
}

TEST_CASE("mask f1 edge cases") {
    auto empty = Tensor::zeros({3, 2});
    CHECK(mask_f1(MaskEstimate{empty}, empty) == 1.0);

    auto truth = Tensor::from({3, 2}, {1, 0, 0, 1, 1, 0});
    CHECK(mask_f1(MaskEstimate{empty}, truth) == 0.0);

    // A probability of exactly one half does not activate an entry.
    auto half = Tensor::full({3, 2}, 0.5);
    CHECK(mask_f1(MaskEstimate{half}, empty) == 1.0);

    CHECK_THROWS_AS(mask_f1(MaskEstimate{empty}, Tensor::from({3, 2}, {1, 0, 0, 0.5, 0, 0})),
                    ValidationError);
    CHECK_THROWS_AS(mask_f1(MaskEstimate{empty}, Tensor::zeros({2, 2})), ShapeError);
}

TEST_CASE("assignment maximizes total score against brute force") {
    Rng r(71);
    for (int trial = 0; trial < 20; ++trial) {
        const std::int64_t n = 5;
        std::vector<double> score(static_cast<std::size_t>(n * n));
        for (auto& v : score) v = r.uniform(-3.0, 3.0);
        const auto assign = max_assignment(score, n);

        std::vector<char> seen(static_cast<std::size_t>(n), 0);
        double total = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            const auto j = assign[static_cast<std::size_t>(i)];
            REQUIRE(j >= 0);
            REQUIRE(j < n);
            CHECK(!seen[static_cast<std::size_t>(j)]);
            seen[static_cast<std::size_t>(j)] = 1;
            total += score[static_cast<std::size_t>(i * n + j)];
        }
        CHECK(std::abs(total - brute_force_best(score, n)) < 1e-9);
    }

    CHECK(max_assignment({}, 0).empty());
    CHECK(max_assignment({2.5}, 1) == std::vector<std::int64_t>{0});
    CHECK_THROWS_AS(max_assignment({1.0, 2.0}, 2), ShapeError);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(max_assignment({nan, 0, 0, 0}, 2), ValidationError);
}

TEST_CASE("mask f1 with the exact assignment beats greedy column matching") {
    // Truth columns (reading down): c0 = {1,1,0}, c1 = {1,0,1}. Inferred
    // i0 = {1,1,1} overlaps both; pairing i0 with c1 and i1 with c0 is the
    // unique optimum, which a greedy best-first match misses.
    auto truth = Tensor::from({3, 2}, {1, 1, 1, 0, 0, 1});
    MaskEstimate est{Tensor::from({3, 2}, {1, 1, 1, 1, 1, 0})};
    // Optimal: i0 -> c1 (tp 2), i1 -> c0 (tp 2): tp 4, fp 1, fn 0.
    CHECK(std::abs(mask_f1(est, truth) - 2.0 * 4.0 / (2.0 * 4.0 + 1.0)) < 1e-12);
}

TEST_CASE("export latents writes tables aligned with perturbation names") {
    const std::string dir = "tmp_export_latents";
    std::filesystem::remove_all(dir);

    Rng r(81);
    auto vp = VariationalParams::make(ModelKind::sams, InferenceMode::mean_field, 2, 4, 3, {8},
                                      {8}, r);
    {
        auto& ml = vp.mask_logits.raw();
        ml = {2.0, -3.0, 0.5, -0.25, 1.5, -1.0};
        auto& em = vp.e_mean.raw();
        em = {0.1, -0.2, 0.3, -0.4, 0.5, -0.6};
    }
    export_latents(vp, {"pA", "pB", "pC"}, dir);

    auto masks = read_csv(dir + "/masks.csv");
    REQUIRE(masks.header == std::vector<std::string>{"perturbation", "z0", "z1"});
    REQUIRE(masks.nrows() == 3);
    CHECK(masks.rows[0][0] == "pA");
    CHECK(masks.rows[2][0] == "pC");
    const auto probs = mask_probabilities(vp).values();
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 2; ++j)
            CHECK(parse_double_field(masks.rows[static_cast<std::size_t>(i)]
                                              [static_cast<std::size_t>(j + 1)],
                                     "masks") ==
                  probs[static_cast<std::size_t>(i * 2 + j)]);

    auto emb = read_csv(dir + "/embeddings.csv");
    REQUIRE(emb.nrows() == 3);
    const auto& means = vp.e_mean.values();
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 2; ++j)
            CHECK(parse_double_field(
                      emb.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j + 1)],
                      "embeddings") == means[static_cast<std::size_t>(i * 2 + j)]);

    std::filesystem::remove_all(dir);
}

TEST_CASE("export latents evaluates the mask-conditioned head at the thresholded mask") {
    const std::string dir = "tmp_export_latents_corr";
    std::filesystem::remove_all(dir);

    Rng r(83);
    auto vp = VariationalParams::make(ModelKind::sams, InferenceMode::corr_e, 2, 4, 2, {8}, {8},
                                      r);
    {
        auto& ml = vp.mask_logits.raw();
        ml = {3.0, -2.0, -1.0, 4.0};
    }
    export_latents(vp, {"pA", "pB"}, dir);

    NoGradGuard guard;
    auto hard = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto onehot = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto expected = split_gaussian_head(vp.emb.forward(concat_cols(hard, onehot))).first;
    const auto& ev = expected.values();

    auto emb = read_csv(dir + "/embeddings.csv");
    for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < 2; ++j)
            CHECK(parse_double_field(
                      emb.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j + 1)],
                      "embeddings") == ev[static_cast<std::size_t>(i * 2 + j)]);

    std::filesystem::remove_all(dir);
}

TEST_CASE("export latents reports all-ones masks for the fixed-mask model") {
    const std::string dir = "tmp_export_latents_cpa";
    std::filesystem::remove_all(dir);

    Rng r(85);
    auto vp = VariationalParams::make(ModelKind::cpa, InferenceMode::mean_field, 2, 4, 2, {8},
                                      {8}, r);
    export_latents(vp, {"pA", "pB"}, dir);
    auto masks = read_csv(dir + "/masks.csv");
    for (const auto& row : masks.rows)
        for (std::size_t j = 1; j < row.size(); ++j)
            CHECK(parse_double_field(row[j], "masks") == 1.0);

    std::filesystem::remove_all(dir);
}

TEST_CASE("export latents rejects unusable inputs") {
    Rng r(87);
    auto vp = VariationalParams::make(ModelKind::conditional, InferenceMode::mean_field, 2, 4, 2,
                                      {8}, {8}, r);
    CHECK_THROWS_AS(export_latents(vp, {"pA", "pB"}, "tmp_export_invalid"), ValidationError);

    auto sams_vp = VariationalParams::make(ModelKind::sams, InferenceMode::mean_field, 2, 4, 2,
                                           {8}, {8}, r);
    CHECK_THROWS_AS(export_latents(sams_vp, {"pA"}, "tmp_export_invalid"), ValidationError);
    CHECK(!std::filesystem::exists("tmp_export_invalid"));
}
