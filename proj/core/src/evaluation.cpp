#include "sams/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "sams/csv.hpp"
#include "sams/error.hpp"
#include "sams/inference.hpp"

namespace sams {

namespace {

double logsumexp(const std::vector<double>& v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double acc = 0.0;
    for (double x : v) acc += std::exp(x - m);
    return m + std::log(acc);
}

std::vector<std::int64_t> iota_rows(std::int64_t n) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

void check_aligned(const Tensor& X, const Tensor& Xn, const Tensor& D, const Tensor& library) {
    if (!X.defined() || X.ndim() != 2) throw ShapeError("iwelbo: X must be 2-d");
    if (Xn.rows() != X.rows() || D.rows() != X.rows())
        throw ShapeError("iwelbo: X, Xn and D row counts disagree");
    if (library.defined() && library.rows() != X.rows())
        throw ShapeError("iwelbo: library row count disagrees with X");
}

}  // namespace

double iwelbo(const Tensor& X, const Tensor& Xn, const Tensor& D, const Tensor& library,
              const VariationalParams& vp, const GenerativeParams& gp, std::int64_t K, Rng& rng) {
    if (K < 1) throw ValidationError("iwelbo: particle count must be >= 1");
    check_aligned(X, Xn, D, library);
    if (gp.likelihood == LikelihoodKind::counts && !library.defined())
        throw ValidationError("iwelbo: count observations need library sizes");
    const Tensor lib = library.defined() ? library : Tensor::full({X.rows(), 1}, 1.0);
    NoGradGuard guard;

    // Presence weights: n_t equal to this slice's own treated counts gives
    // every present perturbation unit weight and drops the absent ones.
    std::vector<double> n_t(static_cast<std::size_t>(D.cols()), 0.0);
    {
        const auto counts = colsum(D);
        const auto& cv = counts.values();
        n_t.assign(cv.begin(), cv.end());
    }
    const auto all = iota_rows(X.rows());

    std::vector<double> log_w(static_cast<std::size_t>(K));
    for (std::int64_t k = 0; k < K; ++k) {
        Rng prng = rng.child(static_cast<std::uint64_t>(k));
        auto ps = sample_posterior(Xn, D, vp, prng);
        log_w[static_cast<std::size_t>(k)] =
            elbo_with_frozen_draw(all, X, D, lib, ps, gp, n_t).item();
    }
    return logsumexp(log_w) - std::log(static_cast<double>(K));
}

IwelboEstimate iwelbo_repeated(const Tensor& X, const Tensor& Xn, const Tensor& D,
                               const Tensor& library, const VariationalParams& vp,
                               const GenerativeParams& gp, std::int64_t K,
                               std::int64_t repetitions, Rng& rng) {
    if (repetitions < 1) throw ValidationError("iwelbo_repeated: repetitions must be >= 1");
    std::vector<double> vals(static_cast<std::size_t>(repetitions));
    for (std::int64_t r = 0; r < repetitions; ++r) {
        Rng rrng = rng.child(static_cast<std::uint64_t>(r));
        vals[static_cast<std::size_t>(r)] = iwelbo(X, Xn, D, library, vp, gp, K, rrng);
    }
    IwelboEstimate est;
    est.k = K;
    est.repetitions = repetitions;
    est.value = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(repetitions);
    if (repetitions > 1) {
        double ss = 0.0;
        for (double v : vals) ss += (v - est.value) * (v - est.value);
        est.stderr_ = std::sqrt(ss / static_cast<double>(repetitions - 1) /
                                static_cast<double>(repetitions));
    }
    return est;
}

namespace {

// Decoded mean for one basal row under one condition; shared per-particle
// state keeps d_star = d0 an exact cancellation.
Tensor condition_mean(const Tensor& zb, const Tensor& d_row, const Tensor& em,
                      const GenerativeParams& gp, const Tensor& library) {
    Tensor z;
    if (gp.kind == ModelKind::conditional) {
        z = conditional_decoder_input(zb, d_row);
    } else {
        z = add(zb, matmul(d_row, em));
    }
    return decode_likelihood(gp, z, library).mean;
}

Tensor condition_draws(const Tensor& zb, const Tensor& d_row, const Tensor& em,
                       const GenerativeParams& gp, const Tensor& library, std::int64_t s,
                       const Rng& prng) {
    Tensor z;
    if (gp.kind == ModelKind::conditional) {
        z = conditional_decoder_input(zb, d_row);
    } else {
        z = add(zb, matmul(d_row, em));
    }
    auto lik = decode_likelihood(gp, z, library);
    Tensor acc = Tensor::zeros({1, gp.d_x});
    auto& av = acc.raw();
    for (std::int64_t i = 0; i < s; ++i) {
        // The same child key per draw index gives both conditions a common
        // noise stream, so equal conditions produce equal draws.
        Rng srng = prng.child(static_cast<std::uint64_t>(1000 + i));
        const auto dv = lik.sample(srng).values();
        for (std::size_t j = 0; j < av.size(); ++j) av[j] += dv[j] / static_cast<double>(s);
    }
    return acc;
}

}  // namespace

std::vector<double> ate_estimate(const std::vector<double>& d_star,
                                 const std::vector<double>& d0, const VariationalParams& vp,
                                 const GenerativeParams& gp, std::int64_t K, std::int64_t s,
                                 Rng& rng) {
    if (K < 1) throw ValidationError("ate_estimate: particle count must be >= 1");
    if (s < 0) throw ValidationError("ate_estimate: draw count must be >= 0");
    gp.validate();
    vp.validate();
    if (vp.kind != gp.kind || vp.d_z != gp.d_z || vp.t != gp.t)
        throw ValidationError("ate_estimate: posterior and model dimensions disagree");
    if (static_cast<std::int64_t>(d_star.size()) != gp.t ||
        static_cast<std::int64_t>(d0.size()) != gp.t)
        throw ShapeError("ate_estimate: dosage vectors must have one entry per perturbation");
    for (double v : d_star)
        if (!std::isfinite(v)) throw ValidationError("ate_estimate: non-finite d_star entry");
    for (double v : d0)
        if (!std::isfinite(v)) throw ValidationError("ate_estimate: non-finite d0 entry");
    NoGradGuard guard;

    auto star_row = Tensor::from({1, gp.t}, d_star);
    auto zero_row = Tensor::from({1, gp.t}, d0);
    Tensor library;
    if (gp.likelihood == LikelihoodKind::counts)
        library = Tensor::full({1, 1}, gp.gen_library);

    std::vector<double> acc(static_cast<std::size_t>(gp.d_x), 0.0);
    for (std::int64_t k = 0; k < K; ++k) {
        Rng prng = rng.child(static_cast<std::uint64_t>(k));
        Tensor em;  // effective shift matrix E ⊙ M
        if (gp.kind != ModelKind::conditional) {
            auto globals = sample_posterior_globals(vp, prng);
            em = mul(globals.latents.E, globals.latents.M);
        }
        auto zb = Tensor::from({1, gp.d_z}, prng.normal_vec(static_cast<std::size_t>(gp.d_z)));

        Tensor star_val, zero_val;
        if (s == 0) {
            star_val = condition_mean(zb, star_row, em, gp, library);
            zero_val = condition_mean(zb, zero_row, em, gp, library);
        } else {
            star_val = condition_draws(zb, star_row, em, gp, library, s, prng);
            zero_val = condition_draws(zb, zero_row, em, gp, library, s, prng);
        }
        const auto& sv = star_val.values();
        const auto& zv = zero_val.values();
        for (std::size_t j = 0; j < acc.size(); ++j)
            acc[j] += (sv[j] - zv[j]) / static_cast<double>(K);
    }
    return acc;
}

namespace {

bool dosage_matches(const Tensor& D, std::int64_t row, const std::vector<double>& pattern) {
    const auto& dv = D.values();
    const std::int64_t t = D.cols();
    for (std::int64_t j = 0; j < t; ++j)
        if (dv[static_cast<std::size_t>(row * t + j)] != pattern[static_cast<std::size_t>(j)])
            return false;
    return true;
}

std::vector<double> condition_mean_rows(const Tensor& Xnorm, const Tensor& D,
                                        const std::vector<std::int64_t>& rows,
                                        const std::vector<double>& pattern, Split split,
                                        const std::string& label) {
    const std::int64_t d_x = Xnorm.cols();
    std::vector<double> mean(static_cast<std::size_t>(d_x), 0.0);
    std::int64_t count = 0;
    const auto& xv = Xnorm.values();
    for (std::int64_t r : rows) {
        if (!dosage_matches(D, r, pattern)) continue;
        ++count;
        for (std::int64_t j = 0; j < d_x; ++j)
            mean[static_cast<std::size_t>(j)] += xv[static_cast<std::size_t>(r * d_x + j)];
    }
    if (count == 0)
        throw ValidationError("de_estimate: no " + split_name(split) + " cells match condition " +
                              label);
    for (auto& m : mean) m /= static_cast<double>(count);
    return mean;
}

}  // namespace

std::vector<double> de_estimate(const PerturbDataset& ds, Split split,
                                const std::vector<double>& d_star,
                                const std::vector<double>& d0) {
    if (static_cast<std::int64_t>(d_star.size()) != ds.t() ||
        static_cast<std::int64_t>(d0.size()) != ds.t())
        throw ShapeError("de_estimate: dosage vectors must have one entry per perturbation");
    const auto rows = ds.rows_in(split);
    const auto Xnorm = library_normalize(ds);
    const auto star = condition_mean_rows(Xnorm, ds.D, rows, d_star, split, "d_star");
    const auto zero = condition_mean_rows(Xnorm, ds.D, rows, d0, split, "d0");
    std::vector<double> out(star.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = star[j] - zero[j];
    return out;
}

double ate_pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("ate_pearson: length mismatch");
    if (a.size() < 2) throw ValidationError("ate_pearson: need at least two features");
    for (double v : a)
        if (!std::isfinite(v)) throw ValidationError("ate_pearson: non-finite entry");
    for (double v : b)
        if (!std::isfinite(v)) throw ValidationError("ate_pearson: non-finite entry");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double cab = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        cab += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 || vb == 0.0)
        throw ValidationError("ate_pearson: constant input has undefined correlation");
    return cab / std::sqrt(va * vb);
}

Tensor MaskEstimate::binary() const {
    if (!probabilities.defined() || probabilities.ndim() != 2)
        throw ShapeError("mask estimate probabilities must be 2-d");
    const auto& pv = probabilities.values();
    std::vector<double> out(pv.size());
    for (std::size_t i = 0; i < pv.size(); ++i) out[i] = pv[i] > 0.5 ? 1.0 : 0.0;
    return Tensor::from(probabilities.shape(), std::move(out));
}

std::vector<std::int64_t> max_assignment(const std::vector<double>& score, std::int64_t n) {
    if (n < 0) throw ValidationError("max_assignment: negative size");
    if (static_cast<std::int64_t>(score.size()) != n * n)
        throw ShapeError("max_assignment: score is not n x n");
    for (double v : score)
        if (!std::isfinite(v)) throw ValidationError("max_assignment: non-finite score");
    if (n == 0) return {};

    // Shortest augmenting paths on row/column potentials, minimizing the
    // negated score. p[j] is the row matched to column j, 1-indexed with a
    // virtual zero row/column.
    const double inf = std::numeric_limits<double>::infinity();
    auto cost = [&](std::int64_t i, std::int64_t j) {
        return -score[static_cast<std::size_t>(i * n + j)];
    };
    std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0);
    std::vector<double> v(static_cast<std::size_t>(n + 1), 0.0);
    std::vector<std::int64_t> p(static_cast<std::size_t>(n + 1), 0);
    std::vector<std::int64_t> way(static_cast<std::size_t>(n + 1), 0);
    for (std::int64_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::int64_t j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
        std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const std::int64_t i0 = p[static_cast<std::size_t>(j0)];
            std::int64_t j1 = -1;
            double delta = inf;
            for (std::int64_t j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (std::int64_t j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const std::int64_t j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::int64_t> row_to_col(static_cast<std::size_t>(n), -1);
    for (std::int64_t j = 1; j <= n; ++j)
        row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
    return row_to_col;
}

double mask_f1(const MaskEstimate& inferred, const Tensor& truth) {
    auto B = inferred.binary();
    if (!truth.defined() || truth.ndim() != 2) throw ShapeError("mask_f1: truth must be 2-d");
    if (truth.rows() != B.rows() || truth.cols() != B.cols())
        throw ShapeError("mask_f1: inferred and true mask shapes disagree");
    const auto& tv = truth.values();
    for (double x : tv)
        if (x != 0.0 && x != 1.0)
            throw ValidationError("mask_f1: true mask entries must be 0 or 1");

    const std::int64_t t = B.rows();
    const std::int64_t d = B.cols();
    const auto& bv = B.values();

    // Column-to-column true-positive counts; the assignment aligns latent
    // dimensions, which carry no inherent order.
    std::vector<double> tp(static_cast<std::size_t>(d * d), 0.0);
    for (std::int64_t i = 0; i < d; ++i)
        for (std::int64_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::int64_t r = 0; r < t; ++r)
                s += bv[static_cast<std::size_t>(r * d + i)] *
                     tv[static_cast<std::size_t>(r * d + j)];
            tp[static_cast<std::size_t>(i * d + j)] = s;
        }
    const auto perm = max_assignment(tp, d);
    double matched = 0.0;
    for (std::int64_t i = 0; i < d; ++i)
        matched += tp[static_cast<std::size_t>(i * d + perm[static_cast<std::size_t>(i)])];
    const double pos_inferred = std::accumulate(bv.begin(), bv.end(), 0.0);
    const double pos_true = std::accumulate(tv.begin(), tv.end(), 0.0);
    const double fp = pos_inferred - matched;
    const double fn = pos_true - matched;
    const double denom = 2.0 * matched + fp + fn;
    if (denom == 0.0) return 1.0;
    return 2.0 * matched / denom;
}

namespace {

void write_latent_table(const std::string& path, const std::vector<std::string>& names,
                        const Tensor& values) {
    CsvTable out;
    out.header.push_back("perturbation");
    for (std::int64_t j = 0; j < values.cols(); ++j)
        out.header.push_back("z" + std::to_string(j));
    const auto& vv = values.values();
    for (std::int64_t i = 0; i < values.rows(); ++i) {
        std::vector<std::string> row;
        row.push_back(names[static_cast<std::size_t>(i)]);
        for (std::int64_t j = 0; j < values.cols(); ++j)
            row.push_back(format_double(vv[static_cast<std::size_t>(i * values.cols() + j)]));
        out.rows.push_back(std::move(row));
    }
    write_csv(path, out);
}

}  // namespace

void export_latents(const VariationalParams& vp,
                    const std::vector<std::string>& perturbation_names,
                    const std::string& out_dir) {
    vp.validate();
    if (vp.kind == ModelKind::conditional)
        throw ValidationError("export_latents: conditional model has no mask or embedding latents");
    if (static_cast<std::int64_t>(perturbation_names.size()) != vp.t)
        throw ValidationError("export_latents: name count != perturbation count");
    NoGradGuard guard;

    auto probs = mask_probabilities(vp);
    Tensor means;
    if (vp.correlated_e()) {
        // The mask-conditioned head is reported at the thresholded mask.
        MaskEstimate est{probs};
        auto hard = est.binary();
        auto onehot = Tensor::zeros({vp.t, vp.t});
        {
            auto& ov = onehot.raw();
            for (std::int64_t i = 0; i < vp.t; ++i)
                ov[static_cast<std::size_t>(i * vp.t + i)] = 1.0;
        }
        means = split_gaussian_head(vp.emb.forward(concat_cols(hard, onehot))).first;
    } else {
        means = vp.e_mean;
    }

    std::filesystem::create_directories(out_dir);
    write_latent_table(out_dir + "/masks.csv", perturbation_names, probs);
    write_latent_table(out_dir + "/embeddings.csv", perturbation_names, means);
}

}  // namespace sams
