#include "sams/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "sams/error.hpp"

namespace sams {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(lr >= 0.0)) throw ValidationError("lr must be >= 0");
    if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
    if (steps < 1) throw ValidationError("steps must be >= 1");
    if (particles < 1) throw ValidationError("particles must be >= 1");
    if (cadence < 1) throw ValidationError("cadence must be >= 1");
}

std::vector<double> perturbation_train_counts(const PerturbDataset& ds) {
    return ds.treated_counts(Split::train);
}

namespace {

// Reweighting coefficients for one batch: w_t = (batch treated count) /
// (train treated count). A treated batch row whose perturbation never
// occurs in training has no defined weight.
std::vector<double> batch_weights(const Tensor& Db, const std::vector<double>& n_t) {
    const std::int64_t t = Db.cols();
    std::vector<double> w(static_cast<std::size_t>(t), 0.0);
    const auto& dv = Db.values();
    for (std::int64_t i = 0; i < Db.rows(); ++i)
        for (std::int64_t j = 0; j < t; ++j)
            w[static_cast<std::size_t>(j)] += dv[static_cast<std::size_t>(i * t + j)];
    for (std::int64_t j = 0; j < t; ++j) {
        auto& wj = w[static_cast<std::size_t>(j)];
        if (wj == 0.0) continue;
        const double denom = n_t[static_cast<std::size_t>(j)];
        if (denom <= 0.0)
            throw ValidationError("batch contains perturbation " + std::to_string(j) +
                                  " which has no training cells");
        wj /= denom;
    }
    return w;
}

// Objective for one batch given a posterior draw restricted to its rows:
// weighted global factors plus per-cell likelihood and basal terms.
Tensor batch_objective(const Tensor& Xb, const Tensor& Db, const Tensor& lib_b,
                       const PosteriorSample& ps, const GenerativeParams& gp,
                       const std::vector<double>& w) {
    Tensor global;
    if (gp.kind != ModelKind::conditional && gp.t > 0) {
        Tensor rows = sub(prior_e_rows(ps.latents.E, gp.beta), ps.log_q_e_rows);
        if (gp.kind == ModelKind::sams)
            rows = sub(add(rows, prior_m_rows(ps.latents.M, gp.alpha)), ps.log_q_m_rows);
        auto w_row = Tensor::from({1, gp.t}, w);
        global = matmul(w_row, rows);  // (1, 1)
    }
    Tensor z = gp.kind == ModelKind::conditional
                   ? conditional_decoder_input(ps.latents.Zb, Db)
                   : (gp.t > 0
                          ? add(ps.latents.Zb,
                                perturbation_offset(Db, ps.latents.E, ps.latents.M))
                          : ps.latents.Zb);
    auto lik_rows = decode_likelihood(gp, z, lib_b).log_prob(Xb);
    auto cell = sum(sub(add(lik_rows, prior_zb_rows(ps.latents.Zb)), ps.log_q_zb_rows));
    return global.defined() ? add(reshape(global, {1}), cell) : cell;
}

Tensor column(const std::vector<double>& v) {
    return Tensor::from({static_cast<std::int64_t>(v.size()), 1}, v);
}

}  // namespace

Tensor elbo_with_frozen_draw(const std::vector<std::int64_t>& batch, const Tensor& X,
                             const Tensor& D, const Tensor& library, const PosteriorSample& draw,
                             const GenerativeParams& gp, const std::vector<double>& n_t) {
    if (draw.latents.Zb.rows() != X.rows())
        throw ShapeError("elbo_with_frozen_draw: draw must cover every row of X");
    if (batch.empty()) throw ValidationError("elbo_with_frozen_draw: empty batch");
    auto Xb = take_rows(X, batch);
    auto Db = take_rows(D, batch);
    auto lib_b = take_rows(library, batch);
    PosteriorSample restricted;
    restricted.latents.E = draw.latents.E;
    restricted.latents.M = draw.latents.M;
    restricted.latents.Zb = take_rows(draw.latents.Zb, batch);
    restricted.log_q_m_rows = draw.log_q_m_rows;
    restricted.log_q_e_rows = draw.log_q_e_rows;
    restricted.log_q_zb_rows = take_rows(draw.log_q_zb_rows, batch);
    return batch_objective(Xb, Db, lib_b, restricted, gp, batch_weights(Db, n_t));
}

Tensor elbo_minibatch(const std::vector<std::int64_t>& batch, const Tensor& X, const Tensor& Xn,
                      const Tensor& D, const Tensor& library, const VariationalParams& vp,
                      const GenerativeParams& gp, const std::vector<double>& n_t,
                      std::int64_t particles, Rng& rng) {
    if (batch.empty()) throw ValidationError("elbo_minibatch: empty batch");
    if (particles < 1) throw ValidationError("elbo_minibatch: particles must be >= 1");
    if (static_cast<std::int64_t>(n_t.size()) != D.cols())
        throw ShapeError("elbo_minibatch: n_t length != perturbation count");

    auto Xb = take_rows(X, batch);
    auto Xnb = take_rows(Xn, batch);
    auto Db = take_rows(D, batch);
    auto lib_b = take_rows(library, batch);
    auto w = batch_weights(Db, n_t);

    Tensor acc;
    for (std::int64_t p = 0; p < particles; ++p) {
        Rng prng = rng.child(static_cast<std::uint64_t>(p));
        auto ps = sample_posterior(Xnb, Db, vp, prng);
        auto value = batch_objective(Xb, Db, lib_b, ps, gp, w);
        acc = acc.defined() ? add(acc, value) : value;
    }
    return particles == 1 ? acc : mul_scalar(acc, 1.0 / static_cast<double>(particles));
}

double evaluate_elbo(const PerturbDataset& ds, const Tensor& Xn, Split split,
                     const VariationalParams& vp, const GenerativeParams& gp, Rng& rng) {
    auto rows = ds.rows_in(split);
    if (rows.empty()) throw ValidationError("evaluate_elbo: split has no rows");
    NoGradGuard guard;
    auto Xb = take_rows(ds.X, rows);
    auto Xnb = take_rows(Xn, rows);
    auto Db = take_rows(ds.D, rows);
    auto lib = take_rows(column(ds.library_sizes), rows);
    // Full-batch weights over the split itself: unit weight per present
    // perturbation.
    std::vector<double> w(static_cast<std::size_t>(ds.t()), 0.0);
    {
        const auto& dv = Db.values();
        for (std::int64_t i = 0; i < Db.rows(); ++i)
            for (std::int64_t j = 0; j < Db.cols(); ++j)
                if (dv[static_cast<std::size_t>(i * Db.cols() + j)] != 0.0)
                    w[static_cast<std::size_t>(j)] = 1.0;
    }
    auto ps = sample_posterior(Xnb, Db, vp, rng);
    return batch_objective(Xb, Db, lib, ps, gp, w).item();
}

bool decays_under_weight_decay(const std::string& param_name) {
    return param_name.find(".layer") != std::string::npos;
}

Adam::Adam(const NamedParams& params, double lr_, double wd_) : lr(lr_), wd(wd_) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    decay_.reserve(params.size());
    for (const auto& [name, p] : params) {
        m_.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
        v_.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
        decay_.push_back(decays_under_weight_decay(name) ? 1 : 0);
    }
}

void Adam::step(NamedParams& params) {
    if (params.size() != m_.size())
        throw ShapeError("Adam::step: parameter list does not match optimizer state");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].second;
        if (p.size() == 0) continue;
        const auto& g = p.grad();
        auto& val = p.raw();
        auto& m = m_[i];
        auto& v = v_[i];
        if (m.size() != val.size())
            throw ShapeError("Adam::step: state size mismatch for " + params[i].first);
        const bool dec = decay_[i] != 0;
        for (std::size_t k = 0; k < val.size(); ++k) {
            if (dec) val[k] -= lr * wd * val[k];
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            const double mh = m[k] / bc1;
            const double vh = v[k] / bc2;
            val[k] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
}

void Adam::zero_grad(NamedParams& params) {
    for (auto& [name, p] : params) p.zero_grad();
}

void Adam::restore(std::int64_t t, std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v) {
    if (m.size() != m_.size() || v.size() != v_.size())
        throw ValidationError("Adam::restore: state tensor count mismatch");
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size())
            throw ValidationError("Adam::restore: state size mismatch");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

std::map<std::string, std::vector<double>> snapshot_params(const NamedParams& params) {
    std::map<std::string, std::vector<double>> snap;
    for (const auto& [name, p] : params) snap[name] = p.values();
    return snap;
}

void load_snapshot(NamedParams& params, const std::map<std::string, std::vector<double>>& snap) {
    for (auto& [name, p] : params) {
        auto it = snap.find(name);
        if (it == snap.end()) throw ValidationError("snapshot missing parameter " + name);
        if (it->second.size() != static_cast<std::size_t>(p.size()))
            throw ValidationError("snapshot size mismatch for " + name);
        p.raw() = it->second;
    }
}

Trainer::Trainer(const PerturbDataset& ds, GenerativeParams gp, VariationalParams vp,
                 TrainConfig cfg)
    : ds_(ds), gp_(std::move(gp)), vp_(std::move(vp)), cfg_(cfg) {
    cfg_.validate();
    gp_.validate();
    vp_.validate();
    if (gp_.d_x != ds.d_x() || gp_.t != ds.t())
        throw ValidationError("model dimensions disagree with the dataset");
    if (vp_.d_x != ds.d_x() || vp_.t != ds.t() || vp_.d_z != gp_.d_z || vp_.kind != gp_.kind)
        throw ValidationError("posterior dimensions disagree with the model");
    if (gp_.likelihood == LikelihoodKind::counts && ds.mode != DataMode::counts)
        throw ValidationError("counts likelihood requires a counts dataset");
    stats_ = encoder_stats(ds);
    Xn_ = normalize_for_encoder(ds, stats_);
    library_ = column(ds.library_sizes);
    n_t_ = perturbation_train_counts(ds);
    train_rows_ = ds.rows_in(Split::train);
    if (train_rows_.empty()) throw ValidationError("no training rows");
    gp_.gen_library = ds.mode == DataMode::counts ? median_train_library(ds) : 1.0;
    opt_ = Adam(all_params(), cfg_.lr, cfg_.weight_decay);
    best_val_ = -std::numeric_limits<double>::infinity();
}

NamedParams Trainer::all_params() const {
    NamedParams out;
    gp_.named_params(out);
    vp_.named_params(out);
    return out;
}

void Trainer::restore(std::int64_t step, std::int64_t opt_t, std::vector<std::vector<double>> m,
                      std::vector<std::vector<double>> v, double best_val,
                      std::int64_t best_step, std::map<std::string, std::vector<double>> best) {
    if (step < 0 || step > cfg_.steps) throw ValidationError("restore: step out of range");
    step_ = step;
    opt_.restore(opt_t, std::move(m), std::move(v));
    best_val_ = best_val;
    best_step_ = best_step;
    best_ = std::move(best);
}

std::vector<std::int64_t> Trainer::draw_batch(Rng& rng) const {
    const auto n = static_cast<std::int64_t>(train_rows_.size());
    const std::int64_t b = std::min<std::int64_t>(cfg_.batch_size, n);
    auto pool = train_rows_;
    for (std::int64_t i = 0; i < b; ++i) {
        const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(b));
    return pool;
}

void Trainer::run() {
    auto params = all_params();
    const bool has_val = !ds_.rows_in(Split::val).empty();
    for (; step_ < cfg_.steps; ++step_) {
        const auto t0 = std::chrono::steady_clock::now();
        // Independent stream per step: a resumed run replays the same
        // batches and noise as an uninterrupted one.
        Rng srng = Rng(mix_seed(cfg_.seed, static_cast<std::uint64_t>(2 * step_)));
        auto batch = draw_batch(srng);
        Tensor loss;
        try {
            auto lmb = elbo_minibatch(batch, ds_.X, Xn_, ds_.D, library_, vp_, gp_, n_t_,
                                      cfg_.particles, srng);
            loss = mul_scalar(lmb, -1.0 / static_cast<double>(batch.size()));
        } catch (const NumericError& e) {
            throw NumericError("step " + std::to_string(step_) + ": " + e.what());
        }
        const double loss_value = loss.item();
        if (!std::isfinite(loss_value))
            throw NumericError("step " + std::to_string(step_) + ": non-finite training loss");

        if (step_ % cfg_.cadence == 0) {
            // Validation scoring happens before the update so the metric row
            // describes the parameters the step started from.
            Rng erng = Rng(mix_seed(cfg_.seed, static_cast<std::uint64_t>(2 * step_ + 1)));
            const double val = evaluate_elbo(ds_, Xn_, has_val ? Split::val : Split::train, vp_,
                                             gp_, erng);
            if (val > best_val_) {
                best_val_ = val;
                best_step_ = step_;
                best_ = snapshot_params(params);
            }
            const double ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - t0)
                                  .count();
            metrics_.push_back({step_, loss_value, val, ms});
        }

        if (cfg_.lr == 0.0) continue;  // decay is lr-scaled too: nothing to apply
        Adam::zero_grad(params);
        backward(loss);
        opt_.step(params);
    }
}

}  // namespace sams
