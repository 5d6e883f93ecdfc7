#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sams/dataset.hpp"
#include "sams/models.hpp"
#include "sams/rng.hpp"
#include "sams/tensor.hpp"
#include "sams/variational.hpp"

namespace sams {

struct TrainConfig {
    std::int64_t batch_size = 512;
    double lr = 3e-4;
    double weight_decay = 1e-6;
    std::int64_t steps = 1000;
    std::int64_t particles = 1;
    std::int64_t cadence = 200;  // metric + checkpoint interval in steps
    std::uint64_t seed = 0;

    void validate() const;
};

// n_t: treated-cell counts over the train split, the denominators of the
// minibatch reweighting.
std::vector<double> perturbation_train_counts(const PerturbDataset& ds);

// Objective value for one batch given a posterior draw that covers every
// row of X (global factors reweighted by batch-count / train-count, cell
// factors restricted to the batch). Shared draws make batch enumeration
// identities exact.
Tensor elbo_with_frozen_draw(const std::vector<std::int64_t>& batch, const Tensor& X,
                             const Tensor& D, const Tensor& library, const PosteriorSample& draw,
                             const GenerativeParams& gp, const std::vector<double>& n_t);

// Reweighted minibatch objective: fresh posterior draws over the batch rows,
// averaged over `particles` independent draws. Differentiable through all
// posterior and generative parameters.
Tensor elbo_minibatch(const std::vector<std::int64_t>& batch, const Tensor& X, const Tensor& Xn,
                      const Tensor& D, const Tensor& library, const VariationalParams& vp,
                      const GenerativeParams& gp, const std::vector<double>& n_t,
                      std::int64_t particles, Rng& rng);

// Full-split objective with one posterior draw: every perturbation present
// in the split gets unit weight on its global factor, so the value is the
// split's own full-batch objective. Used for validation scoring. Returns
// the split-level value (not per cell).
double evaluate_elbo(const PerturbDataset& ds, const Tensor& Xn, Split split,
                     const VariationalParams& vp, const GenerativeParams& gp, Rng& rng);

// Adam with decoupled weight decay. Decay touches network layer parameters
// only; distribution parameters (mask logits, dispersions, posterior scale
// and location tables) stay undecayed so regularization cannot silently
// fight the priors.
class Adam {
  public:
    Adam() = default;
    Adam(const NamedParams& params, double lr, double wd);

    void step(NamedParams& params);
    static void zero_grad(NamedParams& params);

    std::int64_t step_count() const { return t_; }
    // Serialization hooks for checkpoint resume.
    const std::vector<std::vector<double>>& m() const { return m_; }
    const std::vector<std::vector<double>>& v() const { return v_; }
    void restore(std::int64_t t, std::vector<std::vector<double>> m,
                 std::vector<std::vector<double>> v);

    double lr = 3e-4;
    double wd = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

  private:
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
    std::vector<char> decay_;
};

// Name-based decay policy used by Adam.
bool decays_under_weight_decay(const std::string& param_name);

struct MetricRow {
    std::int64_t step = 0;
    double train_neg_elbo = 0.0;
    double val_elbo = 0.0;
    double wall_ms = 0.0;
};

// Owns one training run: per-step seeded batches and particle draws, Adam
// updates, cadence-driven validation scoring, and the best-validation
// parameter snapshot. Steps are independently seeded so a resumed run
// reproduces an uninterrupted one bit for bit (wall time aside).
class Trainer {
  public:
    Trainer(const PerturbDataset& ds, GenerativeParams gp, VariationalParams vp, TrainConfig cfg);

    void run();  // advances from the current step to cfg.steps

    GenerativeParams& gen() { return gp_; }
    const GenerativeParams& gen() const { return gp_; }
    VariationalParams& post() { return vp_; }
    const VariationalParams& post() const { return vp_; }
    Adam& optimizer() { return opt_; }
    const Adam& optimizer() const { return opt_; }
    const TrainConfig& config() const { return cfg_; }
    const Tensor& encoder_input() const { return Xn_; }
    const NormStats& norm_stats() const { return stats_; }

    std::int64_t step() const { return step_; }
    const std::vector<MetricRow>& metrics() const { return metrics_; }
    double best_val_elbo() const { return best_val_; }
    std::int64_t best_step() const { return best_step_; }
    const std::map<std::string, std::vector<double>>& best_params() const { return best_; }

    NamedParams all_params() const;
    // Resume from checkpoint state: step counter, optimizer moments, best
    // snapshot so far.
    void restore(std::int64_t step, std::int64_t opt_t, std::vector<std::vector<double>> m,
                 std::vector<std::vector<double>> v, double best_val, std::int64_t best_step,
                 std::map<std::string, std::vector<double>> best);

  private:
    void maybe_record(std::int64_t step, double train_neg_elbo, double wall_ms);
    std::vector<std::int64_t> draw_batch(Rng& rng) const;

    const PerturbDataset& ds_;
    GenerativeParams gp_;
    VariationalParams vp_;
    TrainConfig cfg_;
    NormStats stats_;
    Tensor Xn_;       // encoder-normalized features, all rows
    Tensor library_;  // (N, 1)
    std::vector<double> n_t_;
    std::vector<std::int64_t> train_rows_;
    Adam opt_;
    std::int64_t step_ = 0;
    std::vector<MetricRow> metrics_;
    double best_val_ = 0.0;
    std::int64_t best_step_ = -1;
    std::map<std::string, std::vector<double>> best_;
};

// Copies values between live parameters and a name-keyed snapshot.
std::map<std::string, std::vector<double>> snapshot_params(const NamedParams& params);
void load_snapshot(NamedParams& params, const std::map<std::string, std::vector<double>>& snap);

}  // namespace sams
