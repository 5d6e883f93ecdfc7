#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "sams/evaluation.hpp"
#include "sams/inference.hpp"
#include "sams/models.hpp"
#include "sams/rng.hpp"
#include "sams/simulate.hpp"
#include "sams/tensor.hpp"
#include "sams/variational.hpp"

namespace {

using namespace sams;

// A mid-sized workload shared by the training-path benchmarks.
struct Workload {
    PerturbDataset ds;
    Tensor Xn;
    GenerativeParams gp;
    VariationalParams vp;
    std::vector<double> n_t;
    std::vector<std::int64_t> batch;

    static Workload make(std::int64_t batch_size) {
        SimConfig sc;
        sc.d_z = 10;
        sc.d_x = 100;
        sc.t = 20;
        sc.n_per_treatment = 32;
        sc.seed = 7;
        Workload w{simulate_dataset(sc).ds, {}, {}, {}, {}, {}};
        w.Xn = normalize_for_encoder(w.ds, encoder_stats(w.ds));
        Rng rng(11);
        w.gp = GenerativeParams::make(ModelKind::sams, LikelihoodKind::gaussian, sc.d_z, sc.d_x,
                                      sc.t, {100, 100}, 0.1, 1.0, rng);
        w.gp.gen_library = 1.0;
        w.vp = VariationalParams::make(ModelKind::sams, InferenceMode::mean_field, sc.d_z, sc.d_x,
                                       sc.t, {100, 100}, {100, 100}, rng);
        for (std::int64_t i = 0; i < batch_size; ++i)
            w.batch.push_back(i % w.ds.X.rows());
        w.n_t = perturbation_train_counts(w.ds);
        return w;
    }
};

void bm_objective_forward(benchmark::State& state) {
    Workload w = Workload::make(state.range(0));
    Rng rng(3);
    Tensor lib = Tensor::full({w.ds.X.rows(), 1}, 1.0);
    for (auto _ : state) {
        NoGradGuard guard;
        Tensor v = elbo_minibatch(w.batch, w.ds.X, w.Xn, w.ds.D, lib, w.vp, w.gp, w.n_t, 1, rng);
        benchmark::DoNotOptimize(v.item());
    }
}
BENCHMARK(bm_objective_forward)->Arg(32)->Arg(128);

void bm_objective_backward(benchmark::State& state) {
    Workload w = Workload::make(state.range(0));
    Rng rng(3);
    Tensor lib = Tensor::full({w.ds.X.rows(), 1}, 1.0);
    NamedParams params;
    w.gp.named_params(params);
    w.vp.named_params(params);
    for (auto _ : state) {
        Adam::zero_grad(params);
        Tensor v = elbo_minibatch(w.batch, w.ds.X, w.Xn, w.ds.D, lib, w.vp, w.gp, w.n_t, 1, rng);
        backward(v);
        benchmark::DoNotOptimize(v.item());
    }
}
BENCHMARK(bm_objective_backward)->Arg(32)->Arg(128);

void bm_importance_bound(benchmark::State& state) {
    Workload w = Workload::make(64);
    Tensor lib = Tensor::full({w.ds.X.rows(), 1}, 1.0);
    for (auto _ : state) {
        Rng rng(5);
        benchmark::DoNotOptimize(
            iwelbo(w.ds.X, w.Xn, w.ds.D, lib, w.vp, w.gp, state.range(0), rng));
    }
}
BENCHMARK(bm_importance_bound)->Arg(1)->Arg(10);

void bm_treatment_effect(benchmark::State& state) {
    Workload w = Workload::make(32);
    std::vector<double> d_star(static_cast<std::size_t>(w.gp.t), 0.0);
    std::vector<double> d0(static_cast<std::size_t>(w.gp.t), 0.0);
    d_star[0] = 1.0;
    d0[1] = 1.0;
    for (auto _ : state) {
        Rng rng(9);
        benchmark::DoNotOptimize(ate_estimate(d_star, d0, w.vp, w.gp, 50, 0, rng));
    }
}
BENCHMARK(bm_treatment_effect);

void bm_simulate(benchmark::State& state) {
    for (auto _ : state) {
        SimConfig sc;
        sc.n_per_treatment = state.range(0);
        sc.seed = 13;
        benchmark::DoNotOptimize(simulate_dataset(sc).ds.X.rows());
    }
}
BENCHMARK(bm_simulate)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
