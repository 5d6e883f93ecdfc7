#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sams/error.hpp"
#include "sams/evaluation.hpp"
#include "sams/rng.hpp"
#include "sams/simulate.hpp"

using namespace sams;

TEST_CASE("fixed sparsity schedule") {
    CHECK(fixed_sparsity_alpha(50) == doctest::Approx(1e-9).epsilon(1e-12));
    CHECK(fixed_sparsity_alpha(100) == doctest::Approx(1e-18).epsilon(1e-12));
    CHECK(fixed_sparsity_alpha(200) == doctest::Approx(1e-36).epsilon(1e-12));
    // Below one sample the raw value exceeds the upper clamp.
    CHECK(fixed_sparsity_alpha(0) == 0.5);
    // Very large samples pin to the smallest representable prior.
    CHECK(fixed_sparsity_alpha(5000) == 1e-300);
    CHECK_THROWS_AS(fixed_sparsity_alpha(-1), ValidationError);
}

TEST_CASE("simulate config validation") {
    SimConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    SimConfig bad = cfg;
    bad.noise_fraction = 1.5;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = cfg;
    bad.noise_fraction = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = cfg;
    bad.t = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = cfg;
    bad.mask_density = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("simulated dataset has the documented layout") {
    SimConfig cfg;
    cfg.t = 4;
    cfg.n_per_treatment = 25;
    cfg.seed = 3;
    auto sim = simulate_dataset(cfg);

    CHECK(sim.ds.n() == 100);
    CHECK(sim.ds.d_x() == cfg.d_x);
    CHECK(sim.ds.t() == 4);
    CHECK(sim.ds.mode == DataMode::reals);
    CHECK(sim.truth.masks.rows() == 4);
    CHECK(sim.truth.masks.cols() == cfg.d_z);
    CHECK(sim.truth.sigma_sq.size() == static_cast<std::size_t>(cfg.d_x));
    CHECK(sim.signal.rows() == 100);

    // One one-hot perturbation per cell, in blocks.
    const auto& dv = sim.ds.D.values();
    for (std::int64_t i = 0; i < sim.ds.n(); ++i) {
        double sum = 0.0;
        for (std::int64_t j = 0; j < 4; ++j) sum += dv[static_cast<std::size_t>(i * 4 + j)];
        CHECK(sum == 1.0);
        CHECK(dv[static_cast<std::size_t>(i * 4 + i / 25)] == 1.0);
    }
    for (double m : sim.truth.masks.values()) CHECK((m == 0.0 || m == 1.0));
    for (double s : sim.truth.sigma_sq) CHECK(s > 0.0);
}

TEST_CASE("simulation is reproducible under its seed") {
    SimConfig cfg;
    cfg.t = 3;
    cfg.n_per_treatment = 10;
    cfg.seed = 11;
    auto a = simulate_dataset(cfg);
    auto b = simulate_dataset(cfg);
    CHECK(a.ds.X.values() == b.ds.X.values());
    CHECK(a.ds.D.values() == b.ds.D.values());
    CHECK(a.truth.masks.values() == b.truth.masks.values());
    CHECK(a.truth.embeddings.values() == b.truth.embeddings.values());
    CHECK(a.truth.sigma_sq == b.truth.sigma_sq);

    cfg.seed = 12;
    auto c = simulate_dataset(cfg);
    CHECK(a.ds.X.values() != c.ds.X.values());
}

TEST_CASE("true masks and embeddings follow their sampling laws") {
    double mask_sum = 0.0, emb_sum = 0.0;
    std::int64_t entries = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SimConfig cfg;
        cfg.t = 20;
        cfg.n_per_treatment = 1;
        cfg.seed = seed;
        auto sim = simulate_dataset(cfg);
        for (double m : sim.truth.masks.values()) mask_sum += m;
        for (double e : sim.truth.embeddings.values()) emb_sum += e;
        entries += cfg.t * cfg.d_z;
    }
    const double density = mask_sum / static_cast<double>(entries);
    const double emb_mean = emb_sum / static_cast<double>(entries);
    CHECK(std::abs(density - 0.1) < 0.02);
    CHECK(std::abs(emb_mean - 5.0) < 0.1);
}

TEST_CASE("noise calibration leaves the configured signal fraction") {
    SimConfig cfg;
    cfg.t = 20;
    cfg.n_per_treatment = 500;  // 10^4 cells
    cfg.seed = 7;
    auto sim = simulate_dataset(cfg);

    const std::int64_t n = sim.ds.n(), d = sim.ds.d_x();
    const auto& sv = sim.signal.values();
    const auto& xv = sim.ds.X.values();
    for (std::int64_t j = 0; j < d; ++j) {
        double ms = 0.0, mx = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            ms += sv[static_cast<std::size_t>(i * d + j)];
            mx += xv[static_cast<std::size_t>(i * d + j)];
        }
        ms /= static_cast<double>(n);
        mx /= static_cast<double>(n);
        double vs = 0.0, vx = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            const double cs = sv[static_cast<std::size_t>(i * d + j)] - ms;
            const double cx = xv[static_cast<std::size_t>(i * d + j)] - mx;
            vs += cs * cs;
            vx += cx * cx;
        }
        CHECK(std::abs(vs / vx - 0.8) < 0.02);
    }
}

TEST_CASE("decoder weights start orthogonal") {
    SimConfig cfg;
    cfg.t = 2;
    cfg.n_per_treatment = 2;
    cfg.seed = 19;
    auto sim = simulate_dataset(cfg);
    // First layer (d_z, 20): rows orthonormal, so the latent map is
    // injective at initialization.
    const auto& lay = sim.truth.decoder.layers();
    REQUIRE(lay.size() == 3);
    const auto& w = lay[0].weight.values();
    const std::int64_t r = lay[0].weight.rows(), c = lay[0].weight.cols();
    for (std::int64_t a = 0; a < r; ++a)
        for (std::int64_t b = 0; b < r; ++b) {
            double dot = 0.0;
            for (std::int64_t k = 0; k < c; ++k)
                dot += w[static_cast<std::size_t>(a * c + k)] *
                       w[static_cast<std::size_t>(b * c + k)];
            CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-10);
        }
}

TEST_CASE("true masks scored against themselves give perfect recovery") {
    SimConfig cfg;
    cfg.t = 6;
    cfg.n_per_treatment = 2;
    cfg.seed = 23;
    auto sim = simulate_dataset(cfg);
    MaskEstimate est{sim.truth.masks};
    CHECK(mask_f1(est, sim.truth.masks) == 1.0);
}

TEST_CASE("sim truth files round-trip") {
    const std::string dir = "tmp_sim_truth";
    std::filesystem::remove_all(dir);

    SimConfig cfg;
    cfg.t = 3;
    cfg.n_per_treatment = 4;
    cfg.seed = 29;
    auto sim = simulate_dataset(cfg);
    save_sim_truth(dir, cfg, sim.truth);

    CHECK(std::filesystem::exists(dir + "/true_masks.csv"));
    CHECK(std::filesystem::exists(dir + "/true_embeddings.csv"));
    CHECK(std::filesystem::exists(dir + "/sim_manifest.json"));

    auto files = load_sim_truth(dir);
    CHECK(files.masks.values() == sim.truth.masks.values());
    CHECK(files.embeddings.values() == sim.truth.embeddings.values());
    CHECK(files.sigma_sq == sim.truth.sigma_sq);

    std::filesystem::remove_all(dir);
}

TEST_CASE("recovery study emits one scored row per grid cell") {
    RecoveryConfig cfg;
    cfg.grid_n = {6};
    cfg.seeds = {1, 2};
    cfg.t = 3;
    cfg.d_z = 4;
    cfg.d_x = 8;
    cfg.hidden = {12};
    cfg.train.steps = 12;
    cfg.train.batch_size = 8;
    cfg.train.cadence = 6;
    const auto rows = run_recovery_study(cfg);

    REQUIRE(rows.size() == 4);  // 2 regimes x 1 sample size x 2 seeds
    for (const auto& r : rows) {
        CHECK(r.n_per_treatment == 6);
        CHECK((r.regime == "fixed_prior" || r.regime == "fixed_sparsity"));
        const double expected_alpha =
            r.regime == "fixed_prior" ? cfg.fixed_prior_alpha : fixed_sparsity_alpha(6);
        CHECK(r.alpha == expected_alpha);
        CHECK(r.f1 >= 0.0);
        CHECK(r.f1 <= 1.0);
        CHECK(r.inferred_density >= 0.0);
        CHECK(r.inferred_density <= 1.0);
    }
    CHECK(rows[0].regime == "fixed_prior");
    CHECK(rows[2].regime == "fixed_sparsity");
    CHECK(rows[0].seed == 1);
    CHECK(rows[1].seed == 2);
}

TEST_CASE("recovery study is reproducible and seed-sensitive") {
    RecoveryConfig cfg;
    cfg.grid_n = {5};
    cfg.seeds = {4};
    cfg.t = 2;
    cfg.d_z = 3;
    cfg.d_x = 6;
    cfg.hidden = {10};
    cfg.train.steps = 8;
    cfg.train.batch_size = 8;
    cfg.train.cadence = 4;
    const auto a = run_recovery_study(cfg);
    const auto b = run_recovery_study(cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].f1 == b[i].f1);
        CHECK(a[i].inferred_density == b[i].inferred_density);
    }
}

TEST_CASE("recovery study failures carry grid coordinates") {
    RecoveryConfig cfg;
    cfg.grid_n = {5};
    cfg.seeds = {9};
    cfg.t = 2;
    cfg.d_z = 3;
    cfg.d_x = 6;
    cfg.hidden = {10};
    cfg.train.steps = 6;
    cfg.train.batch_size = 8;
    cfg.train.lr = 1e15;  // blows the parameters up within a step
    try {
        run_recovery_study(cfg);
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("n_t=5") != std::string::npos);
        CHECK(msg.find("seed=9") != std::string::npos);
        CHECK(msg.find("regime=") != std::string::npos);
    }
}

TEST_CASE("recovery csv round-trips and appends") {
    const std::string path = "tmp_recovery.csv";
    std::filesystem::remove(path);

    std::vector<RecoveryRow> rows{{50, "fixed_sparsity", 1e-9, 0.95, 0.11, 0},
                                  {200, "fixed_prior", 0.1, 0.5, 0.4, 1}};
    write_recovery_csv(path, rows);
    auto back = read_recovery_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].n_per_treatment == 50);
    CHECK(back[0].regime == "fixed_sparsity");
    CHECK(back[0].alpha == 1e-9);
    CHECK(back[0].f1 == 0.95);
    CHECK(back[1].seed == 1);

    write_recovery_csv(path, {{100, "fixed_prior", 0.1, 0.7, 0.2, 2}}, true);
    back = read_recovery_csv(path);
    REQUIRE(back.size() == 3);
    CHECK(back[2].n_per_treatment == 100);
    CHECK(back[2].seed == 2);

    std::filesystem::remove(path);
}
