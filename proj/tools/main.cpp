#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sams/config.hpp"
#include "sams/error.hpp"
#include "sams/log.hpp"
#include "sams/pipeline.hpp"

namespace {

// One subcommand's flag storage. Flags are thin overrides over the config
// file; anything not surfaced as a flag is reachable through --set.
struct SubFlags {
    CLI::App* cmd = nullptr;
    std::function<void(sams::Config&)> run;

    std::string config, out, control, checkpoint, dataset, split;
    std::int64_t seed = 0;
    std::int64_t threads = 1;
    std::int64_t k = 0;
    std::vector<std::string> sets;
};

void add_common(SubFlags& f) {
    f.cmd->add_option("--config", f.config, "key = value configuration file");
    f.cmd->add_option("--seed", f.seed, "override the seed key");
    f.cmd->add_option("--out", f.out, "override the output directory");
    f.cmd->add_option("--control", f.control, "control perturbation name");
    f.cmd->add_option("--threads", f.threads, "accepted for interface stability; runs single-threaded");
    f.cmd->add_option("--set", f.sets, "extra KEY=VALUE override, repeatable");
}

bool passed(const SubFlags& f, const std::string& name) {
    const CLI::Option* o = f.cmd->get_option_no_throw(name);
    return o != nullptr && o->count() > 0;
}

sams::Config build_config(const SubFlags& f) {
    sams::Config cfg = f.config.empty() ? sams::Config::parse_string("", "<cli>")
                                        : sams::Config::parse_file(f.config);
    for (const auto& kv : f.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw sams::ValidationError("--set expects KEY=VALUE, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (passed(f, "--seed")) cfg.set("seed", std::to_string(f.seed));
    if (passed(f, "--out")) cfg.set("out", f.out);
    if (passed(f, "--control")) cfg.set("control", f.control);
    if (passed(f, "--threads")) cfg.set("threads", std::to_string(f.threads));
    if (passed(f, "--checkpoint")) cfg.set("checkpoint", f.checkpoint);
    if (passed(f, "--dataset")) cfg.set("dataset", f.dataset);
    if (passed(f, "--split")) cfg.set("split", f.split);
    if (passed(f, "--k")) cfg.set("k", std::to_string(f.k));
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    sams::log_init_from_env();

    CLI::App app{"sparse additive mechanism shift autoencoder toolkit"};
    app.require_subcommand(1);

    std::vector<std::unique_ptr<SubFlags>> subs;
    auto add = [&](const std::string& name, const std::string& desc,
                   std::function<void(sams::Config&)> fn) -> SubFlags& {
        auto f = std::make_unique<SubFlags>();
        f->cmd = app.add_subcommand(name, desc);
        f->run = std::move(fn);
        add_common(*f);
        subs.push_back(std::move(f));
        return *subs.back();
    };

    add("simulate", "generate a synthetic perturbation dataset with known masks",
        sams::cmd_simulate);

    SubFlags& train = add("train", "fit a model and write a resumable checkpoint",
                          sams::cmd_train);
    train.cmd->add_option("--dataset", train.dataset, "dataset directory");

    SubFlags& eval = add("eval", "score a checkpoint: importance-weighted bound, "
                         "treatment-effect agreement, mask recovery", sams::cmd_eval);
    eval.cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file");
    eval.cmd->add_option("--dataset", eval.dataset, "dataset directory");
    eval.cmd->add_option("--split", eval.split, "split to score (train, val, test)");
    eval.cmd->add_option("--k", eval.k, "importance particles");

    add("recovery-study", "mask recovery across sample sizes and prior regimes",
        sams::cmd_recovery_study);

    SubFlags& exp = add("export-latents", "write mask and embedding tables from a checkpoint",
                        sams::cmd_export_latents);
    exp.cmd->add_option("--checkpoint", exp.checkpoint, "checkpoint file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        for (const auto& f : subs) {
            if (!f->cmd->parsed()) continue;
            sams::Config cfg = build_config(*f);
            f->run(cfg);
            return 0;
        }
        sams::log_error("no subcommand selected");
        return 1;
    } catch (const sams::ValidationError& e) {
        sams::log_error(e.what());
        return 1;
    } catch (const sams::ShapeError& e) {
        sams::log_error(e.what());
        return 1;
    } catch (const sams::NumericError& e) {
        sams::log_error(e.what());
        return 2;
    } catch (const std::exception& e) {
        sams::log_error(e.what());
        return 2;
    }
}
