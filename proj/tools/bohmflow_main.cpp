#include <string>

#include "CLI11.hpp"
#include "bohmflow/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"bohmflow: score-driven Bohmian trajectory solver for the TDSE"};
    app.require_subcommand(1);

    std::string config, checkpoint, reference_dir, run_dir;
    bohmflow::CliOverrides ov;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "experiment config file")->required();
        sub->add_option("--threads", ov.threads, "worker thread cap (default: BOHMFLOW_THREADS, then hardware)");
        sub->add_option("--out", ov.out_dir, "output directory override");
        auto* s = sub->add_option("--seed", seed, "master seed override");
        sub->callback([&, s] {
            if (s->count()) {
                ov.seed = seed;
                ov.seed_set = true;
            }
        });
    };

    auto* tr = app.add_subcommand("train", "train the score network on self-generated trajectories");
    add_common(tr);

    auto* pr = app.add_subcommand("propagate", "propagate a fresh ensemble with a trained score");
    add_common(pr);
    pr->add_option("--checkpoint", checkpoint, "model checkpoint file")->required();
    pr->add_option("--reference", reference_dir, "reference run directory (enables the KL diagnostic)");
    pr->add_option("--particles", ov.particles, "ensemble size override");

    auto* rf = app.add_subcommand("reference", "run the split-operator FFT reference");
    add_common(rf);

    auto* cp = app.add_subcommand("compare", "compare a propagated run against a reference run");
    add_common(cp);
    cp->add_option("--run", run_dir, "propagated run directory")->required();
    cp->add_option("--ref", reference_dir, "reference run directory")->required();

    CLI11_PARSE(app, argc, argv);

    if (tr->parsed()) return bohmflow::cmd_train(config, ov);
    if (pr->parsed()) return bohmflow::cmd_propagate(config, checkpoint, reference_dir, ov);
    if (rf->parsed()) return bohmflow::cmd_reference(config, ov);
    if (cp->parsed()) return bohmflow::cmd_compare(config, run_dir, reference_dir, ov);
    return 1;
}
