#include "madrl/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"MAD policies: train, evaluate, verify and export"};
    app.require_subcommand(1);
    madrl::CliOptions o;

    std::uint64_t seed = 0;
    std::size_t episodes = 0, n = 0;
    std::string mode;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "JSON config file (defaults are used for missing keys)");
        sub->add_option("--seed", seed, "Run seed");
        sub->add_option("--out-dir", o.out_dir, "Output directory");
        sub->add_option("--set", o.set, "Override a config value, key.path=value (repeatable)");
    };

    auto* train = app.add_subcommand("train", "Train a policy with DDPG");
    common(train);
    train->add_option("--mode", mode, "MAD|MA|AD|DF|MLP|BASE");
    train->add_option("--episodes", episodes, "Number of training episodes");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint against the base controller");
    common(eval);
    eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
    eval->add_option("--mode", mode, "validation|generalization");
    eval->add_option("--n", n, "Number of rollouts");

    auto* verify = app.add_subcommand("verify", "Run the stability and inclusion checks");
    common(verify);
    verify->add_option("--checkpoint", o.checkpoint, "Check this policy instead of a fresh one");
    verify->add_option("--mode", mode, "Policy mode for a fresh policy");

    auto* exp = app.add_subcommand("export", "Export parameters, trajectories or gain estimates");
    common(exp);
    exp->add_option("--checkpoint", o.checkpoint, "Checkpoint file (else a fresh policy from --config)");
    exp->add_option("--what", o.what, "params|trajectories|gains")->required();
    exp->add_option("--mode", mode, "Policy mode (params, gains) or validation|generalization (trajectories)");
    exp->add_option("--n", n, "Number of trajectories");

    CLI11_PARSE(app, argc, argv);

    for (auto* sub : {train, eval, verify, exp}) {
        if (sub->count("--seed")) o.seed = seed;
        if (sub->count("--mode")) o.mode = mode;
        if (sub->get_option_no_throw("--episodes") && sub->count("--episodes")) o.episodes = episodes;
        if (sub->get_option_no_throw("--n") && sub->count("--n")) o.n = n;
    }

    if (*train) return madrl::cmd_train(o);
    if (*eval) return madrl::cmd_eval(o);
    if (*verify) return madrl::cmd_verify(o);
    return madrl::cmd_export(o);
}
