// lcl: train, evaluate and inspect local-contrast networks.
//
//   lcl train --config run.json
//   lcl eval --checkpoint model.ckpt --config run.json [--stub oracle]
//   lcl sample --config run.json --count 400 --out trials.json
//   lcl gradcheck [--config run.json]
//
// Exit codes: 0 ok, 2 config/usage, 3 data, 4 numeric failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "lcl/cli.hpp"
#include "lcl/ops.hpp"

int main(int argc, char** argv) {
    lcl::cli::init_logging();

    CLI::App app{"Local contrast learning: training, evaluation and diagnostics"};
    app.require_subcommand(1);

    std::string config, checkpoint, stub, out;
    std::size_t count = 0;
    bool corrupt_backward = false;

    auto* train = app.add_subcommand("train", "train a network from a config");
    train->add_option("--config", config, "run config (JSON)")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the configured protocol");
    eval->add_option("--config", config, "run config (JSON)")->required();
    eval->add_option("--checkpoint", checkpoint, "trained checkpoint");
    eval->add_option("--stub", stub, "score with a stub instead of a network")
        ->check(CLI::IsMember({"oracle", "constant", "inverted", "random"}));

    auto* sample = app.add_subcommand("sample", "write sampled contexts as a trial manifest");
    sample->add_option("--config", config, "run config (JSON)")->required();
    sample->add_option("--count", count, "number of contexts")->required();
    sample->add_option("--out", out, "manifest path")->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and numeric gradients of a small network");
    gradcheck->add_option("--config", config, "run config (JSON); n, L and image size are overridden");
    // Test fixture: scales the sigmoid backward pass so the check must fail.
    gradcheck->add_flag("--corrupt-backward", corrupt_backward)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : lcl::cli::config_error;
    }

    try {
        const lcl::RunConfig cfg = config.empty() ? lcl::RunConfig{} : lcl::load_run_config(config);
        if (*train) return lcl::cli::cmd_train(cfg);
        if (*eval) return lcl::cli::cmd_eval(cfg, checkpoint, stub, std::cout);
        if (*sample) return lcl::cli::cmd_sample(cfg, count, out);
        std::optional<lcl::diagnostics::ScopedBackwardFault> fault;
        if (corrupt_backward) fault.emplace(0.5);
        return lcl::cli::cmd_gradcheck(cfg, std::cout);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return lcl::cli::exit_code_for(e);
    }
}
