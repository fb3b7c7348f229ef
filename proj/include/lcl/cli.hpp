#pragma once

#include <spdlog/cfg/helpers.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lcl/config.hpp"
#include "lcl/error.hpp"
#include "lcl/evaluator.hpp"
#include "lcl/grad_check.hpp"
#include "lcl/manifest.hpp"
#include "lcl/trainer.hpp"

namespace lcl::cli {

enum ExitCode : int { ok = 0, failure = 1, config_error = 2, data_error = 3, numeric_error = 4 };

/// Routes log output to stderr. Verbosity comes from LCL_LOG using spdlog's
/// level syntax ("debug", "warn", "off", ...); the default is info.
inline void init_logging() {
    auto logger = spdlog::stderr_logger_st("lcl");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::info);
    if (const char* env = std::getenv("LCL_LOG")) {
        spdlog::cfg::helpers::load_levels(env);
    }
}

/// Maps the library's error families to exit codes. A shape mismatch between
/// a config and a checkpoint is a configuration problem.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return config_error;
    if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const LoadError*>(&e)) return data_error;
    if (dynamic_cast<const NumericError*>(&e)) return numeric_error;
    return failure;
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text, const std::string& what) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw DataError("cannot write " + what + " " + path.string());
    }
    f << text;
}

inline void write_effective(const RunConfig& cfg) {
    if (cfg.io.effective_config.empty()) return;
    write_run_config(cfg.io.effective_config, cfg);
    spdlog::debug("effective config written to {}", cfg.io.effective_config);
}

} // namespace detail

/// Trains on data.train and writes io.checkpoint, io.loss_trace and the
/// effective config (default: <checkpoint>.config.json).
inline int cmd_train(RunConfig cfg) {
    if (cfg.io.checkpoint.empty()) {
        throw ConfigError("io.checkpoint must be set for train");
    }
    if (!cfg.data.train.configured()) {
        throw ConfigError("data.train must be set for train");
    }
    if (cfg.io.effective_config.empty()) cfg.io.effective_config = cfg.io.checkpoint + ".config.json";
    detail::write_effective(cfg);

    const Dataset ds = load_training_set(cfg);
    spdlog::info("training set: {} categories, {} to {} samples each, {}px", ds.size(), ds.min_samples(),
                 ds.max_samples(), ds.image_size());
    TrainConfig tc = cfg.train;
    tc.checkpoint_path = cfg.io.checkpoint;
    tc.loss_trace_path = cfg.io.loss_trace;
    train<float>(cfg.model, tc, ds, [](const TrainProgress& p) {
        spdlog::info("step {} lr {:g} loss {:.6f} batch accuracy {:.3f}", p.step + 1, p.lr, p.loss, p.batch_accuracy);
    });
    spdlog::info("checkpoint written to {}", cfg.io.checkpoint);
    return ok;
}

/// Scores the configured protocol with a checkpoint or a stub scorer. Prints
/// the text report to `out` and writes the JSON report to io.report.
inline int cmd_eval(RunConfig cfg, const std::string& checkpoint, const std::string& stub, std::ostream& out) {
    if (!cfg.io.report.empty() && cfg.io.effective_config.empty()) {
        cfg.io.effective_config = cfg.io.report + ".config.json";
    }
    const auto L = static_cast<std::size_t>(cfg.model.L);

    std::optional<Checkpoint<float>> ck;
    ScorerInfo scorer;
    if (!stub.empty()) {
        if (stub == "oracle") {
            scorer = stubs::oracle();
        } else if (stub == "inverted") {
            scorer = stubs::inverted();
        } else if (stub == "constant") {
            scorer = stubs::constant();
        } else if (stub == "random") {
            scorer = stubs::random(cfg.eval.seed);
        } else {
            throw ConfigError("unknown stub " + stub + " (oracle, inverted, constant, random)");
        }
    } else {
        if (checkpoint.empty()) {
            throw ConfigError("eval needs --checkpoint or --stub");
        }
        ck = load_checkpoint<float>(checkpoint, cfg.model);
        scorer = model_scorer(ck->params);
    }

    EvalReport report;
    if (cfg.eval.protocol == Protocol::variant) {
        if (!cfg.data.test.configured()) {
            throw ConfigError("data.test must be set for the variant protocol");
        }
        const Dataset testset = load_source(cfg.data.test, cfg.model, "data.test");
        TrialOptions options;
        options.disjoint = cfg.eval.disjoint;
        report = evaluate_variant(scorer, testset, L, cfg.eval.n_shot, cfg.eval.runs, cfg.eval.seed, options);
    } else {
        if (cfg.eval.manifest.empty()) {
            throw ConfigError("eval.manifest must be set for the " +
                              std::string(cfg.eval.protocol == Protocol::bpl ? "bpl" : "manifest") + " protocol");
        }
        const bool bpl = cfg.eval.protocol == Protocol::bpl;
        const auto entries = bpl ? load_bpl_trials(cfg.eval.manifest) : read_manifest(cfg.eval.manifest);
        const std::filesystem::path root = cfg.eval.manifest_root.empty()
                                               ? std::filesystem::path(cfg.eval.manifest).parent_path()
                                               : std::filesystem::path(cfg.eval.manifest_root);
        const TrialSet set = load_trial_set(entries, root, static_cast<std::size_t>(cfg.model.image_size));
        report = evaluate_fixed(scorer, set, cfg.eval.runs, bpl ? "bpl" : "manifest");
        report.base_seed = cfg.eval.seed;
    }

    detail::write_effective(cfg);
    if (!cfg.io.report.empty()) {
        detail::write_text(cfg.io.report, report.to_json().dump(2) + "\n", "report");
    }
    out << report.to_text();
    return ok;
}

/// Writes `count` contexts drawn from data.test (or the training set when no
/// test source is given) as a trial manifest.
inline int cmd_sample(const RunConfig& cfg, std::size_t count, const std::filesystem::path& out_path) {
    const Dataset ds = cfg.data.test.configured() ? load_source(cfg.data.test, cfg.model, "data.test")
                                                  : load_training_set(cfg);
    const auto L = static_cast<std::size_t>(cfg.model.L);
    std::vector<Lcc> lccs;
    if (count > 0) {
        RngStream rng(cfg.eval.seed);
        lccs.reserve(count);
        for (std::size_t i = 0; i < count; ++i) lccs.push_back(generate_fewshot_lcc(ds, L, cfg.eval.n_shot, rng));
    }
    write_manifest(out_path, to_manifest(ds, lccs));
    detail::write_effective(cfg);
    spdlog::info("{} contexts written to {}", count, out_path.string());
    return ok;
}

struct GradCheckSetup {
    ModelSpec spec;
    std::size_t contexts = 2;
    std::size_t coordinates = 400;
    double tolerance = 1e-4;
};

/// The reduced network the gradient check runs on: n=1, L=3, at most 8 px.
inline GradCheckSetup gradcheck_setup(const RunConfig& cfg) {
    GradCheckSetup s;
    s.spec = cfg.model;
    s.spec.n = 1;
    s.spec.L = 3;
    s.spec.image_size = std::clamp(cfg.model.image_size, 4, 8);
    return s;
}

/// Full-network gradient check in double precision on random inputs, batch
/// norm in train mode.
inline GradCheckResult run_gradcheck(const RunConfig& cfg) {
    const GradCheckSetup setup = gradcheck_setup(cfg);
    const auto& spec = setup.spec;
    const auto L = static_cast<std::size_t>(spec.L);
    const auto S = static_cast<std::size_t>(spec.image_size);

    RngStream init = RngStream::derive(cfg.train.seed, 0);
    auto params = init_params<double>(spec, init);
    RngStream data = RngStream::derive(cfg.train.seed, 2);
    std::vector<std::vector<float>> images(setup.contexts * (L + 1), std::vector<float>(S * S));
    for (auto& img : images) {
        for (auto& v : img) v = static_cast<float>(data.uniform01());
    }
    std::vector<EpisodeView> views(setup.contexts);
    std::vector<int> labels(setup.contexts * L, 1);
    for (std::size_t e = 0; e < setup.contexts; ++e) {
        views[e].recognizing = images[e * (L + 1)];
        for (std::size_t i = 0; i < L; ++i) views[e].contrastive.push_back(images[e * (L + 1) + 1 + i]);
        labels[e * L + data.uniform_index(L)] = 0;
    }

    GradCheckOptions options;
    options.max_coordinates = setup.coordinates;
    options.seed = cfg.train.seed;
    return grad_check(
        [&](Graph<double>& g) {
            BoundModel<double> model(g, params);
            return contrastive_loss(g, lcnn_forward(model, std::span<const EpisodeView>(views), Mode::train), labels);
        },
        params.named_tensors(), options);
}

/// Prints the gradient check result; exit 0 iff the max relative error is
/// below 1e-4.
inline int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
    const GradCheckSetup setup = gradcheck_setup(cfg);
    const auto r = run_gradcheck(cfg);
    out << "gradcheck n=1 L=" << setup.spec.L << " image=" << setup.spec.image_size << " float64 coordinates=" << r.coordinates << "\n";
    out << "max relative error " << r.max_rel_error << " at " << r.worst_parameter << "[" << r.worst_index
        << "] (analytic " << r.worst_analytic << ", numeric " << r.worst_numeric << ")\n";
    if (!r.passed(setup.tolerance)) {
        spdlog::error("gradient check failed: {} >= {}", r.max_rel_error, setup.tolerance);
        return numeric_error;
    }
    return ok;
}

} // namespace lcl::cli
