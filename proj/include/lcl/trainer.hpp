#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lcl/checkpoint.hpp"
#include "lcl/dataset.hpp"
#include "lcl/error.hpp"
#include "lcl/model.hpp"
#include "lcl/rng.hpp"
#include "lcl/sampler.hpp"

namespace lcl {

struct TrainConfig {
    std::size_t N = 40;
    double lr0 = 0.1;
    double momentum = 0.9;
    std::uint64_t d1 = 44800;
    std::uint64_t d2 = 51200;
    std::uint64_t m = 57600;
    std::uint64_t seed = 1;
    std::uint64_t checkpoint_every = 0; // 0: final checkpoint only
    std::uint64_t log_every = 0;        // 0: no progress callback
    bool zero_init_dp = false;
    std::filesystem::path checkpoint_path;
    std::filesystem::path loss_trace_path;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;

    void validate() const {
        if (N < 1) {
            throw ConfigError("train.N must be >= 1");
        }
        if (!(0 < d1 && d1 < d2 && d2 < m)) {
            throw ConfigError("train.d1/d2/m must satisfy 0 < d1 < d2 < m (got d1=" + std::to_string(d1) +
                              ", d2=" + std::to_string(d2) + ", m=" + std::to_string(m) + ")");
        }
        if (!(lr0 > 0) || !std::isfinite(lr0)) {
            throw ConfigError("train.lr0 must be positive");
        }
        if (!(momentum >= 0 && momentum < 1)) {
            throw ConfigError("train.momentum must be in [0, 1)");
        }
    }
};

/// Momentum buffers, one per parameter tensor, plus the step counter.
template <class T>
struct OptimizerState {
    std::vector<Tensor<T>> velocity;
    std::uint64_t step = 0;

    static OptimizerState for_params(const ModelParams<T>& params) {
        OptimizerState s;
        for (std::size_t i = 0; i < params.size(); ++i) {
            s.velocity.push_back(Tensor<T>::zeros(params.tensor(i).shape()));
        }
        return s;
    }
};

/// He-normal weights (std sqrt(2 / fan_in)), gamma 1, beta 0, biases 0,
/// running stats mean 0 / var 1. Tensors are filled in manifest order.
template <class T>
ModelParams<T> init_params(const ModelSpec& spec, RngStream& rng, bool zero_init_dp = false) {
    ModelParams<T> params(spec);
    for (const auto& p : build_manifest(spec).params) {
        auto data = params.at(p.name).data();
        switch (p.kind) {
        case ParamKind::conv_weight:
        case ParamKind::dense_weight: {
            if (zero_init_dp && p.kind == ParamKind::dense_weight) {
                break;
            }
            const double stddev = std::sqrt(2.0 / static_cast<double>(p.fan_in));
            for (auto& v : data) v = static_cast<T>(stddev * rng.normal());
            break;
        }
        case ParamKind::bn_gamma:
            for (auto& v : data) v = T{1};
            break;
        case ParamKind::bn_beta:
        case ParamKind::dense_bias:
            break;
        }
    }
    return params;
}

/// lr0 up to step d1, lr0/10 up to d2, lr0/100 afterwards.
inline double lr_schedule(std::uint64_t step, const TrainConfig& cfg) {
    if (step <= cfg.d1) return cfg.lr0;
    if (step <= cfg.d2) return cfg.lr0 * 0.1;
    return cfg.lr0 * 0.01;
}

/// Classical momentum on the gradients stored in the parameters:
/// v <- mu v - lr g; p <- p + v. Throws NumericError (nothing updated) when a
/// gradient is not finite.
template <class T>
void sgd_momentum_step(ModelParams<T>& params, OptimizerState<T>& state, double lr, double momentum = 0.9) {
    if (state.velocity.size() != params.size()) {
        throw ShapeError("optimizer state has " + std::to_string(state.velocity.size()) + " buffers for " +
                         std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params.tensor(i);
        expect_shape(state.velocity[i].shape(), p.shape(), "velocity");
        if (!p.has_grad()) continue;
        for (T g : p.grad()) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw NumericError("non-finite gradient in " + params.name(i) + " at step " +
                                   std::to_string(state.step));
            }
        }
    }
    const T mu = static_cast<T>(momentum);
    const T eta = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params.tensor(i);
        if (!p.has_grad()) continue;
        auto v = state.velocity[i].data();
        auto w = p.data();
        const auto g = std::as_const(p).grad();
        for (std::size_t j = 0; j < w.size(); ++j) {
            v[j] = mu * v[j] - eta * g[j];
            w[j] += v[j];
        }
    }
    ++state.step;
}

struct StepResult {
    double loss = 0;
    std::size_t correct = 0; // contexts whose argmin hits the positive
    std::size_t contexts = 0;
};

/// Forward (train mode), loss, backward on one batch of contexts. Leaves the
/// gradients in `params`; no parameter update.
template <class T>
StepResult forward_backward(ModelParams<T>& params, const Dataset& ds, std::span<const Lcc> batch) {
    std::vector<EpisodeView> views;
    std::vector<int> labels;
    for (const auto& lcc : batch) {
        views.push_back(oneshot_view(ds, lcc));
        const auto z = lcc.labels();
        labels.insert(labels.end(), z.begin(), z.end());
    }
    params.zero_grad();
    Graph<T> g;
    BoundModel<T> model(g, params);
    const Var a = lcnn_forward(model, std::span<const EpisodeView>(views), Mode::train);
    const Var loss = contrastive_loss(g, a, labels);
    StepResult r;
    r.loss = static_cast<double>(g.value(loss)[0]);
    r.contexts = batch.size();
    const auto& av = g.value(a);
    const std::size_t L = av.dim(1);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (predict(av.data().subspan(i * L, L)) == batch[i].answer_index()) ++r.correct;
    }
    if (!std::isfinite(r.loss)) {
        return r;
    }
    g.backward(loss);
    return r;
}

struct TrainProgress {
    std::uint64_t step = 0;
    double lr = 0;
    double loss = 0;
    double batch_accuracy = 0;
};

template <class T>
struct TrainResult {
    ModelParams<T> params;
    OptimizerState<T> state;
    std::vector<TrainProgress> trace;
};

namespace detail {

inline void check_trainable(const Dataset& ds, const ModelSpec& spec) {
    if (ds.size() < static_cast<std::size_t>(spec.L)) {
        throw ConfigError("training set has " + std::to_string(ds.size()) + " categories, model.L is " +
                          std::to_string(spec.L));
    }
    if (ds.max_samples() < 2) {
        throw ConfigError("training set has no category with 2 samples");
    }
    if (ds.image_size() != static_cast<std::size_t>(spec.image_size)) {
        throw ConfigError("training images are " + std::to_string(ds.image_size()) + " px, model.image_size is " +
                          std::to_string(spec.image_size));
    }
}

} // namespace detail

/// m steps of SGD with momentum on fresh context batches.
///
/// Streams: derive(seed, 0) initializes the parameters, derive(seed, 1)
/// draws the batches, so a run is reproducible from cfg.seed alone.
template <class T = float>
TrainResult<T> train(const ModelSpec& spec, const TrainConfig& cfg, const Dataset& ds,
                     const std::function<void(const TrainProgress&)>& on_progress = {}) {
    spec.validate();
    cfg.validate();
    detail::check_trainable(ds, spec);

    RngStream init_rng = RngStream::derive(cfg.seed, 0);
    RngStream batch_rng = RngStream::derive(cfg.seed, 1);
    TrainResult<T> out{init_params<T>(spec, init_rng, cfg.zero_init_dp), {}, {}};
    out.params.set_requires_grad(true);
    out.state = OptimizerState<T>::for_params(out.params);

    std::ofstream trace;
    if (!cfg.loss_trace_path.empty()) {
        trace.open(cfg.loss_trace_path, std::ios::trunc);
        if (!trace) {
            throw DataError("cannot write loss trace " + cfg.loss_trace_path.string());
        }
        trace << "step,lr,loss\n" << std::setprecision(9);
    }
    auto checkpoint = [&](std::uint64_t step) {
        if (cfg.checkpoint_path.empty()) return;
        CheckpointMeta meta;
        meta.step = step;
        meta.seed = cfg.seed;
        save_checkpoint(out.params, meta, cfg.checkpoint_path);
    };

    for (std::uint64_t step = 0; step < cfg.m; ++step) {
        const auto batch = make_batch(ds, cfg.N, static_cast<std::size_t>(spec.L), batch_rng);
        const StepResult r = forward_backward(out.params, ds, std::span<const Lcc>(batch));
        if (!std::isfinite(r.loss)) {
            throw NumericError("non-finite loss at step " + std::to_string(step));
        }
        const double lr = lr_schedule(step, cfg);
        sgd_momentum_step(out.params, out.state, lr, cfg.momentum);

        TrainProgress p{step, lr, r.loss, static_cast<double>(r.correct) / static_cast<double>(r.contexts)};
        out.trace.push_back(p);
        if (trace) trace << step << ',' << lr << ',' << r.loss << '\n';
        if (on_progress && cfg.log_every > 0 && (step + 1) % cfg.log_every == 0) on_progress(p);
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.m) {
            checkpoint(step + 1);
        }
    }
    out.params.set_requires_grad(false);
    out.params.zero_grad();
    checkpoint(cfg.m);
    return out;
}

} // namespace lcl
