#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "lcl/error.hpp"
#include "lcl/graph.hpp"
#include "lcl/ops.hpp"
#include "lcl/tensor.hpp"

namespace lcl {

/// Architecture of a local contrastive network.
///
/// The difference embedding generator is a pre-activation ResNet with a 3x3
/// stem (2 -> 16 channels) and three stages of `n` units (16, 32 and
/// embed_dim channels); stages 2 and 3 halve the resolution in their first
/// unit. The difference perceptron is one dense layer from the L concatenated
/// embeddings to L activations.
struct ModelSpec {
    int n = 20;
    int image_size = 28;
    int in_channels = 2;
    int embed_dim = 64;
    int L = 20;

    /// Stem conv + two convs per unit + the dense layer.
    int layer_count() const { return (n * 2) * 3 + 2; }

    std::array<std::size_t, 3> stage_channels() const {
        return {16, 32, static_cast<std::size_t>(embed_dim)};
    }

    void validate() const {
        if (n < 1) {
            throw ConfigError("model.n must be >= 1, got " + std::to_string(n));
        }
        if (L < 2) {
            throw ConfigError("model.L must be >= 2, got " + std::to_string(L));
        }
        if (image_size < 4) {
            throw ConfigError("model.image_size must be >= 4, got " + std::to_string(image_size));
        }
        if (in_channels != 2) {
            throw ConfigError("model.in_channels must be 2 (recognizing, contrastive)");
        }
        if (embed_dim < 1) {
            throw ConfigError("model.embed_dim must be positive");
        }
    }

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

enum class ParamKind { conv_weight, bn_gamma, bn_beta, dense_weight, dense_bias };

struct ParamShape {
    std::string name;
    Shape shape;
    ParamKind kind;
    std::size_t fan_in = 0;
};

struct BatchNormSlot {
    std::string name;
    std::size_t channels = 0;
};

struct ParamManifest {
    std::vector<ParamShape> params;
    std::vector<BatchNormSlot> batch_norms;
    int layer_count = 0;
};

namespace detail {

inline std::string unit_prefix(std::size_t stage, int unit) {
    return "deg.stage" + std::to_string(stage + 1) + ".unit" + std::to_string(unit);
}

inline void add_conv(ParamManifest& m, std::string name, std::size_t out, std::size_t in, std::size_t k) {
    m.params.push_back({std::move(name), Shape{out, in, k, k}, ParamKind::conv_weight, in * k * k});
}

inline void add_bn(ParamManifest& m, const std::string& name, std::size_t channels) {
    m.params.push_back({name + ".gamma", Shape{channels}, ParamKind::bn_gamma, 0});
    m.params.push_back({name + ".beta", Shape{channels}, ParamKind::bn_beta, 0});
    m.batch_norms.push_back({name, channels});
}

} // namespace detail

/// Parameter shapes of the difference embedding generator, in forward order.
inline ParamManifest build_deg(const ModelSpec& spec) {
    spec.validate();
    ParamManifest m;
    const auto widths = spec.stage_channels();
    detail::add_conv(m, "deg.stem.conv.weight", widths[0], static_cast<std::size_t>(spec.in_channels), 3);
    std::size_t in = widths[0];
    for (std::size_t s = 0; s < widths.size(); ++s) {
        const std::size_t out = widths[s];
        for (int u = 0; u < spec.n; ++u) {
            const auto p = detail::unit_prefix(s, u);
            detail::add_bn(m, p + ".bn1", in);
            detail::add_conv(m, p + ".conv1.weight", out, in, 3);
            detail::add_bn(m, p + ".bn2", out);
            detail::add_conv(m, p + ".conv2.weight", out, out, 3);
            if (in != out) {
                detail::add_conv(m, p + ".shortcut.weight", out, in, 1);
            }
            in = out;
        }
    }
    detail::add_bn(m, "deg.final_bn", in);
    m.layer_count = 1 + 2 * 3 * spec.n;
    return m;
}

/// Full parameter manifest: generator followed by the perceptron.
inline ParamManifest build_manifest(const ModelSpec& spec) {
    ParamManifest m = build_deg(spec);
    const auto L = static_cast<std::size_t>(spec.L);
    const auto E = static_cast<std::size_t>(spec.embed_dim);
    m.params.push_back({"dp.weight", Shape{L * E, L}, ParamKind::dense_weight, L * E});
    m.params.push_back({"dp.bias", Shape{L}, ParamKind::dense_bias, 0});
    m.layer_count += 1;
    return m;
}

/// Named parameter tensors (W_deg, W_dp) plus batch-norm running statistics.
template <class T>
class ModelParams {
public:
    using value_type = T;

    ModelParams() = default;

    /// All-zero parameters and default running statistics for `spec`.
    explicit ModelParams(const ModelSpec& spec) : spec_(spec) {
        const auto manifest = build_manifest(spec);
        for (const auto& p : manifest.params) {
            add(p.name, Tensor<T>::zeros(p.shape));
        }
        for (const auto& bn : manifest.batch_norms) {
            bn_stats_[bn.name] = RunningStats<T>::defaults(bn.channels);
        }
    }

    const ModelSpec& spec() const noexcept { return spec_; }

    std::size_t size() const noexcept { return tensors_.size(); }
    const std::string& name(std::size_t i) const { return tensors_.at(i).first; }
    Tensor<T>& tensor(std::size_t i) { return tensors_.at(i).second; }
    const Tensor<T>& tensor(std::size_t i) const { return tensors_.at(i).second; }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& at(const std::string& name) { return tensors_[lookup(name)].second; }
    const Tensor<T>& at(const std::string& name) const { return tensors_[lookup(name)].second; }

    std::map<std::string, RunningStats<T>>& bn_stats() noexcept { return bn_stats_; }
    const std::map<std::string, RunningStats<T>>& bn_stats() const noexcept { return bn_stats_; }

    RunningStats<T>& stats(const std::string& slot) { return stats_at(bn_stats_, slot); }
    const RunningStats<T>& stats(const std::string& slot) const { return stats_at(bn_stats_, slot); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : tensors_) {
            n += t.size();
        }
        return n;
    }

    void set_requires_grad(bool v) {
        for (auto& [name, t] : tensors_) {
            t.set_requires_grad(v);
        }
    }

    void zero_grad() {
        for (auto& [name, t] : tensors_) {
            t.zero_grad();
        }
    }

    /// Tensors as (name, pointer) pairs, e.g. for gradient checking.
    std::vector<std::pair<std::string, Tensor<T>*>> named_tensors() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        for (auto& [name, t] : tensors_) {
            out.emplace_back(name, &t);
        }
        return out;
    }

    template <class U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        out.spec_ = spec_;
        for (const auto& [name, t] : tensors_) {
            out.add(name, t.template cast<U>());
        }
        for (const auto& [name, s] : bn_stats_) {
            out.bn_stats_[name] = RunningStats<U>{std::vector<U>(s.mean.begin(), s.mean.end()),
                                                  std::vector<U>(s.var.begin(), s.var.end())};
        }
        return out;
    }

    /// Value equality of tensors and running statistics (gradients ignored).
    friend bool operator==(const ModelParams& a, const ModelParams& b) {
        if (!(a.spec_ == b.spec_) || a.tensors_.size() != b.tensors_.size()) {
            return false;
        }
        for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
            if (a.tensors_[i].first != b.tensors_[i].first || !(a.tensors_[i].second == b.tensors_[i].second)) {
                return false;
            }
        }
        if (a.bn_stats_.size() != b.bn_stats_.size()) {
            return false;
        }
        for (const auto& [name, s] : a.bn_stats_) {
            auto it = b.bn_stats_.find(name);
            if (it == b.bn_stats_.end() || it->second.mean != s.mean || it->second.var != s.var) {
                return false;
            }
        }
        return true;
    }

    void add(std::string name, Tensor<T> t) {
        if (contains(name)) {
            throw ContractError("duplicate parameter " + name);
        }
        index_[name] = tensors_.size();
        tensors_.emplace_back(std::move(name), std::move(t));
    }

    void set_spec(const ModelSpec& spec) { spec_ = spec; }

private:
    template <class U>
    friend class ModelParams;

    std::size_t lookup(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw ShapeError("model has no parameter named " + name);
        }
        return it->second;
    }

    template <class Map>
    static auto& stats_at(Map& m, const std::string& slot) {
        auto it = m.find(slot);
        if (it == m.end()) {
            throw ShapeError("model has no batch-norm layer named " + slot);
        }
        return it->second;
    }

    ModelSpec spec_;
    std::vector<std::pair<std::string, Tensor<T>>> tensors_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, RunningStats<T>> bn_stats_;
};

/// Throws ShapeError unless every tensor matches the manifest of `spec`.
template <class T>
void check_against_spec(const ModelParams<T>& params, const ModelSpec& spec) {
    const ModelSpec& have = params.spec();
    const std::pair<const char*, std::pair<int, int>> fields[] = {{"n", {have.n, spec.n}},
                                                                  {"L", {have.L, spec.L}},
                                                                  {"image_size", {have.image_size, spec.image_size}},
                                                                  {"embed_dim", {have.embed_dim, spec.embed_dim}}};
    for (const auto& [field, values] : fields) {
        if (values.first != values.second) {
            throw ShapeError(std::string("model.") + field + " mismatch: parameters have " + field + "=" +
                             std::to_string(values.first) + ", expected " + field + "=" +
                             std::to_string(values.second));
        }
    }
    const auto manifest = build_manifest(spec);
    if (manifest.params.size() != params.size()) {
        throw ShapeError("model has " + std::to_string(params.size()) + " tensors, spec expects " +
                         std::to_string(manifest.params.size()));
    }
    for (std::size_t i = 0; i < manifest.params.size(); ++i) {
        const auto& want = manifest.params[i];
        if (params.name(i) != want.name) {
            throw ShapeError("tensor " + std::to_string(i) + " is " + params.name(i) + ", spec expects " +
                             want.name);
        }
        expect_shape(params.tensor(i).shape(), want.shape, want.name.c_str());
    }
    for (const auto& bn : manifest.batch_norms) {
        const auto& s = params.stats(bn.name);
        if (s.mean.size() != bn.channels || s.var.size() != bn.channels) {
            throw ShapeError("running statistics of " + bn.name + " have wrong channel count");
        }
    }
}

/// Graph binding of a ModelParams. A mutable binding supports train mode and
/// gradients; a const binding is eval-only and safe to use concurrently.
template <class T>
class BoundModel {
public:
    BoundModel(Graph<T>& g, ModelParams<T>& params) : g_(&g), params_(&params), mutable_(&params) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            vars_[params.name(i)] = g.parameter(params.tensor(i));
        }
    }

    BoundModel(Graph<T>& g, const ModelParams<T>& params) : g_(&g), params_(&params) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            vars_[params.name(i)] = g.view(params.tensor(i));
        }
    }

    Graph<T>& graph() const { return *g_; }
    const ModelSpec& spec() const { return params_->spec(); }

    Var var(const std::string& name) const {
        auto it = vars_.find(name);
        if (it == vars_.end()) {
            throw ShapeError("model has no parameter named " + name);
        }
        return it->second;
    }

    Var batch_norm(Var x, const std::string& slot, Mode mode) const {
        const Var gamma = var(slot + ".gamma");
        const Var beta = var(slot + ".beta");
        if (mode == Mode::train) {
            if (!mutable_) {
                throw ContractError("train mode needs a mutable model binding");
            }
            return lcl::batch_norm(*g_, x, gamma, beta, mutable_->stats(slot), mode);
        }
        return batch_norm_eval(*g_, x, gamma, beta, params_->stats(slot));
    }

private:
    Graph<T>* g_;
    const ModelParams<T>* params_;
    ModelParams<T>* mutable_ = nullptr;
    std::map<std::string, Var> vars_;
};

/// Difference embeddings of a batch of stacked pairs [B,2,H,W] -> [B,E].
/// Channel 0 holds the recognizing image, channel 1 the contrastive image.
template <class T>
Var deg_forward(const BoundModel<T>& model, Var pairs, Mode mode) {
    auto& g = model.graph();
    const auto& spec = model.spec();
    const auto& shape = g.shape(pairs);
    expect_rank(shape, 4, "deg_forward input");
    if (shape[1] != static_cast<std::size_t>(spec.in_channels)) {
        throw ShapeError("deg_forward: pairs must have " + std::to_string(spec.in_channels) + " channels, got " +
                         std::to_string(shape[1]));
    }
    Var x = conv2d(g, pairs, model.var("deg.stem.conv.weight"), 1, 1);
    const auto widths = spec.stage_channels();
    std::size_t in = widths[0];
    for (std::size_t s = 0; s < widths.size(); ++s) {
        const std::size_t out = widths[s];
        for (int u = 0; u < spec.n; ++u) {
            const auto p = detail::unit_prefix(s, u);
            const bool project = in != out;
            const std::size_t stride = (u == 0 && s > 0) ? 2 : 1;
            Var a = relu(g, model.batch_norm(x, p + ".bn1", mode));
            Var r = conv2d(g, a, model.var(p + ".conv1.weight"), stride, 1);
            r = relu(g, model.batch_norm(r, p + ".bn2", mode));
            r = conv2d(g, r, model.var(p + ".conv2.weight"), 1, 1);
            // A projecting unit feeds the pre-activated input to both paths.
            Var shortcut = project ? conv2d(g, a, model.var(p + ".shortcut.weight"), stride, 0) : x;
            x = add(g, r, shortcut);
            in = out;
        }
    }
    x = relu(g, model.batch_norm(x, "deg.final_bn", mode));
    return global_avg_pool(g, x);
}

/// Activations for each context: sigmoid(dense(concat(DE_1..DE_L))).
/// `de_block` is [N, L*E] with the embeddings of one context in a row.
template <class T>
Var dp_forward(const BoundModel<T>& model, Var de_block) {
    auto& g = model.graph();
    const Var logits = dense(g, de_block, model.var("dp.weight"), model.var("dp.bias"));
    return sigmoid(g, logits);
}

/// One-shot context as image views: the recognizing image and L contrastive
/// images, each image_size x image_size row-major.
struct EpisodeView {
    std::span<const float> recognizing;
    std::vector<std::span<const float>> contrastive;
};

/// Stacks the contrastive pairs of `episodes` into [N*L, 2, H, W], context by
/// context, in contrastive-object order.
template <class T>
Tensor<T> make_pair_batch(std::span<const EpisodeView> episodes, const ModelSpec& spec) {
    if (episodes.empty()) {
        throw ContractError("make_pair_batch: no contexts");
    }
    const auto L = static_cast<std::size_t>(spec.L);
    const auto S = static_cast<std::size_t>(spec.image_size);
    const std::size_t plane = S * S;
    Tensor<T> batch(Shape{episodes.size() * L, 2, S, S});
    auto out = batch.data();
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        const auto& ep = episodes[e];
        if (ep.contrastive.size() != L) {
            throw ContractError("context " + std::to_string(e) + " has " + std::to_string(ep.contrastive.size()) +
                                " contrastive objects, model expects L=" + std::to_string(L));
        }
        if (ep.recognizing.size() != plane) {
            throw ContractError("recognizing image of context " + std::to_string(e) + " is not " +
                                std::to_string(S) + "x" + std::to_string(S));
        }
        for (std::size_t i = 0; i < L; ++i) {
            if (ep.contrastive[i].size() != plane) {
                throw ContractError("contrastive image " + std::to_string(i) + " of context " + std::to_string(e) +
                                    " is not " + std::to_string(S) + "x" + std::to_string(S));
            }
            T* dst = out.data() + (e * L + i) * 2 * plane;
            std::copy(ep.recognizing.begin(), ep.recognizing.end(), dst);
            std::copy(ep.contrastive[i].begin(), ep.contrastive[i].end(), dst + plane);
        }
    }
    return batch;
}

/// Full network on N contexts: pairs -> DEG (one batch) -> regroup -> DP.
/// Returns the [N, L] activation matrix.
template <class T>
Var lcnn_forward(const BoundModel<T>& model, std::span<const EpisodeView> episodes, Mode mode) {
    auto& g = model.graph();
    const auto& spec = model.spec();
    const Var pairs = g.constant(make_pair_batch<T>(episodes, spec));
    const Var de = deg_forward(model, pairs, mode);
    const auto L = static_cast<std::size_t>(spec.L);
    const Var block = reshape(g, de, Shape{episodes.size(), L * g.shape(de)[1]});
    return dp_forward(model, block);
}

/// Loss value of activations a (N*L, row-major) against labels z.
inline double contrastive_loss(std::span<const double> a, std::span<const int> z, std::size_t L) {
    if (L == 0 || a.size() % L != 0) {
        throw ShapeError("contrastive_loss: activation count is not a multiple of L");
    }
    const std::size_t N = a.size() / L;
    detail::check_labels(z, N, L);
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        total += detail::bce_term(a[i], z[i]);
    }
    return total / static_cast<double>(N * L);
}

/// Index of the smallest activation; the first one wins a tie.
template <class V>
std::size_t predict(std::span<const V> a) {
    if (a.empty()) {
        throw ContractError("predict: empty activation vector");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < a.size(); ++i) {
        if (a[i] < a[best]) {
            best = i;
        }
    }
    return best;
}

inline std::size_t predict(const std::vector<double>& a) { return predict(std::span<const double>(a)); }

/// Activation vectors of N contexts, one row per context.
template <class Params>
std::vector<std::vector<double>> cpla_forward(Params& params, std::span<const EpisodeView> episodes, Mode mode) {
    using T = typename std::remove_const_t<Params>::value_type;
    Graph<T> g;
    BoundModel<T> model(g, params);
    const Var a = lcnn_forward(model, episodes, mode);
    const auto& v = g.value(a);
    const std::size_t L = v.dim(1);
    std::vector<std::vector<double>> rows(v.dim(0));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        rows[r].assign(v.data().begin() + static_cast<std::ptrdiff_t>(r * L),
                       v.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * L));
    }
    return rows;
}

/// Few-shot context as image views: n_shot recognizing images of one class
/// sharing the same L contrastive images.
struct FewShotEpisodeView {
    std::vector<std::span<const float>> recognizing;
    std::vector<std::span<const float>> contrastive;
};

/// Sum of the activation vectors of the n_shot one-shot contexts obtained by
/// unstacking `episode`. The argmin of the sum is the predicted positive.
template <class Params>
std::vector<double> fewshot_forward(Params& params, const FewShotEpisodeView& episode, Mode mode) {
    if (episode.recognizing.empty()) {
        throw ContractError("fewshot_forward: n_shot must be >= 1");
    }
    std::vector<EpisodeView> unstacked;
    unstacked.reserve(episode.recognizing.size());
    for (const auto& r : episode.recognizing) {
        unstacked.push_back(EpisodeView{r, episode.contrastive});
    }
    const auto rows = cpla_forward(params, std::span<const EpisodeView>(unstacked), mode);
    std::vector<double> total(rows.front().size(), 0.0);
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            total[i] += row[i];
        }
    }
    return total;
}

} // namespace lcl
