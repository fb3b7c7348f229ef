#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lcl/dataset.hpp"
#include "lcl/error.hpp"
#include "lcl/manifest.hpp"
#include "lcl/model.hpp"
#include "lcl/rng.hpp"
#include "lcl/sampler.hpp"

namespace lcl {

/// A test trial as image views. The images are owned by a Dataset or a
/// TrialSet that must outlive the trial.
struct Trial {
    std::vector<std::span<const float>> recognizing;
    std::vector<std::span<const float>> candidates;
    std::size_t answer = 0;
};

struct TrialSet {
    std::map<std::string, Image> images; // owner for manifest-loaded trials
    std::vector<Trial> trials;
};

inline Trial make_trial(const Dataset& ds, const Lcc& lcc) {
    const auto v = episode_view(ds, lcc);
    return Trial{v.recognizing, v.contrastive, lcc.answer_index()};
}

inline std::vector<Trial> make_trials(const Dataset& ds, const std::vector<Lcc>& lccs) {
    std::vector<Trial> out;
    out.reserve(lccs.size());
    for (const auto& l : lccs) out.push_back(make_trial(ds, l));
    return out;
}

/// Loads each image a manifest refers to once, from root/<path>, resized to
/// image_size.
inline TrialSet load_trial_set(const std::vector<ManifestEntry>& entries, const std::filesystem::path& root,
                               std::size_t image_size) {
    TrialSet set;
    auto image = [&](const std::string& p) -> std::span<const float> {
        auto it = set.images.find(p);
        if (it == set.images.end()) {
            it = set.images.emplace(p, resize(read_png_grayscale(root / p), image_size)).first;
        }
        return it->second.view();
    };
    for (const auto& e : entries) {
        Trial t;
        for (const auto& p : e.recognizing) t.recognizing.push_back(image(p));
        for (const auto& p : e.candidates) t.candidates.push_back(image(p));
        t.answer = e.answer_index;
        set.trials.push_back(std::move(t));
    }
    return set;
}

/// Maps trials to activation vectors (one per trial, lowest = predicted).
using Scorer = std::function<std::vector<std::vector<double>>(std::span<const Trial>)>;

struct ScorerInfo {
    Scorer score;
    bool deterministic = true;
    std::string name;
};

namespace stubs {

inline ScorerInfo per_trial(std::string name, std::function<std::vector<double>(const Trial&)> f) {
    return {[f = std::move(f)](std::span<const Trial> trials) {
                std::vector<std::vector<double>> out;
                for (const auto& t : trials) out.push_back(f(t));
                return out;
            },
            true, std::move(name)};
}

/// 0 at the answer, 1 elsewhere.
inline ScorerInfo oracle() {
    return per_trial("oracle", [](const Trial& t) {
        std::vector<double> a(t.candidates.size(), 1.0);
        a.at(t.answer) = 0.0;
        return a;
    });
}

/// 1 at the answer, 0 elsewhere.
inline ScorerInfo inverted() {
    return per_trial("inverted", [](const Trial& t) {
        std::vector<double> a(t.candidates.size(), 0.0);
        a.at(t.answer) = 1.0;
        return a;
    });
}

/// All activations equal, so the prediction is always slot 0.
inline ScorerInfo constant() {
    return per_trial("constant", [](const Trial& t) { return std::vector<double>(t.candidates.size(), 0.5); });
}

/// Independent uniform activations.
inline ScorerInfo random(std::uint64_t seed) {
    auto rng = std::make_shared<RngStream>(seed);
    ScorerInfo s = per_trial("random", [rng](const Trial& t) {
        std::vector<double> a(t.candidates.size());
        for (auto& v : a) v = rng->uniform01();
        return a;
    });
    s.deterministic = false;
    return s;
}

} // namespace stubs

/// Network scorer in eval mode. Trials are pushed through the network in
/// groups of up to `max_pairs` image pairs; few-shot trials sum the
/// activation vectors of their one-shot contexts.
template <class T>
ScorerInfo model_scorer(const ModelParams<T>& params, std::size_t max_pairs = 256) {
    return {[&params, max_pairs](std::span<const Trial> trials) {
                const auto L = static_cast<std::size_t>(params.spec().L);
                std::vector<std::vector<double>> out;
                out.reserve(trials.size());
                std::size_t i = 0;
                while (i < trials.size()) {
                    std::vector<EpisodeView> views;
                    std::vector<std::size_t> owner;
                    const std::size_t first = i;
                    while (i < trials.size() &&
                           (views.empty() || (views.size() + trials[i].recognizing.size()) * L <= max_pairs)) {
                        const auto& t = trials[i];
                        if (t.candidates.size() != L) {
                            throw ShapeError("trial " + std::to_string(i) + " is " +
                                             std::to_string(t.candidates.size()) + "-way but the model has L=" +
                                             std::to_string(L));
                        }
                        if (t.recognizing.empty()) {
                            throw ContractError("trial " + std::to_string(i) + " has no recognizing image");
                        }
                        for (const auto& r : t.recognizing) {
                            views.push_back(EpisodeView{r, t.candidates});
                            owner.push_back(i);
                        }
                        ++i;
                    }
                    const auto rows = cpla_forward(params, std::span<const EpisodeView>(views), Mode::eval);
                    for (std::size_t t = first; t < i; ++t) out.emplace_back(L, 0.0);
                    for (std::size_t r = 0; r < rows.size(); ++r) {
                        auto& acc = out[owner[r]];
                        for (std::size_t k = 0; k < L; ++k) acc[k] += rows[r][k];
                    }
                }
                return out;
            },
            true, "lcnn"};
}

/// Fraction of trials whose argmin activation is the answer.
inline double evaluate_trials(const Scorer& scorer, std::span<const Trial> trials) {
    if (trials.empty()) {
        throw ContractError("evaluate_trials: no trials");
    }
    const auto acts = scorer(trials);
    if (acts.size() != trials.size()) {
        throw ContractError("scorer returned " + std::to_string(acts.size()) + " results for " +
                            std::to_string(trials.size()) + " trials");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < trials.size(); ++i) {
        if (predict(acts[i]) == trials[i].answer) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(trials.size());
}

/// Model accuracy on trials with n_shot recognizing images each.
template <class T>
double evaluate_trials(const ModelParams<T>& params, std::span<const Trial> trials, std::size_t n_shot) {
    for (std::size_t i = 0; i < trials.size(); ++i) {
        if (trials[i].recognizing.size() != n_shot) {
            throw ContractError("trial " + std::to_string(i) + " has " + std::to_string(trials[i].recognizing.size()) +
                                " recognizing images, expected n_shot=" + std::to_string(n_shot));
        }
    }
    return evaluate_trials(model_scorer(params).score, trials);
}

struct Interval {
    double mean = 0;
    double halfwidth = 0;
};

/// Mean and 95% normal-approximation half-width 1.96 s / sqrt(R), with s the
/// sample standard deviation. Equal runs (or a single run) give exactly 0.
inline Interval confidence_interval(std::span<const double> accs) {
    if (accs.empty()) {
        throw ContractError("confidence_interval: no runs");
    }
    if (std::all_of(accs.begin(), accs.end(), [&](double a) { return a == accs.front(); })) {
        return {accs.front(), 0.0};
    }
    const double R = static_cast<double>(accs.size());
    double sum = 0;
    for (double a : accs) sum += a;
    const double mean = sum / R;
    if (accs.size() < 2) {
        return {mean, 0.0};
    }
    double ss = 0;
    for (double a : accs) ss += (a - mean) * (a - mean);
    const double s = std::sqrt(ss / (R - 1.0));
    return {mean, 1.96 * s / std::sqrt(R)};
}

struct EvalReport {
    std::string protocol;
    std::string scorer;
    std::size_t runs = 0;
    std::vector<double> accuracies;
    double mean = 0;
    double ci_halfwidth = 0;
    std::size_t L = 0;
    std::size_t n_shot = 0;
    std::size_t trials_per_run = 0;
    std::uint64_t base_seed = 0;
    std::string note;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["protocol"] = protocol;
        j["scorer"] = scorer;
        j["runs"] = runs;
        j["L"] = L;
        j["n_shot"] = n_shot;
        j["trials_per_run"] = trials_per_run;
        j["base_seed"] = base_seed;
        j["mean"] = mean;
        j["ci_halfwidth"] = ci_halfwidth;
        j["accuracy_percent"] = percent(mean);
        j["ci_percent"] = percent(ci_halfwidth);
        j["accuracies"] = accuracies;
        if (!note.empty()) j["note"] = note;
        return j;
    }

    /// Aligned two-column table, accuracies as percentages with two decimals.
    std::string to_text() const {
        std::vector<std::pair<std::string, std::string>> rows = {
            {"protocol", protocol},
            {"scorer", scorer},
            {"way (L)", std::to_string(L)},
            {"shots", std::to_string(n_shot)},
            {"runs", std::to_string(runs)},
            {"trials/run", std::to_string(trials_per_run)},
            {"accuracy", percent(mean) + " +/- " + percent(ci_halfwidth) + " %"},
        };
        if (!note.empty()) rows.push_back({"note", note});
        std::size_t w = 0;
        for (const auto& r : rows) w = std::max(w, r.first.size());
        std::string out;
        for (const auto& [k, v] : rows) out += k + std::string(w - k.size() + 2, ' ') + v + "\n";
        return out;
    }

    static std::string percent(double fraction) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
        return buf;
    }
};

namespace detail {

inline EvalReport summarize(EvalReport r) {
    const auto ci = confidence_interval(r.accuracies);
    r.runs = r.accuracies.size();
    r.mean = ci.mean;
    r.ci_halfwidth = ci.halfwidth;
    return r;
}

} // namespace detail

/// Variant protocol: each run regenerates count_trials(...) trials from the
/// held-out set with the stream seeded by base_seed + run.
inline EvalReport evaluate_variant(const ScorerInfo& scorer, const Dataset& testset, std::size_t L,
                                   std::size_t n_shot, std::size_t runs, std::uint64_t base_seed,
                                   const TrialOptions& options = {}) {
    if (runs == 0) {
        throw ConfigError("eval.runs must be >= 1");
    }
    EvalReport r;
    r.protocol = "variant";
    r.scorer = scorer.name;
    r.L = L;
    r.n_shot = n_shot;
    r.base_seed = base_seed;
    for (std::size_t run = 0; run < runs; ++run) {
        RngStream rng(base_seed + run);
        const auto lccs = generate_test_trials(testset, L, n_shot, rng, options);
        const auto trials = make_trials(testset, lccs);
        r.trials_per_run = trials.size();
        r.accuracies.push_back(evaluate_trials(scorer.score, std::span<const Trial>(trials)));
    }
    return detail::summarize(std::move(r));
}

/// Fixed-manifest protocol: the same trials every run. With a deterministic
/// scorer every run gives the same accuracy, so a single run is made.
inline EvalReport evaluate_fixed(const ScorerInfo& scorer, const TrialSet& set, std::size_t runs,
                                 std::string protocol = "bpl") {
    if (runs == 0) {
        throw ConfigError("eval.runs must be >= 1");
    }
    if (set.trials.empty()) {
        throw DataError("manifest has no trials");
    }
    EvalReport r;
    r.protocol = std::move(protocol);
    r.scorer = scorer.name;
    r.L = set.trials.front().candidates.size();
    r.n_shot = set.trials.front().recognizing.size();
    r.trials_per_run = set.trials.size();
    std::size_t effective = runs;
    if (scorer.deterministic && runs > 1) {
        effective = 1;
        r.note = "deterministic scorer on fixed trials: " + std::to_string(runs) + " requested runs collapsed to 1";
    }
    for (std::size_t run = 0; run < effective; ++run) {
        r.accuracies.push_back(evaluate_trials(scorer.score, std::span<const Trial>(set.trials)));
    }
    return detail::summarize(std::move(r));
}

} // namespace lcl
