#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "lcl/dataset.hpp"
#include "lcl/error.hpp"
#include "lcl/model.hpp"
#include "lcl/rng.hpp"

namespace lcl {

/// One entry of a context's contrastive list. z = 0 marks the positive (same
/// category as the recognizing object), z = 1 a negative.
struct ContrastiveObject {
    std::size_t category = 0;
    std::size_t sample = 0;
    int z = 1;

    friend bool operator==(const ContrastiveObject&, const ContrastiveObject&) = default;
};

/// Local cognitive context: recognizing sample(s) of one category and an
/// ordered list of L contrastive objects from L distinct categories.
struct Lcc {
    std::size_t category = 0;
    std::vector<std::size_t> recognizing; // sample indices within `category`
    std::vector<ContrastiveObject> contrastive;

    std::size_t n_shot() const noexcept { return recognizing.size(); }
    std::size_t width() const noexcept { return contrastive.size(); }

    std::size_t answer_index() const {
        for (std::size_t i = 0; i < contrastive.size(); ++i) {
            if (contrastive[i].z == 0) return i;
        }
        throw ContractError("context has no positive object");
    }

    std::vector<int> labels() const {
        std::vector<int> z;
        z.reserve(contrastive.size());
        for (const auto& c : contrastive) z.push_back(c.z);
        return z;
    }

    friend bool operator==(const Lcc&, const Lcc&) = default;
};

/// Throws ContractError unless `lcc` satisfies the context invariants:
/// exactly one positive and it shares the recognizing category, the
/// positive sample is not a recognizing sample, contrastive categories are
/// pairwise distinct, recognizing samples are pairwise distinct.
inline void validate_lcc(const Lcc& lcc) {
    if (lcc.recognizing.empty()) {
        throw ContractError("context has no recognizing object");
    }
    std::size_t positives = 0;
    std::set<std::size_t> categories;
    for (const auto& c : lcc.contrastive) {
        if (c.z != 0 && c.z != 1) {
            throw ContractError("contrastive label must be 0 or 1");
        }
        if (c.z == 0) {
            ++positives;
            if (c.category != lcc.category) {
                throw ContractError("positive object is not from the recognizing category");
            }
            if (std::find(lcc.recognizing.begin(), lcc.recognizing.end(), c.sample) != lcc.recognizing.end()) {
                throw ContractError("positive object repeats a recognizing sample");
            }
        } else if (c.category == lcc.category) {
            throw ContractError("negative object from the recognizing category");
        }
        if (!categories.insert(c.category).second) {
            throw ContractError("contrastive categories are not distinct");
        }
    }
    if (positives != 1) {
        throw ContractError("context has " + std::to_string(positives) + " positive objects, expected 1");
    }
    const std::set<std::size_t> rec(lcc.recognizing.begin(), lcc.recognizing.end());
    if (rec.size() != lcc.recognizing.size()) {
        throw ContractError("recognizing samples are not distinct");
    }
}

namespace detail {

// First k entries of a uniformly random permutation of [0, n).
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, RngStream& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

inline void check_feasible(const Dataset& ds, std::size_t L, std::size_t n_shot) {
    if (L < 1) {
        throw ContractError("L must be positive");
    }
    if (n_shot < 1) {
        throw ContractError("n_shot must be >= 1");
    }
    if (ds.size() < L) {
        throw DataError("insufficient categories: dataset has " + std::to_string(ds.size()) +
                        " categories, a context needs L=" + std::to_string(L));
    }
    for (const auto& c : ds.categories) {
        if (c.samples.empty()) {
            throw DataError("category " + c.name + " has no samples");
        }
    }
    if (ds.max_samples() < n_shot + 1) {
        throw DataError("insufficient samples: no category has the " + std::to_string(n_shot + 1) +
                        " samples a positive needs");
    }
}

} // namespace detail

/// Few-shot context: L categories without replacement, one of them (with at
/// least n_shot + 1 samples) as positive, one image per negative category,
/// n_shot + 1 distinct images of the positive category (recognizing set plus
/// contrastive positive), then a uniform shuffle of the contrastive list.
inline Lcc generate_fewshot_lcc(const Dataset& ds, std::size_t L, std::size_t n_shot, RngStream& rng) {
    detail::check_feasible(ds, L, n_shot);
    for (;;) {
        const auto cats = detail::sample_without_replacement(ds.size(), L, rng);
        std::vector<std::size_t> eligible;
        for (std::size_t i = 0; i < cats.size(); ++i) {
            if (ds.categories[cats[i]].samples.size() >= n_shot + 1) eligible.push_back(i);
        }
        if (eligible.empty()) {
            continue;
        }
        const std::size_t pos_slot = eligible[rng.uniform_index(eligible.size())];

        Lcc lcc;
        lcc.category = cats[pos_slot];
        std::vector<ContrastiveObject> negatives;
        for (std::size_t i = 0; i < cats.size(); ++i) {
            if (i == pos_slot) continue;
            const auto k = ds.categories[cats[i]].samples.size();
            negatives.push_back({cats[i], static_cast<std::size_t>(rng.uniform_index(k)), 1});
        }
        const auto picks =
            detail::sample_without_replacement(ds.categories[lcc.category].samples.size(), n_shot + 1, rng);
        lcc.recognizing.assign(picks.begin(), picks.begin() + static_cast<std::ptrdiff_t>(n_shot));
        lcc.contrastive.push_back({lcc.category, picks[n_shot], 0});
        lcc.contrastive.insert(lcc.contrastive.end(), negatives.begin(), negatives.end());
        rng.shuffle(lcc.contrastive.begin(), lcc.contrastive.end());
        return lcc;
    }
}

/// One-shot context (a single recognizing object).
inline Lcc generate_lcc(const Dataset& ds, std::size_t L, RngStream& rng) {
    return generate_fewshot_lcc(ds, L, 1, rng);
}

/// N independent contexts drawn from one stream.
inline std::vector<Lcc> make_batch(const Dataset& ds, std::size_t N, std::size_t L, RngStream& rng) {
    std::vector<Lcc> batch;
    batch.reserve(N);
    for (std::size_t i = 0; i < N; ++i) {
        batch.push_back(generate_lcc(ds, L, rng));
    }
    return batch;
}

/// floor(EC * KE / (L + n_shot)): the test-trial budget of a held-out set.
inline std::size_t count_trials(std::size_t ec, std::size_t ke, std::size_t L, std::size_t n_shot) {
    if (ec == 0 || ke == 0 || L == 0 || n_shot == 0) {
        throw ContractError("count_trials: all arguments must be positive");
    }
    return ec * ke / (L + n_shot);
}

struct TrialOptions {
    // When set, no sample is used by two trials of the same set and the
    // result may hold fewer than count_trials(...) trials.
    bool disjoint = false;
};

/// Test trials drawn from a held-out set. The trial count is
/// count_trials(categories, min samples per category, L, n_shot). Trial t
/// uses its own stream derived from one draw of `rng`, so the set does not
/// depend on generation order.
inline std::vector<Lcc> generate_test_trials(const Dataset& testset, std::size_t L, std::size_t n_shot,
                                             RngStream& rng, const TrialOptions& options = {}) {
    detail::check_feasible(testset, L, n_shot);
    const std::size_t n_trial = count_trials(testset.size(), testset.min_samples(), L, n_shot);
    const std::uint64_t base = rng.next_u64();
    std::vector<Lcc> trials;
    trials.reserve(n_trial);
    if (!options.disjoint) {
        for (std::size_t t = 0; t < n_trial; ++t) {
            RngStream trial_rng = RngStream::derive(base, t);
            trials.push_back(generate_fewshot_lcc(testset, L, n_shot, trial_rng));
        }
        return trials;
    }

    // Disjoint mode: draw from the shrinking pool of unused samples. Greedy,
    // so it may stop short of n_trial when the pool no longer forms a trial.
    std::vector<std::vector<std::size_t>> unused(testset.size());
    for (std::size_t c = 0; c < testset.size(); ++c) {
        unused[c].resize(testset.categories[c].samples.size());
        std::iota(unused[c].begin(), unused[c].end(), std::size_t{0});
    }
    RngStream pool_rng(base);
    auto take = [&](std::size_t c) {
        const auto j = pool_rng.uniform_index(unused[c].size());
        const std::size_t s = unused[c][j];
        unused[c].erase(unused[c].begin() + static_cast<std::ptrdiff_t>(j));
        return s;
    };
    for (std::size_t t = 0; t < n_trial; ++t) {
        // Categories with the most unused samples go first (ties in random
        // order) so the pool drains evenly and the budget is reachable.
        std::vector<std::size_t> order(unused.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        pool_rng.shuffle(order.begin(), order.end());
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return unused[a].size() > unused[b].size(); });
        if (unused[order[L - 1]].empty() || unused[order[0]].size() < n_shot + 1) {
            break;
        }
        Lcc lcc;
        lcc.category = order[0];
        std::vector<std::size_t> others(order.begin() + 1, order.begin() + static_cast<std::ptrdiff_t>(L));
        std::vector<std::size_t> picks(others.size());
        std::iota(picks.begin(), picks.end(), std::size_t{0});
        for (std::size_t i = 0; i < n_shot; ++i) lcc.recognizing.push_back(take(lcc.category));
        lcc.contrastive.push_back({lcc.category, take(lcc.category), 0});
        for (auto p : picks) lcc.contrastive.push_back({others[p], take(others[p]), 1});
        pool_rng.shuffle(lcc.contrastive.begin(), lcc.contrastive.end());
        trials.push_back(std::move(lcc));
    }
    return trials;
}

using BigInt = boost::multiprecision::cpp_int;

/// Number of distinct one-shot contexts with SC categories of K samples:
/// SC * L * K * (K-1) * P(SC-1, L-1) * K^(L-1), i.e. positive category,
/// positive slot, recognizing and positive samples, ordered negative
/// categories and one sample each. Zero when K < 2 or SC < L.
inline BigInt count_distinct_lccs(std::uint64_t sc, std::uint64_t k, std::uint64_t L) {
    if (k < 2 || L == 0 || sc < L) {
        return 0;
    }
    BigInt n = BigInt(sc) * L * k * (k - 1);
    for (std::uint64_t i = 0; i + 1 < L; ++i) {
        n *= (sc - 1 - i);
        n *= k;
    }
    return n;
}

/// Pixel views of a context for the network.
inline FewShotEpisodeView episode_view(const Dataset& ds, const Lcc& lcc) {
    FewShotEpisodeView v;
    for (auto s : lcc.recognizing) v.recognizing.push_back(ds.image(lcc.category, s).view());
    for (const auto& c : lcc.contrastive) v.contrastive.push_back(ds.image(c.category, c.sample).view());
    return v;
}

/// One-shot view of a context (first recognizing sample).
inline EpisodeView oneshot_view(const Dataset& ds, const Lcc& lcc) {
    EpisodeView v;
    v.recognizing = ds.image(lcc.category, lcc.recognizing.at(0)).view();
    for (const auto& c : lcc.contrastive) v.contrastive.push_back(ds.image(c.category, c.sample).view());
    return v;
}

} // namespace lcl
