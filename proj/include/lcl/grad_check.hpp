#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lcl/graph.hpp"
#include "lcl/rng.hpp"
#include "lcl/tensor.hpp"

namespace lcl {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;

    bool passed(double tol) const { return max_rel_error < tol; }
};

struct GradCheckOptions {
    double h = 1e-5;
    std::size_t max_coordinates = 0; // 0 checks every coordinate
    std::uint64_t seed = 0;
};

/// |a - n| / max(|a|, |n|, 1e-8)
inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients with central differences.
///
/// `forward` builds the scalar loss in the graph it is handed, binding the
/// listed tensors as parameters; it must be deterministic (batch norm in a
/// fixed mode). Coordinates are sampled uniformly without replacement across
/// all listed tensors when max_coordinates is set.
template <class Forward>
GradCheckResult grad_check(Forward&& forward, const std::vector<std::pair<std::string, Tensor<double>*>>& params,
                           const GradCheckOptions& options = {}) {
    for (auto& [name, t] : params) {
        t->set_requires_grad(true);
        t->clear_grad();
    }
    {
        Graph<double> g;
        const Var loss = forward(g);
        g.backward(loss);
    }

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p].second->size(); ++i) {
            coords.emplace_back(p, i);
        }
    }
    if (options.max_coordinates && coords.size() > options.max_coordinates) {
        RngStream rng(options.seed);
        rng.shuffle(coords.begin(), coords.end());
        coords.resize(options.max_coordinates);
        std::sort(coords.begin(), coords.end());
    }

    auto eval = [&] {
        Graph<double> g;
        return g.value(forward(g))[0];
    };

    GradCheckResult result;
    result.coordinates = coords.size();
    for (const auto& [p, i] : coords) {
        Tensor<double>& t = *params[p].second;
        const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
        const double saved = t[i];
        t[i] = saved + options.h;
        const double up = eval();
        t[i] = saved - options.h;
        const double down = eval();
        t[i] = saved;
        const double numeric = (up - down) / (2.0 * options.h);
        const double err = relative_error(analytic, numeric);
        if (err > result.max_rel_error || result.worst_parameter.empty()) {
            result.max_rel_error = std::max(err, result.max_rel_error);
            result.worst_parameter = params[p].first;
            result.worst_index = i;
            result.worst_analytic = analytic;
            result.worst_numeric = numeric;
        }
    }
    return result;
}

} // namespace lcl
