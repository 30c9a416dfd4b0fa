#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "caac/errors.hpp"

namespace caac {

/// Half-open layer interval [begin, end).
struct LayerRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    bool contains(std::size_t layer) const noexcept { return layer >= begin && layer < end; }
    bool empty() const noexcept { return end <= begin; }
    bool operator==(const LayerRange&) const = default;
};

/// Where a hook is being invoked.
struct HookSite {
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t query_pos = 0;
};

/// A transform over the image columns of the last query row.
/// Pre-softmax hooks see raw scores (planted biases already added);
/// post-softmax hooks see attention probabilities.
struct Hook {
    using Fn = std::function<void(const HookSite&, std::span<double>)>;

    std::string name;
    LayerRange layers;
    Fn fn;
    bool enabled = true;

    bool active_at(std::size_t layer) const { return enabled && fn && layers.contains(layer); }
};

struct HookSet {
    std::vector<Hook> pre_softmax;
    std::vector<Hook> post_softmax;
    /// Renormalize the full last row to sum 1 when a post-softmax hook changed it.
    bool row_renorm = true;

    bool empty() const noexcept { return pre_softmax.empty() && post_softmax.empty(); }

    HookSet& add_pre(Hook h) {
        pre_softmax.push_back(std::move(h));
        return *this;
    }
    HookSet& add_post(Hook h) {
        post_softmax.push_back(std::move(h));
        return *this;
    }
};

/// Run every active hook in order over `row` (g after f for [f, g]).
inline void run_hooks(const std::vector<Hook>& hooks, const HookSite& site, std::span<double> row) {
    for (const Hook& h : hooks)
        if (h.active_at(site.layer)) h.fn(site, row);
}

/// Hook that multiplies every image column by `factor`.
inline Hook scaling_hook(std::string name, double factor, LayerRange layers) {
    return Hook{std::move(name), layers,
                [factor](const HookSite&, std::span<double> row) {
                    for (double& v : row) v *= factor;
                }};
}

}  // namespace caac
