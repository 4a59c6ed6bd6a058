#pragma once

// Contextual cues imputation: contrastive foil lookup, gradient saliency
// over context tokens, and Top-K / Top-% filtering.

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

#include "mirage/cti.hpp"
#include "mirage/model.hpp"
#include "mirage/prompt.hpp"

namespace mirage {

struct CciError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TopK {
    std::size_t k = 3;
};
struct TopPct {
    double percent = 5.0;
};
using CciFilter = std::variant<TopK, TopPct>;

// Ranking scope: restrict to document-span positions before filtering
// (default), or rank every prompt position and let non-document selections
// yield empty citations.
enum class CciScope { doc_only, all_context };

struct AttributionRow {
    std::size_t gen_index = 0;          // index into the generated answer
    std::optional<int> foil;            // absent when fallback applies
    bool fallback = false;              // prob_only saliency was used
    std::vector<double> saliency;       // one entry per prompt position
    CciFilter filter;
    std::vector<std::size_t> selected;  // prompt positions
};

// Argmax of the ablated next-token distribution; the fallback marker
// (nullopt) is returned when that argmax equals the produced token, where
// the paper's contrast is undefined.
template <typename T>
std::optional<int> foil_token(const Parameters<T>& params,
                              std::span<const int> ablated_prefix,
                              int actual) {
    std::vector<T> dist = next_distribution(params, ablated_prefix);
    std::size_t best = 0;
    for (std::size_t k = 1; k < dist.size(); ++k) {
        if (dist[k] > dist[best]) best = k;
    }
    if (static_cast<int>(best) == actual) {
        return std::nullopt;
    }
    return static_cast<int>(best);
}

// K highest-scoring document positions; ties break toward the lower index.
inline std::vector<std::size_t> filter_topk(
    const std::vector<double>& saliency,
    const std::vector<std::size_t>& doc_positions, std::size_t k) {
    if (k < 1) {
        throw CciError("Top-K filter needs k >= 1");
    }
    std::vector<std::size_t> order = doc_positions;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                         if (saliency[a] != saliency[b]) {
                             return saliency[a] > saliency[b];
                         }
                         return a < b;
                     });
    if (order.size() > k) {
        order.resize(k);
    }
    std::sort(order.begin(), order.end());
    return order;
}

// Top ceil(p/100 * n) positions, minimum 1; denominator counts the given
// document positions only.
inline std::vector<std::size_t> filter_toppct(
    const std::vector<double>& saliency,
    const std::vector<std::size_t>& doc_positions, double percent) {
    if (percent <= 0.0 || percent > 100.0) {
        throw CciError("Top-% filter needs 0 < p <= 100");
    }
    if (doc_positions.empty()) {
        return {};
    }
    const double exact =
        percent / 100.0 * static_cast<double>(doc_positions.size());
    std::size_t k = static_cast<std::size_t>(std::ceil(exact));
    k = std::max<std::size_t>(k, 1);
    return filter_topk(saliency, doc_positions, k);
}

inline std::vector<std::size_t> apply_filter(
    const std::vector<double>& saliency,
    const std::vector<std::size_t>& positions, const CciFilter& filter) {
    if (std::holds_alternative<TopK>(filter)) {
        return filter_topk(saliency, positions, std::get<TopK>(filter).k);
    }
    return filter_toppct(saliency, positions,
                         std::get<TopPct>(filter).percent);
}

// Saliency row for one context-sensitive token. The prefix is the full
// contextual prompt plus the generated tokens before step gen_index; the
// gradient target contrasts the produced token with the foil, or falls back
// to plain saliency of p(actual) when no foil exists.
template <typename T>
AttributionRow attribution_row(const Parameters<T>& params,
                               const PromptLayout& layout,
                               std::span<const int> prefix,
                               std::size_t gen_index, int actual,
                               std::optional<int> foil,
                               const CciFilter& filter,
                               CciScope scope = CciScope::doc_only) {
    AttributionRow row;
    row.gen_index = gen_index;
    row.foil = foil;
    row.fallback = !foil.has_value();
    row.filter = filter;

    GradientTarget target;
    target.step = gen_index;
    target.target = actual;
    if (foil) {
        target.foil = foil;
        target.mode = GradientMode::prob_diff;
    } else {
        target.mode = GradientMode::prob_only;
    }
    row.saliency = input_gradient_norms(params, prefix, target);

    std::vector<std::size_t> eligible;
    if (scope == CciScope::doc_only) {
        eligible = layout.doc_positions();
    } else {
        // every prompt position; generated positions stay ineligible
        for (std::size_t i = 0; i < layout.tokens.size(); ++i) {
            eligible.push_back(i);
        }
    }
    row.selected = apply_filter(row.saliency, eligible, filter);
    return row;
}

}  // namespace mirage
