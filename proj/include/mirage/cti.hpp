#pragma once

// Context-sensitive token identification: score generated tokens by the
// KL divergence between contextual and context-ablated predictive
// distributions, then select tokens via a threshold policy.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mirage/model.hpp"
#include "mirage/prompt.hpp"

namespace mirage {

struct CtiError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using ProbDist = std::vector<double>;

struct GenerationRecord {
    std::vector<int> answer_ids;
    std::vector<ProbDist> ctx;     // P_ctx per generation step
    std::vector<ProbDist> no_ctx;  // P_no-ctx per generation step
    PromptLayout layout;
    std::vector<int> ablated_prompt;  // prompt ids with doc spans removed
    std::vector<SentenceSpan> sentences;
};

enum class SelectorKind { example_level, calibrated, fixed };

struct CtiSelector {
    SelectorKind kind = SelectorKind::example_level;
    double threshold = 0.0;  // used by calibrated / fixed

    static CtiSelector example_level() { return {SelectorKind::example_level, 0.0}; }
    static CtiSelector calibrated(double t) { return {SelectorKind::calibrated, t}; }
    static CtiSelector fixed(double t) { return {SelectorKind::fixed, t}; }
};

struct SensitivityProfile {
    std::vector<double> scores;
    SelectorKind kind = SelectorKind::example_level;
    double threshold = 0.0;  // effective m*
    std::vector<std::size_t> selected;
};

// Prompt ids with every document-span position dropped; instruction, query,
// and template scaffolding stay.
inline std::vector<int> ablate_documents(const PromptLayout& layout) {
    std::vector<int> out;
    out.reserve(layout.tokens.size());
    for (std::size_t i = 0; i < layout.tokens.size(); ++i) {
        if (layout.docid_at(i) == 0) {
            out.push_back(layout.tokens[i].id);
        }
    }
    return out;
}

template <typename T>
GenerationRecord ablated_record(const Parameters<T>& params,
                                const PromptLayout& layout,
                                const std::vector<int>& answer_ids) {
    GenerationRecord rec;
    rec.layout = layout;
    rec.answer_ids = answer_ids;
    rec.ablated_prompt = ablate_documents(layout);

    std::vector<int> prompt_ids;
    prompt_ids.reserve(layout.tokens.size());
    for (const Token& t : layout.tokens) prompt_ids.push_back(t.id);

    auto to_double = [](std::vector<std::vector<T>> src) {
        std::vector<ProbDist> out;
        out.reserve(src.size());
        for (auto& d : src) out.emplace_back(d.begin(), d.end());
        return out;
    };
    rec.ctx = to_double(sequence_distributions(params, prompt_ids, answer_ids));
    rec.no_ctx = to_double(
        sequence_distributions(params, rec.ablated_prompt, answer_ids));
    return rec;
}

// m_i = sum_v P_ctx(v) ln(P_ctx(v) / max(P_no-ctx(v), eps)); terms with
// P_ctx(v) = 0 contribute 0.
inline std::vector<double> kl_scores(const GenerationRecord& rec,
                                     double eps = 1e-12) {
    if (rec.ctx.size() != rec.no_ctx.size() ||
        rec.ctx.size() != rec.answer_ids.size()) {
        throw CtiError("generation record sequences have mismatched lengths");
    }
    std::vector<double> m;
    m.reserve(rec.ctx.size());
    for (std::size_t i = 0; i < rec.ctx.size(); ++i) {
        const ProbDist& p = rec.ctx[i];
        const ProbDist& q = rec.no_ctx[i];
        if (p.size() != q.size()) {
            throw CtiError("distribution sizes differ at step " +
                           std::to_string(i));
        }
        double kl = 0.0;
        for (std::size_t v = 0; v < p.size(); ++v) {
            if (p[v] > 0.0) {
                kl += p[v] * std::log(p[v] / std::max(q[v], eps));
            }
        }
        m.push_back(kl);
    }
    return m;
}

inline SensitivityProfile select_context_sensitive(
    const std::vector<double>& m, const CtiSelector& selector) {
    if (m.empty()) {
        throw CtiError("cannot select from an empty score vector");
    }
    SensitivityProfile prof;
    prof.scores = m;
    prof.kind = selector.kind;
    if (selector.kind == SelectorKind::example_level) {
        double mean = 0.0;
        for (double x : m) mean += x;
        mean /= static_cast<double>(m.size());
        double var = 0.0;
        for (double x : m) var += (x - mean) * (x - mean);
        var /= static_cast<double>(m.size());  // population variance
        prof.threshold = mean + std::sqrt(var);
    } else {
        prof.threshold = selector.threshold;
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] >= prof.threshold) {
            prof.selected.push_back(i);
        }
    }
    return prof;
}

struct CalibrationPoint {
    double score = 0.0;
    bool gold = false;
};

// Threshold maximizing binary accuracy of (score >= m*) against gold labels.
// Candidates are the lowest score, midpoints between consecutive sorted
// unique scores, and one value above the highest score; ties break toward
// the lowest candidate.
inline double calibrate_threshold(const std::vector<CalibrationPoint>& data) {
    bool has_pos = false, has_neg = false;
    for (const auto& p : data) {
        (p.gold ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) {
        throw CtiError(
            "calibration needs at least one positive and one negative label");
    }
    std::vector<double> uniq;
    uniq.reserve(data.size());
    for (const auto& p : data) uniq.push_back(p.score);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

    std::vector<double> candidates;
    candidates.push_back(uniq.front());
    for (std::size_t i = 0; i + 1 < uniq.size(); ++i) {
        candidates.push_back(0.5 * (uniq[i] + uniq[i + 1]));
    }
    candidates.push_back(uniq.back() + 1.0);

    double best_thr = candidates.front();
    std::size_t best_correct = 0;
    bool first = true;
    for (double thr : candidates) {
        std::size_t correct = 0;
        for (const auto& p : data) {
            if ((p.score >= thr) == p.gold) ++correct;
        }
        if (first || correct > best_correct) {
            best_correct = correct;
            best_thr = thr;
            first = false;
        }
    }
    return best_thr;
}

struct DocSensitivity {
    int doc_id = 0;
    bool flagged = false;
    double max_score = 0.0;
};

// Per-document CTI: one single-document prompt per doc, scored against the
// shared no-context ablation; a document is attributed when at least one
// answer token is selected.
template <typename T>
std::vector<DocSensitivity> per_document_sensitivity(
    const Parameters<T>& params, std::string_view instruction,
    const std::vector<RetrievedDoc>& docs, std::string_view query,
    const std::vector<int>& answer_ids, const CtiSelector& selector,
    const PromptTemplate& tmpl, const Tokenizer& tok) {
    std::vector<DocSensitivity> out;
    for (const RetrievedDoc& doc : docs) {
        RetrievedDoc solo = doc;
        solo.id = 1;
        PromptLayout layout =
            assemble_prompt(instruction, {solo}, query, tmpl, tok);
        GenerationRecord rec = ablated_record(params, layout, answer_ids);
        std::vector<double> m = kl_scores(rec);
        SensitivityProfile prof = select_context_sensitive(m, selector);
        DocSensitivity s;
        s.doc_id = doc.id;
        s.flagged = !prof.selected.empty();
        s.max_score = *std::max_element(m.begin(), m.end());
        out.push_back(s);
    }
    return out;
}

}  // namespace mirage
