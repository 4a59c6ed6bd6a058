#pragma once

// Evaluation harness: agreement with gold answer-attribution labels,
// citation precision/recall/F1 against an entailment oracle, missing-citation
// statistics, length-binned analysis, and the oracle implementations.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mirage/citation.hpp"

namespace mirage {

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OracleUnavailable : EvalError {
    using EvalError::EvalError;
};

class EntailmentOracle {
public:
    virtual ~EntailmentOracle() = default;
    virtual bool judge(const std::string& premise,
                       const std::string& hypothesis) = 0;
    virtual std::string id() const = 0;
};

// True iff every token of the normalized hypothesis (lowercased, punctuation
// stripped) occurs in the normalized premise.
class LexicalOracle final : public EntailmentOracle {
public:
    bool judge(const std::string& premise,
               const std::string& hypothesis) override {
        const auto prem = normalize(premise);
        const std::set<std::string> vocab(prem.begin(), prem.end());
        for (const std::string& t : normalize(hypothesis)) {
            if (!vocab.count(t)) return false;
        }
        return true;
    }
    std::string id() const override { return "lexical"; }

    static std::vector<std::string> normalize(const std::string& text) {
        std::vector<std::string> out;
        std::string cur;
        for (unsigned char c : text) {
            if (std::isalnum(c)) {
                cur += static_cast<char>(std::tolower(c));
            } else if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        }
        if (!cur.empty()) out.push_back(std::move(cur));
        return out;
    }
};

// Test fixture: exact lookup keyed by (premise, hypothesis).
class GoldOracle final : public EntailmentOracle {
public:
    using Table = std::map<std::pair<std::string, std::string>, bool>;

    explicit GoldOracle(Table table) : table_(std::move(table)) {}

    bool judge(const std::string& premise,
               const std::string& hypothesis) override {
        auto it = table_.find({premise, hypothesis});
        if (it == table_.end()) {
            throw EvalError("gold oracle: no entry for (premise, hypothesis)");
        }
        return it->second;
    }
    std::string id() const override { return "gold"; }

private:
    Table table_;
};

// Memoizing wrapper; safe for concurrent judges.
class CachingOracle final : public EntailmentOracle {
public:
    explicit CachingOracle(std::shared_ptr<EntailmentOracle> inner)
        : inner_(std::move(inner)) {}

    bool judge(const std::string& premise,
               const std::string& hypothesis) override {
        const std::pair<std::string, std::string> key{premise, hypothesis};
        {
            std::lock_guard lock(mu_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }
        const bool v = inner_->judge(premise, hypothesis);
        std::lock_guard lock(mu_);
        cache_.emplace(key, v);
        return v;
    }
    std::string id() const override { return inner_->id(); }

private:
    std::shared_ptr<EntailmentOracle> inner_;
    std::mutex mu_;
    std::map<std::pair<std::string, std::string>, bool> cache_;
};

// ---------------------------------------------------------------------------
// metrics

// Percent of (example, doc) gold tuples whose predicted boolean matches gold.
template <typename Key>
double agreement(const std::map<Key, bool>& predicted,
                 const std::map<Key, bool>& gold) {
    if (gold.empty()) {
        throw EvalError("agreement needs a non-empty gold set");
    }
    std::size_t match = 0;
    for (const auto& [key, label] : gold) {
        auto it = predicted.find(key);
        const bool pred = it != predicted.end() && it->second;
        if (pred == label) ++match;
    }
    return 100.0 * static_cast<double>(match) /
           static_cast<double>(gold.size());
}

// Premise for a citation set: cited documents in ascending id order,
// newline-joined.
inline std::string concat_docs(const std::set<int>& cited,
                               const std::map<int, std::string>& docs) {
    std::string out;
    for (int d : cited) {
        auto it = docs.find(d);
        if (it == docs.end()) {
            throw EvalError("cited doc id " + std::to_string(d) +
                            " not present in document set");
        }
        if (!out.empty()) out += '\n';
        out += it->second;
    }
    return out;
}

// 1 iff the concatenation of the cited documents entails the sentence;
// unattributed sentences score 0.
inline int citation_recall(const std::string& sentence,
                           const std::set<int>& cited,
                           const std::map<int, std::string>& docs,
                           EntailmentOracle& oracle) {
    if (cited.empty()) {
        return 0;
    }
    return oracle.judge(concat_docs(cited, docs), sentence) ? 1 : 0;
}

// Mean over cited docs of per-citation precision. A citation is precise when
// the doc alone entails the sentence, or removing it breaks entailment of
// the concatenation. strict_removal drops the doc-alone disjunct. Zero when
// the citation set is empty or recall is zero.
inline double citation_precision(const std::string& sentence,
                                 const std::set<int>& cited,
                                 const std::map<int, std::string>& docs,
                                 EntailmentOracle& oracle,
                                 bool strict_removal = false) {
    if (cited.empty()) {
        return 0.0;
    }
    if (citation_recall(sentence, cited, docs, oracle) == 0) {
        return 0.0;
    }
    if (cited.size() == 1) {
        return 1.0;
    }
    std::size_t precise = 0;
    for (int d : cited) {
        bool ok = false;
        if (!strict_removal &&
            oracle.judge(concat_docs({d}, docs), sentence)) {
            ok = true;
        }
        if (!ok) {
            std::set<int> rest = cited;
            rest.erase(d);
            ok = !oracle.judge(concat_docs(rest, docs), sentence);
        }
        if (ok) ++precise;
    }
    return static_cast<double>(precise) / static_cast<double>(cited.size());
}

// F1 of two percentages; 0 when both are 0.
inline double f1(double p, double r) {
    if (p < 0.0 || p > 100.0 || r < 0.0 || r > 100.0) {
        throw EvalError("f1 expects percentages in [0, 100]");
    }
    if (p + r == 0.0) {
        return 0.0;
    }
    return 2.0 * p * r / (p + r);
}

struct SentenceScore {
    double precision = 0.0;  // [0, 1]
    double recall = 0.0;     // {0, 1}
};

struct CorpusCitationScores {
    double precision = 0.0;  // percent
    double recall = 0.0;
    double f1 = 0.0;
};

// Macro average over all sentences of all examples; F1 computed from the
// macro precision and recall.
inline CorpusCitationScores corpus_citation_scores(
    const std::vector<SentenceScore>& sentences) {
    if (sentences.empty()) {
        throw EvalError("corpus scores need at least one sentence");
    }
    double p = 0.0, r = 0.0;
    for (const auto& s : sentences) {
        p += s.precision;
        r += s.recall;
    }
    p = 100.0 * p / static_cast<double>(sentences.size());
    r = 100.0 * r / static_cast<double>(sentences.size());
    return {p, r, f1(p, r)};
}

struct MissingCitationStats {
    double sentence_pct = 0.0;
    double answer_pct = 0.0;
};

// Input: one vector per answer, true = sentence carries >= 1 citation.
inline MissingCitationStats missing_citation_stats(
    const std::vector<std::vector<bool>>& attributed) {
    std::size_t sentences = 0, missing = 0, answers_hit = 0;
    for (const auto& ans : attributed) {
        bool any_missing = false;
        for (bool a : ans) {
            ++sentences;
            if (!a) {
                ++missing;
                any_missing = true;
            }
        }
        if (any_missing) ++answers_hit;
    }
    if (sentences == 0 || attributed.empty()) {
        throw EvalError("missing_citation_stats needs at least one sentence");
    }
    return {100.0 * static_cast<double>(missing) /
                static_cast<double>(sentences),
            100.0 * static_cast<double>(answers_hit) /
                static_cast<double>(attributed.size())};
}

inline MissingCitationStats missing_citation_stats(
    const std::vector<ParsedAnswer>& answers) {
    std::vector<std::vector<bool>> attributed;
    for (const ParsedAnswer& a : answers) {
        std::vector<bool> row;
        for (const ParsedSentence& s : a.sentences) {
            row.push_back(!s.citations.empty());
        }
        attributed.push_back(std::move(row));
    }
    return missing_citation_stats(attributed);
}

struct SentenceLengthEntry {
    std::size_t token_length = 0;
    double precision = 0.0;
    double recall = 0.0;
    bool has_citation = false;
};

struct LengthBinRow {
    std::size_t lo = 0;      // half-open [lo, hi); hi == SIZE_MAX on the tail
    std::size_t hi = 0;
    std::size_t count = 0;
    double mean_precision = 0.0;
    double mean_recall = 0.0;
    double cited_pct = 0.0;
};

// Sentences binned by token length into half-open bins from the given edges;
// empty bins are omitted.
inline std::vector<LengthBinRow> length_binned_report(
    const std::vector<SentenceLengthEntry>& entries,
    const std::vector<std::size_t>& edges) {
    for (std::size_t i = 1; i < edges.size(); ++i) {
        if (edges[i] <= edges[i - 1]) {
            throw EvalError("bin edges must be strictly increasing");
        }
    }
    std::vector<LengthBinRow> rows(edges.size() + 1);
    for (std::size_t b = 0; b <= edges.size(); ++b) {
        rows[b].lo = b == 0 ? 0 : edges[b - 1];
        rows[b].hi = b == edges.size() ? SIZE_MAX : edges[b];
    }
    for (const auto& e : entries) {
        std::size_t b = 0;
        while (b < edges.size() && e.token_length >= edges[b]) ++b;
        rows[b].count++;
        rows[b].mean_precision += e.precision;
        rows[b].mean_recall += e.recall;
        if (e.has_citation) rows[b].cited_pct += 1.0;
    }
    std::vector<LengthBinRow> out;
    for (auto& r : rows) {
        if (r.count == 0) continue;
        const double n = static_cast<double>(r.count);
        r.mean_precision /= n;
        r.mean_recall /= n;
        r.cited_pct = 100.0 * r.cited_pct / n;
        out.push_back(r);
    }
    return out;
}

}  // namespace mirage
