#pragma once

// End-to-end attribution for one example: prompt assembly, answer
// acquisition (teacher-forced or greedy), CTI, CCI, citation formation, and
// JSON serialization. Also houses the document-order restoration search.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mirage/cci.hpp"
#include "mirage/citation.hpp"
#include "mirage/cti.hpp"
#include "mirage/model.hpp"
#include "mirage/prompt.hpp"
#include "mirage/synth.hpp"

namespace mirage {

inline constexpr int kAttributionSchemaVersion = 1;

struct PipelineOptions {
    CtiSelector selector = CtiSelector::example_level();
    CciFilter filter = TopPct{5.0};
    CciScope scope = CciScope::doc_only;
    std::size_t max_new_tokens = 64;
    std::string instruction;  // empty = template default
};

struct AttributionResult {
    PromptLayout layout;
    std::string answer_text;  // citation tags stripped
    std::vector<Token> answer_tokens;
    std::vector<SentenceSpan> sentences;
    SensitivityProfile profile;
    std::vector<AttributionRow> rows;
    std::vector<AttributionPair> pairs;
    std::vector<CitationSet> citation_sets;
    std::vector<HighlightSpan> spans;
    std::vector<int> word_of_token;
    bool generated = false;
};

template <typename T>
AttributionResult attribute_example(const Parameters<T>& params,
                                    const Tokenizer& tok,
                                    const PromptTemplate& tmpl,
                                    const std::vector<RetrievedDoc>& docs,
                                    const std::string& query,
                                    const std::optional<std::string>& answer,
                                    const PipelineOptions& opts) {
    AttributionResult res;
    res.layout = assemble_prompt(opts.instruction, docs, query, tmpl, tok);

    std::vector<int> prompt_ids;
    prompt_ids.reserve(res.layout.tokens.size());
    for (const Token& t : res.layout.tokens) prompt_ids.push_back(t.id);

    if (answer) {
        // strip any pre-existing self-citation tags before attribution
        res.answer_text =
            parse_citations(*answer, static_cast<int>(docs.size()))
                .clean_text;
    } else {
        std::vector<int> gen = generate_greedy(params, prompt_ids,
                                               opts.max_new_tokens,
                                               tok.eos_id());
        res.answer_text = tok.detokenize(std::span<const int>(gen));
        res.generated = true;
    }
    res.answer_tokens = tok.tokenize(res.answer_text);
    if (res.answer_tokens.empty()) {
        return res;
    }
    std::vector<int> answer_ids;
    answer_ids.reserve(res.answer_tokens.size());
    for (const Token& t : res.answer_tokens) answer_ids.push_back(t.id);

    res.sentences = split_sentences(res.answer_tokens, res.answer_text);
    res.word_of_token = word_groups(res.answer_tokens, res.answer_text);

    GenerationRecord rec = ablated_record(params, res.layout, answer_ids);
    rec.sentences = res.sentences;
    res.profile = select_context_sensitive(kl_scores(rec), opts.selector);

    for (std::size_t i : res.profile.selected) {
        std::vector<int> ctx_prefix = prompt_ids;
        ctx_prefix.insert(ctx_prefix.end(), answer_ids.begin(),
                          answer_ids.begin() + static_cast<std::ptrdiff_t>(i));
        std::vector<int> abl_prefix = rec.ablated_prompt;
        abl_prefix.insert(abl_prefix.end(), answer_ids.begin(),
                          answer_ids.begin() + static_cast<std::ptrdiff_t>(i));
        const std::optional<int> foil =
            foil_token(params, abl_prefix, answer_ids[i]);
        res.rows.push_back(attribution_row(params, res.layout, ctx_prefix, i,
                                           answer_ids[i], foil, opts.filter,
                                           opts.scope));
    }

    res.pairs = pair_set(res.rows, res.layout,
                         opts.scope == CciScope::all_context);
    res.citation_sets = aggregate_sentence(res.pairs, res.sentences);
    res.spans = collate_spans(res.pairs, res.word_of_token);
    return res;
}

// Union of sentence-level citations over the whole answer; feeds the
// (example, doc) agreement metric.
inline std::set<int> answer_doc_union(const AttributionResult& res) {
    std::set<int> out;
    for (const CitationSet& s : res.citation_sets) {
        out.insert(s.doc_ids.begin(), s.doc_ids.end());
    }
    return out;
}

namespace detail {

inline nlohmann::ordered_json filter_json(const CciFilter& f) {
    nlohmann::ordered_json j;
    if (std::holds_alternative<TopK>(f)) {
        j["kind"] = "top_k";
        j["k"] = std::get<TopK>(f).k;
    } else {
        j["kind"] = "top_pct";
        j["percent"] = std::get<TopPct>(f).percent;
    }
    return j;
}

}  // namespace detail

inline nlohmann::ordered_json attribution_to_json(
    const AttributionResult& res, const std::string& example_id,
    const PipelineOptions& opts) {
    nlohmann::ordered_json j;
    j["id"] = example_id;
    j["answer"] = res.answer_text;
    j["generated"] = res.generated;
    j["cti_threshold"] = res.profile.threshold;
    j["sentences"] = nlohmann::ordered_json::array();
    for (std::size_t si = 0; si < res.sentences.size(); ++si) {
        const SentenceSpan& sp = res.sentences[si];
        nlohmann::ordered_json s;
        const std::size_t b = res.answer_tokens[sp.range.begin].char_start;
        const std::size_t e = res.answer_tokens[sp.range.end - 1].char_end;
        s["text"] = res.answer_text.substr(b, e - b);
        s["doc_ids"] = res.citation_sets[si].doc_ids;

        // highlight spans restricted to this sentence's word range
        int w_lo = -1, w_hi = -1;
        for (std::size_t t = sp.range.begin; t < sp.range.end; ++t) {
            const int w = res.word_of_token[t];
            if (w < 0) continue;
            if (w_lo < 0) w_lo = w;
            w_hi = w;
        }
        s["spans"] = nlohmann::ordered_json::array();
        for (const HighlightSpan& hs : res.spans) {
            if (w_lo < 0 || hs.word_end <= w_lo || hs.word_start > w_hi) {
                continue;
            }
            s["spans"].push_back({{"word_start", hs.word_start},
                                  {"word_end", hs.word_end},
                                  {"doc_ids", hs.doc_ids}});
        }
        s["token_pairs"] = nlohmann::ordered_json::array();
        for (const AttributionPair& p : res.citation_sets[si].pairs) {
            s["token_pairs"].push_back({p.gen_index, p.ctx_index, p.doc_id});
        }
        s["cti_scores"] = nlohmann::ordered_json::array();
        for (std::size_t t = sp.range.begin; t < sp.range.end; ++t) {
            s["cti_scores"].push_back(res.profile.scores[t]);
        }
        s["fallback_tokens"] = nlohmann::ordered_json::array();
        for (const AttributionRow& row : res.rows) {
            if (row.fallback && sp.range.contains(row.gen_index)) {
                s["fallback_tokens"].push_back(row.gen_index);
            }
        }
        j["sentences"].push_back(std::move(s));
    }
    return j;
}

// ---------------------------------------------------------------------------
// Document-order restoration: try the given order, then uniformly random
// shuffles, until greedy generation reproduces the answer exactly.

struct RestoreResult {
    bool found = false;
    std::vector<int> order;  // original doc ids in the matching order
    int shuffles_used = 0;   // random shuffles tried (iteration 0 excluded)
    std::uint64_t seed = 0;
};

template <class GenerateFn>
RestoreResult restore_order(const std::vector<RetrievedDoc>& docs,
                            const std::string& answer, GenerateFn&& generate,
                            int max_iter = 200, std::uint64_t seed = 0) {
    if (docs.empty()) {
        throw PromptError("restore_order needs at least one document");
    }
    RestoreResult res;
    res.seed = seed;
    std::mt19937_64 rng(seed);
    std::vector<RetrievedDoc> current = docs;

    auto attempt = [&]() {
        std::vector<RetrievedDoc> renumbered = current;
        for (std::size_t i = 0; i < renumbered.size(); ++i) {
            renumbered[i].id = static_cast<int>(i) + 1;
        }
        return generate(renumbered) == answer;
    };

    for (int iter = 0; iter <= max_iter; ++iter) {
        if (iter > 0) {
            std::shuffle(current.begin(), current.end(), rng);
            res.shuffles_used = iter;
        }
        if (attempt()) {
            res.found = true;
            for (const RetrievedDoc& d : current) {
                res.order.push_back(d.id);
            }
            return res;
        }
    }
    return res;
}

}  // namespace mirage
