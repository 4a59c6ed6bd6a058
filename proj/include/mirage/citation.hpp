#pragma once

// Token-level attribution pairs to document citations: docid mapping,
// word-level span collation, sentence aggregation, inline rendering, and
// parsing/stripping of pre-existing self-citation tags.

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mirage/cci.hpp"
#include "mirage/prompt.hpp"
#include "mirage/tokenize.hpp"

namespace mirage {

struct CitationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AttributionPair {
    std::size_t gen_index = 0;  // answer token index
    std::size_t ctx_index = 0;  // prompt position
    int doc_id = 0;

    auto operator<=>(const AttributionPair&) const = default;
};

struct HighlightSpan {
    int word_start = 0;  // word ordinals, half-open
    int word_end = 0;
    std::set<int> doc_ids;

    bool operator==(const HighlightSpan&) const = default;
};

struct CitationSet {
    int sentence_ordinal = 0;
    std::vector<AttributionPair> pairs;
    std::set<int> doc_ids;  // union over pairs in the sentence
};

// One pair per (generated token, selected context position), with the doc id
// looked up from the layout. A selected position outside every document span
// violates the doc-only invariant; with drop_non_doc it is skipped instead
// (permissive ranking variant).
inline std::vector<AttributionPair> pair_set(
    const std::vector<AttributionRow>& rows, const PromptLayout& layout,
    bool drop_non_doc = false) {
    std::vector<AttributionPair> pairs;
    for (const AttributionRow& row : rows) {
        for (std::size_t j : row.selected) {
            const int doc = layout.docid_at(j);
            if (doc == 0) {
                if (drop_non_doc) continue;
                throw CitationError(
                    "selected context index " + std::to_string(j) +
                    " lies outside every document span");
            }
            pairs.push_back({row.gen_index, j, doc});
        }
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    return pairs;
}

// Sentence-level aggregation: doc_ids is the union of docids over pairs
// whose generated index falls inside the sentence span.
inline std::vector<CitationSet> aggregate_sentence(
    const std::vector<AttributionPair>& pairs,
    const std::vector<SentenceSpan>& sentences) {
    std::vector<CitationSet> out;
    out.reserve(sentences.size());
    for (const SentenceSpan& s : sentences) {
        CitationSet set;
        set.sentence_ordinal = s.ordinal;
        for (const AttributionPair& p : pairs) {
            if (s.range.contains(p.gen_index)) {
                set.pairs.push_back(p);
                set.doc_ids.insert(p.doc_id);
            }
        }
        out.push_back(std::move(set));
    }
    return out;
}

// Word-level highlight spans: per word, the union of doc ids cited by its
// tokens; maximal runs of consecutive words with identical non-empty sets
// merge into one span.
inline std::vector<HighlightSpan> collate_spans(
    const std::vector<AttributionPair>& pairs,
    const std::vector<int>& word_of_token) {
    int max_word = -1;
    for (int w : word_of_token) max_word = std::max(max_word, w);
    std::vector<std::set<int>> word_sets(
        static_cast<std::size_t>(max_word + 1));
    for (const AttributionPair& p : pairs) {
        if (p.gen_index >= word_of_token.size()) {
            throw CitationError("pair token index outside word grouping");
        }
        const int w = word_of_token[p.gen_index];
        if (w >= 0) {
            word_sets[static_cast<std::size_t>(w)].insert(p.doc_id);
        }
    }
    std::vector<HighlightSpan> spans;
    for (int w = 0; w <= max_word; ++w) {
        const auto& s = word_sets[static_cast<std::size_t>(w)];
        if (s.empty()) continue;
        if (!spans.empty() && spans.back().word_end == w &&
            spans.back().doc_ids == s) {
            spans.back().word_end = w + 1;
        } else {
            spans.push_back({w, w + 1, s});
        }
    }
    return spans;
}

// Appends sorted "[d]" tags after each sentence; unattributed sentences are
// left untouched.
inline std::string render_inline(std::string_view answer_text,
                                 std::span<const Token> answer_tokens,
                                 const std::vector<SentenceSpan>& sentences,
                                 const std::vector<CitationSet>& sets) {
    if (sets.size() != sentences.size()) {
        throw CitationError("citation sets do not match sentence spans");
    }
    std::string out;
    std::size_t cursor = 0;
    for (std::size_t si = 0; si < sentences.size(); ++si) {
        const SentenceSpan& s = sentences[si];
        if (s.range.begin >= s.range.end ||
            s.range.end > answer_tokens.size()) {
            throw CitationError("sentence span misaligned with answer tokens");
        }
        const std::size_t end_char = answer_tokens[s.range.end - 1].char_end;
        out += answer_text.substr(cursor, end_char - cursor);
        cursor = end_char;
        if (!sets[si].doc_ids.empty()) {
            out += ' ';
            for (int d : sets[si].doc_ids) {
                out += '[';
                out += std::to_string(d);
                out += ']';
            }
        }
    }
    out += answer_text.substr(cursor);
    return out;
}

enum class CitationFlag { MissingCitation, OutOfRangeDoc, MalformedTag };

struct ParsedSentence {
    std::string text;
    std::set<int> citations;
    std::set<CitationFlag> flags;
};

struct ParsedAnswer {
    std::string clean_text;  // integer citation tags removed
    std::vector<ParsedSentence> sentences;

    bool has_flag(CitationFlag f) const {
        for (const auto& s : sentences) {
            if (s.flags.count(f)) return true;
        }
        return false;
    }
};

namespace detail {

inline bool is_space_char(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
           c == '\v';
}

struct RawTag {
    std::size_t begin = 0, end = 0;  // byte range including brackets
    bool integer = false;
    long value = 0;
};

inline std::vector<RawTag> scan_tags(std::string_view text) {
    std::vector<RawTag> tags;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] != '[') {
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        while (j < text.size() && text[j] != '[' && text[j] != ']') ++j;
        if (j >= text.size() || text[j] != ']') {
            ++i;
            continue;
        }
        RawTag t{i, j + 1, false, 0};
        std::string_view body = text.substr(i + 1, j - i - 1);
        if (!body.empty() &&
            std::all_of(body.begin(), body.end(), [](unsigned char c) {
                return std::isdigit(c) != 0;
            })) {
            t.integer = true;
            t.value = std::stol(std::string(body));
        }
        tags.push_back(t);
        i = j + 1;
    }
    return tags;
}

// Char-level sentence ranges over clean text, same terminal-punctuation rule
// as split_sentences.
inline std::vector<std::pair<std::size_t, std::size_t>> sentence_char_ranges(
    std::string_view text) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t begin = 0;
    bool seen_content = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (!is_space_char(c)) seen_content = true;
        const bool terminal = (c == '.' || c == '?' || c == '!') &&
                              (i + 1 == text.size() ||
                               is_space_char(text[i + 1]));
        if (terminal) {
            out.emplace_back(begin, i + 1);
            begin = i + 1;
            seen_content = false;
        }
    }
    if (seen_content) {
        out.emplace_back(begin, text.size());
    }
    return out;
}

}  // namespace detail

// Extracts bracketed positive-integer citation tags, removes them from the
// text, and reports per-sentence citations and error flags. Out-of-range ids
// and malformed (non-integer) bracket tags are flagged; sentences with zero
// valid tags are flagged MissingCitation. Mid-sentence tags attach to the
// enclosing sentence.
inline ParsedAnswer parse_citations(std::string_view text, int num_docs) {
    if (num_docs < 0) {
        throw CitationError("num_docs must be >= 0");
    }
    const std::vector<detail::RawTag> tags = detail::scan_tags(text);

    // integer tags (valid and out-of-range) are stripped; a tag's preceding
    // whitespace goes with it when the tag is followed by whitespace,
    // another tag, or end of text
    struct Removal {
        std::size_t begin, end;
        const detail::RawTag* tag;
    };
    std::vector<Removal> removals;
    for (const auto& t : tags) {
        if (!t.integer) continue;
        std::size_t begin = t.begin;
        const bool trailing = t.end >= text.size() ||
                              detail::is_space_char(text[t.end]) ||
                              text[t.end] == '[';
        if (trailing) {
            while (begin > 0 && detail::is_space_char(text[begin - 1])) {
                --begin;
            }
        }
        if (!removals.empty() && begin < removals.back().end) {
            begin = removals.back().end;
        }
        removals.push_back({begin, t.end, &t});
    }

    ParsedAnswer out;
    struct Placed {
        std::size_t clean_pos;
        const detail::RawTag* tag;
    };
    std::vector<Placed> placed;
    {
        std::size_t src = 0;
        std::size_t ri = 0;
        std::string clean;
        while (src < text.size()) {
            if (ri < removals.size() && src == removals[ri].begin) {
                placed.push_back({clean.size(), removals[ri].tag});
                src = removals[ri].end;
                ++ri;
            } else {
                clean += text[src++];
            }
        }
        out.clean_text = std::move(clean);
    }
    // malformed tags stay in the text; record their clean positions
    std::vector<Placed> malformed;
    for (const auto& t : tags) {
        if (t.integer) continue;
        std::size_t removed_before = 0;
        for (const auto& r : removals) {
            if (r.end <= t.begin) removed_before += r.end - r.begin;
        }
        malformed.push_back({t.begin - removed_before, &t});
    }

    const auto ranges = detail::sentence_char_ranges(out.clean_text);
    out.sentences.resize(ranges.size());
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        out.sentences[i].text = out.clean_text.substr(
            ranges[i].first, ranges[i].second - ranges[i].first);
    }

    auto sentence_of = [&](std::size_t pos) -> std::size_t {
        for (std::size_t i = 0; i < ranges.size(); ++i) {
            if (pos <= ranges[i].second &&
                (pos > ranges[i].first || i == 0)) {
                return i;
            }
        }
        return ranges.empty() ? 0 : ranges.size() - 1;
    };

    if (!out.sentences.empty()) {
        for (const auto& pl : placed) {
            ParsedSentence& s = out.sentences[sentence_of(pl.clean_pos)];
            if (pl.tag->value >= 1 && pl.tag->value <= num_docs) {
                s.citations.insert(static_cast<int>(pl.tag->value));
            } else {
                s.flags.insert(CitationFlag::OutOfRangeDoc);
            }
        }
        for (const auto& pl : malformed) {
            out.sentences[sentence_of(pl.clean_pos)].flags.insert(
                CitationFlag::MalformedTag);
        }
        for (auto& s : out.sentences) {
            if (s.citations.empty()) {
                s.flags.insert(CitationFlag::MissingCitation);
            }
        }
    }
    return out;
}

}  // namespace mirage
