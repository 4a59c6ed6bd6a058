#pragma once

// Synthetic key-value QA corpus: each example has k short documents of
// "key: value" lines, a queried key that appears in exactly one document,
// and the paired value as the answer. Provides token-level and
// document-level gold attribution labels.

#include <cstdint>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "mirage/prompt.hpp"
#include "mirage/tokenize.hpp"

namespace mirage {

struct SynthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SynthExample {
    std::string id;
    std::vector<RetrievedDoc> docs;
    std::string query;   // the key
    std::string answer;  // the paired value, verbatim
    int gold_doc = 0;    // 1-based id of the document holding the pair
};

struct SynthConfig {
    std::uint64_t seed = 0;
    std::size_t n_train = 2000;
    std::size_t n_val = 200;
    std::size_t n_test = 200;
    int k_docs = 5;
    int pairs_per_doc = 3;
    // keys and values draw from disjoint alphabets so a value can never
    // collide with a queried key; the default key space (15 keys for 15
    // pairs per example) keeps every key in play every example, which the
    // small bundled model learns far faster than a sparse key space
    std::string key_alphabet = "abcdefghijklmno";
    std::string value_alphabet = "0123456789";
    int key_chars = 1;    // suffix length after the 'k' prefix
    int value_chars = 2;  // suffix length after the 'v' prefix

    std::size_t key_space() const {
        std::size_t s = 1;
        for (int i = 0; i < key_chars; ++i) s *= key_alphabet.size();
        return s;
    }
    std::size_t value_space() const {
        std::size_t s = 1;
        for (int i = 0; i < value_chars; ++i) s *= value_alphabet.size();
        return s;
    }
};

struct SynthDataset {
    std::vector<SynthExample> train, val, test;
};

namespace detail {

inline std::string pick_word(const std::string& alphabet, char prefix,
                             int chars, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(0, alphabet.size() - 1);
    std::string s(1, prefix);
    for (int i = 0; i < chars; ++i) s += alphabet[d(rng)];
    return s;
}

inline std::string example_signature(const SynthExample& e) {
    std::string s = e.query + "|" + e.answer + "|";
    for (const auto& d : e.docs) {
        s += d.text;
        s += ';';
    }
    return s;
}

}  // namespace detail

inline SynthExample gen_kv_example(const SynthConfig& cfg,
                                   std::mt19937_64& rng, std::string id) {
    const std::size_t total_pairs =
        static_cast<std::size_t>(cfg.k_docs) *
        static_cast<std::size_t>(cfg.pairs_per_doc);
    if (cfg.key_space() < total_pairs || cfg.value_space() < total_pairs) {
        throw SynthError("alphabets too small for uniqueness constraints");
    }

    std::set<std::string> keys, values;
    while (keys.size() < total_pairs) {
        keys.insert(
            detail::pick_word(cfg.key_alphabet, 'k', cfg.key_chars, rng));
    }
    while (values.size() < total_pairs) {
        values.insert(
            detail::pick_word(cfg.value_alphabet, 'v', cfg.value_chars, rng));
    }
    std::vector<std::string> key_list(keys.begin(), keys.end());
    std::vector<std::string> value_list(values.begin(), values.end());
    std::shuffle(key_list.begin(), key_list.end(), rng);
    std::shuffle(value_list.begin(), value_list.end(), rng);

    SynthExample ex;
    ex.id = std::move(id);
    std::size_t cursor = 0;
    for (int d = 0; d < cfg.k_docs; ++d) {
        RetrievedDoc doc;
        doc.id = d + 1;
        doc.title = "d" + std::to_string(d + 1);
        for (int p = 0; p < cfg.pairs_per_doc; ++p) {
            if (p > 0) doc.text += '\n';
            doc.text += key_list[cursor] + ": " + value_list[cursor];
            ++cursor;
        }
        ex.docs.push_back(std::move(doc));
    }

    std::uniform_int_distribution<int> doc_pick(0, cfg.k_docs - 1);
    std::uniform_int_distribution<int> pair_pick(0, cfg.pairs_per_doc - 1);
    const int gd = doc_pick(rng);
    const int gp = pair_pick(rng);
    const std::size_t flat = static_cast<std::size_t>(gd) *
                                 static_cast<std::size_t>(cfg.pairs_per_doc) +
                             static_cast<std::size_t>(gp);
    ex.query = key_list[flat];
    ex.answer = value_list[flat];
    ex.gold_doc = gd + 1;
    return ex;
}

// Deterministic for a fixed seed; splits are disjoint by full-example
// content.
inline SynthDataset gen_kv_dataset(const SynthConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    SynthDataset ds;
    std::set<std::string> seen;
    auto fill = [&](std::vector<SynthExample>& out, std::size_t n,
                    const char* split) {
        while (out.size() < n) {
            SynthExample ex = gen_kv_example(
                cfg, rng,
                std::string(split) + "-" + std::to_string(out.size()));
            if (!seen.insert(detail::example_signature(ex)).second) {
                continue;  // duplicate across splits; redraw
            }
            out.push_back(std::move(ex));
        }
    };
    fill(ds.train, cfg.n_train, "train");
    fill(ds.val, cfg.n_val, "val");
    fill(ds.test, cfg.n_test, "test");
    return ds;
}

struct GoldLabels {
    std::vector<bool> doc_attributed;  // index 0 = doc id 1
    std::vector<bool> token_is_gold;   // per answer token
};

// The gold document is attributed, distractors are not; every non-whitespace
// answer token is a copied value token.
inline GoldLabels gold_labels(const SynthExample& ex, const Tokenizer& tok) {
    GoldLabels g;
    g.doc_attributed.assign(ex.docs.size(), false);
    if (ex.gold_doc < 1 ||
        ex.gold_doc > static_cast<int>(ex.docs.size())) {
        throw SynthError("gold_doc outside document range");
    }
    g.doc_attributed[static_cast<std::size_t>(ex.gold_doc - 1)] = true;

    const std::vector<Token> tokens = tok.tokenize(ex.answer);
    const std::vector<int> words = word_groups(tokens, ex.answer);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        g.token_is_gold.push_back(words[i] >= 0);
    }
    return g;
}

}  // namespace mirage
