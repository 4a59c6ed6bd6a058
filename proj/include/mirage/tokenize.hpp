#pragma once

// Tokenization with byte-offset tracking, sentence segmentation, and
// subword-to-word grouping.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mirage {

struct TokenizeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Token {
    int id = 0;
    std::size_t char_start = 0;  // byte offsets into the source text
    std::size_t char_end = 0;
};

// Half-open token index range.
struct TokenRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool contains(std::size_t i) const { return i >= begin && i < end; }
    bool operator==(const TokenRange&) const = default;
};

struct SentenceSpan {
    TokenRange range;
    int ordinal = 0;
};

class Tokenizer {
public:
    virtual ~Tokenizer() = default;

    virtual std::vector<Token> tokenize(std::string_view text) const = 0;
    virtual std::string piece(int id) const = 0;
    virtual int vocab_size() const = 0;
    virtual int bos_id() const = 0;
    virtual int eos_id() const = 0;
    virtual int pad_id() const = 0;

    virtual std::string detokenize(std::span<const int> ids) const {
        std::string out;
        for (int id : ids) {
            out += piece(id);
        }
        return out;
    }
    std::string detokenize(std::span<const Token> tokens) const {
        std::vector<int> ids;
        ids.reserve(tokens.size());
        for (const Token& t : tokens) {
            ids.push_back(t.id);
        }
        return detokenize(std::span<const int>(ids));
    }
};

// Byte-level tokenizer: one token per byte, ids 0..255, then BOS/EOS/PAD.
// Needs no fitting and guarantees a lossless roundtrip on any input.
class ByteTokenizer final : public Tokenizer {
public:
    static constexpr int kBos = 256;
    static constexpr int kEos = 257;
    static constexpr int kPad = 258;

    std::vector<Token> tokenize(std::string_view text) const override {
        std::vector<Token> out;
        out.reserve(text.size());
        for (std::size_t i = 0; i < text.size(); ++i) {
            out.push_back({static_cast<unsigned char>(text[i]), i, i + 1});
        }
        return out;
    }

    std::string piece(int id) const override {
        if (id >= 0 && id < 256) {
            return std::string(1, static_cast<char>(id));
        }
        if (id == kBos || id == kEos || id == kPad) {
            return {};
        }
        throw TokenizeError("unknown token id " + std::to_string(id));
    }

    int vocab_size() const override { return 259; }
    int bos_id() const override { return kBos; }
    int eos_id() const override { return kEos; }
    int pad_id() const override { return kPad; }
};

// Whitespace word tokenizer with a fitted vocabulary. Words and whitespace
// runs are both vocabulary entries, so detokenize reproduces fitted text
// exactly. Unknown words map to UNK (lossy); intended for synthetic corpora
// where every surface form is seen during fitting.
//
// In drop_whitespace mode, whitespace runs and ':' separators produce no
// tokens at all, so a "key: value" line yields adjacent key and value token
// positions (the geometry the bundled model trains on); detokenize then
// joins pieces with single spaces.
class WordTokenizer final : public Tokenizer {
public:
    static constexpr int kUnk = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kPad = 3;

    WordTokenizer() = default;
    explicit WordTokenizer(bool drop_whitespace)
        : drop_whitespace_(drop_whitespace) {}

    void fit(std::string_view text) {
        if (frozen_) {
            throw TokenizeError("WordTokenizer: fit after freeze");
        }
        each_piece(text, [&](std::string_view run, std::size_t, std::size_t) {
            intern(std::string(run));
        });
    }

    void freeze() { frozen_ = true; }
    bool frozen() const { return frozen_; }

    std::vector<Token> tokenize(std::string_view text) const override {
        std::vector<Token> out;
        each_piece(text, [&](std::string_view run, std::size_t b, std::size_t e) {
            auto it = ids_.find(std::string(run));
            out.push_back({it == ids_.end() ? kUnk : it->second, b, e});
        });
        return out;
    }

    using Tokenizer::detokenize;
    std::string detokenize(std::span<const int> ids) const override {
        if (!drop_whitespace_) {
            return Tokenizer::detokenize(ids);
        }
        std::string out;
        for (int id : ids) {
            const std::string p = piece(id);
            if (p.empty()) continue;  // specials render as nothing
            if (!out.empty()) out += ' ';
            out += p;
        }
        return out;
    }

    std::string piece(int id) const override {
        if (id == kUnk) return "\xEF\xBF\xBD";  // U+FFFD
        if (id == kBos || id == kEos || id == kPad) return {};
        int w = id - kNumSpecials;
        if (w < 0 || w >= static_cast<int>(pieces_.size())) {
            throw TokenizeError("unknown token id " + std::to_string(id));
        }
        return pieces_[static_cast<std::size_t>(w)];
    }

    int vocab_size() const override {
        return kNumSpecials + static_cast<int>(pieces_.size());
    }
    int bos_id() const override { return kBos; }
    int eos_id() const override { return kEos; }
    int pad_id() const override { return kPad; }

    const std::vector<std::string>& pieces() const { return pieces_; }
    bool drop_whitespace() const { return drop_whitespace_; }

    // Rebuild from a saved piece list.
    static WordTokenizer from_pieces(std::vector<std::string> pieces,
                                     bool drop_whitespace = false) {
        WordTokenizer t(drop_whitespace);
        for (auto& p : pieces) {
            t.intern(std::move(p));
        }
        t.freeze();
        return t;
    }

private:
    static constexpr int kNumSpecials = 4;

    static bool is_ws(char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    }

    template <class Fn>
    static void for_each_run(std::string_view text, Fn&& fn) {
        std::size_t i = 0;
        while (i < text.size()) {
            std::size_t j = i;
            bool ws = is_ws(text[i]);
            while (j < text.size() && is_ws(text[j]) == ws) {
                ++j;
            }
            fn(text.substr(i, j - i), i, j);
            i = j;
        }
    }

    // Mode-aware splitting: keep-whitespace mode alternates word and
    // whitespace runs; drop-whitespace mode emits only maximal runs free of
    // whitespace and ':' separators.
    template <class Fn>
    void each_piece(std::string_view text, Fn&& fn) const {
        if (!drop_whitespace_) {
            for_each_run(text, fn);
            return;
        }
        auto is_sep = [](char c) { return is_ws(c) || c == ':'; };
        std::size_t i = 0;
        while (i < text.size()) {
            if (is_sep(text[i])) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < text.size() && !is_sep(text[j])) {
                ++j;
            }
            fn(text.substr(i, j - i), i, j);
            i = j;
        }
    }

    int intern(std::string piece) {
        auto it = ids_.find(piece);
        if (it != ids_.end()) {
            return it->second;
        }
        int id = kNumSpecials + static_cast<int>(pieces_.size());
        ids_.emplace(piece, id);
        pieces_.push_back(std::move(piece));
        return id;
    }

    std::map<std::string, int> ids_;
    std::vector<std::string> pieces_;
    bool frozen_ = false;
    bool drop_whitespace_ = false;
};

// Sentence segmentation over answer tokens: a sentence ends at a token whose
// text ends with '.', '?' or '!' when the next source byte is whitespace (or
// end of text), or at end of text. Abbreviations are not special-cased.
inline std::vector<SentenceSpan> split_sentences(std::span<const Token> tokens,
                                                 std::string_view source) {
    std::vector<SentenceSpan> spans;
    if (tokens.empty()) {
        return spans;
    }
    auto is_ws = [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    };
    std::size_t begin = 0;
    int ordinal = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const Token& t = tokens[i];
        bool boundary = false;
        if (t.char_end > t.char_start && t.char_end <= source.size()) {
            char last = source[t.char_end - 1];
            if (last == '.' || last == '?' || last == '!') {
                boundary = t.char_end == source.size() || is_ws(source[t.char_end]);
            }
        }
        if (boundary || i + 1 == tokens.size()) {
            spans.push_back({{begin, i + 1}, ordinal++});
            begin = i + 1;
        }
    }
    return spans;
}

// Maps each token to the ordinal of the maximal non-whitespace run containing
// its first non-whitespace byte; whitespace-only tokens get -1.
inline std::vector<int> word_groups(std::span<const Token> tokens,
                                    std::string_view source) {
    auto is_ws = [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    };
    // word ordinal per byte position, -1 on whitespace
    std::vector<int> byte_word(source.size(), -1);
    int word = -1;
    bool in_word = false;
    for (std::size_t i = 0; i < source.size(); ++i) {
        if (!is_ws(source[i])) {
            if (!in_word) {
                ++word;
                in_word = true;
            }
            byte_word[i] = word;
        } else {
            in_word = false;
        }
    }
    std::vector<int> out(tokens.size(), -1);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const Token& t = tokens[i];
        if (t.char_start >= t.char_end || t.char_end > source.size()) {
            throw TokenizeError("word_groups: token offsets outside source text");
        }
        for (std::size_t p = t.char_start; p < t.char_end; ++p) {
            if (byte_word[p] >= 0) {
                out[i] = byte_word[p];
                break;
            }
        }
    }
    return out;
}

}  // namespace mirage
