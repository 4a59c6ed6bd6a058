#pragma once

// Prompt assembly with per-token provenance: which tokens belong to the
// instruction, to each retrieved document body, and to the query.

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mirage/tokenize.hpp"

namespace mirage {

struct PromptError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RetrievedDoc {
    int id = 0;  // 1-based
    std::string title;
    std::string text;
};

// Template with {instruction}, {docs}, {query} placeholders; the per-document
// sub-template uses {id}, {title}, {text}.
struct PromptTemplate {
    std::string id;
    std::string layout;
    std::string doc_item;
    // Used when assemble_prompt is called with an empty instruction.
    std::string default_instruction;
};

namespace templates {

// Self-citation prompt (instruction text includes explicit citation rules).
inline PromptTemplate self_citation() {
    return {
        "self_citation",
        "Instruction: {instruction}\n\n{docs}\nQuery: {query}\nAnswer:",
        "Document [{id}](Title: {title}): {text}\n",
        "Write an accurate, engaging, and concise answer for the given "
        "question using only the provided search results (some of which "
        "might be irrelevant) and cite them properly. Use an unbiased and "
        "journalistic tone. Always cite for any factual claim. When citing "
        "several search results, use [1][2][3]. Cite at least one document "
        "and at most three documents in each sentence. If multiple documents "
        "support the sentence, only cite a minimum sufficient subset of the "
        "documents."};
}

// Standard prompt with no citation instruction.
inline PromptTemplate standard() {
    return {
        "standard",
        "Instruction: {instruction}\n\n{docs}\nQuery: {query}\nAnswer:",
        "Document [{id}](Title: {title}): {text}\n",
        "Write an accurate, engaging, and concise answer for the given "
        "question using only the provided search results (some of which "
        "might be irrelevant). Use an unbiased and journalistic tone."};
}

// Compact template for the synthetic key-value task; keeps sequences short
// for desk-scale training. The prompt deliberately ends at the query so the
// answer is predicted directly after the queried key token, the geometry the
// bundled model's copy circuit learns fastest.
inline PromptTemplate minimal() {
    return {"minimal",
            "{instruction}\n{docs}Q: {query}",
            "D{id}: {text}\n",
            "Answer the query using the documents."};
}

inline PromptTemplate by_id(std::string_view id) {
    if (id == "self_citation") return self_citation();
    if (id == "standard") return standard();
    if (id == "minimal") return minimal();
    throw PromptError("unknown template id: " + std::string(id));
}

}  // namespace templates

// Template file: three sections separated by a line containing only "---":
// template id, layout text, per-document sub-template.
inline PromptTemplate load_template_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw PromptError("cannot open template file: " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    std::string all = ss.str();
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (true) {
        std::size_t sep = all.find("\n---\n", pos);
        if (sep == std::string::npos) {
            parts.push_back(all.substr(pos));
            break;
        }
        parts.push_back(all.substr(pos, sep - pos));
        pos = sep + 5;
    }
    if (parts.size() < 3) {
        throw PromptError("template file needs at least two --- separators: " +
                          path);
    }
    // strip one trailing newline from the single-line sections
    auto chomp = [](std::string& s) {
        if (!s.empty() && s.back() == '\n') s.pop_back();
    };
    chomp(parts[0]);
    chomp(parts[2]);
    PromptTemplate t{parts[0], parts[1], parts[2], ""};
    if (parts.size() > 3) {
        chomp(parts[3]);
        t.default_instruction = parts[3];
    }
    return t;
}

struct PromptLayout {
    std::vector<Token> tokens;
    std::string text;  // rendered prompt
    TokenRange instruction_span;
    std::vector<std::pair<int, TokenRange>> doc_spans;  // ordered by doc id
    TokenRange query_span;
    std::string template_id;

    int docid_at(std::size_t token_index) const {
        for (const auto& [id, r] : doc_spans) {
            if (r.contains(token_index)) return id;
        }
        return 0;  // not inside any document body
    }

    std::vector<std::size_t> doc_positions() const {
        std::vector<std::size_t> out;
        for (const auto& [id, r] : doc_spans) {
            for (std::size_t i = r.begin; i < r.end; ++i) out.push_back(i);
        }
        return out;
    }
};

namespace detail {

struct CharRange {
    std::size_t begin = 0;
    std::size_t end = 0;
};

// Token span covering exactly the tokens inside [begin, end).
inline TokenRange char_to_token_range(const std::vector<Token>& tokens,
                                      CharRange r) {
    TokenRange out{0, 0};
    bool started = false;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].char_start >= r.begin && tokens[i].char_end <= r.end &&
            tokens[i].char_start < tokens[i].char_end) {
            if (!started) {
                out.begin = i;
                started = true;
            }
            out.end = i + 1;
        } else if (started && tokens[i].char_start >= r.end) {
            break;
        }
    }
    return out;
}

inline void replace_all(std::string& s, std::string_view what,
                        std::string_view with) {
    std::size_t pos = 0;
    while ((pos = s.find(what, pos)) != std::string::npos) {
        s.replace(pos, what.size(), with);
        pos += with.size();
    }
}

}  // namespace detail

inline PromptLayout assemble_prompt(std::string_view instruction,
                                    const std::vector<RetrievedDoc>& docs,
                                    std::string_view query,
                                    const PromptTemplate& tmpl,
                                    const Tokenizer& tok) {
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (docs[i].id != static_cast<int>(i) + 1) {
            throw PromptError("doc ids must be unique, 1-based, consecutive");
        }
    }
    std::string instr_text(instruction);
    if (instr_text.empty()) {
        instr_text = tmpl.default_instruction;
    }

    std::string out;
    detail::CharRange instr_range{}, query_range{};
    std::vector<std::pair<int, detail::CharRange>> doc_ranges;

    std::size_t pos = 0;
    const std::string& layout = tmpl.layout;
    while (pos < layout.size()) {
        std::size_t brace = layout.find('{', pos);
        if (brace == std::string::npos) {
            out += layout.substr(pos);
            break;
        }
        out += layout.substr(pos, brace - pos);
        std::size_t close = layout.find('}', brace);
        if (close == std::string::npos) {
            throw PromptError("unterminated placeholder in template layout");
        }
        std::string name = layout.substr(brace + 1, close - brace - 1);
        if (name == "instruction") {
            instr_range.begin = out.size();
            out += instr_text;
            instr_range.end = out.size();
        } else if (name == "query") {
            query_range.begin = out.size();
            out += query;
            query_range.end = out.size();
        } else if (name == "docs") {
            for (const RetrievedDoc& d : docs) {
                std::string item = tmpl.doc_item;
                // substitute {text} last so id/title cannot shift its range
                detail::replace_all(item, "{id}", std::to_string(d.id));
                detail::replace_all(item, "{title}", d.title);
                std::size_t tpos = item.find("{text}");
                if (tpos == std::string::npos) {
                    throw PromptError("doc template lacks {text} placeholder");
                }
                out += item.substr(0, tpos);
                detail::CharRange body{out.size(), 0};
                out += d.text;
                body.end = out.size();
                out += item.substr(tpos + 6);
                doc_ranges.emplace_back(d.id, body);
            }
        } else {
            throw PromptError("unknown placeholder {" + name + "}");
        }
        pos = close + 1;
    }

    PromptLayout result;
    result.text = std::move(out);
    result.tokens = tok.tokenize(result.text);
    result.template_id = tmpl.id;
    result.instruction_span =
        detail::char_to_token_range(result.tokens, instr_range);
    result.query_span = detail::char_to_token_range(result.tokens, query_range);
    for (const auto& [id, r] : doc_ranges) {
        result.doc_spans.emplace_back(
            id, detail::char_to_token_range(result.tokens, r));
    }
    return result;
}

}  // namespace mirage
