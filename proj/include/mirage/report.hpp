#pragma once

// Static HTML and ANSI rendering of attribution output: word-level highlight
// spans colored per document id, a legend, and score tooltips.

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace mirage {

namespace detail {

inline const std::vector<std::string>& doc_palette() {
    static const std::vector<std::string> palette = {
        "#ffd54f", "#81d4fa", "#a5d6a7", "#f48fb1",
        "#ce93d8", "#ffab91", "#b0bec5", "#e6ee9c"};
    return palette;
}

inline std::string html_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct WordPiece {
    std::string text;
    int ordinal = -1;  // -1 for whitespace
};

inline std::vector<WordPiece> split_words(const std::string& text) {
    auto is_ws = [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
               c == '\v';
    };
    std::vector<WordPiece> out;
    std::size_t i = 0;
    int ordinal = 0;
    while (i < text.size()) {
        std::size_t j = i;
        const bool ws = is_ws(text[i]);
        while (j < text.size() && is_ws(text[j]) == ws) ++j;
        out.push_back({text.substr(i, j - i), ws ? -1 : ordinal++});
        i = j;
    }
    return out;
}

inline std::string doc_list(const std::set<int>& ids) {
    std::string s;
    for (int d : ids) {
        if (!s.empty()) s += ",";
        s += std::to_string(d);
    }
    return s;
}

}  // namespace detail

// attribution JSON document (as emitted by the attribute command) -> HTML
inline std::string render_html(const nlohmann::json& doc) {
    std::ostringstream out;
    out << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n"
        << "<title>answer attribution report</title>\n<style>\n"
        << "body { font-family: sans-serif; margin: 2em; max-width: 60em; }\n"
        << ".answer { line-height: 1.8; margin-bottom: 1em; }\n"
        << ".hl { border-radius: 3px; padding: 0 2px; }\n"
        << ".cite { color: #555; font-size: 0.85em; }\n"
        << ".legend span { margin-right: 1em; }\n"
        << ".example { border-top: 1px solid #ccc; padding-top: 1em; }\n"
        << "</style>\n</head>\n<body>\n<h1>Answer attribution report</h1>\n";

    const auto& palette = detail::doc_palette();
    std::set<int> all_docs;
    for (const auto& ex : doc.value("examples", nlohmann::json::array())) {
        for (const auto& sent : ex.value("sentences",
                                         nlohmann::json::array())) {
            for (const auto& d : sent.value("doc_ids",
                                            nlohmann::json::array())) {
                all_docs.insert(d.get<int>());
            }
        }
    }
    out << "<div class=\"legend\">";
    for (int d : all_docs) {
        out << "<span class=\"hl\" style=\"background:"
            << palette[static_cast<std::size_t>(d - 1) % palette.size()]
            << "\">Document [" << d << "]</span>";
    }
    out << "</div>\n";

    for (const auto& ex : doc.value("examples", nlohmann::json::array())) {
        out << "<div class=\"example\">\n<h2>"
            << detail::html_escape(ex.value("id", std::string{}))
            << "</h2>\n<div class=\"answer\">";
        const std::string answer = ex.value("answer", std::string{});
        // word ordinal -> (doc ids, best score tooltip)
        std::map<int, std::set<int>> word_docs;
        for (const auto& sent : ex.value("sentences",
                                         nlohmann::json::array())) {
            for (const auto& sp : sent.value("spans",
                                             nlohmann::json::array())) {
                std::set<int> ids;
                for (const auto& d : sp["doc_ids"]) ids.insert(d.get<int>());
                for (int w = sp["word_start"].get<int>();
                     w < sp["word_end"].get<int>(); ++w) {
                    word_docs[w].insert(ids.begin(), ids.end());
                }
            }
        }
        for (const auto& piece : detail::split_words(answer)) {
            if (piece.ordinal < 0) {
                out << detail::html_escape(piece.text);
                continue;
            }
            auto it = word_docs.find(piece.ordinal);
            if (it == word_docs.end()) {
                out << detail::html_escape(piece.text);
            } else {
                const int first = *it->second.begin();
                out << "<span class=\"hl\" style=\"background:"
                    << palette[static_cast<std::size_t>(first - 1) %
                               palette.size()]
                    << "\" title=\"docs [" << detail::doc_list(it->second)
                    << "]\">" << detail::html_escape(piece.text) << "</span>";
            }
        }
        out << "</div>\n";
        for (const auto& sent : ex.value("sentences",
                                         nlohmann::json::array())) {
            out << "<div class=\"cite\">"
                << detail::html_escape(sent.value("text", std::string{}))
                << " &rarr; ";
            std::set<int> ids;
            for (const auto& d : sent.value("doc_ids",
                                            nlohmann::json::array())) {
                ids.insert(d.get<int>());
            }
            if (ids.empty()) {
                out << "(unattributed)";
            } else {
                for (int d : ids) out << "[" << d << "]";
            }
            out << "</div>\n";
        }
        out << "</div>\n";
    }
    out << "</body>\n</html>\n";
    return out.str();
}

// ANSI terminal rendering; colors cycle per doc id.
inline std::string render_ansi(const nlohmann::json& doc) {
    static const int colors[] = {43, 46, 42, 45, 44, 41, 47, 106};
    std::ostringstream out;
    for (const auto& ex : doc.value("examples", nlohmann::json::array())) {
        out << "== " << ex.value("id", std::string{}) << " ==\n";
        const std::string answer = ex.value("answer", std::string{});
        std::map<int, std::set<int>> word_docs;
        for (const auto& sent : ex.value("sentences",
                                         nlohmann::json::array())) {
            for (const auto& sp : sent.value("spans",
                                             nlohmann::json::array())) {
                std::set<int> ids;
                for (const auto& d : sp["doc_ids"]) ids.insert(d.get<int>());
                for (int w = sp["word_start"].get<int>();
                     w < sp["word_end"].get<int>(); ++w) {
                    word_docs[w].insert(ids.begin(), ids.end());
                }
            }
        }
        for (const auto& piece : detail::split_words(answer)) {
            auto it = piece.ordinal < 0 ? word_docs.end()
                                        : word_docs.find(piece.ordinal);
            if (it == word_docs.end()) {
                out << piece.text;
            } else {
                const int first = *it->second.begin();
                out << "\x1b["
                    << colors[static_cast<std::size_t>(first - 1) %
                              (sizeof(colors) / sizeof(colors[0]))]
                    << "m" << piece.text << "\x1b[0m";
            }
        }
        out << "\n";
        for (const auto& sent : ex.value("sentences",
                                         nlohmann::json::array())) {
            out << "  " << sent.value("text", std::string{}) << " ->";
            bool any = false;
            for (const auto& d : sent.value("doc_ids",
                                            nlohmann::json::array())) {
                out << " [" << d.get<int>() << "]";
                any = true;
            }
            if (!any) out << " (unattributed)";
            out << "\n";
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace mirage
