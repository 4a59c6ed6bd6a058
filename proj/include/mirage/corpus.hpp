#pragma once

// Corpus JSONL interchange: one example per line with
// {"id", "query", "docs": [{"id", "title", "text"}], "answer"?,
//  "gold_citations"?, "gold_doc_labels"?, "gold_cti"?}.

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mirage/prompt.hpp"
#include "mirage/synth.hpp"

namespace mirage {

struct CorpusError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CorpusExample {
    std::string id;
    std::string query;
    std::vector<RetrievedDoc> docs;
    std::optional<std::string> answer;
    std::optional<std::vector<std::vector<int>>> gold_citations;  // per sentence
    std::optional<std::vector<bool>> gold_doc_labels;
    std::optional<std::vector<int>> gold_cti;  // answer token indices
};

inline CorpusExample corpus_example_from_json(const nlohmann::json& j) {
    CorpusExample ex;
    ex.id = j.at("id").get<std::string>();
    ex.query = j.at("query").get<std::string>();
    for (const auto& d : j.at("docs")) {
        RetrievedDoc doc;
        doc.id = d.at("id").get<int>();
        doc.title = d.value("title", std::string{});
        doc.text = d.at("text").get<std::string>();
        ex.docs.push_back(std::move(doc));
    }
    if (j.contains("answer") && !j["answer"].is_null()) {
        ex.answer = j["answer"].get<std::string>();
    }
    if (j.contains("gold_citations") && !j["gold_citations"].is_null()) {
        ex.gold_citations =
            j["gold_citations"].get<std::vector<std::vector<int>>>();
    }
    if (j.contains("gold_doc_labels") && !j["gold_doc_labels"].is_null()) {
        ex.gold_doc_labels = j["gold_doc_labels"].get<std::vector<bool>>();
    }
    if (j.contains("gold_cti") && !j["gold_cti"].is_null()) {
        ex.gold_cti = j["gold_cti"].get<std::vector<int>>();
    }
    return ex;
}

inline nlohmann::ordered_json corpus_example_to_json(const CorpusExample& ex) {
    nlohmann::ordered_json j;
    j["id"] = ex.id;
    j["query"] = ex.query;
    j["docs"] = nlohmann::ordered_json::array();
    for (const RetrievedDoc& d : ex.docs) {
        j["docs"].push_back(
            {{"id", d.id}, {"title", d.title}, {"text", d.text}});
    }
    if (ex.answer) j["answer"] = *ex.answer;
    if (ex.gold_citations) j["gold_citations"] = *ex.gold_citations;
    if (ex.gold_doc_labels) j["gold_doc_labels"] = *ex.gold_doc_labels;
    if (ex.gold_cti) j["gold_cti"] = *ex.gold_cti;
    return j;
}

inline std::vector<CorpusExample> read_corpus_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CorpusError("cannot open corpus file: " + path);
    }
    std::vector<CorpusExample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(corpus_example_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw CorpusError(path + ":" + std::to_string(lineno) + ": " +
                              e.what());
        }
    }
    return out;
}

inline void write_corpus_jsonl(const std::vector<CorpusExample>& examples,
                               const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw CorpusError("cannot open corpus file for writing: " + path);
    }
    for (const CorpusExample& ex : examples) {
        out << corpus_example_to_json(ex).dump() << "\n";
    }
}

inline CorpusExample to_corpus_example(const SynthExample& ex) {
    CorpusExample c;
    c.id = ex.id;
    c.query = ex.query;
    c.docs = ex.docs;
    c.answer = ex.answer;
    std::vector<bool> labels(ex.docs.size(), false);
    labels[static_cast<std::size_t>(ex.gold_doc - 1)] = true;
    c.gold_doc_labels = std::move(labels);
    return c;
}

}  // namespace mirage
