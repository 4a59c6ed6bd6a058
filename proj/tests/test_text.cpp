// Tokenization, sentence segmentation, prompt assembly, synthetic corpus
// generation, corpus JSONL interchange, and citation-tag parsing.

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <random>

#include "mirage/citation.hpp"
#include "mirage/corpus.hpp"
#include "mirage/prompt.hpp"
#include "mirage/synth.hpp"
#include "mirage/tokenize.hpp"

using namespace mirage;

namespace {

std::string temp_path(const std::string& name) {
    return std::string(std::getenv("TMPDIR") ? std::getenv("TMPDIR") : "/tmp") +
           "/mirage_test_" + name;
}

}  // namespace

TEST_CASE("byte tokenizer roundtrips arbitrary bytes", "[tokenize]") {
    ByteTokenizer tok;
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> len(0, 64);
    std::uniform_int_distribution<int> byte(0, 255);
    for (int iter = 0; iter < 1000; ++iter) {
        std::string s;
        const int n = len(rng);
        for (int i = 0; i < n; ++i) {
            s += static_cast<char>(byte(rng));
        }
        const std::vector<Token> toks = tok.tokenize(s);
        REQUIRE(toks.size() == s.size());
        REQUIRE(tok.detokenize(std::span<const Token>(toks)) == s);
        for (std::size_t i = 0; i < toks.size(); ++i) {
            REQUIRE(toks[i].char_start == i);
            REQUIRE(toks[i].char_end == i + 1);
        }
    }
    REQUIRE(tok.vocab_size() == 259);
    REQUIRE(tok.piece(ByteTokenizer::kEos).empty());
    REQUIRE_THROWS_AS(tok.piece(300), TokenizeError);
}

TEST_CASE("word tokenizer keeps whitespace runs and roundtrips fitted text",
          "[tokenize]") {
    WordTokenizer tok;
    const std::string text = "hello  world\nagain";
    tok.fit(text);
    tok.freeze();
    REQUIRE_THROWS_AS(tok.fit("more"), TokenizeError);

    const std::vector<Token> toks = tok.tokenize(text);
    REQUIRE(toks.size() == 5);  // word, ws, word, ws, word
    REQUIRE(tok.detokenize(std::span<const Token>(toks)) == text);

    // unknown words map to UNK
    const std::vector<Token> unk = tok.tokenize("unseen");
    REQUIRE(unk.size() == 1);
    REQUIRE(unk[0].id == WordTokenizer::kUnk);
    REQUIRE(tok.piece(WordTokenizer::kUnk) == "\xEF\xBF\xBD");
}

TEST_CASE("drop-whitespace mode splits on whitespace and colons",
          "[tokenize]") {
    WordTokenizer tok(true);
    tok.fit("ka: v07");
    tok.freeze();
    const std::vector<Token> toks = tok.tokenize("ka: v07");
    REQUIRE(toks.size() == 2);
    REQUIRE(tok.piece(toks[0].id) == "ka");
    REQUIRE(tok.piece(toks[1].id) == "v07");
    // byte offsets still point at the source words
    REQUIRE(toks[0].char_start == 0);
    REQUIRE(toks[0].char_end == 2);
    REQUIRE(toks[1].char_start == 4);
    REQUIRE(toks[1].char_end == 7);

    std::vector<int> ids{toks[0].id, toks[1].id};
    REQUIRE(tok.detokenize(std::span<const int>(ids)) == "ka v07");

    WordTokenizer copy =
        WordTokenizer::from_pieces(tok.pieces(), tok.drop_whitespace());
    REQUIRE(copy.tokenize("ka: v07").size() == 2);
}

TEST_CASE("sentence segmentation follows terminal punctuation",
          "[tokenize]") {
    ByteTokenizer tok;

    SECTION("two sentences") {
        const std::string s = "Hello world. Second one!";
        const auto spans = split_sentences(tok.tokenize(s), s);
        REQUIRE(spans.size() == 2);
        REQUIRE(spans[0].range.begin == 0);
        REQUIRE(spans[0].range.end == 12);  // through the period
        REQUIRE(spans[1].range.end == s.size());
        REQUIRE(spans[0].ordinal == 0);
        REQUIRE(spans[1].ordinal == 1);
    }
    SECTION("period inside a number is not a boundary") {
        const std::string s = "pi is 3.14 roughly";
        REQUIRE(split_sentences(tok.tokenize(s), s).size() == 1);
    }
    SECTION("trailing text without punctuation closes the last sentence") {
        const std::string s = "First. trailing words";
        const auto spans = split_sentences(tok.tokenize(s), s);
        REQUIRE(spans.size() == 2);
        REQUIRE(spans[1].range.end == s.size());
    }
    SECTION("empty input") {
        REQUIRE(split_sentences(tok.tokenize(""), "").empty());
    }
}

TEST_CASE("word grouping maps tokens to word ordinals", "[tokenize]") {
    ByteTokenizer tok;
    const std::string s = "ab cd";
    const auto toks = tok.tokenize(s);
    const std::vector<int> words = word_groups(toks, s);
    REQUIRE(words == std::vector<int>{0, 0, -1, 1, 1});

    // a word tokenizer's whitespace tokens get -1
    WordTokenizer wt;
    wt.fit(s);
    wt.freeze();
    const auto wtoks = wt.tokenize(s);
    REQUIRE(word_groups(wtoks, s) == std::vector<int>{0, -1, 1});
}

TEST_CASE("prompt assembly tracks instruction, document, and query spans",
          "[prompt]") {
    ByteTokenizer tok;
    std::vector<RetrievedDoc> docs{{1, "t1", "alpha beta"},
                                   {2, "t2", "gamma"}};
    const PromptTemplate tmpl = templates::minimal();
    const PromptLayout layout =
        assemble_prompt("use the docs", docs, "alpha", tmpl, tok);

    // instruction span reproduces the instruction text
    std::string instr;
    for (std::size_t i = layout.instruction_span.begin;
         i < layout.instruction_span.end; ++i) {
        instr += layout.text.substr(layout.tokens[i].char_start,
                                    layout.tokens[i].char_end -
                                        layout.tokens[i].char_start);
    }
    REQUIRE(instr == "use the docs");

    // each doc span covers exactly the document body
    REQUIRE(layout.doc_spans.size() == 2);
    for (const auto& [id, r] : layout.doc_spans) {
        std::string body;
        for (std::size_t i = r.begin; i < r.end; ++i) {
            body += layout.text.substr(layout.tokens[i].char_start,
                                       layout.tokens[i].char_end -
                                           layout.tokens[i].char_start);
        }
        REQUIRE(body == docs[static_cast<std::size_t>(id - 1)].text);
        for (std::size_t i = r.begin; i < r.end; ++i) {
            REQUIRE(layout.docid_at(i) == id);
        }
    }
    REQUIRE(layout.docid_at(0) == 0);  // instruction is outside every doc

    // doc_positions is the concatenation of the spans
    const auto pos = layout.doc_positions();
    std::size_t total = 0;
    for (const auto& [id, r] : layout.doc_spans) total += r.size();
    REQUIRE(pos.size() == total);

    // query span reproduces the query
    std::string q;
    for (std::size_t i = layout.query_span.begin; i < layout.query_span.end;
         ++i) {
        q += layout.text.substr(layout.tokens[i].char_start,
                                layout.tokens[i].char_end -
                                    layout.tokens[i].char_start);
    }
    REQUIRE(q == "alpha");
}

TEST_CASE("prompt assembly validates inputs", "[prompt]") {
    ByteTokenizer tok;
    const PromptTemplate tmpl = templates::minimal();
    std::vector<RetrievedDoc> bad{{2, "", "x"}};  // ids must start at 1
    REQUIRE_THROWS_AS(assemble_prompt("i", bad, "q", tmpl, tok), PromptError);

    PromptTemplate broken = tmpl;
    broken.layout = "{nope}";
    REQUIRE_THROWS_AS(assemble_prompt("i", {}, "q", broken, tok),
                      PromptError);

    PromptTemplate no_text = tmpl;
    no_text.doc_item = "D{id}\n";
    std::vector<RetrievedDoc> docs{{1, "", "x"}};
    REQUIRE_THROWS_AS(assemble_prompt("i", docs, "q", no_text, tok),
                      PromptError);

    REQUIRE_THROWS_AS(templates::by_id("missing"), PromptError);
}

TEST_CASE("self-citation template carries the citation instruction verbatim",
          "[prompt]") {
    ByteTokenizer tok;
    std::vector<RetrievedDoc> docs{{1, "t", "body"}};
    const PromptLayout layout =
        assemble_prompt("", docs, "q", templates::self_citation(), tok);
    REQUIRE(layout.text.find("Always cite for any factual claim.") !=
            std::string::npos);
    REQUIRE(layout.text.find("When citing several search results, use "
                             "[1][2][3].") != std::string::npos);
    REQUIRE(layout.text.find("Document [1](Title: t): body") !=
            std::string::npos);
}

TEST_CASE("template files load through the three-section format",
          "[prompt]") {
    const std::string path = temp_path("tmpl.txt");
    {
        std::ofstream out(path);
        out << "custom\n---\n{instruction} {docs} {query}\n---\n"
               "[{id}:{title}] {text}\n---\ndefault instr";
    }
    const PromptTemplate t = load_template_file(path);
    REQUIRE(t.id == "custom");
    REQUIRE(t.layout == "{instruction} {docs} {query}");
    REQUIRE(t.doc_item == "[{id}:{title}] {text}");
    REQUIRE(t.default_instruction == "default instr");
    std::remove(path.c_str());

    REQUIRE_THROWS_AS(load_template_file("/nonexistent/tmpl"), PromptError);
}

TEST_CASE("synthetic dataset generation is deterministic and disjoint",
          "[synth]") {
    SynthConfig cfg;
    cfg.n_train = 60;
    cfg.n_val = 20;
    cfg.n_test = 20;
    cfg.seed = 5;
    const SynthDataset a = gen_kv_dataset(cfg);
    const SynthDataset b = gen_kv_dataset(cfg);

    auto sig = [](const SynthExample& e) {
        std::string s = e.query + "|" + e.answer + "|";
        for (const auto& d : e.docs) s += d.text + ";";
        return s;
    };
    REQUIRE(a.train.size() == 60);
    std::set<std::string> seen;
    auto check_split = [&](const std::vector<SynthExample>& xs,
                           const std::vector<SynthExample>& ys) {
        REQUIRE(xs.size() == ys.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            REQUIRE(sig(xs[i]) == sig(ys[i]));  // determinism
            REQUIRE(seen.insert(sig(xs[i])).second);  // split disjointness
        }
    };
    check_split(a.train, b.train);
    check_split(a.val, b.val);
    check_split(a.test, b.test);
}

TEST_CASE("synthetic examples keep keys and values unique and consistent",
          "[synth]") {
    SynthConfig cfg;
    std::mt19937_64 rng(11);
    for (int iter = 0; iter < 50; ++iter) {
        const SynthExample ex = gen_kv_example(cfg, rng, "x");
        REQUIRE(ex.docs.size() == 5);
        std::set<std::string> keys, values;
        bool query_found = false;
        for (const auto& d : ex.docs) {
            std::istringstream lines(d.text);
            std::string line;
            while (std::getline(lines, line)) {
                const auto colon = line.find(": ");
                REQUIRE(colon != std::string::npos);
                const std::string k = line.substr(0, colon);
                const std::string v = line.substr(colon + 2);
                REQUIRE(keys.insert(k).second);
                REQUIRE(values.insert(v).second);
                if (k == ex.query) {
                    REQUIRE(v == ex.answer);
                    REQUIRE(d.id == ex.gold_doc);
                    query_found = true;
                }
            }
        }
        REQUIRE(query_found);
        REQUIRE(keys.size() == 15);
    }

    SynthConfig tiny;
    tiny.key_alphabet = "ab";  // 2 keys for 15 pairs
    REQUIRE_THROWS_AS(gen_kv_example(tiny, rng, "x"), SynthError);
}

TEST_CASE("gold labels mark the gold document and copied value tokens",
          "[synth]") {
    ByteTokenizer tok;
    SynthExample ex;
    ex.docs = {{1, "", ""}, {2, "", ""}, {3, "", ""}, {4, "", ""},
               {5, "", ""}};
    ex.gold_doc = 2;
    ex.answer = "v3";
    const GoldLabels g = gold_labels(ex, tok);
    REQUIRE(g.doc_attributed ==
            std::vector<bool>{false, true, false, false, false});
    REQUIRE(g.token_is_gold == std::vector<bool>{true, true});

    SynthExample padded = ex;
    padded.answer = " v3";  // leading whitespace token is not a value token
    const GoldLabels gp = gold_labels(padded, tok);
    REQUIRE(gp.token_is_gold == std::vector<bool>{false, true, true});

    SynthExample bad = ex;
    bad.gold_doc = 9;
    REQUIRE_THROWS_AS(gold_labels(bad, tok), SynthError);
}

TEST_CASE("corpus JSONL roundtrips and reports line numbers on errors",
          "[corpus]") {
    const std::string path = temp_path("corpus.jsonl");
    SynthConfig cfg;
    cfg.n_train = 4;
    cfg.n_val = 1;
    cfg.n_test = 1;
    const SynthDataset ds = gen_kv_dataset(cfg);
    std::vector<CorpusExample> out;
    for (const auto& ex : ds.train) out.push_back(to_corpus_example(ex));
    out[0].gold_citations = {{1, 2}};
    out[0].gold_cti = {0, 1};
    write_corpus_jsonl(out, path);

    const std::vector<CorpusExample> in = read_corpus_jsonl(path);
    REQUIRE(in.size() == out.size());
    REQUIRE(in[0].id == out[0].id);
    REQUIRE(in[0].query == out[0].query);
    REQUIRE(in[0].answer == out[0].answer);
    REQUIRE(in[0].gold_doc_labels == out[0].gold_doc_labels);
    REQUIRE(in[0].gold_citations == out[0].gold_citations);
    REQUIRE(in[0].gold_cti == out[0].gold_cti);
    REQUIRE(in[0].docs.size() == out[0].docs.size());
    REQUIRE(in[0].docs[0].text == out[0].docs[0].text);

    {
        std::ofstream f(path, std::ios::app);
        f << "{not json\n";
    }
    try {
        read_corpus_jsonl(path);
        FAIL("expected CorpusError");
    } catch (const CorpusError& e) {
        REQUIRE(std::string(e.what()).find(":5:") != std::string::npos);
    }
    std::remove(path.c_str());
    REQUIRE_THROWS_AS(read_corpus_jsonl("/nonexistent.jsonl"), CorpusError);
}

TEST_CASE("citation tags parse, strip, and flag", "[citation]") {
    SECTION("valid trailing tags") {
        const ParsedAnswer p = parse_citations("The sky is blue. [1][3]", 5);
        REQUIRE(p.clean_text == "The sky is blue.");
        REQUIRE(p.sentences.size() == 1);
        REQUIRE(p.sentences[0].citations == std::set<int>{1, 3});
        REQUIRE(p.sentences[0].flags.empty());
    }
    SECTION("out-of-range id") {
        const ParsedAnswer p = parse_citations("Water is wet. [7]", 5);
        REQUIRE(p.has_flag(CitationFlag::OutOfRangeDoc));
        REQUIRE(p.clean_text == "Water is wet.");
    }
    SECTION("missing citation") {
        const ParsedAnswer p = parse_citations("No cite here.", 5);
        REQUIRE(p.has_flag(CitationFlag::MissingCitation));
        REQUIRE(p.sentences.size() == 1);
        REQUIRE(p.sentences[0].citations.empty());
    }
    SECTION("malformed tag stays in the text") {
        const ParsedAnswer p = parse_citations("See [ref] maybe.", 5);
        REQUIRE(p.has_flag(CitationFlag::MalformedTag));
        REQUIRE(p.clean_text == "See [ref] maybe.");
    }
    SECTION("mid-sentence tag attaches to the enclosing sentence") {
        const ParsedAnswer p =
            parse_citations("First [2] half done. Second part. [1]", 3);
        REQUIRE(p.sentences.size() == 2);
        REQUIRE(p.sentences[0].citations == std::set<int>{2});
        REQUIRE(p.sentences[1].citations == std::set<int>{1});
    }
    SECTION("negative num_docs rejected") {
        REQUIRE_THROWS_AS(parse_citations("x", -1), CitationError);
    }
}
