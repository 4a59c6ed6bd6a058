// Evaluation metrics: entailment oracles, citation precision/recall/F1,
// agreement, missing-citation statistics, length-binned reporting, and the
// remote oracle HTTP client against an in-process stub server.

#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <random>
#include <thread>

#include <httplib.h>

#include "mirage/eval.hpp"
#include "mirage/eval_remote.hpp"

using namespace mirage;

namespace {

// Wraps an oracle and counts judge calls.
class CountingOracle final : public EntailmentOracle {
public:
    explicit CountingOracle(std::shared_ptr<EntailmentOracle> inner)
        : inner_(std::move(inner)) {}
    bool judge(const std::string& p, const std::string& h) override {
        ++calls;
        return inner_->judge(p, h);
    }
    std::string id() const override { return "counting"; }
    int calls = 0;

private:
    std::shared_ptr<EntailmentOracle> inner_;
};

// Direct transcription of the scoring definitions, used as the reference
// implementation for the randomized comparison.
int naive_recall(const std::string& sentence, const std::set<int>& cited,
                 const std::map<int, std::string>& docs,
                 EntailmentOracle& oracle) {
    if (cited.empty()) return 0;
    return oracle.judge(concat_docs(cited, docs), sentence) ? 1 : 0;
}

double naive_precision(const std::string& sentence,
                       const std::set<int>& cited,
                       const std::map<int, std::string>& docs,
                       EntailmentOracle& oracle, bool strict) {
    if (cited.empty()) return 0.0;
    if (!oracle.judge(concat_docs(cited, docs), sentence)) return 0.0;
    if (cited.size() == 1) return 1.0;
    int precise = 0;
    for (int d : cited) {
        const bool alone =
            !strict && oracle.judge(concat_docs({d}, docs), sentence);
        std::set<int> rest = cited;
        rest.erase(d);
        const bool breaks = !oracle.judge(concat_docs(rest, docs), sentence);
        if (alone || breaks) ++precise;
    }
    return static_cast<double>(precise) / static_cast<double>(cited.size());
}

}  // namespace

TEST_CASE("lexical oracle normalizes case and punctuation", "[eval]") {
    LexicalOracle o;
    REQUIRE(o.judge("The Cat sat on the mat.", "cat MAT"));
    REQUIRE_FALSE(o.judge("the cat sat", "dog"));
    REQUIRE(o.judge("anything", ""));  // empty hypothesis is entailed
    REQUIRE(LexicalOracle::normalize("A b-c 7!") ==
            std::vector<std::string>{"a", "b", "c", "7"});
    REQUIRE(o.id() == "lexical");
}

TEST_CASE("gold oracle is an exact fixture table", "[eval]") {
    GoldOracle o({{{"p", "h"}, true}});
    REQUIRE(o.judge("p", "h"));
    REQUIRE_THROWS_AS(o.judge("p", "other"), EvalError);
}

TEST_CASE("caching oracle memoizes judgments", "[eval]") {
    auto counting =
        std::make_shared<CountingOracle>(std::make_shared<LexicalOracle>());
    CachingOracle cached(counting);
    REQUIRE(cached.judge("a b c", "b"));
    REQUIRE(cached.judge("a b c", "b"));
    REQUIRE(cached.judge("a b c", "b"));
    REQUIRE(counting->calls == 1);
    REQUIRE(cached.id() == "counting");
}

TEST_CASE("agreement scores predicted against gold tuples", "[eval]") {
    std::map<std::pair<std::string, int>, bool> gold{
        {{"e1", 1}, true}, {{"e1", 2}, false}, {{"e2", 1}, true},
        {{"e2", 2}, true}};
    std::map<std::pair<std::string, int>, bool> pred{
        {{"e1", 1}, true}, {{"e1", 2}, true}, {{"e2", 1}, true}};
    // e1/1 match, e1/2 mismatch, e2/1 match, e2/2 missing => predicted false
    REQUIRE_THAT(agreement(pred, gold),
                 Catch::Matchers::WithinAbs(50.0, 1e-9));
    REQUIRE_THROWS_AS(agreement(pred, {}), EvalError);
}

TEST_CASE("doc concatenation is ascending and validated", "[eval]") {
    std::map<int, std::string> docs{{1, "one"}, {2, "two"}, {3, "three"}};
    REQUIRE(concat_docs({3, 1}, docs) == "one\nthree");
    REQUIRE(concat_docs({2}, docs) == "two");
    REQUIRE_THROWS_AS(concat_docs({9}, docs), EvalError);
}

TEST_CASE("F1 of percentages matches reference values", "[eval]") {
    REQUIRE_THAT(f1(41.4, 24.3), Catch::Matchers::WithinAbs(30.6, 0.05));
    REQUIRE_THAT(f1(44.7, 46.5), Catch::Matchers::WithinAbs(45.6, 0.05));
    REQUIRE(f1(0.0, 0.0) == 0.0);
    REQUIRE_THROWS_AS(f1(-1.0, 50.0), EvalError);
    REQUIRE_THROWS_AS(f1(50.0, 101.0), EvalError);
}

TEST_CASE("citation recall and precision follow the scoring rules",
          "[eval]") {
    std::map<int, std::string> docs{{1, "cats purr"}, {2, "dogs bark"}};
    LexicalOracle oracle;

    // zero rule: unattributed sentences score zero
    REQUIRE(citation_recall("cats purr", {}, docs, oracle) == 0);
    REQUIRE(citation_precision("cats purr", {}, docs, oracle) == 0.0);

    REQUIRE(citation_recall("cats purr", {1}, docs, oracle) == 1);
    REQUIRE(citation_recall("cats bark", {1}, docs, oracle) == 0);
    REQUIRE(citation_recall("cats bark", {1, 2}, docs, oracle) == 1);

    // recall zero forces precision zero
    REQUIRE(citation_precision("hamsters", {1, 2}, docs, oracle) == 0.0);
    // a singleton citation with recall is fully precise
    REQUIRE(citation_precision("cats", {1}, docs, oracle) == 1.0);
    // doc 2 contributes nothing: doc 1 alone entails, doc 2 alone does not
    // and removing it keeps entailment
    REQUIRE_THAT(citation_precision("cats purr", {1, 2}, docs, oracle),
                 Catch::Matchers::WithinAbs(0.5, 1e-12));
    // strict removal drops the doc-alone disjunct: doc 1 still counts
    // because removing it breaks entailment
    REQUIRE_THAT(
        citation_precision("cats purr", {1, 2}, docs, oracle, true),
        Catch::Matchers::WithinAbs(0.5, 1e-12));
    // both docs needed: each removal breaks entailment
    REQUIRE_THAT(citation_precision("cats bark", {1, 2}, docs, oracle),
                 Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("citation metrics match a brute-force evaluator on random cases",
          "[eval]") {
    std::mt19937_64 rng(29);
    const std::vector<std::string> words{"ant", "bee", "cow", "dog",
                                         "elk", "fox", "gnu", "hen"};
    std::uniform_int_distribution<int> ndocs(1, 5);
    std::uniform_int_distribution<int> nwords(1, 4);
    std::uniform_int_distribution<std::size_t> w(0, words.size() - 1);
    std::bernoulli_distribution strict(0.5);

    for (int iter = 0; iter < 200; ++iter) {
        std::map<int, std::string> docs;
        const int k = ndocs(rng);
        for (int d = 1; d <= k; ++d) {
            std::string text;
            const int n = nwords(rng);
            for (int i = 0; i < n; ++i) {
                if (!text.empty()) text += ' ';
                text += words[w(rng)];
            }
            docs[d] = text;
        }
        std::string sentence;
        const int sn = nwords(rng);
        for (int i = 0; i < sn; ++i) {
            if (!sentence.empty()) sentence += ' ';
            sentence += words[w(rng)];
        }
        std::set<int> cited;
        std::uniform_int_distribution<int> ncite(0, std::min(4, k));
        std::uniform_int_distribution<int> pick(1, k);
        const int c = ncite(rng);
        while (static_cast<int>(cited.size()) < c) cited.insert(pick(rng));

        LexicalOracle a, b;
        const bool s = strict(rng);
        REQUIRE(citation_recall(sentence, cited, docs, a) ==
                naive_recall(sentence, cited, docs, b));
        REQUIRE(citation_precision(sentence, cited, docs, a, s) ==
                naive_precision(sentence, cited, docs, b, s));
    }
}

TEST_CASE("corpus citation scores macro-average and report F1", "[eval]") {
    std::vector<SentenceScore> sentences{{1.0, 1.0}, {0.5, 1.0}, {0.0, 0.0}};
    const CorpusCitationScores s = corpus_citation_scores(sentences);
    REQUIRE_THAT(s.precision, Catch::Matchers::WithinAbs(50.0, 1e-9));
    REQUIRE_THAT(s.recall,
                 Catch::Matchers::WithinAbs(200.0 / 3.0, 1e-9));
    REQUIRE_THAT(s.f1, Catch::Matchers::WithinAbs(
                           f1(s.precision, s.recall), 1e-12));
    REQUIRE_THROWS_AS(corpus_citation_scores({}), EvalError);
}

TEST_CASE("missing-citation statistics count sentences and answers",
          "[eval]") {
    // 4 sentences across 2 answers, 2 unattributed, both in one answer
    const MissingCitationStats s = missing_citation_stats(
        std::vector<std::vector<bool>>{{true, false, false}, {true}});
    REQUIRE_THAT(s.sentence_pct, Catch::Matchers::WithinAbs(50.0, 1e-9));
    REQUIRE_THAT(s.answer_pct, Catch::Matchers::WithinAbs(50.0, 1e-9));

    const MissingCitationStats all = missing_citation_stats(
        std::vector<std::vector<bool>>{{false}, {false}});
    REQUIRE(all.sentence_pct == 100.0);
    REQUIRE(all.answer_pct == 100.0);

    const MissingCitationStats none = missing_citation_stats(
        std::vector<std::vector<bool>>{{true, true}});
    REQUIRE(none.sentence_pct == 0.0);
    REQUIRE(none.answer_pct == 0.0);

    REQUIRE_THROWS_AS(
        missing_citation_stats(std::vector<std::vector<bool>>{}), EvalError);

    // parsed-answer overload counts sentences without valid citations
    ParsedAnswer a;
    a.sentences.resize(2);
    a.sentences[0].citations = {1};
    const MissingCitationStats p =
        missing_citation_stats(std::vector<ParsedAnswer>{a});
    REQUIRE(p.sentence_pct == 50.0);
    REQUIRE(p.answer_pct == 100.0);
}

TEST_CASE("length-binned report respects half-open bins", "[eval]") {
    std::vector<SentenceLengthEntry> entries{
        {5, 1.0, 1.0, true},    // bin [0,10)
        {10, 0.5, 0.0, false},  // bin [10,20): edge goes right
        {19, 0.5, 1.0, true},
        {45, 0.0, 0.0, false},  // tail bin
    };
    const auto rows = length_binned_report(entries, {10, 20, 30, 40});
    REQUIRE(rows.size() == 3);  // [20,30) and [30,40) are empty and omitted
    REQUIRE(rows[0].lo == 0);
    REQUIRE(rows[0].hi == 10);
    REQUIRE(rows[0].count == 1);
    REQUIRE(rows[1].lo == 10);
    REQUIRE(rows[1].count == 2);
    REQUIRE_THAT(rows[1].mean_precision,
                 Catch::Matchers::WithinAbs(0.5, 1e-12));
    REQUIRE_THAT(rows[1].cited_pct, Catch::Matchers::WithinAbs(50.0, 1e-9));
    REQUIRE(rows[2].hi == SIZE_MAX);
    REQUIRE(rows[2].count == 1);

    REQUIRE_THROWS_AS(length_binned_report(entries, {10, 10}), EvalError);
}

TEST_CASE("remote oracle speaks the wire protocol", "[eval][remote]") {
    httplib::Server server;
    std::atomic<int> requests{0};
    std::atomic<int> fail_first{0};
    server.Post("/judge", [&](const httplib::Request& req,
                              httplib::Response& res) {
        ++requests;
        if (fail_first.fetch_sub(1) > 0) {
            res.status = 500;
            return;
        }
        const auto j = nlohmann::json::parse(req.body);
        const bool entailed = j.at("premise").get<std::string>().find(
                                  j.at("hypothesis").get<std::string>()) !=
                              std::string::npos;
        res.set_content(nlohmann::json{{"entailed", entailed}}.dump(),
                        "application/json");
    });
    server.Post("/reject", [&](const httplib::Request&,
                               httplib::Response& res) {
        ++requests;
        res.status = 422;
    });
    server.Post("/garbage", [](const httplib::Request&,
                               httplib::Response& res) {
        res.set_content("not json", "application/json");
    });

    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    // stop and join even when an assertion failure unwinds the test
    struct Guard {
        httplib::Server& s;
        std::thread t;
        ~Guard() {
            s.stop();
            t.join();
        }
    } guard{server, std::thread([&] { server.listen_after_bind(); })};
    server.wait_until_ready();
    const std::string base = "http://127.0.0.1:" + std::to_string(port);

    SECTION("success and caching") {
        RemoteOracle o(base + "/judge");
        REQUIRE(o.judge("water is wet", "wet"));
        REQUIRE_FALSE(o.judge("water is wet", "dry"));
        const int before = requests;
        REQUIRE(o.judge("water is wet", "wet"));  // cached
        REQUIRE(requests == before);
    }
    SECTION("transient failures are retried with backoff") {
        fail_first = 2;
        RemoteOracle o(base + "/judge", 5.0, 3,
                       std::chrono::milliseconds(1));
        REQUIRE(o.judge("abc", "b"));
        REQUIRE(requests == 3);  // two 500s then success
    }
    SECTION("retries exhaust into OracleUnavailable") {
        fail_first = 100;
        RemoteOracle o(base + "/judge", 5.0, 2,
                       std::chrono::milliseconds(1));
        REQUIRE_THROWS_AS(o.judge("abc", "b"), OracleUnavailable);
        REQUIRE(requests == 3);  // initial try plus two retries
    }
    SECTION("4xx responses are fatal, not retried") {
        RemoteOracle o(base + "/reject", 5.0, 3,
                       std::chrono::milliseconds(1));
        REQUIRE_THROWS_AS(o.judge("abc", "b"), EvalError);
        REQUIRE(requests == 1);
    }
    SECTION("malformed response body is fatal") {
        RemoteOracle o(base + "/garbage", 5.0, 3,
                       std::chrono::milliseconds(1));
        REQUIRE_THROWS_AS(o.judge("abc", "b"), EvalError);
    }
}

TEST_CASE("remote oracle rejects unusable endpoints", "[eval][remote]") {
    REQUIRE_THROWS_AS(RemoteOracle("https://secure.example/judge"),
                      EvalError);
    RemoteOracle unreachable("http://127.0.0.1:1/judge", 0.2, 1,
                             std::chrono::milliseconds(1));
    REQUIRE_THROWS_AS(unreachable.judge("a", "b"), OracleUnavailable);
}
