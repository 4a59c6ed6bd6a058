// Acceptance suite: one pass/fail line per criterion, exit code equals the
// number of failed criteria. Pass the CLI binary path as argv[1]; the
// determinism criterion shells out to it.
//
// The attribution-quality criteria depend on a learnability gate: the bundled
// model trained with the default recipe must reach at least 90% held-out
// answer accuracy. If the gate fails, those criteria are reported as VOID and
// counted as failures.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mirage/citation.hpp"
#include "mirage/cti.hpp"
#include "mirage/eval.hpp"
#include "mirage/kv.hpp"
#include "mirage/model.hpp"
#include "mirage/pipeline.hpp"
#include "mirage/prompt.hpp"
#include "mirage/synth.hpp"
#include "mirage/train.hpp"

namespace fs = std::filesystem;
using namespace mirage;

namespace {

int g_failures = 0;

void report(int criterion, bool ok, const std::string& what,
            const std::string& detail) {
    std::cout << "criterion " << criterion << ": "
              << (ok ? "PASS" : "FAIL") << " - " << what;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << std::endl;
    if (!ok) ++g_failures;
}

void report_void(int criterion, const std::string& what) {
    std::cout << "criterion " << criterion << ": VOID - " << what
              << " (learnability gate failed; result not meaningful)"
              << std::endl;
    ++g_failures;
}

std::string pct(double frac) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(1);
    os << frac * 100.0 << "%";
    return os.str();
}

// KL(P || Q) through the per-step scorer.
double kl(const std::vector<double>& p, const std::vector<double>& q) {
    GenerationRecord rec;
    rec.answer_ids = {0};
    rec.ctx = {p};
    rec.no_ctx = {q};
    return kl_scores(rec)[0];
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool run(const std::string& cmd) { return std::system(cmd.c_str()) == 0; }

// ---------------------------------------------------------------------------
// 1. analytic input gradients vs central finite differences

void criterion_1() {
    ModelConfig mc;
    mc.vocab = 64;
    mc.dim = 16;
    mc.layers = 2;
    mc.heads = 2;
    mc.ctx = 32;
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> len(3, 10);
    std::uniform_int_distribution<int> tokd(0, mc.vocab - 1);
    double worst = 0.0;
    for (int c = 0; c < 20; ++c) {
        Parameters<float> p = init_params<float>(mc, 100 + c, 0.05);
        std::vector<int> prefix(static_cast<std::size_t>(len(rng)));
        for (int& t : prefix) t = tokd(rng);
        GradientTarget target;
        target.target = tokd(rng);
        if (c % 3 == 0) {
            target.mode = GradientMode::prob_only;
        } else {
            int foil = tokd(rng);
            while (foil == target.target) foil = tokd(rng);
            target.foil = foil;
            target.mode = GradientMode::prob_diff;
        }
        worst = std::max(worst, finite_diff_check(p, prefix, target, 1e-4));
    }
    std::ostringstream d;
    d << "20 cases, max rel err " << worst;
    report(1, worst < 1e-4, "input gradients match finite differences",
           d.str());
}

// ---------------------------------------------------------------------------
// 2. per-step divergence scores

void criterion_2() {
    bool ok = true;
    std::string why;
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<int> dim(2, 20);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int c = 0; c < 1000 && ok; ++c) {
        const int n = dim(rng);
        std::vector<double> p(static_cast<std::size_t>(n)),
            q(static_cast<std::size_t>(n));
        double sp = 0.0, sq = 0.0;
        for (int i = 0; i < n; ++i) {
            p[static_cast<std::size_t>(i)] = std::exp(3.0 * u(rng));
            q[static_cast<std::size_t>(i)] = std::exp(3.0 * u(rng));
            sp += p[static_cast<std::size_t>(i)];
            sq += q[static_cast<std::size_t>(i)];
        }
        for (int i = 0; i < n; ++i) {
            p[static_cast<std::size_t>(i)] /= sp;
            q[static_cast<std::size_t>(i)] /= sq;
        }
        if (kl(p, q) < -1e-12) {
            ok = false;
            why = "negative score on fuzz case " + std::to_string(c);
        }
        if (std::abs(kl(p, p)) >= 1e-12) {
            ok = false;
            why = "nonzero score for identical distributions";
        }
    }
    if (ok && std::abs(kl({0.9, 0.1}, {0.5, 0.5}) - 0.36806) > 1e-4) {
        ok = false;
        why = "hand value [0.9,0.1] vs [0.5,0.5]";
    }
    if (ok && std::abs(kl({1.0, 0.0}, {0.5, 0.5}) - std::log(2.0)) > 1e-4) {
        ok = false;
        why = "hand value [1,0] vs [0.5,0.5]";
    }
    report(2, ok, "divergence scores: fuzz and hand-worked values",
           ok ? "1000 fuzz pairs + 2 hand values" : why);
}

// ---------------------------------------------------------------------------
// 3. example-level selector and threshold calibration

double sweep_oracle(const std::vector<CalibrationPoint>& data) {
    std::vector<double> uniq;
    for (const auto& p : data) uniq.push_back(p.score);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<double> cands;
    cands.push_back(uniq.front());
    for (std::size_t i = 0; i + 1 < uniq.size(); ++i) {
        cands.push_back(0.5 * (uniq[i] + uniq[i + 1]));
    }
    cands.push_back(uniq.back() + 1.0);
    double best = cands.front();
    std::size_t best_n = 0;
    bool first = true;
    for (double t : cands) {
        std::size_t n = 0;
        for (const auto& p : data) {
            if ((p.score >= t) == p.gold) ++n;
        }
        if (first || n > best_n) {
            best = t;
            best_n = n;
            first = false;
        }
    }
    return best;
}

void criterion_3() {
    bool ok = true;
    std::string why;

    const SensitivityProfile prof = select_context_sensitive(
        {1.0, 1.0, 1.0, 7.0}, CtiSelector::example_level());
    const double expect = 2.5 + std::sqrt(6.75);
    if (std::abs(prof.threshold - expect) > 1e-9 ||
        prof.selected != std::vector<std::size_t>{3}) {
        ok = false;
        why = "[1,1,1,7] selector fixture";
    }

    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> npts(4, 30);
    std::uniform_int_distribution<int> sc(0, 9);
    std::bernoulli_distribution gold(0.5);
    for (int c = 0; c < 100 && ok; ++c) {
        std::vector<CalibrationPoint> data;
        bool pos = false, neg = false;
        const int n = npts(rng);
        for (int i = 0; i < n; ++i) {
            CalibrationPoint p{sc(rng) / 2.0, gold(rng)};
            (p.gold ? pos : neg) = true;
            data.push_back(p);
        }
        if (!pos) data.push_back({5.0, true});
        if (!neg) data.push_back({0.0, false});
        if (calibrate_threshold(data) != sweep_oracle(data)) {
            ok = false;
            why = "calibration mismatch on random set " + std::to_string(c);
        }
    }
    std::ostringstream d;
    d << "threshold " << prof.threshold << " selects {3}; 100 random "
      << "calibrations match exhaustive sweep";
    report(3, ok, "selector fixture and calibration sweep",
           ok ? d.str() : why);
}

// ---------------------------------------------------------------------------
// 4. F1 reference values

void criterion_4() {
    const double a = f1(41.4, 24.3);
    const double b = f1(44.7, 46.5);
    const bool ok = std::abs(a - 30.6) <= 0.05 && std::abs(b - 45.6) <= 0.05;
    std::ostringstream d;
    d << "f1(41.4,24.3)=" << a << ", f1(44.7,46.5)=" << b;
    report(4, ok, "F1 reference values", d.str());
}

// ---------------------------------------------------------------------------
// 5. citation precision/recall vs a brute-force evaluator

int naive_recall(const std::string& s, const std::set<int>& c,
                 const std::map<int, std::string>& docs,
                 EntailmentOracle& o) {
    if (c.empty()) return 0;
    return o.judge(concat_docs(c, docs), s) ? 1 : 0;
}

double naive_precision(const std::string& s, const std::set<int>& c,
                       const std::map<int, std::string>& docs,
                       EntailmentOracle& o) {
    if (c.empty()) return 0.0;
    if (!o.judge(concat_docs(c, docs), s)) return 0.0;
    if (c.size() == 1) return 1.0;
    int precise = 0;
    for (int d : c) {
        const bool alone = o.judge(concat_docs({d}, docs), s);
        std::set<int> rest = c;
        rest.erase(d);
        const bool breaks = !o.judge(concat_docs(rest, docs), s);
        if (alone || breaks) ++precise;
    }
    return static_cast<double>(precise) / static_cast<double>(c.size());
}

void criterion_5() {
    bool ok = true;
    std::string why;
    std::mt19937_64 rng(19);
    const std::vector<std::string> words{"ant", "bee", "cow", "dog",
                                         "elk", "fox", "gnu", "hen"};
    std::uniform_int_distribution<int> ndocs(1, 5);
    std::uniform_int_distribution<int> nw(1, 4);
    std::uniform_int_distribution<std::size_t> w(0, words.size() - 1);
    for (int c = 0; c < 200 && ok; ++c) {
        std::map<int, std::string> docs;
        const int k = ndocs(rng);
        for (int d = 1; d <= k; ++d) {
            std::string t;
            for (int i = nw(rng); i > 0; --i) {
                if (!t.empty()) t += ' ';
                t += words[w(rng)];
            }
            docs[d] = t;
        }
        std::string sentence;
        for (int i = nw(rng); i > 0; --i) {
            if (!sentence.empty()) sentence += ' ';
            sentence += words[w(rng)];
        }
        std::set<int> cited;
        std::uniform_int_distribution<int> nc(0, std::min(4, k));
        std::uniform_int_distribution<int> pick(1, k);
        for (int want = nc(rng); static_cast<int>(cited.size()) < want;) {
            cited.insert(pick(rng));
        }
        LexicalOracle a, b;
        if (citation_recall(sentence, cited, docs, a) !=
                naive_recall(sentence, cited, docs, b) ||
            citation_precision(sentence, cited, docs, a) !=
                naive_precision(sentence, cited, docs, b)) {
            ok = false;
            why = "mismatch on random instance " + std::to_string(c);
        }
    }
    report(5, ok, "citation scores match brute-force evaluation",
           ok ? "200 randomized instances" : why);
}

// ---------------------------------------------------------------------------
// 6/7. attribution quality on the synthetic task, behind the gate

struct ExampleRates {
    double cti = 0.0;   // answers with a gold token selected
    double cci = 0.0;   // answers with a selected token inside the gold doc
    double sent = 0.0;  // answers whose sentence citations include the gold doc
};

ExampleRates measure_rates(const Parameters<float>& params,
                           const std::vector<SynthExample>& examples,
                           const PromptTemplate& tmpl, const Tokenizer& tok,
                           double top_pct) {
    PipelineOptions opts;
    opts.filter = TopPct{top_pct};
    std::size_t cti = 0, cci = 0, sent = 0;
    for (const SynthExample& ex : examples) {
        const AttributionResult res = attribute_example(
            params, tok, tmpl, ex.docs, ex.query, ex.answer, opts);
        const GoldLabels gold = gold_labels(ex, tok);
        bool gold_token = false;
        for (std::size_t i : res.profile.selected) {
            if (i < gold.token_is_gold.size() && gold.token_is_gold[i]) {
                gold_token = true;
            }
        }
        if (gold_token) ++cti;
        bool gold_doc = false;
        for (const AttributionPair& p : res.pairs) {
            if (p.doc_id == ex.gold_doc) gold_doc = true;
        }
        if (gold_doc) ++cci;
        if (answer_doc_union(res).count(ex.gold_doc)) ++sent;
    }
    const double n = static_cast<double>(examples.size());
    return {static_cast<double>(cti) / n, static_cast<double>(cci) / n,
            static_cast<double>(sent) / n};
}

void criteria_6_and_7(const std::optional<TrainResult>& trained,
                      double gate_acc, const SynthDataset& ds,
                      const PromptTemplate& tmpl, const Tokenizer& tok) {
    if (!trained) {
        report_void(6, "attribution quality on held-out examples");
        report_void(7, "citation stability across selection budgets");
        return;
    }
    const ExampleRates r5 =
        measure_rates(trained->params, ds.test, tmpl, tok, 5.0);
    const bool ok6 = r5.cti >= 0.90 && r5.cci >= 0.80 && r5.sent >= 0.80;
    std::ostringstream d6;
    d6 << "gate " << pct(gate_acc) << "; over " << ds.test.size()
       << " held-out: gold-token " << pct(r5.cti) << " (need >=90%), "
       << "gold-doc token " << pct(r5.cci) << " (need >=80%), "
       << "sentence citation " << pct(r5.sent) << " (need >=80%)";
    report(6, ok6, "attribution quality on held-out examples", d6.str());

    double lo = r5.sent, hi = r5.sent;
    std::ostringstream d7;
    d7 << "sentence rate at top-%: 5->" << pct(r5.sent);
    for (double p : {3.0, 10.0, 20.0}) {
        const ExampleRates r =
            measure_rates(trained->params, ds.test, tmpl, tok, p);
        lo = std::min(lo, r.sent);
        hi = std::max(hi, r.sent);
        d7 << ", " << p << "->" << pct(r.sent);
    }
    const double spread = (hi - lo) * 100.0;
    d7 << "; spread " << spread << "pp (need <10)";
    report(7, spread < 10.0, "citation stability across selection budgets",
           d7.str());
}

// ---------------------------------------------------------------------------
// 8. document-order restoration

void criterion_8() {
    const std::vector<RetrievedDoc> docs{
        {1, "", "alpha"}, {2, "", "beta"}, {3, "", "gamma"}};
    auto gen = [](const std::vector<RetrievedDoc>& d) {
        std::string out;
        for (const auto& doc : d) {
            if (!out.empty()) out += ' ';
            out += doc.text;
        }
        return out;
    };
    const RestoreResult hit = restore_order(docs, "gamma alpha beta", gen,
                                            200, 7);
    const bool ok_hit = hit.found &&
                        hit.order == std::vector<int>{3, 1, 2} &&
                        hit.shuffles_used >= 1 && hit.shuffles_used <= 200;
    const RestoreResult miss = restore_order(docs, "delta", gen, 200, 7);
    const bool ok_miss = !miss.found && miss.shuffles_used == 200;
    std::ostringstream d;
    d << "unique order found after " << hit.shuffles_used
      << " shuffles; unreachable answer exhausts exactly 200";
    report(8, ok_hit && ok_miss, "document-order restoration", d.str());
}

// ---------------------------------------------------------------------------
// 9. determinism of the CLI pipeline

void criterion_9(const char* cli) {
    if (cli == nullptr) {
        report(9, false, "CLI determinism",
               "no CLI binary path given as argv[1]");
        return;
    }
    const fs::path dir =
        fs::temp_directory_path() / "mirage_acceptance_cli";
    std::error_code ec;
    fs::remove_all(dir, ec);
    fs::create_directories(dir);
    const std::string bin = std::string("\"") + cli + "\"";
    const std::string d = dir.string();

    bool ok = true;
    std::string why;
    if (!run(bin + " synth --out-dir " + d +
             " --n-train 60 --n-val 10 --n-test 10 --seed 3 --quiet")) {
        ok = false;
        why = "synth failed";
    }
    for (int i = 1; ok && i <= 2; ++i) {
        const std::string n = std::to_string(i);
        if (!run(bin + " train --corpus " + d + "/train.jsonl --model-out " +
                 d + "/m" + n + ".bin --tokenizer-out " + d + "/m" + n +
                 ".tok.json --repeat-epochs 3 --probe-epochs 2 --seed 3 " +
                 "--quiet > " + d + "/train" + n + ".json")) {
            ok = false;
            why = "train run " + n + " failed";
        }
    }
    if (ok && read_file(dir / "m1.bin") != read_file(dir / "m2.bin")) {
        ok = false;
        why = "model files differ between identical training runs";
    }
    for (int i = 1; ok && i <= 2; ++i) {
        const std::string n = std::to_string(i);
        if (!run(bin + " attribute --model " + d + "/m1.bin --tokenizer " +
                 d + "/m1.tok.json --corpus " + d + "/val.jsonl --out " + d +
                 "/a" + n + ".json --seed 3 --quiet")) {
            ok = false;
            why = "attribute run " + n + " failed";
        }
    }
    if (ok) {
        const std::string a1 = read_file(dir / "a1.json");
        if (a1.empty() || a1 != read_file(dir / "a2.json")) {
            ok = false;
            why = "attribution outputs differ between identical runs";
        }
    }
    fs::remove_all(dir, ec);
    report(9, ok, "CLI determinism",
           ok ? "byte-identical model files and attribution JSON" : why);
}

// ---------------------------------------------------------------------------
// 10. citation parsing fixtures

void criterion_10() {
    bool ok = true;
    std::string why;

    const ParsedAnswer a = parse_citations("The sky is blue. [1][3]", 5);
    if (a.clean_text != "The sky is blue." || a.sentences.size() != 1 ||
        a.sentences[0].citations != std::set<int>{1, 3} ||
        !a.sentences[0].flags.empty()) {
        ok = false;
        why = "well-formed two-citation fixture";
    }
    if (ok && !parse_citations("Water is wet. [7]", 5).has_flag(
                  CitationFlag::OutOfRangeDoc)) {
        ok = false;
        why = "out-of-range citation not flagged";
    }
    if (ok && !parse_citations("No cite here.", 5).has_flag(
                  CitationFlag::MissingCitation)) {
        ok = false;
        why = "missing citation not flagged";
    }
    if (ok) {
        const MissingCitationStats s = missing_citation_stats(
            std::vector<std::vector<bool>>{{true, false, true, false}});
        if (std::abs(s.sentence_pct - 50.0) > 1e-9 ||
            std::abs(s.answer_pct - 100.0) > 1e-9) {
            ok = false;
            why = "missing-citation statistics fixture";
        }
    }
    report(10, ok, "citation parsing and missing-citation statistics",
           ok ? "3 parse fixtures + stats fixture" : why);
}

}  // namespace

int main(int argc, char** argv) {
    std::cout.setf(std::ios::fixed);
    std::cout.precision(4);

    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();

    // one full training run, shared by the gated criteria
    const PromptTemplate tmpl = templates::minimal();
    SynthConfig sc;
    sc.seed = 42;
    const SynthDataset ds = gen_kv_dataset(sc);
    const WordTokenizer tok = fit_kv_tokenizer(ds, tmpl);
    KvTrainConfig kc;
    kc.seed = 1;
    std::cout << "training bundled model (" << ds.train.size()
              << " examples, " << kc.total_epochs() << " epochs)..."
              << std::endl;
    TrainResult trained = train_kv_model(ds.train, tmpl, tok, kc);
    const double gate_acc =
        kv_answer_accuracy(trained.params, ds.val, tmpl, tok);
    const bool gate = gate_acc >= 0.90;
    std::cout << "learnability gate: " << (gate ? "PASS" : "FAIL")
              << " - held-out answer accuracy " << pct(gate_acc)
              << " (need >=90%)" << std::endl;

    std::optional<TrainResult> maybe;
    if (gate) maybe = std::move(trained);
    criteria_6_and_7(maybe, gate_acc, ds, tmpl, tok);

    criterion_8();
    criterion_9(argc > 1 ? argv[1] : nullptr);
    criterion_10();

    std::cout << (g_failures == 0 ? "all criteria passed"
                                  : std::to_string(g_failures) +
                                        " criteria failed")
              << std::endl;
    return g_failures == 0 ? 0 : 1;
}
