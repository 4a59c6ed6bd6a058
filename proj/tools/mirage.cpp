// mirage — command-line front end: training, generation, attribution,
// calibration, evaluation, document-order restoration, and report emission.
//
// Subcommands: train, generate, attribute, calibrate, evaluate,
// restore-order, report, synth. Global flags: --config, --seed, --threads,
// --quiet. Config files are flat key=value text (TOML-compatible syntax),
// overridden by flags. MIRAGE_ORACLE_URL supplies the remote entailment
// endpoint. Every output artifact embeds schema version, the effective
// config, and seeds; reruns with identical inputs are byte-identical.

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mirage/eval_remote.hpp"
#include "mirage/mirage.hpp"
#include "mirage/report.hpp"

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

struct GlobalOptions {
    std::uint64_t seed = 0;
    int threads = 1;
    bool quiet = false;
};

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open output file: " + path);
    }
    out << text;
    if (!out) {
        throw std::runtime_error("write failed: " + path);
    }
}

void emit_json(const ordered_json& doc, const std::string& out_path,
               const GlobalOptions& g) {
    const std::string text = doc.dump(2) + "\n";
    if (out_path.empty() || out_path == "-") {
        std::cout << text;
    } else {
        write_text_file(out_path, text);
        if (!g.quiet) {
            std::cerr << "wrote " << out_path << "\n";
        }
    }
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open file for checksum: " + path);
    }
    std::uint64_t h = 1469598103934665603ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(v));
    return buf;
}

mirage::CtiSelector parse_selector(const std::string& spec) {
    if (spec == "example") {
        return mirage::CtiSelector::example_level();
    }
    const auto colon = spec.find(':');
    if (colon != std::string::npos) {
        const std::string kind = spec.substr(0, colon);
        const double t = std::stod(spec.substr(colon + 1));
        if (kind == "fixed") return mirage::CtiSelector::fixed(t);
        if (kind == "calibrated") return mirage::CtiSelector::calibrated(t);
    }
    throw CLI::ValidationError(
        "selector", "expected example, fixed:<t>, or calibrated:<t>");
}

mirage::CciFilter parse_filter(const std::string& spec) {
    const auto colon = spec.find(':');
    if (colon != std::string::npos) {
        const std::string kind = spec.substr(0, colon);
        const std::string arg = spec.substr(colon + 1);
        if (kind == "topk") {
            return mirage::TopK{static_cast<std::size_t>(std::stoul(arg))};
        }
        if (kind == "toppct") {
            return mirage::TopPct{std::stod(arg)};
        }
    }
    throw CLI::ValidationError("filter", "expected topk:<k> or toppct:<p>");
}

std::shared_ptr<mirage::EntailmentOracle> make_oracle(
    const std::string& spec) {
    if (spec == "lexical") {
        return std::make_shared<mirage::LexicalOracle>();
    }
    if (spec == "remote") {
        const char* url = std::getenv("MIRAGE_ORACLE_URL");
        if (!url || !*url) {
            throw std::runtime_error(
                "oracle 'remote' needs MIRAGE_ORACLE_URL to be set");
        }
        return std::make_shared<mirage::RemoteOracle>(url);
    }
    throw std::runtime_error("unknown oracle: " + spec +
                             " (expected lexical or remote)");
}

mirage::SynthExample to_synth(const mirage::CorpusExample& ex) {
    mirage::SynthExample s;
    s.id = ex.id;
    s.docs = ex.docs;
    s.query = ex.query;
    s.answer = ex.answer.value_or("");
    if (ex.gold_doc_labels) {
        for (std::size_t i = 0; i < ex.gold_doc_labels->size(); ++i) {
            if ((*ex.gold_doc_labels)[i]) {
                s.gold_doc = static_cast<int>(i) + 1;
                break;
            }
        }
    }
    return s;
}

struct LoadedModel {
    mirage::Parameters<float> params;
    std::unique_ptr<mirage::Tokenizer> tok;
};

LoadedModel load_model_pair(const std::string& model_path,
                            std::string tok_path) {
    if (tok_path.empty()) {
        tok_path = model_path + ".tok.json";
    }
    return {mirage::load_model(model_path),
            mirage::load_tokenizer(tok_path)};
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::string out_dir = ".";
    std::size_t n_train = 2000, n_val = 200, n_test = 200;
    int k_docs = 5, pairs_per_doc = 3;
};

int cmd_synth(const GlobalOptions& g, const SynthArgs& a) {
    mirage::SynthConfig sc;
    sc.seed = g.seed;
    sc.n_train = a.n_train;
    sc.n_val = a.n_val;
    sc.n_test = a.n_test;
    sc.k_docs = a.k_docs;
    sc.pairs_per_doc = a.pairs_per_doc;
    const mirage::SynthDataset ds = mirage::gen_kv_dataset(sc);

    auto dump = [&](const std::vector<mirage::SynthExample>& split,
                    const std::string& name) {
        std::vector<mirage::CorpusExample> out;
        out.reserve(split.size());
        for (const auto& ex : split) {
            out.push_back(mirage::to_corpus_example(ex));
        }
        const std::string path = a.out_dir + "/" + name + ".jsonl";
        mirage::write_corpus_jsonl(out, path);
        if (!g.quiet) {
            std::cerr << "wrote " << path << " (" << out.size()
                      << " examples)\n";
        }
    };
    dump(ds.train, "train");
    dump(ds.val, "val");
    dump(ds.test, "test");

    ordered_json echo{{"command", "synth"},
                      {"seed", g.seed},
                      {"out_dir", a.out_dir},
                      {"n_train", a.n_train},
                      {"n_val", a.n_val},
                      {"n_test", a.n_test},
                      {"k_docs", a.k_docs},
                      {"pairs_per_doc", a.pairs_per_doc}};
    if (!g.quiet) {
        std::cout << echo.dump(2) << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string corpus;
    std::string eval_corpus;
    std::string model_out;
    std::string tokenizer_out;
    std::string template_id = "minimal";
    int dim = 64, layers = 2, heads = 2, ctx = 512;
    int repeat_epochs = 14, probe_epochs = 6, batch_size = 32;
    double lr = 1e-3, init_std = 0.05;
};

int cmd_train(const GlobalOptions& g, const TrainArgs& a) {
    const auto corpus = mirage::read_corpus_jsonl(a.corpus);
    std::vector<mirage::SynthExample> examples;
    for (const auto& ex : corpus) {
        if (!ex.answer) {
            throw std::runtime_error("training example " + ex.id +
                                     " has no answer");
        }
        examples.push_back(to_synth(ex));
    }
    std::vector<mirage::SynthExample> eval_examples;
    if (!a.eval_corpus.empty()) {
        for (const auto& ex : mirage::read_corpus_jsonl(a.eval_corpus)) {
            eval_examples.push_back(to_synth(ex));
        }
    }

    const mirage::PromptTemplate tmpl = mirage::templates::by_id(a.template_id);
    std::vector<const std::vector<mirage::SynthExample>*> splits{&examples};
    if (!eval_examples.empty()) {
        splits.push_back(&eval_examples);
    }
    const mirage::WordTokenizer tok = mirage::fit_kv_tokenizer(splits, tmpl);

    mirage::KvTrainConfig kc;
    kc.repeat_epochs = a.repeat_epochs;
    kc.probe_epochs = a.probe_epochs;
    kc.batch_size = a.batch_size;
    kc.lr = a.lr;
    kc.init_std = a.init_std;
    kc.seed = g.seed;
    kc.model.dim = a.dim;
    kc.model.layers = a.layers;
    kc.model.heads = a.heads;
    kc.model.ctx = a.ctx;
    const mirage::TrainResult res =
        mirage::train_kv_model(examples, tmpl, tok, kc);

    mirage::save_model(res.params, a.model_out);
    const std::string tok_path = a.tokenizer_out.empty()
                                     ? a.model_out + ".tok.json"
                                     : a.tokenizer_out;
    mirage::save_tokenizer(tok, tok_path);

    ordered_json out{{"command", "train"},
                     {"schema_version", mirage::kAttributionSchemaVersion},
                     {"seed", g.seed},
                     {"corpus", a.corpus},
                     {"model_out", a.model_out},
                     {"tokenizer_out", tok_path},
                     {"template", a.template_id},
                     {"vocab", tok.vocab_size()},
                     {"dim", a.dim},
                     {"layers", a.layers},
                     {"heads", a.heads},
                     {"ctx", a.ctx},
                     {"repeat_epochs", a.repeat_epochs},
                     {"probe_epochs", a.probe_epochs},
                     {"batch_size", a.batch_size},
                     {"lr", a.lr},
                     {"init_std", a.init_std},
                     {"epoch_loss", res.epoch_loss},
                     {"model_checksum", hex64(fnv1a64_file(a.model_out))}};
    if (!eval_examples.empty()) {
        out["eval_answer_accuracy"] =
            mirage::kv_answer_accuracy(res.params, eval_examples, tmpl, tok);
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
    std::string model, tokenizer, corpus, out;
    std::string template_id = "minimal";
    std::string decode = "greedy";
    double temperature = 1.0;
    std::size_t max_new = 64;
};

int cmd_generate(const GlobalOptions& g, const GenerateArgs& a) {
    LoadedModel m = load_model_pair(a.model, a.tokenizer);
    const mirage::PromptTemplate tmpl = mirage::templates::by_id(a.template_id);
    if (a.decode != "greedy" && a.decode != "sampled") {
        throw std::runtime_error("decode must be greedy or sampled");
    }
    auto corpus = mirage::read_corpus_jsonl(a.corpus);
    for (auto& ex : corpus) {
        const mirage::PromptLayout layout =
            mirage::assemble_prompt("", ex.docs, ex.query, tmpl, *m.tok);
        std::vector<int> prompt;
        for (const mirage::Token& t : layout.tokens) prompt.push_back(t.id);
        std::vector<int> ids;
        if (a.decode == "greedy") {
            ids = mirage::generate_greedy(m.params, prompt, a.max_new,
                                          m.tok->eos_id());
        } else {
            ids = mirage::generate_sampled(m.params, prompt, a.max_new,
                                           m.tok->eos_id(), g.seed,
                                           a.temperature);
        }
        ex.answer = m.tok->detokenize(std::span<const int>(ids));
    }
    mirage::write_corpus_jsonl(corpus, a.out);
    if (!g.quiet) {
        std::cerr << "wrote " << a.out << " (" << corpus.size()
                  << " examples)\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// attribute

struct AttributeArgs {
    std::string model, tokenizer, corpus, out;
    std::string html_out, ansi_out;
    std::string template_id = "minimal";
    std::string selector = "example";
    std::string filter = "toppct:5";
    std::string scope = "doc";
    std::size_t max_new = 64;
};

int cmd_attribute(const GlobalOptions& g, const AttributeArgs& a) {
    LoadedModel m = load_model_pair(a.model, a.tokenizer);
    const mirage::PromptTemplate tmpl = mirage::templates::by_id(a.template_id);
    const auto corpus = mirage::read_corpus_jsonl(a.corpus);

    mirage::PipelineOptions opts;
    opts.selector = parse_selector(a.selector);
    opts.filter = parse_filter(a.filter);
    if (a.scope == "doc") {
        opts.scope = mirage::CciScope::doc_only;
    } else if (a.scope == "all") {
        opts.scope = mirage::CciScope::all_context;
    } else {
        throw std::runtime_error("scope must be doc or all");
    }
    opts.max_new_tokens = a.max_new;

    // worker pool over examples; output order equals input order
    std::vector<ordered_json> results(corpus.size());
    std::vector<std::string> errors(corpus.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= corpus.size()) break;
            const mirage::CorpusExample& ex = corpus[i];
            try {
                const mirage::AttributionResult res = mirage::attribute_example(
                    m.params, *m.tok, tmpl, ex.docs, ex.query, ex.answer,
                    opts);
                results[i] = mirage::attribution_to_json(res, ex.id, opts);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    const int nthreads = std::max(1, g.threads);
    std::vector<std::thread> pool;
    for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    ordered_json doc;
    doc["schema_version"] = mirage::kAttributionSchemaVersion;
    doc["config"] = ordered_json{{"command", "attribute"},
                                 {"seed", g.seed},
                                 {"model", a.model},
                                 {"corpus", a.corpus},
                                 {"template", a.template_id},
                                 {"selector", a.selector},
                                 {"filter", a.filter},
                                 {"scope", a.scope},
                                 {"max_new", a.max_new}};
    doc["examples"] = ordered_json::array();
    std::size_t failures = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (!errors[i].empty()) {
            ++failures;
            std::cerr << "example " << corpus[i].id << " failed: "
                      << errors[i] << "\n";
            continue;
        }
        doc["examples"].push_back(results[i]);
    }
    doc["failures"] = failures;
    emit_json(doc, a.out, g);
    if (!a.html_out.empty()) {
        write_text_file(a.html_out, mirage::render_html(doc));
    }
    if (!a.ansi_out.empty()) {
        write_text_file(a.ansi_out, mirage::render_ansi(doc));
    }
    if (failures != 0) {
        std::cerr << failures << " of " << corpus.size()
                  << " examples failed\n";
        return 1;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateArgs {
    std::string scores;  // JSONL: {"score": number, "gold": bool or 0/1}
    std::string out;
};

int cmd_calibrate(const GlobalOptions& g, const CalibrateArgs& a) {
    std::ifstream in(a.scores, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open calibration file: " + a.scores);
    }
    std::vector<mirage::CalibrationPoint> points;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            mirage::CalibrationPoint p;
            p.score = j.at("score").get<double>();
            p.gold = j.at("gold").is_boolean() ? j["gold"].get<bool>()
                                               : j["gold"].get<int>() != 0;
            points.push_back(p);
        } catch (const std::exception& e) {
            throw std::runtime_error(a.scores + ":" + std::to_string(lineno) +
                                     ": " + e.what());
        }
    }
    const double thr = mirage::calibrate_threshold(points);
    std::size_t correct = 0;
    for (const auto& p : points) {
        if ((p.score >= thr) == p.gold) ++correct;
    }
    ordered_json out{{"schema_version", mirage::kAttributionSchemaVersion},
                     {"config", ordered_json{{"command", "calibrate"},
                                             {"seed", g.seed},
                                             {"scores", a.scores}}},
                     {"threshold", thr},
                     {"points", points.size()},
                     {"accuracy", static_cast<double>(correct) /
                                      static_cast<double>(points.size())}};
    emit_json(out, a.out, g);
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    std::string attribution, corpus, out;
    std::string oracle = "lexical";
    bool strict_removal = false;
};

int cmd_evaluate(const GlobalOptions& g, const EvaluateArgs& a) {
    std::ifstream in(a.attribution, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open attribution file: " +
                                 a.attribution);
    }
    json attr;
    in >> attr;
    const auto corpus = mirage::read_corpus_jsonl(a.corpus);
    std::map<std::string, const mirage::CorpusExample*> by_id;
    for (const auto& ex : corpus) by_id[ex.id] = &ex;

    auto oracle = std::make_shared<mirage::CachingOracle>(
        make_oracle(a.oracle));

    std::map<std::pair<std::string, int>, bool> predicted, gold;
    std::vector<mirage::SentenceScore> sentence_scores;
    std::vector<mirage::SentenceLengthEntry> length_entries;
    std::vector<std::vector<bool>> attributed;

    for (const auto& ex : attr.at("examples")) {
        const std::string id = ex.at("id").get<std::string>();
        const auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw std::runtime_error("attribution example " + id +
                                     " missing from corpus");
        }
        const mirage::CorpusExample& cex = *it->second;
        std::map<int, std::string> doc_texts;
        for (const auto& d : cex.docs) doc_texts[d.id] = d.text;

        std::set<int> answer_union;
        std::vector<bool> sent_attr;
        for (const auto& sent : ex.at("sentences")) {
            std::set<int> cited;
            for (const auto& d : sent.at("doc_ids")) {
                cited.insert(d.get<int>());
            }
            answer_union.insert(cited.begin(), cited.end());
            sent_attr.push_back(!cited.empty());

            const std::string text = sent.at("text").get<std::string>();
            mirage::SentenceScore score;
            score.recall = mirage::citation_recall(text, cited, doc_texts,
                                                   *oracle);
            score.precision = mirage::citation_precision(
                text, cited, doc_texts, *oracle, a.strict_removal);
            sentence_scores.push_back(score);
            length_entries.push_back(
                {sent.at("cti_scores").size(), score.precision, score.recall,
                 !cited.empty()});
        }
        attributed.push_back(sent_attr);

        if (cex.gold_doc_labels) {
            for (std::size_t d = 0; d < cex.gold_doc_labels->size(); ++d) {
                const int doc_id = static_cast<int>(d) + 1;
                gold[{id, doc_id}] = (*cex.gold_doc_labels)[d];
                predicted[{id, doc_id}] = answer_union.count(doc_id) > 0;
            }
        }
    }

    ordered_json out;
    out["schema_version"] = mirage::kAttributionSchemaVersion;
    out["config"] = ordered_json{{"command", "evaluate"},
                                 {"seed", g.seed},
                                 {"attribution", a.attribution},
                                 {"corpus", a.corpus},
                                 {"oracle", oracle->id()},
                                 {"strict_removal", a.strict_removal}};
    if (!gold.empty()) {
        out["agreement_pct"] = mirage::agreement(predicted, gold);
    }
    if (!sentence_scores.empty()) {
        const mirage::CorpusCitationScores scores =
            mirage::corpus_citation_scores(sentence_scores);
        out["citation"] = ordered_json{{"precision", scores.precision},
                                       {"recall", scores.recall},
                                       {"f1", scores.f1}};
        const mirage::MissingCitationStats stats =
            mirage::missing_citation_stats(attributed);
        out["unattributed"] =
            ordered_json{{"sentence_pct", stats.sentence_pct},
                         {"answer_pct", stats.answer_pct}};
        out["length_bins"] = ordered_json::array();
        for (const auto& row : mirage::length_binned_report(
                 length_entries, {10, 20, 30, 40})) {
            ordered_json r{{"lo", row.lo},
                           {"count", row.count},
                           {"mean_precision", row.mean_precision},
                           {"mean_recall", row.mean_recall},
                           {"cited_pct", row.cited_pct}};
            if (row.hi != SIZE_MAX) r["hi"] = row.hi;
            out["length_bins"].push_back(std::move(r));
        }
    }
    emit_json(out, a.out, g);
    return 0;
}

// ---------------------------------------------------------------------------
// restore-order

struct RestoreArgs {
    std::string model, tokenizer, corpus, out;
    std::string template_id = "minimal";
    int max_iter = 200;
    std::size_t max_new = 64;
};

int cmd_restore_order(const GlobalOptions& g, const RestoreArgs& a) {
    LoadedModel m = load_model_pair(a.model, a.tokenizer);
    const mirage::PromptTemplate tmpl = mirage::templates::by_id(a.template_id);
    const auto corpus = mirage::read_corpus_jsonl(a.corpus);

    ordered_json out;
    out["schema_version"] = mirage::kAttributionSchemaVersion;
    out["config"] = ordered_json{{"command", "restore-order"},
                                 {"seed", g.seed},
                                 {"model", a.model},
                                 {"corpus", a.corpus},
                                 {"template", a.template_id},
                                 {"max_iter", a.max_iter}};
    out["examples"] = ordered_json::array();
    for (const auto& ex : corpus) {
        if (!ex.answer) {
            throw std::runtime_error("example " + ex.id + " has no answer");
        }
        auto generate = [&](const std::vector<mirage::RetrievedDoc>& docs) {
            const mirage::PromptLayout layout =
                mirage::assemble_prompt("", docs, ex.query, tmpl, *m.tok);
            std::vector<int> prompt;
            for (const mirage::Token& t : layout.tokens) {
                prompt.push_back(t.id);
            }
            const std::vector<int> ids = mirage::generate_greedy(
                m.params, prompt, a.max_new, m.tok->eos_id());
            return m.tok->detokenize(std::span<const int>(ids));
        };
        const mirage::RestoreResult r = mirage::restore_order(
            ex.docs, *ex.answer, generate, a.max_iter, g.seed);
        ordered_json row{{"id", ex.id},
                         {"found", r.found},
                         {"shuffles_used", r.shuffles_used},
                         {"seed", r.seed}};
        if (r.found) row["order"] = r.order;
        out["examples"].push_back(std::move(row));
    }
    emit_json(out, a.out, g);
    return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
    std::string attribution;
    std::string html_out, ansi_out;
};

int cmd_report(const GlobalOptions& g, const ReportArgs& a) {
    std::ifstream in(a.attribution, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open attribution file: " +
                                 a.attribution);
    }
    json doc;
    in >> doc;
    if (!a.html_out.empty()) {
        write_text_file(a.html_out, mirage::render_html(doc));
        if (!g.quiet) {
            std::cerr << "wrote " << a.html_out << "\n";
        }
    }
    if (!a.ansi_out.empty()) {
        write_text_file(a.ansi_out, mirage::render_ansi(doc));
        if (!g.quiet) {
            std::cerr << "wrote " << a.ansi_out << "\n";
        }
    }
    if (a.html_out.empty() && a.ansi_out.empty()) {
        std::cout << mirage::render_ansi(doc);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"model-internals answer attribution for RAG"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key=value config file");

    GlobalOptions g;
    app.add_option("--seed", g.seed, "global seed, recorded in all outputs")
        ->configurable(true);
    app.add_option("--threads", g.threads, "worker threads")
        ->configurable(true);
    app.add_flag("--quiet", g.quiet, "suppress progress messages")
        ->configurable(true);

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    synth->add_option("--out-dir", sa.out_dir, "output directory");
    synth->add_option("--n-train", sa.n_train);
    synth->add_option("--n-val", sa.n_val);
    synth->add_option("--n-test", sa.n_test);
    synth->add_option("--k-docs", sa.k_docs);
    synth->add_option("--pairs-per-doc", sa.pairs_per_doc);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train the bundled model");
    train->add_option("--corpus", ta.corpus)->required();
    train->add_option("--eval-corpus", ta.eval_corpus);
    train->add_option("--model-out", ta.model_out)->required();
    train->add_option("--tokenizer-out", ta.tokenizer_out);
    train->add_option("--template", ta.template_id);
    train->add_option("--dim", ta.dim);
    train->add_option("--layers", ta.layers);
    train->add_option("--heads", ta.heads);
    train->add_option("--ctx", ta.ctx);
    train->add_option("--repeat-epochs", ta.repeat_epochs);
    train->add_option("--probe-epochs", ta.probe_epochs);
    train->add_option("--batch-size", ta.batch_size);
    train->add_option("--lr", ta.lr);
    train->add_option("--init-std", ta.init_std);

    GenerateArgs ga;
    auto* gen = app.add_subcommand("generate", "decode answers for a corpus");
    gen->add_option("--model", ga.model)->required();
    gen->add_option("--tokenizer", ga.tokenizer);
    gen->add_option("--corpus", ga.corpus)->required();
    gen->add_option("--out", ga.out)->required();
    gen->add_option("--template", ga.template_id);
    gen->add_option("--decode", ga.decode, "greedy or sampled");
    gen->add_option("--temperature", ga.temperature);
    gen->add_option("--max-new", ga.max_new);

    AttributeArgs aa;
    auto* attr = app.add_subcommand("attribute",
                                    "run the attribution pipeline");
    attr->add_option("--model", aa.model)->required();
    attr->add_option("--tokenizer", aa.tokenizer);
    attr->add_option("--corpus", aa.corpus)->required();
    attr->add_option("--out", aa.out, "output JSON ('-' for stdout)");
    attr->add_option("--html", aa.html_out);
    attr->add_option("--ansi", aa.ansi_out);
    attr->add_option("--template", aa.template_id);
    attr->add_option("--selector", aa.selector,
                     "example, fixed:<t>, or calibrated:<t>");
    attr->add_option("--filter", aa.filter, "topk:<k> or toppct:<p>");
    attr->add_option("--scope", aa.scope, "doc or all");
    attr->add_option("--max-new", aa.max_new);

    CalibrateArgs ca;
    auto* cal = app.add_subcommand("calibrate",
                                   "fit the CTI selection threshold");
    cal->add_option("--scores", ca.scores, "JSONL of {score, gold}")
        ->required();
    cal->add_option("--out", ca.out);

    EvaluateArgs ea;
    auto* eval = app.add_subcommand("evaluate",
                                    "score attribution output against gold");
    eval->add_option("--attribution", ea.attribution)->required();
    eval->add_option("--corpus", ea.corpus)->required();
    eval->add_option("--out", ea.out);
    eval->add_option("--oracle", ea.oracle, "lexical or remote");
    eval->add_flag("--strict-removal", ea.strict_removal,
                   "removal-only citation precision");

    RestoreArgs ra;
    auto* rest = app.add_subcommand("restore-order",
                                    "search for a document order that "
                                    "reproduces the answer");
    rest->add_option("--model", ra.model)->required();
    rest->add_option("--tokenizer", ra.tokenizer);
    rest->add_option("--corpus", ra.corpus)->required();
    rest->add_option("--out", ra.out);
    rest->add_option("--template", ra.template_id);
    rest->add_option("--max-iter", ra.max_iter);
    rest->add_option("--max-new", ra.max_new);

    ReportArgs pa;
    auto* rep = app.add_subcommand("report",
                                   "render attribution JSON to HTML/ANSI");
    rep->add_option("--attribution", pa.attribution)->required();
    rep->add_option("--html", pa.html_out);
    rep->add_option("--ansi", pa.ansi_out);

    // let global flags appear after the subcommand name as well
    for (CLI::App* sub : app.get_subcommands(
             [](const CLI::App*) { return true; })) {
        sub->fallthrough();
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(g, sa);
        if (train->parsed()) return cmd_train(g, ta);
        if (gen->parsed()) return cmd_generate(g, ga);
        if (attr->parsed()) return cmd_attribute(g, aa);
        if (cal->parsed()) return cmd_calibrate(g, ca);
        if (eval->parsed()) return cmd_evaluate(g, ea);
        if (rest->parsed()) return cmd_restore_order(g, ra);
        if (rep->parsed()) return cmd_report(g, pa);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
