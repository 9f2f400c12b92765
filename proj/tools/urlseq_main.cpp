// urlseq: learn URL token embeddings from browsing sequences and train
// next-day conversion classifiers on top of them.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "urlseq/dataset.hpp"
#include "urlseq/embeddings.hpp"
#include "urlseq/evaluation.hpp"
#include "urlseq/sequence_models.hpp"
#include "urlseq/url_parsing.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace urlseq;

namespace {

void log_event(json fields) {
    std::cerr << fields.dump() << "\n";
}

int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    json cfg = json::parse(in, nullptr, false);
    if (cfg.is_discarded()) throw FormatError(path + ": invalid JSON");
    // a run.json written by a previous invocation nests the values
    if (cfg.is_object() && cfg.contains("config")) cfg = cfg.at("config");
    if (!cfg.is_object()) throw FormatError(path + ": not a JSON object");
    return cfg;
}

template <typename T>
void override_from(const json& cfg, const CLI::Option* opt, const char* key, T& var) {
    if (opt->count() == 0 && cfg.contains(key)) var = cfg.at(key).get<T>();
}

void write_run_json(const fs::path& path, const std::string& command, const json& effective) {
    json run;
    run["command"] = command;
    run["config"] = effective;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << run.dump(2) << "\n";
}

VocabScope parse_scope(const std::string& s) {
    if (s == "all") return VocabScope::AllPositions;
    if (s == "domain") return VocabScope::DomainOnly;
    throw ConfigError("unknown vocab scope: " + s);
}

CompositionMode parse_mode(const std::string& s) {
    if (s == "domain") return CompositionMode::DomainOnly;
    if (s == "avg") return CompositionMode::TokenAvg;
    if (s == "concat") return CompositionMode::TokenConcat;
    throw ConfigError("unknown composition mode: " + s);
}

MappingKind parse_classifier(const std::string& s) {
    if (s == "lr") return MappingKind::Average;
    if (s == "dlr") return MappingKind::Dense;
    if (s == "rnn") return MappingKind::Lstm;
    throw ConfigError("unknown classifier: " + s);
}

std::string rep_name(const std::string& mode) {
    if (mode == "domain") return "Domain_only";
    if (mode == "avg") return "Token_avg";
    if (mode == "concat") return "Token_concat";
    if (mode == "onehot") return "One_hot";
    throw ConfigError("unknown representation: " + mode);
}

std::string classifier_name(MappingKind kind) {
    switch (kind) {
        case MappingKind::Average: return "LR";
        case MappingKind::Dense: return "DLR";
        case MappingKind::Lstm: return "RNN";
    }
    return "?";
}

int env_threads() {
    const char* raw = std::getenv("URLSEQ_THREADS");
    if (!raw) return 1;
    const int n = std::atoi(raw);
    return n > 0 ? n : 1;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out_dir = "synth";
    std::string config_path;
    int categories = 8;
    int domains_per_category = 25;
    int users = 20000;
    int train_users = -1;
    int test_users = -1;
    int advertisers = 2;
    int seq_min = 10;
    int seq_max = 30;
    double p_intra = 0.9;
    std::string label_rule = "affinity";
    uint64_t seed = 1;
};

int run_synth(const SynthArgs& a) {
    SyntheticConfig cfg;
    cfg.n_categories = a.categories;
    cfg.domains_per_category = a.domains_per_category;
    cfg.n_users = a.users;
    cfg.n_train_users = a.train_users;
    cfg.n_test_users = a.test_users;
    cfg.n_advertisers = a.advertisers;
    cfg.seq_len_min = a.seq_min;
    cfg.seq_len_max = a.seq_max;
    cfg.p_intra = a.p_intra;
    if (a.label_rule != "order" && a.label_rule != "affinity") {
        throw ConfigError("label-rule must be 'affinity' or 'order'");
    }
    cfg.label_rule =
        a.label_rule == "order" ? LabelRule::OrderSensitive : LabelRule::CategoryAffinity;
    cfg.seed = a.seed;

    const int64_t t0 = now_ms();
    SyntheticDataset ds = generate_synthetic(cfg);
    fs::create_directories(a.out_dir);
    write_jsonl(ds.rep, (fs::path(a.out_dir) / "rep.jsonl").string());
    write_jsonl(ds.train, (fs::path(a.out_dir) / "train.jsonl").string());
    write_jsonl(ds.test, (fs::path(a.out_dir) / "test.jsonl").string());

    json truth;
    truth["domains"] = ds.truth.domains;
    truth["domain_category"] = ds.truth.domain_category;
    truth["advertisers"] = ds.truth.advertisers;
    truth["advertiser_category"] = ds.truth.advertiser_category;
    truth["trigger_domains"] = ds.truth.trigger_domains;
    {
        std::ofstream out(fs::path(a.out_dir) / "truth.json", std::ios::binary);
        out << truth.dump(2) << "\n";
    }

    json effective = {{"out-dir", a.out_dir},
                      {"categories", a.categories},
                      {"domains-per-category", a.domains_per_category},
                      {"users", a.users},
                      {"train-users", a.train_users},
                      {"test-users", a.test_users},
                      {"advertisers", a.advertisers},
                      {"seq-min", a.seq_min},
                      {"seq-max", a.seq_max},
                      {"p-intra", a.p_intra},
                      {"label-rule", a.label_rule},
                      {"seed", a.seed}};
    write_run_json(fs::path(a.out_dir) / "run.json", "synth", effective);

    log_event({{"phase", "synth"},
               {"rep_records", ds.rep.size()},
               {"train_records", ds.train.size()},
               {"test_records", ds.test.size()},
               {"duration_ms", now_ms() - t0}});
    return 0;
}

// ---------------------------------------------------------------------------

struct BuildVocabArgs {
    std::string input;
    std::string output = "vocab.tsv";
    std::string config_path;
    int64_t rare_threshold = 20;
    std::string scope = "all";
};

int run_build_vocab(const BuildVocabArgs& a) {
    const int64_t t0 = now_ms();
    VocabBuilder builder(a.rare_threshold, parse_scope(a.scope));
    RecordReader reader(a.input, [](const std::string& msg) {
        log_event({{"phase", "build-vocab"}, {"warning", msg}});
    });
    int64_t urls = 0;
    while (auto rec = reader.next()) {
        for (const std::string& url : rec->urls) {
            try {
                builder.add(parse_url(url));
                ++urls;
            } catch (const InvalidUrl&) {
            }
        }
    }
    Vocab vocab = std::move(builder).finish();
    vocab.save_tsv(a.output);

    std::cout << "vocab size: " << vocab.size() << " (3 reserved)\n";
    std::cout << "rare tokens folded: " << vocab.rare_token_count() << " ("
              << vocab.rare_fold_occurrences() << " occurrences)\n";
    log_event({{"phase", "build-vocab"},
               {"urls", urls},
               {"vocab_size", vocab.size()},
               {"rare_folds", vocab.rare_token_count()},
               {"duration_ms", now_ms() - t0}});
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainEmbArgs {
    std::string input;
    std::string vocab_path;
    std::string output = "embeddings.tsv";
    std::string config_path;
    int dim = 100;
    int window = 5;
    int negatives = 4;
    std::string mode = "avg";
    int shards = 200;
    int shard_passes = 0;
    double noise_exponent = 0.75;
    uint64_t seed = 1;
    int threads = 1;
};

int run_train_embeddings(const TrainEmbArgs& a) {
    const int64_t t0 = now_ms();
    Vocab vocab = Vocab::load_tsv(a.vocab_path);
    std::vector<LabeledSequence> records = load_records(a.input, vocab);
    log_event({{"phase", "train-embeddings"},
               {"records", records.size()},
               {"vocab_size", vocab.size()}});

    ShardedCorpus corpus = shard_corpus(std::move(records), a.shards, a.seed);

    SkipGramConfig cfg;
    cfg.window = a.window;
    cfg.negatives = a.negatives;
    cfg.noise_exponent = a.noise_exponent;
    cfg.shard_passes = a.shard_passes;
    cfg.threads = a.threads;

    EmbeddingTrainResult result =
        train_embeddings(corpus, vocab, cfg, parse_mode(a.mode), a.dim, a.seed,
                         [](int shard, double loss) {
                             log_event({{"phase", "train-embeddings"},
                                        {"shard", shard},
                                        {"loss", loss}});
                         });
    export_embeddings(result.tables.target, vocab, a.output);

    json effective = {{"input", a.input},
                      {"vocab", a.vocab_path},
                      {"output", a.output},
                      {"dim", a.dim},
                      {"window", a.window},
                      {"negatives", a.negatives},
                      {"mode", a.mode},
                      {"shards", a.shards},
                      {"shard-passes", a.shard_passes},
                      {"noise-exponent", a.noise_exponent},
                      {"seed", a.seed},
                      {"threads", a.threads}};
    write_run_json(a.output + ".run.json", "train-embeddings", effective);

    log_event({{"phase", "train-embeddings"}, {"duration_ms", now_ms() - t0}});
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainEvalArgs {
    std::string train_path;
    std::string test_path;
    std::string out_dir = "reports";
    std::string config_path;
    std::string grid;  // "paper" enables the full model grid
    std::string classifier = "lr";
    std::string mode = "avg";
    std::string vocab_path;
    std::string vocab_domain_path;
    std::string embeddings_path;
    std::string embeddings_domain_path;
    std::string embeddings_avg_path;
    std::string embeddings_concat_path;
    std::vector<std::string> advertisers;  // empty: every label key present
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
    int epochs = 100;
    int steps = 100;
    int batch_size = 64;
    double dropout = 0.5;
    std::size_t max_seq_len = 500;
    bool save_models = false;
};

struct GridCell {
    std::string advertiser;
    ModelSpec spec;
    const std::vector<LabeledSequence>* train;
    const std::vector<LabeledSequence>* test;
};

int run_train_eval(const TrainEvalArgs& a) {
    const int64_t t0 = now_ms();
    auto warn = [](const std::string& msg) {
        log_event({{"phase", "train-eval"}, {"warning", msg}});
    };
    std::vector<RawRecord> raw_train = load_raw_records(a.train_path, warn);
    std::vector<RawRecord> raw_test = load_raw_records(a.test_path, warn);

    // one encoded copy of the data per vocabulary in play
    std::map<std::string, Vocab> vocabs;
    std::map<std::string, std::vector<LabeledSequence>> enc_train, enc_test;
    auto encoded = [&](const std::string& vocab_path) -> const Vocab* {
        if (!vocabs.contains(vocab_path)) {
            vocabs.emplace(vocab_path, Vocab::load_tsv(vocab_path));
            const Vocab& v = vocabs.at(vocab_path);
            auto encode_all = [&v](const std::vector<RawRecord>& raw) {
                std::vector<LabeledSequence> out;
                out.reserve(raw.size());
                for (const RawRecord& rec : raw) {
                    LabeledSequence seq = encode_record(rec, v);
                    if (!seq.urls.empty()) out.push_back(std::move(seq));
                }
                return out;
            };
            enc_train.emplace(vocab_path, encode_all(raw_train));
            enc_test.emplace(vocab_path, encode_all(raw_test));
        }
        return &vocabs.at(vocab_path);
    };

    // imported tables must outlive the cells that reference them
    std::map<std::string, MatrixXd> tables;
    auto table_for = [&](const std::string& emb_path, const Vocab& vocab) -> const MatrixXd& {
        if (!tables.contains(emb_path)) {
            tables.emplace(emb_path, import_embeddings_for_vocab(emb_path, vocab));
        }
        return tables.at(emb_path);
    };

    struct ModelPlan {
        std::string rep;  // domain | avg | concat | onehot
        MappingKind kind;
    };
    std::vector<ModelPlan> plans;
    if (a.grid == "paper") {
        plans.push_back({"onehot", MappingKind::Average});
        for (const char* rep : {"domain", "avg", "concat"}) {
            for (MappingKind kind :
                 {MappingKind::Average, MappingKind::Dense, MappingKind::Lstm}) {
                plans.push_back({rep, kind});
            }
        }
    } else if (a.grid.empty()) {
        plans.push_back({a.mode, parse_classifier(a.classifier)});
    } else {
        throw ConfigError("unknown grid: " + a.grid);
    }

    std::set<std::string> advertiser_set(a.advertisers.begin(), a.advertisers.end());
    if (advertiser_set.empty()) {
        for (const RawRecord& rec : raw_train) {
            for (const auto& [name, value] : rec.labels) {
                (void)value;
                advertiser_set.insert(name);
            }
        }
    }
    if (advertiser_set.empty()) throw DegenerateLabels("no advertiser labels in training data");

    std::vector<GridCell> cells;
    for (const ModelPlan& plan : plans) {
        ModelSpec spec;
        spec.kind = plan.kind;
        spec.name = rep_name(plan.rep) + "/" + classifier_name(plan.kind);

        std::string vocab_path = a.vocab_path;
        std::string emb_path;
        if (plan.rep == "domain") {
            vocab_path = a.vocab_domain_path.empty() ? a.vocab_path : a.vocab_domain_path;
            emb_path = a.embeddings_domain_path.empty() ? a.embeddings_path
                                                        : a.embeddings_domain_path;
        } else if (plan.rep == "avg") {
            emb_path = a.embeddings_avg_path.empty() ? a.embeddings_path : a.embeddings_avg_path;
        } else if (plan.rep == "concat") {
            emb_path =
                a.embeddings_concat_path.empty() ? a.embeddings_path : a.embeddings_concat_path;
        }
        if (vocab_path.empty()) throw ConfigError("missing --vocab for " + spec.name);

        const Vocab* vocab = encoded(vocab_path);
        const std::vector<LabeledSequence>* train_records = &enc_train.at(vocab_path);
        const std::vector<LabeledSequence>* test_records = &enc_test.at(vocab_path);

        if (plan.rep == "onehot") {
            spec.rep = Representation::one_hot(vocab->size());
        } else {
            if (emb_path.empty()) throw ConfigError("missing --embeddings for " + spec.name);
            spec.rep =
                Representation::embedding(table_for(emb_path, *vocab), parse_mode(plan.rep));
        }

        for (const std::string& adv : advertiser_set) {
            cells.push_back({adv, spec, train_records, test_records});
        }
    }

    TrainConfig base;
    base.epochs = a.epochs;
    base.steps_per_epoch = a.steps;
    base.batch_size = a.batch_size;
    base.dropout = a.dropout;
    base.max_seq_len = a.max_seq_len;

    fs::create_directories(a.out_dir);
    if (a.save_models) fs::create_directories(fs::path(a.out_dir) / "models");

    EvalReport report;
    std::mutex merge_mutex;
    std::atomic<std::size_t> next_cell{0};
    const int threads = std::min<int>(env_threads(), static_cast<int>(cells.size()));

    auto run_cell = [&](const GridCell& cell) {
        CellSinkFn sink;
        if (a.save_models) {
            sink = [&](const ConversionModel& model, const EvalCell& result) {
                const std::string name = file_token(result.model) + "_" +
                                         file_token(result.advertiser) + "_seed" +
                                         std::to_string(result.seed) + ".bin";
                save_model(model, (fs::path(a.out_dir) / "models" / name).string());
            };
        }
        EvalReport local = multi_seed_evaluate(cell.spec, *cell.train, *cell.test,
                                               cell.advertiser, a.seeds, base, sink);
        std::lock_guard<std::mutex> lock(merge_mutex);
        for (const EvalSummary& s : local.summaries()) {
            log_event({{"phase", "train-eval"},
                       {"advertiser", s.advertiser},
                       {"model", s.model},
                       {"mean_auc", s.mean_auc},
                       {"std_auc", s.std_auc}});
        }
        for (EvalCell& c : local.cells) report.cells.push_back(std::move(c));
    };

    if (threads <= 1) {
        for (const GridCell& cell : cells) run_cell(cell);
    } else {
        std::vector<std::thread> workers;
        for (int w = 0; w < threads; ++w) {
            workers.emplace_back([&]() {
                while (true) {
                    const std::size_t i = next_cell.fetch_add(1);
                    if (i >= cells.size()) return;
                    run_cell(cells[i]);
                }
            });
        }
        for (auto& t : workers) t.join();
    }

    // deterministic report order regardless of scheduling
    std::sort(report.cells.begin(), report.cells.end(),
              [](const EvalCell& x, const EvalCell& y) {
                  return std::tie(x.advertiser, x.model, x.seed) <
                         std::tie(y.advertiser, y.model, y.seed);
              });
    export_report(report, a.out_dir);

    json effective = {{"train", a.train_path},
                      {"test", a.test_path},
                      {"out-dir", a.out_dir},
                      {"grid", a.grid},
                      {"classifier", a.classifier},
                      {"mode", a.mode},
                      {"vocab", a.vocab_path},
                      {"vocab-domain", a.vocab_domain_path},
                      {"embeddings", a.embeddings_path},
                      {"embeddings-domain", a.embeddings_domain_path},
                      {"embeddings-avg", a.embeddings_avg_path},
                      {"embeddings-concat", a.embeddings_concat_path},
                      {"advertisers", std::vector<std::string>(advertiser_set.begin(),
                                                               advertiser_set.end())},
                      {"seeds", a.seeds},
                      {"epochs", a.epochs},
                      {"steps", a.steps},
                      {"batch-size", a.batch_size},
                      {"dropout", a.dropout},
                      {"max-seq-len", a.max_seq_len},
                      {"save-models", a.save_models},
                      {"roc-curve-averaging", "per-fpr-grid-101"}};
    write_run_json(fs::path(a.out_dir) / "run.json", "train-eval", effective);

    log_event({{"phase", "train-eval"},
               {"cells", report.cells.size()},
               {"duration_ms", now_ms() - t0}});
    return 0;
}

// ---------------------------------------------------------------------------

struct NeighborsArgs {
    std::string embeddings_path;
    std::string queries_path;
    std::string output = "-";
    int k = 10;
};

int run_neighbors(const NeighborsArgs& a) {
    ImportedEmbeddings emb = import_embeddings(a.embeddings_path);
    std::map<std::string, int32_t> row_of;
    for (std::size_t i = 0; i < emb.tokens.size(); ++i) {
        row_of.emplace(emb.tokens[i], static_cast<int32_t>(i));
    }

    std::ifstream queries(a.queries_path);
    if (!queries) throw IoError("cannot open: " + a.queries_path);

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (a.output != "-") {
        file.open(a.output, std::ios::binary);
        if (!file) throw IoError("cannot open for writing: " + a.output);
        out = &file;
    }

    char buf[32];
    std::string query;
    while (std::getline(queries, query)) {
        if (query.empty()) continue;
        auto it = row_of.find(query);
        if (it == row_of.end() || it->second < kFirstRealId) {
            log_event({{"phase", "neighbors"}, {"warning", "unknown query token: " + query}});
            *out << escape_field(query) << "\t-\t-\t-\n";
            continue;
        }
        std::size_t rank = 0;
        for (const Neighbor& n : nearest_neighbors(it->second, emb.table, a.k)) {
            std::snprintf(buf, sizeof(buf), "%.10f", n.similarity);
            *out << escape_field(query) << '\t' << ++rank << '\t'
                 << escape_field(emb.tokens[static_cast<std::size_t>(n.id)]) << '\t' << buf
                 << '\n';
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"URL-sequence conversion modeling toolkit"};
    app.require_subcommand(1);

    SynthArgs synth;
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic labeled corpus");
    auto* sc = synth_cmd->add_option("--config", synth.config_path, "JSON config file");
    std::map<std::string, CLI::Option*> so;
    so["out-dir"] = synth_cmd->add_option("--out-dir", synth.out_dir);
    so["categories"] = synth_cmd->add_option("--categories", synth.categories);
    so["domains-per-category"] =
        synth_cmd->add_option("--domains-per-category", synth.domains_per_category);
    so["users"] = synth_cmd->add_option("--users", synth.users);
    so["train-users"] = synth_cmd->add_option("--train-users", synth.train_users);
    so["test-users"] = synth_cmd->add_option("--test-users", synth.test_users);
    so["advertisers"] = synth_cmd->add_option("--advertisers", synth.advertisers);
    so["seq-min"] = synth_cmd->add_option("--seq-min", synth.seq_min);
    so["seq-max"] = synth_cmd->add_option("--seq-max", synth.seq_max);
    so["p-intra"] = synth_cmd->add_option("--p-intra", synth.p_intra);
    so["label-rule"] = synth_cmd->add_option("--label-rule", synth.label_rule);
    so["seed"] = synth_cmd->add_option("--seed", synth.seed);

    BuildVocabArgs bv;
    CLI::App* bv_cmd = app.add_subcommand("build-vocab", "count tokens and build the vocabulary");
    auto* bvc = bv_cmd->add_option("--config", bv.config_path, "JSON config file");
    std::map<std::string, CLI::Option*> bo;
    bo["input"] = bv_cmd->add_option("--input", bv.input);
    bo["output"] = bv_cmd->add_option("--output", bv.output);
    bo["rare-threshold"] = bv_cmd->add_option("--rare-threshold", bv.rare_threshold);
    bo["scope"] = bv_cmd->add_option("--scope", bv.scope, "all|domain");

    TrainEmbArgs te;
    CLI::App* te_cmd =
        app.add_subcommand("train-embeddings", "skip-gram training over URL sequences");
    auto* tec = te_cmd->add_option("--config", te.config_path, "JSON config file");
    std::map<std::string, CLI::Option*> eo;
    eo["input"] = te_cmd->add_option("--input", te.input);
    eo["vocab"] = te_cmd->add_option("--vocab", te.vocab_path);
    eo["output"] = te_cmd->add_option("--output", te.output);
    eo["dim"] = te_cmd->add_option("--dim", te.dim);
    eo["window"] = te_cmd->add_option("--window", te.window);
    eo["negatives"] = te_cmd->add_option("--negatives", te.negatives);
    eo["mode"] = te_cmd->add_option("--mode", te.mode, "domain|avg|concat");
    eo["shards"] = te_cmd->add_option("--shards", te.shards);
    eo["shard-passes"] = te_cmd->add_option("--shard-passes", te.shard_passes);
    eo["noise-exponent"] = te_cmd->add_option("--noise-exponent", te.noise_exponent);
    eo["seed"] = te_cmd->add_option("--seed", te.seed);
    eo["threads"] = te_cmd->add_option("--threads", te.threads);

    TrainEvalArgs tv;
    CLI::App* tv_cmd =
        app.add_subcommand("train-eval", "train conversion classifiers and report AUC");
    auto* tvc = tv_cmd->add_option("--config", tv.config_path, "JSON config file");
    std::map<std::string, CLI::Option*> vo;
    vo["train"] = tv_cmd->add_option("--train", tv.train_path);
    vo["test"] = tv_cmd->add_option("--test", tv.test_path);
    vo["out-dir"] = tv_cmd->add_option("--out-dir", tv.out_dir);
    vo["grid"] = tv_cmd->add_option("--grid", tv.grid, "paper");
    vo["classifier"] = tv_cmd->add_option("--classifier", tv.classifier, "lr|dlr|rnn");
    vo["mode"] = tv_cmd->add_option("--mode", tv.mode, "domain|avg|concat|onehot");
    vo["vocab"] = tv_cmd->add_option("--vocab", tv.vocab_path);
    vo["vocab-domain"] = tv_cmd->add_option("--vocab-domain", tv.vocab_domain_path);
    vo["embeddings"] = tv_cmd->add_option("--embeddings", tv.embeddings_path);
    vo["embeddings-domain"] = tv_cmd->add_option("--embeddings-domain", tv.embeddings_domain_path);
    vo["embeddings-avg"] = tv_cmd->add_option("--embeddings-avg", tv.embeddings_avg_path);
    vo["embeddings-concat"] =
        tv_cmd->add_option("--embeddings-concat", tv.embeddings_concat_path);
    vo["advertiser"] = tv_cmd->add_option("--advertiser", tv.advertisers)->delimiter(',');
    vo["seeds"] = tv_cmd->add_option("--seeds", tv.seeds)->delimiter(',');
    vo["epochs"] = tv_cmd->add_option("--epochs", tv.epochs);
    vo["steps"] = tv_cmd->add_option("--steps", tv.steps);
    vo["batch-size"] = tv_cmd->add_option("--batch-size", tv.batch_size);
    vo["dropout"] = tv_cmd->add_option("--dropout", tv.dropout);
    vo["max-seq-len"] = tv_cmd->add_option("--max-seq-len", tv.max_seq_len);
    vo["save-models"] = tv_cmd->add_flag("--save-models", tv.save_models);

    NeighborsArgs nb;
    CLI::App* nb_cmd = app.add_subcommand("neighbors", "cosine nearest neighbors of tokens");
    nb_cmd->add_option("--embeddings", nb.embeddings_path)->required();
    nb_cmd->add_option("--queries", nb.queries_path)->required();
    nb_cmd->add_option("--output", nb.output, "path or - for stdout");
    nb_cmd->add_option("--k", nb.k);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth_cmd->parsed()) {
            json cfg = load_config(sc->count() ? synth.config_path : "");
            override_from(cfg, so["out-dir"], "out-dir", synth.out_dir);
            override_from(cfg, so["categories"], "categories", synth.categories);
            override_from(cfg, so["domains-per-category"], "domains-per-category",
                          synth.domains_per_category);
            override_from(cfg, so["users"], "users", synth.users);
            override_from(cfg, so["train-users"], "train-users", synth.train_users);
            override_from(cfg, so["test-users"], "test-users", synth.test_users);
            override_from(cfg, so["advertisers"], "advertisers", synth.advertisers);
            override_from(cfg, so["seq-min"], "seq-min", synth.seq_min);
            override_from(cfg, so["seq-max"], "seq-max", synth.seq_max);
            override_from(cfg, so["p-intra"], "p-intra", synth.p_intra);
            override_from(cfg, so["label-rule"], "label-rule", synth.label_rule);
            override_from(cfg, so["seed"], "seed", synth.seed);
            return run_synth(synth);
        }
        if (bv_cmd->parsed()) {
            json cfg = load_config(bvc->count() ? bv.config_path : "");
            override_from(cfg, bo["input"], "input", bv.input);
            override_from(cfg, bo["output"], "output", bv.output);
            override_from(cfg, bo["rare-threshold"], "rare-threshold", bv.rare_threshold);
            override_from(cfg, bo["scope"], "scope", bv.scope);
            if (bv.input.empty()) throw ConfigError("build-vocab needs --input");
            return run_build_vocab(bv);
        }
        if (te_cmd->parsed()) {
            json cfg = load_config(tec->count() ? te.config_path : "");
            override_from(cfg, eo["input"], "input", te.input);
            override_from(cfg, eo["vocab"], "vocab", te.vocab_path);
            override_from(cfg, eo["output"], "output", te.output);
            override_from(cfg, eo["dim"], "dim", te.dim);
            override_from(cfg, eo["window"], "window", te.window);
            override_from(cfg, eo["negatives"], "negatives", te.negatives);
            override_from(cfg, eo["mode"], "mode", te.mode);
            override_from(cfg, eo["shards"], "shards", te.shards);
            override_from(cfg, eo["shard-passes"], "shard-passes", te.shard_passes);
            override_from(cfg, eo["noise-exponent"], "noise-exponent", te.noise_exponent);
            override_from(cfg, eo["seed"], "seed", te.seed);
            override_from(cfg, eo["threads"], "threads", te.threads);
            if (te.input.empty() || te.vocab_path.empty()) {
                throw ConfigError("train-embeddings needs --input and --vocab");
            }
            return run_train_embeddings(te);
        }
        if (tv_cmd->parsed()) {
            json cfg = load_config(tvc->count() ? tv.config_path : "");
            override_from(cfg, vo["train"], "train", tv.train_path);
            override_from(cfg, vo["test"], "test", tv.test_path);
            override_from(cfg, vo["out-dir"], "out-dir", tv.out_dir);
            override_from(cfg, vo["grid"], "grid", tv.grid);
            override_from(cfg, vo["classifier"], "classifier", tv.classifier);
            override_from(cfg, vo["mode"], "mode", tv.mode);
            override_from(cfg, vo["vocab"], "vocab", tv.vocab_path);
            override_from(cfg, vo["vocab-domain"], "vocab-domain", tv.vocab_domain_path);
            override_from(cfg, vo["embeddings"], "embeddings", tv.embeddings_path);
            override_from(cfg, vo["embeddings-domain"], "embeddings-domain",
                          tv.embeddings_domain_path);
            override_from(cfg, vo["embeddings-avg"], "embeddings-avg", tv.embeddings_avg_path);
            override_from(cfg, vo["embeddings-concat"], "embeddings-concat",
                          tv.embeddings_concat_path);
            override_from(cfg, vo["advertiser"], "advertisers", tv.advertisers);
            override_from(cfg, vo["seeds"], "seeds", tv.seeds);
            override_from(cfg, vo["epochs"], "epochs", tv.epochs);
            override_from(cfg, vo["steps"], "steps", tv.steps);
            override_from(cfg, vo["batch-size"], "batch-size", tv.batch_size);
            override_from(cfg, vo["dropout"], "dropout", tv.dropout);
            override_from(cfg, vo["max-seq-len"], "max-seq-len", tv.max_seq_len);
            override_from(cfg, vo["save-models"], "save-models", tv.save_models);
            if (tv.train_path.empty() || tv.test_path.empty()) {
                throw ConfigError("train-eval needs --train and --test");
            }
            return run_train_eval(tv);
        }
        if (nb_cmd->parsed()) return run_neighbors(nb);
    } catch (const DegenerateLabels& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
