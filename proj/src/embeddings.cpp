#include "urlseq/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>
#include <unordered_map>

namespace urlseq {

EmbeddingMatrix EmbeddingMatrix::init(Eigen::Index n_tokens, Eigen::Index d, Rng& rng) {
    if (n_tokens < 1 || d < 1) throw ConfigError("embedding table dimensions must be >= 1");
    EmbeddingMatrix m;
    const double half = 0.5 / static_cast<double>(d);
    m.target = uniform_matrix(n_tokens, d, -half, half, rng);
    m.context = MatrixXd::Zero(n_tokens, d);
    return m;
}

namespace {

void check_ids(const TripleIds& ids, Eigen::Index rows) {
    for (int32_t id : ids) {
        if (id < 0 || id >= rows) {
            throw VocabError("token id " + std::to_string(id) + " outside table of " +
                             std::to_string(rows) + " rows");
        }
    }
}

}  // namespace

VectorXd compose_url_embedding(CompositionMode mode, const TripleIds& ids,
                               const MatrixXd& table) {
    check_ids(ids, table.rows());
    const Eigen::Index d = table.cols();
    switch (mode) {
        case CompositionMode::DomainOnly:
            return table.row(ids[0]).transpose();
        case CompositionMode::TokenAvg:
            return ((table.row(ids[0]) + table.row(ids[1]) + table.row(ids[2])) / 3.0)
                .transpose();
        case CompositionMode::TokenConcat: {
            VectorXd out(3 * d);
            out.segment(0, d) = table.row(ids[0]).transpose();
            out.segment(d, d) = table.row(ids[1]).transpose();
            out.segment(2 * d, d) = table.row(ids[2]).transpose();
            return out;
        }
    }
    throw ConfigError("unknown composition mode");
}

SparseVec one_hot_url(const TripleIds& ids, int32_t vocab_size) {
    int n_real = 0;
    for (int32_t id : ids) {
        if (id != kPadId) ++n_real;
    }
    SparseVec out;
    if (n_real == 0) return out;
    const double w = 1.0 / n_real;
    for (int32_t id : ids) {
        if (id == kPadId) continue;
        if (id < 0 || id >= vocab_size) throw VocabError("one_hot_url: id out of range");
        auto it = std::find_if(out.begin(), out.end(),
                               [id](const auto& e) { return e.first == id; });
        if (it == out.end()) {
            out.emplace_back(id, w);
        } else {
            it->second += w;
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

NoiseSampler::NoiseSampler(std::span<const LabeledSequence> shard, double exponent) {
    struct TripleHash {
        std::size_t operator()(const TripleIds& t) const {
            uint64_t h = 1469598103934665603ull;
            for (int32_t v : t) {
                h ^= static_cast<uint64_t>(static_cast<uint32_t>(v));
                h *= 1099511628211ull;
            }
            return static_cast<std::size_t>(h);
        }
    };
    std::unordered_map<TripleIds, int64_t, TripleHash> counts;
    for (const LabeledSequence& rec : shard) {
        for (const TripleIds& url : rec.urls) {
            auto [it, inserted] = counts.try_emplace(url, 0);
            if (inserted) urls_.push_back(url);
            ++it->second;
        }
    }
    cumulative_.reserve(urls_.size());
    double total = 0.0;
    for (const TripleIds& url : urls_) {
        total += std::pow(static_cast<double>(counts.at(url)), exponent);
        cumulative_.push_back(total);
    }
}

const TripleIds& NoiseSampler::sample(Rng& rng) const {
    if (urls_.empty()) throw ConfigError("noise sampler over an empty shard");
    const double u = rng.uniform() * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    const std::size_t idx = std::min(
        static_cast<std::size_t>(it - cumulative_.begin()), urls_.size() - 1);
    return urls_[idx];
}

SgnsState SgnsState::like(const EmbeddingMatrix& tables, AdamConfig cfg) {
    SgnsState s;
    s.adam = cfg;
    s.target_state = AdamRowState::like(tables.target);
    s.context_state = AdamRowState::like(tables.context);
    return s;
}

namespace {

// Splits d loss / d url-vector back onto the constituent token rows.
void scatter_rows(CompositionMode mode, const TripleIds& ids, const VectorXd& grad_vec,
                  Eigen::Index d, std::vector<RowGrad>& out) {
    auto add = [&out](int32_t row, const Eigen::RowVectorXd& g) {
        for (RowGrad& rg : out) {
            if (rg.row == row) {
                rg.grad += g;
                return;
            }
        }
        out.push_back({row, g});
    };
    switch (mode) {
        case CompositionMode::DomainOnly:
            add(ids[0], grad_vec.transpose());
            break;
        case CompositionMode::TokenAvg:
            for (int i = 0; i < 3; ++i) add(ids[i], grad_vec.transpose() / 3.0);
            break;
        case CompositionMode::TokenConcat:
            for (int i = 0; i < 3; ++i) {
                add(ids[i], grad_vec.segment(i * d, d).transpose());
            }
            break;
    }
}

}  // namespace

SgnsGrads sgns_gradients(const TripleIds& target, const TripleIds& context, double label,
                         const EmbeddingMatrix& tables, CompositionMode mode) {
    const VectorXd x_t = compose_url_embedding(mode, target, tables.target);
    const VectorXd x_c = compose_url_embedding(mode, context, tables.context);
    const double p = sigmoid(x_c.dot(x_t));
    const BceResult bce = bce_loss(p, label);
    const double dz = bce.grad * p * (1.0 - p);

    SgnsGrads g;
    g.loss = bce.loss;
    scatter_rows(mode, target, dz * x_c, tables.dim(), g.target_rows);
    scatter_rows(mode, context, dz * x_t, tables.dim(), g.context_rows);
    return g;
}

double sgns_step(const TripleIds& target, const TripleIds& context, double label,
                 EmbeddingMatrix& tables, CompositionMode mode, SgnsState& state) {
    SgnsGrads g = sgns_gradients(target, context, label, tables, mode);
    for (const RowGrad& rg : g.target_rows) {
        adam_step_row(state.adam, state.target_state, tables.target, rg.row, rg.grad);
    }
    for (const RowGrad& rg : g.context_rows) {
        adam_step_row(state.adam, state.context_state, tables.context, rg.row, rg.grad);
    }
    return g.loss;
}

namespace {

// One full pass over one shard; returns (pair count, summed loss).
std::pair<int64_t, double> train_shard(const std::vector<LabeledSequence>& shard,
                                       const SkipGramConfig& cfg, CompositionMode mode,
                                       EmbeddingMatrix& tables, SgnsState& state, Rng& rng) {
    NoiseSampler noise(shard, cfg.noise_exponent);
    int64_t pairs = 0;
    double loss_sum = 0.0;
    if (noise.empty()) return {0, 0.0};
    for (const LabeledSequence& rec : shard) {
        generate_pairs(std::span<const TripleIds>(rec.urls), cfg, noise, rng,
                       [&](const PairExample& ex) {
                           loss_sum += sgns_step(ex.target, ex.context, ex.label, tables,
                                                 mode, state);
                           ++pairs;
                       });
    }
    return {pairs, loss_sum};
}

}  // namespace

EmbeddingTrainResult train_embeddings(const ShardedCorpus& corpus, const Vocab& vocab,
                                      const SkipGramConfig& cfg, CompositionMode mode,
                                      Eigen::Index dim, uint64_t seed,
                                      const ShardProgressFn& progress) {
    if (vocab.size() < kFirstRealId) throw VocabError("vocabulary is missing reserved rows");
    if (cfg.window < 1) throw ConfigError("window must be >= 1");
    if (cfg.negatives < 1) throw ConfigError("negatives must be >= 1");

    Rng rng(seed);
    EmbeddingTrainResult result;
    result.tables = EmbeddingMatrix::init(vocab.size(), dim, rng);
    const int n_shards = static_cast<int>(corpus.n_shards());
    if (n_shards == 0) return result;

    const int passes = cfg.shard_passes > 0 ? cfg.shard_passes : n_shards;
    result.shard_mean_loss.assign(static_cast<std::size_t>(passes), 0.0);

    SgnsState state = SgnsState::like(result.tables, AdamConfig{});

    if (cfg.threads <= 1) {
        for (int e = 0; e < passes; ++e) {
            const auto& shard = corpus.shards[static_cast<std::size_t>(e % n_shards)];
            auto [pairs, loss_sum] = train_shard(shard, cfg, mode, result.tables, state, rng);
            const double mean = pairs > 0 ? loss_sum / static_cast<double>(pairs) : 0.0;
            result.shard_mean_loss[static_cast<std::size_t>(e)] = mean;
            if (progress) progress(e, mean);
        }
        return result;
    }

    // Hogwild: workers share the tables and apply unsynchronized row updates.
    // Output is explicitly nondeterministic in this mode.
    std::vector<std::thread> workers;
    const int n_workers = std::min(cfg.threads, passes);
    for (int w = 0; w < n_workers; ++w) {
        workers.emplace_back([&, w]() {
            Rng worker_rng(seed + 1 + static_cast<uint64_t>(w));
            for (int e = w; e < passes; e += n_workers) {
                const auto& shard = corpus.shards[static_cast<std::size_t>(e % n_shards)];
                auto [pairs, loss_sum] =
                    train_shard(shard, cfg, mode, result.tables, state, worker_rng);
                result.shard_mean_loss[static_cast<std::size_t>(e)] =
                    pairs > 0 ? loss_sum / static_cast<double>(pairs) : 0.0;
            }
        });
    }
    for (auto& t : workers) t.join();
    if (progress) {
        for (int e = 0; e < passes; ++e) {
            progress(e, result.shard_mean_loss[static_cast<std::size_t>(e)]);
        }
    }
    return result;
}

std::vector<Neighbor> nearest_neighbors(int32_t query_id, const MatrixXd& table, int k) {
    if (k < 1) throw ConfigError("k must be >= 1");
    if (query_id < 0 || query_id >= table.rows()) throw VocabError("query id out of range");
    const double qnorm = table.row(query_id).norm();
    if (qnorm == 0.0) throw ZeroNorm("nearest_neighbors: query row has zero norm");

    std::vector<Neighbor> all;
    all.reserve(static_cast<std::size_t>(table.rows()));
    for (Eigen::Index r = 0; r < table.rows(); ++r) {
        if (r == query_id || r < kFirstRealId) continue;
        const double rnorm = table.row(r).norm();
        if (rnorm == 0.0) continue;
        all.push_back({static_cast<int32_t>(r),
                       table.row(query_id).dot(table.row(r)) / (qnorm * rnorm)});
    }
    std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.id < b.id;
    });
    if (static_cast<std::size_t>(k) < all.size()) all.resize(static_cast<std::size_t>(k));
    return all;
}

void export_embeddings(const MatrixXd& table, std::span<const std::string> tokens,
                       const std::string& path) {
    if (static_cast<Eigen::Index>(tokens.size()) != table.rows()) {
        throw ShapeError("export_embeddings: token count vs table rows");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);

    out << "token";
    for (Eigen::Index j = 0; j < table.cols(); ++j) out << "\tv" << (j + 1);
    out << '\n';

    char buf[64];
    for (Eigen::Index r = 0; r < table.rows(); ++r) {
        out << escape_field(tokens[static_cast<std::size_t>(r)]);
        for (Eigen::Index j = 0; j < table.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", table(r, j));
            out << '\t' << buf;
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

void export_embeddings(const MatrixXd& table, const Vocab& vocab, const std::string& path) {
    std::vector<std::string> tokens;
    tokens.reserve(static_cast<std::size_t>(vocab.size()));
    for (int32_t id = 0; id < vocab.size(); ++id) tokens.push_back(vocab.token_of(id));
    export_embeddings(table, tokens, path);
}

ImportedEmbeddings import_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);

    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": missing header");
    Eigen::Index d = 0;
    {
        std::size_t pos = line.find('\t');
        if (line.substr(0, pos) != "token") throw FormatError(path + ": bad header");
        while (pos != std::string::npos) {
            ++d;
            pos = line.find('\t', pos + 1);
        }
    }

    ImportedEmbeddings result;
    std::vector<double> values;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::size_t pos = line.find('\t');
        if (pos == std::string::npos && d > 0) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": missing values");
        }
        result.tokens.push_back(
            unescape_field(std::string_view(line).substr(0, std::min(pos, line.size()))));
        Eigen::Index got = 0;
        while (pos != std::string::npos) {
            std::size_t next = line.find('\t', pos + 1);
            std::size_t len = (next == std::string::npos ? line.size() : next) - pos - 1;
            try {
                values.push_back(std::stod(line.substr(pos + 1, len)));
            } catch (const std::exception&) {
                throw FormatError(path + ":" + std::to_string(lineno) + ": bad number");
            }
            ++got;
            pos = next;
        }
        if (got != d) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(d) + " values, got " + std::to_string(got));
        }
    }

    const Eigen::Index rows = static_cast<Eigen::Index>(result.tokens.size());
    result.table.resize(rows, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index j = 0; j < d; ++j) {
            result.table(r, j) = values[static_cast<std::size_t>(r * d + j)];
        }
    }
    require_finite(result.table, path);
    return result;
}

MatrixXd import_embeddings_for_vocab(const std::string& path, const Vocab& vocab) {
    ImportedEmbeddings imported = import_embeddings(path);
    if (static_cast<int32_t>(imported.tokens.size()) != vocab.size()) {
        throw FormatError(path + ": " + std::to_string(imported.tokens.size()) +
                          " rows but vocabulary has " + std::to_string(vocab.size()));
    }
    for (int32_t id = 0; id < vocab.size(); ++id) {
        if (imported.tokens[static_cast<std::size_t>(id)] != vocab.token_of(id)) {
            throw FormatError(path + ": row " + std::to_string(id) +
                              " does not match the vocabulary");
        }
    }
    return std::move(imported.table);
}

}  // namespace urlseq
