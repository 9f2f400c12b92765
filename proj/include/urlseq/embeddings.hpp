#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "urlseq/dataset.hpp"
#include "urlseq/nn.hpp"
#include "urlseq/url_parsing.hpp"

namespace urlseq {

enum class CompositionMode { DomainOnly, TokenAvg, TokenConcat };

inline Eigen::Index url_vector_dim(CompositionMode mode, Eigen::Index d) {
    return mode == CompositionMode::TokenConcat ? 3 * d : d;
}

/// Target and context token tables. Row order: unknown, rare, pad, then the
/// vocabulary ids. The target table is the representation of record.
struct EmbeddingMatrix {
    MatrixXd target;
    MatrixXd context;

    Eigen::Index dim() const { return target.cols(); }
    Eigen::Index rows() const { return target.rows(); }

    static EmbeddingMatrix init(Eigen::Index n_tokens, Eigen::Index d, Rng& rng);
};

VectorXd compose_url_embedding(CompositionMode mode, const TripleIds& ids,
                               const MatrixXd& table);

/// Sparse vector as (index, value) pairs, sorted by index, indices unique.
using SparseVec = std::vector<std::pair<int32_t, double>>;

// Average of the one-hot vectors of the non-pad tokens; at most 3 entries.
SparseVec one_hot_url(const TripleIds& ids, int32_t vocab_size);

struct SkipGramConfig {
    int window = 5;
    int negatives = 4;           // noise pairs per positive pair
    double noise_exponent = 0.75;
    int shard_passes = 0;        // 0: one pass per shard
    int threads = 1;             // >1: hogwild, nondeterministic
};

struct PairExample {
    TripleIds target;
    TripleIds context;
    double label;
};

/// Unigram^exponent distribution over the distinct URLs of one shard.
class NoiseSampler {
public:
    NoiseSampler(std::span<const LabeledSequence> shard, double exponent);

    bool empty() const { return urls_.empty(); }
    const TripleIds& sample(Rng& rng) const;
    const std::vector<TripleIds>& support() const { return urls_; }

private:
    std::vector<TripleIds> urls_;       // first-seen order
    std::vector<double> cumulative_;
};

// Emits, for every in-window (target, context) pair, one positive example
// followed by `negatives` noise examples. Sequences shorter than 2 produce
// nothing.
template <typename Emit>
void generate_pairs(std::span<const TripleIds> seq, const SkipGramConfig& cfg,
                    const NoiseSampler& noise, Rng& rng, Emit&& emit) {
    if (seq.size() < 2) return;
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(seq.size());
    for (std::ptrdiff_t t = 0; t < n; ++t) {
        for (int j = -cfg.window; j <= cfg.window; ++j) {
            if (j == 0) continue;
            const std::ptrdiff_t u = t + j;
            if (u < 0 || u >= n) continue;
            emit(PairExample{seq[static_cast<std::size_t>(t)],
                             seq[static_cast<std::size_t>(u)], 1.0});
            for (int k = 0; k < cfg.negatives; ++k) {
                emit(PairExample{seq[static_cast<std::size_t>(t)], noise.sample(rng), 0.0});
            }
        }
    }
}

struct SgnsState {
    AdamConfig adam;
    AdamRowState target_state;
    AdamRowState context_state;

    static SgnsState like(const EmbeddingMatrix& tables, AdamConfig cfg = {});
};

struct RowGrad {
    int32_t row;
    Eigen::RowVectorXd grad;
};

struct SgnsGrads {
    double loss = 0.0;
    std::vector<RowGrad> target_rows;
    std::vector<RowGrad> context_rows;
};

// Loss and per-row gradients of one (target, context, label) example, without
// touching the tables.
SgnsGrads sgns_gradients(const TripleIds& target, const TripleIds& context, double label,
                         const EmbeddingMatrix& tables, CompositionMode mode);

// One online update: gradients plus an Adam step on exactly the touched rows.
double sgns_step(const TripleIds& target, const TripleIds& context, double label,
                 EmbeddingMatrix& tables, CompositionMode mode, SgnsState& state);

struct EmbeddingTrainResult {
    EmbeddingMatrix tables;
    std::vector<double> shard_mean_loss;  // one entry per shard visit
};

using ShardProgressFn = std::function<void(int shard_visit, double mean_loss)>;

EmbeddingTrainResult train_embeddings(const ShardedCorpus& corpus, const Vocab& vocab,
                                      const SkipGramConfig& cfg, CompositionMode mode,
                                      Eigen::Index dim, uint64_t seed,
                                      const ShardProgressFn& progress = nullptr);

template <typename A, typename B>
double cosine_similarity(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    const double na = a.derived().norm();
    const double nb = b.derived().norm();
    if (na == 0.0 || nb == 0.0) throw ZeroNorm("cosine_similarity: zero vector");
    return a.derived().dot(b.derived()) / (na * nb);
}

struct Neighbor {
    int32_t id;
    double similarity;
};

// Top-k rows by cosine similarity to the query row, excluding the query and
// the three reserved rows. Ties break toward the lower id. Zero-norm rows are
// skipped.
std::vector<Neighbor> nearest_neighbors(int32_t query_id, const MatrixXd& table, int k);

void export_embeddings(const MatrixXd& table, std::span<const std::string> tokens,
                       const std::string& path);
void export_embeddings(const MatrixXd& table, const Vocab& vocab, const std::string& path);

struct ImportedEmbeddings {
    std::vector<std::string> tokens;
    MatrixXd table;
};

ImportedEmbeddings import_embeddings(const std::string& path);
MatrixXd import_embeddings_for_vocab(const std::string& path, const Vocab& vocab);

}  // namespace urlseq
