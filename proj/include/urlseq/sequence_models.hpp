#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "urlseq/dataset.hpp"
#include "urlseq/embeddings.hpp"
#include "urlseq/nn.hpp"

namespace urlseq {

enum class MappingKind { Average, Dense, Lstm };

inline constexpr Eigen::Index kDenseUnits = 30;
inline constexpr Eigen::Index kLstmUnits = 10;

/// How a URL id triple becomes a vector: a learned token table with a
/// composition mode, or the one-hot baseline.
struct Representation {
    enum class Kind { OneHot, Embedding };

    Kind kind = Kind::Embedding;
    const MatrixXd* table = nullptr;  // target table; not owned
    CompositionMode mode = CompositionMode::TokenAvg;
    int32_t vocab_size = 0;
    // Non-linear mappings over the one-hot encoding are possible but not part
    // of the standard model set; they stay off unless explicitly enabled.
    bool allow_onehot_nonlinear = false;

    Eigen::Index url_dim() const;

    static Representation embedding(const MatrixXd& table, CompositionMode mode);
    static Representation one_hot(int32_t vocab_size);
};

struct ConversionModel {
    Representation rep;
    MappingKind kind = MappingKind::Average;
    DenseParams mapping;     // Dense kind only (kDenseUnits x url_dim)
    LstmParams lstm;         // Lstm kind only (kLstmUnits)
    DenseParams classifier;  // 1 x mapped_dim, sigmoid output
    double dropout = 0.0;

    Eigen::Index mapped_dim() const;
};

ConversionModel make_model(const Representation& rep, MappingKind kind, double dropout,
                           uint64_t seed);

std::vector<VectorXd> embed_sequence(std::span<const TripleIds> urls,
                                     const Representation& rep);

VectorXd map_average(std::span<const VectorXd> xs);
VectorXd map_dense(std::span<const VectorXd> xs, const DenseParams& params, double dropout_rate,
                   DropoutMode mode, Rng* rng);
VectorXd map_lstm(std::span<const VectorXd> xs, const LstmParams& params, double dropout_rate,
                  DropoutMode mode, Rng* rng);

double predict_proba(const ConversionModel& model, std::span<const TripleIds> urls);

/// Pre-sampled dropout multipliers for one example. LSTM masks are sampled
/// once per sequence and reused at every timestep.
struct DropoutMasks {
    VectorXd dense;
    VectorXd lstm_input;
    VectorXd lstm_recur;
};

DropoutMasks sample_masks(const ConversionModel& model, Rng& rng);

struct ModelGrads {
    MatrixXd mapping_w;
    VectorXd mapping_b;
    MatrixXd lstm_w, lstm_u;
    VectorXd lstm_b;
    MatrixXd classifier_w;
    VectorXd classifier_b;

    static ModelGrads zeros_like(const ConversionModel& model);
    void set_zero();
};

// Loss of one example; when grads is non-null, accumulates scale * gradient
// for every trainable parameter. masks == nullptr disables dropout.
double example_loss_and_grads(const ConversionModel& model, std::span<const TripleIds> urls,
                              double label, const DropoutMasks* masks, ModelGrads* grads,
                              double scale);

struct TrainConfig {
    int epochs = 100;
    int steps_per_epoch = 100;
    int batch_size = 64;
    double dropout = 0.5;
    uint64_t seed = 0;
    std::size_t max_seq_len = 500;
};

struct TrainResult {
    std::vector<double> epoch_mean_loss;
    int64_t total_steps = 0;
    int64_t balanced_batches = 0;  // batches with an exact 50/50 class split
    bool all_batches_balanced = true;
};

using EpochProgressFn = std::function<void(int epoch, double mean_loss)>;

// Trains mapping and classifier parameters on balanced batches; the
// representation is read-only throughout.
TrainResult train_classifier(ConversionModel& model, std::span<const LabeledSequence> train,
                             const std::string& advertiser, const TrainConfig& cfg,
                             const EpochProgressFn& progress = nullptr);

void save_model(const ConversionModel& model, const std::string& path);

/// Loads parameters and structure; the embedding table is stored separately
/// and must be re-attached for embedding representations.
ConversionModel load_model(const std::string& path);
void attach_representation(ConversionModel& model, const MatrixXd& table);

}  // namespace urlseq
