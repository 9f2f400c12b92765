#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "urlseq/sequence_models.hpp"

namespace urlseq {

struct RocPoint {
    double fpr;
    double tpr;
};

/// Threshold-sweep ROC curve; starts at (0,0), ends at (1,1), both
/// coordinates non-decreasing. Tied scores collapse into one point.
struct RocCurve {
    std::vector<RocPoint> points;
};

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);

// Trapezoidal area under the ROC curve, computed in integer arithmetic so it
// equals the pairwise concordance statistic (ties counted 0.5) exactly.
double auc(std::span<const double> scores, std::span<const int> labels);

// Mean true-positive rate across curves on a fixed false-positive-rate grid.
RocCurve average_roc(std::span<const RocCurve> curves, int grid_points = 101);

struct EvalCell {
    std::string advertiser;
    std::string model;
    uint64_t seed = 0;
    double auc_value = 0.0;
    RocCurve roc;
};

struct EvalSummary {
    std::string advertiser;
    std::string model;
    double mean_auc = 0.0;
    double std_auc = 0.0;  // population standard deviation
    int n_seeds = 0;
};

struct EvalReport {
    std::vector<EvalCell> cells;
    std::vector<EvalSummary> summaries() const;
};

struct ModelSpec {
    Representation rep;
    MappingKind kind = MappingKind::Average;
    std::string name;
};

struct Scored {
    std::vector<double> scores;
    std::vector<int> labels;
};

Scored score_records(const ConversionModel& model, std::span<const LabeledSequence> records,
                     const std::string& advertiser, std::size_t max_seq_len);

using CellSinkFn = std::function<void(const ConversionModel&, const EvalCell&)>;

// Trains and evaluates one (advertiser, model) cell per seed.
EvalReport multi_seed_evaluate(const ModelSpec& spec, std::span<const LabeledSequence> train,
                               std::span<const LabeledSequence> test,
                               const std::string& advertiser, std::span<const uint64_t> seeds,
                               const TrainConfig& base, const CellSinkFn& sink = nullptr);

// Writes auc.csv plus one seed-averaged ROC file per (model, advertiser).
void export_report(const EvalReport& report, const std::string& dir);

std::string file_token(const std::string& name);

}  // namespace urlseq
