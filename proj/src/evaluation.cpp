#include "urlseq/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

namespace urlseq {

namespace {

struct SweepGroup {
    int64_t tp;  // cumulative true positives at and above this threshold
    int64_t fp;
};

// Descending threshold sweep with tied scores grouped. Returns cumulative
// counts per group plus the class totals.
struct Sweep {
    std::vector<SweepGroup> groups;
    int64_t n_pos = 0;
    int64_t n_neg = 0;
};

Sweep sweep_thresholds(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
    if (scores.empty()) throw DegenerateLabels("no scores");

    Sweep sweep;
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });

    for (int label : labels) {
        if (label != 0 && label != 1) throw ConfigError("labels must be 0 or 1");
        label == 1 ? ++sweep.n_pos : ++sweep.n_neg;
    }
    if (sweep.n_pos == 0 || sweep.n_neg == 0) {
        throw DegenerateLabels("both classes must be present");
    }

    int64_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double threshold = scores[order[i]];
        while (i < order.size() && scores[order[i]] == threshold) {
            labels[order[i]] == 1 ? ++tp : ++fp;
            ++i;
        }
        sweep.groups.push_back({tp, fp});
    }
    return sweep;
}

}  // namespace

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
    const Sweep sweep = sweep_thresholds(scores, labels);
    RocCurve curve;
    curve.points.reserve(sweep.groups.size() + 1);
    curve.points.push_back({0.0, 0.0});
    for (const SweepGroup& g : sweep.groups) {
        curve.points.push_back({static_cast<double>(g.fp) / static_cast<double>(sweep.n_neg),
                                static_cast<double>(g.tp) / static_cast<double>(sweep.n_pos)});
    }
    return curve;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
    const Sweep sweep = sweep_thresholds(scores, labels);
    // Twice the trapezoid numerator in counts: sum of dFP * (TP_lo + TP_hi).
    // This equals 2*concordant + tied pairs, which makes the trapezoid area
    // identical to the rank statistic.
    int64_t num = 0;
    int64_t prev_tp = 0, prev_fp = 0;
    for (const SweepGroup& g : sweep.groups) {
        num += (g.fp - prev_fp) * (prev_tp + g.tp);
        prev_tp = g.tp;
        prev_fp = g.fp;
    }
    return static_cast<double>(num) / (2.0 * static_cast<double>(sweep.n_pos) *
                                       static_cast<double>(sweep.n_neg));
}

RocCurve average_roc(std::span<const RocCurve> curves, int grid_points) {
    if (curves.empty()) throw ConfigError("average_roc: no curves");
    if (grid_points < 2) throw ConfigError("average_roc: grid needs at least 2 points");

    RocCurve out;
    out.points.resize(static_cast<std::size_t>(grid_points));
    for (int gi = 0; gi < grid_points; ++gi) {
        const double g = static_cast<double>(gi) / static_cast<double>(grid_points - 1);
        double sum = 0.0;
        for (const RocCurve& curve : curves) {
            const auto& pts = curve.points;
            // last point with fpr <= g; ties on fpr resolve to the highest tpr
            std::size_t lo = 0;
            for (std::size_t i = 0; i < pts.size(); ++i) {
                if (pts[i].fpr <= g) lo = i;
            }
            double tpr;
            if (pts[lo].fpr == g || lo + 1 >= pts.size()) {
                tpr = pts[lo].tpr;
            } else {
                const RocPoint& a = pts[lo];
                const RocPoint& b = pts[lo + 1];
                tpr = a.tpr + (b.tpr - a.tpr) * (g - a.fpr) / (b.fpr - a.fpr);
            }
            sum += tpr;
        }
        out.points[static_cast<std::size_t>(gi)] = {g, sum / static_cast<double>(curves.size())};
    }
    return out;
}

std::vector<EvalSummary> EvalReport::summaries() const {
    std::map<std::pair<std::string, std::string>, std::vector<double>> grouped;
    for (const EvalCell& cell : cells) {
        grouped[{cell.advertiser, cell.model}].push_back(cell.auc_value);
    }
    std::vector<EvalSummary> out;
    for (const auto& [key, values] : grouped) {
        EvalSummary s;
        s.advertiser = key.first;
        s.model = key.second;
        s.n_seeds = static_cast<int>(values.size());
        s.mean_auc = std::accumulate(values.begin(), values.end(), 0.0) /
                     static_cast<double>(values.size());
        double sq = 0.0;
        for (double v : values) sq += (v - s.mean_auc) * (v - s.mean_auc);
        s.std_auc = std::sqrt(sq / static_cast<double>(values.size()));
        out.push_back(std::move(s));
    }
    return out;
}

Scored score_records(const ConversionModel& model, std::span<const LabeledSequence> records,
                     const std::string& advertiser, std::size_t max_seq_len) {
    Scored scored;
    for (const LabeledSequence& rec : records) {
        auto it = rec.labels.find(advertiser);
        if (it == rec.labels.end() || rec.urls.empty()) continue;
        const std::size_t n = std::min(rec.urls.size(), max_seq_len);
        std::span<const TripleIds> view(rec.urls.data() + (rec.urls.size() - n), n);
        scored.scores.push_back(predict_proba(model, view));
        scored.labels.push_back(it->second);
    }
    return scored;
}

EvalReport multi_seed_evaluate(const ModelSpec& spec, std::span<const LabeledSequence> train,
                               std::span<const LabeledSequence> test,
                               const std::string& advertiser, std::span<const uint64_t> seeds,
                               const TrainConfig& base, const CellSinkFn& sink) {
    if (seeds.empty()) throw ConfigError("multi_seed_evaluate: need at least one seed");
    EvalReport report;
    for (uint64_t seed : seeds) {
        TrainConfig cfg = base;
        cfg.seed = seed;
        ConversionModel model = make_model(spec.rep, spec.kind, cfg.dropout, seed);
        train_classifier(model, train, advertiser, cfg);

        const Scored scored = score_records(model, test, advertiser, cfg.max_seq_len);
        EvalCell cell;
        cell.advertiser = advertiser;
        cell.model = spec.name;
        cell.seed = seed;
        cell.auc_value = auc(scored.scores, scored.labels);
        cell.roc = roc_curve(scored.scores, scored.labels);
        if (sink) sink(model, cell);
        report.cells.push_back(std::move(cell));
    }
    return report;
}

std::string file_token(const std::string& name) {
    std::string out;
    out.reserve(name.size());
    for (char c : name) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '.' || c == '-';
        out += ok ? c : '_';
    }
    return out;
}

void export_report(const EvalReport& report, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);

    char buf[32];
    {
        std::ofstream out(fs::path(dir) / "auc.csv", std::ios::binary);
        if (!out) throw IoError("cannot write auc.csv in " + dir);
        out << "advertiser,model,seed,auc\n";
        for (const EvalCell& cell : report.cells) {
            std::snprintf(buf, sizeof(buf), "%.10f", cell.auc_value);
            out << cell.advertiser << ',' << cell.model << ',' << cell.seed << ',' << buf
                << '\n';
        }
        if (!out) throw IoError("write failed: auc.csv");
    }

    std::map<std::pair<std::string, std::string>, std::vector<RocCurve>> curves;
    for (const EvalCell& cell : report.cells) {
        curves[{cell.model, cell.advertiser}].push_back(cell.roc);
    }
    for (const auto& [key, group] : curves) {
        const RocCurve avg = average_roc(group);
        const std::string name = "roc_" + file_token(key.first) + "_" + file_token(key.second) +
                                 ".csv";
        std::ofstream out(fs::path(dir) / name, std::ios::binary);
        if (!out) throw IoError("cannot write " + name);
        out << "fpr,tpr\n";
        for (const RocPoint& p : avg.points) {
            std::snprintf(buf, sizeof(buf), "%.10f", p.fpr);
            out << buf;
            std::snprintf(buf, sizeof(buf), "%.10f", p.tpr);
            out << ',' << buf << '\n';
        }
        if (!out) throw IoError("write failed: " + name);
    }
}

}  // namespace urlseq
