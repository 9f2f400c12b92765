#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "urlseq/url_parsing.hpp"

namespace urlseq {

/// One input line: raw URL strings plus per-advertiser binary labels.
struct RawRecord {
    std::vector<std::string> urls;
    std::map<std::string, int> labels;
};

/// A record after vocabulary lookup: chronological id triples.
struct LabeledSequence {
    std::vector<TripleIds> urls;
    std::map<std::string, int> labels;
};

using WarnFn = std::function<void(const std::string&)>;

/// Streaming JSONL reader. Malformed lines are skipped (and counted); if more
/// than 10% of lines are malformed the stream throws CorruptDataset when it
/// reaches end of file.
class RecordReader {
public:
    explicit RecordReader(const std::string& path, WarnFn warn = nullptr);
    ~RecordReader();
    RecordReader(RecordReader&&) noexcept;
    RecordReader& operator=(RecordReader&&) noexcept;

    std::optional<RawRecord> next();

    int64_t total_lines() const { return total_lines_; }
    int64_t malformed_lines() const { return malformed_lines_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    WarnFn warn_;
    int64_t total_lines_ = 0;
    int64_t malformed_lines_ = 0;
    std::string path_;
};

LabeledSequence encode_record(const RawRecord& raw, const Vocab& vocab);

std::vector<RawRecord> load_raw_records(const std::string& path, WarnFn warn = nullptr);
std::vector<LabeledSequence> load_records(const std::string& path, const Vocab& vocab,
                                          WarnFn warn = nullptr);

/// Keeps the most recent max_len URLs (a suffix; order preserved).
LabeledSequence truncate_recent(const LabeledSequence& seq, std::size_t max_len = 500);

struct Batch {
    std::vector<std::size_t> indices;
    int n_pos = 0;
    int n_neg = 0;
};

/// Draws fixed-size batches with an exact 1:1 positive:negative ratio,
/// sampling with replacement from each class pool. Deterministic given
/// (seed, advertiser).
class BalancedBatchSampler {
public:
    BalancedBatchSampler(std::span<const LabeledSequence> records, const std::string& advertiser,
                         int batch_size, uint64_t seed);

    Batch next_batch();

private:
    std::span<const LabeledSequence> records_;
    std::string advertiser_;
    std::vector<std::size_t> positives_;
    std::vector<std::size_t> negatives_;
    int batch_size_;
    Rng rng_;
};

struct ShardedCorpus {
    std::vector<std::vector<LabeledSequence>> shards;

    std::size_t n_shards() const { return shards.size(); }
    std::size_t total_records() const;
};

ShardedCorpus shard_corpus(std::vector<LabeledSequence> records, int n_shards, uint64_t seed);

enum class LabelRule { CategoryAffinity, OrderSensitive };

struct SyntheticConfig {
    int n_categories = 8;
    int domains_per_category = 25;
    int n_users = 20000;        // representation split
    int n_train_users = -1;     // -1: same as n_users
    int n_test_users = -1;
    int n_advertisers = 2;
    int seq_len_min = 10;
    int seq_len_max = 30;
    double p_intra = 0.9;       // probability a draw stays in the home category
    int path_tokens_per_category = 12;
    LabelRule label_rule = LabelRule::CategoryAffinity;
    uint64_t seed = 1;
};

/// Ground truth of the generator, for oracle-style checks.
struct SyntheticTruth {
    std::vector<std::string> domains;        // index -> domain token
    std::vector<int> domain_category;        // index -> category
    std::vector<std::string> advertisers;    // advertiser names
    std::vector<int> advertiser_category;
    std::vector<std::string> trigger_domains;  // per advertiser; order rule only
};

struct SyntheticDataset {
    std::vector<RawRecord> rep;    // day d: representation learning
    std::vector<RawRecord> train;  // day d+1
    std::vector<RawRecord> test;   // day d+2
    SyntheticTruth truth;
};

SyntheticDataset generate_synthetic(const SyntheticConfig& config);

void write_jsonl(const std::vector<RawRecord>& records, const std::string& path);

}  // namespace urlseq
