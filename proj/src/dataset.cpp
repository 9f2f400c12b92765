#include "urlseq/dataset.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace urlseq {

using nlohmann::json;

struct RecordReader::Impl {
    std::ifstream in;
};

RecordReader::RecordReader(const std::string& path, WarnFn warn)
    : impl_(std::make_unique<Impl>()), warn_(std::move(warn)), path_(path) {
    impl_->in.open(path, std::ios::binary);
    if (!impl_->in) throw IoError("cannot open: " + path);
}

RecordReader::~RecordReader() = default;
RecordReader::RecordReader(RecordReader&&) noexcept = default;
RecordReader& RecordReader::operator=(RecordReader&&) noexcept = default;

namespace {

std::optional<RawRecord> parse_record_line(const std::string& line, std::string* why) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        *why = "not a JSON object";
        return std::nullopt;
    }
    if (!j.contains("urls") || !j["urls"].is_array()) {
        *why = "missing or invalid 'urls'";
        return std::nullopt;
    }
    if (!j.contains("labels") || !j["labels"].is_object() || j["labels"].empty()) {
        *why = "missing or invalid 'labels'";
        return std::nullopt;
    }
    RawRecord rec;
    for (const auto& u : j["urls"]) {
        if (!u.is_string()) {
            *why = "'urls' entry is not a string";
            return std::nullopt;
        }
        rec.urls.push_back(u.get<std::string>());
    }
    if (rec.urls.empty()) {
        *why = "'urls' is empty";
        return std::nullopt;
    }
    for (const auto& [key, value] : j["labels"].items()) {
        if (!value.is_number_integer() || (value.get<int>() != 0 && value.get<int>() != 1)) {
            *why = "label values must be 0 or 1";
            return std::nullopt;
        }
        rec.labels[key] = value.get<int>();
    }
    return rec;
}

}  // namespace

std::optional<RawRecord> RecordReader::next() {
    std::string line;
    while (std::getline(impl_->in, line)) {
        if (line.empty()) continue;
        ++total_lines_;
        std::string why;
        if (auto rec = parse_record_line(line, &why)) return rec;
        ++malformed_lines_;
        if (warn_) warn_(path_ + " line " + std::to_string(total_lines_) + ": " + why);
    }
    if (total_lines_ > 0 && malformed_lines_ * 10 > total_lines_) {
        throw CorruptDataset(path_ + ": " + std::to_string(malformed_lines_) + " of " +
                             std::to_string(total_lines_) + " lines malformed");
    }
    return std::nullopt;
}

LabeledSequence encode_record(const RawRecord& raw, const Vocab& vocab) {
    LabeledSequence seq;
    seq.labels = raw.labels;
    seq.urls.reserve(raw.urls.size());
    for (const std::string& url : raw.urls) {
        try {
            seq.urls.push_back(vocab.lookup(parse_url(url)));
        } catch (const InvalidUrl&) {
            // unusable URL inside an otherwise valid record; drop it
        }
    }
    return seq;
}

std::vector<RawRecord> load_raw_records(const std::string& path, WarnFn warn) {
    RecordReader reader(path, warn);
    std::vector<RawRecord> out;
    while (auto rec = reader.next()) out.push_back(std::move(*rec));
    return out;
}

std::vector<LabeledSequence> load_records(const std::string& path, const Vocab& vocab,
                                          WarnFn warn) {
    RecordReader reader(path, warn);
    std::vector<LabeledSequence> out;
    while (auto rec = reader.next()) {
        LabeledSequence seq = encode_record(*rec, vocab);
        if (seq.urls.empty()) {
            if (warn) warn(path + ": record with no parseable URLs skipped");
            continue;
        }
        out.push_back(std::move(seq));
    }
    return out;
}

LabeledSequence truncate_recent(const LabeledSequence& seq, std::size_t max_len) {
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
    if (seq.urls.size() <= max_len) return seq;
    LabeledSequence out;
    out.labels = seq.labels;
    out.urls.assign(seq.urls.end() - static_cast<std::ptrdiff_t>(max_len), seq.urls.end());
    return out;
}

BalancedBatchSampler::BalancedBatchSampler(std::span<const LabeledSequence> records,
                                           const std::string& advertiser, int batch_size,
                                           uint64_t seed)
    : records_(records), advertiser_(advertiser), batch_size_(batch_size),
      rng_(seed ^ fnv1a(advertiser)) {
    if (batch_size < 2 || batch_size % 2 != 0) {
        throw ConfigError("batch_size must be even and >= 2, got " + std::to_string(batch_size));
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto it = records[i].labels.find(advertiser);
        if (it == records[i].labels.end()) continue;
        (it->second == 1 ? positives_ : negatives_).push_back(i);
    }
    if (positives_.empty() || negatives_.empty()) {
        throw DegenerateLabels("advertiser '" + advertiser + "' has " +
                               std::to_string(positives_.size()) + " positives and " +
                               std::to_string(negatives_.size()) + " negatives");
    }
}

Batch BalancedBatchSampler::next_batch() {
    Batch batch;
    const int half = batch_size_ / 2;
    batch.indices.reserve(static_cast<std::size_t>(batch_size_));
    for (int i = 0; i < half; ++i) batch.indices.push_back(positives_[rng_.index(positives_.size())]);
    for (int i = 0; i < half; ++i) batch.indices.push_back(negatives_[rng_.index(negatives_.size())]);
    rng_.shuffle(batch.indices);
    // counted from the labels themselves, not trusted by construction
    for (std::size_t idx : batch.indices) {
        records_[idx].labels.at(advertiser_) == 1 ? ++batch.n_pos : ++batch.n_neg;
    }
    return batch;
}

std::size_t ShardedCorpus::total_records() const {
    std::size_t n = 0;
    for (const auto& s : shards) n += s.size();
    return n;
}

ShardedCorpus shard_corpus(std::vector<LabeledSequence> records, int n_shards, uint64_t seed) {
    if (n_shards < 1) throw ConfigError("n_shards must be >= 1");
    Rng rng(seed);
    rng.shuffle(records);
    ShardedCorpus corpus;
    corpus.shards.resize(static_cast<std::size_t>(n_shards));
    for (std::size_t i = 0; i < records.size(); ++i) {
        corpus.shards[i % static_cast<std::size_t>(n_shards)].push_back(std::move(records[i]));
    }
    return corpus;
}

namespace {

struct Generator {
    const SyntheticConfig& cfg;
    const SyntheticTruth& truth;
    Rng& rng;

    // logical URL: a domain plus path segments, before scheme/www decoration
    struct LogicalUrl {
        std::string domain;
        std::vector<std::string> segments;
        int category = -1;  // -1 for trigger domains
    };

    LogicalUrl draw_url(int home_category) {
        int cat = home_category;
        if (cfg.n_categories > 1 && !rng.bernoulli(cfg.p_intra)) {
            std::size_t other = rng.index(static_cast<std::size_t>(cfg.n_categories - 1));
            cat = static_cast<int>(other) + (static_cast<int>(other) >= home_category ? 1 : 0);
        }
        std::size_t within = rng.index(static_cast<std::size_t>(cfg.domains_per_category));
        std::size_t dom = static_cast<std::size_t>(cat) *
                              static_cast<std::size_t>(cfg.domains_per_category) + within;

        LogicalUrl url;
        url.domain = truth.domains[dom];
        url.category = cat;
        double shape = rng.uniform();
        int n_segs = shape < 0.4 ? 0 : (shape < 0.7 ? 1 : 2);
        for (int s = 0; s < n_segs; ++s) {
            std::size_t tok = rng.index(static_cast<std::size_t>(cfg.path_tokens_per_category));
            url.segments.push_back("cat" + std::to_string(cat) + "-sec" + std::to_string(tok));
        }
        return url;
    }

    std::string decorate(const LogicalUrl& url) {
        std::string text;
        double scheme = rng.uniform();
        if (scheme < 0.5) {
            text += "https://";
        } else if (scheme < 0.7) {
            text += "http://";
        }
        if (rng.uniform() < 0.2) text += "www.";
        text += url.domain;
        for (const std::string& seg : url.segments) {
            text += '/';
            text += seg;
        }
        return text;
    }
};

std::vector<RawRecord> generate_split(const SyntheticConfig& cfg, const SyntheticTruth& truth,
                                      int n_users, Rng& rng) {
    Generator gen{cfg, truth, rng};
    std::vector<RawRecord> out;
    out.reserve(static_cast<std::size_t>(n_users));

    for (int u = 0; u < n_users; ++u) {
        int len = cfg.seq_len_min +
                  static_cast<int>(rng.index(static_cast<std::size_t>(
                      cfg.seq_len_max - cfg.seq_len_min + 1)));
        int home = static_cast<int>(rng.index(static_cast<std::size_t>(cfg.n_categories)));

        std::vector<Generator::LogicalUrl> seq;
        seq.reserve(static_cast<std::size_t>(len));
        for (int t = 0; t < len; ++t) seq.push_back(gen.draw_url(home));

        RawRecord rec;
        if (cfg.label_rule == LabelRule::CategoryAffinity) {
            for (std::size_t a = 0; a < truth.advertisers.size(); ++a) {
                rec.labels[truth.advertisers[a]] = truth.advertiser_category[a] == home ? 1 : 0;
            }
        } else {
            // Plant each advertiser's trigger once: half the time inside the
            // final quarter (label 1), half the time earlier (label 0).
            // Presence and count carry no signal; only position does.
            const int quarter = len / 4;
            std::vector<int> used;
            auto taken = [&used](int p) {
                return std::find(used.begin(), used.end(), p) != used.end();
            };
            for (std::size_t a = 0; a < truth.advertisers.size(); ++a) {
                bool late = rng.bernoulli(0.5);
                int lo = late ? len - quarter : 0;
                int span = late ? quarter : len - quarter;
                int pos = lo + static_cast<int>(rng.index(static_cast<std::size_t>(span)));
                for (int probe = 0; taken(pos) && probe < span; ++probe) {
                    pos = lo + (pos - lo + 1) % span;
                }
                if (taken(pos)) {
                    // preferred range full; any free slot will do, the label
                    // is read off the realized sequence either way
                    for (int q = 0; q < len; ++q) {
                        if (!taken(q)) {
                            pos = q;
                            break;
                        }
                    }
                }
                used.push_back(pos);
                seq[static_cast<std::size_t>(pos)] =
                    Generator::LogicalUrl{truth.trigger_domains[a], {}, -1};
            }
            for (std::size_t a = 0; a < truth.advertisers.size(); ++a) {
                int label = 0;
                for (int t = len - quarter; t < len; ++t) {
                    if (seq[static_cast<std::size_t>(t)].domain == truth.trigger_domains[a]) {
                        label = 1;
                        break;
                    }
                }
                rec.labels[truth.advertisers[a]] = label;
            }
        }

        rec.urls.reserve(seq.size());
        for (const auto& url : seq) rec.urls.push_back(gen.decorate(url));
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.n_categories < 1 || cfg.domains_per_category < 1 || cfg.n_users < 1 ||
        cfg.n_advertisers < 1 || cfg.path_tokens_per_category < 1) {
        throw ConfigError("synthetic config counts must be >= 1");
    }
    if (cfg.seq_len_min < 1 || cfg.seq_len_max < cfg.seq_len_min) {
        throw ConfigError("invalid seq_len range");
    }
    if (cfg.p_intra < 0.0 || cfg.p_intra > 1.0) throw ConfigError("p_intra must be in [0,1]");
    if (cfg.label_rule == LabelRule::OrderSensitive) {
        if (cfg.seq_len_min < 4) throw ConfigError("order-sensitive rule needs seq_len_min >= 4");
        if (cfg.n_advertisers > cfg.seq_len_min / 2) {
            throw ConfigError("order-sensitive rule needs n_advertisers <= seq_len_min / 2");
        }
    }

    SyntheticDataset ds;
    SyntheticTruth& truth = ds.truth;
    for (int c = 0; c < cfg.n_categories; ++c) {
        for (int j = 0; j < cfg.domains_per_category; ++j) {
            truth.domains.push_back("cat" + std::to_string(c) + "-site" + std::to_string(j) +
                                    ".test");
            truth.domain_category.push_back(c);
        }
    }
    for (int a = 0; a < cfg.n_advertisers; ++a) {
        truth.advertisers.push_back("adv" + std::to_string(a));
        truth.advertiser_category.push_back(a % cfg.n_categories);
        truth.trigger_domains.push_back("trigger-adv" + std::to_string(a) + ".test");
    }

    Rng rng(cfg.seed);
    const int n_train = cfg.n_train_users > 0 ? cfg.n_train_users : cfg.n_users;
    const int n_test = cfg.n_test_users > 0 ? cfg.n_test_users : cfg.n_users;
    ds.rep = generate_split(cfg, truth, cfg.n_users, rng);
    ds.train = generate_split(cfg, truth, n_train, rng);
    ds.test = generate_split(cfg, truth, n_test, rng);
    return ds;
}

void write_jsonl(const std::vector<RawRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const RawRecord& rec : records) {
        json j;
        j["urls"] = rec.urls;
        j["labels"] = rec.labels;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace urlseq
