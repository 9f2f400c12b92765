#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "urlseq/common.hpp"

namespace urlseq {

inline constexpr int32_t kUnknownId = 0;
inline constexpr int32_t kRareId = 1;
inline constexpr int32_t kPadId = 2;
inline constexpr int32_t kFirstRealId = 3;

inline constexpr const char* kUnknownToken = "<unk>";
inline constexpr const char* kRareToken = "<rare>";
inline constexpr const char* kPadToken = "<pad>";

/// The at-most-three slash-delimited segments of a normalized URL, padded to
/// exactly three entries. Position 0 is the domain.
struct TokenTriple {
    std::array<std::string, 3> tokens;
    int n_real = 0;
};

using TripleIds = std::array<int32_t, 3>;

// Strips a leading http:// or https:// (case-insensitive), a leading www.,
// and trailing slashes. Surrounding whitespace is trimmed first; everything
// else is kept verbatim.
std::string normalize_url(std::string_view raw);

// Splits on '/', drops empty segments, keeps the first three, pads the rest.
TokenTriple tokenize_url(std::string_view normalized);

inline TokenTriple parse_url(std::string_view raw) {
    return tokenize_url(normalize_url(raw));
}

enum class VocabScope { AllPositions, DomainOnly };

/// Token -> dense id map with reserved rows for unknown/rare/pad. Immutable
/// once built; safe to share across threads.
class Vocab {
public:
    Vocab();

    int32_t id_of(const std::string& token) const;
    TripleIds lookup(const TokenTriple& triple) const;

    /// Total row count including the 3 reserved rows.
    int32_t size() const { return static_cast<int32_t>(tokens_.size()); }
    const std::string& token_of(int32_t id) const;
    int64_t freq_of(const std::string& token) const;

    int64_t rare_threshold() const { return rare_threshold_; }
    int64_t rare_token_count() const { return static_cast<int64_t>(rare_.size()); }
    int64_t rare_fold_occurrences() const { return rare_occurrences_; }

    void save_tsv(const std::string& path) const;
    static Vocab load_tsv(const std::string& path);

private:
    friend class VocabBuilder;

    std::vector<std::string> tokens_;               // id -> token, reserved first
    std::vector<int64_t> freqs_;                    // id -> count
    std::unordered_map<std::string, int32_t> ids_;  // retained tokens only
    std::unordered_map<std::string, int64_t> rare_; // counted but below threshold
    int64_t rare_threshold_ = 20;
    int64_t rare_occurrences_ = 0;
};

/// Streaming counter; feed triples, then finish() to freeze ids. Ids are
/// assigned in first-seen order so rebuilding from the same stream yields the
/// same map.
class VocabBuilder {
public:
    explicit VocabBuilder(int64_t rare_threshold = 20,
                          VocabScope scope = VocabScope::AllPositions);

    void add(const TokenTriple& triple);
    Vocab finish() &&;

private:
    int64_t rare_threshold_;
    VocabScope scope_;
    std::unordered_map<std::string, int64_t> counts_;
    std::vector<std::string> first_seen_;
};

Vocab build_vocab(std::span<const TokenTriple> corpus, int64_t rare_threshold = 20,
                  VocabScope scope = VocabScope::AllPositions);

}  // namespace urlseq
