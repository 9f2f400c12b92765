#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace urlseq {

// Error taxonomy. Every failure a caller is expected to distinguish gets its
// own type so call sites and tests can match on it.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidUrl : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct CorruptDataset : Error { using Error::Error; };
struct DegenerateLabels : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct EmptySequence : Error { using Error::Error; };
struct VocabError : Error { using Error::Error; };
struct ZeroNorm : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };

// Deterministic random source. mt19937_64 has a fixed algorithm in the
// standard; the distributions below are hand-rolled because the standard
// library ones are implementation-defined and would break reproducibility
// guarantees across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
};

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// TSV fields: tokens come from arbitrary logs, so tabs/newlines/backslashes
// are escaped on write and restored on read.
std::string escape_field(std::string_view s);
std::string unescape_field(std::string_view s);

}  // namespace urlseq
