#include "urlseq/url_parsing.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace urlseq {

namespace {

bool starts_with_ci(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[i])) !=
            std::tolower(static_cast<unsigned char>(prefix[i]))) {
            return false;
        }
    }
    return true;
}

std::string_view trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

std::string escape_field(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\t': out += "\\t"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            default: out += c;
        }
    }
    return out;
}

std::string unescape_field(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            ++i;
            switch (s[i]) {
                case '\\': out += '\\'; break;
                case 't': out += '\t'; break;
                case 'n': out += '\n'; break;
                case 'r': out += '\r'; break;
                default: out += '\\'; out += s[i];
            }
        } else {
            out += s[i];
        }
    }
    return out;
}

std::string normalize_url(std::string_view raw) {
    std::string_view s = trim(raw);
    if (s.empty()) throw InvalidUrl("empty URL");

    if (starts_with_ci(s, "https://")) {
        s.remove_prefix(8);
    } else if (starts_with_ci(s, "http://")) {
        s.remove_prefix(7);
    }
    if (starts_with_ci(s, "www.")) {
        s.remove_prefix(4);
    }
    while (!s.empty() && s.back() == '/') {
        s.remove_suffix(1);
    }
    if (s.empty()) throw InvalidUrl("URL empty after normalization: '" + std::string(raw) + "'");
    return std::string(s);
}

TokenTriple tokenize_url(std::string_view normalized) {
    TokenTriple triple;
    triple.tokens = {kPadToken, kPadToken, kPadToken};

    int n = 0;
    std::size_t pos = 0;
    while (pos <= normalized.size() && n < 3) {
        std::size_t next = normalized.find('/', pos);
        if (next == std::string_view::npos) next = normalized.size();
        if (next > pos) {
            triple.tokens[n++] = std::string(normalized.substr(pos, next - pos));
        }
        pos = next + 1;
    }
    if (n == 0) throw InvalidUrl("URL has no tokens: '" + std::string(normalized) + "'");
    triple.n_real = n;
    return triple;
}

Vocab::Vocab() {
    tokens_ = {kUnknownToken, kRareToken, kPadToken};
    freqs_ = {0, 0, 0};
}

int32_t Vocab::id_of(const std::string& token) const {
    if (token == kPadToken) return kPadId;
    if (auto it = ids_.find(token); it != ids_.end()) return it->second;
    if (rare_.contains(token)) return kRareId;
    return kUnknownId;
}

TripleIds Vocab::lookup(const TokenTriple& triple) const {
    return {id_of(triple.tokens[0]), id_of(triple.tokens[1]), id_of(triple.tokens[2])};
}

const std::string& Vocab::token_of(int32_t id) const {
    if (id < 0 || id >= size()) throw VocabError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
}

int64_t Vocab::freq_of(const std::string& token) const {
    if (auto it = ids_.find(token); it != ids_.end()) {
        return freqs_[static_cast<std::size_t>(it->second)];
    }
    if (auto it = rare_.find(token); it != rare_.end()) return it->second;
    return 0;
}

VocabBuilder::VocabBuilder(int64_t rare_threshold, VocabScope scope)
    : rare_threshold_(rare_threshold), scope_(scope) {
    if (rare_threshold < 1) throw ConfigError("rare_threshold must be >= 1");
}

void VocabBuilder::add(const TokenTriple& triple) {
    const int limit = scope_ == VocabScope::DomainOnly ? 1 : 3;
    for (int i = 0; i < limit && i < triple.n_real; ++i) {
        const std::string& tok = triple.tokens[static_cast<std::size_t>(i)];
        if (tok == kPadToken) continue;
        auto [it, inserted] = counts_.try_emplace(tok, 0);
        if (inserted) first_seen_.push_back(tok);
        ++it->second;
    }
}

Vocab VocabBuilder::finish() && {
    Vocab v;
    v.rare_threshold_ = rare_threshold_;
    for (const std::string& tok : first_seen_) {
        int64_t count = counts_.at(tok);
        if (count >= rare_threshold_) {
            v.ids_.emplace(tok, static_cast<int32_t>(v.tokens_.size()));
            v.tokens_.push_back(tok);
            v.freqs_.push_back(count);
        } else {
            v.rare_.emplace(tok, count);
            v.rare_occurrences_ += count;
        }
    }
    return v;
}

Vocab build_vocab(std::span<const TokenTriple> corpus, int64_t rare_threshold, VocabScope scope) {
    VocabBuilder builder(rare_threshold, scope);
    for (const TokenTriple& t : corpus) builder.add(t);
    return std::move(builder).finish();
}

void Vocab::save_tsv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (int32_t id = 0; id < size(); ++id) {
        out << escape_field(tokens_[static_cast<std::size_t>(id)]) << '\t' << id << '\t'
            << freqs_[static_cast<std::size_t>(id)] << '\n';
    }
    // Rare tokens keep their counts but all map to the RARE id.
    std::vector<std::pair<std::string, int64_t>> rare(rare_.begin(), rare_.end());
    std::sort(rare.begin(), rare.end());
    for (const auto& [tok, count] : rare) {
        out << escape_field(tok) << '\t' << kRareId << '\t' << count << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

Vocab Vocab::load_tsv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);

    Vocab v;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::size_t t1 = line.find('\t');
        std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": expected 3 fields");
        }
        std::string token = unescape_field(std::string_view(line).substr(0, t1));
        int32_t id = 0;
        int64_t freq = 0;
        try {
            id = static_cast<int32_t>(std::stol(line.substr(t1 + 1, t2 - t1 - 1)));
            freq = std::stoll(line.substr(t2 + 1));
        } catch (const std::exception&) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": bad id/freq");
        }

        if (lineno <= 3) {
            if (id != lineno - 1) {
                throw FormatError(path + ": reserved rows must come first in id order");
            }
            continue;  // sentinels are fixed by construction
        }
        if (id == kRareId) {
            v.rare_.emplace(token, freq);
            v.rare_occurrences_ += freq;
        } else if (id == v.size()) {
            v.ids_.emplace(token, id);
            v.tokens_.push_back(token);
            v.freqs_.push_back(freq);
        } else {
            throw FormatError(path + ":" + std::to_string(lineno) + ": ids must be dense");
        }
    }
    if (lineno < 3) throw FormatError(path + ": missing reserved rows");
    return v;
}

}  // namespace urlseq
