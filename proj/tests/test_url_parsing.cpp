#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "urlseq/url_parsing.hpp"

using namespace urlseq;

TEST_CASE("normalize_url strips scheme, www and trailing slash") {
    CHECK(normalize_url("https://en.wikipedia.org/wiki/Main_Page") ==
          "en.wikipedia.org/wiki/Main_Page");
    CHECK(normalize_url("http://www.sport.fr/") == "sport.fr");
    CHECK(normalize_url("example.org") == "example.org");
    CHECK(normalize_url("HTTPS://Example.org/Path") == "Example.org/Path");
    CHECK(normalize_url("WWW.example.org") == "example.org");
    CHECK(normalize_url("  padded.org  ") == "padded.org");
    CHECK(normalize_url("a.fr//") == "a.fr");
}

TEST_CASE("normalize_url rejects empty input") {
    CHECK_THROWS_AS(normalize_url(""), InvalidUrl);
    CHECK_THROWS_AS(normalize_url("   "), InvalidUrl);
    CHECK_THROWS_AS(normalize_url("http://"), InvalidUrl);
    CHECK_THROWS_AS(normalize_url("https://www./"), InvalidUrl);
}

TEST_CASE("tokenize_url splits on slash and pads to three") {
    TokenTriple t = tokenize_url("en.wikipedia.org/wiki/Main_Page");
    CHECK(t.tokens[0] == "en.wikipedia.org");
    CHECK(t.tokens[1] == "wiki");
    CHECK(t.tokens[2] == "Main_Page");
    CHECK(t.n_real == 3);

    t = tokenize_url("en.wikipedia.org");
    CHECK(t.tokens[0] == "en.wikipedia.org");
    CHECK(t.tokens[1] == kPadToken);
    CHECK(t.tokens[2] == kPadToken);
    CHECK(t.n_real == 1);

    t = tokenize_url("a/b/c/d/e");
    CHECK(t.tokens == std::array<std::string, 3>{"a", "b", "c"});
    CHECK(t.n_real == 3);

    // empty segments are dropped, not padded mid-URL
    t = tokenize_url("a.fr//x");
    CHECK(t.tokens[0] == "a.fr");
    CHECK(t.tokens[1] == "x");
    CHECK(t.n_real == 2);

    CHECK_THROWS_AS(tokenize_url("///"), InvalidUrl);
}

TEST_CASE("query strings stay inside their segment") {
    TokenTriple t = parse_url("https://shop.fr/search?q=1#frag");
    CHECK(t.tokens[0] == "shop.fr");
    CHECK(t.tokens[1] == "search?q=1#frag");
    CHECK(t.n_real == 2);
}

TEST_CASE("parse is idempotent on rebuilt output") {
    const char* urls[] = {"https://a.org/x/y/z/w", "http://www.b.fr", "c.net/p",
                          "https://d.com/"};
    for (const char* raw : urls) {
        TokenTriple first = parse_url(raw);
        std::string rebuilt = first.tokens[0];
        for (int i = 1; i < first.n_real; ++i) rebuilt += "/" + first.tokens[i];
        TokenTriple second = parse_url(rebuilt);
        CHECK(first.tokens == second.tokens);
        CHECK(first.n_real == second.n_real);
    }
}

namespace {

TokenTriple triple_of(const std::string& url) { return parse_url(url); }

std::vector<TokenTriple> repeat(const std::string& url, int times) {
    return std::vector<TokenTriple>(static_cast<std::size_t>(times), triple_of(url));
}

}  // namespace

TEST_CASE("build_vocab folds infrequent tokens at the threshold") {
    std::vector<TokenTriple> corpus;
    auto extend = [&corpus](const std::vector<TokenTriple>& more) {
        corpus.insert(corpus.end(), more.begin(), more.end());
    };
    extend(repeat("common.fr", 20));
    extend(repeat("rare.fr", 19));

    Vocab v = build_vocab(corpus, 20);
    CHECK(v.id_of("common.fr") >= kFirstRealId);
    CHECK(v.id_of("rare.fr") == kRareId);
    CHECK(v.id_of("never-seen.fr") == kUnknownId);
    CHECK(v.size() == 4);
    CHECK(v.freq_of("common.fr") == 20);
    CHECK(v.freq_of("rare.fr") == 19);
    CHECK(v.rare_token_count() == 1);
    CHECK(v.rare_fold_occurrences() == 19);
}

TEST_CASE("empty corpus gives only the reserved rows") {
    Vocab v = build_vocab({}, 20);
    CHECK(v.size() == 3);
    CHECK(v.token_of(0) == kUnknownToken);
    CHECK(v.token_of(1) == kRareToken);
    CHECK(v.token_of(2) == kPadToken);
}

TEST_CASE("lookup maps pad, rare and unseen tokens to the reserved ids") {
    std::vector<TokenTriple> corpus = repeat("site.fr/page", 5);
    auto rare = repeat("almost.fr", 2);
    corpus.insert(corpus.end(), rare.begin(), rare.end());
    Vocab v = build_vocab(corpus, 3);

    TripleIds ids = v.lookup(triple_of("site.fr/page"));
    CHECK(ids[0] >= kFirstRealId);
    CHECK(ids[1] >= kFirstRealId);
    CHECK(ids[2] == kPadId);

    CHECK(v.lookup(triple_of("almost.fr"))[0] == kRareId);
    CHECK(v.lookup(triple_of("zzz.fr"))[0] == kUnknownId);
}

TEST_CASE("ids are dense, contiguous and stable across rebuilds") {
    std::vector<TokenTriple> corpus;
    for (int i = 0; i < 6; ++i) {
        auto batch = repeat("site" + std::to_string(i) + ".fr/p" + std::to_string(i % 2), 4);
        corpus.insert(corpus.end(), batch.begin(), batch.end());
    }
    Vocab a = build_vocab(corpus, 2);
    Vocab b = build_vocab(corpus, 2);
    REQUIRE(a.size() == b.size());
    for (int32_t id = 0; id < a.size(); ++id) CHECK(a.token_of(id) == b.token_of(id));
    // dense: token_of must succeed for every id below size and fail above
    CHECK_THROWS_AS(a.token_of(a.size()), VocabError);
}

TEST_CASE("retained frequencies are bounded below by the threshold") {
    std::vector<TokenTriple> corpus;
    Rng rng(7);
    for (int i = 0; i < 300; ++i) {
        auto batch = repeat("dom" + std::to_string(rng.index(40)) + ".fr", 1);
        corpus.insert(corpus.end(), batch.begin(), batch.end());
    }
    const int64_t threshold = 5;
    Vocab v = build_vocab(corpus, threshold);
    int64_t sum = 0;
    for (int32_t id = kFirstRealId; id < v.size(); ++id) sum += v.freq_of(v.token_of(id));
    CHECK(sum >= threshold * (v.size() - 3));
}

TEST_CASE("domain-only scope counts the first position only") {
    std::vector<TokenTriple> corpus = repeat("site.fr/deep/page", 10);
    Vocab pooled = build_vocab(corpus, 2, VocabScope::AllPositions);
    Vocab domains = build_vocab(corpus, 2, VocabScope::DomainOnly);
    CHECK(pooled.size() == 6);
    CHECK(domains.size() == 4);
    CHECK(domains.id_of("deep") == kUnknownId);
}

TEST_CASE("vocab TSV round-trips, including escaped tokens") {
    std::vector<TokenTriple> corpus = repeat("site.fr/has\ttab", 4);
    auto extra = repeat("plain.fr", 4);
    corpus.insert(corpus.end(), extra.begin(), extra.end());
    auto rare = repeat("rare.fr", 1);
    corpus.insert(corpus.end(), rare.begin(), rare.end());

    Vocab v = build_vocab(corpus, 2);
    const std::string path = "vocab_roundtrip_test.tsv";
    v.save_tsv(path);
    Vocab loaded = Vocab::load_tsv(path);

    CHECK(loaded.size() == v.size());
    for (int32_t id = 0; id < v.size(); ++id) {
        CHECK(loaded.token_of(id) == v.token_of(id));
        CHECK(loaded.freq_of(v.token_of(id)) == v.freq_of(v.token_of(id)));
    }
    CHECK(loaded.id_of("has\ttab") == v.id_of("has\ttab"));
    CHECK(loaded.id_of("rare.fr") == kRareId);
    CHECK(loaded.id_of("unseen.fr") == kUnknownId);
    std::filesystem::remove(path);
}

TEST_CASE("load_tsv rejects malformed files") {
    const std::string path = "vocab_bad_test.tsv";
    {
        FILE* f = std::fopen(path.c_str(), "wb");
        std::fputs("<unk>\t0\t0\n<rare>\t5\t0\n", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(Vocab::load_tsv(path), FormatError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(Vocab::load_tsv("does_not_exist.tsv"), IoError);
}
