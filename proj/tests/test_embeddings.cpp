#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "urlseq/embeddings.hpp"

using namespace urlseq;

namespace {

LabeledSequence seq_of(std::vector<TripleIds> urls) {
    LabeledSequence rec;
    rec.urls = std::move(urls);
    rec.labels["a"] = 0;
    return rec;
}

}  // namespace

TEST_CASE("composition modes") {
    Rng rng(1);
    MatrixXd table = uniform_matrix(6, 4, -1.0, 1.0, rng);

    TripleIds ids = {3, 4, 5};
    SUBCASE("domain only returns the first row") {
        VectorXd x = compose_url_embedding(CompositionMode::DomainOnly, ids, table);
        CHECK(x.isApprox(table.row(3).transpose()));
    }
    SUBCASE("token average of equal rows is the row") {
        MatrixXd same = table;
        same.row(4) = same.row(3);
        same.row(5) = same.row(3);
        VectorXd x = compose_url_embedding(CompositionMode::TokenAvg, ids, same);
        CHECK(x.isApprox(same.row(3).transpose()));
    }
    SUBCASE("token average includes pad rows in the mean") {
        TripleIds padded = {3, kPadId, kPadId};
        VectorXd x = compose_url_embedding(CompositionMode::TokenAvg, padded, table);
        VectorXd expect = (table.row(3) + 2.0 * table.row(kPadId)).transpose() / 3.0;
        CHECK(x.isApprox(expect));
    }
    SUBCASE("concatenation has three times the width") {
        VectorXd x = compose_url_embedding(CompositionMode::TokenConcat, ids, table);
        REQUIRE(x.size() == 12);
        CHECK(x.segment(0, 4).isApprox(table.row(3).transpose()));
        CHECK(x.segment(8, 4).isApprox(table.row(5).transpose()));
    }
    SUBCASE("out-of-range ids are rejected") {
        TripleIds bad = {3, 99, 5};
        CHECK_THROWS_AS(compose_url_embedding(CompositionMode::TokenAvg, bad, table),
                        VocabError);
    }
}

TEST_CASE("url vectors are linear in the token rows") {
    Rng rng(2);
    MatrixXd a = uniform_matrix(5, 3, -1.0, 1.0, rng);
    MatrixXd b = uniform_matrix(5, 3, -1.0, 1.0, rng);
    TripleIds ids = {4, 2, 3};
    for (CompositionMode mode :
         {CompositionMode::DomainOnly, CompositionMode::TokenAvg, CompositionMode::TokenConcat}) {
        VectorXd sum = compose_url_embedding(mode, ids, a + b);
        VectorXd parts = compose_url_embedding(mode, ids, a) + compose_url_embedding(mode, ids, b);
        CHECK(sum.isApprox(parts, 1e-12));
        VectorXd scaled = compose_url_embedding(mode, ids, MatrixXd(2.5 * a));
        CHECK(scaled.isApprox(2.5 * compose_url_embedding(mode, ids, a), 1e-12));
    }
}

TEST_CASE("one_hot_url averages over real tokens only") {
    SparseVec single = one_hot_url({5, kPadId, kPadId}, 10);
    REQUIRE(single.size() == 1);
    CHECK(single[0].first == 5);
    CHECK(single[0].second == 1.0);

    SparseVec three = one_hot_url({3, 4, 5}, 10);
    REQUIRE(three.size() == 3);
    for (const auto& [idx, value] : three) CHECK(value == doctest::Approx(1.0 / 3.0));

    // duplicate token: weights add up
    SparseVec dup = one_hot_url({7, 7, kPadId}, 10);
    REQUIRE(dup.size() == 1);
    CHECK(dup[0].second == doctest::Approx(1.0));
}

TEST_CASE("generate_pairs window and negative counts") {
    std::vector<LabeledSequence> shard = {seq_of({{3, 2, 2}, {4, 2, 2}, {5, 2, 2}})};
    NoiseSampler noise(shard, 0.75);
    Rng rng(3);

    SkipGramConfig cfg;
    cfg.window = 1;
    cfg.negatives = 1;

    std::vector<PairExample> out;
    generate_pairs(std::span<const TripleIds>(shard[0].urls), cfg, noise, rng,
                   [&](const PairExample& ex) { out.push_back(ex); });

    // positives in order: (u1,u2),(u2,u1),(u2,u3),(u3,u2), one negative each
    REQUIRE(out.size() == 8);
    std::vector<std::pair<int32_t, int32_t>> positives;
    for (const auto& ex : out) {
        if (ex.label == 1.0) positives.push_back({ex.target[0], ex.context[0]});
    }
    CHECK(positives == std::vector<std::pair<int32_t, int32_t>>{
                           {3, 4}, {4, 3}, {4, 5}, {5, 4}});
}

TEST_CASE("single-url sequences produce no pairs") {
    std::vector<LabeledSequence> shard = {seq_of({{3, 2, 2}})};
    NoiseSampler noise(shard, 0.75);
    Rng rng(4);
    SkipGramConfig cfg;
    int count = 0;
    generate_pairs(std::span<const TripleIds>(shard[0].urls), cfg, noise, rng,
                   [&](const PairExample&) { ++count; });
    CHECK(count == 0);
}

TEST_CASE("pair counts match a brute-force window enumeration") {
    Rng rng(5);
    for (int trial = 0; trial < 40; ++trial) {
        const int len = 2 + static_cast<int>(rng.index(19));
        std::vector<TripleIds> urls;
        for (int i = 0; i < len; ++i) {
            urls.push_back({static_cast<int32_t>(3 + rng.index(5)), kPadId, kPadId});
        }
        std::vector<LabeledSequence> shard = {seq_of(urls)};
        NoiseSampler noise(shard, 0.75);

        SkipGramConfig cfg;
        cfg.window = 1 + static_cast<int>(rng.index(6));
        cfg.negatives = 1 + static_cast<int>(rng.index(4));

        int64_t expected_positives = 0;
        for (int t = 0; t < len; ++t) {
            for (int j = -cfg.window; j <= cfg.window; ++j) {
                if (j != 0 && t + j >= 0 && t + j < len) ++expected_positives;
            }
        }

        int64_t positives = 0, total = 0;
        Rng pair_rng(trial);
        generate_pairs(std::span<const TripleIds>(urls), cfg, noise, pair_rng,
                       [&](const PairExample& ex) {
                           ++total;
                           if (ex.label == 1.0) ++positives;
                       });
        CHECK(positives == expected_positives);
        CHECK(total == expected_positives * (1 + cfg.negatives));
    }
}

TEST_CASE("noise draws converge to the unigram powered distribution") {
    // 4 distinct URLs with frequencies 1, 2, 4, 8
    std::vector<TripleIds> urls;
    for (int copies = 1, id = 3; id < 7; ++id, copies *= 2) {
        for (int i = 0; i < copies; ++i) urls.push_back({id, kPadId, kPadId});
    }
    std::vector<LabeledSequence> shard = {seq_of(urls)};
    NoiseSampler noise(shard, 0.75);

    std::map<int32_t, int64_t> hits;
    Rng rng(6);
    const int64_t draws = 1000000;
    for (int64_t i = 0; i < draws; ++i) ++hits[noise.sample(rng)[0]];

    double total_w = 0.0;
    std::map<int32_t, double> expected;
    for (int copies = 1, id = 3; id < 7; ++id, copies *= 2) {
        expected[id] = std::pow(static_cast<double>(copies), 0.75);
        total_w += expected[id];
    }
    for (auto& [id, w] : expected) {
        const double freq = static_cast<double>(hits[id]) / static_cast<double>(draws);
        CHECK(freq == doctest::Approx(w / total_w).epsilon(0.02));
    }
}

TEST_CASE("sgns on zero tables starts at log 2") {
    EmbeddingMatrix tables;
    tables.target = MatrixXd::Zero(6, 4);
    tables.context = MatrixXd::Zero(6, 4);
    SgnsState state = SgnsState::like(tables);
    const double loss = sgns_step({3, 2, 2}, {4, 2, 2}, 1.0, tables,
                                  CompositionMode::DomainOnly, state);
    CHECK(loss == doctest::Approx(std::log(2.0)));
}

TEST_CASE("repeated positive updates monotonically raise the pair dot product") {
    Rng rng(7);
    EmbeddingMatrix tables = EmbeddingMatrix::init(6, 8, rng);
    SgnsState state = SgnsState::like(tables);
    TripleIds a = {3, 2, 2}, b = {4, 2, 2};

    double prev = tables.target.row(3).dot(tables.context.row(4));
    for (int i = 0; i < 100; ++i) {
        sgns_step(a, b, 1.0, tables, CompositionMode::DomainOnly, state);
        const double dot = tables.target.row(3).dot(tables.context.row(4));
        CHECK(dot > prev);
        prev = dot;
    }
}

TEST_CASE("sgns per-pair loss drops after a small-step online update") {
    Rng rng(8);
    AdamConfig small_lr;
    small_lr.lr = 1e-4;

    int improved = 0;
    double total_drop = 0.0;
    const int trials = 1000;
    for (int i = 0; i < trials; ++i) {
        EmbeddingMatrix tables;
        tables.target = uniform_matrix(10, 6, -0.5, 0.5, rng);
        tables.context = uniform_matrix(10, 6, -0.2, 0.2, rng);
        SgnsState state = SgnsState::like(tables, small_lr);

        TripleIds t = {static_cast<int32_t>(rng.index(10)), static_cast<int32_t>(rng.index(10)),
                       static_cast<int32_t>(rng.index(10))};
        TripleIds c = {static_cast<int32_t>(rng.index(10)), static_cast<int32_t>(rng.index(10)),
                       static_cast<int32_t>(rng.index(10))};
        const double label = rng.bernoulli(0.5) ? 1.0 : 0.0;
        const double before = sgns_gradients(t, c, label, tables, CompositionMode::TokenAvg).loss;
        sgns_step(t, c, label, tables, CompositionMode::TokenAvg, state);
        const double after = sgns_gradients(t, c, label, tables, CompositionMode::TokenAvg).loss;
        if (after < before) ++improved;
        total_drop += before - after;
    }
    CHECK(improved >= trials * 99 / 100);
    CHECK(total_drop > 0.0);
}

TEST_CASE("sgns gradients match finite differences in every mode") {
    for (CompositionMode mode :
         {CompositionMode::DomainOnly, CompositionMode::TokenAvg, CompositionMode::TokenConcat}) {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            Rng rng(40 + seed);
            EmbeddingMatrix tables;
            tables.target = uniform_matrix(6, 5, -0.5, 0.5, rng);
            tables.context = uniform_matrix(6, 5, -0.5, 0.5, rng);
            TripleIds t = {3, 4, 2};  // includes a duplicate row via pad usage below
            TripleIds c = {5, 2, 2};  // pad appears twice: gradients must accumulate
            const double label = seed % 2 == 0 ? 1.0 : 0.0;

            SgnsGrads g = sgns_gradients(t, c, label, tables, mode);

            // dense full-table gradients assembled from the sparse row grads
            MatrixXd gt = MatrixXd::Zero(6, 5);
            MatrixXd gc = MatrixXd::Zero(6, 5);
            for (const RowGrad& rg : g.target_rows) gt.row(rg.row) += rg.grad;
            for (const RowGrad& rg : g.context_rows) gc.row(rg.row) += rg.grad;

            auto loss = [&]() {
                return sgns_gradients(t, c, label, tables, mode).loss;
            };
            std::vector<ParamView> params = {view(tables.target), view(tables.context)};
            std::vector<ParamView> grads = {view(gt), view(gc)};
            CHECK(finite_diff_max_rel_error(loss, params, grads) < 1e-5);
        }
    }
}

TEST_CASE("train_embeddings is deterministic and respects empty corpora") {
    SyntheticConfig scfg;
    scfg.n_categories = 2;
    scfg.domains_per_category = 4;
    scfg.n_users = 60;
    scfg.seq_len_min = 5;
    scfg.seq_len_max = 12;
    scfg.seed = 9;
    SyntheticDataset ds = generate_synthetic(scfg);

    VocabBuilder builder(1);
    for (const RawRecord& rec : ds.rep) {
        for (const std::string& url : rec.urls) builder.add(parse_url(url));
    }
    Vocab vocab = std::move(builder).finish();

    std::vector<LabeledSequence> records;
    for (const RawRecord& rec : ds.rep) records.push_back(encode_record(rec, vocab));

    SkipGramConfig cfg;
    cfg.window = 2;
    cfg.negatives = 2;

    ShardedCorpus corpus = shard_corpus(records, 4, 1);
    EmbeddingTrainResult a = train_embeddings(corpus, vocab, cfg, CompositionMode::TokenAvg, 8, 5);
    EmbeddingTrainResult b = train_embeddings(corpus, vocab, cfg, CompositionMode::TokenAvg, 8, 5);
    CHECK(a.tables.target == b.tables.target);
    CHECK(a.tables.context == b.tables.context);

    ShardedCorpus empty;
    Rng init_rng(5);
    EmbeddingMatrix fresh = EmbeddingMatrix::init(vocab.size(), 8, init_rng);
    EmbeddingTrainResult untouched =
        train_embeddings(empty, vocab, cfg, CompositionMode::TokenAvg, 8, 5);
    CHECK(untouched.tables.target == fresh.target);
    CHECK(untouched.shard_mean_loss.empty());
}

TEST_CASE("planted categories separate in embedding space") {
    SyntheticConfig scfg;
    scfg.n_categories = 2;
    scfg.domains_per_category = 5;
    scfg.n_users = 400;
    scfg.seq_len_min = 10;
    scfg.seq_len_max = 20;
    scfg.seed = 10;
    SyntheticDataset ds = generate_synthetic(scfg);

    VocabBuilder builder(1, VocabScope::DomainOnly);
    for (const RawRecord& rec : ds.rep) {
        for (const std::string& url : rec.urls) builder.add(parse_url(url));
    }
    Vocab vocab = std::move(builder).finish();

    std::vector<LabeledSequence> records;
    for (const RawRecord& rec : ds.rep) records.push_back(encode_record(rec, vocab));

    SkipGramConfig cfg;
    cfg.window = 3;
    cfg.negatives = 2;
    ShardedCorpus corpus = shard_corpus(records, 20, 2);
    EmbeddingTrainResult result =
        train_embeddings(corpus, vocab, cfg, CompositionMode::DomainOnly, 16, 3);

    std::map<int32_t, int> category_of;
    for (std::size_t d = 0; d < ds.truth.domains.size(); ++d) {
        const int32_t id = vocab.id_of(ds.truth.domains[d]);
        REQUIRE(id >= kFirstRealId);
        category_of[id] = ds.truth.domain_category[d];
    }

    double intra = 0.0, inter = 0.0;
    int n_intra = 0, n_inter = 0;
    for (auto [id_a, cat_a] : category_of) {
        for (auto [id_b, cat_b] : category_of) {
            if (id_a >= id_b) continue;
            const double cos =
                cosine_similarity(result.tables.target.row(id_a), result.tables.target.row(id_b));
            if (cat_a == cat_b) {
                intra += cos;
                ++n_intra;
            } else {
                inter += cos;
                ++n_inter;
            }
        }
    }
    intra /= n_intra;
    inter /= n_inter;
    CHECK(intra - inter >= 0.3);

    // the pair loss should trend down across shard visits
    const auto& trace = result.shard_mean_loss;
    REQUIRE(trace.size() == 20);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 5; ++i) {
        head += trace[static_cast<std::size_t>(i)];
        tail += trace[trace.size() - 1 - static_cast<std::size_t>(i)];
    }
    CHECK(tail < head);
}

TEST_CASE("parallel shard workers produce a usable, finite table") {
    SyntheticConfig scfg;
    scfg.n_categories = 2;
    scfg.domains_per_category = 4;
    scfg.n_users = 80;
    scfg.seq_len_min = 5;
    scfg.seq_len_max = 12;
    scfg.seed = 12;
    SyntheticDataset ds = generate_synthetic(scfg);

    VocabBuilder builder(1);
    for (const RawRecord& rec : ds.rep) {
        for (const std::string& url : rec.urls) builder.add(parse_url(url));
    }
    Vocab vocab = std::move(builder).finish();
    std::vector<LabeledSequence> records;
    for (const RawRecord& rec : ds.rep) records.push_back(encode_record(rec, vocab));

    SkipGramConfig cfg;
    cfg.window = 2;
    cfg.negatives = 1;
    cfg.threads = 3;  // hogwild: no bit-exactness promised, only sanity
    ShardedCorpus corpus = shard_corpus(std::move(records), 6, 1);
    EmbeddingTrainResult result =
        train_embeddings(corpus, vocab, cfg, CompositionMode::DomainOnly, 8, 5);
    CHECK(result.tables.target.allFinite());
    CHECK(result.shard_mean_loss.size() == 6);
    // training moved the table away from its initialization
    Rng init_rng(5);
    EmbeddingMatrix fresh = EmbeddingMatrix::init(vocab.size(), 8, init_rng);
    CHECK(result.tables.target != fresh.target);
}

TEST_CASE("cosine similarity basics") {
    VectorXd v(3);
    v << 1.0, -2.0, 0.5;
    CHECK(cosine_similarity(v, v) == doctest::Approx(1.0));
    CHECK(cosine_similarity(v, VectorXd(-v)) == doctest::Approx(-1.0));

    VectorXd e1(2), e2(2);
    e1 << 1.0, 0.0;
    e2 << 0.0, 1.0;
    CHECK(cosine_similarity(e1, e2) == doctest::Approx(0.0));
    CHECK_THROWS_AS(cosine_similarity(e1, VectorXd(VectorXd::Zero(2))), ZeroNorm);
}

TEST_CASE("nearest_neighbors ranking rules") {
    MatrixXd table = MatrixXd::Zero(8, 3);
    table.row(3) << 1.0, 0.0, 0.0;
    table.row(4) << 1.0, 0.0, 0.0;   // duplicate of the query
    table.row(5) << 0.9, 0.1, 0.0;
    table.row(6) << 0.0, 1.0, 0.0;
    table.row(7) << -1.0, 0.0, 0.0;
    table.row(0) << 1.0, 0.0, 0.0;   // reserved rows never appear
    table.row(1) << 1.0, 0.0, 0.0;
    table.row(2) << 1.0, 0.0, 0.0;

    auto top = nearest_neighbors(3, table, 1);
    REQUIRE(top.size() == 1);
    CHECK(top[0].id == 4);
    CHECK(top[0].similarity == doctest::Approx(1.0));

    auto all = nearest_neighbors(3, table, 10);
    REQUIRE(all.size() == 4);  // truncated to the eligible rows
    for (const auto& n : all) {
        CHECK(n.id != 3);
        CHECK(n.id >= kFirstRealId);
    }
    CHECK(all.back().id == 7);

    // tie on similarity resolves toward the lower id
    MatrixXd tied = MatrixXd::Zero(6, 2);
    tied.row(3) << 1.0, 0.0;
    tied.row(4) << 2.0, 0.0;
    tied.row(5) << 3.0, 0.0;
    auto order = nearest_neighbors(3, tied, 2);
    CHECK(order[0].id == 4);
    CHECK(order[1].id == 5);
}

TEST_CASE("embedding TSV round-trips bit-exactly") {
    Rng rng(31);
    std::vector<TokenTriple> corpus;
    for (int i = 0; i < 4; ++i) {
        corpus.push_back(parse_url("dom" + std::to_string(i) + ".fr"));
        corpus.push_back(parse_url("dom" + std::to_string(i) + ".fr"));
    }
    Vocab vocab = build_vocab(corpus, 2);
    MatrixXd table = uniform_matrix(vocab.size(), 5, -1.0, 1.0, rng);
    table(3, 0) = 1.0 / 3.0;  // exercise digits that need full precision

    const std::string path = "emb_roundtrip_test.tsv";
    export_embeddings(table, vocab, path);
    MatrixXd loaded = import_embeddings_for_vocab(path, vocab);
    CHECK(loaded == table);
    std::filesystem::remove(path);
}

TEST_CASE("embedding TSV edge cases") {
    const std::string path = "emb_edge_test.tsv";
    MatrixXd empty(0, 0);
    export_embeddings(empty, std::span<const std::string>{}, path);
    ImportedEmbeddings imported = import_embeddings(path);
    CHECK(imported.tokens.empty());
    CHECK(imported.table.rows() == 0);

    {
        std::ofstream out(path, std::ios::binary);
        out << "token\tv1\tv2\n";
        out << "a\t0.5\n";  // width mismatch
    }
    CHECK_THROWS_AS(import_embeddings(path), FormatError);

    {
        std::ofstream out(path, std::ios::binary);
        out << "token\tv1\n";
        out << "only\t0.25\n";
    }
    std::vector<TokenTriple> corpus = {parse_url("x.fr"), parse_url("x.fr")};
    Vocab vocab = build_vocab(corpus, 2);
    CHECK_THROWS_AS(import_embeddings_for_vocab(path, vocab), FormatError);
    std::filesystem::remove(path);
}
