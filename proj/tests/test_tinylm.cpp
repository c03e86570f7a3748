#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sgrpo/roofline.hpp"
#include "sgrpo/tinylm.hpp"
#include "test_util.hpp"

using namespace sgrpo;
using namespace sgrpo::test;

TEST_CASE("init_model is deterministic for equal config and seed") {
    ModelConfig c = tiny_config(7);
    auto a = init_model<float>(c);
    auto b = init_model<float>(c);
    CHECK(a.flat == b.flat);
    auto d1 = init_draft<float>(c);
    auto d2 = init_draft<float>(c);
    CHECK(d1.flat == d2.flat);
}

TEST_CASE("param_count matches an independent shape sum") {
    ModelConfig c;
    c.vocab_size = 32;
    c.d_model = 64;
    c.n_layers = 2;
    c.n_heads = 4;
    c.d_ff = 256;
    c.max_seq_len = 64;
    c.seed = 3;
    auto m = init_model<float>(c);
    // oracle: sum of per-tensor shapes, written out independently
    size_t expect = 0;
    expect += 32ull * 64;        // token embedding
    expect += 64ull * 64;        // positional embedding
    for (int l = 0; l < 2; ++l) {
        expect += 64 + 64;       // ln1 gamma/beta
        expect += 4ull * 64 * 64;  // wq wk wv wo
        expect += 64 + 64;       // ln2 gamma/beta
        expect += 64ull * 256;   // w1
        expect += 256ull * 64;   // w2
    }
    expect += 64 + 64;           // final ln
    expect += 64ull * 32;        // lm head
    CHECK(m.param_count() == expect);
    CHECK(param_count_for(c) == expect);
}

TEST_CASE("invalid dimensions are rejected") {
    ModelConfig c = tiny_config();
    c.d_model = 63;
    CHECK_THROWS_AS(init_model<float>(c), std::invalid_argument);
    c = tiny_config();
    c.vocab_size = 3;
    CHECK_THROWS_AS(init_model<float>(c), std::invalid_argument);
    c = tiny_config();
    c.max_seq_len = 4;
    CHECK_THROWS_AS(init_model<float>(c), std::invalid_argument);
}

TEST_CASE("forward returns one logits and hidden row per position") {
    auto m = init_model<float>(tiny_config());
    std::vector<int> toks{2, 3, 4, 5, 6}, poss{0, 1, 2, 3, 4};
    auto out = forward_target<float>(m, toks, poss, nullptr, nullptr);
    CHECK(out.rows == 5);
    CHECK(out.logits.size() == 5u * m.config.vocab_size);
    CHECK(out.hidden.size() == 5u * m.config.d_model);
}

TEST_CASE("position overflow and bad tokens are rejected") {
    auto m = init_model<float>(tiny_config());
    std::vector<int> toks{2};
    std::vector<int> poss{m.config.max_seq_len};
    CHECK_THROWS_AS(forward_target<float>(m, toks, poss, nullptr, nullptr), std::out_of_range);
    std::vector<int> bad{m.config.vocab_size};
    std::vector<int> p0{0};
    CHECK_THROWS_AS(forward_target<float>(m, bad, p0, nullptr, nullptr), std::invalid_argument);
}

TEST_CASE("cached incremental decode matches the full forward") {
    auto m = init_model<float>(tiny_config(11));
    std::vector<int> toks{2, 9, 4, 13, 6, 3, 7, 12};
    std::vector<int> poss(toks.size());
    for (size_t i = 0; i < toks.size(); ++i) poss[i] = static_cast<int>(i);
    auto full = forward_target<float>(m, toks, poss, nullptr, nullptr);

    SUBCASE("one token at a time") {
        KvCache cache;
        cache.reset(m.config.n_layers, m.config.d_model);
        for (size_t i = 0; i < toks.size(); ++i) {
            std::vector<int> t{toks[i]}, p{static_cast<int>(i)};
            auto step = forward_target<float>(m, t, p, nullptr, &cache);
            auto want = std::span<const float>(full.logits).subspan(i * m.config.vocab_size,
                                                                    m.config.vocab_size);
            CHECK(rows_close<float>(step.logits, want, 1e-5));
        }
        CHECK(cache.len == static_cast<int>(toks.size()));
    }
    SUBCASE("uneven chunks") {
        KvCache cache;
        cache.reset(m.config.n_layers, m.config.d_model);
        size_t done = 0;
        for (size_t chunk : {3u, 1u, 4u}) {
            std::vector<int> t(toks.begin() + done, toks.begin() + done + chunk);
            std::vector<int> p(chunk);
            for (size_t i = 0; i < chunk; ++i) p[i] = static_cast<int>(done + i);
            auto step = forward_target<float>(m, t, p, nullptr, &cache);
            auto want = std::span<const float>(full.logits)
                            .subspan(done * m.config.vocab_size, chunk * m.config.vocab_size);
            CHECK(rows_close<float>(step.logits, want, 1e-5));
            done += chunk;
        }
    }
}

TEST_CASE("tree-masked rows match per-path sequential forwards") {
    auto m = init_model<float>(tiny_config(23));
    const int V = m.config.vocab_size;
    std::vector<int> prefix{2, 7, 5};

    // tree over committed prefix: root(tok 4, pos 3) -> a(tok 6, pos 4) -> b(tok 9, pos 5)
    //                                               -> a2(tok 8, pos 4)
    std::vector<int> toks{4, 6, 8, 9}, poss{3, 4, 4, 5};
    std::vector<int> parent{-1, 0, 0, 1};
    AttnMask mask;
    mask.rows = 4;
    mask.bits.assign(16, 0);
    for (int i = 0; i < 4; ++i)
        for (int j = i; j != -1; j = parent[j]) mask.bits[static_cast<size_t>(i) * 4 + j] = 1;

    KvCache cache;
    cache.reset(m.config.n_layers, m.config.d_model);
    std::vector<int> ppos{0, 1, 2};
    (void)forward_target<float>(m, prefix, ppos, nullptr, &cache);
    auto tree_out = forward_target<float>(m, toks, poss, &mask, &cache);

    auto seq_logits = [&](std::vector<int> path_toks) {
        std::vector<int> all = prefix;
        all.insert(all.end(), path_toks.begin(), path_toks.end());
        std::vector<int> ap(all.size());
        for (size_t i = 0; i < all.size(); ++i) ap[i] = static_cast<int>(i);
        auto out = forward_target<float>(m, all, ap, nullptr, nullptr);
        return std::vector<float>(out.logits.end() - V, out.logits.end());
    };

    CHECK(rows_close<float>(std::span<const float>(tree_out.logits).subspan(0 * V, V),
                            seq_logits({4}), 1e-5));
    CHECK(rows_close<float>(std::span<const float>(tree_out.logits).subspan(1 * V, V),
                            seq_logits({4, 6}), 1e-5));
    CHECK(rows_close<float>(std::span<const float>(tree_out.logits).subspan(2 * V, V),
                            seq_logits({4, 8}), 1e-5));
    CHECK(rows_close<float>(std::span<const float>(tree_out.logits).subspan(3 * V, V),
                            seq_logits({4, 6, 9}), 1e-5));
}

TEST_CASE("cache rollback keeps surviving rows") {
    auto m = init_model<float>(tiny_config(5));
    KvCache cache;
    cache.reset(m.config.n_layers, m.config.d_model);
    std::vector<int> toks{3, 4, 5, 6, 7}, poss{0, 1, 2, 3, 4};
    (void)forward_target<float>(m, toks, poss, nullptr, &cache);
    // keep rows 0 and 2 of the tail appended after base 1
    std::vector<int> keep{0, 2};
    KvCache ref = cache;
    cache.gather_tail(1, keep);
    CHECK(cache.len == 3);
    for (int l = 0; l < m.config.n_layers; ++l) {
        for (int e = 0; e < m.config.d_model; ++e) {
            CHECK(cache.k[l][1 * m.config.d_model + e] == ref.k[l][1 * m.config.d_model + e]);
            CHECK(cache.k[l][2 * m.config.d_model + e] == ref.k[l][3 * m.config.d_model + e]);
        }
    }
}

TEST_CASE("draft shares the target LM head storage") {
    auto cfg = tiny_config(9);
    auto target = init_model<float>(cfg);
    auto draft = init_draft<float>(cfg);
    std::vector<float> hidden(cfg.d_model, 0.1f);
    auto [feat1, logits1] = forward_draft<float>(draft, target, 3, hidden);

    // mutate one LM head column; the draft logit must move by feat . delta
    const int col = 5;
    const float delta = 0.25f;
    for (int e = 0; e < cfg.d_model; ++e)
        target.flat[target.lm_head + static_cast<size_t>(e) * cfg.vocab_size + col] += delta;
    auto [feat2, logits2] = forward_draft<float>(draft, target, 3, hidden);
    CHECK(feat1 == feat2);
    double expect = double(logits1[col]);
    for (int e = 0; e < cfg.d_model; ++e) expect += double(delta) * double(feat1[e]);
    CHECK(rel_close(double(logits2[col]), expect, 1e-5));
    for (int j = 0; j < cfg.vocab_size; ++j)
        if (j != col) CHECK(logits1[j] == logits2[j]);
}

TEST_CASE("draft forward is pure and finite") {
    auto cfg = tiny_config(13);
    auto target = init_model<float>(cfg);
    auto draft = init_draft<float>(cfg);
    std::vector<float> zero(cfg.d_model, 0.f);
    auto [f1, l1] = forward_draft<float>(draft, target, 2, zero);
    auto [f2, l2] = forward_draft<float>(draft, target, 2, zero);
    CHECK(f1 == f2);
    CHECK(l1 == l2);
    for (float v : l1) CHECK(std::isfinite(v));
    std::vector<float> bad(cfg.d_model + 1, 0.f);
    CHECK_THROWS_AS(forward_draft<float>(draft, target, 2, bad), std::invalid_argument);
}

TEST_CASE("sample_token argmax and tie-break") {
    std::vector<float> a{0.f, 3.f, 1.f};
    CHECK(sample_token<float>(a, 0.0, 1) == 1);
    std::vector<float> b{2.f, 2.f, 0.f};
    CHECK(sample_token<float>(b, 0.0, 1) == 0);
    std::vector<float> inf_row(3, -std::numeric_limits<float>::infinity());
    CHECK_THROWS_AS(sample_token<float>(inf_row, 0.0, 1), std::domain_error);
}

TEST_CASE("sample_token matches softmax frequencies") {
    std::vector<float> logits{0.f, 10.f};
    const double p1 = std::exp(10.0) / (1.0 + std::exp(10.0));
    int hits = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i)
        hits += sample_token<float>(logits, 1.0, mix_key(42, i)) == 1 ? 1 : 0;
    CHECK(std::abs(double(hits) / n - p1) < 0.02);

    // reproducibility from the key
    for (int i = 0; i < 50; ++i)
        CHECK(sample_token<float>(logits, 0.7, mix_key(7, i)) ==
              sample_token<float>(logits, 0.7, mix_key(7, i)));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    namespace fs = std::filesystem;
    auto cfg = tiny_config(21);
    auto m = init_model<float>(cfg);
    fs::path dir = fs::temp_directory_path() / "sgrpo_test_ckpt";
    fs::create_directories(dir);
    auto path = (dir / "target.ckpt").string();
    save_checkpoint(path, m);
    auto m2 = load_checkpoint(path);
    CHECK(m2.config == m.config);
    CHECK(m2.flat == m.flat);

    // emit(parse(file)) reproduces the file byte for byte
    auto path2 = (dir / "target2.ckpt").string();
    save_checkpoint(path2, m2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    auto d = init_draft<float>(cfg, 2);
    auto dpath = (dir / "draft.ckpt").string();
    save_draft_checkpoint(dpath, d);
    auto d2 = load_draft_checkpoint(dpath);
    CHECK(d2.flat == d.flat);
    CHECK(d2.n_layers == 2);
    CHECK_THROWS(load_checkpoint(dpath));
    fs::remove_all(dir);
}

TEST_CASE("target forward counter is instrumented") {
    auto m = init_model<float>(tiny_config());
    uint64_t before = target_forward_calls();
    std::vector<int> toks{2, 3}, poss{0, 1};
    (void)forward_target<float>(m, toks, poss, nullptr, nullptr);
    CHECK(target_forward_calls() == before + 1);
}
