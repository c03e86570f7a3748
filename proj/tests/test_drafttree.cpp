#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "sgrpo/drafttree.hpp"
#include "sgrpo/scheduler.hpp"
#include "test_util.hpp"

using namespace sgrpo;
using namespace sgrpo::test;

namespace {

// toy 4-token draft: the children distribution depends only on the node token
std::vector<double> toy_lps(int token) {
    static const std::map<int, std::vector<double>> probs{
        {0, {.1, .5, .3, .1}},
        {1, {.05, .05, .2, .7}},
        {2, {.25, .25, .25, .25}},
        {3, {.7, .1, .1, .1}},
    };
    std::vector<double> lps;
    for (double p : probs.at(token)) lps.push_back(std::log(p));
    return lps;
}

DraftTree random_tree(Rng& rng, int vocab, int k, int l) {
    auto fn = [&](const DraftTree&, int) {
        std::vector<double> raw(vocab);
        double mx = -1e30;
        for (auto& v : raw) {
            v = 3.0 * rng.normal();
            mx = std::max(mx, v);
        }
        double sum = 0;
        for (auto& v : raw) sum += std::exp(v - mx);
        for (auto& v : raw) v = v - mx - std::log(sum);
        return raw;
    };
    return expand_tree_with(0, k, l, fn);
}

}  // namespace

TEST_CASE("max_candidates formula") {
    CHECK(max_candidates(3, 3) == 22);
    CHECK(max_candidates(1, 1) == 2);
    CHECK(max_candidates(7, 3) == 106);
    CHECK(max_candidates(0, 5) == 1);
    CHECK(max_candidates(4, 1) == 5);
}

TEST_CASE("disabled speculation yields a root-only tree") {
    auto t = expand_tree_with(9, 0, 3, {});
    CHECK(t.nodes.size() == 1);
    CHECK(t.nodes[0].token == 9);
    CHECK(t.nodes[0].depth == 0);
    auto t2 = expand_tree_with(9, 3, 0, {});
    CHECK(t2.nodes.size() == 1);
}

TEST_CASE("expansion respects the candidate-count bound") {
    auto cfg = tiny_config(3);
    auto target = init_model<float>(cfg);
    auto draft = init_draft<float>(cfg);
    std::vector<float> root_hidden(cfg.d_model, 0.05f);
    auto t = expand_tree(draft, target, root_hidden, 2, 3, 3, 1);
    CHECK(static_cast<long long>(t.nodes.size()) <= max_candidates(3, 3));
    CHECK(t.nodes.size() >= 4);  // root + level 1
    for (size_t i = 1; i < t.nodes.size(); ++i) {
        const auto& n = t.nodes[i];
        CHECK(n.depth == t.nodes[n.parent].depth + 1);
        CHECK(n.depth <= 3);
        CHECK(n.confidence <= t.nodes[n.parent].confidence + 1e-12);
    }
}

TEST_CASE("hand-built toy distribution reproduces the exact tree") {
    auto fn = [](const DraftTree& t, int node) { return toy_lps(t.nodes[node].token); };
    auto t = expand_tree_with(0, 2, 2, fn);
    REQUIRE(t.nodes.size() == 7);
    // level 1: top-2 of [.1 .5 .3 .1] -> tokens 1, 2
    CHECK(t.nodes[1].token == 1);
    CHECK(t.nodes[1].confidence == doctest::Approx(0.5));
    CHECK(t.nodes[2].token == 2);
    CHECK(t.nodes[2].confidence == doctest::Approx(0.3));
    // level 2, children of token 1: top-2 of [.05 .05 .2 .7] -> tokens 3, 2
    CHECK(t.nodes[3].parent == 1);
    CHECK(t.nodes[3].token == 3);
    CHECK(t.nodes[3].confidence == doctest::Approx(0.35));
    CHECK(t.nodes[4].parent == 1);
    CHECK(t.nodes[4].token == 2);
    CHECK(t.nodes[4].confidence == doctest::Approx(0.10));
    // children of token 2: uniform, ties break to lowest token ids
    CHECK(t.nodes[5].parent == 2);
    CHECK(t.nodes[5].token == 0);
    CHECK(t.nodes[5].confidence == doctest::Approx(0.075));
    CHECK(t.nodes[6].parent == 2);
    CHECK(t.nodes[6].token == 1);
    CHECK(t.nodes[6].confidence == doctest::Approx(0.075));
}

TEST_CASE("rerank saturation and fixture") {
    SUBCASE("n_verify 1 selects the root only") {
        Rng rng(5);
        auto t = random_tree(rng, 8, 3, 3);
        auto s = rerank_candidates(t, 1);
        CHECK(s.node_indices == std::vector<int>{0});
    }
    SUBCASE("n_verify beyond the node count selects everything") {
        Rng rng(6);
        auto t = random_tree(rng, 8, 2, 2);
        auto s = rerank_candidates(t, 1000);
        CHECK(s.node_indices.size() == t.nodes.size());
    }
    SUBCASE("confidence fixture root=1, a=.6, b=.3, aa=.42, n=3") {
        DraftTree t;
        t.nodes.push_back({5, -1, 0, 0, 1.0});
        t.nodes.push_back({1, 0, 1, std::log(0.6), 0.6});   // a
        t.nodes.push_back({2, 0, 1, std::log(0.3), 0.3});   // b
        t.nodes.push_back({3, 1, 2, std::log(0.7), 0.42});  // aa
        auto s = rerank_candidates(t, 3);
        CHECK(s.node_indices == std::vector<int>{0, 1, 3});
    }
    SUBCASE("matches brute-force top-k with closure on random trees") {
        Rng rng(7);
        for (int trial = 0; trial < 40; ++trial) {
            auto t = random_tree(rng, 10, 2 + int(rng.below(3)), 2 + int(rng.below(3)));
            int n = 1 + int(rng.below(t.nodes.size() + 2));
            auto s = rerank_candidates(t, n);
            // oracle: sort all by confidence desc (index asc), take n, verify closure
            std::vector<int> order(t.nodes.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                if (t.nodes[a].confidence != t.nodes[b].confidence)
                    return t.nodes[a].confidence > t.nodes[b].confidence;
                return a < b;
            });
            order.resize(std::min<size_t>(order.size(), n));
            std::sort(order.begin(), order.end());
            CHECK(s.node_indices == order);
            for (int idx : s.node_indices) {
                int par = t.nodes[idx].parent;
                if (par != -1)
                    CHECK(std::count(s.node_indices.begin(), s.node_indices.end(), par) == 1);
            }
        }
    }
}

TEST_CASE("tree masks") {
    SUBCASE("a chain degenerates to the causal mask") {
        DraftTree t;
        t.nodes.push_back({1, -1, 0, 0, 1});
        t.nodes.push_back({2, 0, 1, -1, .3});
        t.nodes.push_back({3, 1, 2, -1, .1});
        auto m = build_tree_mask(t, {0, 1, 2});
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) CHECK(m.at(i, j) == (j <= i));
    }
    SUBCASE("siblings are mutually masked") {
        DraftTree t;
        t.nodes.push_back({1, -1, 0, 0, 1});
        t.nodes.push_back({2, 0, 1, -1, .3});
        t.nodes.push_back({3, 0, 1, -1, .2});
        auto m = build_tree_mask(t, {0, 1, 2});
        CHECK(m.at(1, 2) == false);
        CHECK(m.at(2, 1) == false);
        CHECK(m.at(1, 0));
        CHECK(m.at(2, 0));
    }
    SUBCASE("mask equals the reachability matrix of parent edges") {
        Rng rng(9);
        for (int trial = 0; trial < 25; ++trial) {
            auto t = random_tree(rng, 9, 3, 3);
            auto s = rerank_candidates(t, 10);
            const int n = static_cast<int>(s.node_indices.size());
            // oracle: transitive closure by iterated squaring of the edge matrix
            std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
            for (int i = 0; i < n; ++i) reach[i][i] = true;
            for (int i = 0; i < n; ++i) {
                int par = t.nodes[s.node_indices[i]].parent;
                for (int j = 0; j < n; ++j)
                    if (par == s.node_indices[j]) reach[i][j] = true;
            }
            for (bool changed = true; changed;) {
                changed = false;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j)
                        if (reach[i][j])
                            for (int k = 0; k < n; ++k)
                                if (reach[j][k] && !reach[i][k]) {
                                    reach[i][k] = true;
                                    changed = true;
                                }
            }
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) CHECK(s.tree_mask.at(i, j) == reach[i][j]);
        }
    }
    SUBCASE("closure violation is rejected") {
        DraftTree t;
        t.nodes.push_back({1, -1, 0, 0, 1});
        t.nodes.push_back({2, 0, 1, -1, .3});
        t.nodes.push_back({3, 1, 2, -1, .1});
        CHECK_THROWS_AS(build_tree_mask(t, {0, 2}), std::invalid_argument);
    }
}

TEST_CASE("verification walk") {
    const int vocab = 6;
    auto row = [&](int argmax) {
        std::vector<float> r(vocab, 0.f);
        r[argmax] = 5.f;
        return r;
    };

    SUBCASE("no matching child accepts only the bonus") {
        DraftTree t;
        t.nodes.push_back({1, -1, 0, 0, 1});
        t.nodes.push_back({2, 0, 1, -1, .5});
        auto s = rerank_candidates(t, 8);
        std::vector<float> logits;
        for (auto r : {row(3), row(4)}) logits.insert(logits.end(), r.begin(), r.end());
        VerifyInputs in;
        in.logits = logits;
        in.vocab = vocab;
        in.temperature = 0;
        in.root_pos = 0;
        auto vr = verify(t, s, in);
        CHECK(vr.accepted_len == 1);
        CHECK(vr.bonus_token == 3);
        CHECK(vr.accepted_tokens == std::vector<int>{3});
        CHECK(vr.accepted_rows == std::vector<int>{0});
    }

    SUBCASE("hand walk through the toy tree") {
        auto fn = [](const DraftTree& t, int node) { return toy_lps(t.nodes[node].token); };
        auto t = expand_tree_with(0, 2, 2, fn);
        auto s = rerank_candidates(t, 7);
        // rows follow tree order 0..6; emissions: root->1, node1->3, node3->2
        std::vector<std::vector<float>> rows(7, row(0));
        rows[0] = row(1);
        rows[1] = row(3);
        rows[3] = row(2);
        std::vector<float> logits;
        for (auto& r : rows) logits.insert(logits.end(), r.begin(), r.end());
        VerifyInputs in;
        in.logits = logits;
        in.vocab = vocab;
        in.temperature = 0;
        auto vr = verify(t, s, in);
        CHECK(vr.accepted_tokens == std::vector<int>{1, 3, 2});
        CHECK(vr.accepted_len == 3);
        CHECK(vr.bonus_token == 2);
        CHECK(vr.accepted_rows == std::vector<int>{0, 1, 3});
    }

    SUBCASE("row count mismatch rejected") {
        DraftTree t;
        t.nodes.push_back({1, -1, 0, 0, 1});
        auto s = rerank_candidates(t, 4);
        std::vector<float> logits(2 * vocab, 0.f);
        VerifyInputs in;
        in.logits = logits;
        in.vocab = vocab;
        CHECK_THROWS_AS(verify(t, s, in), std::invalid_argument);
    }
}

TEST_CASE("draft chain matching the target's greedy continuation is fully accepted") {
    auto cfg = tiny_config(31);
    auto m = init_model<float>(cfg);
    std::vector<int> prefix{2, 9, 4};

    // sequential oracle: three greedy target steps
    std::vector<int> greedy;
    {
        std::vector<int> cur = prefix;
        for (int s = 0; s < 3; ++s) {
            std::vector<int> pos(cur.size());
            for (size_t i = 0; i < cur.size(); ++i) pos[i] = int(i);
            auto out = forward_target<float>(m, cur, pos, nullptr, nullptr);
            std::span<const float> last(out.logits.data() + (cur.size() - 1) * cfg.vocab_size,
                                        cfg.vocab_size);
            greedy.push_back(sample_token<float>(last, 0.0, 0));
            cur.push_back(greedy.back());
        }
    }

    // chain tree rooted at the last committed prefix token
    DraftTree t;
    t.nodes.push_back({prefix.back(), -1, 0, 0, 1});
    for (int i = 0; i < 3; ++i) t.nodes.push_back({greedy[i], i, i + 1, -0.1, 0.9});
    auto sel = rerank_candidates(t, 4);

    KvCache cache;
    cache.reset(cfg.n_layers, cfg.d_model);
    std::vector<int> ptoks(prefix.begin(), prefix.end() - 1), ppos{0, 1};
    (void)forward_target<float>(m, ptoks, ppos, nullptr, &cache);
    std::vector<int> toks{prefix.back(), greedy[0], greedy[1], greedy[2]};
    std::vector<int> poss{2, 3, 4, 5};
    auto out = forward_target<float>(m, toks, poss, &sel.tree_mask, &cache);

    VerifyInputs in;
    in.logits = out.logits;
    in.hidden = out.hidden;
    in.vocab = cfg.vocab_size;
    in.d = cfg.d_model;
    in.temperature = 0;
    in.root_pos = 2;
    auto vr = verify(t, sel, in);
    CHECK(vr.accepted_len == 4);
    CHECK(std::vector<int>(vr.accepted_tokens.begin(), vr.accepted_tokens.end() - 1) == greedy);
    CHECK(vr.new_hidden.size() == 4u * cfg.d_model);
}

TEST_CASE("confidence properties on random trees") {
    Rng rng(15);
    for (int trial = 0; trial < 30; ++trial) {
        auto t = random_tree(rng, 12, 1 + int(rng.below(4)), 1 + int(rng.below(5)));
        for (size_t i = 1; i < t.nodes.size(); ++i) {
            const auto& n = t.nodes[i];
            // monotone along any root-to-leaf path
            CHECK(n.confidence <= t.nodes[n.parent].confidence + 1e-12);
            // confidence is exp of the path log-prob sum
            double lp = 0;
            for (int a = int(i); a != -1; a = t.nodes[a].parent) lp += t.nodes[a].log_prob;
            CHECK(rel_close(n.confidence, std::exp(lp), 1e-9));
        }
        // descending-confidence selection stays ancestor-closed at any cutoff
        for (int n : {1, 2, 3, 5, 8, 100}) {
            auto s = rerank_candidates(t, n);
            CHECK_NOTHROW(build_tree_mask(t, s.node_indices));
        }
    }
}

TEST_CASE("tree json round-trip") {
    Rng rng(51);
    auto t = random_tree(rng, 7, 2, 3);
    auto t2 = tree_from_json(tree_to_json(t));
    REQUIRE(t2.nodes.size() == t.nodes.size());
    for (size_t i = 0; i < t.nodes.size(); ++i) {
        CHECK(t2.nodes[i].token == t.nodes[i].token);
        CHECK(t2.nodes[i].parent == t.nodes[i].parent);
        CHECK(t2.nodes[i].confidence == t.nodes[i].confidence);
    }
}
