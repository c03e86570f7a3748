#include "sgrpo/drafttree.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace sgrpo {

long long max_candidates(int k, int l) {
    if (k < 0 || l < 0) throw std::invalid_argument("max_candidates: negative argument");
    long long kk = k;
    return 1 + kk + static_cast<long long>(std::max(0, l - 1)) * kk * kk;
}

namespace {

// indices of the top-k entries by (value desc, index asc)
std::vector<int> topk_tokens(const std::vector<double>& lps, int k) {
    std::vector<int> idx(lps.size());
    for (size_t i = 0; i < lps.size(); ++i) idx[i] = static_cast<int>(i);
    int kk = std::min<int>(k, static_cast<int>(lps.size()));
    std::partial_sort(idx.begin(), idx.begin() + kk, idx.end(), [&](int a, int b) {
        if (lps[a] != lps[b]) return lps[a] > lps[b];
        return a < b;
    });
    idx.resize(kk);
    return idx;
}

}  // namespace

DraftTree expand_tree_with(int root_token, int k_draft, int l_draft, const ExpandFn& fn) {
    if (k_draft < 0 || l_draft < 0)
        throw std::invalid_argument("expand_tree: negative k_draft or l_draft");
    DraftTree t;
    t.nodes.push_back({root_token, -1, 0, 0.0, 1.0});
    if (k_draft == 0 || l_draft == 0) return t;

    std::vector<int> frontier{0};
    for (int level = 1; level <= l_draft; ++level) {
        std::vector<int> created;
        for (int ni : frontier) {
            std::vector<double> lps = fn(t, ni);
            for (int tok : topk_tokens(lps, k_draft)) {
                DraftNode n;
                n.token = tok;
                n.parent = ni;
                n.depth = level;
                n.log_prob = lps[tok];
                n.confidence = t.nodes[ni].confidence * std::exp(lps[tok]);
                created.push_back(static_cast<int>(t.nodes.size()));
                t.nodes.push_back(n);
            }
        }
        if (level == l_draft || created.empty()) break;
        // frontier for the next level: k highest-confidence nodes of this one
        std::sort(created.begin(), created.end(), [&](int a, int b) {
            if (t.nodes[a].confidence != t.nodes[b].confidence)
                return t.nodes[a].confidence > t.nodes[b].confidence;
            if (t.nodes[a].token != t.nodes[b].token) return t.nodes[a].token < t.nodes[b].token;
            return a < b;
        });
        created.resize(std::min<size_t>(created.size(), k_draft));
        std::sort(created.begin(), created.end());
        frontier = std::move(created);
    }
    return t;
}

DraftTree expand_tree(const Draft& draft, const Model& target, std::span<const float> root_hidden,
                      int root_token, int k_draft, int l_draft, int root_pos) {
    const int d = draft.config.d_model;
    if (root_hidden.size() != static_cast<size_t>(d))
        throw std::invalid_argument("expand_tree: root_hidden dimension mismatch");

    // per expanded node: feature and pooled per-layer K/V, keyed by tree index
    std::vector<std::vector<float>> features;  // by tree index (only expanded nodes filled)
    std::vector<int> pool_slot;  // tree index -> pool slot (-1 if absent)
    std::vector<std::vector<float>> pool_k(draft.layers.size()), pool_v(draft.layers.size());

    auto push_pool = [&](int tree_idx, const std::vector<std::vector<float>>& k_rows,
                         const std::vector<std::vector<float>>& v_rows) {
        int slot = static_cast<int>(pool_k[0].size() / d);
        for (size_t li = 0; li < pool_k.size(); ++li) {
            pool_k[li].insert(pool_k[li].end(), k_rows[li].begin(), k_rows[li].end());
            pool_v[li].insert(pool_v[li].end(), v_rows[li].begin(), v_rows[li].end());
        }
        if (pool_slot.size() <= static_cast<size_t>(tree_idx)) pool_slot.resize(tree_idx + 1, -1);
        pool_slot[tree_idx] = slot;
    };

    auto fn = [&](const DraftTree& t, int node) -> std::vector<double> {
        const DraftNode& nd = t.nodes[node];
        // ancestor pool slots, root-first (root included: no committed context here)
        std::vector<std::vector<int>> anc(1);
        for (int a = nd.parent; a != -1; a = t.nodes[a].parent) anc[0].push_back(pool_slot[a]);
        std::reverse(anc[0].begin(), anc[0].end());

        std::vector<float> prev_feat =
            nd.parent == -1 ? std::vector<float>(root_hidden.begin(), root_hidden.end())
                            : features[nd.parent];
        DraftForwardIn<float> in;
        int tok = nd.token;
        int pos = root_pos + nd.depth;
        in.tokens = std::span<const int>(&tok, 1);
        in.prev_features = prev_feat;
        in.positions = std::span<const int>(&pos, 1);
        in.row_ancestors = &anc;
        in.pool_k = &pool_k;
        in.pool_v = &pool_v;
        in.want_kv_rows = true;
        auto out = forward_draft_rows(draft, target, in);
        if (features.size() <= static_cast<size_t>(node)) features.resize(node + 1);
        features[node] = out.features;
        push_pool(node, out.k_rows, out.v_rows);
        std::vector<double> dlogits = cast_vec<double>(out.logits);
        std::vector<double> lps(dlogits.size());
        nn::log_softmax_row<double>(dlogits, std::span<double>(lps));
        return lps;
    };
    return expand_tree_with(root_token, k_draft, l_draft, fn);
}

SelectedSet rerank_candidates(const DraftTree& tree, int n_verify) {
    if (n_verify < 1) throw std::invalid_argument("rerank_candidates: n_verify must be >= 1");
    const int n = static_cast<int>(tree.nodes.size());
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (tree.nodes[a].confidence != tree.nodes[b].confidence)
            return tree.nodes[a].confidence > tree.nodes[b].confidence;
        return a < b;
    });
    order.resize(std::min(n, n_verify));
    std::sort(order.begin(), order.end());

    SelectedSet s;
    s.node_indices = std::move(order);
    s.tree_mask = build_tree_mask(tree, s.node_indices);
    return s;
}

AttnMask build_tree_mask(const DraftTree& tree, const std::vector<int>& selected) {
    const int n = static_cast<int>(selected.size());
    if (n == 0 || selected[0] != 0)
        throw std::invalid_argument("build_tree_mask: selection must include the root first");
    std::vector<int> sel_pos(tree.nodes.size(), -1);
    for (int i = 0; i < n; ++i) {
        if (i > 0 && selected[i] <= selected[i - 1])
            throw std::invalid_argument("build_tree_mask: selection must be ascending");
        sel_pos[selected[i]] = i;
    }
    AttnMask m;
    m.rows = n;
    m.bits.assign(static_cast<size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i) {
        int node = selected[i];
        while (node != -1) {
            int j = sel_pos[node];
            if (j < 0) throw std::invalid_argument("build_tree_mask: closure violation");
            m.bits[static_cast<size_t>(i) * n + j] = 1;
            node = tree.nodes[node].parent;
        }
    }
    return m;
}

VerifyResult verify(const DraftTree& tree, const SelectedSet& selected, const VerifyInputs& in) {
    const int n = static_cast<int>(selected.node_indices.size());
    if (in.vocab <= 0) throw std::invalid_argument("verify: vocab must be positive");
    if (in.logits.size() != static_cast<size_t>(n) * in.vocab)
        throw std::invalid_argument("verify: logits row count mismatch");
    if (!in.hidden.empty() && in.hidden.size() != static_cast<size_t>(n) * in.d)
        throw std::invalid_argument("verify: hidden row count mismatch");

    std::vector<int> sel_pos(tree.nodes.size(), -1);
    for (int i = 0; i < n; ++i) sel_pos[selected.node_indices[i]] = i;

    // the target's emission at each selected node, keyed by the absolute
    // position the emitted token would occupy
    std::vector<int> emitted(n);
    for (int i = 0; i < n; ++i) {
        const DraftNode& nd = tree.nodes[selected.node_indices[i]];
        uint64_t key = mix_key(in.seq_seed, static_cast<uint64_t>(in.root_pos + nd.depth + 1));
        emitted[i] = sample_token<float>(in.logits.subspan(static_cast<size_t>(i) * in.vocab,
                                                           in.vocab),
                                         in.temperature, key);
    }

    VerifyResult r;
    r.accepted_rows.push_back(0);
    int cur_row = 0;
    for (;;) {
        int cur_node = selected.node_indices[cur_row];
        int want = emitted[cur_row];
        int next_row = -1;
        for (int i = cur_row + 1; i < n; ++i) {
            const DraftNode& nd = tree.nodes[selected.node_indices[i]];
            if (nd.parent == cur_node && nd.token == want) {
                next_row = i;
                break;
            }
        }
        if (next_row < 0) break;
        r.accepted_tokens.push_back(want);
        r.accepted_rows.push_back(next_row);
        cur_row = next_row;
    }
    r.bonus_token = emitted[cur_row];
    r.accepted_tokens.push_back(r.bonus_token);
    r.accepted_len = static_cast<int>(r.accepted_tokens.size());
    if (!in.hidden.empty()) {
        r.new_hidden.reserve(r.accepted_rows.size() * in.d);
        for (int row : r.accepted_rows) {
            auto h = in.hidden.subspan(static_cast<size_t>(row) * in.d, in.d);
            r.new_hidden.insert(r.new_hidden.end(), h.begin(), h.end());
        }
    }
    return r;
}

std::string tree_to_json(const DraftTree& tree) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : tree.nodes)
        nodes.push_back({{"token", n.token},
                         {"parent", n.parent},
                         {"depth", n.depth},
                         {"log_prob", n.log_prob},
                         {"confidence", n.confidence}});
    return nlohmann::json{{"nodes", nodes}}.dump(2);
}

DraftTree tree_from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    DraftTree t;
    for (const auto& e : j.at("nodes")) {
        DraftNode n;
        n.token = e.at("token").get<int>();
        n.parent = e.at("parent").get<int>();
        n.depth = e.at("depth").get<int>();
        n.log_prob = e.at("log_prob").get<double>();
        n.confidence = e.at("confidence").get<double>();
        t.nodes.push_back(n);
    }
    return t;
}

}  // namespace sgrpo
