#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sgrpo/tinylm.hpp"

namespace sgrpo {

struct DraftNode {
    int token = 0;
    int parent = -1;  // -1 for root
    int depth = 0;
    double log_prob = 0;    // draft log-softmax of this token at its position
    double confidence = 1;  // product of path probabilities, root = 1
};

// Rooted speculation tree. nodes[0] is the root (the last committed token);
// nodes are in level order, so parents always precede children.
struct DraftTree {
    std::vector<DraftNode> nodes;
};

// Upper bound on tree size: 1 + k + max(0, l-1) * k^2.
long long max_candidates(int k, int l);

// Expansion driver. `fn(tree, node)` returns the draft's log-probabilities for
// the children of `node`; it is called once per expanded node (EAGLE-2 style:
// level 1 expands the root, every further level expands the k highest-
// confidence nodes of the previous level). Ties break toward lower token ids.
using ExpandFn = std::function<std::vector<double>(const DraftTree&, int)>;
DraftTree expand_tree_with(int root_token, int k_draft, int l_draft, const ExpandFn& fn);

// Spec-shaped convenience: expands a real draft head with no committed
// context; root_hidden is the target feature one position before the root.
DraftTree expand_tree(const Draft& draft, const Model& target, std::span<const float> root_hidden,
                      int root_token, int k_draft, int l_draft, int root_pos = 1);

struct SelectedSet {
    std::vector<int> node_indices;  // ascending tree order; front() == 0
    AttnMask tree_mask;             // mask[i][j] == (j is i or an ancestor of i)
};

// Top-n_verify nodes by confidence. Descending-confidence selection is
// ancestor-closed because confidence is monotone along paths; closure is still
// checked.
SelectedSet rerank_candidates(const DraftTree& tree, int n_verify);

// Mask over an ancestor-closed selection (indices ascending in tree order).
AttnMask build_tree_mask(const DraftTree& tree, const std::vector<int>& selected);

struct VerifyResult {
    std::vector<int> accepted_tokens;  // matched path tokens, then the bonus
    int accepted_len = 0;              // matched path length + 1 (bonus included)
    int bonus_token = 0;
    // rows (indices into the selected set) of root..final matched node; these
    // are the cache rows and hidden states that survive
    std::vector<int> accepted_rows;
    std::vector<float> new_hidden;  // features of accepted positions (root..final)
};

struct VerifyInputs {
    std::span<const float> logits;  // |selected| x vocab, one row per node
    std::span<const float> hidden;  // |selected| x d, may be empty
    int vocab = 0;
    int d = 0;
    double temperature = 0;
    uint64_t seq_seed = 0;  // per-sequence stream
    int root_pos = 0;       // absolute position of the root token
};

// Strict token-level comparison: the target emits a token at every selected
// node (rng keyed by (sequence, absolute position), so acceptance is
// order-independent); the longest root walk whose selected children match the
// emissions is accepted, and the emission at the final node is the bonus.
VerifyResult verify(const DraftTree& tree, const SelectedSet& selected, const VerifyInputs& in);

// Debug fixture format.
std::string tree_to_json(const DraftTree& tree);
DraftTree tree_from_json(const std::string& text);

}  // namespace sgrpo
