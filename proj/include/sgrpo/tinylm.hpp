#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgrpo/nn.hpp"
#include "sgrpo/rng.hpp"

namespace sgrpo {

struct ModelConfig {
    int vocab_size = 16;
    int d_model = 32;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 128;
    int max_seq_len = 32;
    uint64_t seed = 0;

    void validate() const {
        if (vocab_size < 4)
            throw std::invalid_argument("vocab_size must be >= 4 (EOS and PAD included)");
        if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0)
            throw std::invalid_argument("model dims must be positive");
        if (d_model % n_heads != 0)
            throw std::invalid_argument("d_model must be divisible by n_heads");
        if (max_seq_len < 8)
            throw std::invalid_argument("max_seq_len must be >= 8");
    }

    bool operator==(const ModelConfig&) const = default;
};

// Reserved token ids for every model built here.
constexpr int kPadToken = 0;
constexpr int kEosToken = 1;

enum class Init { normal, normal_residual, ones, zeros, pos_emb };

struct TensorSpec {
    const char* name;
    size_t offset;
    size_t rows, cols;
    Init init;
};

struct LayerOffsets {
    size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, w2;
};

namespace detail {

struct LayoutBuilder {
    std::vector<TensorSpec> specs;
    size_t total = 0;
    size_t add(const char* name, size_t rows, size_t cols, Init init) {
        size_t off = total;
        specs.push_back({name, off, rows, cols, init});
        total += rows * cols;
        return off;
    }
    LayerOffsets add_layer(int d, int d_ff) {
        LayerOffsets lo;
        lo.ln1_g = add("ln1_g", 1, d, Init::ones);
        lo.ln1_b = add("ln1_b", 1, d, Init::zeros);
        lo.wq = add("wq", d, d, Init::normal);
        lo.wk = add("wk", d, d, Init::normal);
        lo.wv = add("wv", d, d, Init::normal);
        lo.wo = add("wo", d, d, Init::normal_residual);
        lo.ln2_g = add("ln2_g", 1, d, Init::ones);
        lo.ln2_b = add("ln2_b", 1, d, Init::zeros);
        lo.w1 = add("w1", d, d_ff, Init::normal);
        lo.w2 = add("w2", d_ff, d, Init::normal_residual);
        return lo;
    }
};

template <class T>
void init_flat(std::vector<T>& flat, const std::vector<TensorSpec>& specs,
               uint64_t seed, int n_res_layers) {
    Rng rng(seed);
    const double res_scale = 0.02 / std::sqrt(2.0 * n_res_layers);
    for (const auto& s : specs) {
        T* p = flat.data() + s.offset;
        size_t n = s.rows * s.cols;
        switch (s.init) {
            case Init::normal:
                for (size_t i = 0; i < n; ++i) p[i] = T(0.02 * rng.normal());
                break;
            case Init::normal_residual:
                for (size_t i = 0; i < n; ++i) p[i] = T(res_scale * rng.normal());
                break;
            case Init::pos_emb:
                for (size_t i = 0; i < n; ++i) p[i] = T(0.01 * rng.normal());
                break;
            case Init::ones:
                for (size_t i = 0; i < n; ++i) p[i] = T(1);
                break;
            case Init::zeros:
                for (size_t i = 0; i < n; ++i) p[i] = T(0);
                break;
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Parameters. Flat storage plus fixed offsets; the layout list doubles as the
// init schedule and the checkpoint schema.
// ---------------------------------------------------------------------------

template <class T>
struct ModelParamsT {
    ModelConfig config;
    std::vector<T> flat;
    std::vector<TensorSpec> layout;

    size_t tok_emb = 0, pos_emb = 0;
    std::vector<LayerOffsets> layers;
    size_t lnf_g = 0, lnf_b = 0, lm_head = 0;

    size_t param_count() const { return flat.size(); }
    std::span<const T> at(size_t off, size_t n) const { return {flat.data() + off, n}; }
    std::span<T> at(size_t off, size_t n) { return {flat.data() + off, n}; }
};

template <class T>
ModelParamsT<T> init_model(const ModelConfig& config) {
    config.validate();
    ModelParamsT<T> p;
    p.config = config;
    detail::LayoutBuilder lb;
    const int d = config.d_model;
    p.tok_emb = lb.add("tok_emb", config.vocab_size, d, Init::normal);
    p.pos_emb = lb.add("pos_emb", config.max_seq_len, d, Init::pos_emb);
    for (int l = 0; l < config.n_layers; ++l) p.layers.push_back(lb.add_layer(d, config.d_ff));
    p.lnf_g = lb.add("lnf_g", 1, d, Init::ones);
    p.lnf_b = lb.add("lnf_b", 1, d, Init::zeros);
    p.lm_head = lb.add("lm_head", d, config.vocab_size, Init::normal);
    p.layout = lb.specs;
    p.flat.assign(lb.total, T(0));
    detail::init_flat(p.flat, p.layout, config.seed, config.n_layers);
    return p;
}

// Draft head: fuses the previous token's embedding with the previous target
// hidden state, runs its own decoder layers, and decodes through the target's
// LM head (shared storage, never copied). Embedding and positional tables are
// read from the target as frozen inputs.
template <class T>
struct DraftParamsT {
    ModelConfig config;  // target dims
    int n_layers = 1;
    std::vector<T> flat;
    std::vector<TensorSpec> layout;

    size_t w_fuse = 0;  // [2d, d]
    std::vector<LayerOffsets> layers;
    size_t lnf_g = 0, lnf_b = 0;

    size_t param_count() const { return flat.size(); }
    std::span<const T> at(size_t off, size_t n) const { return {flat.data() + off, n}; }
    std::span<T> at(size_t off, size_t n) { return {flat.data() + off, n}; }
};

template <class T>
DraftParamsT<T> init_draft(const ModelConfig& config, int n_layers = 1) {
    config.validate();
    if (n_layers <= 0) throw std::invalid_argument("draft n_layers must be positive");
    DraftParamsT<T> p;
    p.config = config;
    p.n_layers = n_layers;
    detail::LayoutBuilder lb;
    const int d = config.d_model;
    p.w_fuse = lb.add("w_fuse", 2 * d, d, Init::normal);
    for (int l = 0; l < n_layers; ++l) p.layers.push_back(lb.add_layer(d, config.d_ff));
    p.lnf_g = lb.add("lnf_g", 1, d, Init::ones);
    p.lnf_b = lb.add("lnf_b", 1, d, Init::zeros);
    p.layout = lb.specs;
    p.flat.assign(lb.total, T(0));
    detail::init_flat(p.flat, p.layout, mix_key(config.seed, 0xd4af7), n_layers);
    return p;
}

template <class To, class From>
std::vector<To> cast_vec(const std::vector<From>& v) {
    std::vector<To> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<To>(v[i]);
    return out;
}

template <class To, class From>
ModelParamsT<To> cast_params(const ModelParamsT<From>& p) {
    ModelParamsT<To> q;
    q.config = p.config;
    q.flat = cast_vec<To>(p.flat);
    q.layout = p.layout;
    q.tok_emb = p.tok_emb;
    q.pos_emb = p.pos_emb;
    q.layers = p.layers;
    q.lnf_g = p.lnf_g;
    q.lnf_b = p.lnf_b;
    q.lm_head = p.lm_head;
    return q;
}

template <class To, class From>
DraftParamsT<To> cast_draft(const DraftParamsT<From>& p) {
    DraftParamsT<To> q;
    q.config = p.config;
    q.n_layers = p.n_layers;
    q.flat = cast_vec<To>(p.flat);
    q.layout = p.layout;
    q.w_fuse = p.w_fuse;
    q.layers = p.layers;
    q.lnf_g = p.lnf_g;
    q.lnf_b = p.lnf_b;
    return q;
}

// ---------------------------------------------------------------------------
// KV cache. Rollback after rejected speculative tokens is gather-then-truncate:
// survivors of the freshly appended block are compacted, the rest dropped.
// ---------------------------------------------------------------------------

template <class T>
struct KvCacheT {
    int n_layers = 0, d = 0, len = 0;
    std::vector<std::vector<T>> k, v;  // per layer, len*d

    void reset(int layers, int dim) {
        n_layers = layers;
        d = dim;
        len = 0;
        k.assign(layers, {});
        v.assign(layers, {});
    }

    void truncate(int new_len) {
        if (new_len > len) throw std::invalid_argument("cache truncate beyond length");
        len = new_len;
        for (auto& kk : k) kk.resize(static_cast<size_t>(len) * d);
        for (auto& vv : v) vv.resize(static_cast<size_t>(len) * d);
    }

    // Keep `keep[i]`-th rows of the block appended after base_len, in order.
    // `keep` must be strictly increasing, so dst <= src and rows compact left.
    void gather_tail(int base_len, std::span<const int> keep) {
        for (int l = 0; l < n_layers; ++l) {
            for (size_t i = 0; i < keep.size(); ++i) {
                size_t dst = (base_len + i) * static_cast<size_t>(d);
                size_t src = (base_len + keep[i]) * static_cast<size_t>(d);
                if (src != dst) {
                    std::copy_n(k[l].data() + src, d, k[l].data() + dst);
                    std::copy_n(v[l].data() + src, d, v[l].data() + dst);
                }
            }
        }
        len = base_len + static_cast<int>(keep.size());
        for (auto& kk : k) kk.resize(static_cast<size_t>(len) * d);
        for (auto& vv : v) vv.resize(static_cast<size_t>(len) * d);
    }
};

// Attention mask among the newly forwarded rows. Cached (prefix) positions are
// always visible. bits[i*rows + j] == 1 means row i may attend row j.
struct AttnMask {
    int rows = 0;
    std::vector<uint8_t> bits;
    bool at(int i, int j) const { return bits[static_cast<size_t>(i) * rows + j] != 0; }
};

template <class T>
struct ForwardOutputT {
    int rows = 0;
    std::vector<T> logits;  // rows * vocab
    std::vector<T> hidden;  // rows * d, post final layernorm
};

// Counts target forward invocations; used to assert that draft training never
// touches the target.
inline uint64_t& target_forward_calls() {
    static uint64_t n = 0;
    return n;
}

namespace detail {

// One decode block pass shared by target and draft: x is rows*d, cache holds
// the committed prefix, `extra` holds per-row ancestor K/V (draft tree paths).
template <class T>
struct ExtraKv {
    // ancestors per new row: indices into a pool of per-layer kv rows
    const std::vector<std::vector<int>>* row_ancestors = nullptr;
    const std::vector<std::vector<T>>* pool_k = nullptr;  // per layer, pooled rows
    const std::vector<std::vector<T>>* pool_v = nullptr;
};

template <class T>
void decode_blocks(std::span<const T> flat, const std::vector<LayerOffsets>& layers,
                   int d, int n_heads, int d_ff, std::vector<T>& x, int rows,
                   const AttnMask* mask, KvCacheT<T>* cache,
                   const ExtraKv<T>* extra,
                   std::vector<std::vector<T>>* out_k_rows,
                   std::vector<std::vector<T>>* out_v_rows,
                   bool extend_cache = true) {
    const int dh = d / n_heads;
    const T att_scale = T(1) / std::sqrt(T(dh));
    const int base_len = cache ? cache->len : 0;
    std::vector<T> xln(static_cast<size_t>(rows) * d), q(xln.size()), kn(xln.size()),
        vn(xln.size()), att(xln.size()), proj(xln.size()), fch(static_cast<size_t>(rows) * d_ff),
        fgelu(fch.size());
    std::vector<T> scores;

    for (size_t li = 0; li < layers.size(); ++li) {
        const auto& lo = layers[li];
        auto w = [&](size_t off, size_t n) { return std::span<const T>(flat.data() + off, n); };
        nn::layernorm_fwd<T>(x, w(lo.ln1_g, d), w(lo.ln1_b, d), xln, rows, d);
        nn::matmul<T>(xln, w(lo.wq, d * d), q, rows, d, d);
        nn::matmul<T>(xln, w(lo.wk, d * d), kn, rows, d, d);
        nn::matmul<T>(xln, w(lo.wv, d * d), vn, rows, d, d);

        const T* kc = nullptr;
        const T* vc = nullptr;
        if (cache) {
            kc = cache->k[li].data();
            vc = cache->v[li].data();
        }
        // attention per row/head over [cache | extra ancestors | allowed new rows]
        for (int i = 0; i < rows; ++i) {
            const std::vector<int>* anc = nullptr;
            if (extra && extra->row_ancestors) anc = &(*extra->row_ancestors)[i];
            const int n_anc = anc ? static_cast<int>(anc->size()) : 0;
            for (int h = 0; h < n_heads; ++h) {
                const int ho = h * dh;
                const T* qi = q.data() + static_cast<size_t>(i) * d + ho;
                scores.clear();
                // cache keys
                for (int t = 0; t < base_len; ++t) {
                    const T* kt = kc + static_cast<size_t>(t) * d + ho;
                    T s = 0;
                    for (int e = 0; e < dh; ++e) s += qi[e] * kt[e];
                    scores.push_back(s * att_scale);
                }
                // ancestor keys
                for (int a = 0; a < n_anc; ++a) {
                    const T* kt = (*extra->pool_k)[li].data() +
                                  static_cast<size_t>((*anc)[a]) * d + ho;
                    T s = 0;
                    for (int e = 0; e < dh; ++e) s += qi[e] * kt[e];
                    scores.push_back(s * att_scale);
                }
                // new rows
                for (int j = 0; j < rows; ++j) {
                    bool ok = mask ? mask->at(i, j) : (j <= i);
                    if (!ok) {
                        scores.push_back(-std::numeric_limits<T>::infinity());
                        continue;
                    }
                    const T* kj = kn.data() + static_cast<size_t>(j) * d + ho;
                    T s = 0;
                    for (int e = 0; e < dh; ++e) s += qi[e] * kj[e];
                    scores.push_back(s * att_scale);
                }
                nn::softmax_row<T>(scores);
                T* oi = att.data() + static_cast<size_t>(i) * d + ho;
                for (int e = 0; e < dh; ++e) oi[e] = 0;
                int sidx = 0;
                for (int t = 0; t < base_len; ++t, ++sidx) {
                    const T p = scores[sidx];
                    if (p == T(0)) continue;
                    const T* vt = vc + static_cast<size_t>(t) * d + ho;
                    for (int e = 0; e < dh; ++e) oi[e] += p * vt[e];
                }
                for (int a = 0; a < n_anc; ++a, ++sidx) {
                    const T p = scores[sidx];
                    if (p == T(0)) continue;
                    const T* vt = (*extra->pool_v)[li].data() +
                                  static_cast<size_t>((*anc)[a]) * d + ho;
                    for (int e = 0; e < dh; ++e) oi[e] += p * vt[e];
                }
                for (int j = 0; j < rows; ++j, ++sidx) {
                    const T p = scores[sidx];
                    if (p == T(0)) continue;
                    const T* vj = vn.data() + static_cast<size_t>(j) * d + ho;
                    for (int e = 0; e < dh; ++e) oi[e] += p * vj[e];
                }
            }
        }
        nn::matmul<T>(att, w(lo.wo, d * d), proj, rows, d, d);
        for (size_t e = 0; e < x.size(); ++e) x[e] += proj[e];

        nn::layernorm_fwd<T>(x, w(lo.ln2_g, d), w(lo.ln2_b, d), xln, rows, d);
        nn::matmul<T>(xln, w(lo.w1, static_cast<size_t>(d) * d_ff), fch, rows, d, d_ff);
        nn::gelu_fwd<T>(fch, std::span<T>(fgelu));
        nn::matmul<T>(fgelu, w(lo.w2, static_cast<size_t>(d) * d_ff), proj, rows, d_ff, d);
        for (size_t e = 0; e < x.size(); ++e) x[e] += proj[e];

        if (cache && extend_cache) {
            cache->k[li].insert(cache->k[li].end(), kn.begin(), kn.end());
            cache->v[li].insert(cache->v[li].end(), vn.begin(), vn.end());
        }
        if (out_k_rows) (*out_k_rows)[li] = kn;
        if (out_v_rows) (*out_v_rows)[li] = vn;
    }
    if (cache && extend_cache) cache->len += rows;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Target forward (decode path). Returns logits and post-norm hidden states for
// every new position; extends the cache by the new positions when given one.
// ---------------------------------------------------------------------------

template <class T>
ForwardOutputT<T> forward_target(const ModelParamsT<T>& params, std::span<const int> tokens,
                                 std::span<const int> positions, const AttnMask* mask = nullptr,
                                 KvCacheT<T>* cache = nullptr) {
    const auto& cfg = params.config;
    const int rows = static_cast<int>(tokens.size());
    if (rows == 0) throw std::invalid_argument("forward_target: empty input");
    if (positions.size() != tokens.size())
        throw std::invalid_argument("forward_target: tokens/positions mismatch");
    if (mask && mask->rows != rows)
        throw std::invalid_argument("forward_target: mask shape mismatch");
    const int d = cfg.d_model;
    for (int i = 0; i < rows; ++i) {
        if (tokens[i] < 0 || tokens[i] >= cfg.vocab_size)
            throw std::invalid_argument("forward_target: token id out of range");
        if (positions[i] < 0 || positions[i] >= cfg.max_seq_len)
            throw std::out_of_range("forward_target: position beyond max_seq_len");
    }
    ++target_forward_calls();

    std::vector<T> x(static_cast<size_t>(rows) * d);
    for (int i = 0; i < rows; ++i) {
        const T* te = params.flat.data() + params.tok_emb + static_cast<size_t>(tokens[i]) * d;
        const T* pe = params.flat.data() + params.pos_emb + static_cast<size_t>(positions[i]) * d;
        T* xr = x.data() + static_cast<size_t>(i) * d;
        for (int e = 0; e < d; ++e) xr[e] = te[e] + pe[e];
    }
    detail::decode_blocks<T>(params.flat, params.layers, d, cfg.n_heads, cfg.d_ff, x, rows,
                             mask, cache, nullptr, nullptr, nullptr);

    ForwardOutputT<T> out;
    out.rows = rows;
    out.hidden.assign(static_cast<size_t>(rows) * d, T(0));
    nn::layernorm_fwd<T>(x, params.at(params.lnf_g, d), params.at(params.lnf_b, d),
                         out.hidden, rows, d);
    out.logits.assign(static_cast<size_t>(rows) * cfg.vocab_size, T(0));
    nn::matmul<T>(out.hidden, params.at(params.lm_head, static_cast<size_t>(d) * cfg.vocab_size),
                  out.logits, rows, d, cfg.vocab_size);
    for (T v : out.logits)
        if (!std::isfinite(double(v))) throw std::runtime_error("forward_target: non-finite logits");
    return out;
}

// ---------------------------------------------------------------------------
// Draft forward. Each row fuses (token embedding, previous feature); rows may
// carry per-row ancestor K/V chains for tree expansion. Logits always go
// through the target's LM head.
// ---------------------------------------------------------------------------

template <class T>
struct DraftNodeKv {
    // per layer k/v rows of one forwarded draft position
    std::vector<std::vector<T>> k, v;
};

template <class T>
struct DraftForwardIn {
    std::span<const int> tokens;
    std::span<const T> prev_features;  // rows * d
    std::span<const int> positions;
    const AttnMask* mask = nullptr;
    KvCacheT<T>* cache = nullptr;
    // ancestor pool for tree expansion (per layer rows); row_ancestors[i] lists
    // pool indices visible to row i, nearest-root first
    const std::vector<std::vector<int>>* row_ancestors = nullptr;
    const std::vector<std::vector<T>>* pool_k = nullptr;
    const std::vector<std::vector<T>>* pool_v = nullptr;
    bool want_kv_rows = false;
    bool extend_cache = true;  // read-only context when false
};

template <class T>
struct DraftForwardOut {
    int rows = 0;
    std::vector<T> features;  // rows * d
    std::vector<T> logits;    // rows * vocab
    // per layer, rows*d; only filled when want_kv_rows
    std::vector<std::vector<T>> k_rows, v_rows;
};

template <class T>
DraftForwardOut<T> forward_draft_rows(const DraftParamsT<T>& draft,
                                      const ModelParamsT<T>& target,
                                      const DraftForwardIn<T>& in) {
    const auto& cfg = draft.config;
    const int rows = static_cast<int>(in.tokens.size());
    const int d = cfg.d_model;
    if (rows == 0) throw std::invalid_argument("forward_draft: empty input");
    if (in.prev_features.size() != static_cast<size_t>(rows) * d)
        throw std::invalid_argument("forward_draft: feature dimension mismatch");
    for (int i = 0; i < rows; ++i) {
        if (in.tokens[i] < 0 || in.tokens[i] >= cfg.vocab_size)
            throw std::invalid_argument("forward_draft: token id out of range");
        if (in.positions[i] < 0 || in.positions[i] >= cfg.max_seq_len)
            throw std::out_of_range("forward_draft: position beyond max_seq_len");
    }

    // fuse: x = concat(emb, feat) @ w_fuse + pos_emb
    std::vector<T> fused(static_cast<size_t>(rows) * 2 * d);
    for (int i = 0; i < rows; ++i) {
        const T* te = target.flat.data() + target.tok_emb + static_cast<size_t>(in.tokens[i]) * d;
        T* fr = fused.data() + static_cast<size_t>(i) * 2 * d;
        std::copy_n(te, d, fr);
        std::copy_n(in.prev_features.data() + static_cast<size_t>(i) * d, d, fr + d);
    }
    std::vector<T> x(static_cast<size_t>(rows) * d);
    nn::matmul<T>(fused, draft.at(draft.w_fuse, static_cast<size_t>(2 * d) * d), x, rows, 2 * d, d);
    for (int i = 0; i < rows; ++i) {
        const T* pe = target.flat.data() + target.pos_emb + static_cast<size_t>(in.positions[i]) * d;
        T* xr = x.data() + static_cast<size_t>(i) * d;
        for (int e = 0; e < d; ++e) xr[e] += pe[e];
    }

    detail::ExtraKv<T> extra;
    extra.row_ancestors = in.row_ancestors;
    extra.pool_k = in.pool_k;
    extra.pool_v = in.pool_v;
    DraftForwardOut<T> out;
    std::vector<std::vector<T>> krows, vrows;
    if (in.want_kv_rows) {
        krows.resize(draft.layers.size());
        vrows.resize(draft.layers.size());
    }
    detail::decode_blocks<T>(draft.flat, draft.layers, d, cfg.n_heads, cfg.d_ff, x, rows,
                             in.mask, in.cache, in.row_ancestors ? &extra : nullptr,
                             in.want_kv_rows ? &krows : nullptr,
                             in.want_kv_rows ? &vrows : nullptr, in.extend_cache);

    out.rows = rows;
    out.features.assign(static_cast<size_t>(rows) * d, T(0));
    nn::layernorm_fwd<T>(x, draft.at(draft.lnf_g, d), draft.at(draft.lnf_b, d), out.features,
                         rows, d);
    out.logits.assign(static_cast<size_t>(rows) * cfg.vocab_size, T(0));
    nn::matmul<T>(out.features,
                  target.at(target.lm_head, static_cast<size_t>(d) * cfg.vocab_size), out.logits,
                  rows, d, cfg.vocab_size);
    out.k_rows = std::move(krows);
    out.v_rows = std::move(vrows);
    for (T v : out.logits)
        if (!std::isfinite(double(v))) throw std::runtime_error("forward_draft: non-finite logits");
    return out;
}

// Single-step convenience form: one (prev_token, prev_hidden) pair with no
// context. Returns (next_hidden, logits through the target LM head).
template <class T>
std::pair<std::vector<T>, std::vector<T>> forward_draft(const DraftParamsT<T>& draft,
                                                        const ModelParamsT<T>& target,
                                                        int prev_token,
                                                        std::span<const T> prev_hidden,
                                                        int position = 1) {
    if (prev_hidden.size() != static_cast<size_t>(draft.config.d_model))
        throw std::invalid_argument("forward_draft: prev_hidden dimension mismatch");
    DraftForwardIn<T> in;
    int tok = prev_token;
    int pos = position;
    in.tokens = std::span<const int>(&tok, 1);
    in.prev_features = prev_hidden;
    in.positions = std::span<const int>(&pos, 1);
    auto out = forward_draft_rows(draft, target, in);
    return {std::move(out.features), std::move(out.logits)};
}

// ---------------------------------------------------------------------------
// Sampling. temperature 0 is argmax with lowest-index tie-break; temperature>0
// draws from the softmax using the keyed stream, so replaying a key replays
// the token.
// ---------------------------------------------------------------------------

template <class T>
int sample_token(std::span<const T> logits, double temperature, uint64_t rng_key) {
    if (logits.empty()) throw std::invalid_argument("sample_token: empty logits");
    double mx = -std::numeric_limits<double>::infinity();
    for (T v : logits) {
        double dv = double(v);
        if (std::isnan(dv)) throw std::domain_error("sample_token: NaN logit");
        if (dv > mx) mx = dv;
    }
    if (mx == -std::numeric_limits<double>::infinity())
        throw std::domain_error("sample_token: all logits are -inf");
    if (temperature < 0) throw std::invalid_argument("sample_token: negative temperature");
    if (temperature == 0) {
        int best = 0;
        double bv = double(logits[0]);
        for (size_t i = 1; i < logits.size(); ++i) {
            if (double(logits[i]) > bv) {
                bv = double(logits[i]);
                best = static_cast<int>(i);
            }
        }
        return best;
    }
    std::vector<double> p(logits.size());
    double sum = 0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((double(logits[i]) - mx) / temperature);
        sum += p[i];
    }
    Rng rng(rng_key);
    double u = rng.uniform() * sum;
    double acc = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;
}

// ---------------------------------------------------------------------------
// Training path: full-sequence causal forward with saved activations and a
// hand-rolled backward. Used by both policy and supervised updates.
// ---------------------------------------------------------------------------

template <class T>
struct LayerActs {
    std::vector<T> x_in, ln1_y, q, k, v, att_probs, att_ctx, att_res, ln2_y, fch, fgelu;
    nn::LnCache<T> ln1_c, ln2_c;
};

template <class T>
struct TargetActs {
    int rows = 0;
    std::vector<int> tokens;
    std::vector<T> x0;
    std::vector<LayerActs<T>> layers;
    std::vector<T> x_final, lnf_y;
    nn::LnCache<T> lnf_c;
};

namespace detail {

template <class T>
void train_blocks_fwd(std::span<const T> flat, const std::vector<LayerOffsets>& offs, int d,
                      int n_heads, int d_ff, std::vector<T> x, int rows,
                      std::vector<LayerActs<T>>& acts, std::vector<T>& x_final) {
    const int dh = d / n_heads;
    const T att_scale = T(1) / std::sqrt(T(dh));
    acts.resize(offs.size());
    for (size_t li = 0; li < offs.size(); ++li) {
        const auto& lo = offs[li];
        auto& a = acts[li];
        auto w = [&](size_t off, size_t n) { return std::span<const T>(flat.data() + off, n); };
        a.x_in = x;
        a.ln1_y.assign(x.size(), T(0));
        nn::layernorm_fwd<T>(a.x_in, w(lo.ln1_g, d), w(lo.ln1_b, d), a.ln1_y, rows, d, &a.ln1_c);
        a.q.assign(x.size(), T(0));
        a.k.assign(x.size(), T(0));
        a.v.assign(x.size(), T(0));
        nn::matmul<T>(a.ln1_y, w(lo.wq, d * d), a.q, rows, d, d);
        nn::matmul<T>(a.ln1_y, w(lo.wk, d * d), a.k, rows, d, d);
        nn::matmul<T>(a.ln1_y, w(lo.wv, d * d), a.v, rows, d, d);
        a.att_probs.assign(static_cast<size_t>(n_heads) * rows * rows, T(0));
        a.att_ctx.assign(x.size(), T(0));
        for (int h = 0; h < n_heads; ++h) {
            const int ho = h * dh;
            for (int i = 0; i < rows; ++i) {
                T* prow = a.att_probs.data() + (static_cast<size_t>(h) * rows + i) * rows;
                const T* qi = a.q.data() + static_cast<size_t>(i) * d + ho;
                T mx = -std::numeric_limits<T>::infinity();
                for (int j = 0; j <= i; ++j) {
                    const T* kj = a.k.data() + static_cast<size_t>(j) * d + ho;
                    T s = 0;
                    for (int e = 0; e < dh; ++e) s += qi[e] * kj[e];
                    prow[j] = s * att_scale;
                    mx = std::max(mx, prow[j]);
                }
                T sum = 0;
                for (int j = 0; j <= i; ++j) {
                    prow[j] = std::exp(prow[j] - mx);
                    sum += prow[j];
                }
                T* oi = a.att_ctx.data() + static_cast<size_t>(i) * d + ho;
                for (int j = 0; j <= i; ++j) {
                    prow[j] /= sum;
                    const T* vj = a.v.data() + static_cast<size_t>(j) * d + ho;
                    for (int e = 0; e < dh; ++e) oi[e] += prow[j] * vj[e];
                }
            }
        }
        a.att_res.assign(x.size(), T(0));
        nn::matmul<T>(a.att_ctx, w(lo.wo, d * d), a.att_res, rows, d, d);
        for (size_t e = 0; e < x.size(); ++e) x[e] = a.x_in[e] + a.att_res[e];

        a.ln2_y.assign(x.size(), T(0));
        nn::layernorm_fwd<T>(x, w(lo.ln2_g, d), w(lo.ln2_b, d), a.ln2_y, rows, d, &a.ln2_c);
        a.fch.assign(static_cast<size_t>(rows) * d_ff, T(0));
        nn::matmul<T>(a.ln2_y, w(lo.w1, static_cast<size_t>(d) * d_ff), a.fch, rows, d, d_ff);
        a.fgelu.assign(a.fch.size(), T(0));
        nn::gelu_fwd<T>(a.fch, std::span<T>(a.fgelu));
        std::vector<T> mlp_out(x.size(), T(0));
        nn::matmul<T>(a.fgelu, w(lo.w2, static_cast<size_t>(d) * d_ff), mlp_out, rows, d_ff, d);
        // x after attention residual is needed in backward; stash it in att_ctx? no:
        // recomputable as x_in + att_res. Keep moving.
        for (size_t e = 0; e < x.size(); ++e) x[e] += mlp_out[e];
    }
    x_final = std::move(x);
}

template <class T>
void train_blocks_bwd(std::span<const T> flat, const std::vector<LayerOffsets>& offs, int d,
                      int n_heads, int d_ff, int rows, const std::vector<LayerActs<T>>& acts,
                      std::vector<T>& dx, std::span<T> grad) {
    const int dh = d / n_heads;
    const T att_scale = T(1) / std::sqrt(T(dh));
    for (int li = static_cast<int>(offs.size()) - 1; li >= 0; --li) {
        const auto& lo = offs[li];
        const auto& a = acts[li];
        auto w = [&](size_t off, size_t n) { return std::span<const T>(flat.data() + off, n); };
        auto g = [&](size_t off, size_t n) { return std::span<T>(grad.data() + off, n); };

        // x_mid = x_in + att_res (input to the MLP half)
        std::vector<T> x_mid(a.x_in.size());
        for (size_t e = 0; e < x_mid.size(); ++e) x_mid[e] = a.x_in[e] + a.att_res[e];

        // MLP backward: dx feeds both residual and ln2 branches
        std::vector<T> d_ln2(a.ln2_y.size(), T(0)), d_fgelu(a.fgelu.size(), T(0)),
            d_fch(a.fch.size(), T(0)), d_xmid(x_mid.size(), T(0));
        // d mlp_out = dx
        nn::matmul_at<T>(a.fgelu, dx, g(lo.w2, static_cast<size_t>(d) * d_ff), rows, d_ff, d);
        nn::matmul_bt<T>(dx, w(lo.w2, static_cast<size_t>(d) * d_ff), d_fgelu, rows, d, d_ff);
        nn::gelu_bwd<T>(a.fch, d_fgelu, std::span<T>(d_fch));
        nn::matmul_at<T>(a.ln2_y, d_fch, g(lo.w1, static_cast<size_t>(d) * d_ff), rows, d, d_ff);
        nn::matmul_bt<T>(d_fch, w(lo.w1, static_cast<size_t>(d) * d_ff), d_ln2, rows, d_ff, d);
        nn::layernorm_bwd<T>(x_mid, w(lo.ln2_g, d), a.ln2_c, d_ln2, d_xmid, g(lo.ln2_g, d),
                             g(lo.ln2_b, d), rows, d);
        for (size_t e = 0; e < dx.size(); ++e) d_xmid[e] += dx[e];  // residual path

        // attention backward: d att_res = d_xmid
        std::vector<T> d_ctx(a.att_ctx.size(), T(0));
        nn::matmul_at<T>(a.att_ctx, d_xmid, g(lo.wo, d * d), rows, d, d);
        nn::matmul_bt<T>(d_xmid, w(lo.wo, d * d), d_ctx, rows, d, d);

        std::vector<T> d_q(a.q.size(), T(0)), d_k(a.k.size(), T(0)), d_v(a.v.size(), T(0));
        for (int h = 0; h < n_heads; ++h) {
            const int ho = h * dh;
            for (int i = 0; i < rows; ++i) {
                const T* prow = a.att_probs.data() + (static_cast<size_t>(h) * rows + i) * rows;
                const T* dctx_i = d_ctx.data() + static_cast<size_t>(i) * d + ho;
                // dP[j] = dctx_i . v_j ; dv_j += P[j] * dctx_i
                T dot = 0;
                std::vector<T> dp(i + 1);
                for (int j = 0; j <= i; ++j) {
                    const T* vj = a.v.data() + static_cast<size_t>(j) * d + ho;
                    T s = 0;
                    for (int e = 0; e < dh; ++e) s += dctx_i[e] * vj[e];
                    dp[j] = s;
                    dot += s * prow[j];
                    T* dvj = d_v.data() + static_cast<size_t>(j) * d + ho;
                    for (int e = 0; e < dh; ++e) dvj[e] += prow[j] * dctx_i[e];
                }
                // dS = P * (dP - dot)
                const T* qi = a.q.data() + static_cast<size_t>(i) * d + ho;
                T* dqi = d_q.data() + static_cast<size_t>(i) * d + ho;
                for (int j = 0; j <= i; ++j) {
                    T ds = prow[j] * (dp[j] - dot) * att_scale;
                    if (ds == T(0)) continue;
                    const T* kj = a.k.data() + static_cast<size_t>(j) * d + ho;
                    T* dkj = d_k.data() + static_cast<size_t>(j) * d + ho;
                    for (int e = 0; e < dh; ++e) {
                        dqi[e] += ds * kj[e];
                        dkj[e] += ds * qi[e];
                    }
                }
            }
        }
        std::vector<T> d_ln1(a.ln1_y.size(), T(0));
        nn::matmul_at<T>(a.ln1_y, d_q, g(lo.wq, d * d), rows, d, d);
        nn::matmul_bt<T>(d_q, w(lo.wq, d * d), d_ln1, rows, d, d);
        nn::matmul_at<T>(a.ln1_y, d_k, g(lo.wk, d * d), rows, d, d);
        nn::matmul_bt<T>(d_k, w(lo.wk, d * d), d_ln1, rows, d, d, true);
        nn::matmul_at<T>(a.ln1_y, d_v, g(lo.wv, d * d), rows, d, d);
        nn::matmul_bt<T>(d_v, w(lo.wv, d * d), d_ln1, rows, d, d, true);

        std::vector<T> d_xin(a.x_in.size(), T(0));
        nn::layernorm_bwd<T>(a.x_in, w(lo.ln1_g, d), a.ln1_c, d_ln1, d_xin, g(lo.ln1_g, d),
                             g(lo.ln1_b, d), rows, d);
        for (size_t e = 0; e < dx.size(); ++e) dx[e] = d_xin[e] + d_xmid[e];
    }
}

}  // namespace detail

template <class T>
ForwardOutputT<T> target_train_forward(const ModelParamsT<T>& params,
                                       std::span<const int> tokens, TargetActs<T>& acts) {
    const auto& cfg = params.config;
    const int rows = static_cast<int>(tokens.size());
    const int d = cfg.d_model;
    if (rows == 0 || rows > cfg.max_seq_len)
        throw std::invalid_argument("target_train_forward: bad sequence length");
    ++target_forward_calls();
    acts.rows = rows;
    acts.tokens.assign(tokens.begin(), tokens.end());
    acts.x0.assign(static_cast<size_t>(rows) * d, T(0));
    for (int i = 0; i < rows; ++i) {
        const T* te = params.flat.data() + params.tok_emb + static_cast<size_t>(tokens[i]) * d;
        const T* pe = params.flat.data() + params.pos_emb + static_cast<size_t>(i) * d;
        T* xr = acts.x0.data() + static_cast<size_t>(i) * d;
        for (int e = 0; e < d; ++e) xr[e] = te[e] + pe[e];
    }
    detail::train_blocks_fwd<T>(params.flat, params.layers, d, cfg.n_heads, cfg.d_ff, acts.x0,
                                rows, acts.layers, acts.x_final);
    acts.lnf_y.assign(static_cast<size_t>(rows) * d, T(0));
    nn::layernorm_fwd<T>(acts.x_final, params.at(params.lnf_g, d), params.at(params.lnf_b, d),
                         acts.lnf_y, rows, d, &acts.lnf_c);
    ForwardOutputT<T> out;
    out.rows = rows;
    out.hidden = acts.lnf_y;
    out.logits.assign(static_cast<size_t>(rows) * cfg.vocab_size, T(0));
    nn::matmul<T>(acts.lnf_y, params.at(params.lm_head, static_cast<size_t>(d) * cfg.vocab_size),
                  out.logits, rows, d, cfg.vocab_size);
    return out;
}

template <class T>
void target_train_backward(const ModelParamsT<T>& params, const TargetActs<T>& acts,
                           std::span<const T> dlogits, std::span<T> grad) {
    const auto& cfg = params.config;
    const int rows = acts.rows;
    const int d = cfg.d_model;
    if (grad.size() != params.flat.size())
        throw std::invalid_argument("target_train_backward: grad size mismatch");

    auto g = [&](size_t off, size_t n) { return std::span<T>(grad.data() + off, n); };
    std::vector<T> d_lnf(static_cast<size_t>(rows) * d, T(0));
    nn::matmul_at<T>(acts.lnf_y, dlogits, g(params.lm_head, static_cast<size_t>(d) * cfg.vocab_size),
                     rows, d, cfg.vocab_size);
    nn::matmul_bt<T>(dlogits, params.at(params.lm_head, static_cast<size_t>(d) * cfg.vocab_size),
                     d_lnf, rows, cfg.vocab_size, d);
    std::vector<T> dx(static_cast<size_t>(rows) * d, T(0));
    nn::layernorm_bwd<T>(acts.x_final, params.at(params.lnf_g, d), acts.lnf_c, d_lnf, dx,
                         g(params.lnf_g, d), g(params.lnf_b, d), rows, d);
    detail::train_blocks_bwd<T>(params.flat, params.layers, d, cfg.n_heads, cfg.d_ff, rows,
                                acts.layers, dx, grad);
    // embeddings
    for (int i = 0; i < rows; ++i) {
        T* gte = grad.data() + params.tok_emb + static_cast<size_t>(acts.tokens[i]) * d;
        T* gpe = grad.data() + params.pos_emb + static_cast<size_t>(i) * d;
        const T* dxr = dx.data() + static_cast<size_t>(i) * d;
        for (int e = 0; e < d; ++e) {
            gte[e] += dxr[e];
            gpe[e] += dxr[e];
        }
    }
}

// Draft training pass: teacher-forced rows (token_i, feature_{i-1}) at given
// positions, causal attention among rows, no cache. Backward flows into draft
// parameters only; embedding/positional/LM-head reads stay frozen.
template <class T>
struct DraftActs {
    int rows = 0;
    std::vector<int> tokens, positions;
    std::vector<T> fused, x0;
    std::vector<LayerActs<T>> layers;
    std::vector<T> x_final, lnf_y;
    nn::LnCache<T> lnf_c;
};

template <class T>
DraftForwardOut<T> draft_train_forward(const DraftParamsT<T>& draft,
                                       const ModelParamsT<T>& target,
                                       std::span<const int> tokens,
                                       std::span<const T> prev_features,
                                       std::span<const int> positions, DraftActs<T>& acts) {
    const auto& cfg = draft.config;
    const int rows = static_cast<int>(tokens.size());
    const int d = cfg.d_model;
    if (rows == 0) throw std::invalid_argument("draft_train_forward: empty input");
    acts.rows = rows;
    acts.tokens.assign(tokens.begin(), tokens.end());
    acts.positions.assign(positions.begin(), positions.end());
    acts.fused.assign(static_cast<size_t>(rows) * 2 * d, T(0));
    for (int i = 0; i < rows; ++i) {
        const T* te = target.flat.data() + target.tok_emb + static_cast<size_t>(tokens[i]) * d;
        T* fr = acts.fused.data() + static_cast<size_t>(i) * 2 * d;
        std::copy_n(te, d, fr);
        std::copy_n(prev_features.data() + static_cast<size_t>(i) * d, d, fr + d);
    }
    acts.x0.assign(static_cast<size_t>(rows) * d, T(0));
    nn::matmul<T>(acts.fused, draft.at(draft.w_fuse, static_cast<size_t>(2 * d) * d), acts.x0,
                  rows, 2 * d, d);
    for (int i = 0; i < rows; ++i) {
        const T* pe = target.flat.data() + target.pos_emb + static_cast<size_t>(positions[i]) * d;
        T* xr = acts.x0.data() + static_cast<size_t>(i) * d;
        for (int e = 0; e < d; ++e) xr[e] += pe[e];
    }
    detail::train_blocks_fwd<T>(draft.flat, draft.layers, d, cfg.n_heads, cfg.d_ff, acts.x0, rows,
                                acts.layers, acts.x_final);
    acts.lnf_y.assign(static_cast<size_t>(rows) * d, T(0));
    nn::layernorm_fwd<T>(acts.x_final, draft.at(draft.lnf_g, d), draft.at(draft.lnf_b, d),
                         acts.lnf_y, rows, d, &acts.lnf_c);
    DraftForwardOut<T> out;
    out.rows = rows;
    out.features = acts.lnf_y;
    out.logits.assign(static_cast<size_t>(rows) * cfg.vocab_size, T(0));
    nn::matmul<T>(acts.lnf_y, target.at(target.lm_head, static_cast<size_t>(d) * cfg.vocab_size),
                  out.logits, rows, d, cfg.vocab_size);
    return out;
}

template <class T>
void draft_train_backward(const DraftParamsT<T>& draft, const ModelParamsT<T>& target,
                          const DraftActs<T>& acts, std::span<const T> dfeatures,
                          std::span<const T> dlogits, std::span<T> grad) {
    const auto& cfg = draft.config;
    const int rows = acts.rows;
    const int d = cfg.d_model;
    if (grad.size() != draft.flat.size())
        throw std::invalid_argument("draft_train_backward: grad size mismatch");
    auto g = [&](size_t off, size_t n) { return std::span<T>(grad.data() + off, n); };

    std::vector<T> d_lnf(static_cast<size_t>(rows) * d, T(0));
    if (!dfeatures.empty()) {
        if (dfeatures.size() != d_lnf.size())
            throw std::invalid_argument("draft_train_backward: dfeatures size mismatch");
        std::copy(dfeatures.begin(), dfeatures.end(), d_lnf.begin());
    }
    if (!dlogits.empty())
        nn::matmul_bt<T>(dlogits,
                         target.at(target.lm_head, static_cast<size_t>(d) * cfg.vocab_size),
                         d_lnf, rows, cfg.vocab_size, d, true);

    std::vector<T> dx(static_cast<size_t>(rows) * d, T(0));
    nn::layernorm_bwd<T>(acts.x_final, draft.at(draft.lnf_g, d), acts.lnf_c, d_lnf, dx,
                         g(draft.lnf_g, d), g(draft.lnf_b, d), rows, d);
    detail::train_blocks_bwd<T>(draft.flat, draft.layers, d, cfg.n_heads, cfg.d_ff, rows,
                                acts.layers, dx, grad);
    // fuse projection; token/feature/positional inputs are frozen
    nn::matmul_at<T>(acts.fused, dx, g(draft.w_fuse, static_cast<size_t>(2 * d) * d), rows, 2 * d,
                     d);
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON header + raw little-endian float32 block, bit-exact
// round-trip. Implemented in src/tinylm.cpp for the float instantiation.
// ---------------------------------------------------------------------------

using Model = ModelParamsT<float>;
using Draft = DraftParamsT<float>;
using KvCache = KvCacheT<float>;
using ForwardOutput = ForwardOutputT<float>;

void save_checkpoint(const std::string& path, const Model& params);
Model load_checkpoint(const std::string& path);
void save_draft_checkpoint(const std::string& path, const Draft& params);
Draft load_draft_checkpoint(const std::string& path);

}  // namespace sgrpo
