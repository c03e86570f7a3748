#include "sgrpo/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace sgrpo {

using nlohmann::json;

void SpecConfig::validate() const {
    if (n_verify < 1) throw std::invalid_argument("spec config: n_verify must be >= 1");
    if (k_draft < 0 || l_draft < 0)
        throw std::invalid_argument("spec config: k_draft/l_draft must be >= 0");
    if (k_draft > std::max(0, n_verify - 1))
        throw std::invalid_argument("spec config: k_draft must be <= n_verify - 1");
    if (k_draft > k_max) throw std::invalid_argument("spec config: k_draft exceeds k_max");
    if (l_draft > l_max) throw std::invalid_argument("spec config: l_draft exceeds l_max");
    if (alpha <= 0) throw std::invalid_argument("spec config: alpha must be positive");
    if (c_peak < 1) throw std::invalid_argument("spec config: c_peak must be >= 1");
}

int compute_n_verify(int c_peak, int b) {
    if (c_peak < 1 || b < 1) throw std::invalid_argument("compute_n_verify: c_peak, b >= 1");
    return std::max(1, c_peak / b);
}

int compute_k_draft(int n_verify, int k_max) {
    if (n_verify < 1) throw std::invalid_argument("compute_k_draft: n_verify >= 1");
    return std::max(0, std::min(n_verify - 1, k_max));
}

int compute_l_draft(int n_verify, double alpha, int l_max, int k_draft) {
    if (alpha <= 0) throw std::invalid_argument("compute_l_draft: alpha must be positive");
    if (k_draft == 0) return 0;
    int raw = static_cast<int>(std::floor(std::log2(double(n_verify) / alpha)));
    return std::max(1, std::min(raw, l_max));
}

SpecConfig plan_step(int c_peak, int b_cur, double alpha, int k_max, int l_max) {
    SpecConfig c;
    c.n_verify = compute_n_verify(c_peak, b_cur);
    c.k_draft = compute_k_draft(c.n_verify, k_max);
    c.l_draft = compute_l_draft(c.n_verify, alpha, l_max, c.k_draft);
    c.alpha = alpha;
    c.k_max = k_max;
    c.l_max = l_max;
    c.c_peak = c_peak;
    c.validate();
    return c;
}

DecodeMode decode_mode_from_string(const std::string& s) {
    if (s == "vanilla") return DecodeMode::vanilla;
    if (s == "fixed_spec") return DecodeMode::fixed_spec;
    if (s == "adaptive_spec") return DecodeMode::adaptive_spec;
    throw std::invalid_argument("unknown decode mode: " + s);
}

std::string to_string(DecodeMode m) {
    switch (m) {
        case DecodeMode::vanilla: return "vanilla";
        case DecodeMode::fixed_spec: return "fixed_spec";
        case DecodeMode::adaptive_spec: return "adaptive_spec";
    }
    return "?";
}

double GenStats::tau() const {
    if (total_verify_slots == 0) throw std::domain_error("tau: no verification steps logged");
    return double(total_accepted) / double(total_verify_slots);
}

namespace {

struct SeqState {
    int id = 0;
    uint64_t seed = 0;
    std::vector<int> tokens;
    int prompt_len = 0;
    int len_cap = 0;
    std::vector<float> feats;  // rows 0..tokens.size()-2
    KvCache tgt_cache, dft_cache;  // dft pair j lives at slot j-1
    bool finished = false;
    bool hit_eos = false;
};

void finish_if_capped(SeqState& s) {
    if (static_cast<int>(s.tokens.size()) >= s.len_cap) s.finished = true;
}

// Appends accepted tokens, stopping at EOS or the length cap, then reconciles
// the target cache and feature rows with the actually committed length.
int commit_tokens(SeqState& s, const std::vector<int>& accepted) {
    int appended = 0;
    for (int tok : accepted) {
        s.tokens.push_back(tok);
        ++appended;
        if (tok == kEosToken) {
            s.finished = true;
            s.hit_eos = true;
            break;
        }
        if (static_cast<int>(s.tokens.size()) >= s.len_cap) {
            s.finished = true;
            break;
        }
    }
    const int d = s.tgt_cache.d;
    const int new_p = static_cast<int>(s.tokens.size()) - 1;
    if (s.tgt_cache.len > new_p) s.tgt_cache.truncate(new_p);
    if (static_cast<int>(s.feats.size()) > new_p * d)
        s.feats.resize(static_cast<size_t>(new_p) * d);
    return appended;
}

// One decode step of one sequence. k_draft == 0 degrades to a root-only tree,
// i.e. vanilla decoding with one target forward for the pending token.
int run_step(SeqState& s, const Model& target, const Draft& draft, const SpecConfig& cfg,
             double temperature) {
    const auto& mc = target.config;
    const int d = mc.d_model;
    const int p = static_cast<int>(s.tokens.size()) - 1;
    int l_eff = std::min(cfg.l_draft, s.len_cap - 1 - p);
    int k_eff = l_eff >= 1 ? std::min(cfg.k_draft, mc.vocab_size) : 0;
    if (k_eff == 0) l_eff = 0;

    DraftTree tree;
    if (k_eff == 0) {
        tree = expand_tree_with(s.tokens[p], 0, 0, {});
    } else {
        // draft catch-up through the root pair (t_p, f_{p-1}); true features
        // only, so the base draft cache never needs rollback
        const int j0 = s.dft_cache.len + 1;
        std::vector<int> toks, poss;
        std::vector<float> pf;
        for (int j = j0; j <= p; ++j) {
            toks.push_back(s.tokens[j]);
            poss.push_back(j);
            pf.insert(pf.end(), s.feats.begin() + static_cast<size_t>(j - 1) * d,
                      s.feats.begin() + static_cast<size_t>(j) * d);
        }
        DraftForwardIn<float> cin;
        cin.tokens = toks;
        cin.prev_features = pf;
        cin.positions = poss;
        cin.cache = &s.dft_cache;
        auto cout = forward_draft_rows(draft, target, cin);
        const int last = cout.rows - 1;
        std::vector<float> root_feat(cout.features.begin() + static_cast<size_t>(last) * d,
                                     cout.features.begin() + static_cast<size_t>(last + 1) * d);
        std::vector<double> root_logits(
            cout.logits.begin() + static_cast<size_t>(last) * mc.vocab_size,
            cout.logits.begin() + static_cast<size_t>(last + 1) * mc.vocab_size);

        std::vector<std::vector<float>> node_feat{root_feat};
        std::vector<int> pool_of_node{-1};  // root K/V already in the cache
        std::vector<std::vector<float>> pool_k(draft.layers.size()), pool_v(draft.layers.size());

        auto fn = [&](const DraftTree& t, int node) -> std::vector<double> {
            if (node == 0) {
                std::vector<double> lps(root_logits.size());
                nn::log_softmax_row<double>(root_logits, std::span<double>(lps));
                return lps;
            }
            const DraftNode& nd = t.nodes[node];
            std::vector<std::vector<int>> anc(1);
            for (int a = nd.parent; a != -1; a = t.nodes[a].parent)
                if (pool_of_node[a] >= 0) anc[0].push_back(pool_of_node[a]);
            std::reverse(anc[0].begin(), anc[0].end());

            DraftForwardIn<float> in;
            int tok = nd.token;
            int pos = p + nd.depth;
            in.tokens = std::span<const int>(&tok, 1);
            in.prev_features = node_feat[nd.parent];
            in.positions = std::span<const int>(&pos, 1);
            in.cache = &s.dft_cache;
            in.extend_cache = false;
            in.row_ancestors = &anc;
            in.pool_k = &pool_k;
            in.pool_v = &pool_v;
            in.want_kv_rows = true;
            auto out = forward_draft_rows(draft, target, in);

            if (node_feat.size() <= static_cast<size_t>(node)) node_feat.resize(node + 1);
            node_feat[node] = out.features;
            if (pool_of_node.size() <= static_cast<size_t>(node))
                pool_of_node.resize(node + 1, -1);
            int slot = static_cast<int>(pool_k[0].size()) / d;
            for (size_t li = 0; li < pool_k.size(); ++li) {
                pool_k[li].insert(pool_k[li].end(), out.k_rows[li].begin(), out.k_rows[li].end());
                pool_v[li].insert(pool_v[li].end(), out.v_rows[li].begin(), out.v_rows[li].end());
            }
            pool_of_node[node] = slot;

            std::vector<double> dl = cast_vec<double>(out.logits);
            std::vector<double> lps(dl.size());
            nn::log_softmax_row<double>(dl, std::span<double>(lps));
            return lps;
        };
        tree = expand_tree_with(s.tokens[p], k_eff, l_eff, fn);
    }

    SelectedSet sel = rerank_candidates(tree, cfg.n_verify);
    const int nsel = static_cast<int>(sel.node_indices.size());
    std::vector<int> toks(nsel), poss(nsel);
    for (int i = 0; i < nsel; ++i) {
        const DraftNode& nd = tree.nodes[sel.node_indices[i]];
        toks[i] = nd.token;
        poss[i] = p + nd.depth;
    }
    const int base_len = s.tgt_cache.len;
    auto out = forward_target<float>(target, toks, poss, &sel.tree_mask, &s.tgt_cache);

    VerifyInputs vin;
    vin.logits = out.logits;
    vin.hidden = out.hidden;
    vin.vocab = mc.vocab_size;
    vin.d = d;
    vin.temperature = temperature;
    vin.seq_seed = s.seed;
    vin.root_pos = p;
    VerifyResult vr = verify(tree, sel, vin);

    s.tgt_cache.gather_tail(base_len, vr.accepted_rows);
    s.feats.insert(s.feats.end(), vr.new_hidden.begin(), vr.new_hidden.end());
    return commit_tokens(s, vr.accepted_tokens);
}

}  // namespace

BatchState generate_dynamic_batch(const Model& target, const Draft& draft,
                                  const std::vector<std::vector<int>>& prompts, int g,
                                  const SchedParams& sched, const HardwareProfile& profile,
                                  const GenOptions& opts) {
    const auto& mc = target.config;
    if (prompts.empty()) throw std::invalid_argument("generate: prompts must be non-empty");
    if (g < 1) throw std::invalid_argument("generate: g must be >= 1");
    if (sched.c_peak < 1) throw std::invalid_argument("generate: c_peak must be >= 1");
    for (const auto& pr : prompts) {
        if (pr.empty()) throw std::invalid_argument("generate: zero-length prompt");
        if (static_cast<int>(pr.size()) > mc.max_seq_len - 1)
            throw std::invalid_argument("generate: prompt longer than max_seq_len - 1");
    }
    if (opts.mode == DecodeMode::fixed_spec) opts.fixed.validate();

    const int d = mc.d_model;
    const size_t p_target = target.param_count();
    const size_t p_draft = draft.param_count();
    const int n_seqs = static_cast<int>(prompts.size()) * g;

    BatchState bs;
    std::vector<SeqState> seqs(n_seqs);

    // prefill: one target forward per distinct prompt, replicated g times
    long long prefill_tokens = 0;
    for (size_t pi = 0; pi < prompts.size(); ++pi) {
        const auto& prompt = prompts[pi];
        const int q = static_cast<int>(prompt.size());
        KvCache cache;
        cache.reset(mc.n_layers, d);
        std::vector<int> poss(q);
        for (int i = 0; i < q; ++i) poss[i] = i;
        auto out = forward_target<float>(target, prompt, poss, nullptr, &cache);
        for (int r = 0; r < g; ++r) {
            const int sid = static_cast<int>(pi) * g + r;
            SeqState& s = seqs[sid];
            s.id = sid;
            s.seed = mix_key(opts.seed, static_cast<uint64_t>(sid) + 1);
            s.tokens = prompt;
            s.prompt_len = q;
            s.len_cap = opts.max_new_tokens > 0
                            ? std::min(mc.max_seq_len, q + opts.max_new_tokens)
                            : mc.max_seq_len;
            s.feats = out.hidden;
            s.tgt_cache = cache;
            s.dft_cache.reset(static_cast<int>(draft.layers.size()), d);
            prefill_tokens += q;
            // first generated token comes straight from the prefill logits
            std::span<const float> last_row(out.logits.data() + static_cast<size_t>(q - 1) * mc.vocab_size,
                                            mc.vocab_size);
            int tok = sample_token<float>(last_row, opts.temperature, mix_key(s.seed, q));
            s.tokens.push_back(tok);
            if (tok == kEosToken) {
                s.finished = true;
                s.hit_eos = true;
            }
            finish_if_capped(s);
        }
    }
    bs.stats.prefill_sim_s = simulate_step_latency(profile, p_target, prefill_tokens);
    bs.stats.total_sim_s = bs.stats.prefill_sim_s;

    int step = 0;
    for (;;) {
        int b_cur = 0;
        for (const auto& s : seqs)
            if (!s.finished) ++b_cur;
        if (b_cur == 0) break;
        const int eff_b = opts.early_term ? b_cur : n_seqs;

        SpecConfig cfg;
        switch (opts.mode) {
            case DecodeMode::vanilla:
                cfg.n_verify = 1;
                cfg.k_draft = 0;
                cfg.l_draft = 0;
                cfg.c_peak = sched.c_peak;
                break;
            case DecodeMode::fixed_spec:
                cfg = opts.fixed;
                break;
            case DecodeMode::adaptive_spec:
                cfg = plan_step(sched, eff_b);
                break;
        }

        int accepted_total = 0;
        for (auto& s : seqs) {
            if (s.finished) continue;
            int a = run_step(s, target, draft, cfg, opts.temperature);
            accepted_total += a;
            bs.stats.events.push_back({step, s.id, a});
        }

        double sim = simulate_step_latency(profile, p_target,
                                           static_cast<long long>(eff_b) * cfg.n_verify);
        if (cfg.k_draft > 0 && cfg.l_draft > 0)
            sim += cfg.l_draft * simulate_step_latency(profile, p_draft,
                                                       static_cast<long long>(eff_b) * cfg.k_draft);

        bs.stats.steps.push_back({step, b_cur, cfg, accepted_total, sim});
        bs.stats.total_sim_s += sim;
        bs.stats.total_accepted += accepted_total;
        bs.stats.total_verify_slots += b_cur;
        ++step;
    }

    bs.seqs.reserve(n_seqs);
    for (auto& s : seqs) {
        SeqResult r;
        r.id = s.id;
        r.tokens = std::move(s.tokens);
        r.prompt_len = s.prompt_len;
        r.hit_eos = s.hit_eos;
        r.features = std::move(s.feats);
        bs.seqs.push_back(std::move(r));
    }
    return bs;
}

std::string gen_stats_to_jsonl(const GenStats& stats) {
    std::ostringstream os;
    for (const auto& st : stats.steps) {
        json j{{"step", st.step},
               {"b_cur", st.b_cur},
               {"spec_config",
                {{"n_verify", st.cfg.n_verify}, {"k_draft", st.cfg.k_draft}, {"l_draft", st.cfg.l_draft}}},
               {"accepted_total", st.accepted_total},
               {"sim_latency_s", st.sim_latency_s}};
        os << j.dump() << "\n";
    }
    return os.str();
}

std::vector<StepRecord> step_records_from_jsonl(const std::string& text) {
    std::vector<StepRecord> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        StepRecord st;
        st.step = j.at("step").get<int>();
        st.b_cur = j.at("b_cur").get<int>();
        st.cfg.n_verify = j.at("spec_config").at("n_verify").get<int>();
        st.cfg.k_draft = j.at("spec_config").at("k_draft").get<int>();
        st.cfg.l_draft = j.at("spec_config").at("l_draft").get<int>();
        st.accepted_total = j.at("accepted_total").get<int>();
        st.sim_latency_s = j.at("sim_latency_s").get<double>();
        out.push_back(st);
    }
    return out;
}

}  // namespace sgrpo
