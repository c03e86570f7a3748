#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sgrpo/scheduler.hpp"

namespace sgrpo {

// ---------------------------------------------------------------------------
// Synthetic addition task. Prompts are "<a>+<b>", the canonical worked
// response lists the column digits (least significant first, carries folded
// in), then "=", the answer, and EOS — so response length tracks operand size.
// Reward is exact final-answer match: the digits after the last "=" in the
// response must parse to a+b.
// ---------------------------------------------------------------------------

constexpr int kDigitBase = 2;  // token id of digit 0
constexpr int kPlusToken = 12;
constexpr int kEqToken = 13;
constexpr int kTaskVocab = 14;

struct TaskSpec {
    int min_digits = 1;
    int max_digits = 2;
    uint64_t seed = 0;

    void validate() const;
};

struct TaskExample {
    long long a = 0, b = 0;
    std::vector<int> prompt;
    std::vector<int> canonical;  // worked trace + "=" + answer + EOS
};

std::vector<int> encode_number(long long n);
std::string detokenize(std::span<const int> tokens);

TaskExample sample_example(const TaskSpec& spec, Rng& rng);
// 1.0 for an exact final-answer match, 0.0 otherwise (malformed included).
double compute_reward(const TaskExample& ex, std::span<const int> response);

// ---------------------------------------------------------------------------
// Groups and advantages
// ---------------------------------------------------------------------------

struct GroupBatch {
    TaskExample example;
    std::vector<SeqResult> members;  // G full sequences incl. cached features
    std::vector<double> rewards;
    std::vector<double> advantages;  // empty when filtered
    bool filtered = false;
};

// Population-standardized advantages, or nullopt when the group's reward
// variance is below eps_var (zero-variance group). Throws for G < 2.
std::optional<std::vector<double>> standardize_advantages(const std::vector<double>& rewards,
                                                          double eps_var);

// ---------------------------------------------------------------------------
// Losses (templated so gradient checks can run in double)
// ---------------------------------------------------------------------------

// One sequence of a weighted token-level log-likelihood loss:
//   loss = -(1/N) * sum_seq sum_{i >= prompt_len} weight * log p(t_i | t_<i)
// weight = advantage for the policy objective, 1 for supervised traces.
struct TrainSeq {
    const std::vector<int>* tokens = nullptr;
    int prompt_len = 0;
    double weight = 1.0;
};

template <class T>
double policy_loss_grad(const ModelParamsT<T>& params, const std::vector<TrainSeq>& seqs,
                        std::span<T> grad);

struct DraftLossTerms {
    double feature_loss = 0;  // SmoothL1(predicted hidden, target hidden)
    double token_loss = 0;    // CE(LM-head(predicted hidden), next token)
    double total = 0;
    long long rows = 0;
};

// Teacher-forced draft loss over cached generations; the LM head stays frozen.
// Sequences shorter than 3 tokens contribute nothing.
template <class T>
DraftLossTerms draft_loss_grad(const DraftParamsT<T>& draft, const ModelParamsT<T>& target,
                               const std::vector<const SeqResult*>& seqs, double w_feat,
                               double w_tok, std::span<T> grad);

// ---------------------------------------------------------------------------
// Optimizer (decoupled weight decay)
// ---------------------------------------------------------------------------

struct AdamW {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
    std::vector<float> m, v;
    long long t = 0;

    void step(std::span<float> params, std::span<const float> grad);
};

// One gradient step on the group-relative policy objective. Returns false (a
// logged no-op) when every group is filtered.
bool policy_update(Model& params, const std::vector<GroupBatch>& groups, AdamW& opt);

struct DraftTrainBatch {
    std::vector<const SeqResult*> seqs;
};

// One pass over the cached batch; consumes only cached hidden states (the
// target-forward counter stays untouched).
DraftLossTerms draft_update(Draft& draft, const Model& target, const DraftTrainBatch& batch,
                            AdamW& opt, double w_feat = 1.0, double w_tok = 0.1);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    ModelConfig model;
    int draft_layers = 1;
    TaskSpec task;

    // sched: c_peak either direct or from a profile file
    double alpha = 2.0;
    int k_max = 10;
    int l_max = 6;
    int c_peak = 64;
    std::string profile_path;  // optional
    int bytes_per_element = 4;

    // grpo
    int group_size = 4;        // G
    int prompts_per_iter = 2;  // B
    int iterations = 100;
    double policy_lr = 2e-4;
    double draft_lr = 1e-2;
    double eps_var = 1e-8;
    double temperature = 1.0;
    int max_new_tokens = 0;
    double w_feat = 1.0, w_tok = 0.1;

    // mode
    bool online_draft = true;
    bool early_term = true;
    DecodeMode decode_mode = DecodeMode::adaptive_spec;
    int spec_warmup_iters = 0;  // decode vanilla until this iteration

    // init
    int target_warmup_steps = 0;
    int warmup_batch = 16;
    double warmup_lr = 1e-3;
    int draft_pretrain_steps = 0;
    int pretrain_corpus_seqs = 64;

    uint64_t run_seed = 0;
    bool resample_prompts = true;  // false pins one prompt batch (fixtures)
    bool record_tokens = false;

    void validate() const;
};

struct GroupLengthStats {
    int min_len = 0, max_len = 0, range = 0;
    double mean_len = 0;
};

struct IterationMetrics {
    int iter = 0;
    double reward_mean = 0;
    double filtered_frac = 0;
    double tau = 0;
    double gen_sim_s = 0;
    double draft_update_sim_s = 0;
    double policy_update_sim_s = 0;
    double gen_wall_s = 0;
    double draft_update_wall_s = 0;
    double policy_update_wall_s = 0;
    double reward_wall_s = 0;
    double draft_feature_loss = 0;
    double draft_token_loss = 0;
    bool policy_skipped = false;
    uint64_t draft_target_forwards = 0;  // target forwards during draft_update
    int decode_steps = 0;
    std::vector<GroupLengthStats> group_lengths;
};

struct TrainResult {
    std::vector<IterationMetrics> trace;
    Model target;
    Draft draft;
    double total_gen_sim_s = 0;
    double total_update_sim_s = 0;  // draft + policy
    double total_wall_s = 0;
    long long total_accepted = 0;
    long long total_verify_slots = 0;
    // per iteration per sequence, only when cfg.record_tokens
    std::vector<std::vector<std::vector<int>>> gen_tokens;

    double overall_tau() const {
        return total_verify_slots > 0 ? double(total_accepted) / double(total_verify_slots) : 1.0;
    }
};

TrainResult train_loop(const TrainConfig& cfg);
TrainResult train_loop(const TrainConfig& cfg, Model target, Draft draft);

// Supervised warmup on canonical traces (stands in for starting from an
// instruction-tuned checkpoint).
void supervised_warmup(Model& target, const TaskSpec& task, int steps, int batch, double lr,
                       uint64_t seed);

// Draft pretraining corpus: responses generated by the current target with
// cached hidden states; returns the trained draft.
void pretrain_draft(Draft& draft, const Model& target, const TaskSpec& task, int steps,
                    int corpus_seqs, double lr, uint64_t seed, double w_feat = 1.0,
                    double w_tok = 0.1);

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);
TrainConfig load_train_config(const std::string& path);

std::string metrics_to_jsonl(const std::vector<IterationMetrics>& trace);
std::vector<IterationMetrics> metrics_from_jsonl(const std::string& text);

HardwareProfile resolve_profile(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Template definitions
// ---------------------------------------------------------------------------

template <class T>
double policy_loss_grad(const ModelParamsT<T>& params, const std::vector<TrainSeq>& seqs,
                        std::span<T> grad) {
    const auto& cfg = params.config;
    const int vocab = cfg.vocab_size;
    long long n_tokens = 0;
    for (const auto& s : seqs)
        n_tokens += std::max<long long>(0, static_cast<long long>(s.tokens->size()) - s.prompt_len);
    if (n_tokens == 0) return 0.0;
    const double inv_n = 1.0 / double(n_tokens);

    double loss = 0;
    for (const auto& s : seqs) {
        const auto& toks = *s.tokens;
        const int n = static_cast<int>(toks.size());
        if (n - s.prompt_len <= 0) continue;
        const int rows = n - 1;  // logits row i scores token i+1
        TargetActs<T> acts;
        auto out = target_train_forward<T>(params, std::span<const int>(toks.data(), rows), acts);
        std::vector<T> dlogits(static_cast<size_t>(rows) * vocab, T(0));
        std::vector<double> lp(vocab);
        for (int i = s.prompt_len; i < n; ++i) {
            const int r = i - 1;
            const T* row = out.logits.data() + static_cast<size_t>(r) * vocab;
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < vocab; ++j) mx = std::max(mx, double(row[j]));
            double sum = 0;
            for (int j = 0; j < vocab; ++j) {
                lp[j] = std::exp(double(row[j]) - mx);
                sum += lp[j];
            }
            const double logp = double(row[toks[i]]) - mx - std::log(sum);
            loss += -s.weight * inv_n * logp;
            const double scale = s.weight * inv_n;
            T* drow = dlogits.data() + static_cast<size_t>(r) * vocab;
            for (int j = 0; j < vocab; ++j) drow[j] += T(scale * (lp[j] / sum));
            drow[toks[i]] -= T(scale);
        }
        target_train_backward<T>(params, acts, dlogits, grad);
    }
    return loss;
}

template <class T>
DraftLossTerms draft_loss_grad(const DraftParamsT<T>& draft, const ModelParamsT<T>& target,
                               const std::vector<const SeqResult*>& seqs, double w_feat,
                               double w_tok, std::span<T> grad) {
    const auto& cfg = draft.config;
    const int d = cfg.d_model;
    const int vocab = cfg.vocab_size;
    DraftLossTerms terms;
    for (const auto* s : seqs)
        terms.rows += std::max<long long>(0, static_cast<long long>(s->tokens.size()) - 2);
    if (terms.rows == 0) return terms;
    const double inv_r = 1.0 / double(terms.rows);
    const double inv_rd = inv_r / double(d);

    for (const auto* s : seqs) {
        const int n = static_cast<int>(s->tokens.size());
        const int rows = n - 2;  // pairs (t_j, f_{j-1}) for j in [1, n-2]
        if (rows <= 0) continue;
        std::vector<int> toks(rows), poss(rows);
        std::vector<T> prev_feat(static_cast<size_t>(rows) * d);
        for (int j = 1; j <= rows; ++j) {
            toks[j - 1] = s->tokens[j];
            poss[j - 1] = j;
            for (int e = 0; e < d; ++e)
                prev_feat[static_cast<size_t>(j - 1) * d + e] =
                    T(s->features[static_cast<size_t>(j - 1) * d + e]);
        }
        DraftActs<T> acts;
        auto out = draft_train_forward<T>(draft, target, toks, prev_feat, poss, acts);

        std::vector<T> dfeat(static_cast<size_t>(rows) * d, T(0));
        std::vector<T> dlogits(static_cast<size_t>(rows) * vocab, T(0));
        std::vector<double> p(vocab);
        for (int r = 0; r < rows; ++r) {
            const int j = r + 1;
            // SmoothL1 against the true feature at position j
            for (int e = 0; e < d; ++e) {
                double err = double(out.features[static_cast<size_t>(r) * d + e]) -
                             double(s->features[static_cast<size_t>(j) * d + e]);
                if (std::abs(err) <= 1.0) {
                    terms.feature_loss += w_feat * inv_rd * 0.5 * err * err;
                    dfeat[static_cast<size_t>(r) * d + e] = T(w_feat * inv_rd * err);
                } else {
                    terms.feature_loss += w_feat * inv_rd * (std::abs(err) - 0.5);
                    dfeat[static_cast<size_t>(r) * d + e] = T(w_feat * inv_rd * (err > 0 ? 1 : -1));
                }
            }
            // CE against the next committed token
            const int tgt = s->tokens[j + 1];
            const T* row = out.logits.data() + static_cast<size_t>(r) * vocab;
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < vocab; ++c) mx = std::max(mx, double(row[c]));
            double sum = 0;
            for (int c = 0; c < vocab; ++c) {
                p[c] = std::exp(double(row[c]) - mx);
                sum += p[c];
            }
            terms.token_loss += -w_tok * inv_r * (double(row[tgt]) - mx - std::log(sum));
            T* drow = dlogits.data() + static_cast<size_t>(r) * vocab;
            for (int c = 0; c < vocab; ++c) drow[c] = T(w_tok * inv_r * (p[c] / sum));
            drow[tgt] -= T(w_tok * inv_r);
        }
        draft_train_backward<T>(draft, target, acts, dfeat, dlogits, grad);
    }
    terms.total = terms.feature_loss + terms.token_loss;
    return terms;
}

}  // namespace sgrpo
