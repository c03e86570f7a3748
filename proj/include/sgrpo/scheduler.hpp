#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgrpo/drafttree.hpp"
#include "sgrpo/roofline.hpp"
#include "sgrpo/tinylm.hpp"

namespace sgrpo {

// Per-step decode hyperparameters.
struct SpecConfig {
    int n_verify = 1;
    int k_draft = 0;
    int l_draft = 0;
    double alpha = 2.0;
    int k_max = 10;
    int l_max = 6;
    int c_peak = 1;

    void validate() const;
};

// N_verify = max(1, floor(C_peak / B))
int compute_n_verify(int c_peak, int b);
// K_draft = min(N_verify - 1, K_max), floored at 0
int compute_k_draft(int n_verify, int k_max);
// L_draft = min(floor(log2(N_verify / alpha)), L_max); >= 1 when drafting at
// all, 0 when k_draft == 0
int compute_l_draft(int n_verify, double alpha, int l_max, int k_draft);

struct SchedParams {
    double alpha = 2.0;
    int k_max = 10;
    int l_max = 6;
    int c_peak = 1;
};

SpecConfig plan_step(int c_peak, int b_cur, double alpha, int k_max, int l_max);
inline SpecConfig plan_step(const SchedParams& p, int b_cur) {
    return plan_step(p.c_peak, b_cur, p.alpha, p.k_max, p.l_max);
}

enum class DecodeMode { vanilla, fixed_spec, adaptive_spec };

DecodeMode decode_mode_from_string(const std::string& s);
std::string to_string(DecodeMode m);

struct GenOptions {
    DecodeMode mode = DecodeMode::vanilla;
    bool early_term = true;
    double temperature = 0.0;
    uint64_t seed = 0;
    SpecConfig fixed;          // used when mode == fixed_spec
    int max_new_tokens = 0;    // 0: limited by max_seq_len only
};

struct SeqResult {
    int id = 0;
    std::vector<int> tokens;  // prompt + generated
    int prompt_len = 0;
    bool hit_eos = false;
    std::vector<float> features;  // rows 0..len-2, d_model wide
};

struct StepRecord {
    int step = 0;
    int b_cur = 0;  // active sequences at step start
    SpecConfig cfg;
    int accepted_total = 0;
    double sim_latency_s = 0;
};

struct AcceptEvent {
    int step = 0, seq = 0, accepted = 0;
};

struct GenStats {
    std::vector<StepRecord> steps;
    std::vector<AcceptEvent> events;
    double prefill_sim_s = 0;
    double total_sim_s = 0;  // prefill + steps
    long long total_accepted = 0;
    long long total_verify_slots = 0;  // sum of b_cur over steps

    double tau() const;
};

struct BatchState {
    std::vector<SeqResult> seqs;
    GenStats stats;
};

// Runs the dynamic-batch generation loop: plan (or reuse a fixed config),
// expand/rerank/verify per unfinished sequence, commit accepted tokens,
// recompute the active count. Latencies come from the roofline cost model.
BatchState generate_dynamic_batch(const Model& target, const Draft& draft,
                                  const std::vector<std::vector<int>>& prompts, int g,
                                  const SchedParams& sched, const HardwareProfile& profile,
                                  const GenOptions& opts);

// GenStats as JSONL, one record per step.
std::string gen_stats_to_jsonl(const GenStats& stats);
std::vector<StepRecord> step_records_from_jsonl(const std::string& text);

}  // namespace sgrpo
