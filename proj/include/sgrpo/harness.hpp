#pragma once

#include <string>
#include <vector>

#include "sgrpo/grpo.hpp"

namespace sgrpo {

struct RunMetrics {
    double gen_time_s = 0;     // simulated seconds from the cost model
    double update_time_s = 0;  // simulated: draft update + policy update
    double wall_time_s = 0;    // recorded, never asserted on
    double tau = 1;
    double gen_sr = 1, e2e_sr = 1;  // vs. the comparison baseline
    std::vector<GroupLengthStats> length_stats;

    bool operator==(const RunMetrics&) const = default;
};

// Appendix-D accounting: total accepted tokens over total sequence-level
// verification steps (the active count B_t per step).
double compute_tau(const std::vector<long long>& accepted_per_step,
                   const std::vector<int>& b_cur_per_step);

// (gen_sr, e2e_sr): ratios of baseline to candidate times.
std::pair<double, double> compute_speedup(const RunMetrics& baseline,
                                          const RunMetrics& candidate);

std::string run_metrics_to_json(const RunMetrics& m);
RunMetrics run_metrics_from_json(const std::string& text);

// Bench strategies. Names: vanilla, vanilla+early_term, fixed_spec,
// adaptive_spec, adaptive_spec+online_draft.
struct StrategySpec {
    std::string name;
    DecodeMode mode = DecodeMode::vanilla;
    bool early_term = false;
    bool online_draft = false;
};
StrategySpec strategy_from_name(const std::string& name);

struct BenchEntry {
    std::string name;
    RunMetrics metrics;
    TrainResult result;
};

struct BenchResult {
    std::vector<BenchEntry> entries;
    bool tokens_identical = true;
};

// Runs every strategy over the same seeds and prompts, starting from one
// shared pair of initial models. Token streams must be identical across
// strategies (speculation is lossless); tokens_identical reports the check.
BenchResult bench(const std::vector<std::string>& strategy_names, const TrainConfig& base_cfg);

std::string bench_table(const BenchResult& r);

RunMetrics metrics_from_train_result(const TrainResult& r);

}  // namespace sgrpo
