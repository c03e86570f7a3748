#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sgrpo/tinylm.hpp"

namespace sgrpo {

// (batch, seconds) points, strictly increasing in batch
using LatencyCurve = std::vector<std::pair<int, double>>;

struct HardwareProfile {
    std::string name;
    double peak_flops = 0;   // FLOP/s
    double bandwidth = 0;    // bytes/s
    int bytes_per_element = 4;
    int c_peak = 1;          // batch units at the memory/compute balance point
    double confidence = 0;   // knee confidence of the last calibration
    LatencyCurve latency_curve;

    void validate() const;
};

struct GemmShape {
    long long batch = 1;   // B
    long long d_in = 1;
    long long d_out = 1;
    int bytes_per_element = 2;  // s
};

enum class IntensityMode { exact, approx };

// FLOPs per byte of a B x D_in by D_in x D_out multiply.
double gemm_intensity(const GemmShape& shape, IntensityMode mode);

// peak_flops / bandwidth
double peak_intensity(const HardwareProfile& profile);

struct KneeResult {
    int index = 0;       // 0-based index into the curve
    double confidence = 0;  // in [0,1]
};

// Max perpendicular distance to the first-to-last chord after min-max
// normalization of both axes.
KneeResult detect_knee(const LatencyCurve& curve);

struct CPeakResult {
    int c_peak = 1;
    LatencyCurve curve;
    double confidence = 0;
    bool low_confidence = false;
};

// Runs `warmup` discarded calls then `reps` timed calls per batch in
// [1, b_max]; the per-batch latency is the median of reps.
CPeakResult measure_c_peak(const std::function<double(int)>& latency_fn, int b_max,
                           int warmup = 5, int reps = 20);

struct SimOpts {
    // fixed per-launch overhead, as a fraction of the memory-bound plateau
    double launch_overhead_frac = 0.05;
    // per-token activation/KV traffic, as a fraction of the compute-cost slope;
    // keeps latency strictly increasing in tokens without leaving the plateau
    // tolerance
    double token_cost_frac = 0.05;
};

// max(weight traffic, GEMM compute) + per-launch overhead (+ small per-token
// activation term). Weight bytes use the profile's bytes_per_element.
double simulate_step_latency(const HardwareProfile& profile, size_t param_count,
                             long long total_tokens, const SimOpts& opts = {});
double simulate_step_latency(const HardwareProfile& profile, const ModelConfig& model,
                             long long total_tokens, const SimOpts& opts = {});

// Token count at which compute time equals weight-traffic time.
double crossover_tokens(const HardwareProfile& profile);

// Calibrates profile.c_peak by running measure_c_peak against the simulated
// cost model for the given parameter count.
void calibrate_c_peak(HardwareProfile& profile, size_t param_count, int b_max,
                      const SimOpts& opts = {});

// All modern-GPU table entries, bytes_per_element 2, c_peak preset to the
// cost-model crossover.
std::vector<HardwareProfile> builtin_profiles();
HardwareProfile builtin_profile(const std::string& name);

// Small synthetic profile for desk-scale experiments with a chosen c_peak.
HardwareProfile desk_profile(int c_peak, int bytes_per_element = 4);

std::string profile_to_json(const HardwareProfile& profile);
HardwareProfile profile_from_json(const std::string& text);
void save_profile(const std::string& path, const HardwareProfile& profile);
HardwareProfile load_profile(const std::string& path);

size_t param_count_for(const ModelConfig& config);
size_t draft_param_count_for(const ModelConfig& config, int draft_layers);

}  // namespace sgrpo
