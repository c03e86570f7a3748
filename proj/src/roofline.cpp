#include "sgrpo/roofline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace sgrpo {

using nlohmann::json;

void HardwareProfile::validate() const {
    if (peak_flops <= 0 || bandwidth <= 0)
        throw std::invalid_argument("profile: peak_flops and bandwidth must be positive");
    if (bytes_per_element <= 0)
        throw std::invalid_argument("profile: bytes_per_element must be positive");
    if (c_peak < 1) throw std::invalid_argument("profile: c_peak must be >= 1");
    for (size_t i = 1; i < latency_curve.size(); ++i)
        if (latency_curve[i].first <= latency_curve[i - 1].first)
            throw std::invalid_argument("profile: latency_curve batches must strictly increase");
}

double gemm_intensity(const GemmShape& shape, IntensityMode mode) {
    if (shape.batch <= 0 || shape.d_in <= 0 || shape.d_out <= 0 || shape.bytes_per_element <= 0)
        throw std::invalid_argument("gemm_intensity: shape entries must be positive");
    const double b = double(shape.batch), din = double(shape.d_in), dout = double(shape.d_out);
    const double s = double(shape.bytes_per_element);
    if (mode == IntensityMode::approx) return 2.0 * b / s;
    return 2.0 * b * din * dout / ((b * din + din * dout + b * dout) * s);
}

double peak_intensity(const HardwareProfile& profile) {
    if (profile.bandwidth == 0) throw std::invalid_argument("peak_intensity: zero bandwidth");
    return profile.peak_flops / profile.bandwidth;
}

KneeResult detect_knee(const LatencyCurve& curve) {
    const size_t n = curve.size();
    if (n < 4) throw std::invalid_argument("detect_knee: need at least 4 points");
    double xmin = curve.front().first, xmax = curve.front().first;
    double ymin = curve.front().second, ymax = curve.front().second;
    for (const auto& [b, s] : curve) {
        xmin = std::min(xmin, double(b));
        xmax = std::max(xmax, double(b));
        ymin = std::min(ymin, s);
        ymax = std::max(ymax, s);
    }
    const double xspan = xmax > xmin ? xmax - xmin : 1.0;
    const double yspan = ymax > ymin ? ymax - ymin : 1.0;
    auto nx = [&](size_t i) { return (curve[i].first - xmin) / xspan; };
    auto ny = [&](size_t i) { return (curve[i].second - ymin) / yspan; };

    const double x0 = nx(0), y0 = ny(0), x1 = nx(n - 1), y1 = ny(n - 1);
    const double cx = x1 - x0, cy = y1 - y0;
    const double clen = std::sqrt(cx * cx + cy * cy);
    KneeResult r;
    double best = -1;
    for (size_t i = 0; i < n; ++i) {
        double dist;
        if (clen == 0) {
            double dx = nx(i) - x0, dy = ny(i) - y0;
            dist = std::sqrt(dx * dx + dy * dy);
        } else {
            dist = std::abs(cx * (ny(i) - y0) - cy * (nx(i) - x0)) / clen;
        }
        if (dist > best) {
            best = dist;
            r.index = static_cast<int>(i);
        }
    }
    // sqrt(2)/2 is the largest chord distance reachable inside the unit box
    r.confidence = std::clamp(best / 0.7071067811865476, 0.0, 1.0);
    return r;
}

CPeakResult measure_c_peak(const std::function<double(int)>& latency_fn, int b_max, int warmup,
                           int reps) {
    if (b_max < 4) throw std::invalid_argument("measure_c_peak: b_max must be >= 4");
    if (reps < 1) throw std::invalid_argument("measure_c_peak: reps must be >= 1");
    CPeakResult out;
    out.curve.reserve(b_max);
    std::vector<double> samples(reps);
    for (int b = 1; b <= b_max; ++b) {
        for (int w = 0; w < warmup; ++w) (void)latency_fn(b);
        for (int r = 0; r < reps; ++r) samples[r] = latency_fn(b);
        std::nth_element(samples.begin(), samples.begin() + reps / 2, samples.end());
        out.curve.emplace_back(b, samples[reps / 2]);
    }
    // non-monotone noise beyond tolerance lowers confidence in the knee
    constexpr double kMonotoneTol = 0.02;
    for (size_t i = 1; i < out.curve.size(); ++i)
        if (out.curve[i].second < out.curve[i - 1].second * (1.0 - kMonotoneTol))
            out.low_confidence = true;

    KneeResult knee = detect_knee(out.curve);
    out.confidence = knee.confidence;
    constexpr double kMinConfidence = 0.05;
    if (knee.confidence < kMinConfidence) {
        // no detectable knee (e.g. strictly linear curve): fall back to b_max
        out.c_peak = b_max;
        out.low_confidence = true;
    } else {
        out.c_peak = out.curve[knee.index].first;
    }
    return out;
}

double simulate_step_latency(const HardwareProfile& profile, size_t param_count,
                             long long total_tokens, const SimOpts& opts) {
    if (total_tokens < 1) throw std::invalid_argument("simulate_step_latency: total_tokens >= 1");
    profile.validate();
    const double weight_bytes = double(param_count) * profile.bytes_per_element;
    const double mem_time = weight_bytes / profile.bandwidth;
    const double compute_time = 2.0 * double(param_count) * double(total_tokens) / profile.peak_flops;
    const double per_token = 2.0 * double(param_count) / profile.peak_flops;
    return std::max(mem_time, compute_time) + opts.launch_overhead_frac * mem_time +
           opts.token_cost_frac * per_token * double(total_tokens);
}

double simulate_step_latency(const HardwareProfile& profile, const ModelConfig& model,
                             long long total_tokens, const SimOpts& opts) {
    return simulate_step_latency(profile, param_count_for(model), total_tokens, opts);
}

double crossover_tokens(const HardwareProfile& profile) {
    return profile.bytes_per_element * profile.peak_flops / (2.0 * profile.bandwidth);
}

void calibrate_c_peak(HardwareProfile& profile, size_t param_count, int b_max,
                      const SimOpts& opts) {
    auto fn = [&](int b) { return simulate_step_latency(profile, param_count, b, opts); };
    CPeakResult r = measure_c_peak(fn, b_max);
    profile.c_peak = r.c_peak;
    profile.confidence = r.confidence;
    profile.latency_curve = std::move(r.curve);
}

std::vector<HardwareProfile> builtin_profiles() {
    // BF16 tensor-core rates (FLOP/s) and memory bandwidth (byte/s). Two rows
    // of the public spec tables are internally inconsistent; the operands here
    // are the device values that reproduce the published peak intensity.
    struct Row {
        const char* name;
        double tflops, tbps;
    };
    static const Row rows[] = {
        {"A100 40GB PCIe", 312, 1.555}, {"A100 40GB SXM", 312, 1.555},
        {"A100 80GB PCIe", 312, 1.935}, {"A100 80GB SXM", 312, 2.039},
        {"H100 SXM", 1979, 3.35},       {"H100 PCIe", 1513, 3.026},
        {"H100 NVL", 3958, 7.8},        {"H800 SXM", 1979, 3.35},
        {"H800 PCIe", 1513, 2.0},       {"H200 SXM", 1979, 4.8},
        {"B100", 3500, 8.0},            {"B200", 4500, 8.0},
    };
    std::vector<HardwareProfile> out;
    for (const auto& r : rows) {
        HardwareProfile p;
        p.name = r.name;
        p.peak_flops = r.tflops * 1e12;
        p.bandwidth = r.tbps * 1e12;
        p.bytes_per_element = 2;
        p.c_peak = std::max(1, static_cast<int>(std::lround(crossover_tokens(p))));
        out.push_back(std::move(p));
    }
    return out;
}

HardwareProfile builtin_profile(const std::string& name) {
    for (auto& p : builtin_profiles())
        if (p.name == name) return p;
    throw std::invalid_argument("unknown builtin profile: " + name);
}

HardwareProfile desk_profile(int c_peak, int bytes_per_element) {
    if (c_peak < 1) throw std::invalid_argument("desk_profile: c_peak must be >= 1");
    HardwareProfile p;
    p.name = "desk-c" + std::to_string(c_peak);
    p.bandwidth = 1e9;
    p.bytes_per_element = bytes_per_element;
    // crossover = s * flops / (2 * bw) == c_peak
    p.peak_flops = 2.0 * p.bandwidth * c_peak / bytes_per_element;
    p.c_peak = c_peak;
    p.confidence = 1.0;
    return p;
}

std::string profile_to_json(const HardwareProfile& p) {
    json curve = json::array();
    for (const auto& [b, s] : p.latency_curve) curve.push_back(json::array({b, s}));
    json j{{"name", p.name},
           {"peak_flops", p.peak_flops},
           {"bandwidth", p.bandwidth},
           {"bytes_per_element", p.bytes_per_element},
           {"c_peak", p.c_peak},
           {"confidence", p.confidence},
           {"latency_curve", curve}};
    return j.dump(2);
}

HardwareProfile profile_from_json(const std::string& text) {
    json j = json::parse(text);
    HardwareProfile p;
    p.name = j.at("name").get<std::string>();
    p.peak_flops = j.at("peak_flops").get<double>();
    p.bandwidth = j.at("bandwidth").get<double>();
    p.bytes_per_element = j.at("bytes_per_element").get<int>();
    p.c_peak = j.at("c_peak").get<int>();
    p.confidence = j.value("confidence", 0.0);
    for (const auto& e : j.at("latency_curve"))
        p.latency_curve.emplace_back(e.at(0).get<int>(), e.at(1).get<double>());
    p.validate();
    return p;
}

void save_profile(const std::string& path, const HardwareProfile& profile) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write profile: " + path);
    f << profile_to_json(profile) << "\n";
}

HardwareProfile load_profile(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read profile: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return profile_from_json(text);
}

size_t param_count_for(const ModelConfig& config) {
    config.validate();
    detail::LayoutBuilder lb;
    const int d = config.d_model;
    lb.add("tok_emb", config.vocab_size, d, Init::normal);
    lb.add("pos_emb", config.max_seq_len, d, Init::pos_emb);
    for (int l = 0; l < config.n_layers; ++l) lb.add_layer(d, config.d_ff);
    lb.add("lnf_g", 1, d, Init::ones);
    lb.add("lnf_b", 1, d, Init::zeros);
    lb.add("lm_head", d, config.vocab_size, Init::normal);
    return lb.total;
}

size_t draft_param_count_for(const ModelConfig& config, int draft_layers) {
    config.validate();
    detail::LayoutBuilder lb;
    const int d = config.d_model;
    lb.add("w_fuse", 2 * d, d, Init::normal);
    for (int l = 0; l < draft_layers; ++l) lb.add_layer(d, config.d_ff);
    lb.add("lnf_g", 1, d, Init::ones);
    lb.add("lnf_b", 1, d, Init::zeros);
    return lb.total;
}

}  // namespace sgrpo
