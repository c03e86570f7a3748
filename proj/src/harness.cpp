#include "sgrpo/harness.hpp"

#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace sgrpo {

using nlohmann::json;

double compute_tau(const std::vector<long long>& accepted_per_step,
                   const std::vector<int>& b_cur_per_step) {
    if (accepted_per_step.empty() || accepted_per_step.size() != b_cur_per_step.size())
        throw std::invalid_argument("compute_tau: logs empty or of unequal length");
    long long acc = 0, slots = 0;
    for (size_t i = 0; i < accepted_per_step.size(); ++i) {
        acc += accepted_per_step[i];
        slots += b_cur_per_step[i];
    }
    if (slots <= 0) throw std::invalid_argument("compute_tau: no verification slots");
    return double(acc) / double(slots);
}

std::pair<double, double> compute_speedup(const RunMetrics& baseline,
                                          const RunMetrics& candidate) {
    if (candidate.gen_time_s <= 0 || candidate.gen_time_s + candidate.update_time_s <= 0)
        throw std::invalid_argument("compute_speedup: zero candidate time");
    double gen_sr = baseline.gen_time_s / candidate.gen_time_s;
    double e2e_sr = (baseline.gen_time_s + baseline.update_time_s) /
                    (candidate.gen_time_s + candidate.update_time_s);
    return {gen_sr, e2e_sr};
}

std::string run_metrics_to_json(const RunMetrics& m) {
    json lens = json::array();
    for (const auto& l : m.length_stats)
        lens.push_back(
            {{"min", l.min_len}, {"max", l.max_len}, {"mean", l.mean_len}, {"range", l.range}});
    json j{{"gen_time_s", m.gen_time_s}, {"update_time_s", m.update_time_s},
           {"wall_time_s", m.wall_time_s}, {"tau", m.tau},
           {"gen_sr", m.gen_sr},           {"e2e_sr", m.e2e_sr},
           {"length_stats", lens}};
    return j.dump(2);
}

RunMetrics run_metrics_from_json(const std::string& text) {
    json j = json::parse(text);
    RunMetrics m;
    m.gen_time_s = j.at("gen_time_s").get<double>();
    m.update_time_s = j.at("update_time_s").get<double>();
    m.wall_time_s = j.at("wall_time_s").get<double>();
    m.tau = j.at("tau").get<double>();
    m.gen_sr = j.at("gen_sr").get<double>();
    m.e2e_sr = j.at("e2e_sr").get<double>();
    for (const auto& l : j.at("length_stats")) {
        GroupLengthStats ls;
        ls.min_len = l.at("min").get<int>();
        ls.max_len = l.at("max").get<int>();
        ls.mean_len = l.at("mean").get<double>();
        ls.range = l.at("range").get<int>();
        m.length_stats.push_back(ls);
    }
    return m;
}

StrategySpec strategy_from_name(const std::string& name) {
    if (name == "vanilla") return {name, DecodeMode::vanilla, false, false};
    if (name == "vanilla+early_term") return {name, DecodeMode::vanilla, true, false};
    if (name == "fixed_spec") return {name, DecodeMode::fixed_spec, true, false};
    if (name == "adaptive_spec") return {name, DecodeMode::adaptive_spec, true, false};
    if (name == "adaptive_spec+online_draft")
        return {name, DecodeMode::adaptive_spec, true, true};
    throw std::invalid_argument("unknown strategy: " + name);
}

RunMetrics metrics_from_train_result(const TrainResult& r) {
    RunMetrics m;
    m.gen_time_s = r.total_gen_sim_s;
    m.update_time_s = r.total_update_sim_s;
    m.wall_time_s = r.total_wall_s;
    m.tau = r.overall_tau();
    for (const auto& it : r.trace)
        m.length_stats.insert(m.length_stats.end(), it.group_lengths.begin(),
                              it.group_lengths.end());
    return m;
}

BenchResult bench(const std::vector<std::string>& strategy_names, const TrainConfig& base_cfg) {
    if (strategy_names.size() < 2)
        throw std::invalid_argument("bench: need at least two strategies");
    std::vector<StrategySpec> specs;
    for (const auto& n : strategy_names) specs.push_back(strategy_from_name(n));

    // shared initial models so every strategy starts from the same state
    TrainConfig init_cfg = base_cfg;
    Model target0 = init_model<float>(init_cfg.model);
    Draft draft0 = init_draft<float>(init_cfg.model, init_cfg.draft_layers);
    if (init_cfg.target_warmup_steps > 0)
        supervised_warmup(target0, init_cfg.task, init_cfg.target_warmup_steps,
                          init_cfg.warmup_batch, init_cfg.warmup_lr, init_cfg.run_seed);
    if (init_cfg.draft_pretrain_steps > 0)
        pretrain_draft(draft0, target0, init_cfg.task, init_cfg.draft_pretrain_steps,
                       init_cfg.pretrain_corpus_seqs, init_cfg.draft_lr, init_cfg.run_seed,
                       init_cfg.w_feat, init_cfg.w_tok);

    BenchResult out;
    for (const auto& sp : specs) {
        TrainConfig cfg = base_cfg;
        cfg.decode_mode = sp.mode;
        cfg.early_term = sp.early_term;
        cfg.online_draft = sp.online_draft;
        cfg.record_tokens = true;
        TrainResult r = train_loop(cfg, target0, draft0);
        BenchEntry e;
        e.name = sp.name;
        e.metrics = metrics_from_train_result(r);
        e.result = std::move(r);
        out.entries.push_back(std::move(e));
    }

    // the rng discipline keys every emission by (sequence, position), so all
    // strategies must emit identical token streams
    for (size_t i = 1; i < out.entries.size(); ++i)
        if (out.entries[i].result.gen_tokens != out.entries[0].result.gen_tokens)
            out.tokens_identical = false;

    // speedups vs. "vanilla" when present, else vs. the first entry
    size_t base_idx = 0;
    for (size_t i = 0; i < out.entries.size(); ++i)
        if (out.entries[i].name == "vanilla") base_idx = i;
    const RunMetrics base = out.entries[base_idx].metrics;
    for (auto& e : out.entries) {
        auto [gsr, esr] = compute_speedup(base, e.metrics);
        e.metrics.gen_sr = gsr;
        e.metrics.e2e_sr = esr;
    }
    return out;
}

std::string bench_table(const BenchResult& r) {
    std::ostringstream os;
    os << std::left << std::setw(28) << "strategy" << std::right << std::setw(12) << "gen_sim_s"
       << std::setw(12) << "upd_sim_s" << std::setw(8) << "tau" << std::setw(9) << "gen_sr"
       << std::setw(9) << "e2e_sr" << "\n";
    for (const auto& e : r.entries) {
        os << std::left << std::setw(28) << e.name << std::right << std::fixed
           << std::setprecision(4) << std::setw(12) << e.metrics.gen_time_s << std::setw(12)
           << e.metrics.update_time_s << std::setprecision(2) << std::setw(8) << e.metrics.tau
           << std::setw(9) << e.metrics.gen_sr << std::setw(9) << e.metrics.e2e_sr << "\n";
    }
    os << "tokens identical across strategies: " << (r.tokens_identical ? "yes" : "NO") << "\n";
    return os.str();
}

}  // namespace sgrpo
