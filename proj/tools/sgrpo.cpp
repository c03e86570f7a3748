// Command-line front end: profiling, draft pretraining, GRPO training,
// generation, and strategy benchmarking over the simulated cost model.

#include <chrono>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "sgrpo/harness.hpp"

using namespace sgrpo;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitBenchMismatch = 3;

double wall_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write: " + path);
    f << text;
}

int cmd_profile(const std::string& out_path, const std::string& builtin, int c_peak,
                int bytes_per_element, int b_max, int warmup, int reps, bool real,
                const std::string& config_path) {
    HardwareProfile prof =
        builtin.empty() ? desk_profile(c_peak, bytes_per_element) : builtin_profile(builtin);
    ModelConfig mc;
    if (!config_path.empty()) mc = load_train_config(config_path).model;

    if (real) {
        Model model = init_model<float>(mc);
        AttnMask self_only;
        auto latency = [&](int b) {
            self_only.rows = b;
            self_only.bits.assign(static_cast<size_t>(b) * b, 0);
            for (int i = 0; i < b; ++i) self_only.bits[static_cast<size_t>(i) * b + i] = 1;
            std::vector<int> toks(b, kEosToken), poss(b, 0);
            double t0 = wall_s();
            (void)forward_target<float>(model, toks, poss, &self_only, nullptr);
            return wall_s() - t0;
        };
        CPeakResult r = measure_c_peak(latency, b_max, warmup, reps);
        prof.c_peak = r.c_peak;
        prof.confidence = r.confidence;
        prof.latency_curve = std::move(r.curve);
        if (r.low_confidence)
            std::cerr << "warning: low-confidence knee (noisy or linear curve)\n";
    } else {
        auto fn = [&](int b) { return simulate_step_latency(prof, mc, b); };
        CPeakResult r = measure_c_peak(fn, b_max, warmup, reps);
        prof.c_peak = r.c_peak;
        prof.confidence = r.confidence;
        prof.latency_curve = std::move(r.curve);
    }
    save_profile(out_path, prof);
    std::cout << "c_peak=" << prof.c_peak << " confidence=" << prof.confidence << " -> "
              << out_path << "\n";
    return 0;
}

int cmd_pretrain(const std::string& config_path, const std::string& draft_out,
                 const std::string& target_out) {
    TrainConfig cfg = load_train_config(config_path);
    Model target = init_model<float>(cfg.model);
    if (cfg.target_warmup_steps > 0)
        supervised_warmup(target, cfg.task, cfg.target_warmup_steps, cfg.warmup_batch,
                          cfg.warmup_lr, cfg.run_seed);
    Draft draft = init_draft<float>(cfg.model, cfg.draft_layers);
    int steps = cfg.draft_pretrain_steps > 0 ? cfg.draft_pretrain_steps : 200;
    pretrain_draft(draft, target, cfg.task, steps, cfg.pretrain_corpus_seqs, cfg.draft_lr,
                   cfg.run_seed, cfg.w_feat, cfg.w_tok);
    save_draft_checkpoint(draft_out, draft);
    if (!target_out.empty()) save_checkpoint(target_out, target);
    std::cout << "draft pretrained for " << steps << " steps -> " << draft_out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& metrics_out,
              const std::string& target_in, const std::string& draft_in,
              const std::string& target_out, const std::string& draft_out) {
    TrainConfig cfg = load_train_config(config_path);
    TrainResult res;
    if (!target_in.empty() || !draft_in.empty()) {
        Model target = target_in.empty() ? init_model<float>(cfg.model)
                                         : load_checkpoint(target_in);
        Draft draft = draft_in.empty() ? init_draft<float>(cfg.model, cfg.draft_layers)
                                       : load_draft_checkpoint(draft_in);
        res = train_loop(cfg, std::move(target), std::move(draft));
    } else {
        res = train_loop(cfg);
    }
    if (!metrics_out.empty()) write_text(metrics_out, metrics_to_jsonl(res.trace));
    if (!target_out.empty()) save_checkpoint(target_out, res.target);
    if (!draft_out.empty()) save_draft_checkpoint(draft_out, res.draft);
    double last_reward = res.trace.empty() ? 0 : res.trace.back().reward_mean;
    std::cout << "iterations=" << res.trace.size() << " final_reward_mean=" << last_reward
              << " overall_tau=" << res.overall_tau()
              << " gen_sim_s=" << res.total_gen_sim_s << "\n";
    return 0;
}

int cmd_generate(const std::string& config_path, const std::string& mode, int n_prompts,
                 uint64_t seed, double temperature, const std::string& stats_out,
                 const std::string& target_in, const std::string& draft_in) {
    TrainConfig cfg = load_train_config(config_path);
    Model target = target_in.empty() ? init_model<float>(cfg.model) : load_checkpoint(target_in);
    if (target_in.empty() && cfg.target_warmup_steps > 0)
        supervised_warmup(target, cfg.task, cfg.target_warmup_steps, cfg.warmup_batch,
                          cfg.warmup_lr, cfg.run_seed);
    Draft draft = draft_in.empty() ? init_draft<float>(cfg.model, cfg.draft_layers)
                                   : load_draft_checkpoint(draft_in);
    if (draft_in.empty() && cfg.draft_pretrain_steps > 0)
        pretrain_draft(draft, target, cfg.task, cfg.draft_pretrain_steps,
                       cfg.pretrain_corpus_seqs, cfg.draft_lr, cfg.run_seed, cfg.w_feat,
                       cfg.w_tok);

    HardwareProfile profile = resolve_profile(cfg);
    SchedParams sched{cfg.alpha, cfg.k_max, cfg.l_max, profile.c_peak};
    Rng rng(mix_key(seed, 0x9e7));
    std::vector<std::vector<int>> prompts(n_prompts);
    for (auto& p : prompts) p = sample_example(cfg.task, rng).prompt;

    GenOptions opts;
    opts.mode = decode_mode_from_string(mode);
    opts.early_term = cfg.early_term;
    opts.temperature = temperature;
    opts.seed = seed;
    opts.max_new_tokens = cfg.max_new_tokens;
    if (opts.mode == DecodeMode::fixed_spec) opts.fixed = plan_step(sched, 1);

    BatchState bs = generate_dynamic_batch(target, draft, prompts, 1, sched, profile, opts);
    for (const auto& s : bs.seqs) {
        std::cout << "[" << s.id << "] "
                  << detokenize(std::span<const int>(s.tokens.data(), s.prompt_len)) << " -> "
                  << detokenize(std::span<const int>(s.tokens.data() + s.prompt_len,
                                                     s.tokens.size() - s.prompt_len))
                  << (s.hit_eos ? "" : " [len-capped]") << "\n";
    }
    double tau = bs.stats.total_verify_slots > 0 ? bs.stats.tau() : 1.0;
    std::cout << "steps=" << bs.stats.steps.size() << " tau=" << tau
              << " sim_latency_s=" << bs.stats.total_sim_s << "\n";
    if (!stats_out.empty()) write_text(stats_out, gen_stats_to_jsonl(bs.stats));
    return 0;
}

int cmd_bench(const std::string& config_path, const std::string& strategies_csv,
              const std::string& out_path) {
    TrainConfig cfg = load_train_config(config_path);
    std::vector<std::string> names;
    std::string cur;
    for (char c : strategies_csv + ",") {
        if (c == ',') {
            if (!cur.empty()) names.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    BenchResult r = bench(names, cfg);
    std::string table = bench_table(r);
    std::cout << table;
    if (!out_path.empty()) write_text(out_path, table);
    if (!r.tokens_identical) {
        std::cerr << "error: token streams diverged across strategies\n";
        return kExitBenchMismatch;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"speculative-decoding GRPO training simulator"};
    app.require_subcommand(1);

    // profile
    auto* profile = app.add_subcommand("profile", "emit a hardware profile with measured c_peak");
    std::string p_out = "profile.json", p_builtin, p_config;
    int p_cpeak = 64, p_bpe = 4, p_bmax = 64, p_warmup = 5, p_reps = 20;
    bool p_real = false, p_sim = false;
    profile->add_option("--out", p_out);
    profile->add_option("--builtin", p_builtin, "builtin GPU profile name");
    profile->add_option("--config", p_config, "training config supplying model dims");
    profile->add_option("--c-peak", p_cpeak, "synthetic desk profile c_peak");
    profile->add_option("--bytes-per-element", p_bpe);
    profile->add_option("--b-max", p_bmax);
    profile->add_option("--warmup", p_warmup);
    profile->add_option("--reps", p_reps);
    profile->add_flag("--real", p_real, "wall-clock profiling of the toy model");
    profile->add_flag("--simulated", p_sim, "calibrate against the cost model (default)");

    // pretrain
    auto* pretrain = app.add_subcommand("pretrain", "pretrain the draft on target generations");
    std::string pt_config, pt_out = "draft.ckpt", pt_target_out;
    pretrain->add_option("--config", pt_config)->required();
    pretrain->add_option("--out", pt_out);
    pretrain->add_option("--target-out", pt_target_out);

    // train
    auto* train = app.add_subcommand("train", "run the GRPO loop");
    std::string t_config, t_metrics, t_tin, t_din, t_tout, t_dout;
    train->add_option("--config", t_config)->required();
    train->add_option("--metrics-out", t_metrics);
    train->add_option("--target-in", t_tin);
    train->add_option("--draft-in", t_din);
    train->add_option("--target-out", t_tout);
    train->add_option("--draft-out", t_dout);

    // generate
    auto* gen = app.add_subcommand("generate", "decode a batch of task prompts");
    std::string g_config, g_mode = "adaptive_spec", g_stats, g_tin, g_din;
    int g_n = 8;
    uint64_t g_seed = 0;
    double g_temp = 0.0;
    gen->add_option("--config", g_config)->required();
    gen->add_option("--mode", g_mode, "vanilla | fixed_spec | adaptive_spec");
    gen->add_option("--n-prompts", g_n);
    gen->add_option("--seed", g_seed);
    gen->add_option("--temperature", g_temp);
    gen->add_option("--stats-out", g_stats);
    gen->add_option("--target-in", g_tin);
    gen->add_option("--draft-in", g_din);

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "compare strategies on identical seeds");
    std::string b_config, b_strategies = "vanilla,adaptive_spec", b_out;
    bench_cmd->add_option("--config", b_config)->required();
    bench_cmd->add_option("--strategies", b_strategies, "comma-separated strategy names");
    bench_cmd->add_option("--out", b_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (profile->parsed())
            return cmd_profile(p_out, p_builtin, p_cpeak, p_bpe, p_bmax, p_warmup, p_reps, p_real,
                               p_config);
        if (pretrain->parsed()) return cmd_pretrain(pt_config, pt_out, pt_target_out);
        if (train->parsed()) return cmd_train(t_config, t_metrics, t_tin, t_din, t_tout, t_dout);
        if (gen->parsed())
            return cmd_generate(g_config, g_mode, g_n, g_seed, g_temp, g_stats, g_tin, g_din);
        if (bench_cmd->parsed()) return cmd_bench(b_config, b_strategies, b_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return 0;
}
