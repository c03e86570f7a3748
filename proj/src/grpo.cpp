#include "sgrpo/grpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sgrpo {

using nlohmann::json;

namespace {
double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}
constexpr uint64_t kTagWarmup = 0x77a1;
constexpr uint64_t kTagCorpus = 0xc0a9;
constexpr uint64_t kTagPrompts = 0x9a01;
constexpr uint64_t kTagGen = 0x6e30;
}  // namespace

// ---------------------------------------------------------------------------
// Task
// ---------------------------------------------------------------------------

void TaskSpec::validate() const {
    if (min_digits < 1 || max_digits < min_digits || max_digits > 12)
        throw std::invalid_argument("task: digit range must satisfy 1 <= min <= max <= 12");
}

std::vector<int> encode_number(long long n) {
    if (n < 0) throw std::invalid_argument("encode_number: negative");
    std::string s = std::to_string(n);
    std::vector<int> out;
    out.reserve(s.size());
    for (char c : s) out.push_back(kDigitBase + (c - '0'));
    return out;
}

std::string detokenize(std::span<const int> tokens) {
    std::string out;
    for (int t : tokens) {
        if (t == kPadToken) out += '_';
        else if (t == kEosToken) out += '$';
        else if (t >= kDigitBase && t < kDigitBase + 10) out += char('0' + (t - kDigitBase));
        else if (t == kPlusToken) out += '+';
        else if (t == kEqToken) out += '=';
        else out += '?';
    }
    return out;
}

namespace {
long long sample_operand(int digits, Rng& rng) {
    long long lo = digits == 1 ? 0 : 1;
    for (int i = 1; i < digits; ++i) lo *= 10;
    long long hi = 1;
    for (int i = 0; i < digits; ++i) hi *= 10;
    --hi;
    return lo + static_cast<long long>(rng.below(static_cast<uint64_t>(hi - lo + 1)));
}
}  // namespace

TaskExample sample_example(const TaskSpec& spec, Rng& rng) {
    spec.validate();
    TaskExample ex;
    int da = spec.min_digits + static_cast<int>(rng.below(spec.max_digits - spec.min_digits + 1));
    int db = spec.min_digits + static_cast<int>(rng.below(spec.max_digits - spec.min_digits + 1));
    ex.a = sample_operand(da, rng);
    ex.b = sample_operand(db, rng);

    ex.prompt = encode_number(ex.a);
    ex.prompt.push_back(kPlusToken);
    auto eb = encode_number(ex.b);
    ex.prompt.insert(ex.prompt.end(), eb.begin(), eb.end());

    // column digits, least significant first, carries folded in (this is the
    // reversed answer), then "=", answer, EOS
    long long a = ex.a, b = ex.b, carry = 0;
    while (a > 0 || b > 0 || carry > 0) {
        long long s = a % 10 + b % 10 + carry;
        ex.canonical.push_back(kDigitBase + static_cast<int>(s % 10));
        carry = s / 10;
        a /= 10;
        b /= 10;
    }
    if (ex.canonical.empty()) ex.canonical.push_back(kDigitBase);  // 0+0
    ex.canonical.push_back(kEqToken);
    auto ans = encode_number(ex.a + ex.b);
    ex.canonical.insert(ex.canonical.end(), ans.begin(), ans.end());
    ex.canonical.push_back(kEosToken);
    return ex;
}

double compute_reward(const TaskExample& ex, std::span<const int> response) {
    int last_eq = -1;
    for (size_t i = 0; i < response.size(); ++i)
        if (response[i] == kEqToken) last_eq = static_cast<int>(i);
    if (last_eq < 0) return 0.0;
    long long value = 0;
    int digits = 0;
    for (size_t i = last_eq + 1; i < response.size(); ++i) {
        int t = response[i];
        if (t == kEosToken && i + 1 == response.size()) break;
        if (t < kDigitBase || t >= kDigitBase + 10) return 0.0;
        value = value * 10 + (t - kDigitBase);
        if (++digits > 15) return 0.0;
    }
    if (digits == 0) return 0.0;
    return value == ex.a + ex.b ? 1.0 : 0.0;
}

// ---------------------------------------------------------------------------
// Advantages
// ---------------------------------------------------------------------------

std::optional<std::vector<double>> standardize_advantages(const std::vector<double>& rewards,
                                                          double eps_var) {
    const size_t g = rewards.size();
    if (g < 2) throw std::invalid_argument("standardize_advantages: need G >= 2");
    double mean = 0;
    for (double r : rewards) mean += r;
    mean /= double(g);
    double var = 0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= double(g);  // population variance
    double sd = std::sqrt(var);
    if (sd < eps_var) return std::nullopt;
    std::vector<double> adv(g);
    for (size_t i = 0; i < g; ++i) adv[i] = (rewards[i] - mean) / sd;
    return adv;
}

// ---------------------------------------------------------------------------
// Optimizer and updates
// ---------------------------------------------------------------------------

void AdamW::step(std::span<float> params, std::span<const float> grad) {
    if (params.size() != grad.size()) throw std::invalid_argument("adamw: size mismatch");
    if (m.size() != params.size()) {
        m.assign(params.size(), 0.f);
        v.assign(params.size(), 0.f);
        t = 0;
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    for (size_t i = 0; i < params.size(); ++i) {
        const double gi = grad[i];
        m[i] = float(beta1 * m[i] + (1.0 - beta1) * gi);
        v[i] = float(beta2 * v[i] + (1.0 - beta2) * gi * gi);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        params[i] = float(params[i] - lr * (mhat / (std::sqrt(vhat) + eps) +
                                            weight_decay * params[i]));
    }
}

bool policy_update(Model& params, const std::vector<GroupBatch>& groups, AdamW& opt) {
    std::vector<TrainSeq> seqs;
    for (const auto& g : groups) {
        if (g.filtered) continue;
        for (size_t i = 0; i < g.members.size(); ++i)
            seqs.push_back({&g.members[i].tokens, g.members[i].prompt_len, g.advantages[i]});
    }
    if (seqs.empty()) return false;
    std::vector<float> grad(params.flat.size(), 0.f);
    policy_loss_grad<float>(params, seqs, grad);
    opt.step(params.flat, grad);
    return true;
}

DraftLossTerms draft_update(Draft& draft, const Model& target, const DraftTrainBatch& batch,
                            AdamW& opt, double w_feat, double w_tok) {
    DraftLossTerms terms;
    if (batch.seqs.empty()) return terms;
    std::vector<float> grad(draft.flat.size(), 0.f);
    terms = draft_loss_grad<float>(draft, target, batch.seqs, w_feat, w_tok, grad);
    if (terms.rows == 0) return terms;
    opt.step(draft.flat, grad);
    return terms;
}

// ---------------------------------------------------------------------------
// Warmup and pretraining
// ---------------------------------------------------------------------------

void supervised_warmup(Model& target, const TaskSpec& task, int steps, int batch, double lr,
                       uint64_t seed) {
    AdamW opt;
    opt.lr = lr;
    opt.weight_decay = 0.01;
    Rng rng(mix_key(seed, kTagWarmup));
    std::vector<float> grad(target.flat.size());
    for (int s = 0; s < steps; ++s) {
        std::vector<std::vector<int>> full(batch);
        std::vector<TrainSeq> ts(batch);
        for (int b = 0; b < batch; ++b) {
            TaskExample ex = sample_example(task, rng);
            full[b] = ex.prompt;
            full[b].insert(full[b].end(), ex.canonical.begin(), ex.canonical.end());
            if (static_cast<int>(full[b].size()) > target.config.max_seq_len)
                throw std::runtime_error("warmup: canonical trace exceeds max_seq_len");
            ts[b] = {&full[b], static_cast<int>(ex.prompt.size()), 1.0};
        }
        std::fill(grad.begin(), grad.end(), 0.f);
        policy_loss_grad<float>(target, ts, grad);
        opt.step(target.flat, grad);
    }
}

void pretrain_draft(Draft& draft, const Model& target, const TaskSpec& task, int steps,
                    int corpus_seqs, double lr, uint64_t seed, double w_feat, double w_tok) {
    if (steps <= 0) return;
    Rng rng(mix_key(seed, kTagCorpus));
    std::vector<std::vector<int>> prompts(corpus_seqs);
    for (auto& p : prompts) p = sample_example(task, rng).prompt;
    GenOptions opts;
    opts.mode = DecodeMode::vanilla;
    opts.temperature = 1.0;
    opts.seed = mix_key(seed, kTagCorpus + 1);
    SchedParams sched;
    sched.c_peak = 1;
    HardwareProfile prof = desk_profile(64);
    auto bs = generate_dynamic_batch(target, draft, prompts, 1, sched, prof, opts);

    AdamW opt;
    opt.lr = lr;
    opt.weight_decay = 0.01;
    DraftTrainBatch batch;
    for (const auto& s : bs.seqs) batch.seqs.push_back(&s);
    for (int s = 0; s < steps; ++s) draft_update(draft, target, batch, opt, w_feat, w_tok);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    model.validate();
    task.validate();
    if (model.vocab_size < kTaskVocab)
        throw std::invalid_argument("config: vocab_size too small for the task alphabet");
    if (group_size < 2) throw std::invalid_argument("config: group_size must be >= 2");
    if (prompts_per_iter < 1) throw std::invalid_argument("config: prompts_per_iter must be >= 1");
    if (iterations < 0) throw std::invalid_argument("config: iterations must be >= 0");
    if (policy_lr <= 0 || draft_lr <= 0) throw std::invalid_argument("config: lrs must be positive");
    if (eps_var <= 0) throw std::invalid_argument("config: eps_var must be positive");
    if (temperature < 0) throw std::invalid_argument("config: temperature must be >= 0");
    if (alpha <= 0) throw std::invalid_argument("config: alpha must be positive");
    if (k_max < 0 || l_max < 0) throw std::invalid_argument("config: k_max/l_max must be >= 0");
    if (profile_path.empty() && c_peak < 1)
        throw std::invalid_argument("config: c_peak must be >= 1");
    if (spec_warmup_iters < 0 || target_warmup_steps < 0 || draft_pretrain_steps < 0)
        throw std::invalid_argument("config: negative warmup counts");
}

HardwareProfile resolve_profile(const TrainConfig& cfg) {
    if (!cfg.profile_path.empty()) return load_profile(cfg.profile_path);
    return desk_profile(cfg.c_peak, cfg.bytes_per_element);
}

TrainResult train_loop(const TrainConfig& cfg) {
    cfg.validate();
    Model target = init_model<float>(cfg.model);
    Draft draft = init_draft<float>(cfg.model, cfg.draft_layers);
    if (cfg.target_warmup_steps > 0)
        supervised_warmup(target, cfg.task, cfg.target_warmup_steps, cfg.warmup_batch,
                          cfg.warmup_lr, cfg.run_seed);
    if (cfg.draft_pretrain_steps > 0)
        pretrain_draft(draft, target, cfg.task, cfg.draft_pretrain_steps, cfg.pretrain_corpus_seqs,
                       cfg.draft_lr, cfg.run_seed, cfg.w_feat, cfg.w_tok);
    return train_loop(cfg, std::move(target), std::move(draft));
}

TrainResult train_loop(const TrainConfig& cfg, Model target, Draft draft) {
    cfg.validate();
    const double t_start = now_s();
    HardwareProfile profile = resolve_profile(cfg);
    SchedParams sched{cfg.alpha, cfg.k_max, cfg.l_max, profile.c_peak};
    SpecConfig fixed;
    if (cfg.decode_mode == DecodeMode::fixed_spec)
        fixed = plan_step(sched, 1);  // small-batch-optimal config held fixed

    const size_t p_target = target.param_count();
    const size_t p_draft = draft.param_count();

    AdamW pol_opt, dr_opt;
    pol_opt.lr = cfg.policy_lr;
    dr_opt.lr = cfg.draft_lr;

    TrainResult res;
    Rng prompt_rng(mix_key(cfg.run_seed, kTagPrompts));

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        if (!cfg.resample_prompts) prompt_rng = Rng(mix_key(cfg.run_seed, kTagPrompts));
        std::vector<TaskExample> exs(cfg.prompts_per_iter);
        std::vector<std::vector<int>> prompts(cfg.prompts_per_iter);
        for (int b = 0; b < cfg.prompts_per_iter; ++b) {
            exs[b] = sample_example(cfg.task, prompt_rng);
            prompts[b] = exs[b].prompt;
        }

        GenOptions opts;
        opts.mode = iter < cfg.spec_warmup_iters ? DecodeMode::vanilla : cfg.decode_mode;
        opts.early_term = cfg.early_term;
        opts.temperature = cfg.temperature;
        opts.seed = mix_key(cfg.run_seed, kTagGen + static_cast<uint64_t>(iter));
        opts.fixed = fixed;
        opts.max_new_tokens = cfg.max_new_tokens;

        IterationMetrics m;
        m.iter = iter;

        double t0 = now_s();
        BatchState bs = generate_dynamic_batch(target, draft, prompts, cfg.group_size, sched,
                                               profile, opts);
        m.gen_wall_s = now_s() - t0;
        m.gen_sim_s = bs.stats.total_sim_s;
        m.decode_steps = static_cast<int>(bs.stats.steps.size());
        m.tau = bs.stats.total_verify_slots > 0 ? bs.stats.tau() : 1.0;
        res.total_accepted += bs.stats.total_accepted;
        res.total_verify_slots += bs.stats.total_verify_slots;

        // online draft learning on everything generated this iteration,
        // filtered groups included
        t0 = now_s();
        const uint64_t fwd_before = target_forward_calls();
        long long draft_rows = 0;
        if (cfg.online_draft) {
            DraftTrainBatch batch;
            for (const auto& s : bs.seqs) batch.seqs.push_back(&s);
            DraftLossTerms terms = draft_update(draft, target, batch, dr_opt, cfg.w_feat, cfg.w_tok);
            m.draft_feature_loss = terms.feature_loss;
            m.draft_token_loss = terms.token_loss;
            draft_rows = terms.rows;
        }
        m.draft_target_forwards = target_forward_calls() - fwd_before;
        m.draft_update_wall_s = now_s() - t0;
        if (draft_rows > 0)
            m.draft_update_sim_s = simulate_step_latency(profile, p_draft, 3 * draft_rows);

        // rewards and groups
        t0 = now_s();
        std::vector<GroupBatch> groups(cfg.prompts_per_iter);
        double reward_sum = 0;
        int filtered = 0;
        long long policy_tokens = 0;
        for (int b = 0; b < cfg.prompts_per_iter; ++b) {
            GroupBatch& gb = groups[b];
            gb.example = exs[b];
            gb.rewards.resize(cfg.group_size);
            GroupLengthStats ls;
            ls.min_len = std::numeric_limits<int>::max();
            for (int r = 0; r < cfg.group_size; ++r) {
                SeqResult& sr = bs.seqs[static_cast<size_t>(b) * cfg.group_size + r];
                std::span<const int> resp(sr.tokens.data() + sr.prompt_len,
                                          sr.tokens.size() - sr.prompt_len);
                gb.rewards[r] = compute_reward(exs[b], resp);
                reward_sum += gb.rewards[r];
                int len = static_cast<int>(resp.size());
                ls.min_len = std::min(ls.min_len, len);
                ls.max_len = std::max(ls.max_len, len);
                ls.mean_len += len;
                gb.members.push_back(std::move(sr));
            }
            ls.mean_len /= cfg.group_size;
            ls.range = ls.max_len - ls.min_len;
            m.group_lengths.push_back(ls);
            auto adv = standardize_advantages(gb.rewards, cfg.eps_var);
            if (!adv) {
                gb.filtered = true;
                ++filtered;
            } else {
                gb.advantages = std::move(*adv);
                for (const auto& mem : gb.members)
                    policy_tokens += static_cast<long long>(mem.tokens.size()) - mem.prompt_len;
            }
        }
        m.reward_wall_s = now_s() - t0;
        m.reward_mean = reward_sum / double(cfg.prompts_per_iter * cfg.group_size);
        m.filtered_frac = double(filtered) / double(cfg.prompts_per_iter);

        t0 = now_s();
        m.policy_skipped = !policy_update(target, groups, pol_opt);
        m.policy_update_wall_s = now_s() - t0;
        if (!m.policy_skipped && policy_tokens > 0)
            m.policy_update_sim_s = simulate_step_latency(profile, p_target, 3 * policy_tokens);

        if (cfg.record_tokens) {
            std::vector<std::vector<int>> toks;
            for (const auto& g : groups)
                for (const auto& mem : g.members) toks.push_back(mem.tokens);
            res.gen_tokens.push_back(std::move(toks));
        }

        res.total_gen_sim_s += m.gen_sim_s;
        res.total_update_sim_s += m.draft_update_sim_s + m.policy_update_sim_s;
        res.trace.push_back(std::move(m));
    }

    res.total_wall_s = now_s() - t_start;
    res.target = std::move(target);
    res.draft = std::move(draft);
    return res;
}

// ---------------------------------------------------------------------------
// Config / metrics serialization
// ---------------------------------------------------------------------------

std::string train_config_to_json(const TrainConfig& c) {
    json j;
    j["model"] = {{"vocab_size", c.model.vocab_size}, {"d_model", c.model.d_model},
                  {"n_layers", c.model.n_layers},     {"n_heads", c.model.n_heads},
                  {"d_ff", c.model.d_ff},             {"max_seq_len", c.model.max_seq_len},
                  {"seed", c.model.seed},             {"draft_layers", c.draft_layers}};
    j["task"] = {{"kind", "addition"},
                 {"min_digits", c.task.min_digits},
                 {"max_digits", c.task.max_digits}};
    j["sched"] = {{"alpha", c.alpha}, {"k_max", c.k_max}, {"l_max", c.l_max}};
    if (!c.profile_path.empty())
        j["sched"]["profile_path"] = c.profile_path;
    else
        j["sched"]["c_peak"] = c.c_peak;
    j["sched"]["bytes_per_element"] = c.bytes_per_element;
    j["grpo"] = {{"group_size", c.group_size},
                 {"prompts_per_iter", c.prompts_per_iter},
                 {"iterations", c.iterations},
                 {"policy_lr", c.policy_lr},
                 {"draft_lr", c.draft_lr},
                 {"eps_var", c.eps_var},
                 {"temperature", c.temperature},
                 {"max_new_tokens", c.max_new_tokens},
                 {"w_feat", c.w_feat},
                 {"w_tok", c.w_tok}};
    j["mode"] = {{"online_draft", c.online_draft},
                 {"early_term", c.early_term},
                 {"decode_mode", to_string(c.decode_mode)},
                 {"spec_warmup_iters", c.spec_warmup_iters}};
    j["init"] = {{"target_warmup_steps", c.target_warmup_steps},
                 {"warmup_batch", c.warmup_batch},
                 {"warmup_lr", c.warmup_lr},
                 {"draft_pretrain_steps", c.draft_pretrain_steps},
                 {"pretrain_corpus_seqs", c.pretrain_corpus_seqs}};
    j["run_seed"] = c.run_seed;
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    json j = json::parse(text);
    TrainConfig c;
    const auto& m = j.at("model");
    c.model.vocab_size = m.at("vocab_size").get<int>();
    c.model.d_model = m.at("d_model").get<int>();
    c.model.n_layers = m.at("n_layers").get<int>();
    c.model.n_heads = m.at("n_heads").get<int>();
    c.model.d_ff = m.at("d_ff").get<int>();
    c.model.max_seq_len = m.at("max_seq_len").get<int>();
    c.model.seed = m.value("seed", uint64_t(0));
    c.draft_layers = m.value("draft_layers", 1);
    if (j.contains("task")) {
        const auto& t = j.at("task");
        if (t.value("kind", "addition") != std::string("addition"))
            throw std::invalid_argument("config: unknown task kind");
        c.task.min_digits = t.value("min_digits", 1);
        c.task.max_digits = t.value("max_digits", 2);
    }
    const auto& s = j.at("sched");
    c.alpha = s.value("alpha", 2.0);
    c.k_max = s.value("k_max", 10);
    c.l_max = s.value("l_max", 6);
    c.profile_path = s.value("profile_path", std::string());
    c.c_peak = s.value("c_peak", 64);
    c.bytes_per_element = s.value("bytes_per_element", 4);
    const auto& g = j.at("grpo");
    c.group_size = g.value("group_size", 4);
    c.prompts_per_iter = g.value("prompts_per_iter", 2);
    c.iterations = g.value("iterations", 100);
    c.policy_lr = g.value("policy_lr", 2e-4);
    c.draft_lr = g.value("draft_lr", 1e-2);
    c.eps_var = g.value("eps_var", 1e-8);
    c.temperature = g.value("temperature", 1.0);
    c.max_new_tokens = g.value("max_new_tokens", 0);
    c.w_feat = g.value("w_feat", 1.0);
    c.w_tok = g.value("w_tok", 0.1);
    if (j.contains("mode")) {
        const auto& mo = j.at("mode");
        c.online_draft = mo.value("online_draft", true);
        c.early_term = mo.value("early_term", true);
        c.decode_mode = decode_mode_from_string(mo.value("decode_mode", "adaptive_spec"));
        c.spec_warmup_iters = mo.value("spec_warmup_iters", 0);
    }
    if (j.contains("init")) {
        const auto& in = j.at("init");
        c.target_warmup_steps = in.value("target_warmup_steps", 0);
        c.warmup_batch = in.value("warmup_batch", 16);
        c.warmup_lr = in.value("warmup_lr", 1e-3);
        c.draft_pretrain_steps = in.value("draft_pretrain_steps", 0);
        c.pretrain_corpus_seqs = in.value("pretrain_corpus_seqs", 64);
    }
    c.run_seed = j.value("run_seed", uint64_t(0));
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return train_config_from_json(text);
}

std::string metrics_to_jsonl(const std::vector<IterationMetrics>& trace) {
    std::ostringstream os;
    for (const auto& m : trace) {
        json lens = json::array();
        for (const auto& l : m.group_lengths)
            lens.push_back({{"min", l.min_len}, {"max", l.max_len}, {"mean", l.mean_len},
                            {"range", l.range}});
        json j{{"iter", m.iter},
               {"reward_mean", m.reward_mean},
               {"filtered_frac", m.filtered_frac},
               {"tau", m.tau},
               {"gen_sim_s", m.gen_sim_s},
               {"draft_update_sim_s", m.draft_update_sim_s},
               {"policy_update_sim_s", m.policy_update_sim_s},
               {"gen_wall_s", m.gen_wall_s},
               {"draft_update_wall_s", m.draft_update_wall_s},
               {"policy_update_wall_s", m.policy_update_wall_s},
               {"reward_wall_s", m.reward_wall_s},
               {"draft_feature_loss", m.draft_feature_loss},
               {"draft_token_loss", m.draft_token_loss},
               {"policy_skipped", m.policy_skipped},
               {"draft_target_forwards", m.draft_target_forwards},
               {"decode_steps", m.decode_steps},
               {"group_lengths", lens}};
        os << j.dump() << "\n";
    }
    return os.str();
}

std::vector<IterationMetrics> metrics_from_jsonl(const std::string& text) {
    std::vector<IterationMetrics> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        IterationMetrics m;
        m.iter = j.at("iter").get<int>();
        m.reward_mean = j.at("reward_mean").get<double>();
        m.filtered_frac = j.at("filtered_frac").get<double>();
        m.tau = j.at("tau").get<double>();
        m.gen_sim_s = j.at("gen_sim_s").get<double>();
        m.draft_update_sim_s = j.at("draft_update_sim_s").get<double>();
        m.policy_update_sim_s = j.at("policy_update_sim_s").get<double>();
        m.gen_wall_s = j.at("gen_wall_s").get<double>();
        m.draft_update_wall_s = j.at("draft_update_wall_s").get<double>();
        m.policy_update_wall_s = j.at("policy_update_wall_s").get<double>();
        m.reward_wall_s = j.at("reward_wall_s").get<double>();
        m.draft_feature_loss = j.at("draft_feature_loss").get<double>();
        m.draft_token_loss = j.at("draft_token_loss").get<double>();
        m.policy_skipped = j.at("policy_skipped").get<bool>();
        m.draft_target_forwards = j.at("draft_target_forwards").get<uint64_t>();
        m.decode_steps = j.at("decode_steps").get<int>();
        for (const auto& l : j.at("group_lengths")) {
            GroupLengthStats ls;
            ls.min_len = l.at("min").get<int>();
            ls.max_len = l.at("max").get<int>();
            ls.mean_len = l.at("mean").get<double>();
            ls.range = l.at("range").get<int>();
            m.group_lengths.push_back(ls);
        }
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace sgrpo
