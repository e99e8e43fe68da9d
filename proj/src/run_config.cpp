#include "actloop/run_config.hpp"

#include <filesystem>
#include <fstream>

#include "actloop/error.hpp"

namespace actloop {

using nlohmann::json;

namespace {

json backend_to_json(const AgentBackend& b) {
    if (b.kind == BackendKind::builtin) return "builtin";
    return {{"kind", "remote"},
            {"base_url", b.remote.base_url},
            {"timeout_ms", b.remote.timeout_ms},
            {"retries", b.remote.retries},
            {"token_env", b.remote.token_env}};
}

// Keys whose value replaces the default wholesale instead of merging.
bool opaque(const std::string& key) {
    return key == "planner_backend" || key == "critic_backend" || key == "curriculum" || key == "weights";
}

void overlay(json& base, const json& patch, const std::string& where) {
    if (!patch.is_object()) throw ConfigError(where.empty() ? "config must be a JSON object" : where + " must be an object");
    for (const auto& [key, value] : patch.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
        if (base[key].is_object() && !opaque(key))
            overlay(base[key], value, path);
        else
            base[key] = value;
    }
}

}  // namespace

CriticConfig RunConfig::critic_config() const {
    CriticConfig c;
    c.weights = weights;
    c.tau = loop.tau;
    return c;
}

void RunConfig::validate() const {
    if (domain.empty()) throw ConfigError("domain must be set");
    if (out.empty()) throw ConfigError("out must be set");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    loop.validate();
    sampler.validate();
    grpo.validate();
    weights.validate();
    if (sft.epochs < 0 || sft.batch < 1 || sft.passes < 1 || !(sft.lr > 0.0))
        throw ConfigError("sft needs epochs >= 0, batch >= 1, passes >= 1 and lr > 0");
    if (demos.count < 1) throw ConfigError("demos.count must be >= 1");
    if (planner_backend.kind == BackendKind::remote) planner_backend.remote.validate();
    if (critic_backend.kind == BackendKind::remote) critic_backend.remote.validate();
}

json run_config_to_json(const RunConfig& c) {
    json curriculum = json::array();
    for (const auto& l : c.grpo.curriculum) curriculum.push_back({l.from_iteration, l.max_length});
    json weights = json::array();
    for (double w : c.weights.w.v) weights.push_back(w);
    return {
        {"domain", c.domain},
        {"seed", c.seed},
        {"out", c.out},
        {"jobs", c.jobs},
        {"loop",
         {{"tau", c.loop.tau},
          {"k_retries", c.loop.k_retries},
          {"max_outer_replans", c.loop.max_outer_replans},
          {"max_total_segments", c.loop.max_total_segments},
          {"gated", c.loop.gated},
          {"soft_floor", c.loop.soft_floor}}},
        {"sampler", {{"K", c.sampler.K}, {"eta_scale", c.sampler.eta_scale}, {"delta", c.sampler.delta}}},
        {"grpo",
         {{"G", c.grpo.G},
          {"epsilon", c.grpo.epsilon},
          {"beta", c.grpo.beta},
          {"delta", c.grpo.delta},
          {"lr", c.grpo.lr},
          {"iterations", c.grpo.iterations},
          {"curriculum", curriculum},
          {"reward", to_string(c.grpo.reward)},
          {"rm_blend", c.grpo.rm_blend},
          {"start_walk", c.grpo.start_walk}}},
        {"weights", weights},
        {"sft",
         {{"epochs", c.sft.epochs},
          {"lr", c.sft.lr},
          {"batch", c.sft.batch},
          {"passes", c.sft.passes},
          {"t_min", c.sft.t_min},
          {"lr_decay", c.sft.lr_decay}}},
        {"demos",
         {{"count", c.demos.count},
          {"jitter", c.demos.jitter},
          {"emphasis_prob", c.demos.emphasis_prob},
          {"max_walk", c.demos.max_walk},
          {"cond_noise", c.demos.cond_noise}}},
        {"planner_backend", backend_to_json(c.planner_backend)},
        {"critic_backend", backend_to_json(c.critic_backend)},
    };
}

RunConfig run_config_from_json(const json& doc, const RunConfig& base) {
    json merged = run_config_to_json(base);
    overlay(merged, doc, "");
    RunConfig c;
    try {
        c.domain = merged.at("domain").get<std::string>();
        c.seed = merged.at("seed").get<std::uint64_t>();
        c.out = merged.at("out").get<std::string>();
        c.jobs = merged.at("jobs").get<int>();
        const auto& l = merged.at("loop");
        c.loop.tau = l.at("tau").get<double>();
        c.loop.k_retries = l.at("k_retries").get<int>();
        c.loop.max_outer_replans = l.at("max_outer_replans").get<int>();
        c.loop.max_total_segments = l.at("max_total_segments").get<int>();
        c.loop.gated = l.at("gated").get<bool>();
        c.loop.soft_floor = l.at("soft_floor").get<double>();
        const auto& s = merged.at("sampler");
        c.sampler.K = s.at("K").get<int>();
        c.sampler.eta_scale = s.at("eta_scale").get<double>();
        c.sampler.delta = s.at("delta").get<double>();
        const auto& g = merged.at("grpo");
        c.grpo.G = g.at("G").get<int>();
        c.grpo.epsilon = g.at("epsilon").get<double>();
        c.grpo.beta = g.at("beta").get<double>();
        c.grpo.delta = g.at("delta").get<double>();
        c.grpo.lr = g.at("lr").get<double>();
        c.grpo.iterations = g.at("iterations").get<int>();
        c.grpo.curriculum.clear();
        for (const auto& lvl : g.at("curriculum")) {
            if (!lvl.is_array() || lvl.size() != 2) throw ConfigError("grpo.curriculum entries are [from_iteration, max_length]");
            c.grpo.curriculum.push_back({lvl[0].get<int>(), lvl[1].get<int>()});
        }
        c.grpo.reward = reward_source_from_string(g.at("reward").get<std::string>());
        c.grpo.rm_blend = g.at("rm_blend").get<double>();
        c.grpo.start_walk = g.at("start_walk").get<int>();
        const auto& w = merged.at("weights");
        if (!w.is_array() || static_cast<int>(w.size()) != kDimensions)
            throw ConfigError("weights must list " + std::to_string(kDimensions) + " numbers");
        for (int d = 0; d < kDimensions; ++d) c.weights.w.v[d] = w[d].get<double>();
        const auto& f = merged.at("sft");
        c.sft.epochs = f.at("epochs").get<int>();
        c.sft.lr = f.at("lr").get<double>();
        c.sft.batch = f.at("batch").get<int>();
        c.sft.passes = f.at("passes").get<int>();
        c.sft.t_min = f.at("t_min").get<double>();
        c.sft.lr_decay = f.at("lr_decay").get<double>();
        const auto& d = merged.at("demos");
        c.demos.count = d.at("count").get<int>();
        c.demos.jitter = d.at("jitter").get<double>();
        c.demos.emphasis_prob = d.at("emphasis_prob").get<double>();
        c.demos.max_walk = d.at("max_walk").get<int>();
        c.demos.cond_noise = d.at("cond_noise").get<double>();
        c.planner_backend = backend_from_json(merged.at("planner_backend"));
        c.critic_backend = backend_from_json(merged.at("critic_backend"));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path, const RunConfig& base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return run_config_from_json(doc, base);
}

std::string resolve_domain_path(const std::string& domain) {
    if (std::filesystem::is_regular_file(domain)) return domain;
    const auto bundled = bundled_domain_path(domain);
    if (std::filesystem::is_regular_file(bundled)) return bundled;
    throw ConfigError("unknown domain '" + domain + "' (neither a file nor a bundled domain)");
}

LoopConfig loop_mode(const std::string& mode, const LoopConfig& base) {
    LoopConfig preset;
    if (mode == "full")
        preset = LoopConfig::full();
    else if (mode == "inner-only")
        preset = LoopConfig::inner_only();
    else if (mode == "open-loop")
        preset = LoopConfig::open_loop();
    else
        throw ConfigError("unknown mode '" + mode + "' (expected full, inner-only or open-loop)");
    preset.tau = base.tau;
    preset.soft_floor = base.soft_floor;
    preset.max_total_segments = base.max_total_segments;
    if (mode != "open-loop") preset.k_retries = base.k_retries;
    if (mode == "full") preset.max_outer_replans = base.max_outer_replans;
    return preset;
}

RandomSource stream_rng(const RunConfig& cfg, Stream s) { return RandomSource(cfg.seed, static_cast<std::uint64_t>(s)); }

SftResult run_sft(const DomainSpec& spec, const RunConfig& cfg) {
    auto init_rng = stream_rng(cfg, Stream::init);
    const auto init = make_velocity_model(spec, init_rng);
    auto demo_rng = stream_rng(cfg, Stream::demos);
    const auto demos = generate_demos(spec, cfg.demos, demo_rng);
    auto sft_rng = stream_rng(cfg, Stream::sft);
    return sft_train(init, demos, cfg.sft, sft_rng);
}

}  // namespace actloop
