#pragma once

#include <cstdint>
#include <string>

#include "actloop/gateway.hpp"
#include "actloop/grpo.hpp"
#include "json.hpp"

namespace actloop {

// Everything a command needs, with defaults filled in. Layering: defaults, then a JSON file, then flags.
struct RunConfig {
    std::string domain = "kitchen";  // bundled name or a path to a domain JSON file
    std::uint64_t seed = 7;
    std::string out = "runs/default";
    int jobs = 1;
    LoopConfig loop;
    SamplerConfig sampler;
    GrpoConfig grpo;
    CriticWeights weights;
    SftConfig sft;
    DemoConfig demos;
    AgentBackend planner_backend;
    AgentBackend critic_backend;

    CriticConfig critic_config() const;
    void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
// Overlays `doc` on `base`. Unknown keys and ill-typed values raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& doc, const RunConfig& base = {});
RunConfig load_run_config(const std::string& path, const RunConfig& base = {});

std::string resolve_domain_path(const std::string& domain);

// "full", "inner-only" or "open-loop"; ConfigError otherwise. Thresholds come from `base`.
LoopConfig loop_mode(const std::string& mode, const LoopConfig& base = {});

// Named random streams derived from the run seed.
enum class Stream : std::uint64_t { init = 1, demos = 2, sft = 3, grpo = 4, bench = 5, suite = 6 };
RandomSource stream_rng(const RunConfig& cfg, Stream s);

// Demonstrations plus supervised fitting from a fresh initialization.
SftResult run_sft(const DomainSpec& spec, const RunConfig& cfg);

}  // namespace actloop
