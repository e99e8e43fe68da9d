#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "actloop/critic.hpp"
#include "actloop/memory.hpp"
#include "actloop/planner.hpp"
#include "actloop/worldmodel.hpp"
#include "json.hpp"

namespace actloop {

struct LoopConfig {
    double tau = 0.7;
    int k_retries = 3;          // generations per step per plan version, the first included
    int max_outer_replans = 2;
    int max_total_segments = 64;
    bool gated = true;          // false: open loop, every first generation is committed unchecked
    double soft_floor = 0.5;    // fraction of tau a failed report must reach to seed the failure context

    void validate() const;
    static LoopConfig full();
    static LoopConfig inner_only();  // no outer replanning
    static LoopConfig open_loop();   // single ungated generation per step
};

class PlanAgent {
public:
    virtual ~PlanAgent() = default;
    virtual PlanSequence plan(const DomainSpec& spec, const Goal& goal, const SymbolicState& state) = 0;
    virtual PlanSequence replan(const DomainSpec& spec, const Goal& goal, const FailureContext& failure,
                                const SymbolicState& state) = 0;
};

class CriticAgent {
public:
    virtual ~CriticAgent() = default;
    virtual CriticReport critique(const DomainSpec& spec, const Segment& segment, const PlanStep& step) = 0;
};

class SegmentPolicy {
public:
    virtual ~SegmentPolicy() = default;
    virtual Segment generate(const DomainSpec& spec, const PlanStep& step, const WorldMemory& memory,
                             RandomSource& rng) = 0;
    virtual std::string name() const = 0;
};

class BuiltinPlanner : public PlanAgent {
public:
    explicit BuiltinPlanner(PlannerConfig config = {}) : config_(config) {}
    PlanSequence plan(const DomainSpec& spec, const Goal& goal, const SymbolicState& state) override;
    PlanSequence replan(const DomainSpec& spec, const Goal& goal, const FailureContext& failure,
                        const SymbolicState& state) override;

private:
    PlannerConfig config_;
};

class BuiltinCritic : public CriticAgent {
public:
    explicit BuiltinCritic(CriticConfig config = {}) : config_(config) {}
    CriticReport critique(const DomainSpec& spec, const Segment& segment, const PlanStep& step) override;
    const CriticConfig& config() const { return config_; }

private:
    CriticConfig config_;
};

// Samples with the reverse SDE (or the ODE when eta_scale is 0) from a fresh z_K and clips to [0,1].
class LearnedPolicy : public SegmentPolicy {
public:
    LearnedPolicy(VelocityModel model, SamplerConfig sampler, std::string label = "learned")
        : model_(std::move(model)), sampler_(sampler), label_(std::move(label)) {}
    Segment generate(const DomainSpec& spec, const PlanStep& step, const WorldMemory& memory,
                     RandomSource& rng) override;
    std::string name() const override { return label_; }
    const VelocityModel& model() const { return model_; }

private:
    VelocityModel model_;
    SamplerConfig sampler_;
    std::string label_;
};

// The demonstration generator: reference segments from the simulated state.
class OraclePolicy : public SegmentPolicy {
public:
    explicit OraclePolicy(double jitter = 0.02) : jitter_(jitter) {}
    Segment generate(const DomainSpec& spec, const PlanStep& step, const WorldMemory& memory,
                     RandomSource& rng) override;
    std::string name() const override { return "oracle"; }

private:
    double jitter_;
};

// Repeats the memory frame: nothing ever happens.
class FrozenPolicy : public SegmentPolicy {
public:
    Segment generate(const DomainSpec& spec, const PlanStep& step, const WorldMemory& memory,
                     RandomSource& rng) override;
    std::string name() const override { return "frozen"; }
};

enum class EpisodeStatus { success, plan_failure, budget_exhausted };
std::string to_string(EpisodeStatus s);

struct AttemptRecord {
    int sid = 0;
    int attempt = 0;       // 1-based within the step and plan version
    int plan_version = 0;
    int action = -1;
    std::string instruction;
    CriticReport report;
    bool accepted = false;
    bool post_satisfied = false;
};

struct ReplanEvent {
    int failed_sid = 0;
    std::vector<std::string> tags;
    std::size_t new_steps = 0;  // length of the new suffix (0 when the planner gave up)
    std::string error;
};

struct EpisodeLog {
    Goal goal;
    EpisodeStatus status = EpisodeStatus::plan_failure;
    PlanSequence initial_plan;
    PlanSequence final_plan;  // executed prefix followed by the last suffix
    std::vector<AttemptRecord> attempts;
    std::vector<ReplanEvent> replans;
    WorldMemory memory;
    int segments = 0;
    int completed_steps = 0;  // committed steps whose segment shows every post literal
    int planned_steps = 0;    // steps of the final plan
    double wall_seconds = 0.0;
    std::string error;

    double completeness() const;
};

// Appends a transition and advances the simulated state. Rejects reports below tau.
WorldMemory memory_update(const DomainSpec& spec, WorldMemory memory, const PlanStep& step, const Segment& segment,
                          const CriticReport& report, double tau);

struct InnerResult {
    std::optional<Segment> segment;
    CriticReport report;  // report of the accepted segment, else of the last attempt
    std::vector<CriticReport> reports;
    int generations = 0;
};

// Regenerates up to `budget` times with the revised instruction and a fresh noise draw.
InnerResult inner_refine(const DomainSpec& spec, const PlanStep& step, const CriticReport& report,
                         SegmentPolicy& policy, CriticAgent& critic, const WorldMemory& memory, int budget,
                         double tau, RandomSource& rng);

PlanSequence outer_replan(const DomainSpec& spec, const Goal& goal, const FailureContext& failure, PlanAgent& planner,
                          const WorldMemory& memory);

EpisodeLog run_episode(const DomainSpec& spec, const Goal& goal, PlanAgent& planner, SegmentPolicy& policy,
                       CriticAgent& critic, const LoopConfig& config, RandomSource& rng,
                       const SymbolicState* initial = nullptr);

// Line-delimited records: one per attempt, one per replan, then an episode summary.
std::vector<nlohmann::json> episode_records(const DomainSpec& spec, const EpisodeLog& log);
void append_episode_log(const std::string& path, const DomainSpec& spec, const EpisodeLog& log);

}  // namespace actloop
