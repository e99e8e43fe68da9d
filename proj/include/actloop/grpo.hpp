#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "actloop/critic.hpp"
#include "actloop/loop.hpp"
#include "actloop/optim.hpp"
#include "actloop/worldmodel.hpp"

namespace actloop {

struct CurriculumLevel {
    int from_iteration = 1;  // first iteration of the level (left-closed)
    int max_length = 1;
};

enum class RewardSource { programmatic, adherence, blended };
std::string to_string(RewardSource r);
RewardSource reward_source_from_string(const std::string& name);

struct GrpoConfig {
    int G = 8;
    double epsilon = 0.2;
    double beta = 0.01;
    double delta = 1e-8;
    double lr = 3e-4;
    int iterations = 300;
    std::vector<CurriculumLevel> curriculum = {{1, 1}, {101, 3}, {201, 5}};
    RewardSource reward = RewardSource::programmatic;
    double rm_blend = 0.0;  // weight of the learned reward model in blended mode
    int start_walk = 4;     // training episodes start after up to this many random legal actions

    void validate() const;
};

// Max plan length at `iteration` (1-based). Iterations past the table stay on the last level.
int curriculum_schedule(const GrpoConfig& cfg, int iteration);

// A_i = (r_i - mean) / (population std + delta).
std::vector<double> compute_advantages(const std::vector<double>& rewards, double delta);

struct GroupMember {
    Segment segment;  // clipped, as scored
    DenoiseTrace trace;
    CriticReport report;
    double reward = 0.0;
};

struct RolloutGroup {
    PlanStep step;
    std::vector<double> cond;
    std::vector<double> zK;  // shared by every member
    std::vector<GroupMember> members;
    std::vector<double> advantages;

    std::vector<double> rewards() const;
};

using RewardFn = std::function<double(const Segment&, const PlanStep&, const CriticReport&)>;

// Reward under `cfg.reward`; `rm` is required for blended rewards.
RewardFn make_reward_fn(const DomainSpec& spec, const GrpoConfig& cfg, const RewardModel* rm = nullptr);

// One shared z_K, G independent Wiener streams. `stream_seeds` (size G) overrides the member streams.
RolloutGroup rollout_group(const VelocityModel& theta_old, const DomainSpec& spec, const PlanStep& step,
                           const WorldMemory& memory, const SamplerConfig& sampler, const GrpoConfig& cfg,
                           CriticAgent& critic, const RewardFn& reward, RandomSource& rng,
                           const std::vector<std::uint64_t>* stream_seeds = nullptr);

// Mean over trace steps of |mu_theta - mu_ref|^2 / (2 std^2). Adds the gradient w.r.t. theta when asked.
double kl_term(const VelocityModel& theta, const VelocityModel& reference, const DenoiseTrace& trace,
               std::span<const double> cond, const SamplerConfig& sampler, std::span<double> grad = {});

// Clipped per-step surrogate of one member, averaged over its steps. Ratios are taken against the
// log-densities recorded in the trace (the sampling policy). Adds d/dtheta into grad when given.
struct MemberSurrogate {
    double value = 0.0;
    std::vector<double> ratios;
    int clipped = 0;  // steps whose clipped branch was active and binding
    bool finite = true;
};

MemberSurrogate member_surrogate(const VelocityModel& theta, const DenoiseTrace& trace, std::span<const double> cond,
                                 double advantage, const SamplerConfig& sampler, double epsilon,
                                 std::span<double> grad = {});

struct UpdateStats {
    double surrogate = 0.0;
    double kl = 0.0;
    double objective = 0.0;  // surrogate - beta * kl
    double clip_fraction = 0.0;
    double max_ratio_error = 0.0;  // max |rho - 1| over every step
    double update_norm = 0.0;
    int dropped = 0;
    bool skipped = false;
    std::vector<std::string> warnings;
};

// Objective and its gradient (ascent direction) without touching parameters.
UpdateStats grpo_objective(const VelocityModel& theta, const VelocityModel& reference, const RolloutGroup& group,
                           const SamplerConfig& sampler, const GrpoConfig& cfg, std::vector<double>* grad);

// One Adam ascent step on theta.
UpdateStats grpo_update(PolicyBundle& bundle, OptState& opt, const RolloutGroup& group, const SamplerConfig& sampler,
                        const GrpoConfig& cfg);

struct TrainingRecord {
    int iteration = 0;
    int level = 0;
    std::string goal;
    int groups = 0;
    double mean_reward = 0.0;
    DimensionScores dims;  // mean critic scores over every member
    double kl_mean = 0.0;
    double clip_fraction = 0.0;
    double first_clip_fraction = 0.0;  // clip fraction of the first update after the sync
    double max_ratio_error_at_sync = 0.0;
};

struct TrainingLog {
    std::vector<TrainingRecord> records;
    std::vector<std::string> events;
};

// Optimizer moments and the last finished iteration, enough to continue a run where it stopped.
struct TrainState {
    int completed = 0;
    OptState opt;
};

// Per iteration: sync theta_old, sample a goal within the curriculum, and walk its plan with one group
// and one update per step, advancing memory with the best member. Iteration i draws from stream i of a
// base seed taken from `rng`, so a run resumed through `state` with the same rng seed reproduces the
// uninterrupted one. Runs iterations completed+1 .. cfg.iterations.
TrainingLog train(PolicyBundle& bundle, const DomainSpec& spec, PlanAgent& planner, CriticAgent& critic,
                  const GrpoConfig& cfg, const SamplerConfig& sampler, RandomSource& rng,
                  const RewardModel* rm = nullptr,
                  const std::function<void(const TrainingRecord&)>& on_iteration = {}, TrainState* state = nullptr);

void save_train_state(const std::string& path, const TrainState& state);
TrainState load_train_state(const std::string& path);

void write_training_csv(const std::string& path, const TrainingLog& log);
// Reads the columns written by write_training_csv; goal text and per-sync diagnostics are not stored.
TrainingLog read_training_csv(const std::string& path);

}  // namespace actloop
