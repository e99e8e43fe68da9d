#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "actloop/microworld.hpp"
#include "json.hpp"

namespace actloop {

struct Goal {
    std::string description;
    std::vector<Literal> target;
};

// Parse "cup.full, cup.stirred" (comma or "and" separated; names or phrases).
Goal parse_goal(const DomainSpec& spec, const std::string& text);
std::string goal_to_string(const DomainSpec& spec, const Goal& goal);

struct ActionRef {
    std::string verb;
    std::vector<std::string> objects;
    std::optional<std::string> tool;
    friend bool operator==(const ActionRef&, const ActionRef&) = default;
};

struct PlanStep {
    int sid = 0;
    std::string instruction;
    std::vector<ActionRef> actions;
    std::vector<Literal> pre, post;
    int action = -1;  // index into DomainSpec::actions
    // Literals the critic asked to stress on a retry; local only, never on the wire.
    std::vector<Literal> emphasis;
    friend bool operator==(const PlanStep&, const PlanStep&) = default;
};

struct PlanSequence {
    std::vector<PlanStep> steps;
    friend bool operator==(const PlanSequence&, const PlanSequence&) = default;
};

struct FailureContext {
    std::vector<int> history;  // sids accepted so far
    PlanStep failed;
    std::vector<std::string> tags;
    std::string feedback;
    PlanSequence remaining;  // starts with the failed step
};

struct PlannerConfig {
    std::size_t node_budget = 100000;
};

struct PlanReport {
    bool ok = true;
    int sid = 0;          // first offending step (0 when the failure is the goal check)
    std::string literal;  // offending literal, phrase form
    std::string reason;
};

PlanStep make_step(const DomainSpec& spec, int sid, int action_index);

PlanSequence plan(const DomainSpec& spec, const Goal& goal, const SymbolicState& initial,
                  const PlannerConfig& config = {});
PlanSequence replan(const DomainSpec& spec, const Goal& goal, const FailureContext& failure,
                    const SymbolicState& memory_state, const PlannerConfig& config = {});

// Random goal whose minimal plan from `from` has between min_len and max_len steps: a random walk's
// changed literals, subsampled. NoPlanError after `tries` unsuccessful draws.
Goal sample_goal(const DomainSpec& spec, RandomSource& rng, int min_len, int max_len, const SymbolicState& from,
                 int tries = 2000);

// State the planner should believe after applying a "precondition-missing" tag.
SymbolicState corrected_belief(const DomainSpec& spec, const std::vector<std::string>& tags,
                               const SymbolicState& state);

PlanReport validate_plan(const DomainSpec& spec, const PlanSequence& plan, const SymbolicState& initial,
                         const Goal* goal = nullptr);
// Simulated states s_0, s_1, ..., s_T along the plan; throws PreconditionError on a violation.
std::vector<SymbolicState> plan_trace(const DomainSpec& spec, const PlanSequence& plan, const SymbolicState& initial);

// Exhaustive depth-limited search in (verb, objects) order; test oracle and suite-band checker.
std::optional<std::vector<int>> brute_force_plan(const DomainSpec& spec, const Goal& goal, const SymbolicState& initial,
                                                 int max_depth);

// Wire form: {"steps": [{"sid", "action instruction", "actions", "pre", "post"}]}.
nlohmann::json plan_to_json(const DomainSpec& spec, const PlanSequence& plan);
// Rejects the whole document on any schema problem (SchemaError); accepts "text" for the instruction
// and tolerates a leading <think>...</think> block when given a raw string.
PlanSequence plan_from_json(const DomainSpec& spec, const nlohmann::json& doc);
PlanSequence plan_from_text(const DomainSpec& spec, const std::string& text);

std::string format_plan(const DomainSpec& spec, const PlanSequence& plan);

}  // namespace actloop
