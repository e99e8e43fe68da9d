#include "actloop/loop.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include "actloop/error.hpp"

namespace actloop {

void LoopConfig::validate() const {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0, 1)");
    if (k_retries < 1) throw ConfigError("k_retries must be >= 1");
    if (max_outer_replans < 0) throw ConfigError("max_outer_replans must be >= 0");
    if (max_total_segments < 1) throw ConfigError("max_total_segments must be >= 1");
    if (!(soft_floor >= 0.0 && soft_floor <= 1.0)) throw ConfigError("soft_floor must lie in [0, 1]");
}

LoopConfig LoopConfig::full() { return {}; }

LoopConfig LoopConfig::inner_only() {
    LoopConfig c;
    c.max_outer_replans = 0;
    return c;
}

LoopConfig LoopConfig::open_loop() {
    LoopConfig c;
    c.k_retries = 1;
    c.max_outer_replans = 0;
    c.gated = false;
    return c;
}

PlanSequence BuiltinPlanner::plan(const DomainSpec& spec, const Goal& goal, const SymbolicState& state) {
    return actloop::plan(spec, goal, state, config_);
}

PlanSequence BuiltinPlanner::replan(const DomainSpec& spec, const Goal& goal, const FailureContext& failure,
                                    const SymbolicState& state) {
    return actloop::replan(spec, goal, failure, state, config_);
}

CriticReport BuiltinCritic::critique(const DomainSpec& spec, const Segment& segment, const PlanStep& step) {
    return evaluate(spec, segment, step, config_);
}

Segment LearnedPolicy::generate(const DomainSpec& spec, const PlanStep& step, const WorldMemory& memory,
                                RandomSource& rng) {
    const auto cond = embed_condition(spec, step, memory);
    const auto zK = rng.normal_vector(model_.state_size());
    if (sampler_.eta_scale == 0.0) return clip_segment(sample_ode(model_, cond, zK, sampler_));
    return clip_segment(sample_sde(model_, cond, zK, sampler_, rng));
}

Segment OraclePolicy::generate(const DomainSpec& spec, const PlanStep& step, const WorldMemory& memory,
                               RandomSource& rng) {
    const auto& action = spec.actions.at(step.action);
    if (!holds_all(memory.state, action.pre)) return FrozenPolicy{}.generate(spec, step, memory, rng);
    return reference_segment(spec, memory.state, action, spec.frames, &rng, jitter_);
}

Segment FrozenPolicy::generate(const DomainSpec& spec, const PlanStep&, const WorldMemory& memory, RandomSource&) {
    const auto frame = memory_frame(spec, memory);
    Segment seg(spec.frames, spec.width());
    for (int i = 0; i < seg.frames; ++i) std::copy(frame.begin(), frame.end(), seg.row(i).begin());
    return seg;
}

std::string to_string(EpisodeStatus s) {
    switch (s) {
        case EpisodeStatus::success: return "success";
        case EpisodeStatus::plan_failure: return "plan-failure";
        case EpisodeStatus::budget_exhausted: return "budget-exhausted";
    }
    return "?";
}

double EpisodeLog::completeness() const {
    if (planned_steps == 0) return status == EpisodeStatus::success ? 1.0 : 0.0;
    return static_cast<double>(completed_steps) / planned_steps;
}

WorldMemory memory_update(const DomainSpec& spec, WorldMemory memory, const PlanStep& step, const Segment& segment,
                          const CriticReport& report, double tau) {
    if (report.scalar < tau)
        throw ConfigError("memory_update: reward " + std::to_string(report.scalar) + " is below tau " +
                          std::to_string(tau));
    memory.state = apply_operator(spec, memory.state, step.action);
    memory.transitions.push_back({step, segment, report.scalar});
    return memory;
}

namespace {

bool all_post(const CriticReport& r, const PlanStep& step) {
    if (r.post_status.size() != step.post.size()) return false;
    return std::all_of(r.post_status.begin(), r.post_status.end(), [](std::uint8_t v) { return v != 0; });
}

PlanStep revised_step(const PlanStep& step, const CriticReport& report) {
    PlanStep s = step;
    s.instruction = report.revised_instruction.empty() ? step.instruction : report.revised_instruction;
    s.emphasis = report.emphasis;
    return s;
}

}  // namespace

InnerResult inner_refine(const DomainSpec& spec, const PlanStep& step, const CriticReport& report,
                         SegmentPolicy& policy, CriticAgent& critic, const WorldMemory& memory, int budget,
                         double tau, RandomSource& rng) {
    InnerResult res;
    res.report = report;
    CriticReport last = report;
    for (int i = 0; i < budget; ++i) {
        const PlanStep attempt = revised_step(step, last);
        auto seg = policy.generate(spec, attempt, memory, rng);
        ++res.generations;
        last = critic.critique(spec, seg, step);
        res.reports.push_back(last);
        res.report = last;
        if (last.scalar >= tau) {
            res.segment = std::move(seg);
            break;
        }
    }
    return res;
}

PlanSequence outer_replan(const DomainSpec& spec, const Goal& goal, const FailureContext& failure, PlanAgent& planner,
                          const WorldMemory& memory) {
    return planner.replan(spec, goal, failure, memory.state);
}

EpisodeLog run_episode(const DomainSpec& spec, const Goal& goal, PlanAgent& planner, SegmentPolicy& policy,
                       CriticAgent& critic, const LoopConfig& config, RandomSource& rng,
                       const SymbolicState* initial) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    EpisodeLog log;
    log.goal = goal;
    log.memory = make_memory(initial ? *initial : spec.initial);

    auto finish = [&](EpisodeStatus status) {
        log.status = status;
        log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return log;
    };

    PlanSequence current;
    try {
        current = planner.plan(spec, goal, log.memory.state);
    } catch (const Error& e) {
        log.error = e.what();
        return finish(EpisodeStatus::plan_failure);
    }
    log.initial_plan = current;
    log.final_plan = current;
    log.planned_steps = static_cast<int>(current.steps.size());

    std::vector<PlanStep> executed;
    std::size_t idx = 0;
    int version = 0, replans = 0;
    while (idx < current.steps.size()) {
        const PlanStep& step = current.steps[idx];
        std::optional<Segment> accepted;
        CriticReport accepted_report;
        std::vector<CriticReport> reports;
        bool budget_hit = false;

        for (int attempt = 1; attempt <= config.k_retries; ++attempt) {
            if (log.segments >= config.max_total_segments) {
                budget_hit = true;
                break;
            }
            InnerResult r;
            if (attempt == 1) {
                auto seg = policy.generate(spec, step, log.memory, rng);
                r.report = critic.critique(spec, seg, step);
                r.generations = 1;
                if (r.report.scalar >= config.tau || !config.gated) r.segment = std::move(seg);
            } else {
                r = inner_refine(spec, step, reports.back(), policy, critic, log.memory, 1, config.tau, rng);
            }
            log.segments += r.generations;
            reports.push_back(r.report);
            AttemptRecord rec;
            rec.sid = step.sid;
            rec.attempt = attempt;
            rec.plan_version = version;
            rec.action = step.action;
            rec.instruction = attempt == 1 ? step.instruction : revised_step(step, reports[reports.size() - 2]).instruction;
            rec.report = r.report;
            rec.accepted = r.segment.has_value();
            rec.post_satisfied = all_post(r.report, step);
            log.attempts.push_back(rec);
            if (r.segment) {
                accepted = std::move(r.segment);
                accepted_report = r.report;
                break;
            }
        }

        if (accepted) {
            if (config.gated) {
                log.memory = memory_update(spec, std::move(log.memory), step, *accepted, accepted_report, config.tau);
            } else {
                log.memory.state = apply_operator(spec, log.memory.state, step.action);
                log.memory.transitions.push_back({step, *accepted, accepted_report.scalar});
            }
            if (all_post(accepted_report, step)) ++log.completed_steps;
            executed.push_back(step);
            ++idx;
            continue;
        }
        if (budget_hit) {
            log.final_plan.steps = executed;
            log.final_plan.steps.insert(log.final_plan.steps.end(), current.steps.begin() + idx, current.steps.end());
            log.planned_steps = static_cast<int>(log.final_plan.steps.size());
            return finish(EpisodeStatus::budget_exhausted);
        }

        // Inner loop exhausted: escalate to the planner.
        FailureContext failure;
        for (const auto& e : executed) failure.history.push_back(e.sid);
        failure.failed = step;
        failure.remaining.steps.assign(current.steps.begin() + static_cast<long>(idx), current.steps.end());
        const CriticReport* seed = &reports.back();
        const auto best = std::max_element(reports.begin(), reports.end(),
                                           [](const CriticReport& a, const CriticReport& b) { return a.scalar < b.scalar; });
        if (best->scalar >= config.soft_floor * config.tau) seed = &*best;
        failure.tags = seed->tag_strings();
        failure.feedback = seed->prose;
        const bool names_missing = std::any_of(failure.tags.begin(), failure.tags.end(), [](const std::string& t) {
            return t.rfind("precondition-missing", 0) == 0;
        });
        if (!names_missing) failure.tags.push_back("retry-same");

        ReplanEvent ev;
        ev.failed_sid = step.sid;
        ev.tags = failure.tags;
        if (replans >= config.max_outer_replans) {
            ev.error = "replan budget exhausted";
            log.replans.push_back(ev);
            log.final_plan.steps = executed;
            log.final_plan.steps.insert(log.final_plan.steps.end(), current.steps.begin() + idx, current.steps.end());
            log.planned_steps = static_cast<int>(log.final_plan.steps.size());
            return finish(EpisodeStatus::plan_failure);
        }
        PlanSequence suffix;
        try {
            suffix = outer_replan(spec, goal, failure, planner, log.memory);
        } catch (const Error& e) {
            ev.error = e.what();
            log.replans.push_back(ev);
            log.error = e.what();
            log.final_plan.steps = executed;
            log.final_plan.steps.insert(log.final_plan.steps.end(), current.steps.begin() + idx, current.steps.end());
            log.planned_steps = static_cast<int>(log.final_plan.steps.size());
            return finish(EpisodeStatus::plan_failure);
        }
        ++replans;
        ++version;
        if (names_missing) {
            log.memory.state = corrected_belief(spec, failure.tags, log.memory.state);
            for (const auto& t : failure.tags)
                if (t.rfind("precondition-missing", 0) == 0) log.memory.corrections.push_back(t);
        }
        ev.new_steps = suffix.steps.size();
        log.replans.push_back(ev);
        PlanSequence next;
        next.steps.assign(current.steps.begin(), current.steps.begin() + static_cast<long>(idx));
        next.steps.insert(next.steps.end(), suffix.steps.begin(), suffix.steps.end());
        current = std::move(next);
        log.final_plan = current;
        log.planned_steps = static_cast<int>(current.steps.size());
    }

    log.final_plan = current;
    log.planned_steps = static_cast<int>(current.steps.size());
    const bool ok = holds_all(log.memory.state, goal.target) &&
                    (config.gated || log.completed_steps == log.planned_steps);
    return finish(ok ? EpisodeStatus::success : EpisodeStatus::plan_failure);
}

std::vector<nlohmann::json> episode_records(const DomainSpec& spec, const EpisodeLog& log) {
    using nlohmann::json;
    std::vector<json> out;
    for (const auto& a : log.attempts) {
        json scores = json::object();
        for (int d = 0; d < kDimensions; ++d) scores[dimension_name(static_cast<Dimension>(d))] = a.report.scores.v[d];
        out.push_back({{"type", "attempt"},
                       {"sid", a.sid},
                       {"attempt", a.attempt},
                       {"plan_version", a.plan_version},
                       {"action", a.action >= 0 ? action_label(spec, spec.actions[a.action]) : ""},
                       {"instruction", a.instruction},
                       {"scalar", a.report.scalar},
                       {"scores", scores},
                       {"tags", a.report.tag_strings()},
                       {"accepted", a.accepted},
                       {"post_satisfied", a.post_satisfied}});
    }
    for (const auto& r : log.replans)
        out.push_back({{"type", "replan"},
                       {"failed_sid", r.failed_sid},
                       {"tags", r.tags},
                       {"new_steps", r.new_steps},
                       {"error", r.error}});
    out.push_back({{"type", "episode"},
                   {"goal", goal_to_string(spec, log.goal)},
                   {"status", to_string(log.status)},
                   {"initial_plan", plan_to_json(spec, log.initial_plan)},
                   {"final_plan_length", log.final_plan.steps.size()},
                   {"accepted", log.memory.size()},
                   {"segments", log.segments},
                   {"completed_steps", log.completed_steps},
                   {"planned_steps", log.planned_steps},
                   {"completeness", log.completeness()},
                   {"corrections", log.memory.corrections},
                   {"wall_seconds", log.wall_seconds},
                   {"error", log.error}});
    return out;
}

void append_episode_log(const std::string& path, const DomainSpec& spec, const EpisodeLog& log) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw ConfigError("cannot append to log file '" + path + "'");
    for (const auto& rec : episode_records(spec, log)) out << rec.dump() << "\n";
}

}  // namespace actloop
