#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include "actloop/error.hpp"
#include "actloop/loop.hpp"
#include "doctest.h"

using namespace actloop;

namespace {

const DomainSpec& kitchen() {
    static const DomainSpec spec = load_domain(bundled_domain_path("kitchen"));
    return spec;
}

Goal random_goal(const DomainSpec& spec, RandomSource& rng) {
    while (true) {
        SymbolicState s = spec.initial;
        const int walk = 1 + static_cast<int>(rng.below(10));
        for (int i = 0; i < walk; ++i) {
            std::vector<int> legal;
            for (std::size_t a = 0; a < spec.actions.size(); ++a)
                if (holds_all(s, spec.actions[a].pre)) legal.push_back(static_cast<int>(a));
            if (legal.empty()) break;
            s = apply_operator(spec, s, legal[rng.below(legal.size())]);
        }
        std::vector<Literal> changed;
        for (std::size_t p = 0; p < spec.predicates.size(); ++p)
            if (s.truth[p] != spec.initial.truth[p]) changed.push_back({static_cast<int>(p), s.truth[p] != 0});
        if (changed.empty()) continue;
        rng.shuffle(changed.begin(), changed.end());
        changed.resize(1 + rng.below(std::min<std::size_t>(3, changed.size())));
        std::sort(changed.begin(), changed.end());
        return Goal{"random", changed};
    }
}

// Frozen for the first `failures` calls, then the oracle.
class LatePolicy : public SegmentPolicy {
public:
    explicit LatePolicy(int failures) : failures_(failures) {}
    Segment generate(const DomainSpec& spec, const PlanStep& step, const WorldMemory& memory,
                     RandomSource& rng) override {
        ++calls;
        steps.push_back(step);
        if (calls <= failures_) return FrozenPolicy{}.generate(spec, step, memory, rng);
        return OraclePolicy{}.generate(spec, step, memory, rng);
    }
    std::string name() const override { return "late"; }
    int calls = 0;
    std::vector<PlanStep> steps;

private:
    int failures_;
};

// Rejects the first `count` critiques of `verb` with a fixed diagnosis, then defers to the built-in critic.
class ScriptedCritic : public CriticAgent {
public:
    ScriptedCritic(std::string verb, int count, std::string tag)
        : verb_(std::move(verb)), count_(count), tag_(std::move(tag)) {}
    CriticReport critique(const DomainSpec& spec, const Segment& segment, const PlanStep& step) override {
        if (step.actions.front().verb == verb_ && used_ < count_) {
            ++used_;
            CriticReport r;
            r.scores.v = {0.1, 0.1, 0.1, 1.0, 1.0};
            r.post_status.assign(step.post.size(), 0);
            r.tags.push_back({tag_, "", Dimension::adherence, 0.1});
            finalize_report(spec, step, r, CriticConfig{});
            return r;
        }
        return evaluate(spec, segment, step);
    }

private:
    std::string verb_;
    int count_;
    std::string tag_;
    int used_ = 0;
};

}  // namespace

TEST_CASE("run_episode: satisfied goal succeeds with no segments") {
    const auto& k = kitchen();
    BuiltinPlanner planner;
    OraclePolicy oracle;
    BuiltinCritic critic;
    RandomSource rng(1);
    const auto log = run_episode(k, parse_goal(k, "jar.closed"), planner, oracle, critic, LoopConfig{}, rng);
    CHECK(log.status == EpisodeStatus::success);
    CHECK(log.segments == 0);
    CHECK(log.initial_plan.steps.empty());
    CHECK(log.completeness() == 1.0);
}

TEST_CASE("run_episode: the oracle policy solves 100 random goals without retries") {
    const auto& k = kitchen();
    BuiltinPlanner planner;
    OraclePolicy oracle;
    BuiltinCritic critic;
    RandomSource rng(2);
    for (int i = 0; i < 100; ++i) {
        const Goal g = random_goal(k, rng);
        const auto log = run_episode(k, g, planner, oracle, critic, LoopConfig{}, rng);
        REQUIRE_MESSAGE(log.status == EpisodeStatus::success, goal_to_string(k, g));
        CHECK(log.segments == static_cast<int>(log.initial_plan.steps.size()));
        CHECK(log.replans.empty());
        CHECK(log.completeness() == 1.0);
        CHECK(holds_all(log.memory.state, g.target));
        for (const auto& a : log.attempts) CHECK(a.attempt == 1);
        // Replay oracle: the simulated state is the chain application of the accepted operators.
        SymbolicState s = k.initial;
        for (const auto& t : log.memory.transitions) {
            s = apply_operator(k, s, t.step.action);
            CHECK(t.reward >= 0.7);
        }
        CHECK(s == log.memory.state);
    }
}

TEST_CASE("run_episode: a frozen policy exhausts retries and replans, memory stays empty") {
    const auto& k = kitchen();
    BuiltinPlanner planner;
    FrozenPolicy frozen;
    BuiltinCritic critic;
    RandomSource rng(3);
    LoopConfig cfg;
    const auto log = run_episode(k, parse_goal(k, "cup.stirred"), planner, frozen, critic, cfg, rng);
    CHECK((log.status == EpisodeStatus::plan_failure || log.status == EpisodeStatus::budget_exhausted));
    CHECK(log.memory.empty());
    CHECK(log.segments == cfg.k_retries * (cfg.max_outer_replans + 1));
    std::map<int, int> per_version;
    for (const auto& a : log.attempts) {
        CHECK_FALSE(a.accepted);
        ++per_version[a.plan_version];
    }
    CHECK(per_version.size() == static_cast<std::size_t>(cfg.max_outer_replans + 1));
    for (const auto& [v, n] : per_version) CHECK(n == cfg.k_retries);
    // max_outer_replans successful replans plus the final refusal
    CHECK(log.replans.size() == static_cast<std::size_t>(cfg.max_outer_replans + 1));
    CHECK_FALSE(log.replans.back().error.empty());
    for (const auto& r : log.replans) CHECK(r.failed_sid == 1);
    CHECK(log.completeness() == 0.0);

    LoopConfig tight;
    tight.max_total_segments = 4;
    const auto cut = run_episode(k, parse_goal(k, "cup.stirred"), planner, frozen, critic, tight, rng);
    CHECK(cut.status == EpisodeStatus::budget_exhausted);
    CHECK(cut.segments == 4);
}

TEST_CASE("inner refinement counts generations and revises the instruction") {
    const auto& k = kitchen();
    BuiltinPlanner planner;
    BuiltinCritic critic;
    RandomSource rng(4);
    LatePolicy late(1);
    const auto log = run_episode(k, parse_goal(k, "jar.held"), planner, late, critic, LoopConfig{}, rng);
    CHECK(log.status == EpisodeStatus::success);
    CHECK(log.segments == 2);
    REQUIRE(log.attempts.size() == 2);
    CHECK_FALSE(log.attempts[0].accepted);
    CHECK(log.attempts[1].accepted);
    CHECK_FALSE(log.attempts[0].report.tags.empty());
    CHECK(log.attempts[1].instruction != log.attempts[0].instruction);
    CHECK(log.attempts[1].instruction == log.attempts[0].report.revised_instruction);
    CHECK_FALSE(late.steps[1].emphasis.empty());

    const auto step = log.initial_plan.steps[0];
    const auto memory = make_memory(k.initial);
    LatePolicy none(0);
    const auto r0 = inner_refine(k, step, log.attempts[0].report, none, critic, memory, 0, 0.7, rng);
    CHECK(r0.generations == 0);
    CHECK_FALSE(r0.segment.has_value());
    CHECK(none.calls == 0);
}

TEST_CASE("attempt records always carry a revised instruction after a tagged failure") {
    const auto& k = kitchen();
    BuiltinPlanner planner;
    BuiltinCritic critic;
    FrozenPolicy frozen;
    RandomSource rng(5);
    const auto log = run_episode(k, parse_goal(k, "kettle.hot"), planner, frozen, critic, LoopConfig{}, rng);
    for (std::size_t i = 1; i < log.attempts.size(); ++i) {
        const auto& prev = log.attempts[i - 1];
        const auto& cur = log.attempts[i];
        if (cur.attempt > 1 && !prev.report.tags.empty()) CHECK(cur.instruction != log.initial_plan.steps[0].instruction);
    }
}

TEST_CASE("outer replan: a missing-precondition diagnosis inserts the establishing step") {
    const auto& k = kitchen();
    const Goal g = parse_goal(k, "cup.sweet");
    BuiltinPlanner planner;
    OraclePolicy oracle;
    LoopConfig cfg;
    ScriptedCritic critic("pour", cfg.k_retries, "precondition-missing:jar.held; observed:not hand.holding");
    RandomSource rng(6);
    const auto log = run_episode(k, g, planner, oracle, critic, cfg, rng);
    CHECK(log.status == EpisodeStatus::success);
    REQUIRE(log.replans.size() == 1);
    CHECK(log.replans[0].failed_sid == 3);
    CHECK(std::find(log.replans[0].tags.begin(), log.replans[0].tags.end(), "retry-same") == log.replans[0].tags.end());
    REQUIRE(log.final_plan.steps.size() == 4);
    CHECK(log.final_plan.steps[2].sid == 3);
    CHECK(log.final_plan.steps[2].actions[0].verb == "grasp");
    CHECK(log.final_plan.steps[3].actions[0].verb == "pour");
    CHECK(log.memory.corrections.size() == 1);
    CHECK(log.memory.size() == 4);
}

TEST_CASE("outer replan: generic failures retry the same draft and respect the budget") {
    const auto& k = kitchen();
    const Goal g = parse_goal(k, "cup.sweet");
    BuiltinPlanner planner;
    OraclePolicy oracle;
    LoopConfig cfg;
    ScriptedCritic critic("open", cfg.k_retries, "interaction-miss");
    RandomSource rng(7);
    const auto log = run_episode(k, g, planner, oracle, critic, cfg, rng);
    CHECK(log.status == EpisodeStatus::success);
    REQUIRE(log.replans.size() == 1);
    CHECK(log.replans[0].tags.back() == "retry-same");
    CHECK(log.final_plan == log.initial_plan);

    LoopConfig no_replan = LoopConfig::inner_only();
    ScriptedCritic again("open", cfg.k_retries, "interaction-miss");
    const auto stopped = run_episode(k, g, planner, oracle, again, no_replan, rng);
    CHECK(stopped.status == EpisodeStatus::plan_failure);
    CHECK(stopped.memory.size() == 1);
    CHECK(stopped.completeness() == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("memory_update: append, guard, replay") {
    const auto& k = kitchen();
    const auto p = plan(k, parse_goal(k, "cup.full"), k.initial);
    RandomSource rng(8);
    auto memory = make_memory(k.initial);
    for (const auto& step : p.steps) {
        const auto seg = reference_segment(k, memory.state, k.actions[step.action], k.frames, &rng, 0.0);
        const auto report = evaluate(k, seg, step);
        const auto before = memory.size();
        memory = memory_update(k, memory, step, seg, report, 0.7);
        CHECK(memory.size() == before + 1);
    }
    CHECK(memory.state == plan_trace(k, p, k.initial).back());

    CriticReport low;
    low.scalar = 0.5;
    const auto step = make_step(k, 1, *find_action(k, "grasp", {"jar"}));
    CHECK_THROWS_AS(memory_update(k, make_memory(k.initial), step, Segment(k.frames, k.width()), low, 0.7),
                    ConfigError);
}

TEST_CASE("open loop commits every first generation") {
    const auto& k = kitchen();
    BuiltinPlanner planner;
    FrozenPolicy frozen;
    BuiltinCritic critic;
    RandomSource rng(9);
    const auto log =
        run_episode(k, parse_goal(k, "cup.sweet"), planner, frozen, critic, LoopConfig::open_loop(), rng);
    CHECK(log.segments == 3);
    CHECK(log.memory.size() == 3);
    CHECK(log.completed_steps == 0);
    CHECK(log.status == EpisodeStatus::plan_failure);
    OraclePolicy oracle;
    const auto good =
        run_episode(k, parse_goal(k, "cup.sweet"), planner, oracle, critic, LoopConfig::open_loop(), rng);
    CHECK(good.status == EpisodeStatus::success);
    CHECK(good.completeness() == 1.0);
}

TEST_CASE("segment budgets hold for a noisy policy over many episodes") {
    const auto& k = kitchen();
    BuiltinPlanner planner;
    BuiltinCritic critic;
    RandomSource rng(10);
    // Untrained network: mostly rejected segments.
    LearnedPolicy policy(make_velocity_model(k, rng), SamplerConfig{});
    for (int i = 0; i < 20; ++i) {
        LoopConfig cfg;
        cfg.max_total_segments = 12;
        const Goal g = random_goal(k, rng);
        const auto log = run_episode(k, g, planner, policy, critic, cfg, rng);
        const int bound = log.initial_plan.steps.size() * cfg.k_retries * (cfg.max_outer_replans + 1);
        CHECK(log.segments <= bound);
        CHECK(log.segments <= cfg.max_total_segments);
        for (const auto& t : log.memory.transitions) CHECK(t.reward >= cfg.tau);
        std::map<std::pair<int, int>, int> per;
        for (const auto& a : log.attempts) ++per[{a.plan_version, a.sid}];
        for (const auto& [key, n] : per) CHECK(n <= cfg.k_retries);
    }
}

TEST_CASE("episode log records are line-delimited JSON") {
    const auto& k = kitchen();
    BuiltinPlanner planner;
    LatePolicy late(1);
    BuiltinCritic critic;
    RandomSource rng(11);
    const auto log = run_episode(k, parse_goal(k, "jar.held"), planner, late, critic, LoopConfig{}, rng);
    const auto recs = episode_records(k, log);
    REQUIRE(recs.size() == 3);
    CHECK(recs[0]["type"] == "attempt");
    CHECK(recs[0]["accepted"] == false);
    CHECK(recs[2]["type"] == "episode");
    CHECK(recs[2]["status"] == "success");
    const auto path = (std::filesystem::temp_directory_path() / "actloop_loop_test.jsonl").string();
    std::filesystem::remove(path);
    append_episode_log(path, k, log);
    std::ifstream in(path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        CHECK(nlohmann::json::parse(line).contains("type"));
        ++lines;
    }
    CHECK(lines == 3);
    std::filesystem::remove(path);
}

TEST_CASE("loop configuration is validated") {
    LoopConfig c;
    c.tau = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = LoopConfig{};
    c.k_retries = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_NOTHROW(LoopConfig::open_loop().validate());
}
