#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "actloop/bench.hpp"
#include "actloop/error.hpp"
#include "doctest.h"

using namespace actloop;

namespace {

const DomainSpec& kitchen() {
    static const DomainSpec spec = load_domain(bundled_domain_path("kitchen"));
    return spec;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("actloop_bench_" + name);
    std::filesystem::remove_all(p);
    return p;
}

TrainingLog fake_log(int n) {
    TrainingLog log;
    for (int i = 1; i <= n; ++i) {
        TrainingRecord r;
        r.iteration = i;
        r.level = i <= n / 2 ? 1 : 3;
        r.mean_reward = 0.4 + 0.3 * i / n;
        r.dims[Dimension::adherence] = 0.5 + 0.001 * i;
        r.dims[Dimension::coherence] = 0.45;
        r.kl_mean = 0.01 * i;
        log.records.push_back(r);
    }
    return log;
}

}  // namespace

TEST_CASE("suite: bands verified by the planner, deterministic, empty counts") {
    const auto& k = kitchen();
    const auto suite = generate_suite(k, 3, {10, 10, 5});
    REQUIRE(suite.tasks.size() == 25);
    int per[3] = {0, 0, 0};
    for (const auto& t : suite.tasks) {
        const int len = static_cast<int>(plan(k, t.goal, t.initial).steps.size());
        CHECK(len == t.plan_length);
        const auto band = difficulty_band(t.difficulty);
        CHECK(len >= band.lo);
        CHECK(len <= band.hi);
        ++per[static_cast<int>(t.difficulty)];
    }
    CHECK(per[0] == 10);
    CHECK(per[1] == 10);
    CHECK(per[2] == 5);

    const auto again = generate_suite(k, 3, {10, 10, 5});
    CHECK(again.hash() == suite.hash());
    CHECK(suite_to_json(k, again).dump() == suite_to_json(k, suite).dump());
    CHECK(generate_suite(k, 4, {10, 10, 5}).hash() != suite.hash());
    CHECK(generate_suite(k, 3, {0, 0, 0}).tasks.empty());
    CHECK_THROWS_AS(generate_suite(k, 3, {-1, 0, 0}), ConfigError);
}

TEST_CASE("suite: an unreachable level is named in the error") {
    const auto& k = kitchen();
    auto tiny = k;
    // With grasping as the only action no plan reaches six steps.
    std::vector<GroundedAction> kept;
    for (const auto& a : tiny.actions)
        if (action_label(tiny, a).rfind("grasp", 0) == 0) kept.push_back(a);
    tiny.actions = kept;
    try {
        generate_suite(tiny, 1, {0, 0, 1});
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("hard") != std::string::npos);
    }
}

TEST_CASE("suite: JSON round trip and tamper detection") {
    const auto& k = kitchen();
    const auto suite = generate_suite(k, 8, {3, 3, 2});
    const auto path = scratch("suite.json");
    save_suite(path.string(), k, suite);
    const auto back = load_suite(path.string(), k);
    CHECK(back.hash() == suite.hash());
    CHECK(back.tasks.size() == suite.tasks.size());
    CHECK_NOTHROW(verify_suite(k, back));

    auto bad = back;
    bad.tasks[0].plan_length += 1;
    CHECK_THROWS_AS(verify_suite(k, bad), ConfigError);

    auto doc = suite_to_json(k, suite);
    doc["domain_hash"] = 1;
    CHECK_THROWS_AS(suite_from_json(k, doc), ConfigError);
    doc = suite_to_json(k, suite);
    doc.erase("tasks");
    CHECK_THROWS_AS(suite_from_json(k, doc), ParseError);
    std::filesystem::remove(path);
}

TEST_CASE("evaluate: oracle upper bound, frozen floor, reproducibility") {
    const auto& k = kitchen();
    const auto suite = generate_suite(k, 5, {4, 4, 2});
    BuiltinCritic critic;
    BuiltinPlanner planner;
    EvalOptions opts;

    OraclePolicy oracle;
    RandomSource r1(1);
    const auto top = evaluate_policy(k, suite, oracle, critic, planner, opts, r1);
    CHECK(top.overall.completeness == 1.0);
    CHECK(top.overall.success_rate == 1.0);
    CHECK(top.overall.motion_smoothness >= 4.5);
    CHECK(top.overall.physical_fidelity >= 4.5);
    REQUIRE(top.overall.object_interaction.has_value());
    CHECK(*top.overall.object_interaction >= 4.5);
    CHECK(top.overall.tasks == 10);
    CHECK(top.by_level[0].tasks == 4);
    CHECK(top.by_level[2].tasks == 2);
    CHECK(top.task_completeness.size() == 10);

    FrozenPolicy frozen;
    RandomSource r2(1);
    const auto low = evaluate_policy(k, suite, frozen, critic, planner, opts, r2);
    CHECK(low.overall.completeness <= 0.05);
    CHECK(low.overall.success_rate == 0.0);
    for (std::size_t i = 0; i < suite.tasks.size(); ++i) CHECK(low.task_completeness[i] <= top.task_completeness[i]);

    RandomSource r3(1);
    const auto again = evaluate_policy(k, suite, oracle, critic, planner, opts, r3);
    CHECK(report_to_json(again).dump() == report_to_json(top).dump());

    const auto back = metric_report_from_json(report_to_json(top));
    CHECK(report_to_json(back).dump() == report_to_json(top).dump());

    PromptSuite empty = suite;
    empty.tasks.clear();
    CHECK_THROWS_AS(evaluate_policy(k, empty, oracle, critic, planner, opts, r3), ConfigError);
}

TEST_CASE("scale mapping") {
    CHECK(to_scale(0.0) == 1.0);
    CHECK(to_scale(1.0) == 5.0);
    CHECK(to_scale(0.5) == 3.0);
    CHECK(to_scale(2.0) == 5.0);
}

TEST_CASE("compare: deltas, ordering, suite mismatch") {
    MetricReport a, b, c;
    a.policy = "open-loop";
    a.suite_hash = b.suite_hash = c.suite_hash = 7;
    a.overall.completeness = 0.4;
    a.overall.object_interaction = 3.0;
    b.policy = "inner-only";
    b.overall.completeness = 0.6;
    b.overall.object_interaction = 3.5;
    c.policy = "full";
    c.overall.completeness = 0.9;

    const auto single = compare({a});
    CHECK(single.header.size() == 6);
    CHECK(single.rows.size() == 1);

    const auto t = compare({a, b, c});
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[0][0] == "open-loop");
    CHECK(t.rows[1][0] == "inner-only");
    CHECK(t.rows[2][0] == "full");
    CHECK(t.rows[0][2].empty());
    CHECK(t.rows[1][2] == "+0.200");
    CHECK(t.rows[2][2] == "+0.500");
    CHECK(t.rows[2][7] == "n/a");
    CHECK(t.to_csv().rfind("policy,completeness,d_completeness", 0) == 0);
    CHECK(t.to_text().find("inner-only") != std::string::npos);

    const auto same = compare({a, a});
    for (std::size_t c2 = 2; c2 < same.header.size(); c2 += 2) CHECK(same.rows[1][c2] == "+0.000");

    c.suite_hash = 8;
    CHECK_THROWS_AS(compare({a, c}), ConfigError);
    CHECK_THROWS_AS(compare({}), ConfigError);
}

TEST_CASE("curves: single point marker, polyline per metric, byte-identical re-emission") {
    const auto one = scratch("one");
    emit_curves(fake_log(1), one.string());
    const auto svg1 = slurp(one / "mean_reward.svg");
    CHECK(svg1.find("<circle") != std::string::npos);
    CHECK(svg1.find("<polyline") == std::string::npos);

    const auto dir = scratch("many");
    const auto files = emit_curves(fake_log(300), dir.string());
    CHECK(files.size() == 1 + 2 * 9);
    for (const char* metric : {"mean_reward", "adherence_mean", "coherence_mean", "kl_mean", "clip_fraction",
                               "curriculum_level"}) {
        const auto svg = slurp(dir / (std::string(metric) + ".svg"));
        std::smatch m;
        const std::regex poly("<polyline[^>]*points=\"([^\"]*)\"");
        REQUIRE(std::regex_search(svg, m, poly));
        CHECK(std::distance(std::sregex_iterator(svg.begin(), svg.end(), poly), std::sregex_iterator()) == 1);
        std::istringstream pts(m[1].str());
        std::string pt;
        double prev = -1.0;
        int count = 0;
        while (pts >> pt) {
            const double x = std::stod(pt.substr(0, pt.find(',')));
            CHECK(x > prev);
            prev = x;
            ++count;
        }
        CHECK(count == 300);
        std::ifstream csv(dir / (std::string(metric) + ".csv"));
        std::string header;
        std::getline(csv, header);
        CHECK(header == std::string("iteration,") + metric);
    }
    const auto first = slurp(dir / "mean_reward.svg");
    const auto table = slurp(dir / "training_log.csv");
    emit_curves(fake_log(300), dir.string());
    CHECK(slurp(dir / "mean_reward.svg") == first);
    CHECK(slurp(dir / "training_log.csv") == table);

    CHECK_THROWS_AS(emit_curves(TrainingLog{}, dir.string()), ConfigError);
    CHECK_THROWS_AS(emit_curves(fake_log(3), "/proc/actloop_cannot_write_here"), ConfigError);
    std::filesystem::remove_all(one);
    std::filesystem::remove_all(dir);
}
