#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "actloop/grpo.hpp"
#include "actloop/loop.hpp"
#include "json.hpp"

namespace actloop {

enum class Difficulty { simple, medium, hard };
inline constexpr std::array<Difficulty, 3> kDifficulties = {Difficulty::simple, Difficulty::medium, Difficulty::hard};
std::string to_string(Difficulty d);
Difficulty difficulty_from_string(const std::string& name);

// Inclusive plan-length band of a level. Hard tasks are capped at `hard_max` steps.
struct LengthBand {
    int lo = 1, hi = 3;
};
LengthBand difficulty_band(Difficulty d, int hard_max = 12);

struct SuiteTask {
    Goal goal;
    SymbolicState initial;
    Difficulty difficulty = Difficulty::simple;
    int plan_length = 0;  // minimal plan length found by the breadth-first planner
};

struct SuiteCounts {
    int simple = 20, medium = 20, hard = 10;
    int of(Difficulty d) const;
};

struct PromptSuite {
    std::string domain;
    std::uint64_t domain_hash = 0;
    std::uint64_t seed = 0;
    SuiteCounts counts;
    std::vector<SuiteTask> tasks;

    std::uint64_t hash() const;  // content hash of the serialized tasks
};

PromptSuite generate_suite(const DomainSpec& spec, std::uint64_t seed, const SuiteCounts& counts = {},
                           int hard_max = 12);
// Re-derives every task's minimal plan length and checks it against its band; throws ConfigError on a mismatch.
void verify_suite(const DomainSpec& spec, const PromptSuite& suite, int hard_max = 12);

nlohmann::json suite_to_json(const DomainSpec& spec, const PromptSuite& suite);
PromptSuite suite_from_json(const DomainSpec& spec, const nlohmann::json& doc);
void save_suite(const std::string& path, const DomainSpec& spec, const PromptSuite& suite);
PromptSuite load_suite(const std::string& path, const DomainSpec& spec);

// 1 + 4 * score.
double to_scale(double score01);

struct MetricBlock {
    int tasks = 0;
    int segments = 0;
    double completeness = 0.0;      // mean over tasks
    double success_rate = 0.0;
    double motion_smoothness = 1.0;  // 1..5
    std::optional<double> object_interaction;  // 1..5, empty when no segment had an interacting actor
    double physical_fidelity = 1.0;  // 1..5
};

struct MetricReport {
    std::string policy;
    std::uint64_t suite_hash = 0;
    MetricBlock overall;
    std::array<MetricBlock, 3> by_level;  // indexed like kDifficulties
    std::vector<double> task_completeness;
};

struct EvalOptions {
    LoopConfig loop;
    std::string log_path;  // optional JSONL episode log
};

// One episode per task with the built-in planner. Task i draws from its own stream of `rng`.
MetricReport evaluate_policy(const DomainSpec& spec, const PromptSuite& suite, SegmentPolicy& policy,
                             CriticAgent& critic, PlanAgent& planner, const EvalOptions& options, RandomSource& rng);

nlohmann::json report_to_json(const MetricReport& report);
MetricReport metric_report_from_json(const nlohmann::json& doc);

struct ComparisonTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string to_text() const;
    std::string to_csv() const;
};

// Rows in the given order, with deltas against the first entry. Throws ConfigError on a suite mismatch.
ComparisonTable compare(const std::vector<MetricReport>& reports);

// Per tracked metric: <dir>/<metric>.csv and <dir>/<metric>.svg, plus <dir>/training_log.csv.
std::vector<std::string> emit_curves(const TrainingLog& log, const std::string& dir);
// SVG line chart of one series; a single point renders as a marker without a line.
std::string render_svg(const std::string& title, const std::vector<double>& x, const std::vector<double>& y);

}  // namespace actloop
