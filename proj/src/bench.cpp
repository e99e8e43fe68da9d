#include "actloop/bench.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "actloop/error.hpp"

namespace actloop {

std::string to_string(Difficulty d) {
    switch (d) {
        case Difficulty::simple: return "simple";
        case Difficulty::medium: return "medium";
        case Difficulty::hard: return "hard";
    }
    return "simple";
}

Difficulty difficulty_from_string(const std::string& name) {
    if (name == "simple") return Difficulty::simple;
    if (name == "medium") return Difficulty::medium;
    if (name == "hard") return Difficulty::hard;
    throw ParseError("unknown difficulty '" + name + "'");
}

LengthBand difficulty_band(Difficulty d, int hard_max) {
    switch (d) {
        case Difficulty::simple: return {1, 3};
        case Difficulty::medium: return {3, 5};
        case Difficulty::hard: return {6, hard_max};
    }
    return {1, 3};
}

int SuiteCounts::of(Difficulty d) const {
    switch (d) {
        case Difficulty::simple: return simple;
        case Difficulty::medium: return medium;
        case Difficulty::hard: return hard;
    }
    return 0;
}

namespace {

std::uint64_t combine(std::uint64_t h, std::uint64_t v) { return mix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6))); }

int level_index(Difficulty d) { return static_cast<int>(d); }

}  // namespace

std::uint64_t PromptSuite::hash() const {
    std::uint64_t h = combine(0, domain_hash);
    for (const auto& t : tasks) {
        h = combine(h, static_cast<std::uint64_t>(level_index(t.difficulty)));
        h = combine(h, static_cast<std::uint64_t>(t.plan_length));
        for (const auto& lit : t.goal.target) h = combine(h, static_cast<std::uint64_t>(lit.predicate * 2 + lit.positive));
        for (auto v : t.initial.truth) h = combine(h, v);
        for (double p : t.initial.poses) h = combine(h, std::bit_cast<std::uint64_t>(p));
    }
    return combine(h, tasks.size());
}

PromptSuite generate_suite(const DomainSpec& spec, std::uint64_t seed, const SuiteCounts& counts, int hard_max) {
    if (counts.simple < 0 || counts.medium < 0 || counts.hard < 0) throw ConfigError("suite counts must be >= 0");
    if (hard_max < 6) throw ConfigError("hard_max must be at least 6");
    PromptSuite suite;
    suite.domain = spec.name;
    suite.domain_hash = spec.content_hash;
    suite.seed = seed;
    suite.counts = counts;
    for (auto level : kDifficulties) {
        const int n = counts.of(level);
        if (n == 0) continue;
        const auto band = difficulty_band(level, hard_max);
        RandomSource rng(seed, static_cast<std::uint64_t>(level_index(level)) + 1);
        std::set<std::vector<Literal>> seen;
        int produced = 0, draws = 0;
        while (produced < n) {
            Goal g;
            try {
                g = sample_goal(spec, rng, band.lo, band.hi, spec.initial, 2000);
            } catch (const NoPlanError&) {
                throw ConfigError("domain '" + spec.name + "' cannot produce " + to_string(level) + " tasks (plans of " +
                                  std::to_string(band.lo) + ".." + std::to_string(band.hi) + " steps)");
            }
            ++draws;
            // Prefer distinct goals; repeats are admitted once the domain looks exhausted.
            if (seen.count(g.target) && draws < 50 * n) continue;
            seen.insert(g.target);
            SuiteTask t;
            t.goal = g;
            t.initial = spec.initial;
            t.difficulty = level;
            t.plan_length = static_cast<int>(plan(spec, g, spec.initial).steps.size());
            suite.tasks.push_back(std::move(t));
            ++produced;
        }
    }
    verify_suite(spec, suite, hard_max);
    return suite;
}

void verify_suite(const DomainSpec& spec, const PromptSuite& suite, int hard_max) {
    for (std::size_t i = 0; i < suite.tasks.size(); ++i) {
        const auto& t = suite.tasks[i];
        const int len = static_cast<int>(plan(spec, t.goal, t.initial).steps.size());
        const auto band = difficulty_band(t.difficulty, hard_max);
        if (len != t.plan_length || len < band.lo || len > band.hi)
            throw ConfigError("suite task " + std::to_string(i) + " ('" + t.goal.description + "') has a minimal plan of " +
                              std::to_string(len) + " steps, outside the " + to_string(t.difficulty) + " band");
    }
}

nlohmann::json suite_to_json(const DomainSpec& spec, const PromptSuite& suite) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : suite.tasks) {
        nlohmann::json goal = nlohmann::json::array();
        for (const auto& lit : t.goal.target) goal.push_back(literal_to_string(spec, lit));
        nlohmann::json holds = nlohmann::json::array();
        for (std::size_t p = 0; p < t.initial.truth.size(); ++p)
            if (t.initial.truth[p]) holds.push_back(literal_to_string(spec, {static_cast<int>(p), true}));
        tasks.push_back({{"goal", goal},
                         {"description", t.goal.description},
                         {"difficulty", to_string(t.difficulty)},
                         {"plan_length", t.plan_length},
                         {"initial", {{"holds", holds}, {"poses", t.initial.poses}}}});
    }
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(suite.hash()));
    return {{"domain", suite.domain},
            {"domain_hash", suite.domain_hash},
            {"seed", suite.seed},
            {"counts", {{"simple", suite.counts.simple}, {"medium", suite.counts.medium}, {"hard", suite.counts.hard}}},
            {"suite_hash", hash},
            {"tasks", tasks}};
}

PromptSuite suite_from_json(const DomainSpec& spec, const nlohmann::json& doc) {
    try {
        PromptSuite s;
        s.domain = doc.at("domain").get<std::string>();
        s.domain_hash = doc.at("domain_hash").get<std::uint64_t>();
        if (s.domain_hash != spec.content_hash)
            throw ConfigError("suite was generated for a different version of domain '" + s.domain + "'");
        s.seed = doc.at("seed").get<std::uint64_t>();
        const auto& c = doc.at("counts");
        s.counts = {c.at("simple").get<int>(), c.at("medium").get<int>(), c.at("hard").get<int>()};
        for (const auto& jt : doc.at("tasks")) {
            SuiteTask t;
            t.goal.target = parse_literals(spec, jt.at("goal").get<std::vector<std::string>>());
            t.goal.description = jt.value("description", goal_to_string(spec, t.goal));
            t.difficulty = difficulty_from_string(jt.at("difficulty").get<std::string>());
            t.plan_length = jt.at("plan_length").get<int>();
            t.initial.truth.assign(spec.predicates.size(), 0);
            for (const auto& name : jt.at("initial").at("holds")) {
                const auto lit = parse_literal(spec, name.get<std::string>());
                t.initial.truth[lit.predicate] = lit.positive ? 1 : 0;
            }
            t.initial.poses = jt.at("initial").at("poses").get<std::vector<double>>();
            if (t.initial.poses.size() != spec.initial.poses.size())
                throw ParseError("suite task has the wrong number of pose values");
            s.tasks.push_back(std::move(t));
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed suite: ") + e.what());
    }
}

void save_suite(const std::string& path, const DomainSpec& spec, const PromptSuite& suite) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << suite_to_json(spec, suite).dump(2) << '\n';
}

PromptSuite load_suite(const std::string& path, const DomainSpec& spec) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return suite_from_json(spec, doc);
}

double to_scale(double score01) { return 1.0 + 4.0 * std::clamp(score01, 0.0, 1.0); }

namespace {

struct Accumulator {
    int tasks = 0, successes = 0, segments = 0, interacting = 0, transitions = 0;
    double completeness = 0.0, coherence = 0.0, continuity = 0.0, interaction = 0.0, realism = 0.0;

    void add(const Accumulator& o) {
        tasks += o.tasks;
        successes += o.successes;
        segments += o.segments;
        interacting += o.interacting;
        transitions += o.transitions;
        completeness += o.completeness;
        coherence += o.coherence;
        continuity += o.continuity;
        interaction += o.interaction;
        realism += o.realism;
    }

    MetricBlock block() const {
        MetricBlock b;
        b.tasks = tasks;
        b.segments = segments;
        if (tasks > 0) {
            b.completeness = completeness / tasks;
            b.success_rate = static_cast<double>(successes) / tasks;
        }
        const double cont = transitions > 0 ? continuity / transitions : 1.0;
        if (segments > 0) {
            b.motion_smoothness = to_scale(coherence / segments * cont);
            b.physical_fidelity = to_scale(realism / segments);
        }
        if (interacting > 0) b.object_interaction = to_scale(interaction / interacting);
        return b;
    }
};

// 1 when consecutive committed segments join within one permissible frame step, falling to 0 at two more.
double boundary_continuity(std::span<const double> prev, std::span<const double> next, const CriticConfig& cfg) {
    double jump = 0.0;
    for (std::size_t i = 0; i < prev.size(); ++i) jump = std::max(jump, std::abs(next[i] - prev[i]));
    return 1.0 - std::clamp((jump - cfg.max_delta) / (2.0 * cfg.max_delta), 0.0, 1.0);
}

}  // namespace

MetricReport evaluate_policy(const DomainSpec& spec, const PromptSuite& suite, SegmentPolicy& policy,
                             CriticAgent& critic, PlanAgent& planner, const EvalOptions& options, RandomSource& rng) {
    if (suite.tasks.empty()) throw ConfigError("evaluate_policy: empty suite");
    options.loop.validate();
    MetricReport report;
    report.policy = policy.name();
    report.suite_hash = suite.hash();
    const CriticConfig ccfg;
    const std::uint64_t base = rng.next_u64();
    std::array<Accumulator, 3> levels{};
    for (std::size_t i = 0; i < suite.tasks.size(); ++i) {
        const auto& task = suite.tasks[i];
        RandomSource task_rng(base, i);
        const auto log = run_episode(spec, task.goal, planner, policy, critic, options.loop, task_rng, &task.initial);
        if (!options.log_path.empty()) append_episode_log(options.log_path, spec, log);

        Accumulator a;
        a.tasks = 1;
        a.successes = log.status == EpisodeStatus::success;
        a.completeness = log.completeness();
        report.task_completeness.push_back(a.completeness);
        for (const auto& att : log.attempts) {
            ++a.segments;
            a.coherence += att.report.scores[Dimension::coherence];
            a.realism += att.report.scores[Dimension::realism];
            if (att.report.interaction_applicable) {
                ++a.interacting;
                a.interaction += att.report.scores[Dimension::interaction];
            }
        }
        auto prev = encode_state(spec, task.initial);
        for (const auto& tr : log.memory.transitions) {
            a.continuity += boundary_continuity(prev, tr.segment.row(0), ccfg);
            ++a.transitions;
            const auto last = tr.segment.row(tr.segment.frames - 1);
            prev.assign(last.begin(), last.end());
        }
        levels[level_index(task.difficulty)].add(a);
    }
    Accumulator all;
    for (std::size_t l = 0; l < levels.size(); ++l) {
        all.add(levels[l]);
        report.by_level[l] = levels[l].block();
    }
    report.overall = all.block();
    return report;
}

namespace {

nlohmann::json block_to_json(const MetricBlock& b) {
    nlohmann::json j = {{"tasks", b.tasks},
                        {"segments", b.segments},
                        {"action_completeness", b.completeness},
                        {"success_rate", b.success_rate},
                        {"motion_smoothness", b.motion_smoothness},
                        {"physical_fidelity", b.physical_fidelity}};
    j["object_interaction"] = b.object_interaction ? nlohmann::json(*b.object_interaction) : nlohmann::json("n/a");
    return j;
}

MetricBlock block_from_json(const nlohmann::json& j) {
    MetricBlock b;
    b.tasks = j.at("tasks").get<int>();
    b.segments = j.at("segments").get<int>();
    b.completeness = j.at("action_completeness").get<double>();
    b.success_rate = j.at("success_rate").get<double>();
    b.motion_smoothness = j.at("motion_smoothness").get<double>();
    b.physical_fidelity = j.at("physical_fidelity").get<double>();
    const auto& oi = j.at("object_interaction");
    if (oi.is_number()) b.object_interaction = oi.get<double>();
    return b;
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string fixed(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string signed_fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%+.3f", v);
    return buf;
}

}  // namespace

nlohmann::json report_to_json(const MetricReport& report) {
    nlohmann::json levels = nlohmann::json::object();
    for (auto d : kDifficulties) levels[to_string(d)] = block_to_json(report.by_level[level_index(d)]);
    return {{"policy", report.policy},
            {"suite_hash", hex(report.suite_hash)},
            {"overall", block_to_json(report.overall)},
            {"by_level", levels},
            {"task_completeness", report.task_completeness}};
}

MetricReport metric_report_from_json(const nlohmann::json& doc) {
    try {
        MetricReport r;
        r.policy = doc.at("policy").get<std::string>();
        r.suite_hash = std::stoull(doc.at("suite_hash").get<std::string>(), nullptr, 16);
        r.overall = block_from_json(doc.at("overall"));
        for (auto d : kDifficulties) r.by_level[level_index(d)] = block_from_json(doc.at("by_level").at(to_string(d)));
        r.task_completeness = doc.at("task_completeness").get<std::vector<double>>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed metric report: ") + e.what());
    } catch (const std::invalid_argument&) {
        throw ParseError("malformed metric report: bad suite_hash");
    }
}

ComparisonTable compare(const std::vector<MetricReport>& reports) {
    if (reports.empty()) throw ConfigError("compare: no reports");
    for (const auto& r : reports)
        if (r.suite_hash != reports.front().suite_hash)
            throw ConfigError("compare: report '" + r.policy + "' was evaluated on a different suite");

    ComparisonTable t;
    t.header = {"policy", "completeness", "success", "smoothness", "interaction", "fidelity"};
    const bool deltas = reports.size() > 1;
    if (deltas) t.header = {"policy",     "completeness", "d_completeness", "success",  "d_success", "smoothness",
                            "d_smoothness", "interaction", "d_interaction",  "fidelity", "d_fidelity"};
    const auto& base = reports.front().overall;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& o = reports[i].overall;
        std::vector<std::string> row{reports[i].policy};
        auto cell = [&](double v, double b) {
            row.push_back(fixed(v));
            if (deltas) row.push_back(i == 0 ? "" : signed_fixed(v - b));
        };
        cell(o.completeness, base.completeness);
        cell(o.success_rate, base.success_rate);
        cell(o.motion_smoothness, base.motion_smoothness);
        if (o.object_interaction) {
            cell(*o.object_interaction, base.object_interaction.value_or(*o.object_interaction));
            if (deltas && i > 0 && !base.object_interaction) row.back() = "";
        } else {
            row.push_back("n/a");
            if (deltas) row.push_back("");
        }
        cell(o.physical_fidelity, base.physical_fidelity);
        t.rows.push_back(std::move(row));
    }
    return t;
}

std::string ComparisonTable::to_text() const {
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        width[c] = header[c].size();
        for (const auto& r : rows) width[c] = std::max(width[c], r[c].size());
    }
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c) out << "  ";
            if (c == 0)
                out << cells[c] << std::string(width[c] - cells[c].size(), ' ');
            else
                out << std::string(width[c] - cells[c].size(), ' ') << cells[c];
        }
        out << '\n';
    };
    line(header);
    std::size_t total = 0;
    for (auto w : width) total += w;
    out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    for (const auto& r : rows) line(r);
    return out.str();
}

std::string ComparisonTable::to_csv() const {
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c) out << ',';
            const bool quote = cells[c].find_first_of(",\"") != std::string::npos;
            if (!quote) {
                out << cells[c];
                continue;
            }
            out << '"';
            for (char ch : cells[c]) out << (ch == '"' ? "\"\"" : std::string(1, ch));
            out << '"';
        }
        out << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out.str();
}

std::string render_svg(const std::string& title, const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.empty()) throw ConfigError("render_svg: need matching, non-empty series");
    const double W = 640, H = 360, left = 60, right = 20, top = 40, bottom = 40;
    double x0 = *std::min_element(x.begin(), x.end()), x1 = *std::max_element(x.begin(), x.end());
    double y0 = *std::min_element(y.begin(), y.end()), y1 = *std::max_element(y.begin(), y.end());
    if (x1 == x0) x1 = x0 + 1.0, x0 -= 1.0;
    if (y1 == y0) y1 = y0 + 0.5, y0 -= 0.5;
    auto px = [&](double v) { return left + (v - x0) / (x1 - x0) * (W - left - right); };
    auto py = [&](double v) { return H - bottom - (v - y0) / (y1 - y0) * (H - top - bottom); };
    char buf[1024];
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"360\" viewBox=\"0 0 640 360\">\n";
    out << "<rect width=\"640\" height=\"360\" fill=\"white\"/>\n";
    out << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" << title
        << "</text>\n";
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n"
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n",
                  left, H - bottom, W - right, H - bottom, left, top, left, H - bottom);
    out << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">%.4g</text>\n"
                  "<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">%.4g</text>\n"
                  "<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"10\">%.6g</text>\n"
                  "<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">%.6g</text>\n",
                  left - 4, py(y1) + 4, y1, left - 4, py(y0) + 4, y0, left, H - bottom + 16, x0, W - right,
                  H - bottom + 16, x1);
    out << buf;
    if (x.size() == 1) {
        std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"steelblue\"/>\n", px(x[0]),
                      py(y[0]));
        out << buf;
    } else {
        out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < x.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", px(x[i]), py(y[i]));
            out << buf;
        }
        out << "\"/>\n";
    }
    out << "</svg>\n";
    return out.str();
}

std::vector<std::string> emit_curves(const TrainingLog& log, const std::string& dir) {
    if (log.records.empty()) throw ConfigError("emit_curves: empty training log");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create " + dir + ": " + ec.message());

    struct Series {
        const char* name;
        double (*get)(const TrainingRecord&);
    };
    static const Series series[] = {
        {"mean_reward", [](const TrainingRecord& r) { return r.mean_reward; }},
        {"adherence_mean", [](const TrainingRecord& r) { return r.dims[Dimension::adherence]; }},
        {"interaction_mean", [](const TrainingRecord& r) { return r.dims[Dimension::interaction]; }},
        {"goal_mean", [](const TrainingRecord& r) { return r.dims[Dimension::goal]; }},
        {"coherence_mean", [](const TrainingRecord& r) { return r.dims[Dimension::coherence]; }},
        {"realism_mean", [](const TrainingRecord& r) { return r.dims[Dimension::realism]; }},
        {"kl_mean", [](const TrainingRecord& r) { return r.kl_mean; }},
        {"clip_fraction", [](const TrainingRecord& r) { return r.clip_fraction; }},
        {"curriculum_level", [](const TrainingRecord& r) { return static_cast<double>(r.level); }},
    };

    std::vector<std::string> written;
    const auto base = std::filesystem::path(dir);
    const auto table = (base / "training_log.csv").string();
    write_training_csv(table, log);
    written.push_back(table);

    std::vector<double> x;
    for (const auto& r : log.records) x.push_back(r.iteration);
    for (const auto& s : series) {
        std::vector<double> y;
        for (const auto& r : log.records) y.push_back(s.get(r));
        const auto csv = (base / (std::string(s.name) + ".csv")).string();
        std::ofstream c(csv);
        if (!c) throw ConfigError("cannot write " + csv);
        c << "iteration," << s.name << '\n';
        char buf[64];
        for (std::size_t i = 0; i < x.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%d,%.10g\n", static_cast<int>(x[i]), y[i]);
            c << buf;
        }
        const auto svg = (base / (std::string(s.name) + ".svg")).string();
        std::ofstream v(svg);
        if (!v) throw ConfigError("cannot write " + svg);
        v << render_svg(s.name, x, y);
        written.push_back(csv);
        written.push_back(svg);
    }
    return written;
}

}  // namespace actloop
