#include "actloop/planner.hpp"

#include <algorithm>
#include <cstdint>
#include <deque>
#include <sstream>
#include <unordered_map>

#include "actloop/error.hpp"

namespace actloop {

using nlohmann::json;

namespace {

struct Masks {
    std::uint64_t pos = 0, neg = 0;
    bool satisfied(std::uint64_t s) const { return (s & pos) == pos && (s & neg) == 0; }
};

Masks masks_of(const std::vector<Literal>& lits) {
    Masks m;
    for (const auto& l : lits) (l.positive ? m.pos : m.neg) |= std::uint64_t{1} << l.predicate;
    return m;
}

std::uint64_t bits_of(const SymbolicState& s) {
    std::uint64_t b = 0;
    for (std::size_t i = 0; i < s.truth.size(); ++i)
        if (s.truth[i]) b |= std::uint64_t{1} << i;
    return b;
}

struct CompiledAction {
    Masks pre;
    std::uint64_t set = 0, clear = 0;
};

std::vector<CompiledAction> compile(const DomainSpec& spec) {
    if (spec.predicates.size() > 64) throw ConfigError("planner supports at most 64 predicates");
    std::vector<CompiledAction> out;
    out.reserve(spec.actions.size());
    for (const auto& a : spec.actions) {
        CompiledAction c;
        c.pre = masks_of(a.pre);
        const Masks post = masks_of(a.post);
        c.set = post.pos;
        c.clear = post.neg;
        out.push_back(c);
    }
    return out;
}

void check_goal(const DomainSpec& spec, const Goal& goal) {
    for (const auto& l : goal.target)
        if (l.predicate < 0 || static_cast<std::size_t>(l.predicate) >= spec.predicates.size())
            throw ConfigError("goal literal outside domain '" + spec.name + "'");
}

// Breadth-first search; returns action indices. `banned_first` excludes one action at the root.
std::vector<int> bfs(const DomainSpec& spec, const Goal& goal, const SymbolicState& initial, std::size_t budget,
                     int banned_first) {
    check_goal(spec, goal);
    const auto actions = compile(spec);
    const Masks target = masks_of(goal.target);
    const std::uint64_t start = bits_of(initial);
    if (target.satisfied(start)) return {};

    struct Node {
        std::uint64_t state;
        int parent;
        int action;
    };
    std::vector<Node> nodes{{start, -1, -1}};
    std::unordered_map<std::uint64_t, int> visited{{start, 0}};
    std::deque<int> frontier{0};
    std::size_t expanded = 0;

    auto unwind = [&](int idx) {
        std::vector<int> path;
        for (; nodes[idx].parent >= 0; idx = nodes[idx].parent) path.push_back(nodes[idx].action);
        std::reverse(path.begin(), path.end());
        return path;
    };

    while (!frontier.empty()) {
        const int cur = frontier.front();
        frontier.pop_front();
        if (++expanded > budget)
            throw NoPlanError("no plan: search budget of " + std::to_string(budget) + " nodes exhausted");
        const std::uint64_t s = nodes[cur].state;
        for (std::size_t ai = 0; ai < actions.size(); ++ai) {
            if (cur == 0 && static_cast<int>(ai) == banned_first) continue;
            const auto& a = actions[ai];
            if (!a.pre.satisfied(s)) continue;
            const std::uint64_t next = (s | a.set) & ~a.clear;
            if (visited.count(next)) continue;
            nodes.push_back({next, cur, static_cast<int>(ai)});
            const int idx = static_cast<int>(nodes.size()) - 1;
            visited.emplace(next, idx);
            if (target.satisfied(next)) return unwind(idx);
            frontier.push_back(idx);
        }
    }
    throw NoPlanError("no plan: goal " + goal_to_string(spec, goal) + " is unreachable");
}

PlanSequence steps_from(const DomainSpec& spec, const std::vector<int>& path, int first_sid) {
    PlanSequence p;
    for (std::size_t i = 0; i < path.size(); ++i) p.steps.push_back(make_step(spec, first_sid + static_cast<int>(i), path[i]));
    return p;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> parts;
    std::string cur;
    std::string s = text;
    for (std::size_t pos; (pos = s.find(" and ")) != std::string::npos;) s.replace(pos, 5, ",");
    std::stringstream ss(s);
    while (std::getline(ss, cur, ',')) {
        cur = trim(cur);
        if (!cur.empty()) parts.push_back(cur);
    }
    return parts;
}

int resolve_step_action(const DomainSpec& spec, const PlanStep& step) {
    if (step.action >= 0) return step.action;
    if (step.actions.empty()) return -1;
    const auto& a = step.actions.front();
    const auto idx = find_action(spec, a.verb, a.objects, a.tool);
    return idx ? *idx : -1;
}

std::size_t word_count(const std::string& s) {
    std::stringstream ss(s);
    std::string w;
    std::size_t n = 0;
    while (ss >> w) ++n;
    return n;
}

}  // namespace

Goal parse_goal(const DomainSpec& spec, const std::string& text) {
    Goal g;
    for (const auto& part : split_list(text)) g.target.push_back(parse_literal(spec, part));
    if (g.target.empty()) throw ConfigError("goal has no literals");
    g.description = "make " + goal_to_string(spec, g) + " hold";
    return g;
}

std::string goal_to_string(const DomainSpec& spec, const Goal& goal) {
    std::string s;
    for (std::size_t i = 0; i < goal.target.size(); ++i) {
        if (i) s += ", ";
        s += literal_to_string(spec, goal.target[i]);
    }
    return s;
}

PlanStep make_step(const DomainSpec& spec, int sid, int action_index) {
    const auto& a = spec.actions.at(action_index);
    PlanStep step;
    step.sid = sid;
    step.instruction = render_instruction(spec, a);
    ActionRef ref{a.verb, object_names(spec, a.objects), std::nullopt};
    if (a.tool) ref.tool = spec.objects[*a.tool].name;
    step.actions.push_back(ref);
    step.pre = a.pre;
    step.post = a.post;
    step.action = action_index;
    return step;
}

PlanSequence plan(const DomainSpec& spec, const Goal& goal, const SymbolicState& initial, const PlannerConfig& config) {
    return steps_from(spec, bfs(spec, goal, initial, config.node_budget, -1), 1);
}

Goal sample_goal(const DomainSpec& spec, RandomSource& rng, int min_len, int max_len, const SymbolicState& from,
                 int tries) {
    if (min_len < 1 || max_len < min_len) throw ConfigError("sample_goal needs 1 <= min_len <= max_len");
    for (int attempt = 0; attempt < tries; ++attempt) {
        SymbolicState s = from;
        const int walk = min_len + static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * max_len)));
        for (int i = 0; i < walk; ++i) {
            std::vector<int> legal;
            for (std::size_t a = 0; a < spec.actions.size(); ++a)
                if (holds_all(s, spec.actions[a].pre)) legal.push_back(static_cast<int>(a));
            if (legal.empty()) break;
            s = apply_operator(spec, s, legal[rng.below(legal.size())]);
        }
        std::vector<Literal> changed;
        for (std::size_t p = 0; p < spec.predicates.size(); ++p)
            if (s.truth[p] != from.truth[p]) changed.push_back({static_cast<int>(p), s.truth[p] != 0});
        if (changed.empty()) continue;
        rng.shuffle(changed.begin(), changed.end());
        changed.resize(1 + rng.below(std::min<std::size_t>(3, changed.size())));
        std::sort(changed.begin(), changed.end());
        Goal g{"", changed};
        g.description = goal_to_string(spec, g);
        const auto p = plan(spec, g, from);
        const int len = static_cast<int>(p.steps.size());
        if (len >= min_len && len <= max_len) return g;
    }
    throw NoPlanError("no goal with a plan of " + std::to_string(min_len) + ".." + std::to_string(max_len) +
                      " steps found in " + std::to_string(tries) + " draws");
}

SymbolicState corrected_belief(const DomainSpec& spec, const std::vector<std::string>& tags,
                               const SymbolicState& state) {
    SymbolicState belief = state;
    const std::string key = "precondition-missing:";
    for (const auto& tag : tags) {
        if (tag.rfind(key, 0) != 0) continue;
        std::string body = trim(tag.substr(key.size()));
        std::string observed;
        for (const char* sep : {" but ", "; observed:"}) {
            const auto pos = body.find(sep);
            if (pos != std::string::npos) {
                observed = body.substr(pos + std::string(sep).size());
                body = trim(body.substr(0, pos));
                break;
            }
        }
        // The literal the plan assumed; it turned out not to hold.
        Literal assumed = parse_literal(spec, body);
        assumed.positive = !assumed.positive;
        set_literal(belief, assumed);
        for (auto part : split_list(observed)) {
            for (std::size_t pos; (pos = part.find("already ")) != std::string::npos;) part.erase(pos, 8);
            set_literal(belief, parse_literal(spec, trim(part)));
        }
    }
    return belief;
}

PlanSequence replan(const DomainSpec& spec, const Goal& goal, const FailureContext& failure,
                    const SymbolicState& memory_state, const PlannerConfig& config) {
    const int first_sid = failure.failed.sid > 0 ? failure.failed.sid : 1;
    const SymbolicState belief = corrected_belief(spec, failure.tags, memory_state);
    const bool retry_same = std::find(failure.tags.begin(), failure.tags.end(), "retry-same") != failure.tags.end();
    if (retry_same && !failure.remaining.steps.empty() && failure.remaining.steps.front().sid == first_sid &&
        validate_plan(spec, failure.remaining, belief, &goal).ok)
        return failure.remaining;
    const int banned = retry_same ? -1 : resolve_step_action(spec, failure.failed);
    return steps_from(spec, bfs(spec, goal, belief, config.node_budget, banned), first_sid);
}

PlanReport validate_plan(const DomainSpec& spec, const PlanSequence& plan, const SymbolicState& initial,
                         const Goal* goal) {
    SymbolicState s = initial;
    int last_sid = 0;
    for (const auto& step : plan.steps) {
        if (step.sid <= last_sid) return {false, step.sid, "", "sids must be strictly increasing"};
        last_sid = step.sid;
        const int ai = resolve_step_action(spec, step);
        if (ai < 0) return {false, step.sid, "", "step does not name a known action"};
        if (auto miss = first_unmet(s, spec.actions[ai].pre))
            return {false, step.sid, literal_to_string(spec, *miss, true), "operator precondition does not hold"};
        if (auto miss = first_unmet(s, step.pre))
            return {false, step.sid, literal_to_string(spec, *miss, true), "declared precondition does not hold"};
        s = apply_operator(spec, s, ai);
        if (auto miss = first_unmet(s, step.post))
            return {false, step.sid, literal_to_string(spec, *miss, true), "declared post-condition is not produced"};
    }
    if (goal)
        if (auto miss = first_unmet(s, goal->target))
            return {false, 0, literal_to_string(spec, *miss, true), "goal literal not reached"};
    return {};
}

std::vector<SymbolicState> plan_trace(const DomainSpec& spec, const PlanSequence& plan, const SymbolicState& initial) {
    std::vector<SymbolicState> trace{initial};
    for (const auto& step : plan.steps) {
        const int ai = resolve_step_action(spec, step);
        if (ai < 0) throw ParseError("step " + std::to_string(step.sid) + " does not name a known action");
        trace.push_back(apply_operator(spec, trace.back(), ai));
    }
    return trace;
}

std::optional<std::vector<int>> brute_force_plan(const DomainSpec& spec, const Goal& goal, const SymbolicState& initial,
                                                 int max_depth) {
    // Iterative deepening over raw operator sequences, no state deduplication.
    for (int depth = 0; depth <= max_depth; ++depth) {
        std::vector<int> seq;
        std::optional<std::vector<int>> found;
        auto dfs = [&](auto&& self, const SymbolicState& s) -> bool {
            if (static_cast<int>(seq.size()) == depth) {
                if (holds_all(s, goal.target)) {
                    found = seq;
                    return true;
                }
                return false;
            }
            for (std::size_t ai = 0; ai < spec.actions.size(); ++ai) {
                if (!holds_all(s, spec.actions[ai].pre)) continue;
                seq.push_back(static_cast<int>(ai));
                if (self(self, apply_operator(spec, s, static_cast<int>(ai)))) return true;
                seq.pop_back();
            }
            return false;
        };
        if (dfs(dfs, initial)) return found;
    }
    return std::nullopt;
}

json plan_to_json(const DomainSpec& spec, const PlanSequence& plan) {
    json steps = json::array();
    for (const auto& st : plan.steps) {
        json actions = json::array();
        for (const auto& a : st.actions) {
            json ja = {{"verb", a.verb}, {"objects", a.objects}};
            if (a.tool) ja["tool"] = *a.tool;
            actions.push_back(ja);
        }
        json pre = json::array(), post = json::array();
        for (const auto& l : st.pre) pre.push_back(literal_to_string(spec, l, true));
        for (const auto& l : st.post) post.push_back(literal_to_string(spec, l, true));
        json js = json::object();
        js["sid"] = st.sid;
        js["action instruction"] = st.instruction;
        js["actions"] = actions;
        js["pre"] = pre;
        js["post"] = post;
        steps.push_back(js);
    }
    return json{{"steps", steps}};
}

PlanSequence plan_from_json(const DomainSpec& spec, const json& doc) {
    auto bad = [](const std::string& m) -> SchemaError { return SchemaError("plan document: " + m); };
    if (!doc.is_object() || !doc.contains("steps") || !doc.at("steps").is_array()) throw bad("missing \"steps\" array");
    PlanSequence plan;
    for (const auto& js : doc.at("steps")) {
        if (!js.is_object()) throw bad("step is not an object");
        PlanStep st;
        if (!js.contains("sid") || !js.at("sid").is_number_integer()) throw bad("step without integer \"sid\"");
        st.sid = js.at("sid").get<int>();
        if (st.sid < 1) throw bad("sid must be positive");
        const char* text_key = js.contains("action instruction") ? "action instruction" : "text";
        if (!js.contains(text_key) || !js.at(text_key).is_string()) throw bad("step without instruction text");
        st.instruction = js.at(text_key).get<std::string>();
        if (word_count(st.instruction) > 36) throw bad("instruction longer than 36 words");
        if (!js.contains("actions") || !js.at("actions").is_array() || js.at("actions").empty())
            throw bad("step " + std::to_string(st.sid) + " has no actions");
        for (const auto& ja : js.at("actions")) {
            if (!ja.is_object() || !ja.contains("verb") || !ja.at("verb").is_string() || !ja.contains("objects") ||
                !ja.at("objects").is_array())
                throw bad("malformed action in step " + std::to_string(st.sid));
            ActionRef a;
            a.verb = ja.at("verb").get<std::string>();
            for (const auto& o : ja.at("objects")) {
                if (!o.is_string()) throw bad("object names must be strings");
                a.objects.push_back(o.get<std::string>());
            }
            if (ja.contains("tool") && ja.at("tool").is_string()) a.tool = ja.at("tool").get<std::string>();
            st.actions.push_back(a);
        }
        for (const char* key : {"pre", "post"}) {
            if (!js.contains(key) || !js.at(key).is_array()) throw bad(std::string("step without \"") + key + "\" list");
            auto& dst = std::string(key) == "pre" ? st.pre : st.post;
            for (const auto& l : js.at(key)) {
                if (!l.is_string()) throw bad("conditions must be strings");
                try {
                    dst.push_back(parse_literal(spec, l.get<std::string>()));
                } catch (const ParseError& e) {
                    throw bad(e.what());
                }
            }
        }
        const int ai = resolve_step_action(spec, st);
        if (ai < 0) throw bad("step " + std::to_string(st.sid) + " names an action the domain does not define");
        st.action = ai;
        if (!plan.steps.empty() && st.sid <= plan.steps.back().sid) throw bad("sids must be strictly increasing");
        plan.steps.push_back(std::move(st));
    }
    return plan;
}

PlanSequence plan_from_text(const DomainSpec& spec, const std::string& text) {
    std::string body = text;
    const auto close = body.find("</think>");
    if (close != std::string::npos) body = body.substr(close + 8);
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("plan document is not valid JSON: ") + e.what());
    }
    return plan_from_json(spec, doc);
}

std::string format_plan(const DomainSpec& spec, const PlanSequence& plan) {
    std::ostringstream os;
    if (plan.steps.empty()) os << "(empty plan: goal already holds)\n";
    for (const auto& st : plan.steps) {
        os << st.sid << ". " << st.instruction << "\n   pre:  [";
        for (std::size_t i = 0; i < st.pre.size(); ++i) os << (i ? ", " : "") << literal_to_string(spec, st.pre[i], true);
        os << "]\n   post: [";
        for (std::size_t i = 0; i < st.post.size(); ++i)
            os << (i ? ", " : "") << literal_to_string(spec, st.post[i], true);
        os << "]\n";
    }
    return os.str();
}

}  // namespace actloop
