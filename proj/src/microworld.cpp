#include "actloop/microworld.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "actloop/error.hpp"

#ifndef ACTLOOP_DATA_DIR
#define ACTLOOP_DATA_DIR "data"
#endif

namespace actloop {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void fail(const std::string& origin, const std::string& msg) {
    throw ParseError(origin + ": " + msg);
}

template <class T>
T get_field(const json& j, const char* key, const std::string& origin, const std::string& where) {
    if (!j.contains(key)) fail(origin, where + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        fail(origin, where + ": field '" + key + "' has the wrong type");
    }
}

struct Binding {
    const OperatorTemplate* op;
    std::map<std::string, int> slots;
};

// Object reference: a slot name ("?o") or an object name.
int resolve_object_ref(const DomainSpec& spec, const Binding& b, const std::string& ref, const std::string& origin) {
    if (!ref.empty() && ref[0] == '?') {
        auto it = b.slots.find(ref);
        if (it == b.slots.end()) fail(origin, "operator '" + b.op->id + "': unknown slot '" + ref + "'");
        return it->second;
    }
    const int idx = spec.object_index(ref);
    if (idx < 0) fail(origin, "operator '" + b.op->id + "': unknown object '" + ref + "'");
    return idx;
}

Literal resolve_literal(const DomainSpec& spec, const Binding& b, const std::string& text, const std::string& origin) {
    std::string t = trim(text);
    bool positive = true;
    if (t.rfind("not ", 0) == 0) {
        positive = false;
        t = trim(t.substr(4));
    } else if (!t.empty() && t[0] == '!') {
        positive = false;
        t = trim(t.substr(1));
    }
    const auto dot = t.find('.');
    if (dot != std::string::npos && t[0] == '?') {
        const int obj = resolve_object_ref(spec, b, t.substr(0, dot), origin);
        t = spec.objects[obj].name + t.substr(dot);
    }
    const int p = spec.predicate_index(t);
    if (p < 0) fail(origin, "operator '" + b.op->id + "': unknown predicate '" + t + "'");
    return {p, positive};
}

PoseTarget parse_pose_target(const DomainSpec& spec, const Binding& b, const json& to, const std::string& origin) {
    PoseTarget target;
    if (to.is_number()) {
        target.kind = PoseTarget::Kind::constant;
        target.value = to.get<double>();
        if (target.value < 0.0 || target.value > 1.0) fail(origin, "pose target outside [0,1]");
        return target;
    }
    if (!to.is_string()) fail(origin, "operator '" + b.op->id + "': pose target must be a number or a string");
    const std::string s = to.get<std::string>();
    if (s.rfind("home:", 0) == 0) {
        target.kind = PoseTarget::Kind::home;
        target.object = resolve_object_ref(spec, b, s.substr(5), origin);
    } else {
        target.kind = PoseTarget::Kind::object;
        target.object = resolve_object_ref(spec, b, s, origin);
    }
    return target;
}

void check_consistent(const DomainSpec& spec, const std::vector<Literal>& lits, const std::string& what,
                      const std::string& origin) {
    for (std::size_t i = 0; i < lits.size(); ++i)
        for (std::size_t j = i + 1; j < lits.size(); ++j)
            if (lits[i].predicate == lits[j].predicate && lits[i].positive != lits[j].positive)
                fail(origin, what + ": contradictory literals on '" + spec.predicates[lits[i].predicate].name + "'");
}

void ground_operator(DomainSpec& spec, int op_index, const json& jop, const std::string& origin) {
    const OperatorTemplate& op = spec.operators[op_index];
    std::vector<std::size_t> choice(op.slot_names.size(), 0);
    for (const auto& c : op.slot_candidates)
        if (c.empty()) fail(origin, "operator '" + op.id + "': slot without candidates");

    const json motion = jop.value("motion", json::object());
    while (true) {
        Binding b{&op, {}};
        for (std::size_t s = 0; s < choice.size(); ++s) b.slots[op.slot_names[s]] = op.slot_candidates[s][choice[s]];

        GroundedAction a;
        a.op = op_index;
        a.verb = op.verb;
        for (const auto& ref : op.object_refs) a.objects.push_back(resolve_object_ref(spec, b, ref, origin));
        if (!op.tool_ref.empty()) a.tool = resolve_object_ref(spec, b, op.tool_ref, origin);
        for (const auto& t : op.pre) a.pre.push_back(resolve_literal(spec, b, t, origin));
        for (const auto& t : op.post) a.post.push_back(resolve_literal(spec, b, t, origin));
        check_consistent(spec, a.pre, "operator '" + op.id + "' pre", origin);
        check_consistent(spec, a.post, "operator '" + op.id + "' post", origin);

        if (motion.contains("moves")) {
            for (const auto& m : motion.at("moves")) {
                PoseMove mv;
                mv.object = resolve_object_ref(spec, b, get_field<std::string>(m, "entity", origin, op.id), origin);
                if (spec.objects[mv.object].pose < 0)
                    fail(origin, "operator '" + op.id + "': object '" + spec.objects[mv.object].name +
                                     "' has no pose channel");
                if (!m.contains("to")) fail(origin, "operator '" + op.id + "': move without 'to'");
                mv.to = parse_pose_target(spec, b, m.at("to"), origin);
                a.moves.push_back(mv);
            }
        }
        if (motion.contains("actor") != motion.contains("target"))
            fail(origin, "operator '" + op.id + "': actor and target must be given together");
        if (motion.contains("actor")) {
            a.actor = resolve_object_ref(spec, b, motion.at("actor").get<std::string>(), origin);
            a.target = resolve_object_ref(spec, b, motion.at("target").get<std::string>(), origin);
            if (spec.objects[a.actor].pose < 0)
                fail(origin, "operator '" + op.id + "': actor must own a pose channel");
        }
        if (motion.contains("contact_window")) {
            const auto w = motion.at("contact_window").get<std::vector<double>>();
            if (w.size() != 2 || !(0.0 <= w[0] && w[0] <= w[1] && w[1] <= 1.0))
                fail(origin, "operator '" + op.id + "': contact_window must be [lo, hi] within [0,1]");
            a.window_lo = w[0];
            a.window_hi = w[1];
        }
        spec.actions.push_back(std::move(a));

        std::size_t s = 0;
        for (; s < choice.size(); ++s) {
            if (++choice[s] < op.slot_candidates[s].size()) break;
            choice[s] = 0;
        }
        if (s == choice.size()) break;
    }
}

std::tuple<std::string, std::vector<std::string>, std::string> action_key(const DomainSpec& spec,
                                                                         const GroundedAction& a) {
    return {a.verb, object_names(spec, a.objects), a.tool ? spec.objects[*a.tool].name : std::string()};
}

}  // namespace

int DomainSpec::object_index(std::string_view n) const {
    for (std::size_t i = 0; i < objects.size(); ++i)
        if (objects[i].name == n) return static_cast<int>(i);
    return -1;
}

int DomainSpec::predicate_index(std::string_view n) const {
    for (std::size_t i = 0; i < predicates.size(); ++i)
        if (predicates[i].name == n) return static_cast<int>(i);
    for (std::size_t i = 0; i < predicates.size(); ++i)
        if (predicates[i].phrase == n) return static_cast<int>(i);
    return -1;
}

DomainSpec parse_domain(std::string_view text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(origin, std::string("malformed document: ") + e.what());
    }
    if (!j.is_object()) fail(origin, "top level must be an object");

    DomainSpec spec;
    spec.name = get_field<std::string>(j, "name", origin, "domain");
    spec.frames = j.value("frames", 16);
    if (spec.frames < 2) fail(origin, "frames must be at least 2");
    spec.content_hash = fnv1a(j.dump());

    std::set<std::string> seen;
    for (const auto& jo : j.value("objects", json::array())) {
        ObjectInfo o;
        o.name = get_field<std::string>(jo, "name", origin, "object");
        o.home = jo.value("home", 0.5);
        if (o.home < 0.0 || o.home > 1.0) fail(origin, "object '" + o.name + "': home outside [0,1]");
        if (!seen.insert(o.name).second) fail(origin, "duplicate object '" + o.name + "'");
        spec.objects.push_back(o);
    }

    std::vector<int> pred_channels, pose_channels;
    std::set<std::string> phrases;
    for (const auto& jp : j.value("predicates", json::array())) {
        PredicateInfo p;
        p.name = get_field<std::string>(jp, "name", origin, "predicate");
        const auto dot = p.name.find('.');
        if (dot == std::string::npos || dot == 0 || dot + 1 == p.name.size())
            fail(origin, "predicate '" + p.name + "' must be written object.property");
        p.object = spec.object_index(p.name.substr(0, dot));
        if (p.object < 0) fail(origin, "predicate '" + p.name + "' refers to unknown object");
        p.phrase = jp.value("phrase", p.name.substr(0, dot) + " " + p.name.substr(dot + 1));
        if (spec.predicate_index(p.name) >= 0) fail(origin, "duplicate predicate '" + p.name + "'");
        if (!phrases.insert(p.phrase).second) fail(origin, "duplicate predicate phrase '" + p.phrase + "'");
        pred_channels.push_back(jp.contains("channel") ? jp.at("channel").get<int>() : -1);
        spec.predicates.push_back(p);
    }
    for (const auto& jp : j.value("poses", json::array())) {
        const auto name = get_field<std::string>(jp, "object", origin, "pose");
        const int obj = spec.object_index(name);
        if (obj < 0) fail(origin, "pose channel refers to unknown object '" + name + "'");
        if (spec.objects[obj].pose >= 0) fail(origin, "object '" + name + "' has two pose channels");
        spec.objects[obj].pose = static_cast<int>(spec.pose_objects.size());
        spec.pose_objects.push_back(obj);
        pose_channels.push_back(jp.contains("channel") ? jp.at("channel").get<int>() : -1);
    }

    // Channel layout: either all explicit or all implicit (predicates first).
    const std::size_t d = pred_channels.size() + pose_channels.size();
    const auto explicit_count = std::count_if(pred_channels.begin(), pred_channels.end(), [](int c) { return c >= 0; }) +
                                std::count_if(pose_channels.begin(), pose_channels.end(), [](int c) { return c >= 0; });
    if (explicit_count == 0) {
        for (std::size_t i = 0; i < pred_channels.size(); ++i) pred_channels[i] = static_cast<int>(i);
        for (std::size_t i = 0; i < pose_channels.size(); ++i)
            pose_channels[i] = static_cast<int>(pred_channels.size() + i);
    } else if (static_cast<std::size_t>(explicit_count) != d) {
        fail(origin, "channel indices must be given for every predicate and pose or for none");
    }
    spec.channels.assign(d, ChannelInfo{});
    std::vector<bool> used(d, false);
    auto claim = [&](int c, ChannelInfo info) {
        if (c < 0 || static_cast<std::size_t>(c) >= d)
            fail(origin, "channel " + std::to_string(c) + " outside 0.." + std::to_string(d == 0 ? 0 : d - 1));
        if (used[c]) fail(origin, "duplicate channel " + std::to_string(c));
        used[c] = true;
        spec.channels[c] = info;
    };
    for (std::size_t i = 0; i < pred_channels.size(); ++i) {
        claim(pred_channels[i], {ChannelInfo::Kind::predicate, static_cast<int>(i)});
        spec.predicates[i].channel = pred_channels[i];
    }
    for (std::size_t i = 0; i < pose_channels.size(); ++i)
        claim(pose_channels[i], {ChannelInfo::Kind::pose, static_cast<int>(i)});
    spec.pose_channels = pose_channels;

    spec.initial.truth.assign(spec.predicates.size(), 0);
    spec.initial.poses.resize(spec.pose_objects.size());
    for (std::size_t i = 0; i < spec.pose_objects.size(); ++i) spec.initial.poses[i] = spec.objects[spec.pose_objects[i]].home;
    if (j.contains("initial")) {
        const auto& ji = j.at("initial");
        for (const auto& name : ji.value("true", std::vector<std::string>{})) {
            const int p = spec.predicate_index(name);
            if (p < 0) fail(origin, "initial state: unknown predicate '" + name + "'");
            spec.initial.truth[p] = 1;
        }
        for (const auto& [name, value] : ji.value("poses", json::object()).items()) {
            const int o = spec.object_index(name);
            if (o < 0 || spec.objects[o].pose < 0) fail(origin, "initial state: '" + name + "' has no pose channel");
            spec.initial.poses[spec.objects[o].pose] = value.get<double>();
        }
    }

    std::set<std::string> op_ids;
    const json ops = j.value("operators", json::array());
    for (const auto& jop : ops) {
        OperatorTemplate op;
        op.id = get_field<std::string>(jop, "id", origin, "operator");
        if (!op_ids.insert(op.id).second) fail(origin, "duplicate operator id '" + op.id + "'");
        op.verb = get_field<std::string>(jop, "verb", origin, op.id);
        for (const auto& js : jop.value("slots", json::array())) {
            const auto sname = get_field<std::string>(js, "name", origin, op.id);
            if (sname.empty() || sname[0] != '?') fail(origin, "operator '" + op.id + "': slot names start with '?'");
            std::vector<int> cands;
            for (const auto& cn : get_field<std::vector<std::string>>(js, "candidates", origin, op.id)) {
                const int o = spec.object_index(cn);
                if (o < 0) fail(origin, "operator '" + op.id + "': unknown object '" + cn + "'");
                cands.push_back(o);
            }
            op.slot_names.push_back(sname);
            op.slot_candidates.push_back(cands);
        }
        op.object_refs = get_field<std::vector<std::string>>(jop, "objects", origin, op.id);
        if (op.object_refs.empty()) fail(origin, "operator '" + op.id + "': needs at least one object");
        op.tool_ref = jop.value("tool", std::string());
        op.text = jop.value("template", op.verb + " the {0}");
        op.pre = jop.value("pre", std::vector<std::string>{});
        op.post = jop.value("post", std::vector<std::string>{});
        spec.operators.push_back(std::move(op));
        ground_operator(spec, static_cast<int>(spec.operators.size()) - 1, jop, origin);
    }

    std::stable_sort(spec.actions.begin(), spec.actions.end(), [&](const GroundedAction& a, const GroundedAction& b) {
        return action_key(spec, a) < action_key(spec, b);
    });
    for (std::size_t i = 1; i < spec.actions.size(); ++i)
        if (action_key(spec, spec.actions[i - 1]) == action_key(spec, spec.actions[i]))
            fail(origin, "two operators ground to the same action " + action_label(spec, spec.actions[i]));
    return spec;
}

DomainSpec load_domain(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open domain file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_domain(ss.str(), path);
}

std::string bundled_domain_path(const std::string& name) {
    const char* env = std::getenv("ACTLOOP_DATA_DIR");
    const std::string root = env && *env ? env : ACTLOOP_DATA_DIR;
    return root + "/domains/" + name + ".json";
}

std::vector<double> encode_state(const DomainSpec& spec, const SymbolicState& state) {
    if (state.truth.size() != spec.predicates.size() || state.poses.size() != spec.pose_objects.size())
        throw ShapeError("state does not match domain '" + spec.name + "'");
    std::vector<double> frame(spec.channels.size());
    for (std::size_t c = 0; c < spec.channels.size(); ++c) {
        const auto& ch = spec.channels[c];
        frame[c] = ch.kind == ChannelInfo::Kind::predicate ? (state.truth[ch.index] ? 1.0 : 0.0) : state.poses[ch.index];
    }
    return frame;
}

SymbolicState decode_frame(const DomainSpec& spec, std::span<const double> frame, double threshold) {
    if (frame.size() != spec.channels.size())
        throw ShapeError("frame width " + std::to_string(frame.size()) + " != " + std::to_string(spec.channels.size()));
    SymbolicState s;
    s.truth.assign(spec.predicates.size(), 0);
    s.poses.assign(spec.pose_objects.size(), 0.0);
    for (std::size_t c = 0; c < frame.size(); ++c) {
        const auto& ch = spec.channels[c];
        if (ch.kind == ChannelInfo::Kind::predicate)
            s.truth[ch.index] = frame[c] >= threshold ? 1 : 0;
        else
            s.poses[ch.index] = std::clamp(frame[c], 0.0, 1.0);
    }
    return s;
}

bool holds(const SymbolicState& state, const Literal& lit) {
    return (state.truth.at(lit.predicate) != 0) == lit.positive;
}

bool holds_all(const SymbolicState& state, std::span<const Literal> lits) {
    return std::all_of(lits.begin(), lits.end(), [&](const Literal& l) { return holds(state, l); });
}

std::optional<Literal> first_unmet(const SymbolicState& state, std::span<const Literal> lits) {
    for (const auto& l : lits)
        if (!holds(state, l)) return l;
    return std::nullopt;
}

void set_literal(SymbolicState& state, const Literal& lit) { state.truth.at(lit.predicate) = lit.positive ? 1 : 0; }

std::string literal_to_string(const DomainSpec& spec, const Literal& lit, bool phrase) {
    const auto& p = spec.predicates.at(lit.predicate);
    return (lit.positive ? "" : "not ") + (phrase ? p.phrase : p.name);
}

Literal parse_literal(const DomainSpec& spec, std::string_view text) {
    std::string t = trim(text);
    bool positive = true;
    if (t.rfind("not ", 0) == 0) {
        positive = false;
        t = trim(t.substr(4));
    } else if (!t.empty() && t[0] == '!') {
        positive = false;
        t = trim(t.substr(1));
    }
    const int p = spec.predicate_index(t);
    if (p < 0) throw ParseError("unknown predicate '" + t + "' in domain '" + spec.name + "'");
    return {p, positive};
}

std::vector<Literal> parse_literals(const DomainSpec& spec, const std::vector<std::string>& texts) {
    std::vector<Literal> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(parse_literal(spec, t));
    return out;
}

double resolve_pose_target(const DomainSpec& spec, const SymbolicState& state, const PoseTarget& target) {
    switch (target.kind) {
        case PoseTarget::Kind::constant:
            return target.value;
        case PoseTarget::Kind::home:
            return spec.objects[target.object].home;
        case PoseTarget::Kind::object: {
            const int pose = spec.objects[target.object].pose;
            return pose >= 0 ? state.poses[pose] : spec.objects[target.object].home;
        }
    }
    return 0.0;
}

double object_position(const DomainSpec& spec, std::span<const double> frame, int object) {
    const int pose = spec.objects.at(object).pose;
    return pose >= 0 ? frame[spec.pose_channels[pose]] : spec.objects[object].home;
}

SymbolicState apply_operator(const DomainSpec& spec, const SymbolicState& state, const GroundedAction& action) {
    if (auto miss = first_unmet(state, action.pre)) {
        const auto lit = literal_to_string(spec, *miss);
        throw PreconditionError(lit, action_label(spec, action) + ": precondition '" + lit + "' does not hold");
    }
    SymbolicState next = state;
    for (const auto& l : action.post) set_literal(next, l);
    for (const auto& m : action.moves) next.poses[spec.objects[m.object].pose] = resolve_pose_target(spec, state, m.to);
    return next;
}

SymbolicState apply_operator(const DomainSpec& spec, const SymbolicState& state, int action_index) {
    return apply_operator(spec, state, spec.actions.at(action_index));
}

Segment reference_segment(const DomainSpec& spec, const SymbolicState& state, const GroundedAction& action, int frames,
                          RandomSource* rng, double jitter) {
    if (frames < 2) throw ConfigError("a segment needs at least 2 frames");
    if (jitter < 0.0 || jitter > 0.02) throw ConfigError("jitter amplitude must lie in [0, 0.02]");
    const SymbolicState end = apply_operator(spec, state, action);
    const auto a = encode_state(spec, state);
    const auto b = encode_state(spec, end);
    const int d = spec.width();
    Segment seg(frames, d);
    const double last = frames - 1;
    const double lo = action.window_lo * last, hi = action.window_hi * last;
    for (int i = 0; i < frames; ++i) {
        const double u = i / last;
        double ramp;
        if (hi > lo)
            ramp = std::clamp((i - lo) / (hi - lo), 0.0, 1.0);
        else
            ramp = i >= lo ? 1.0 : 0.0;
        if (i == frames - 1) ramp = 1.0;
        if (i == 0) ramp = std::min(ramp, 0.0);
        for (int c = 0; c < d; ++c) {
            const bool pose = spec.channels[c].kind == ChannelInfo::Kind::pose;
            seg.at(i, c) = pose ? a[c] + (b[c] - a[c]) * u : a[c] + (b[c] - a[c]) * ramp;
        }
    }
    if (rng && jitter > 0.0) {
        for (int i = 1; i + 1 < frames; ++i)
            for (int c = 0; c < d; ++c)
                if (spec.channels[c].kind == ChannelInfo::Kind::pose)
                    seg.at(i, c) = std::clamp(seg.at(i, c) + rng->uniform(-jitter, jitter), 0.0, 1.0);
    }
    return seg;
}

std::optional<int> find_action(const DomainSpec& spec, std::string_view verb, const std::vector<std::string>& objects,
                               std::optional<std::string> tool) {
    for (std::size_t i = 0; i < spec.actions.size(); ++i) {
        const auto& a = spec.actions[i];
        if (a.verb != verb || object_names(spec, a.objects) != objects) continue;
        if (tool && !tool->empty() && (!a.tool || spec.objects[*a.tool].name != *tool)) continue;
        return static_cast<int>(i);
    }
    return std::nullopt;
}

std::vector<std::string> object_names(const DomainSpec& spec, const std::vector<int>& objects) {
    std::vector<std::string> out;
    out.reserve(objects.size());
    for (int o : objects) out.push_back(spec.objects.at(o).name);
    return out;
}

std::string action_label(const DomainSpec& spec, const GroundedAction& action) {
    std::string s = action.verb + "(";
    for (std::size_t i = 0; i < action.objects.size(); ++i) {
        if (i) s += ",";
        s += spec.objects[action.objects[i]].name;
    }
    return s + ")";
}

std::string render_instruction(const DomainSpec& spec, const GroundedAction& action) {
    std::string out;
    const std::string& t = spec.operators.at(action.op).text;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] == '{') {
            const auto close = t.find('}', i);
            if (close != std::string::npos) {
                const std::string key = t.substr(i + 1, close - i - 1);
                if (key == "tool") {
                    out += action.tool ? spec.objects[*action.tool].name : std::string("hand");
                    i = close;
                    continue;
                }
                if (!key.empty() && std::all_of(key.begin(), key.end(), ::isdigit)) {
                    const auto k = std::stoul(key);
                    if (k < action.objects.size()) {
                        out += spec.objects[action.objects[k]].name;
                        i = close;
                        continue;
                    }
                }
            }
        }
        out += t[i];
    }
    return out;
}

std::string describe_state(const DomainSpec& spec, const SymbolicState& state) {
    std::string s = "{";
    bool first = true;
    for (std::size_t p = 0; p < spec.predicates.size(); ++p) {
        if (!state.truth[p]) continue;
        if (!first) s += ", ";
        s += spec.predicates[p].name;
        first = false;
    }
    return s + "}";
}

}  // namespace actloop
