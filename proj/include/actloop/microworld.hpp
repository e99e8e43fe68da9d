#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "actloop/random.hpp"

namespace actloop {

struct ObjectInfo {
    std::string name;
    double home = 0.5;
    int pose = -1;  // index into SymbolicState::poses, -1 when the object is static
};

struct PredicateInfo {
    std::string name;    // "jar.closed"
    std::string phrase;  // "jar closed"
    int object = -1;
    int channel = -1;
};

struct Literal {
    int predicate = -1;
    bool positive = true;
    friend bool operator==(const Literal&, const Literal&) = default;
    friend auto operator<=>(const Literal&, const Literal&) = default;
};

// Where a moving entity ends up at the end of a segment.
struct PoseTarget {
    enum class Kind { constant, object, home };
    Kind kind = Kind::constant;
    double value = 0.0;
    int object = -1;
};

struct PoseMove {
    int object = -1;  // must own a pose channel
    PoseTarget to;
};

// Operator as written in the domain file, before slot substitution.
struct OperatorTemplate {
    std::string id;
    std::string verb;
    std::vector<std::string> slot_names;
    std::vector<std::vector<int>> slot_candidates;
    std::vector<std::string> object_refs;
    std::string tool_ref;  // empty when no tool
    std::string text;      // instruction template: {0}, {1}, ... and {tool}
    std::vector<std::string> pre, post;
};

// One concrete (operator, binding) pair.
struct GroundedAction {
    int op = -1;  // index into DomainSpec::operators
    std::string verb;
    std::vector<int> objects;
    std::optional<int> tool;
    std::vector<Literal> pre, post;
    std::vector<PoseMove> moves;
    int actor = -1;   // object index, -1 when the operator has no interaction check
    int target = -1;  // object index
    double window_lo = 0.25, window_hi = 0.75;
};

struct SymbolicState {
    std::vector<std::uint8_t> truth;  // per predicate
    std::vector<double> poses;        // per pose channel
    friend bool operator==(const SymbolicState&, const SymbolicState&) = default;
};

struct ChannelInfo {
    enum class Kind { predicate, pose };
    Kind kind = Kind::predicate;
    int index = -1;  // predicate index or pose index
};

struct DomainSpec {
    std::string name;
    int frames = 16;
    std::vector<ObjectInfo> objects;
    std::vector<PredicateInfo> predicates;
    std::vector<int> pose_objects;  // pose index -> object index
    std::vector<int> pose_channels;  // pose index -> channel
    std::vector<ChannelInfo> channels;
    std::vector<OperatorTemplate> operators;
    std::vector<GroundedAction> actions;  // sorted by (verb, object names, tool)
    SymbolicState initial;
    std::uint64_t content_hash = 0;

    int width() const { return static_cast<int>(channels.size()); }
    int object_index(std::string_view name) const;     // -1 when unknown
    int predicate_index(std::string_view name) const;  // accepts canonical name or phrase
};

// Frame matrix of shape [frames, width], row-major.
struct Segment {
    int frames = 0;
    int width = 0;
    std::vector<double> data;

    Segment() = default;
    Segment(int f, int d) : frames(f), width(d), data(static_cast<std::size_t>(f) * d, 0.0) {}
    std::span<double> row(int i) { return {data.data() + static_cast<std::size_t>(i) * width, static_cast<std::size_t>(width)}; }
    std::span<const double> row(int i) const {
        return {data.data() + static_cast<std::size_t>(i) * width, static_cast<std::size_t>(width)};
    }
    double at(int i, int c) const { return data[static_cast<std::size_t>(i) * width + c]; }
    double& at(int i, int c) { return data[static_cast<std::size_t>(i) * width + c]; }
    friend bool operator==(const Segment&, const Segment&) = default;
};

DomainSpec load_domain(const std::string& path);
DomainSpec parse_domain(std::string_view text, const std::string& origin = "<memory>");
// Path of a domain bundled under the data directory, e.g. "kitchen".
std::string bundled_domain_path(const std::string& name);

std::vector<double> encode_state(const DomainSpec& spec, const SymbolicState& state);
SymbolicState decode_frame(const DomainSpec& spec, std::span<const double> frame, double threshold = 0.5);

bool holds(const SymbolicState& state, const Literal& lit);
bool holds_all(const SymbolicState& state, std::span<const Literal> lits);
// First literal of `lits` that does not hold, if any.
std::optional<Literal> first_unmet(const SymbolicState& state, std::span<const Literal> lits);
void set_literal(SymbolicState& state, const Literal& lit);

// "jar.closed" / "not jar.closed"; with phrase=true "jar closed" / "not jar closed".
std::string literal_to_string(const DomainSpec& spec, const Literal& lit, bool phrase = false);
// Accepts canonical names, phrases, a leading "not " or "!" for negation.
Literal parse_literal(const DomainSpec& spec, std::string_view text);
std::vector<Literal> parse_literals(const DomainSpec& spec, const std::vector<std::string>& texts);

SymbolicState apply_operator(const DomainSpec& spec, const SymbolicState& state, const GroundedAction& action);
SymbolicState apply_operator(const DomainSpec& spec, const SymbolicState& state, int action_index);

// Terminal pose for a move, evaluated against the state the action starts from.
double resolve_pose_target(const DomainSpec& spec, const SymbolicState& state, const PoseTarget& target);
// Position of an object in a frame: its pose channel if it has one, else its home.
double object_position(const DomainSpec& spec, std::span<const double> frame, int object);

Segment reference_segment(const DomainSpec& spec, const SymbolicState& state, const GroundedAction& action, int frames,
                          RandomSource* rng = nullptr, double jitter = 0.0);

std::optional<int> find_action(const DomainSpec& spec, std::string_view verb, const std::vector<std::string>& objects,
                               std::optional<std::string> tool = std::nullopt);
std::string action_label(const DomainSpec& spec, const GroundedAction& action);  // "pour(kettle,cup)"
std::string render_instruction(const DomainSpec& spec, const GroundedAction& action);
std::vector<std::string> object_names(const DomainSpec& spec, const std::vector<int>& objects);

std::string describe_state(const DomainSpec& spec, const SymbolicState& state);

}  // namespace actloop
