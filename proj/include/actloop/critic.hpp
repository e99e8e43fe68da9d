#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "actloop/microworld.hpp"
#include "actloop/mlp.hpp"
#include "actloop/planner.hpp"
#include "actloop/random.hpp"
#include "json.hpp"

namespace actloop {

enum class Dimension { adherence = 0, interaction = 1, goal = 2, coherence = 3, realism = 4 };
inline constexpr int kDimensions = 5;
const char* dimension_name(Dimension d);  // action_adherence, object_interaction, goal_achievement, ...
const char* dimension_wire_key(Dimension d);  // as dimension_name, but realism is visual_physics_realism

struct DimensionScores {
    std::array<double, kDimensions> v{};
    double& operator[](Dimension d) { return v[static_cast<int>(d)]; }
    double operator[](Dimension d) const { return v[static_cast<int>(d)]; }
    friend bool operator==(const DimensionScores&, const DimensionScores&) = default;
};

struct CriticWeights {
    DimensionScores w{{0.4, 0.15, 0.2, 0.15, 0.1}};
    void validate() const;  // non-negative, sums to 1 within 1e-9
    static CriticWeights only(Dimension d);
    static CriticWeights uniform();
};

struct CriticConfig {
    CriticWeights weights;
    double tau = 0.7;
    double contact_radius = 0.15;
    double progress_fraction = 0.8;
    double progress_tolerance = 0.02;
    double coherence_scale = 0.01;
    double max_delta = 0.25;
    double range_slack = 0.05;
    double severity_scale = 0.5;
    double threshold = 0.5;  // predicate decode threshold
};

struct CriticTag {
    std::string code;     // e.g. "post-condition-unmet"
    std::string literal;  // phrase form, may be empty
    Dimension dimension = Dimension::adherence;
    double score = 0.0;
    std::string text() const { return literal.empty() ? code : code + "(" + literal + ")"; }
};

struct CriticReport {
    DimensionScores scores;
    double scalar = 0.0;
    std::vector<CriticTag> tags;  // severity order (ascending dimension score)
    std::string revised_instruction;
    std::string prose;
    std::vector<Literal> emphasis;  // literals the revision stresses
    bool interaction_applicable = true;
    std::vector<std::uint8_t> post_status;  // per step.post literal, satisfied at the final frame
    std::vector<std::string> warnings;      // e.g. clamped wire scores

    std::vector<std::string> tag_strings() const;
};

double aggregate(const DimensionScores& scores, const CriticWeights& weights);

// Deterministic five-dimension scoring of a segment against its step.
CriticReport evaluate(const DomainSpec& spec, const Segment& segment, const PlanStep& step,
                      const CriticConfig& config = {});

// Sorts tags by severity and fills scalar-dependent fields (tags cleared when scalar >= tau,
// revised instruction, prose, emphasis). Used by local and remote critics alike.
void finalize_report(const DomainSpec& spec, const PlanStep& step, CriticReport& report, const CriticConfig& config);

std::string revise_instruction(const DomainSpec& spec, const PlanStep& step, const CriticReport& report);

// Wire form: {"scores": {"action_adherence": {"score", "reason"}, "object_interaction": {"reason", "per_action"},
// "goal_achievement": {"reason", "per_event"}, "temporal_coherence": {...}, "visual_physics_realism": {...}}}
nlohmann::json report_to_json(const DomainSpec& spec, const PlanStep& step, const CriticReport& report);
// Scores outside [0,1] are clamped with a warning; the scalar is always recomputed from `config.weights`.
CriticReport report_from_json(const DomainSpec& spec, const PlanStep& step, const nlohmann::json& doc,
                              const CriticConfig& config = {});

// Bradley-Terry preference loss -ln sigmoid(r_w - r_l).
double bt_loss(double r_w, double r_l);
// d loss / d r_w (d loss / d r_l is its negative).
double bt_loss_grad(double r_w, double r_l);

inline constexpr int kSegmentFeatures = 9;
// post_frac, mean squared second difference, contact proximity, pre_ok, then the five dimension scores.
std::vector<double> segment_features(const DomainSpec& spec, const Segment& segment, const PlanStep& step,
                                     const CriticConfig& config = {});

struct PreferencePair {
    std::vector<double> winner, loser;
    std::string source;  // "quality-ranking" or "semantic-negative"
};

struct RewardModel {
    NetParams net;
    friend bool operator==(const RewardModel&, const RewardModel&) = default;
};

RewardModel make_reward_model(int features, RandomSource& rng, int hidden = 16);
double rm_score(const RewardModel& model, const std::vector<double>& features);
double pairwise_accuracy(const RewardModel& model, const std::vector<PreferencePair>& pairs);
double rm_loss(const RewardModel& model, const std::vector<PreferencePair>& pairs, std::vector<double>* grad = nullptr);

struct RmConfig {
    int epochs = 300;
    double lr = 1e-2;
    double holdout = 0.2;
    int hidden = 16;
};

struct RmResult {
    RewardModel model;
    std::vector<double> train_loss;
    double heldout_accuracy = 0.0;
    std::size_t heldout = 0;
};

RmResult rm_train(const std::vector<PreferencePair>& pairs, const RmConfig& cfg, RandomSource& rng);
// Continue training from an existing model on all pairs (no holdout split).
RewardModel rm_fit(RewardModel init, const std::vector<PreferencePair>& pairs, int epochs, double lr);

// Coordinate-wise dominating pairs with a known margin.
std::vector<PreferencePair> synthetic_pairs(int n, int width, double margin, RandomSource& rng);
// Reference segments preferred over corrupted ones (frozen / teleport / reversed) for random steps.
std::vector<PreferencePair> segment_pairs(const DomainSpec& spec, int n, RandomSource& rng,
                                          const CriticConfig& config = {});

}  // namespace actloop
