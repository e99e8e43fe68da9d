#include "actloop/critic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "actloop/error.hpp"
#include "actloop/optim.hpp"

namespace actloop {

namespace {

constexpr Dimension kAll[kDimensions] = {Dimension::adherence, Dimension::interaction, Dimension::goal,
                                         Dimension::coherence, Dimension::realism};

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(3);
    os << x;
    return os.str();
}

// Frames inside [lo, hi] * (F-1); falls back to the nearest frame when the window holds none.
std::vector<int> window_frames(const GroundedAction& a, int frames) {
    const double last = frames - 1;
    const int lo = static_cast<int>(std::ceil(a.window_lo * last - 1e-9));
    const int hi = static_cast<int>(std::floor(a.window_hi * last + 1e-9));
    std::vector<int> out;
    for (int i = std::max(lo, 0); i <= std::min(hi, frames - 1); ++i) out.push_back(i);
    if (out.empty()) out.push_back(std::clamp(static_cast<int>(std::lround(a.window_lo * last)), 0, frames - 1));
    return out;
}

struct Measurements {
    bool pre_ok = true;
    std::optional<Literal> pre_miss;
    std::vector<std::uint8_t> post_status;
    double post_frac = 1.0;
    double progress = 1.0;
    double second_diff = 0.0;
    double proximity = 0.0;
    double interaction = 1.0;
    bool interaction_applicable = false;
    double realism = 1.0;
};

Measurements measure(const DomainSpec& spec, const Segment& seg, const PlanStep& step, const CriticConfig& cfg) {
    if (seg.width != spec.width())
        throw ShapeError("segment width " + std::to_string(seg.width) + " does not match domain width " +
                         std::to_string(spec.width()));
    if (seg.frames < 1) throw ShapeError("segment has no frames");
    Measurements m;
    const int F = seg.frames, d = seg.width;

    const auto first = decode_frame(spec, seg.row(0), cfg.threshold);
    const auto last = decode_frame(spec, seg.row(F - 1), cfg.threshold);
    m.pre_miss = first_unmet(first, step.pre);
    m.pre_ok = !m.pre_miss.has_value();

    int met = 0;
    for (const auto& l : step.post) {
        const bool ok = holds(last, l);
        m.post_status.push_back(ok ? 1 : 0);
        met += ok;
    }
    m.post_frac = step.post.empty() ? 1.0 : static_cast<double>(met) / step.post.size();

    if (!step.post.empty() && F > 1) {
        auto distance = [&](int i) {
            double s = 0.0;
            for (const auto& l : step.post) {
                const int ch = spec.predicates[l.predicate].channel;
                s += std::abs(seg.at(i, ch) - (l.positive ? 1.0 : 0.0));
            }
            return s;
        };
        int good = 0;
        double prev = distance(0);
        for (int i = 1; i < F; ++i) {
            const double cur = distance(i);
            if (cur <= prev + cfg.progress_tolerance) ++good;
            prev = cur;
        }
        m.progress = static_cast<double>(good) / (F - 1);
    }

    if (F >= 3) {
        double s = 0.0;
        for (int i = 1; i + 1 < F; ++i)
            for (int c = 0; c < d; ++c) {
                const double dd = seg.at(i + 1, c) - 2.0 * seg.at(i, c) + seg.at(i - 1, c);
                s += dd * dd;
            }
        m.second_diff = s / (static_cast<double>(F - 2) * d);
    }

    if (step.action >= 0 && step.action < static_cast<int>(spec.actions.size())) {
        const auto& a = spec.actions[step.action];
        if (a.actor >= 0 && a.target >= 0) {
            m.interaction_applicable = true;
            const auto frames = window_frames(a, F);
            int hits = 0;
            double dist = 0.0;
            for (int i : frames) {
                const double gap = std::abs(object_position(spec, seg.row(i), a.actor) -
                                            object_position(spec, seg.row(i), a.target));
                dist += gap;
                if (gap <= cfg.contact_radius + 1e-12) ++hits;
            }
            m.interaction = static_cast<double>(hits) / frames.size();
            m.proximity = dist / frames.size();
        }
    }

    const double lo = -cfg.range_slack, hi = 1.0 + cfg.range_slack;
    int ok_frames = 0;
    double excess = 0.0;
    for (int i = 0; i < F; ++i) {
        bool ok = true;
        for (int c = 0; c < d; ++c) {
            const double v = seg.at(i, c);
            if (!std::isfinite(v)) {
                ok = false;
                excess = std::numeric_limits<double>::infinity();
                continue;
            }
            if (v < lo || v > hi) {
                ok = false;
                excess = std::max(excess, std::max(lo - v, v - hi));
            }
            if (i > 0) {
                const double delta = std::abs(v - seg.at(i - 1, c));
                if (delta > cfg.max_delta) {
                    ok = false;
                    excess = std::max(excess, delta - cfg.max_delta);
                }
            }
        }
        ok_frames += ok;
    }
    const double severity = 1.0 - clamp01(excess / cfg.severity_scale);
    m.realism = static_cast<double>(ok_frames) / F * (std::isfinite(severity) ? severity : 0.0);
    return m;
}

std::string phrase(const DomainSpec& spec, const Literal& l) { return literal_to_string(spec, l, true); }

std::string tag_sentence(const DomainSpec& spec, const PlanStep& step, const CriticTag& tag) {
    if (tag.code == "post-condition-unmet")
        return "Ensure post-condition '" + tag.literal + "' is reached before the segment ends.";
    if (tag.code == "start-state-mismatch") return "Start from a scene where '" + tag.literal + "' holds.";
    if (tag.code == "non-monotone-progress") return "Make steady progress toward the post-conditions.";
    if (tag.code == "interaction-miss") {
        if (step.action >= 0 && step.action < static_cast<int>(spec.actions.size())) {
            const auto& a = spec.actions[step.action];
            if (a.actor >= 0 && a.target >= 0)
                return "Keep the " + spec.objects[a.actor].name + " on the " + spec.objects[a.target].name +
                       " while acting.";
        }
        return "Keep contact with the target object while acting.";
    }
    if (tag.code == "incoherent-motion") return "Move smoothly from frame to frame.";
    if (tag.code == "physics-violation") return "Avoid sudden jumps and keep everything inside the scene.";
    return "Address: " + tag.text() + ".";
}

std::string generic_code(Dimension d) {
    switch (d) {
        case Dimension::adherence: return "non-monotone-progress";
        case Dimension::interaction: return "interaction-miss";
        case Dimension::goal: return "post-condition-unmet";
        case Dimension::coherence: return "incoherent-motion";
        case Dimension::realism: return "physics-violation";
    }
    return "unknown";
}

Dimension code_dimension(const std::string& code) {
    if (code == "post-condition-unmet") return Dimension::goal;
    if (code == "interaction-miss") return Dimension::interaction;
    if (code == "incoherent-motion") return Dimension::coherence;
    if (code == "physics-violation") return Dimension::realism;
    return Dimension::adherence;
}

}  // namespace

const char* dimension_name(Dimension d) {
    switch (d) {
        case Dimension::adherence: return "action_adherence";
        case Dimension::interaction: return "object_interaction";
        case Dimension::goal: return "goal_achievement";
        case Dimension::coherence: return "temporal_coherence";
        case Dimension::realism: return "physical_realism";
    }
    return "?";
}

const char* dimension_wire_key(Dimension d) {
    return d == Dimension::realism ? "visual_physics_realism" : dimension_name(d);
}

void CriticWeights::validate() const {
    double sum = 0.0;
    for (double x : w.v) {
        if (!std::isfinite(x) || x < 0.0) throw ConfigError("critic weights must be finite and non-negative");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("critic weights must sum to 1 (got " + fmt(sum) + ")");
}

CriticWeights CriticWeights::only(Dimension d) {
    CriticWeights cw;
    cw.w = DimensionScores{};
    cw.w[d] = 1.0;
    return cw;
}

CriticWeights CriticWeights::uniform() {
    CriticWeights cw;
    cw.w.v.fill(1.0 / kDimensions);
    return cw;
}

std::vector<std::string> CriticReport::tag_strings() const {
    std::vector<std::string> out;
    for (const auto& t : tags) out.push_back(t.text());
    return out;
}

double aggregate(const DimensionScores& scores, const CriticWeights& weights) {
    weights.validate();
    double r = 0.0;
    for (int i = 0; i < kDimensions; ++i) r += weights.w.v[i] * scores.v[i];
    return clamp01(r);
}

CriticReport evaluate(const DomainSpec& spec, const Segment& segment, const PlanStep& step,
                      const CriticConfig& config) {
    const auto m = measure(spec, segment, step, config);
    CriticReport r;
    const bool full = m.pre_ok && m.post_frac >= 1.0 && m.progress >= config.progress_fraction;
    r.scores[Dimension::adherence] =
        full ? 1.0
             : 0.25 * (m.pre_ok ? 1.0 : 0.0) + 0.5 * m.post_frac +
                   0.25 * std::min(1.0, m.progress / config.progress_fraction);
    r.scores[Dimension::interaction] = m.interaction;
    r.scores[Dimension::goal] = m.post_frac;
    r.scores[Dimension::coherence] = 1.0 - clamp01(m.second_diff / config.coherence_scale);
    r.scores[Dimension::realism] = m.realism;
    r.interaction_applicable = m.interaction_applicable;
    r.post_status = m.post_status;

    std::optional<Literal> post_miss;
    for (std::size_t i = 0; i < step.post.size(); ++i)
        if (!m.post_status[i]) {
            post_miss = step.post[i];
            break;
        }
    for (Dimension d : kAll) {
        const double s = r.scores[d];
        if (s >= config.tau) continue;
        CriticTag tag{generic_code(d), "", d, s};
        if (d == Dimension::adherence) {
            if (m.pre_miss) {
                tag.code = "start-state-mismatch";
                tag.literal = phrase(spec, *m.pre_miss);
            } else if (post_miss) {
                tag.code = "post-condition-unmet";
                tag.literal = phrase(spec, *post_miss);
            }
        } else if (d == Dimension::goal && post_miss) {
            tag.literal = phrase(spec, *post_miss);
        }
        r.tags.push_back(tag);
    }
    finalize_report(spec, step, r, config);
    return r;
}

void finalize_report(const DomainSpec& spec, const PlanStep& step, CriticReport& report, const CriticConfig& config) {
    for (double& s : report.scores.v) s = clamp01(s);
    report.scalar = aggregate(report.scores, config.weights);
    std::stable_sort(report.tags.begin(), report.tags.end(),
                     [](const CriticTag& a, const CriticTag& b) { return a.score < b.score; });
    std::vector<CriticTag> unique;
    for (const auto& t : report.tags)
        if (std::none_of(unique.begin(), unique.end(), [&](const CriticTag& u) { return u.text() == t.text(); }))
            unique.push_back(t);
    report.tags = std::move(unique);
    if (report.scalar >= config.tau) report.tags.clear();
    // A scalar under tau always has some weighted dimension under tau; remote reports may still omit it.
    if (report.scalar < config.tau && report.tags.empty()) {
        Dimension worst = Dimension::adherence;
        for (Dimension d : kAll)
            if (config.weights.w[d] > 0.0 && report.scores[d] < report.scores[worst]) worst = d;
        report.tags.push_back({generic_code(worst), "", worst, report.scores[worst]});
    }

    report.emphasis.clear();
    for (std::size_t i = 0; i < step.post.size() && i < report.post_status.size(); ++i)
        if (!report.post_status[i]) report.emphasis.push_back(step.post[i]);
    if (report.emphasis.empty() && !report.tags.empty()) report.emphasis = step.post;

    report.revised_instruction = revise_instruction(spec, step, report);

    std::ostringstream os;
    os << "reward " << fmt(report.scalar) << " (";
    for (int i = 0; i < kDimensions; ++i) os << (i ? ", " : "") << dimension_name(kAll[i]) << " " << fmt(report.scores.v[i]);
    os << ")";
    if (report.tags.empty())
        os << "; accepted";
    else
        os << "; issues: " << report.tags.front().text() << (report.tags.size() > 1 ? " and others" : "");
    report.prose = os.str();
}

std::string revise_instruction(const DomainSpec& spec, const PlanStep& step, const CriticReport& report) {
    std::string out = step.instruction;
    for (const auto& t : report.tags) {
        const auto sentence = tag_sentence(spec, step, t);
        if (out.find(sentence) != std::string::npos) continue;
        if (!out.empty()) out += ' ';
        out += sentence;
    }
    return out;
}

nlohmann::json report_to_json(const DomainSpec& spec, const PlanStep& step, const CriticReport& report) {
    using nlohmann::json;
    auto reason_for = [&](Dimension d) {
        for (const auto& t : report.tags)
            if (t.dimension == d) return t.text();
        return std::string("ok");
    };
    json scores = json::object();
    scores[dimension_wire_key(Dimension::adherence)] = {{"score", report.scores[Dimension::adherence]},
                                                         {"reason", reason_for(Dimension::adherence)}};

    json per_action = json::array();
    for (const auto& a : step.actions) {
        json item = {{"verb", a.verb},
                     {"tool", a.tool.value_or("")},
                     {"match", report.scores[Dimension::interaction] >= 0.5 ? "yes" : "no"},
                     {"score", report.scores[Dimension::interaction]},
                     {"reason", reason_for(Dimension::interaction)}};
        per_action.push_back(std::move(item));
    }
    scores[dimension_wire_key(Dimension::interaction)] = {
        {"score", report.scores[Dimension::interaction]},
        {"applicable", report.interaction_applicable},
        {"reason", report.interaction_applicable ? reason_for(Dimension::interaction) : "no contact required"},
        {"per_action", per_action}};

    json per_event = json::array();
    for (std::size_t i = 0; i < step.post.size(); ++i) {
        const bool ok = i < report.post_status.size() && report.post_status[i];
        per_event.push_back({{"event_id", static_cast<int>(i) + 1},
                             {"condition", phrase(spec, step.post[i])},
                             {"score", ok ? 1.0 : 0.0},
                             {"reason", std::string(ok ? "holds" : "not reached") + ": " + phrase(spec, step.post[i])}});
    }
    scores[dimension_wire_key(Dimension::goal)] = {{"score", report.scores[Dimension::goal]},
                                                   {"reason", reason_for(Dimension::goal)},
                                                   {"per_event", per_event}};
    for (Dimension d : {Dimension::coherence, Dimension::realism})
        scores[dimension_wire_key(d)] = {{"score", report.scores[d]}, {"reason", reason_for(d)}};

    return {{"scores", scores},
            {"scalar", report.scalar},
            {"tags", report.tag_strings()},
            {"revised_instruction", report.revised_instruction},
            {"prose", report.prose}};
}

CriticReport report_from_json(const DomainSpec& spec, const PlanStep& step, const nlohmann::json& doc,
                              const CriticConfig& config) {
    if (!doc.is_object() || !doc.contains("scores") || !doc["scores"].is_object())
        throw SchemaError("critic response must be an object with a \"scores\" object");
    const auto& scores = doc["scores"];
    CriticReport r;
    auto number = [&](const nlohmann::json& v, const std::string& where) {
        if (!v.is_number()) throw SchemaError(where + " must be a number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) throw SchemaError(where + " is not finite");
        if (x < 0.0 || x > 1.0) {
            r.warnings.push_back(where + " = " + fmt(x) + " clamped to [0,1]");
            return clamp01(x);
        }
        return x;
    };
    auto mean_of = [&](const nlohmann::json& arr, const std::string& where) -> std::optional<double> {
        if (!arr.is_array() || arr.empty()) return std::nullopt;
        double s = 0.0;
        for (std::size_t i = 0; i < arr.size(); ++i) {
            if (!arr[i].is_object() || !arr[i].contains("score"))
                throw SchemaError(where + "[" + std::to_string(i) + "] needs a score");
            s += number(arr[i]["score"], where + "[" + std::to_string(i) + "].score");
        }
        return s / arr.size();
    };
    for (Dimension d : kAll) {
        const std::string key = dimension_wire_key(d);
        const nlohmann::json* entry = nullptr;
        if (scores.contains(key))
            entry = &scores[key];
        else if (scores.contains(dimension_name(d)))
            entry = &scores[dimension_name(d)];
        if (!entry || !entry->is_object()) throw SchemaError("critic response is missing scores." + key);
        std::optional<double> value;
        if (entry->contains("score") && !(*entry)["score"].is_null()) value = number((*entry)["score"], key + ".score");
        if (d == Dimension::interaction && entry->contains("per_action")) {
            const auto m = mean_of((*entry)["per_action"], key + ".per_action");
            if (!value) value = m;
        }
        if (d == Dimension::goal && entry->contains("per_event")) {
            const auto& ev = (*entry)["per_event"];
            const auto m = mean_of(ev, key + ".per_event");
            if (!value) value = m;
            if (ev.is_array())
                for (std::size_t i = 0; i < step.post.size(); ++i)
                    r.post_status.push_back(i < ev.size() && ev[i].value("score", 0.0) >= 0.5 ? 1 : 0);
        }
        if (!value) {
            if (d == Dimension::interaction) {
                r.interaction_applicable = false;
                value = 1.0;
            } else {
                throw SchemaError(key + " has no score");
            }
        }
        r.scores[d] = *value;
    }
    if (doc.contains("tags")) {
        if (!doc["tags"].is_array()) throw SchemaError("tags must be an array of strings");
        for (const auto& t : doc["tags"]) {
            if (!t.is_string()) throw SchemaError("tags must be an array of strings");
            const auto text = t.get<std::string>();
            CriticTag tag;
            const auto open = text.find('(');
            if (open != std::string::npos && text.back() == ')') {
                tag.code = text.substr(0, open);
                tag.literal = text.substr(open + 1, text.size() - open - 2);
            } else {
                tag.code = text;
            }
            tag.dimension = code_dimension(tag.code);
            tag.score = r.scores[tag.dimension];
            r.tags.push_back(tag);
        }
    }
    if (r.tags.empty()) {
        for (Dimension d : kAll)
            if (r.scores[d] < config.tau) {
                CriticTag tag{generic_code(d), "", d, r.scores[d]};
                if (d == Dimension::goal || d == Dimension::adherence) {
                    for (std::size_t i = 0; i < r.post_status.size(); ++i)
                        if (!r.post_status[i]) {
                            tag.code = "post-condition-unmet";
                            tag.literal = phrase(spec, step.post[i]);
                            break;
                        }
                }
                r.tags.push_back(tag);
            }
    }
    finalize_report(spec, step, r, config);
    return r;
}

double bt_loss(double r_w, double r_l) {
    const double x = r_w - r_l;
    // -ln sigmoid(x) = softplus(-x), evaluated stably
    return x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

double bt_loss_grad(double r_w, double r_l) {
    const double x = r_w - r_l;
    // d/dx softplus(-x) = -sigmoid(-x)
    return x >= 0 ? -std::exp(-x) / (1.0 + std::exp(-x)) : -1.0 / (1.0 + std::exp(x));
}

std::vector<double> segment_features(const DomainSpec& spec, const Segment& segment, const PlanStep& step,
                                     const CriticConfig& config) {
    const auto m = measure(spec, segment, step, config);
    const auto r = evaluate(spec, segment, step, config);
    std::vector<double> f = {m.post_frac, m.second_diff, m.proximity, m.pre_ok ? 1.0 : 0.0};
    for (double s : r.scores.v) f.push_back(s);
    return f;
}

RewardModel make_reward_model(int features, RandomSource& rng, int hidden) {
    if (features <= 0 || hidden <= 0) throw ConfigError("reward model needs positive widths");
    RewardModel m;
    m.net = make_random_net({static_cast<std::size_t>(features), static_cast<std::size_t>(hidden), 1}, rng);
    auto& out = m.net.layers.back();
    std::fill(out.weight.data().begin(), out.weight.data().end(), 0.0);
    std::fill(out.bias.data().begin(), out.bias.data().end(), 0.0);
    return m;
}

double rm_score(const RewardModel& model, const std::vector<double>& features) {
    if (features.size() != model.net.input_width())
        throw ShapeError("reward model expects " + std::to_string(model.net.input_width()) + " features, got " +
                         std::to_string(features.size()));
    return net_forward(model.net, features)[0];
}

double pairwise_accuracy(const RewardModel& model, const std::vector<PreferencePair>& pairs) {
    if (pairs.empty()) return 0.0;
    double hits = 0.0;
    for (const auto& p : pairs) {
        const double a = rm_score(model, p.winner), b = rm_score(model, p.loser);
        hits += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
    }
    return hits / pairs.size();
}

double rm_loss(const RewardModel& model, const std::vector<PreferencePair>& pairs, std::vector<double>* grad) {
    if (pairs.empty()) throw ConfigError("no preference pairs");
    if (grad) grad->assign(model.net.param_count(), 0.0);
    double total = 0.0;
    const double scale = 1.0 / pairs.size();
    for (const auto& p : pairs) {
        if (p.winner.size() != p.loser.size()) throw ShapeError("preference pair widths differ");
        const auto cw = net_forward_cached(model.net, p.winner);
        const auto cl = net_forward_cached(model.net, p.loser);
        const double rw = cw.output()[0], rl = cl.output()[0];
        total += bt_loss(rw, rl);
        if (grad) {
            const double g = bt_loss_grad(rw, rl) * scale;
            const double gw[1] = {g}, gl[1] = {-g};
            net_backward_accumulate(model.net, cw, gw, *grad);
            net_backward_accumulate(model.net, cl, gl, *grad);
        }
    }
    return total * scale;
}

RewardModel rm_fit(RewardModel model, const std::vector<PreferencePair>& pairs, int epochs, double lr) {
    if (epochs < 0 || !(lr > 0.0)) throw ConfigError("rm training needs epochs >= 0 and lr > 0");
    auto flat = flatten(model.net);
    auto opt = OptState::for_size(flat.size());
    std::vector<double> grad;
    for (int e = 0; e < epochs; ++e) {
        const double loss = rm_loss(model, pairs, &grad);
        if (!std::isfinite(loss)) throw NumericError("reward model loss diverged");
        adam_step(flat, grad, opt, lr);
        assign_flat(model.net, flat);
    }
    return model;
}

RmResult rm_train(const std::vector<PreferencePair>& pairs, const RmConfig& cfg, RandomSource& rng) {
    if (pairs.empty()) throw ConfigError("rm_train needs at least one preference pair");
    if (cfg.holdout < 0.0 || cfg.holdout >= 1.0) throw ConfigError("holdout fraction must lie in [0,1)");
    const std::size_t width = pairs.front().winner.size();
    for (const auto& p : pairs)
        if (p.winner.size() != width || p.loser.size() != width) throw ShapeError("preference pair widths differ");

    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    std::size_t held = static_cast<std::size_t>(std::floor(cfg.holdout * pairs.size()));
    if (held >= pairs.size()) held = pairs.size() - 1;
    std::vector<PreferencePair> train, test;
    for (std::size_t i = 0; i < order.size(); ++i) (i < held ? test : train).push_back(pairs[order[i]]);

    RmResult res;
    res.model = make_reward_model(static_cast<int>(width), rng, cfg.hidden);
    auto flat = flatten(res.model.net);
    auto opt = OptState::for_size(flat.size());
    std::vector<double> grad;
    for (int e = 0; e < cfg.epochs; ++e) {
        const double loss = rm_loss(res.model, train, &grad);
        if (!std::isfinite(loss)) throw NumericError("reward model loss diverged at epoch " + std::to_string(e));
        res.train_loss.push_back(loss);
        adam_step(flat, grad, opt, cfg.lr);
        assign_flat(res.model.net, flat);
    }
    res.heldout = test.size();
    res.heldout_accuracy = pairwise_accuracy(res.model, test.empty() ? train : test);
    return res;
}

std::vector<PreferencePair> synthetic_pairs(int n, int width, double margin, RandomSource& rng) {
    if (n < 0 || width <= 0 || margin <= 0.0) throw ConfigError("synthetic_pairs needs n >= 0, width > 0, margin > 0");
    std::vector<PreferencePair> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        PreferencePair p;
        p.source = "quality-ranking";
        for (int j = 0; j < width; ++j) {
            const double l = rng.uniform(0.0, 1.0);
            p.loser.push_back(l);
            p.winner.push_back(l + margin * rng.uniform(0.5, 1.0));
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<PreferencePair> segment_pairs(const DomainSpec& spec, int n, RandomSource& rng,
                                          const CriticConfig& config) {
    std::vector<PreferencePair> out;
    const int F = spec.frames, d = spec.width();
    while (static_cast<int>(out.size()) < n) {
        SymbolicState s = spec.initial;
        const int walk = static_cast<int>(rng.below(6));
        std::vector<int> legal;
        auto collect = [&] {
            legal.clear();
            for (std::size_t a = 0; a < spec.actions.size(); ++a)
                if (holds_all(s, spec.actions[a].pre)) legal.push_back(static_cast<int>(a));
        };
        for (int i = 0; i < walk; ++i) {
            collect();
            if (legal.empty()) break;
            s = apply_operator(spec, s, legal[rng.below(legal.size())]);
        }
        collect();
        if (legal.empty()) continue;
        const int a = legal[rng.below(legal.size())];
        const PlanStep step = make_step(spec, 1, a);
        const Segment good = reference_segment(spec, s, spec.actions[a], F, &rng, 0.02);
        Segment bad = good;
        PreferencePair p;
        switch (rng.below(3)) {
            case 0:  // nothing happens
                for (int i = 1; i < F; ++i)
                    for (int c = 0; c < d; ++c) bad.at(i, c) = good.at(0, c);
                p.source = "semantic-negative";
                break;
            case 1: {  // one channel jumps
                const int at = 1 + static_cast<int>(rng.below(F - 1));
                const int c = static_cast<int>(rng.below(d));
                for (int i = at; i < F; ++i) bad.at(i, c) += bad.at(i, c) < 0.5 ? 0.9 : -0.9;
                p.source = "quality-ranking";
                break;
            }
            default:  // played backwards
                for (int i = 0; i < F; ++i)
                    for (int c = 0; c < d; ++c) bad.at(i, c) = good.at(F - 1 - i, c);
                p.source = "semantic-negative";
                break;
        }
        p.winner = segment_features(spec, good, step, config);
        p.loser = segment_features(spec, bad, step, config);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace actloop
