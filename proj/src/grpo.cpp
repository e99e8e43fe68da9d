#include "actloop/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "actloop/error.hpp"
#include "actloop/numerics.hpp"

namespace actloop {

std::string to_string(RewardSource r) {
    switch (r) {
        case RewardSource::programmatic: return "programmatic";
        case RewardSource::adherence: return "adherence";
        case RewardSource::blended: return "blended";
    }
    return "programmatic";
}

RewardSource reward_source_from_string(const std::string& name) {
    if (name == "programmatic" || name == "scalar") return RewardSource::programmatic;
    if (name == "adherence") return RewardSource::adherence;
    if (name == "blended") return RewardSource::blended;
    throw ConfigError("unknown reward source '" + name + "' (programmatic, adherence, blended)");
}

void GrpoConfig::validate() const {
    if (G < 2) throw ConfigError("grpo: G must be at least 2");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("grpo: epsilon must lie in (0, 1)");
    if (!(beta >= 0.0)) throw ConfigError("grpo: beta must be non-negative");
    if (!(delta > 0.0)) throw ConfigError("grpo: delta must be positive");
    if (!(lr > 0.0)) throw ConfigError("grpo: lr must be positive");
    if (iterations < 0) throw ConfigError("grpo: iterations must be non-negative");
    if (!(rm_blend >= 0.0 && rm_blend <= 1.0)) throw ConfigError("grpo: rm_blend must lie in [0, 1]");
    if (start_walk < 0) throw ConfigError("grpo: start_walk must be non-negative");
    if (curriculum.empty()) throw ConfigError("grpo: curriculum needs at least one level");
    if (curriculum.front().from_iteration != 1) throw ConfigError("grpo: curriculum must start at iteration 1");
    for (std::size_t i = 0; i < curriculum.size(); ++i) {
        if (curriculum[i].max_length < 1) throw ConfigError("grpo: curriculum lengths must be at least 1");
        if (i > 0 && (curriculum[i].from_iteration <= curriculum[i - 1].from_iteration ||
                      curriculum[i].max_length < curriculum[i - 1].max_length))
            throw ConfigError("grpo: curriculum must be increasing in iteration and non-decreasing in length");
    }
}

int curriculum_schedule(const GrpoConfig& cfg, int iteration) {
    if (iteration < 1) throw ConfigError("curriculum_schedule: iteration must be >= 1");
    if (cfg.curriculum.empty()) throw ConfigError("curriculum_schedule: empty curriculum");
    int len = cfg.curriculum.front().max_length;
    for (const auto& level : cfg.curriculum)
        if (iteration >= level.from_iteration) len = level.max_length;
    return len;
}

std::vector<double> compute_advantages(const std::vector<double>& rewards, double delta) {
    if (rewards.size() < 2) throw ConfigError("compute_advantages needs a group of at least 2");
    const double n = static_cast<double>(rewards.size());
    const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double std = std::sqrt(var / n);
    std::vector<double> a(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) a[i] = (rewards[i] - mean) / (std + delta);
    // Remove the rounding residue of the mean so the group sums to zero at working precision.
    const double residue = std::accumulate(a.begin(), a.end(), 0.0) / n;
    if (std > 0.0)
        for (auto& v : a) v -= residue;
    return a;
}

std::vector<double> RolloutGroup::rewards() const {
    std::vector<double> r;
    r.reserve(members.size());
    for (const auto& m : members) r.push_back(m.reward);
    return r;
}

RewardFn make_reward_fn(const DomainSpec& spec, const GrpoConfig& cfg, const RewardModel* rm) {
    switch (cfg.reward) {
        case RewardSource::programmatic:
            return [](const Segment&, const PlanStep&, const CriticReport& r) { return r.scalar; };
        case RewardSource::adherence:
            return [](const Segment&, const PlanStep&, const CriticReport& r) {
                return r.scores[Dimension::adherence];
            };
        case RewardSource::blended: {
            if (!rm) throw ConfigError("blended reward needs a reward model");
            const double w = cfg.rm_blend;
            const RewardModel model = *rm;
            return [&spec, w, model](const Segment& seg, const PlanStep& step, const CriticReport& r) {
                const double s = rm_score(model, segment_features(spec, seg, step));
                return (1.0 - w) * r.scalar + w / (1.0 + std::exp(-s));
            };
        }
    }
    throw ConfigError("unknown reward source");
}

RolloutGroup rollout_group(const VelocityModel& theta_old, const DomainSpec& spec, const PlanStep& step,
                           const WorldMemory& memory, const SamplerConfig& sampler, const GrpoConfig& cfg,
                           CriticAgent& critic, const RewardFn& reward, RandomSource& rng,
                           const std::vector<std::uint64_t>* stream_seeds) {
    sampler.validate();
    cfg.validate();
    if (!(sampler.eta_scale > 0.0)) throw ConfigError("rollout_group: eta_scale must be positive for exploration");
    if (stream_seeds && stream_seeds->size() != static_cast<std::size_t>(cfg.G))
        throw ConfigError("rollout_group: need one stream seed per member");

    RolloutGroup group;
    group.step = step;
    group.cond = embed_condition(spec, step, memory);
    group.zK = rng.normal_vector(theta_old.state_size());
    group.members.resize(cfg.G);
    for (int i = 0; i < cfg.G; ++i) {
        RandomSource stream = stream_seeds ? RandomSource((*stream_seeds)[i], 0)
                                           : RandomSource(mix64(rng.next_u64()), static_cast<std::uint64_t>(i));
        auto& m = group.members[i];
        m.segment = clip_segment(sample_sde(theta_old, group.cond, group.zK, sampler, stream, &m.trace));
        m.report = critic.critique(spec, m.segment, step);
        m.reward = std::clamp(reward(m.segment, step, m.report), 0.0, 1.0);
    }
    group.advantages = compute_advantages(group.rewards(), cfg.delta);
    return group;
}

double kl_term(const VelocityModel& theta, const VelocityModel& reference, const DenoiseTrace& trace,
               std::span<const double> cond, const SamplerConfig& sampler, std::span<double> grad) {
    if (trace.steps.empty()) return 0.0;
    const double inv_k = 1.0 / static_cast<double>(trace.steps.size());
    double total = 0.0;
    for (const auto& st : trace.steps) {
        const double std = sampler.step_std(st.t);
        if (!(std > 0.0)) throw ConfigError("kl_term: degenerate transition std");
        const auto ev = velocity_eval(theta, st.z, st.t, cond, sampler.delta);
        const auto mu = transition_mean(st.z, ev.u, st.t, sampler);
        const auto mu_ref = transition_mean(st.z, velocity(reference, st.z, st.t, cond, sampler.delta), st.t, sampler);
        const double var = std * std;
        double sq = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) sq += (mu[i] - mu_ref[i]) * (mu[i] - mu_ref[i]);
        total += sq / (2.0 * var);
        if (!grad.empty() && sq > 0.0) {
            const double slope = transition_mean_slope(st.t, sampler);
            std::vector<double> du(mu.size());
            for (std::size_t i = 0; i < mu.size(); ++i) du[i] = (mu[i] - mu_ref[i]) / var * slope * inv_k;
            velocity_backward(theta, ev, du, grad);
        }
    }
    return total * inv_k;
}

MemberSurrogate member_surrogate(const VelocityModel& theta, const DenoiseTrace& trace, std::span<const double> cond,
                                 double advantage, const SamplerConfig& sampler, double epsilon,
                                 std::span<double> grad) {
    MemberSurrogate out;
    if (trace.steps.empty()) return out;
    const double inv_k = 1.0 / static_cast<double>(trace.steps.size());
    std::vector<double> step_grad;
    for (const auto& st : trace.steps) {
        double logp;
        if (!grad.empty()) {
            step_grad.assign(grad.size(), 0.0);
            logp = transition_logprob_grad(theta, st, cond, sampler, step_grad);
        } else {
            logp = transition_logprob(theta, st, cond, sampler);
        }
        const double rho = std::exp(logp - st.logp);
        out.ratios.push_back(rho);
        if (!std::isfinite(rho)) {
            out.finite = false;
            continue;
        }
        bool binding = false;
        if (advantage >= 0.0 && rho > 1.0 + epsilon) binding = true;
        if (advantage < 0.0 && rho < 1.0 - epsilon) binding = true;
        if (binding) {
            ++out.clipped;
            out.value += advantage * (advantage >= 0.0 ? 1.0 + epsilon : 1.0 - epsilon) * inv_k;
            continue;
        }
        out.value += advantage * rho * inv_k;
        if (!grad.empty() && advantage != 0.0) {
            const double scale = advantage * rho * inv_k;
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += scale * step_grad[i];
        }
    }
    return out;
}

UpdateStats grpo_objective(const VelocityModel& theta, const VelocityModel& reference, const RolloutGroup& group,
                           const SamplerConfig& sampler, const GrpoConfig& cfg, std::vector<double>* grad) {
    UpdateStats stats;
    if (group.advantages.size() != group.members.size())
        throw ConfigError("grpo: advantages must be computed before the update");
    const std::size_t p = theta.param_count();
    if (grad) grad->assign(p, 0.0);
    std::vector<double> g_member, g_kl;
    int kept = 0, steps = 0;
    for (std::size_t i = 0; i < group.members.size(); ++i) {
        const auto& m = group.members[i];
        if (grad) g_member.assign(p, 0.0);
        const auto s = member_surrogate(theta, m.trace, group.cond, group.advantages[i], sampler, cfg.epsilon,
                                        grad ? std::span<double>(g_member) : std::span<double>());
        bool finite = s.finite && std::isfinite(s.value);
        if (grad) finite = finite && std::all_of(g_member.begin(), g_member.end(), [](double v) { return std::isfinite(v); });
        if (!finite) {
            ++stats.dropped;
            stats.warnings.push_back("member " + std::to_string(i) + " dropped: non-finite importance ratio");
            continue;
        }
        if (grad) g_kl.assign(p, 0.0);
        const double kl = kl_term(theta, reference, m.trace, group.cond, sampler,
                                  grad ? std::span<double>(g_kl) : std::span<double>());
        ++kept;
        steps += static_cast<int>(s.ratios.size());
        stats.clip_fraction += s.clipped;
        for (double r : s.ratios) stats.max_ratio_error = std::max(stats.max_ratio_error, std::abs(r - 1.0));
        stats.surrogate += s.value;
        stats.kl += kl;
        if (grad)
            for (std::size_t j = 0; j < p; ++j) (*grad)[j] += g_member[j] - cfg.beta * g_kl[j];
    }
    if (kept == 0) {
        stats.skipped = true;
        stats.warnings.push_back("every member dropped; update skipped");
        if (grad) grad->assign(p, 0.0);
        return stats;
    }
    stats.surrogate /= kept;
    stats.kl /= kept;
    stats.objective = stats.surrogate - cfg.beta * stats.kl;
    stats.clip_fraction = steps > 0 ? stats.clip_fraction / steps : 0.0;
    if (grad)
        for (auto& v : *grad) v /= kept;
    return stats;
}

UpdateStats grpo_update(PolicyBundle& bundle, OptState& opt, const RolloutGroup& group, const SamplerConfig& sampler,
                        const GrpoConfig& cfg) {
    std::vector<double> grad;
    auto stats = grpo_objective(bundle.theta, bundle.reference, group, sampler, cfg, &grad);
    if (stats.skipped) return stats;
    auto params = flatten(bundle.theta);
    if (opt.first_moment.size() != params.size()) opt = OptState::for_size(params.size());
    const auto before = params;
    for (auto& g : grad) g = -g;
    adam_step(params, grad, opt, cfg.lr);
    assign_flat(bundle.theta, params);
    double sq = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) sq += (params[i] - before[i]) * (params[i] - before[i]);
    stats.update_norm = std::sqrt(sq);
    return stats;
}

namespace {

SymbolicState random_start(const DomainSpec& spec, int max_walk, RandomSource& rng) {
    SymbolicState s = spec.initial;
    if (max_walk <= 0) return s;
    const int walk = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_walk) + 1));
    for (int i = 0; i < walk; ++i) {
        std::vector<int> legal;
        for (std::size_t a = 0; a < spec.actions.size(); ++a)
            if (holds_all(s, spec.actions[a].pre)) legal.push_back(static_cast<int>(a));
        if (legal.empty()) break;
        s = apply_operator(spec, s, legal[rng.below(legal.size())]);
    }
    return s;
}

}  // namespace

TrainingLog train(PolicyBundle& bundle, const DomainSpec& spec, PlanAgent& planner, CriticAgent& critic,
                  const GrpoConfig& cfg, const SamplerConfig& sampler, RandomSource& rng, const RewardModel* rm,
                  const std::function<void(const TrainingRecord&)>& on_iteration, TrainState* state) {
    cfg.validate();
    sampler.validate();
    TrainState local;
    TrainState& ts = state ? *state : local;
    if (ts.completed < 0) throw ConfigError("train: completed iteration count must be non-negative");
    if (ts.opt.first_moment.size() != bundle.theta.param_count()) {
        if (ts.completed > 0) throw ConfigError("train: optimizer state does not match the policy size");
        ts.opt = OptState::for_size(bundle.theta.param_count());
    }
    TrainingLog log;
    if (ts.completed >= cfg.iterations) return log;
    const auto reward = make_reward_fn(spec, cfg, rm);
    const std::uint64_t base = rng.next_u64();
    OptState& opt = ts.opt;

    for (int it = ts.completed + 1; it <= cfg.iterations; ++it) {
        RandomSource iter_rng(base, static_cast<std::uint64_t>(it));
        bundle.theta_old = bundle.theta;
        TrainingRecord rec;
        rec.iteration = it;
        rec.level = curriculum_schedule(cfg, it);

        SymbolicState start;
        Goal goal;
        PlanSequence plan;
        for (int attempt = 0;; ++attempt) {
            if (attempt == 50) throw NoPlanError("train: no plannable goal found at iteration " + std::to_string(it));
            start = random_start(spec, cfg.start_walk, iter_rng);
            try {
                goal = sample_goal(spec, iter_rng, 1, rec.level, start, 200);
                plan = planner.plan(spec, goal, start);
            } catch (const Error& e) {
                log.events.push_back("iteration " + std::to_string(it) + ": goal resampled (" + e.what() + ")");
                continue;
            }
            if (!plan.steps.empty()) break;
            log.events.push_back("iteration " + std::to_string(it) + ": empty plan for '" + goal.description +
                                 "', goal resampled");
        }
        rec.goal = goal.description;

        WorldMemory memory = make_memory(start);
        double reward_sum = 0.0, kl_sum = 0.0, clip_sum = 0.0;
        int members = 0, updates = 0;
        for (const auto& step : plan.steps) {
            const auto group = rollout_group(bundle.theta_old, spec, step, memory, sampler, cfg, critic, reward, iter_rng);
            const auto stats = grpo_update(bundle, opt, group, sampler, cfg);
            for (const auto& w : stats.warnings) log.events.push_back("iteration " + std::to_string(it) + ": " + w);
            if (!stats.skipped) {
                if (updates == 0) {
                    rec.first_clip_fraction = stats.clip_fraction;
                    rec.max_ratio_error_at_sync = stats.max_ratio_error;
                }
                kl_sum += stats.kl;
                clip_sum += stats.clip_fraction;
                ++updates;
            }
            for (const auto& m : group.members) {
                reward_sum += m.reward;
                for (int d = 0; d < kDimensions; ++d) rec.dims.v[d] += m.report.scores.v[d];
                ++members;
            }
            std::size_t best = 0;
            for (std::size_t i = 1; i < group.members.size(); ++i)
                if (group.members[i].reward > group.members[best].reward) best = i;
            memory.state = apply_operator(spec, memory.state, step.action);
            memory.transitions.push_back({step, group.members[best].segment, group.members[best].reward});
            ++rec.groups;
        }
        rec.mean_reward = members ? reward_sum / members : 0.0;
        for (auto& v : rec.dims.v) v = members ? v / members : 0.0;
        rec.kl_mean = updates ? kl_sum / updates : 0.0;
        rec.clip_fraction = updates ? clip_sum / updates : 0.0;
        log.records.push_back(rec);
        ts.completed = it;
        if (on_iteration) on_iteration(rec);
    }
    return log;
}

TrainingLog read_training_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    std::string line;
    std::getline(in, line);
    if (line.rfind("iteration,mean_reward,", 0) != 0) throw ParseError(path + ": not a training log");
    TrainingLog log;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<double> cols;
        std::size_t pos = 0;
        try {
            while (pos <= line.size()) {
                const auto comma = std::min(line.find(',', pos), line.size());
                cols.push_back(std::stod(line.substr(pos, comma - pos)));
                pos = comma + 1;
            }
        } catch (const std::exception&) {
            throw ParseError(path + ": bad number on row " + std::to_string(row));
        }
        if (cols.size() != 5 + static_cast<std::size_t>(kDimensions))
            throw ParseError(path + ": wrong column count on row " + std::to_string(row));
        TrainingRecord r;
        r.iteration = static_cast<int>(cols[0]);
        r.mean_reward = cols[1];
        for (int d = 0; d < kDimensions; ++d) r.dims.v[d] = cols[2 + d];
        r.kl_mean = cols[2 + kDimensions];
        r.clip_fraction = cols[3 + kDimensions];
        r.level = static_cast<int>(cols[4 + kDimensions]);
        log.records.push_back(r);
    }
    return log;
}

void save_train_state(const std::string& path, const TrainState& state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    const std::uint64_t n = state.opt.first_moment.size();
    const std::int64_t completed = state.completed;
    out.write("ALTS", 4);
    out.write(reinterpret_cast<const char*>(&completed), sizeof completed);
    out.write(reinterpret_cast<const char*>(&state.opt.step), sizeof state.opt.step);
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(state.opt.first_moment.data()), static_cast<std::streamsize>(n * 8));
    out.write(reinterpret_cast<const char*>(state.opt.second_moment.data()), static_cast<std::streamsize>(n * 8));
    if (!out) throw ConfigError("cannot write " + path);
}

TrainState load_train_state(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path);
    char magic[4] = {};
    std::int64_t completed = 0;
    std::uint64_t n = 0;
    TrainState s;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&completed), sizeof completed);
    in.read(reinterpret_cast<char*>(&s.opt.step), sizeof s.opt.step);
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!in || std::string(magic, 4) != "ALTS" || n > (1u << 28) || completed < 0)
        throw ParseError(path + ": not a training state file");
    s.completed = static_cast<int>(completed);
    s.opt.first_moment.resize(n);
    s.opt.second_moment.resize(n);
    in.read(reinterpret_cast<char*>(s.opt.first_moment.data()), static_cast<std::streamsize>(n * 8));
    in.read(reinterpret_cast<char*>(s.opt.second_moment.data()), static_cast<std::streamsize>(n * 8));
    if (!in) throw ParseError(path + ": truncated training state");
    return s;
}

void write_training_csv(const std::string& path, const TrainingLog& log) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << "iteration,mean_reward,adherence_mean,interaction_mean,goal_mean,coherence_mean,realism_mean,kl_mean,"
           "clip_fraction,curriculum_level\n";
    out.precision(10);
    for (const auto& r : log.records) {
        out << r.iteration << ',' << r.mean_reward;
        for (double v : r.dims.v) out << ',' << v;
        out << ',' << r.kl_mean << ',' << r.clip_fraction << ',' << r.level << '\n';
    }
}

}  // namespace actloop
