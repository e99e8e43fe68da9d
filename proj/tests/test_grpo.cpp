#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "actloop/error.hpp"
#include "actloop/grpo.hpp"
#include "actloop/numerics.hpp"
#include "doctest.h"

using namespace actloop;

namespace {

const DomainSpec& kitchen() {
    static const DomainSpec spec = load_domain(bundled_domain_path("kitchen"));
    return spec;
}

VelocityModel tiny_model(RandomSource& rng) {
    auto m = make_velocity_model(2, 2, 2, {4}, rng, 1.0);
    m.skip = 0.8;
    return m;
}

void nudge(VelocityModel& m, RandomSource& rng, double scale) {
    auto p = flatten(m);
    for (auto& v : p) v += scale * rng.normal();
    assign_flat(m, p);
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double std_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / v.size());
}

// Group of SDE traces from a tiny model with hand-picked rewards.
RolloutGroup tiny_group(const VelocityModel& old, const SamplerConfig& sampler, RandomSource& rng, int members,
                        const std::vector<double>& rewards) {
    RolloutGroup g;
    g.cond = rng.normal_vector(2);
    g.zK = rng.normal_vector(old.state_size());
    for (int i = 0; i < members; ++i) {
        GroupMember m;
        m.segment = sample_sde(old, g.cond, g.zK, sampler, rng, &m.trace);
        m.reward = rewards[i];
        g.members.push_back(std::move(m));
    }
    g.advantages = compute_advantages(rewards, 1e-8);
    return g;
}

struct PourFixture {
    PlanStep step;
    WorldMemory memory;
};

PourFixture pour_fixture() {
    const auto& k = kitchen();
    const auto p = plan(k, parse_goal(k, "cup.sweet"), k.initial);
    REQUIRE(p.steps.size() == 3);
    WorldMemory mem = make_memory(k.initial);
    for (int i = 0; i < 2; ++i) mem.state = apply_operator(k, mem.state, p.steps[i].action);
    return {p.steps[2], mem};
}

}  // namespace

TEST_CASE("advantages: worked examples") {
    const auto a = compute_advantages({0.0, 1.0}, 1e-8);
    CHECK(a[0] == doctest::Approx(-0.5 / (0.5 + 1e-8)).epsilon(1e-15));
    CHECK(a[1] == doctest::Approx(0.5 / (0.5 + 1e-8)).epsilon(1e-15));
    CHECK(a[1] < 1.0);
    CHECK(a[1] > 0.9999999);

    for (double v : compute_advantages(std::vector<double>(8, 0.5), 1e-8)) CHECK(v == 0.0);
    CHECK_THROWS_AS(compute_advantages({0.3}, 1e-8), ConfigError);
}

TEST_CASE("advantages: zero mean and the exact spread identity over random groups") {
    RandomSource rng(11);
    const double delta = 1e-8;
    double worst_mean = 0.0, worst_identity = 0.0, worst_wide = 0.0;
    for (int trial = 0; trial < 100000; ++trial) {
        const int g = 2 + static_cast<int>(rng.below(15));
        std::vector<double> r(g);
        const bool tight = trial % 10 == 0;  // some groups with tiny spread
        for (auto& v : r) v = tight ? 0.5 + 1e-7 * rng.uniform() : rng.uniform();
        const auto a = compute_advantages(r, delta);
        worst_mean = std::max(worst_mean, std::abs(mean_of(a)));
        const double s = std_of(r);
        const double sa = std_of(a);
        // Population std of the advantages is s / (s + delta) exactly.
        worst_identity = std::max(worst_identity, std::abs(sa - s / (s + delta)));
        CHECK(sa <= 1.0 + 1e-12);
        if (s >= 1e6 * delta) worst_wide = std::max(worst_wide, std::abs(sa - 1.0));
    }
    CHECK(worst_mean <= 1e-12);
    CHECK(worst_identity <= 1e-12);
    CHECK(worst_wide <= 1e-6);
}

TEST_CASE("curriculum: left-closed levels, clamped past the table, monotone") {
    GrpoConfig cfg;
    CHECK(curriculum_schedule(cfg, 1) == 1);
    CHECK(curriculum_schedule(cfg, 100) == 1);
    CHECK(curriculum_schedule(cfg, 101) == 3);
    CHECK(curriculum_schedule(cfg, 200) == 3);
    CHECK(curriculum_schedule(cfg, 201) == 5);
    CHECK(curriculum_schedule(cfg, 5000) == 5);
    CHECK_THROWS_AS(curriculum_schedule(cfg, 0), ConfigError);
    int prev = 0;
    for (int it = 1; it <= cfg.iterations; ++it) {
        const int level = curriculum_schedule(cfg, it);
        CHECK(level >= prev);
        prev = level;
    }

    GrpoConfig bad = cfg;
    bad.curriculum = {{1, 3}, {50, 2}};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.curriculum = {{2, 1}};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.G = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.epsilon = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.delta = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("reward sources") {
    CHECK(reward_source_from_string("adherence") == RewardSource::adherence);
    CHECK(to_string(reward_source_from_string("blended")) == "blended");
    CHECK_THROWS_AS(reward_source_from_string("vibes"), ConfigError);
    GrpoConfig cfg;
    cfg.reward = RewardSource::blended;
    CHECK_THROWS_AS(make_reward_fn(kitchen(), cfg, nullptr), ConfigError);

    CriticReport r;
    r.scalar = 0.6;
    r.scores[Dimension::adherence] = 0.25;
    Segment s;
    PlanStep st;
    cfg.reward = RewardSource::programmatic;
    CHECK(make_reward_fn(kitchen(), cfg)(s, st, r) == 0.6);
    cfg.reward = RewardSource::adherence;
    CHECK(make_reward_fn(kitchen(), cfg)(s, st, r) == 0.25);
}

TEST_CASE("rollout_group: shared initial noise, stream hook, configuration errors") {
    const auto& k = kitchen();
    RandomSource rng(5);
    const auto model = make_velocity_model(k, rng);
    const auto fx = pour_fixture();
    GrpoConfig cfg;
    SamplerConfig sampler;
    BuiltinCritic critic;
    const auto reward = make_reward_fn(k, cfg);

    const auto g = rollout_group(model, k, fx.step, fx.memory, sampler, cfg, critic, reward, rng);
    REQUIRE(g.members.size() == 8);
    for (const auto& m : g.members) {
        REQUIRE(m.trace.steps.size() == static_cast<std::size_t>(sampler.K));
        CHECK(m.trace.steps.front().z == g.zK);
        CHECK(m.reward >= 0.0);
        CHECK(m.reward <= 1.0);
    }
    CHECK(g.members[0].segment != g.members[1].segment);
    CHECK(std::abs(mean_of(g.advantages)) < 1e-9);

    cfg.G = 2;
    const std::vector<std::uint64_t> same{42, 42};
    const auto twin = rollout_group(model, k, fx.step, fx.memory, sampler, cfg, critic, reward, rng, &same);
    CHECK(twin.members[0].segment == twin.members[1].segment);
    CHECK(twin.members[0].reward == twin.members[1].reward);
    CHECK(twin.advantages == std::vector<double>{0.0, 0.0});

    const std::vector<std::uint64_t> three{1, 2, 3};
    CHECK_THROWS_AS(rollout_group(model, k, fx.step, fx.memory, sampler, cfg, critic, reward, rng, &three),
                    ConfigError);
    SamplerConfig ode = sampler;
    ode.eta_scale = 0.0;
    CHECK_THROWS_AS(rollout_group(model, k, fx.step, fx.memory, ode, cfg, critic, reward, rng), ConfigError);
}

TEST_CASE("rollout_group: rewards vary within groups for a supervised but imperfect policy") {
    const auto& k = kitchen();
    RandomSource rng(7);
    DemoConfig dc;
    dc.count = 200;
    const auto demos = generate_demos(k, dc, rng);
    SftConfig sc;
    sc.epochs = 10;
    const auto sft = sft_train(make_velocity_model(k, rng), demos, sc, rng);
    const auto fx = pour_fixture();
    GrpoConfig cfg;
    SamplerConfig sampler;
    BuiltinCritic critic;
    const auto reward = make_reward_fn(k, cfg);
    int varied = 0;
    for (int i = 0; i < 20; ++i) {
        const auto g = rollout_group(sft.model, k, fx.step, fx.memory, sampler, cfg, critic, reward, rng);
        if (std_of(g.rewards()) > 0.0) ++varied;
    }
    CHECK(varied == 20);
}

TEST_CASE("kl_term: zero at the reference, half at one std, Monte Carlo agreement") {
    RandomSource rng(9);
    SamplerConfig sampler;
    const auto theta = tiny_model(rng);
    const auto cond = rng.normal_vector(2);
    DenoiseTrace trace;
    sample_sde(theta, cond, rng.normal_vector(4), sampler, rng, &trace);
    CHECK(kl_term(theta, theta, trace, cond, sampler) == 0.0);

    auto other = theta;
    nudge(other, rng, 0.05);
    for (int i = 0; i < 20; ++i) {
        auto a = theta;
        nudge(a, rng, 0.1);
        CHECK(kl_term(a, other, trace, cond, sampler) >= 0.0);
    }

    // One reverse step from t = 1 on a 1x1 model with a bias-only network: the mean moves by exactly
    // the bias difference, so a bias offset of one std gives 0.5.
    SamplerConfig one;
    one.K = 1;
    auto base = zero_velocity_model(1, 1, 1, {});
    DenoiseTrace t1;
    RandomSource r1(3);
    sample_sde(base, std::vector<double>{0.2}, std::vector<double>{0.7}, one, r1, &t1);
    const double std = one.step_std(1.0);
    auto shifted = base;
    shifted.net.layers.back().bias.data()[0] = std;
    const double kl = kl_term(shifted, base, t1, std::vector<double>{0.2}, one);
    CHECK(kl == doctest::Approx(0.5).epsilon(1e-12));

    // Monte Carlo estimate of KL(p_theta || p_ref) for a larger offset.
    shifted.net.layers.back().bias.data()[0] = 0.37 * std;
    const auto& st = t1.steps[0];
    const auto mu_a = transition_mean(st.z, velocity(shifted, st.z, 1.0, std::vector<double>{0.2}), 1.0, one);
    const auto mu_b = transition_mean(st.z, velocity(base, st.z, 1.0, std::vector<double>{0.2}), 1.0, one);
    RandomSource mc(17);
    double est = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = mu_a[0] + std * mc.normal();
        est += gaussian_logpdf(std::vector<double>{x}, mu_a, std) - gaussian_logpdf(std::vector<double>{x}, mu_b, std);
    }
    est /= n;
    const double exact = kl_term(shifted, base, t1, std::vector<double>{0.2}, one);
    CHECK(exact == doctest::Approx(0.37 * 0.37 / 2).epsilon(1e-9));
    CHECK(std::abs(est - exact) <= 0.05 * exact);
}

TEST_CASE("kl_term: gradient matches finite differences") {
    RandomSource rng(12);
    SamplerConfig sampler;
    sampler.K = 4;
    const auto ref = tiny_model(rng);
    auto theta = ref;
    nudge(theta, rng, 0.1);
    const auto cond = rng.normal_vector(2);
    DenoiseTrace trace;
    sample_sde(ref, cond, rng.normal_vector(4), sampler, rng, &trace);
    std::vector<double> grad(theta.param_count(), 0.0);
    kl_term(theta, ref, trace, cond, sampler, grad);
    const auto fd = finite_diff_grad(
        [&](std::span<const double> p) {
            auto m = theta;
            assign_flat(m, p);
            return kl_term(m, ref, trace, cond, sampler);
        },
        flatten(theta), 1e-6);
    CHECK(max_relative_error(grad, fd, 1e-6) < 1e-4);
}

TEST_CASE("member_surrogate: clip semantics") {
    RandomSource rng(13);
    SamplerConfig sampler;
    sampler.K = 4;
    const auto theta = tiny_model(rng);
    const auto cond = rng.normal_vector(2);
    DenoiseTrace trace;
    sample_sde(theta, cond, rng.normal_vector(4), sampler, rng, &trace);
    const double eps = 0.2;

    auto scaled = trace;  // ratio 10 at every step
    for (auto& st : scaled.steps) st.logp -= std::log(10.0);
    std::vector<double> grad(theta.param_count(), 0.0);
    auto s = member_surrogate(theta, scaled, cond, 1.0, sampler, eps, grad);
    CHECK(s.value == doctest::Approx(1.0 + eps).epsilon(1e-12));
    CHECK(s.clipped == 4);
    for (double g : grad) CHECK(g == 0.0);
    for (double r : s.ratios) CHECK(r == doctest::Approx(10.0).epsilon(1e-9));

    s = member_surrogate(theta, scaled, cond, -1.0, sampler, eps);
    CHECK(s.value == doctest::Approx(-10.0).epsilon(1e-9));
    CHECK(s.clipped == 0);

    auto shrunk = trace;  // ratio 0.1
    for (auto& st : shrunk.steps) st.logp += std::log(10.0);
    s = member_surrogate(theta, shrunk, cond, -2.0, sampler, eps);
    CHECK(s.value == doctest::Approx(-2.0 * (1.0 - eps)).epsilon(1e-12));
    CHECK(s.clipped == 4);
    s = member_surrogate(theta, shrunk, cond, 2.0, sampler, eps);
    CHECK(s.value == doctest::Approx(0.2).epsilon(1e-9));

    s = member_surrogate(theta, trace, cond, 0.7, sampler, eps);
    for (double r : s.ratios) CHECK(std::abs(r - 1.0) <= 1e-12);
    CHECK(s.value == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(s.clipped == 0);
}

TEST_CASE("member_surrogate: gradient is the policy gradient and matches finite differences") {
    RandomSource rng(14);
    SamplerConfig sampler;
    sampler.K = 4;
    const auto old = tiny_model(rng);
    REQUIRE(old.param_count() == 53);
    const auto cond = rng.normal_vector(2);
    DenoiseTrace trace;
    sample_sde(old, cond, rng.normal_vector(4), sampler, rng, &trace);

    // At theta = theta_old with A = +1 the gradient is the trace log-likelihood gradient over K.
    std::vector<double> grad(old.param_count(), 0.0), ll(old.param_count(), 0.0);
    member_surrogate(old, trace, cond, 1.0, sampler, 0.2, grad);
    for (const auto& st : trace.steps) transition_logprob_grad(old, st, cond, sampler, ll);
    for (auto& v : ll) v /= sampler.K;
    CHECK(max_relative_error(grad, ll, 1e-12) < 1e-12);

    auto fd_check = [&](const VelocityModel& theta, double adv) {
        std::vector<double> g(theta.param_count(), 0.0);
        const auto s = member_surrogate(theta, trace, cond, adv, sampler, 0.2, g);
        REQUIRE(s.clipped == 0);
        const auto fd = finite_diff_grad(
            [&](std::span<const double> p) {
                auto m = theta;
                assign_flat(m, p);
                return member_surrogate(m, trace, cond, adv, sampler, 0.2).value;
            },
            flatten(theta), 1e-6);
        return max_relative_error(g, fd, 1e-6);
    };
    CHECK(fd_check(old, 1.0) < 1e-3);
    auto moved = old;
    nudge(moved, rng, 0.002);
    CHECK(fd_check(moved, 1.0) < 1e-3);
    CHECK(fd_check(moved, -0.6) < 1e-3);
}

TEST_CASE("grpo_objective: ratios at the sync point, degenerate group, dropped members") {
    RandomSource rng(15);
    SamplerConfig sampler;
    sampler.K = 4;
    const auto ref = tiny_model(rng);
    auto theta = ref;
    nudge(theta, rng, 0.05);
    GrpoConfig cfg;
    cfg.G = 4;

    auto g = tiny_group(theta, sampler, rng, 4, {0.1, 0.9, 0.4, 0.6});
    auto stats = grpo_objective(theta, ref, g, sampler, cfg, nullptr);
    CHECK(stats.max_ratio_error <= 1e-12);
    CHECK(stats.clip_fraction == 0.0);
    CHECK(std::abs(stats.surrogate) <= 1e-12);
    CHECK(stats.kl > 0.0);
    CHECK(stats.objective == doctest::Approx(stats.surrogate - cfg.beta * stats.kl));

    // Equal rewards: the gradient is exactly -beta times the mean KL gradient.
    auto flat = tiny_group(theta, sampler, rng, 4, {0.5, 0.5, 0.5, 0.5});
    std::vector<double> grad;
    grpo_objective(theta, ref, flat, sampler, cfg, &grad);
    std::vector<double> expect(theta.param_count(), 0.0);
    for (const auto& m : flat.members) {
        std::vector<double> k(theta.param_count(), 0.0);
        kl_term(theta, ref, m.trace, flat.cond, sampler, k);
        for (std::size_t i = 0; i < k.size(); ++i) expect[i] += -cfg.beta * k[i];
    }
    for (auto& v : expect) v /= 4;
    CHECK(max_relative_error(grad, expect, 1e-300) <= 1e-14);

    // A member whose recorded density underflows produces an infinite ratio and is dropped.
    auto broken = g;
    broken.members[1].trace.steps[0].logp = -std::numeric_limits<double>::infinity();
    stats = grpo_objective(theta, ref, broken, sampler, cfg, &grad);
    CHECK(stats.dropped == 1);
    CHECK_FALSE(stats.skipped);
    CHECK(stats.warnings.size() == 1);

    for (auto& m : broken.members) m.trace.steps[0].logp = -std::numeric_limits<double>::infinity();
    PolicyBundle bundle{theta, theta, ref};
    OptState opt;
    stats = grpo_update(bundle, opt, broken, sampler, cfg);
    CHECK(stats.skipped);
    CHECK(stats.dropped == 4);
    CHECK(bundle.theta == theta);

    stats = grpo_update(bundle, opt, g, sampler, cfg);
    CHECK_FALSE(stats.skipped);
    CHECK(stats.update_norm > 0.0);
    CHECK(bundle.theta != theta);
}

TEST_CASE("grpo_update: an ascent step raises the objective on its own group") {
    RandomSource rng(16);
    SamplerConfig sampler;
    sampler.K = 4;
    const auto ref = tiny_model(rng);
    GrpoConfig cfg;
    cfg.G = 6;
    cfg.lr = 1e-4;
    const auto g = tiny_group(ref, sampler, rng, 6, {0.1, 0.9, 0.4, 0.6, 0.2, 0.75});
    PolicyBundle bundle{ref, ref, ref};
    OptState opt;
    const double before = grpo_objective(bundle.theta, ref, g, sampler, cfg, nullptr).objective;
    grpo_update(bundle, opt, g, sampler, cfg);
    const double after = grpo_objective(bundle.theta, ref, g, sampler, cfg, nullptr).objective;
    CHECK(after > before);
}

TEST_CASE("train: zero iterations leave the policy untouched") {
    const auto& k = kitchen();
    RandomSource rng(21);
    const auto m = make_velocity_model(k, rng);
    PolicyBundle bundle{m, m, m};
    GrpoConfig cfg;
    cfg.iterations = 0;
    BuiltinPlanner planner;
    BuiltinCritic critic;
    const auto log = train(bundle, k, planner, critic, cfg, SamplerConfig{}, rng);
    CHECK(log.records.empty());
    CHECK(bundle.theta == m);
}

TEST_CASE("train: bookkeeping over a short curriculum and CSV output") {
    const auto& k = kitchen();
    RandomSource rng(22);
    const auto m = make_velocity_model(k, rng);
    PolicyBundle bundle{m, m, m};
    GrpoConfig cfg;
    cfg.G = 3;
    cfg.iterations = 5;
    cfg.curriculum = {{1, 1}, {3, 2}, {5, 4}};
    BuiltinPlanner planner;
    BuiltinCritic critic;
    int callbacks = 0;
    const auto log = train(bundle, k, planner, critic, cfg, SamplerConfig{}, rng, nullptr,
                           [&](const TrainingRecord&) { ++callbacks; });
    REQUIRE(log.records.size() == 5);
    CHECK(callbacks == 5);
    for (const auto& r : log.records) {
        CHECK(r.level == curriculum_schedule(cfg, r.iteration));
        CHECK(r.groups >= 1);
        CHECK(r.groups <= r.level);
        CHECK(r.first_clip_fraction == 0.0);
        CHECK(r.max_ratio_error_at_sync <= 1e-12);
        CHECK(r.clip_fraction >= 0.0);
        CHECK(r.clip_fraction <= 1.0);
        CHECK(r.mean_reward >= 0.0);
        CHECK(r.mean_reward <= 1.0);
        CHECK(r.kl_mean >= 0.0);
        CHECK_FALSE(r.goal.empty());
    }
    CHECK(bundle.theta != m);
    CHECK(bundle.reference == m);

    const auto path = std::filesystem::temp_directory_path() / "actloop_training_log.csv";
    write_training_csv(path.string(), log);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line ==
          "iteration,mean_reward,adherence_mean,interaction_mean,goal_mean,coherence_mean,realism_mean,kl_mean,"
          "clip_fraction,curriculum_level");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 5);
    std::filesystem::remove(path);
}

TEST_CASE("train: a resumed run continues numbering and matches the uninterrupted run") {
    const auto& k = kitchen();
    RandomSource init(23);
    const auto m = make_velocity_model(k, init);
    GrpoConfig cfg;
    cfg.G = 3;
    cfg.iterations = 4;
    cfg.curriculum = {{1, 1}, {3, 2}};
    BuiltinPlanner planner;
    BuiltinCritic critic;

    PolicyBundle whole{m, m, m};
    RandomSource r1(5);
    const auto full = train(whole, k, planner, critic, cfg, SamplerConfig{}, r1);

    PolicyBundle part{m, m, m};
    TrainState state;
    auto first = cfg;
    first.iterations = 2;
    RandomSource r2(5);
    train(part, k, planner, critic, first, SamplerConfig{}, r2, nullptr, {}, &state);
    CHECK(state.completed == 2);

    const auto path = (std::filesystem::temp_directory_path() / "actloop_train_state.bin").string();
    save_train_state(path, state);
    auto restored = load_train_state(path);
    CHECK(restored.completed == 2);
    CHECK(restored.opt == state.opt);

    PolicyBundle resumed{part.theta, part.theta, m};
    RandomSource r3(5);
    const auto rest = train(resumed, k, planner, critic, cfg, SamplerConfig{}, r3, nullptr, {}, &restored);
    REQUIRE(rest.records.size() == 2);
    CHECK(rest.records[0].iteration == 3);
    CHECK(rest.records[1].iteration == 4);
    CHECK(rest.records[1].mean_reward == full.records[3].mean_reward);
    CHECK(resumed.theta == whole.theta);
    CHECK(restored.completed == 4);

    std::ofstream(path, std::ios::binary) << "junk";
    CHECK_THROWS_AS(load_train_state(path), ParseError);
    std::filesystem::remove(path);
}
