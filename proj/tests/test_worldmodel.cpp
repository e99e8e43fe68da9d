#include <cmath>
#include <filesystem>

#include "actloop/error.hpp"
#include "actloop/numerics.hpp"
#include "actloop/worldmodel.hpp"
#include "doctest.h"

using namespace actloop;

namespace {

const DomainSpec& kitchen() {
    static const DomainSpec spec = load_domain(bundled_domain_path("kitchen"));
    return spec;
}

// 2 frames x 2 channels, condition of width 2, one hidden layer of 4: 53 parameters with the skip gain.
VelocityModel tiny_model(RandomSource& rng) {
    auto m = make_velocity_model(2, 2, 2, {4}, rng, 1.0);
    m.skip = 0.8;
    return m;
}

std::vector<double> random_vec(RandomSource& rng, std::size_t n, double scale = 1.0) {
    auto v = rng.normal_vector(n);
    for (auto& x : v) x *= scale;
    return v;
}

}  // namespace

TEST_CASE("velocity: zero model, determinism, shape checks") {
    const auto zero = zero_velocity_model(3, 2, 4, {5, 5});
    RandomSource rng(1);
    const auto z = random_vec(rng, 6);
    const auto c = random_vec(rng, 4);
    for (double u : velocity(zero, z, 0.5, c)) CHECK(u == 0.0);

    const auto m = make_velocity_model(3, 2, 4, {5, 5}, rng);
    CHECK(velocity(m, z, 0.3, c) == velocity(m, z, 0.3, c));
    CHECK_THROWS_AS(velocity(m, std::vector<double>(5, 0.0), 0.3, c), ShapeError);
    CHECK_THROWS_AS(velocity(m, z, 0.3, std::vector<double>(3, 0.0)), ShapeError);
    CHECK_THROWS_AS(velocity(m, z, 0.0, c), ConfigError);
    CHECK(m.param_count() == flatten(m).size());
}

TEST_CASE("velocity: parameter gradient matches finite differences") {
    RandomSource rng(2);
    auto m = tiny_model(rng);
    REQUIRE(m.param_count() == 53);
    const auto z = random_vec(rng, 4), c = random_vec(rng, 2), w = random_vec(rng, 4);
    const double t = 0.37;
    auto objective = [&](std::span<const double> p) {
        auto mm = m;
        assign_flat(mm, p);
        const auto u = velocity(mm, z, t, c);
        double s = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) s += w[i] * u[i];
        return s;
    };
    std::vector<double> grad(m.param_count(), 0.0);
    velocity_backward(m, velocity_eval(m, z, t, c), w, grad);
    const auto flat = flatten(m);
    const auto fd = finite_diff_grad(objective, flat, 1e-6);
    CHECK(max_relative_error(grad, fd, 1e-6) < 1e-4);
}

TEST_CASE("sample_ode: zero drift, one step, equality with the eta = 0 SDE") {
    RandomSource rng(3);
    const auto zero = zero_velocity_model(2, 3, 2, {4});
    const auto zK = random_vec(rng, 6);
    const std::vector<double> c = {0.1, 0.2};
    const auto seg = sample_ode(zero, c, zK, SamplerConfig{});
    CHECK(seg.data == zK);
    CHECK(seg.frames == 2);

    const auto m = make_velocity_model(2, 3, 2, {4}, rng, 1.0);
    SamplerConfig one;
    one.K = 1;
    const auto u = velocity(m, zK, 1.0, c);
    const auto s1 = sample_ode(m, c, zK, one);
    for (std::size_t i = 0; i < zK.size(); ++i) CHECK(s1.data[i] == zK[i] - u[i]);

    SamplerConfig bad;
    bad.K = 0;
    CHECK_THROWS_AS(sample_ode(m, c, zK, bad), ConfigError);
}

TEST_CASE("sample_sde with eta_scale 0 is bitwise the ODE path on 100 triples") {
    RandomSource rng(4);
    SamplerConfig cfg;
    cfg.eta_scale = 0.0;
    for (int n = 0; n < 100; ++n) {
        const auto m = make_velocity_model(3, 2, 3, {6, 6}, rng, 1.0);
        const auto c = random_vec(rng, 3), zK = random_vec(rng, 6);
        RandomSource noise(1000 + n);
        DenoiseTrace trace;
        const auto sde = sample_sde(m, c, zK, cfg, noise, &trace);
        const auto ode = sample_ode(m, c, zK, cfg);
        CHECK(sde.data == ode.data);
        REQUIRE(trace.steps.size() == 10u);
        for (const auto& st : trace.steps) CHECK(st.std == 0.0);
        CHECK_THROWS_AS(transition_logprob(m, trace.steps[0], c, cfg), ConfigError);
    }
}

TEST_CASE("sample_sde: seeded reproducibility and trace bookkeeping") {
    RandomSource rng(5);
    const auto m = make_velocity_model(2, 3, 2, {5}, rng, 1.0);
    const auto c = random_vec(rng, 2), zK = random_vec(rng, 6);
    SamplerConfig cfg;
    RandomSource a(9), b(9);
    DenoiseTrace ta, tb;
    const auto sa = sample_sde(m, c, zK, cfg, a, &ta);
    const auto sb = sample_sde(m, c, zK, cfg, b, &tb);
    CHECK(sa.data == sb.data);
    REQUIRE(ta.steps.size() == static_cast<std::size_t>(cfg.K));
    for (std::size_t k = 0; k < ta.steps.size(); ++k) {
        const auto& st = ta.steps[k];
        CHECK(st.logp == tb.steps[k].logp);
        CHECK(st.std > 0.0);
        CHECK(std::isfinite(st.logp));
        CHECK(st.t == doctest::Approx(1.0 - 0.1 * k));
        for (std::size_t i = 0; i < st.z.size(); ++i) CHECK(st.x_pred[i] == st.z[i] - st.t * st.u[i]);
        if (k + 1 < ta.steps.size()) CHECK(ta.steps[k + 1].z == st.next);
    }
    CHECK(ta.steps.front().z == zK);
    CHECK(ta.steps.back().next == sa.data);
}

TEST_CASE("sample_sde: first-transition std matches eta_1 * sqrt(dt) within 3%") {
    RandomSource rng(6);
    const auto m = make_velocity_model(2, 2, 2, {4}, rng, 1.0);
    const std::vector<double> c = {0.3, 0.7}, zK = {0.1, -0.2, 0.4, 1.0};
    SamplerConfig cfg;
    cfg.K = 1;  // one transition: the output is exactly the first transition's sample
    const auto mean = transition_mean(zK, velocity(m, zK, 1.0, c), 1.0, cfg);
    double sum = 0.0, sq = 0.0;
    const int n = 10000;
    for (int r = 0; r < n; ++r) {
        RandomSource noise(static_cast<std::uint64_t>(r) + 1);
        const auto seg = sample_sde(m, c, zK, cfg, noise);
        const double e = seg.data[0] - mean[0];
        sum += e;
        sq += e * e;
    }
    const double mu = sum / n;
    const double sd = std::sqrt(sq / n - mu * mu);
    const double expected = cfg.eta_scale * std::sqrt(1.0) * std::sqrt(cfg.dt());
    CHECK(std::abs(sd / expected - 1.0) < 0.03);
    SamplerConfig ten;
    CHECK(ten.step_std(1.0) == doctest::Approx(0.3 * std::sqrt(0.1)));
}

TEST_CASE("score_term: conditional mean, endpoints, linearity") {
    const std::vector<double> x = {0.2, -0.4, 1.5};
    const double t = 0.3;
    std::vector<double> z(3);
    for (int i = 0; i < 3; ++i) z[i] = (1 - t) * x[i];
    for (double s : score_term(z, x, t)) CHECK(s == doctest::Approx(0.0));

    const std::vector<double> z1 = {0.5, -1.0, 2.0};
    const auto s1 = score_term(z1, x, 1.0);
    for (int i = 0; i < 3; ++i) CHECK(s1[i] == doctest::Approx(-z1[i]));

    std::vector<double> zr(3), zr2(3);
    for (int i = 0; i < 3; ++i) {
        zr[i] = (1 - t) * x[i] + 0.1 * (i + 1);
        zr2[i] = (1 - t) * x[i] + 0.2 * (i + 1);
    }
    const auto a = score_term(zr, x, t), b = score_term(zr2, x, t);
    for (int i = 0; i < 3; ++i) CHECK(b[i] == doctest::Approx(2 * a[i]));
    for (double s : score_term(z1, x, 0.0)) CHECK(std::isfinite(s));
}

TEST_CASE("transition_logprob: self-consistency, mode, additivity, trace total") {
    RandomSource rng(7);
    const auto m = make_velocity_model(2, 3, 2, {5}, rng, 1.0);
    const auto c = random_vec(rng, 2), zK = random_vec(rng, 6);
    SamplerConfig cfg;
    DenoiseTrace trace;
    sample_sde(m, c, zK, cfg, rng, &trace);
    double total = 0.0;
    for (const auto& st : trace.steps) {
        const double lp = transition_logprob(m, st, c, cfg);
        CHECK(std::abs(lp - st.logp) <= 1e-12 * std::max(1.0, std::abs(lp)));
        total += lp;

        DenoiseStep at_mean = st;
        at_mean.next = st.mean;
        const double best = transition_logprob(m, at_mean, c, cfg);
        for (int p = 0; p < 5; ++p) {
            DenoiseStep moved = at_mean;
            moved.next[rng.below(moved.next.size())] += rng.uniform(-0.05, 0.05);
            CHECK(transition_logprob(m, moved, c, cfg) <= best);
        }

        double parts = 0.0;
        for (std::size_t i = 0; i < st.next.size(); ++i)
            parts += gaussian_logpdf(std::span(st.next).subspan(i, 1), std::span(st.mean).subspan(i, 1), st.std);
        CHECK(parts == doctest::Approx(lp).epsilon(1e-12));
    }
    CHECK(std::abs(total - trace.total_logp()) <= 1e-10);
}

TEST_CASE("transition_logprob gradient matches finite differences") {
    RandomSource rng(8);
    auto m = tiny_model(rng);
    const auto c = random_vec(rng, 2), zK = random_vec(rng, 4);
    SamplerConfig cfg;
    cfg.K = 4;
    DenoiseTrace trace;
    sample_sde(m, c, zK, cfg, rng, &trace);
    for (const auto& st : trace.steps) {
        std::vector<double> grad(m.param_count(), 0.0);
        const double lp = transition_logprob_grad(m, st, c, cfg, grad);
        CHECK(lp == doctest::Approx(st.logp).epsilon(1e-12));
        auto objective = [&](std::span<const double> p) {
            auto mm = m;
            assign_flat(mm, p);
            return transition_logprob(mm, st, c, cfg);
        };
        const auto fd = finite_diff_grad(objective, flatten(m), 1e-6);
        CHECK(max_relative_error(grad, fd, 1e-5) < 1e-4);
    }
}

TEST_CASE("sft_loss gradient matches finite differences on a 53-parameter net") {
    RandomSource rng(9);
    auto m = tiny_model(rng);
    std::vector<SftSample> batch;
    for (int i = 0; i < 5; ++i)
        batch.push_back({random_vec(rng, 2), random_vec(rng, 4, 0.5), random_vec(rng, 4), rng.uniform(0.1, 1.0)});
    std::vector<double> grad(m.param_count(), 0.0);
    const double loss = sft_loss(m, batch, grad);
    CHECK(loss > 0.0);
    auto objective = [&](std::span<const double> p) {
        auto mm = m;
        assign_flat(mm, p);
        return sft_loss(mm, batch);
    };
    const auto fd = finite_diff_grad(objective, flatten(m), 1e-6);
    CHECK(max_relative_error(grad, fd, 1e-6) < 1e-4);
}

TEST_CASE("sft_train: zero epochs, overfitting one segment, demo learning curve") {
    const auto& k = kitchen();
    RandomSource rng(10);
    DemoConfig dc;
    dc.count = 1;
    const auto one = generate_demos(k, dc, rng);
    const auto init = make_velocity_model(k, rng);

    SftConfig none;
    none.epochs = 0;
    RandomSource r0(1);
    const auto unchanged = sft_train(init, one, none, r0);
    CHECK(unchanged.model == init);
    CHECK(unchanged.epoch_loss.empty());
    CHECK_THROWS_AS(sft_train(init, {}, none, r0), ConfigError);

    SftConfig fit;
    fit.epochs = 600;
    fit.passes = 16;
    fit.lr = 2e-3;
    RandomSource r1(2);
    const auto overfit = sft_train(init, one, fit, r1);
    SamplerConfig cfg;
    double worst = 0.0;
    for (int s = 0; s < 5; ++s) {
        const auto zK = r1.normal_vector(init.state_size());
        const auto seg = sample_ode(overfit.model, one[0].cond, zK, cfg);
        for (std::size_t i = 0; i < seg.data.size(); ++i)
            worst = std::max(worst, std::abs(seg.data[i] - one[0].segment.data[i]));
    }
    CHECK(worst < 0.1);

    dc.count = 200;
    const auto demos = generate_demos(k, dc, rng);
    SftConfig curve;
    curve.epochs = 50;
    RandomSource r2(3);
    const auto trained = sft_train(init, demos, curve, r2);
    REQUIRE(trained.epoch_loss.size() == 50u);
    CHECK(trained.final_loss < 0.5 * trained.initial_loss);
    CHECK(trained.epoch_loss.back() < trained.epoch_loss.front());
}

TEST_CASE("generate_demos: reference segments with valid conditions") {
    const auto& k = kitchen();
    RandomSource rng(11);
    DemoConfig dc;
    dc.count = 50;
    const auto demos = generate_demos(k, dc, rng);
    REQUIRE(demos.size() == 50u);
    const auto layout = context_layout(k);
    for (const auto& d : demos) {
        CHECK(d.cond.size() == static_cast<std::size_t>(layout.width()));
        CHECK(d.segment.frames == k.frames);
        for (double v : d.segment.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        for (int c = 0; c < layout.frame; ++c) CHECK(std::abs(d.cond[c] - d.segment.at(0, c)) <= 0.02 + 1e-12);
    }
    RandomSource again(11);
    CHECK(generate_demos(k, dc, again)[7].segment.data == demos[7].segment.data);
}

TEST_CASE("embed_condition: cold start, determinism, memory frame") {
    const auto& k = kitchen();
    const auto step = make_step(k, 1, *find_action(k, "grasp", {"jar"}));
    auto memory = make_memory(k.initial);
    const auto c0 = embed_condition(k, step, memory);
    const auto init = encode_state(k, k.initial);
    CHECK(std::equal(init.begin(), init.end(), c0.begin()));
    CHECK(embed_condition(k, step, memory) == c0);

    Segment seg = reference_segment(k, k.initial, k.actions[step.action], k.frames, nullptr, 0.0);
    seg.at(seg.frames - 1, 10) = 0.42;
    memory.transitions.push_back({step, seg, 0.9});
    const auto c1 = embed_condition(k, step, memory);
    const auto last = seg.row(seg.frames - 1);
    CHECK(std::equal(last.begin(), last.end(), c1.begin()));

    PlanStep emphasised = step;
    emphasised.emphasis = step.post;
    CHECK(embed_condition(k, emphasised, memory) != c1);
    PlanStep unknown = step;
    unknown.action = 999;
    CHECK_THROWS_AS(embed_condition(k, unknown, memory), ConfigError);
}

TEST_CASE("policy checkpoints refuse mismatched manifests") {
    const auto& k = kitchen();
    RandomSource rng(12);
    const auto m = make_velocity_model(k, rng);
    SamplerConfig cfg;
    const auto dir = std::filesystem::temp_directory_path() / "actloop_wm_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "policy.ckpt").string();
    const auto manifest = make_manifest(k, m, cfg);
    save_policy(path, m, manifest);
    CHECK(read_manifest(path) == manifest);
    CHECK(load_policy(path, manifest) == m);

    auto other = manifest;
    other.K = 20;
    CHECK_THROWS_AS(load_policy(path, other), ConfigError);
    other = manifest;
    other.domain_hash ^= 1;
    CHECK_THROWS_AS(load_policy(path, other), ConfigError);
    other = manifest;
    other.eta_scale = 0.5;
    CHECK_THROWS_AS(load_policy(path, other), ConfigError);
    std::filesystem::remove_all(dir);
}
