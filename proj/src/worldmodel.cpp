#include "actloop/worldmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "actloop/checkpoint.hpp"
#include "actloop/error.hpp"
#include "actloop/numerics.hpp"
#include "actloop/optim.hpp"
#include "json.hpp"

namespace actloop {

namespace {

constexpr double kMaxStepIndex = 10.0;

void check_finite(std::span<const double> v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw NumericError(std::string("sampler diverged: non-finite ") + what);
}

std::vector<double> net_input(const VelocityModel& m, std::span<const double> z, double t,
                              std::span<const double> cond) {
    if (z.size() != m.state_size())
        throw ShapeError("velocity: state width " + std::to_string(z.size()) + " != " + std::to_string(m.state_size()));
    if (cond.size() != static_cast<std::size_t>(m.cond_width))
        throw ShapeError("velocity: condition width " + std::to_string(cond.size()) + " != " +
                         std::to_string(m.cond_width));
    std::vector<double> in;
    in.reserve(z.size() + 1 + cond.size());
    in.insert(in.end(), z.begin(), z.end());
    in.push_back(t);
    in.insert(in.end(), cond.begin(), cond.end());
    return in;
}

}  // namespace

ContextLayout context_layout(const DomainSpec& spec) {
    return {spec.width(), static_cast<int>(spec.operators.size()), static_cast<int>(spec.objects.size()),
            spec.width()};
}

std::vector<double> embed_condition(const DomainSpec& spec, const PlanStep& step, std::span<const double> frame) {
    if (step.action < 0 || static_cast<std::size_t>(step.action) >= spec.actions.size())
        throw ConfigError("step " + std::to_string(step.sid) + " does not reference a domain operator");
    if (frame.size() != static_cast<std::size_t>(spec.width())) throw ShapeError("condition frame has the wrong width");
    const auto layout = context_layout(spec);
    const auto& action = spec.actions[step.action];
    std::vector<double> c(layout.width(), 0.0);
    std::size_t off = 0;
    std::copy(frame.begin(), frame.end(), c.begin());
    off += layout.frame;
    c[off + action.op] = 1.0;
    off += layout.operators;
    for (int o : action.objects) c[off + o] = 1.0;
    if (action.tool) c[off + *action.tool] = 1.0;
    off += layout.objects;
    c[off] = std::min(step.sid, static_cast<int>(kMaxStepIndex)) / kMaxStepIndex;
    off += 1;
    for (const auto& l : step.emphasis) c[off + spec.predicates[l.predicate].channel] = 1.0;
    return c;
}

std::vector<double> memory_frame(const DomainSpec& spec, const WorldMemory& memory) {
    if (memory.transitions.empty()) return encode_state(spec, memory.state);
    const auto& seg = memory.transitions.back().segment;
    const auto row = seg.row(seg.frames - 1);
    return {row.begin(), row.end()};
}

std::vector<double> embed_condition(const DomainSpec& spec, const PlanStep& step, const WorldMemory& memory) {
    return embed_condition(spec, step, memory_frame(spec, memory));
}

double SamplerConfig::eta(double t) const { return eta_scale * std::sqrt(t); }
double SamplerConfig::step_std(double t) const { return eta(t) * std::sqrt(dt()); }

void SamplerConfig::validate() const {
    if (K < 1) throw ConfigError("sampler needs K >= 1");
    if (!(eta_scale >= 0.0)) throw ConfigError("eta_scale must be >= 0");
    if (!(delta > 0.0)) throw ConfigError("delta must be > 0");
}

VelocityModel make_velocity_model(int frames, int width, int cond_width, std::vector<std::size_t> hidden,
                                  RandomSource& rng, double output_gain) {
    std::vector<std::size_t> sizes;
    const std::size_t n = static_cast<std::size_t>(frames) * width;
    sizes.push_back(n + 1 + cond_width);
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(n);
    VelocityModel m{make_random_net(sizes, rng), 1.0, frames, width, cond_width};
    for (auto& w : m.net.layers.back().weight.data()) w *= output_gain;
    return m;
}

VelocityModel make_velocity_model(const DomainSpec& spec, RandomSource& rng) {
    return make_velocity_model(spec.frames, spec.width(), context_layout(spec).width(), {64, 64, 64}, rng);
}

VelocityModel zero_velocity_model(int frames, int width, int cond_width, std::vector<std::size_t> hidden) {
    std::vector<std::size_t> sizes;
    const std::size_t n = static_cast<std::size_t>(frames) * width;
    sizes.push_back(n + 1 + cond_width);
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(n);
    return VelocityModel{make_zero_net(sizes), 0.0, frames, width, cond_width};
}

std::vector<double> flatten(const VelocityModel& m) {
    auto flat = flatten(m.net);
    flat.push_back(m.skip);
    return flat;
}

void assign_flat(VelocityModel& m, std::span<const double> flat) {
    if (flat.size() != m.param_count()) throw ShapeError("velocity model: flat parameter size mismatch");
    assign_flat(m.net, flat.first(flat.size() - 1));
    m.skip = flat.back();
}

VelocityEval velocity_eval(const VelocityModel& m, std::span<const double> z, double t, std::span<const double> cond,
                           double delta) {
    VelocityEval ev;
    ev.z.assign(z.begin(), z.end());
    ev.t = t;
    ev.sigma = std::max(t, delta);
    ev.cache = net_forward_cached(m.net, net_input(m, z, t, cond));
    const auto& xhat = ev.cache.output();
    ev.u.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) ev.u[i] = (m.skip * z[i] - xhat[i]) / ev.sigma;
    return ev;
}

std::vector<double> velocity(const VelocityModel& m, std::span<const double> z, double t, std::span<const double> cond,
                             double delta) {
    if (!(t > 0.0 && t <= 1.0)) throw ConfigError("velocity: t must lie in (0, 1]");
    return velocity_eval(m, z, t, cond, delta).u;
}

void velocity_backward(const VelocityModel& m, const VelocityEval& ev, std::span<const double> du,
                       std::span<double> grad) {
    if (grad.size() != m.param_count()) throw ShapeError("velocity_backward: gradient buffer size mismatch");
    std::vector<double> dxhat(du.size());
    double dskip = 0.0;
    for (std::size_t i = 0; i < du.size(); ++i) {
        dxhat[i] = -du[i] / ev.sigma;
        dskip += du[i] * ev.z[i] / ev.sigma;
    }
    net_backward_accumulate(m.net, ev.cache, dxhat, grad.first(grad.size() - 1));
    grad.back() += dskip;
}

std::vector<double> score_term(std::span<const double> z, std::span<const double> x_pred, double t, double delta) {
    const double alpha = 1.0 - t;
    const double sigma = std::max(t, delta);
    std::vector<double> s(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) s[i] = -(z[i] - alpha * x_pred[i]) / (sigma * sigma);
    return s;
}

double DenoiseTrace::total_logp() const {
    double s = 0.0;
    for (const auto& st : steps) s += st.logp;
    return s;
}

std::vector<double> transition_mean(std::span<const double> z, std::span<const double> u, double t,
                                    const SamplerConfig& cfg) {
    const double dt = cfg.dt();
    std::vector<double> mean(z.size());
    const double eta = cfg.eta(t);
    if (eta == 0.0) {
        for (std::size_t i = 0; i < z.size(); ++i) mean[i] = z[i] - dt * u[i];
        return mean;
    }
    std::vector<double> x_pred(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) x_pred[i] = z[i] - t * u[i];
    const auto score = score_term(z, x_pred, t, cfg.delta);
    const double half_eta2 = 0.5 * eta * eta;
    for (std::size_t i = 0; i < z.size(); ++i) mean[i] = z[i] - dt * (u[i] - half_eta2 * score[i]);
    return mean;
}

double transition_mean_slope(double t, const SamplerConfig& cfg) {
    const double eta = cfg.eta(t);
    if (eta == 0.0) return -cfg.dt();
    const double sigma = std::max(t, cfg.delta);
    return -cfg.dt() * (1.0 + 0.5 * eta * eta * (1.0 - t) * t / (sigma * sigma));
}

Segment to_segment(std::span<const double> flat, int frames, int width) {
    if (flat.size() != static_cast<std::size_t>(frames) * width) throw ShapeError("segment size mismatch");
    Segment s(frames, width);
    std::copy(flat.begin(), flat.end(), s.data.begin());
    return s;
}

Segment clip_segment(Segment seg) {
    for (auto& v : seg.data) v = std::clamp(v, 0.0, 1.0);
    return seg;
}

Segment sample_ode(const VelocityModel& m, std::span<const double> cond, std::span<const double> zK,
                   const SamplerConfig& cfg) {
    cfg.validate();
    std::vector<double> z(zK.begin(), zK.end());
    const double dt = cfg.dt();
    for (int k = cfg.K; k >= 1; --k) {
        const auto u = velocity(m, z, cfg.time(k), cond, cfg.delta);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = z[i] - dt * u[i];
        check_finite(z, "state");
    }
    return to_segment(z, m.frames, m.width);
}

Segment sample_sde(const VelocityModel& m, std::span<const double> cond, std::span<const double> zK,
                   const SamplerConfig& cfg, RandomSource& rng, DenoiseTrace* trace) {
    cfg.validate();
    std::vector<double> z(zK.begin(), zK.end());
    if (trace) trace->steps.clear();
    for (int k = cfg.K; k >= 1; --k) {
        const double t = cfg.time(k);
        const auto u = velocity(m, z, t, cond, cfg.delta);
        auto mean = transition_mean(z, u, t, cfg);
        const double std = cfg.step_std(t);
        std::vector<double> next = mean;
        if (std > 0.0)
            for (auto& v : next) v += std * rng.normal();
        check_finite(next, "state");
        if (trace) {
            DenoiseStep st;
            st.t = t;
            st.z = z;
            st.u = u;
            st.x_pred.resize(z.size());
            for (std::size_t i = 0; i < z.size(); ++i) st.x_pred[i] = z[i] - t * u[i];
            st.mean = mean;
            st.std = std;
            st.next = next;
            st.logp = std > 0.0 ? gaussian_logpdf(next, mean, std) : 0.0;
            trace->steps.push_back(std::move(st));
        }
        z = std::move(next);
    }
    return to_segment(z, m.frames, m.width);
}

double transition_logprob(const VelocityModel& m, const DenoiseStep& step, std::span<const double> cond,
                          const SamplerConfig& cfg) {
    const double std = cfg.step_std(step.t);
    if (!(std > 0.0)) throw ConfigError("transition_logprob needs a stochastic sampler (eta_scale > 0)");
    const auto u = velocity(m, step.z, step.t, cond, cfg.delta);
    return gaussian_logpdf(step.next, transition_mean(step.z, u, step.t, cfg), std);
}

double transition_logprob_grad(const VelocityModel& m, const DenoiseStep& step, std::span<const double> cond,
                               const SamplerConfig& cfg, std::span<double> grad) {
    const double std = cfg.step_std(step.t);
    if (!(std > 0.0)) throw ConfigError("transition_logprob needs a stochastic sampler (eta_scale > 0)");
    const auto ev = velocity_eval(m, step.z, step.t, cond, cfg.delta);
    const auto mean = transition_mean(step.z, ev.u, step.t, cfg);
    const double slope = transition_mean_slope(step.t, cfg);
    std::vector<double> du(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i) du[i] = (step.next[i] - mean[i]) / (std * std) * slope;
    velocity_backward(m, ev, du, grad);
    return gaussian_logpdf(step.next, mean, std);
}

double sft_loss(const VelocityModel& m, std::span<const SftSample> batch, std::span<double> grad, double delta) {
    if (batch.empty()) return 0.0;
    const std::size_t n = m.state_size();
    const double scale = 1.0 / (static_cast<double>(batch.size()) * n);
    double loss = 0.0;
    std::vector<double> z(n), du(n);
    for (const auto& s : batch) {
        if (s.x.size() != n || s.eps.size() != n) throw ShapeError("sft sample has the wrong size");
        for (std::size_t i = 0; i < n; ++i) z[i] = (1.0 - s.t) * s.x[i] + s.t * s.eps[i];
        const auto ev = velocity_eval(m, z, s.t, s.cond, delta);
        for (std::size_t i = 0; i < n; ++i) {
            const double r = ev.u[i] - (s.eps[i] - s.x[i]);
            loss += r * r * scale;
            du[i] = 2.0 * r * scale;
        }
        if (!grad.empty()) velocity_backward(m, ev, du, grad);
    }
    if (!std::isfinite(loss)) throw NumericError("sft loss is not finite");
    return loss;
}

SftResult sft_train(const VelocityModel& init, const std::vector<Demo>& data, const SftConfig& cfg, RandomSource& rng) {
    if (data.empty()) throw ConfigError("sft_train needs at least one demonstration");
    if (cfg.epochs < 0 || cfg.batch < 1 || cfg.passes < 1) throw ConfigError("invalid sft configuration");
    if (!(cfg.t_min > 0.0 && cfg.t_min <= 1.0)) throw ConfigError("sft t_min must lie in (0, 1]");
    SftResult res{init, {}, 0.0, 0.0};
    const std::size_t n = init.state_size();

    auto draw = [&](const Demo& d, RandomSource& r) {
        SftSample s;
        s.cond = d.cond;
        s.x = d.segment.data;
        s.eps = r.normal_vector(n);
        s.t = r.uniform(cfg.t_min, 1.0);
        return s;
    };
    // Fixed probe batch so initial and final losses are comparable.
    RandomSource probe_rng = rng.split(0x5f7);
    std::vector<SftSample> probe;
    for (std::size_t i = 0; i < std::min<std::size_t>(data.size(), 64); ++i)
        probe.push_back(draw(data[(i * data.size()) / std::min<std::size_t>(data.size(), 64)], probe_rng));
    res.initial_loss = sft_loss(init, probe);

    auto flat = flatten(res.model);
    std::vector<double> grad(flat.size());
    OptState opt = OptState::for_size(flat.size());
    std::vector<std::size_t> order;
    for (int p = 0; p < cfg.passes; ++p)
        for (std::size_t i = 0; i < data.size(); ++i) order.push_back(i);
    double lr = cfg.lr;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
            std::vector<SftSample> batch;
            for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch); ++i) batch.push_back(draw(data[order[i]], rng));
            std::fill(grad.begin(), grad.end(), 0.0);
            total += sft_loss(res.model, batch, grad);
            ++batches;
            adam_step(flat, grad, opt, lr);
            assign_flat(res.model, flat);
        }
        res.epoch_loss.push_back(total / static_cast<double>(batches));
        lr *= cfg.lr_decay;
    }
    res.final_loss = sft_loss(res.model, probe);
    return res;
}

std::vector<Demo> generate_demos(const DomainSpec& spec, const DemoConfig& cfg, RandomSource& rng) {
    if (spec.actions.empty()) throw ConfigError("domain has no operators to demonstrate");
    std::vector<Demo> demos;
    demos.reserve(cfg.count);
    while (static_cast<int>(demos.size()) < cfg.count) {
        SymbolicState s = spec.initial;
        const int walk = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_walk) + 1));
        int steps = 0;
        auto legal_actions = [&](const SymbolicState& st) {
            std::vector<int> legal;
            for (std::size_t a = 0; a < spec.actions.size(); ++a)
                if (holds_all(st, spec.actions[a].pre)) legal.push_back(static_cast<int>(a));
            return legal;
        };
        for (; steps < walk; ++steps) {
            const auto legal = legal_actions(s);
            if (legal.empty()) break;
            s = apply_operator(spec, s, legal[rng.below(legal.size())]);
        }
        const auto legal = legal_actions(s);
        if (legal.empty()) continue;
        const int a = legal[rng.below(legal.size())];
        PlanStep step = make_step(spec, steps + 1, a);
        if (rng.uniform() < cfg.emphasis_prob) step.emphasis = step.post;
        Demo d;
        d.segment = reference_segment(spec, s, spec.actions[a], spec.frames, &rng, cfg.jitter);
        auto frame = encode_state(spec, s);
        if (cfg.cond_noise > 0.0)
            for (auto& v : frame) v = std::clamp(v + rng.uniform(-cfg.cond_noise, cfg.cond_noise), 0.0, 1.0);
        d.cond = embed_condition(spec, step, frame);
        demos.push_back(std::move(d));
    }
    return demos;
}

PolicyManifest make_manifest(const DomainSpec& spec, const VelocityModel& m, const SamplerConfig& cfg) {
    return {spec.content_hash, m.frames, m.width, m.cond_width, cfg.K, cfg.eta_scale, m.net.layer_sizes};
}

namespace {

std::string manifest_path(const std::string& path) { return path + ".manifest.json"; }

}  // namespace

void save_policy(const std::string& path, const VelocityModel& m, const PolicyManifest& manifest) {
    write_checkpoint(path, Checkpoint{m.net, {m.skip}});
    nlohmann::json j;
    j["domain_hash"] = manifest.domain_hash;
    j["frames"] = manifest.frames;
    j["width"] = manifest.width;
    j["cond_width"] = manifest.cond_width;
    j["K"] = manifest.K;
    j["eta_scale"] = manifest.eta_scale;
    j["layers"] = manifest.layers;
    std::ofstream out(manifest_path(path));
    if (!out) throw ConfigError("cannot write manifest next to '" + path + "'");
    out << j.dump(2) << "\n";
}

PolicyManifest read_manifest(const std::string& path) {
    std::ifstream in(manifest_path(path));
    if (!in) throw ConfigError("checkpoint '" + path + "' has no manifest");
    try {
        const auto j = nlohmann::json::parse(in);
        PolicyManifest m;
        m.domain_hash = j.at("domain_hash").get<std::uint64_t>();
        m.frames = j.at("frames").get<int>();
        m.width = j.at("width").get<int>();
        m.cond_width = j.at("cond_width").get<int>();
        m.K = j.at("K").get<int>();
        m.eta_scale = j.at("eta_scale").get<double>();
        m.layers = j.at("layers").get<std::vector<std::size_t>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("manifest for '" + path + "' is malformed: " + e.what());
    }
}

VelocityModel load_policy(const std::string& path, const PolicyManifest& expected) {
    const auto found = read_manifest(path);
    auto mismatch = [&](const std::string& field) {
        return ConfigError("checkpoint '" + path + "' was trained with a different " + field);
    };
    if (found.domain_hash != expected.domain_hash) throw mismatch("domain");
    if (found.frames != expected.frames) throw mismatch("frame count F");
    if (found.width != expected.width) throw mismatch("channel width d");
    if (found.K != expected.K) throw mismatch("step count K");
    if (found.eta_scale != expected.eta_scale) throw mismatch("eta_scale");
    if (found.cond_width != expected.cond_width) throw mismatch("condition width");
    const auto ck = read_checkpoint(path);
    if (ck.extras.size() != 1) throw ParseError("checkpoint '" + path + "' lacks the skip gain");
    VelocityModel m{ck.net, ck.extras[0], found.frames, found.width, found.cond_width};
    if (m.net.input_width() != m.state_size() + 1 + m.cond_width || m.net.output_width() != m.state_size())
        throw ParseError("checkpoint '" + path + "' network does not match its manifest");
    return m;
}

}  // namespace actloop
