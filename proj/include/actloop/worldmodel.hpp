#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "actloop/memory.hpp"
#include "actloop/microworld.hpp"
#include "actloop/mlp.hpp"
#include "actloop/planner.hpp"
#include "actloop/random.hpp"

namespace actloop {

// Layout of the condition vector: frame | operator one-hot | object mask | step index | emphasis.
struct ContextLayout {
    int frame = 0, operators = 0, objects = 0, emphasis = 0;
    int width() const { return frame + operators + objects + 1 + emphasis; }
};

ContextLayout context_layout(const DomainSpec& spec);

std::vector<double> embed_condition(const DomainSpec& spec, const PlanStep& step, std::span<const double> frame);
std::vector<double> embed_condition(const DomainSpec& spec, const PlanStep& step, const WorldMemory& memory);
// Frame the next segment starts from: last accepted segment's final frame, else the encoded state.
std::vector<double> memory_frame(const DomainSpec& spec, const WorldMemory& memory);

struct SamplerConfig {
    int K = 10;
    double eta_scale = 0.3;
    double delta = 1e-8;

    double dt() const { return 1.0 / K; }
    double time(int k) const { return static_cast<double>(k) / K; }  // k = K..1
    double eta(double t) const;
    double step_std(double t) const;  // eta(t) * sqrt(dt)
    void validate() const;
};

// Velocity field u(z, t, c) = (skip * z - xhat(z, t, c)) / max(t, delta), where xhat is an MLP
// over the concatenated (z, t, c). The model therefore predicts the clean sample directly and
// the velocity follows from the straight-line interpolation identity.
struct VelocityModel {
    NetParams net;
    double skip = 1.0;
    int frames = 0, width = 0, cond_width = 0;

    std::size_t state_size() const { return static_cast<std::size_t>(frames) * width; }
    std::size_t param_count() const { return net.param_count() + 1; }
    friend bool operator==(const VelocityModel&, const VelocityModel&) = default;
};

VelocityModel make_velocity_model(int frames, int width, int cond_width, std::vector<std::size_t> hidden,
                                  RandomSource& rng, double output_gain = 0.1);
VelocityModel make_velocity_model(const DomainSpec& spec, RandomSource& rng);
VelocityModel zero_velocity_model(int frames, int width, int cond_width, std::vector<std::size_t> hidden);

// Flat parameter vector: network parameters followed by the skip gain.
std::vector<double> flatten(const VelocityModel& m);
void assign_flat(VelocityModel& m, std::span<const double> flat);

std::vector<double> velocity(const VelocityModel& m, std::span<const double> z, double t, std::span<const double> cond,
                             double delta = 1e-8);

// Forward pass retaining what the backward pass needs.
struct VelocityEval {
    std::vector<double> z;
    double t = 0.0, sigma = 0.0;
    ForwardCache cache;
    std::vector<double> u;
};

VelocityEval velocity_eval(const VelocityModel& m, std::span<const double> z, double t, std::span<const double> cond,
                           double delta = 1e-8);
// Adds d(<du, u>)/dparams into `grad` (flat layout).
void velocity_backward(const VelocityModel& m, const VelocityEval& ev, std::span<const double> du,
                       std::span<double> grad);

std::vector<double> score_term(std::span<const double> z, std::span<const double> x_pred, double t, double delta = 1e-8);

struct DenoiseStep {
    double t = 0.0;
    std::vector<double> z;
    std::vector<double> u;
    std::vector<double> x_pred;
    std::vector<double> mean;
    double std = 0.0;
    std::vector<double> next;
    double logp = 0.0;
};

struct DenoiseTrace {
    std::vector<DenoiseStep> steps;
    double total_logp() const;
};

// Transition mean for one reverse step at time t given the velocity u.
std::vector<double> transition_mean(std::span<const double> z, std::span<const double> u, double t,
                                    const SamplerConfig& cfg);
// d mean / d u (a scalar multiple of the identity).
double transition_mean_slope(double t, const SamplerConfig& cfg);

Segment sample_ode(const VelocityModel& m, std::span<const double> cond, std::span<const double> zK,
                   const SamplerConfig& cfg);
Segment sample_sde(const VelocityModel& m, std::span<const double> cond, std::span<const double> zK,
                   const SamplerConfig& cfg, RandomSource& rng, DenoiseTrace* trace = nullptr);

double transition_logprob(const VelocityModel& m, const DenoiseStep& step, std::span<const double> cond,
                          const SamplerConfig& cfg);
// Adds d logp / d params into `grad`; returns logp.
double transition_logprob_grad(const VelocityModel& m, const DenoiseStep& step, std::span<const double> cond,
                               const SamplerConfig& cfg, std::span<double> grad);

Segment clip_segment(Segment seg);
Segment to_segment(std::span<const double> flat, int frames, int width);

// Flow-matching regression.
struct SftSample {
    std::vector<double> cond;
    std::vector<double> x;    // clean segment, flattened
    std::vector<double> eps;  // noise
    double t = 1.0;
};

double sft_loss(const VelocityModel& m, std::span<const SftSample> batch, std::span<double> grad = {},
                double delta = 1e-8);

struct Demo {
    std::vector<double> cond;
    Segment segment;
};

struct SftConfig {
    int epochs = 50;
    double lr = 1e-3;
    int batch = 16;
    int passes = 1;        // times each demo is visited per epoch
    double t_min = 0.1;    // times drawn from U[t_min, 1]
    double lr_decay = 1.0; // multiplicative per epoch
};

struct SftResult {
    VelocityModel model;
    std::vector<double> epoch_loss;  // mean training loss per epoch
    double initial_loss = 0.0;       // loss before the first update on a fixed probe batch
    double final_loss = 0.0;         // same probe batch after training
};

SftResult sft_train(const VelocityModel& init, const std::vector<Demo>& data, const SftConfig& cfg, RandomSource& rng);

// Demonstrations: reference segments for random legal (state, action) pairs reached by walking the domain.
struct DemoConfig {
    int count = 200;
    double jitter = 0.02;
    double emphasis_prob = 0.5;
    int max_walk = 8;
    double cond_noise = 0.02;  // perturbation of the condition frame, mimicking generated history
};

std::vector<Demo> generate_demos(const DomainSpec& spec, const DemoConfig& cfg, RandomSource& rng);

struct PolicyBundle {
    VelocityModel theta, theta_old, reference;
};

struct PolicyManifest {
    std::uint64_t domain_hash = 0;
    int frames = 0, width = 0, cond_width = 0, K = 0;
    double eta_scale = 0.0;
    std::vector<std::size_t> layers;
    friend bool operator==(const PolicyManifest&, const PolicyManifest&) = default;
};

PolicyManifest make_manifest(const DomainSpec& spec, const VelocityModel& m, const SamplerConfig& cfg);
void save_policy(const std::string& path, const VelocityModel& m, const PolicyManifest& manifest);
// Refuses (ConfigError) when the sidecar manifest does not match `expected` on domain hash, F, d, K or eta_scale.
VelocityModel load_policy(const std::string& path, const PolicyManifest& expected);
PolicyManifest read_manifest(const std::string& path);

}  // namespace actloop
