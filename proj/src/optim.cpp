#include "actloop/optim.hpp"

#include <cmath>
#include <string>

#include "actloop/error.hpp"

namespace actloop {

void adam_step(std::span<double> params, std::span<const double> grads, OptState& state, double lr,
               const AdamConfig& cfg) {
    if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
        state.second_moment.size() != params.size()) {
        throw ShapeError("optimizer state, gradients and parameters differ in size");
    }
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!std::isfinite(grads[i])) {
            throw NumericError("non-finite gradient at parameter " + std::to_string(i) + " (value " +
                               std::to_string(grads[i]) + ")");
        }
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        const double mhat = m / c1;
        const double vhat = v / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

std::pair<NetParams, OptState> opt_step(const NetParams& params, const NetParams& grads, const OptState& state,
                                        double lr, const AdamConfig& cfg) {
    if (grads.layer_sizes != params.layer_sizes) throw ShapeError("gradient layout does not match parameters");
    std::vector<double> flat = flatten(params);
    const std::vector<double> g = flatten(grads);
    OptState next = state;
    if (next.first_moment.empty()) next = OptState::for_size(flat.size());
    adam_step(flat, g, next, lr, cfg);
    NetParams out = params;
    assign_flat(out, flat);
    return {std::move(out), std::move(next)};
}

}  // namespace actloop
