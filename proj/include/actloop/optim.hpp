#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "actloop/mlp.hpp"

namespace actloop {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment accumulators over a flat parameter vector.
struct OptState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::int64_t step = 0;

    static OptState for_size(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
    friend bool operator==(const OptState&, const OptState&) = default;
};

// In-place bias-corrected Adam step. Throws NumericError on a non-finite
// gradient without touching params or state.
void adam_step(std::span<double> params, std::span<const double> grads, OptState& state, double lr,
               const AdamConfig& cfg = {});

// Value-semantics wrapper over NetParams.
std::pair<NetParams, OptState> opt_step(const NetParams& params, const NetParams& grads, const OptState& state,
                                        double lr, const AdamConfig& cfg = {});

}  // namespace actloop
