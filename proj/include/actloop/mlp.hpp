#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "actloop/random.hpp"
#include "actloop/tensor.hpp"

namespace actloop {

enum class Activation { tanh, linear };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]
    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Fully connected feed-forward network. Hidden layers use `activation`, the
// output layer is always linear.
struct NetParams {
    std::vector<std::size_t> layer_sizes;
    std::vector<DenseLayer> layers;
    Activation activation = Activation::tanh;

    std::size_t input_width() const { return layer_sizes.front(); }
    std::size_t output_width() const { return layer_sizes.back(); }
    std::size_t param_count() const;

    friend bool operator==(const NetParams&, const NetParams&) = default;
};

// Zero-initialised network with the given widths.
NetParams make_zero_net(std::vector<std::size_t> layer_sizes, Activation activation = Activation::tanh);
// Glorot-uniform weights, zero biases.
NetParams make_random_net(std::vector<std::size_t> layer_sizes, RandomSource& rng,
                          Activation activation = Activation::tanh, double gain = 1.0);

// Flat view: for each layer, weights row-major followed by biases.
std::vector<double> flatten(const NetParams& params);
void assign_flat(NetParams& params, std::span<const double> flat);

// Post-activation values of every layer; values[0] is the input.
struct ForwardCache {
    std::vector<std::vector<double>> values;
    const std::vector<double>& output() const { return values.back(); }
};

std::vector<double> net_forward(const NetParams& params, std::span<const double> input);
Tensor net_forward(const NetParams& params, const Tensor& input);
ForwardCache net_forward_cached(const NetParams& params, std::span<const double> input);

struct NetGradients {
    NetParams param_grads;
    std::vector<double> input_grad;
};

NetGradients net_backward(const NetParams& params, std::span<const double> input, std::span<const double> out_grad);

// Reverse pass from an existing cache. Adds parameter gradients into
// `flat_grad` (layout of flatten()) and, when requested, writes dL/dinput.
void net_backward_accumulate(const NetParams& params, const ForwardCache& cache, std::span<const double> out_grad,
                             std::span<double> flat_grad, std::vector<double>* input_grad = nullptr);

}  // namespace actloop
