#include "actloop/mlp.hpp"

#include <cmath>

#include "actloop/error.hpp"

namespace actloop {

std::string to_string(Activation a) {
    switch (a) {
        case Activation::tanh: return "tanh";
        case Activation::linear: return "linear";
    }
    return "unknown";
}

Activation activation_from_string(const std::string& name) {
    if (name == "tanh") return Activation::tanh;
    if (name == "linear") return Activation::linear;
    throw ConfigError("unknown activation '" + name + "'");
}

std::size_t NetParams::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

NetParams make_zero_net(std::vector<std::size_t> layer_sizes, Activation activation) {
    if (layer_sizes.size() < 2) throw ShapeError("a network needs at least an input and an output width");
    NetParams p;
    p.activation = activation;
    for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i) {
        if (layer_sizes[i] == 0 || layer_sizes[i + 1] == 0) throw ShapeError("layer widths must be positive");
        p.layers.push_back({Tensor({layer_sizes[i + 1], layer_sizes[i]}), Tensor({layer_sizes[i + 1]})});
    }
    p.layer_sizes = std::move(layer_sizes);
    return p;
}

NetParams make_random_net(std::vector<std::size_t> layer_sizes, RandomSource& rng, Activation activation,
                          double gain) {
    NetParams p = make_zero_net(std::move(layer_sizes), activation);
    for (auto& l : p.layers) {
        const double fan_in = static_cast<double>(l.weight.shape()[1]);
        const double fan_out = static_cast<double>(l.weight.shape()[0]);
        const double limit = gain * std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& w : l.weight.data()) w = rng.uniform(-limit, limit);
    }
    return p;
}

std::vector<double> flatten(const NetParams& params) {
    std::vector<double> flat;
    flat.reserve(params.param_count());
    for (const auto& l : params.layers) {
        flat.insert(flat.end(), l.weight.data().begin(), l.weight.data().end());
        flat.insert(flat.end(), l.bias.data().begin(), l.bias.data().end());
    }
    return flat;
}

void assign_flat(NetParams& params, std::span<const double> flat) {
    if (flat.size() != params.param_count()) {
        throw ShapeError("flat parameter vector has " + std::to_string(flat.size()) + " entries, expected " +
                         std::to_string(params.param_count()));
    }
    std::size_t k = 0;
    for (auto& l : params.layers) {
        for (auto& w : l.weight.data()) w = flat[k++];
        for (auto& b : l.bias.data()) b = flat[k++];
    }
}

namespace {

void check_input(const NetParams& params, std::size_t width) {
    if (width != params.input_width()) {
        throw ShapeError("network input has width " + std::to_string(width) + ", expected " +
                         std::to_string(params.input_width()));
    }
}

}  // namespace

ForwardCache net_forward_cached(const NetParams& params, std::span<const double> input) {
    check_input(params, input.size());
    ForwardCache cache;
    cache.values.reserve(params.layers.size() + 1);
    cache.values.emplace_back(input.begin(), input.end());
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        const auto& layer = params.layers[li];
        const auto& x = cache.values.back();
        const std::size_t out = layer.weight.shape()[0];
        const std::size_t in = layer.weight.shape()[1];
        std::vector<double> y(out);
        const double* w = layer.weight.data().data();
        for (std::size_t o = 0; o < out; ++o) {
            double acc = layer.bias[o];
            const double* row = w + o * in;
            for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
            y[o] = acc;
        }
        const bool hidden = li + 1 < params.layers.size();
        if (hidden && params.activation == Activation::tanh) {
            for (auto& v : y) v = std::tanh(v);
        }
        cache.values.push_back(std::move(y));
    }
    return cache;
}

std::vector<double> net_forward(const NetParams& params, std::span<const double> input) {
    return std::move(net_forward_cached(params, input).values.back());
}

Tensor net_forward(const NetParams& params, const Tensor& input) {
    return Tensor::vector(net_forward(params, input.span()));
}

void net_backward_accumulate(const NetParams& params, const ForwardCache& cache, std::span<const double> out_grad,
                             std::span<double> flat_grad, std::vector<double>* input_grad) {
    if (out_grad.size() != params.output_width()) {
        throw ShapeError("output gradient has width " + std::to_string(out_grad.size()) + ", expected " +
                         std::to_string(params.output_width()));
    }
    if (flat_grad.size() != params.param_count()) throw ShapeError("gradient buffer does not match parameter count");

    // Offsets of each layer inside the flat layout.
    std::vector<std::size_t> offset(params.layers.size());
    std::size_t k = 0;
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        offset[li] = k;
        k += params.layers[li].weight.size() + params.layers[li].bias.size();
    }

    std::vector<double> delta(out_grad.begin(), out_grad.end());
    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const auto& layer = params.layers[li];
        const std::size_t out = layer.weight.shape()[0];
        const std::size_t in = layer.weight.shape()[1];
        const auto& x = cache.values[li];
        double* gw = flat_grad.data() + offset[li];
        double* gb = gw + out * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double d = delta[o];
            if (d == 0.0) continue;
            double* row = gw + o * in;
            for (std::size_t i = 0; i < in; ++i) row[i] += d * x[i];
            gb[o] += d;
        }
        if (li == 0 && input_grad == nullptr) break;
        std::vector<double> prev(in, 0.0);
        const double* w = layer.weight.data().data();
        for (std::size_t o = 0; o < out; ++o) {
            const double d = delta[o];
            if (d == 0.0) continue;
            const double* row = w + o * in;
            for (std::size_t i = 0; i < in; ++i) prev[i] += d * row[i];
        }
        if (li > 0 && params.activation == Activation::tanh) {
            // x holds tanh(pre-activation) of the previous layer.
            for (std::size_t i = 0; i < in; ++i) prev[i] *= 1.0 - x[i] * x[i];
        }
        delta = std::move(prev);
    }
    if (input_grad != nullptr) *input_grad = std::move(delta);
}

NetGradients net_backward(const NetParams& params, std::span<const double> input, std::span<const double> out_grad) {
    const ForwardCache cache = net_forward_cached(params, input);
    std::vector<double> flat(params.param_count(), 0.0);
    NetGradients g;
    net_backward_accumulate(params, cache, out_grad, flat, &g.input_grad);
    g.param_grads = make_zero_net(params.layer_sizes, params.activation);
    assign_flat(g.param_grads, flat);
    return g;
}

}  // namespace actloop
