#pragma once

#include <functional>
#include <span>
#include <vector>

#include "actloop/tensor.hpp"

namespace actloop {

// Sum over coordinates of the log-density of N(mean_i, std^2).
double gaussian_logpdf(std::span<const double> x, std::span<const double> mean, double std);
inline double gaussian_logpdf(const Tensor& x, const Tensor& mean, double std) {
    return gaussian_logpdf(x.span(), mean.span(), std);
}

// Central-difference gradient of `objective` at `params`. Used as the
// independent oracle for every hand-written backward pass.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& objective,
                                     std::span<const double> params, double h);

// Largest |a_i - b_i| / max(|a_i|, |b_i|, floor).
double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8);

}  // namespace actloop
