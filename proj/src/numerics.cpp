#include "actloop/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "actloop/error.hpp"

namespace actloop {

double gaussian_logpdf(std::span<const double> x, std::span<const double> mean, double std) {
    if (!(std > 0.0)) throw ConfigError("gaussian_logpdf requires std > 0, got " + std::to_string(std));
    if (x.size() != mean.size()) throw ShapeError("gaussian_logpdf: x and mean differ in length");
    const double norm = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(std);
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = (x[i] - mean[i]) / std;
        total += norm - 0.5 * r * r;
    }
    return total;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& objective,
                                     std::span<const double> params, double h) {
    if (!(h > 0.0)) throw ConfigError("finite difference step must be positive");
    std::vector<double> p(params.begin(), params.end());
    std::vector<double> grad(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = p[i];
        p[i] = orig + h;
        const double fp = objective(p);
        p[i] = orig - h;
        const double fm = objective(p);
        p[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("objective is non-finite near coordinate " + std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
    if (a.size() != b.size()) throw ShapeError("max_relative_error: length mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
}

}  // namespace actloop
