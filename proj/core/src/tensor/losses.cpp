#include "deal/tensor/losses.hpp"

#include <algorithm>
#include <cmath>

namespace deal::ops {

namespace {

double clamp_probability(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

// d/dp of the focal loss at an unclamped interior point.
double focal_derivative(double p, double target, double alpha, double gamma) {
    const double q = 1.0 - p;
    const double pos = alpha * (gamma * std::pow(q, gamma - 1.0) * std::log(p) - std::pow(q, gamma) / p);
    const double neg = -(1.0 - alpha) * (gamma * std::pow(p, gamma - 1.0) * std::log(q) - std::pow(p, gamma) / q);
    return target * pos + (1.0 - target) * neg;
}

}  // namespace

double focal_term(double p, double target, double alpha, double gamma) {
    const double pc = clamp_probability(p);
    const double pos = -alpha * std::pow(1.0 - pc, gamma) * std::log(pc);
    const double neg = -(1.0 - alpha) * std::pow(pc, gamma) * std::log(1.0 - pc);
    return target * pos + (1.0 - target) * neg;
}

Tensor focal_loss(const Tensor& pred, const Tensor& target, double alpha, double gamma) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("focal_loss: prediction " + shape_to_string(pred.shape()) + " vs target " +
                             shape_to_string(target.shape()));
    }
    const std::size_t n = pred.numel();
    auto p = pred.data();
    auto t = target.data();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += focal_term(p[i], t[i], alpha, gamma);
    const double inv_n = 1.0 / static_cast<double>(n);
    return Tensor::make_result({1}, {total * inv_n}, "focal_loss", {pred, target},
                               [alpha, gamma, inv_n](detail::Node& self) {
                                   auto& x = *self.inputs[0];
                                   if (!x.requires_grad) return;
                                   const auto& tgt = self.inputs[1]->data;
                                   const double g = self.grad[0] * inv_n;
                                   for (std::size_t i = 0; i < x.data.size(); ++i) {
                                       const double pi = x.data[i];
                                       if (pi < kProbabilityClamp || pi > 1.0 - kProbabilityClamp) continue;
                                       x.grad[i] += g * focal_derivative(pi, tgt[i], alpha, gamma);
                                   }
                               });
}

}  // namespace deal::ops
