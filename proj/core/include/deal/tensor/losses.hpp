#pragma once

#include "deal/tensor/tensor.hpp"

namespace deal::ops {

inline constexpr double kProbabilityClamp = 1e-7;

// Binary focal loss averaged over elements. `pred` holds probabilities,
// clamped to [eps, 1 - eps]; `target` holds labels in [0, 1] (soft labels
// interpolate between the positive and negative terms).
Tensor focal_loss(const Tensor& pred, const Tensor& target, double alpha = 0.25, double gamma = 2.0);

// Per-element focal loss value, exposed for matching costs and oracles.
double focal_term(double p, double target, double alpha, double gamma);

}  // namespace deal::ops
