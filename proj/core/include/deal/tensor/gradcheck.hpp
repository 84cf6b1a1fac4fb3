#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "deal/tensor/tensor.hpp"

namespace deal {

class GradientProbeError : public std::runtime_error {
  public:
    GradientProbeError(std::size_t input, std::size_t coordinate, double value);
    std::size_t input() const { return input_; }
    std::size_t coordinate() const { return coordinate_; }

  private:
    std::size_t input_;
    std::size_t coordinate_;
};

struct GradCheckResult {
    // Per input: max_i |autodiff_i - numeric_i| / max(|autodiff|_inf, |numeric|_inf, 1e-8),
    // the norms taken over all inputs together.
    std::vector<double> max_relative_error;
    // Per input: max_i |autodiff_i - numeric_i| / max(|autodiff_i|, |numeric_i|, 1e-8).
    std::vector<double> max_coordinate_error;
    std::size_t probes = 0;

    double worst() const;
};

using ScalarFunction = std::function<Tensor(std::span<const Tensor>)>;

// Compares reverse-mode gradients of a scalar function against central
// differences (f(x+h) - f(x-h)) / 2h, one coordinate at a time. Inputs are
// used as leaves; their values are restored after each probe.
GradCheckResult check_gradients(const ScalarFunction& forward, std::vector<Tensor> inputs, double h = 1e-5);

}  // namespace deal
