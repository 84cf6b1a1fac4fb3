#include "deal/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace deal {

GradientProbeError::GradientProbeError(std::size_t input, std::size_t coordinate, double value)
    : std::runtime_error("non-finite forward value " + std::to_string(value) + " while probing input " +
                         std::to_string(input) + ", coordinate " + std::to_string(coordinate)),
      input_(input),
      coordinate_(coordinate) {}

double GradCheckResult::worst() const {
    double w = 0.0;
    for (double e : max_relative_error) w = std::max(w, e);
    return w;
}

namespace {

double evaluate(const ScalarFunction& forward, std::span<const Tensor> inputs, std::size_t input, std::size_t coord) {
    const Tensor out = forward(inputs);
    if (out.numel() != 1) throw DimensionError("check_gradients: forward must return a scalar");
    const double v = out.item();
    if (!std::isfinite(v)) throw GradientProbeError(input, coord, v);
    return v;
}

}  // namespace

GradCheckResult check_gradients(const ScalarFunction& forward, std::vector<Tensor> inputs, double h) {
    if (h <= 0.0) throw ArgumentError("check_gradients: step must be positive");
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    {
        const Tensor out = forward(inputs);
        if (out.numel() != 1) throw DimensionError("check_gradients: forward must return a scalar");
        if (!std::isfinite(out.item())) throw GradientProbeError(0, 0, out.item());
        out.backward();
    }
    std::vector<std::vector<double>> analytic;
    for (const auto& t : inputs) {
        analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                           : std::vector<double>(t.numel(), 0.0));
    }

    GradCheckResult result;
    NoGradGuard no_grad;
    std::vector<std::vector<double>> numeric(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto values = inputs[i].mutable_data();
        numeric[i].resize(values.size());
        for (std::size_t c = 0; c < values.size(); ++c) {
            const double original = values[c];
            values[c] = original + h;
            const double plus = evaluate(forward, inputs, i, c);
            values[c] = original - h;
            const double minus = evaluate(forward, inputs, i, c);
            values[c] = original;
            numeric[i][c] = (plus - minus) / (2.0 * h);
            result.probes += 2;
        }
    }
    // One scale for the whole function: an input whose true gradient is
    // identically zero (a key bias under softmax) is judged against the
    // gradient magnitude elsewhere, not against the roundoff in its own probe.
    double scale = 1e-8;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t c = 0; c < numeric[i].size(); ++c) {
            scale = std::max({scale, std::abs(numeric[i][c]), std::abs(analytic[i][c])});
        }
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        double worst_scaled = 0.0, worst_coordinate = 0.0;
        for (std::size_t c = 0; c < numeric[i].size(); ++c) {
            const double diff = std::abs(numeric[i][c] - analytic[i][c]);
            worst_scaled = std::max(worst_scaled, diff / scale);
            const double local = std::max({1e-8, std::abs(numeric[i][c]), std::abs(analytic[i][c])});
            worst_coordinate = std::max(worst_coordinate, diff / local);
        }
        result.max_relative_error.push_back(worst_scaled);
        result.max_coordinate_error.push_back(worst_coordinate);
    }
    for (auto& t : inputs) t.zero_grad();
    return result;
}

}  // namespace deal
