#pragma once

#include <span>
#include <utility>
#include <vector>

#include "deal/geometry.hpp"
#include "deal/model/config.hpp"

namespace deal::model {

struct CostMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;  // row-major

    CostMatrix() = default;
    CostMatrix(std::size_t r, std::size_t c, std::vector<double> v);
    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

using Assignment = std::vector<std::pair<std::size_t, std::size_t>>;  // (pred, gt), sorted by pred

// Minimum-cost one-to-one assignment of size min(rows, cols).
Assignment hungarian_match(const CostMatrix& cost);

double assignment_cost(const CostMatrix& cost, const Assignment& assignment);

// 2 * focal classification cost + 5 * L1 + 2 * (-GIoU) by default.
CostMatrix matching_cost(std::span<const double> scores, std::span<const NormalizedBox> predictions,
                         std::span<const NormalizedBox> targets, const ModelConfig& config);

}  // namespace deal::model
