#include "deal/model/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deal/eval/metrics.hpp"
#include "deal/tensor/losses.hpp"
#include "deal/tensor/tensor.hpp"

namespace deal::model {

CostMatrix::CostMatrix(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != rows * cols) throw DimensionError("CostMatrix: value count does not match rows x cols");
}

namespace {

// Shortest augmenting path with potentials; requires rows <= cols.
std::vector<std::size_t> solve_rows_le_cols(std::size_t n, std::size_t m, auto&& cost) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> row_to_col(n, 0);
    for (std::size_t j = 1; j <= m; ++j) {
        if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
    }
    return row_to_col;
}

}  // namespace

Assignment hungarian_match(const CostMatrix& cost) {
    for (double c : cost.values) {
        if (!std::isfinite(c)) throw ArgumentError("hungarian_match: cost matrix has a non-finite entry");
    }
    Assignment out;
    if (cost.rows == 0 || cost.cols == 0) return out;
    if (cost.rows <= cost.cols) {
        const auto cols = solve_rows_le_cols(cost.rows, cost.cols, [&](std::size_t r, std::size_t c) { return cost.at(r, c); });
        for (std::size_t r = 0; r < cost.rows; ++r) out.emplace_back(r, cols[r]);
    } else {
        const auto rows = solve_rows_le_cols(cost.cols, cost.rows, [&](std::size_t c, std::size_t r) { return cost.at(r, c); });
        for (std::size_t c = 0; c < cost.cols; ++c) out.emplace_back(rows[c], c);
        std::sort(out.begin(), out.end());
    }
    return out;
}

double assignment_cost(const CostMatrix& cost, const Assignment& assignment) {
    double total = 0.0;
    for (auto [r, c] : assignment) total += cost.at(r, c);
    return total;
}

CostMatrix matching_cost(std::span<const double> scores, std::span<const NormalizedBox> predictions,
                         std::span<const NormalizedBox> targets, const ModelConfig& config) {
    if (scores.size() != predictions.size()) throw DimensionError("matching_cost: score and box counts differ");
    const std::size_t n = predictions.size(), m = targets.size();
    std::vector<double> values(n * m);
    auto corners = [](const NormalizedBox& b) { return Box{b.cx - 0.5 * b.w, b.cy - 0.5 * b.h, b.w, b.h}; };
    for (std::size_t i = 0; i < n; ++i) {
        const double cls = ops::focal_term(scores[i], 1.0, config.alpha, config.gamma) -
                           ops::focal_term(scores[i], 0.0, config.alpha, config.gamma);
        const Box pb = corners(predictions[i]);
        for (std::size_t j = 0; j < m; ++j) {
            const auto& p = predictions[i];
            const auto& t = targets[j];
            const double l1 = std::abs(p.cx - t.cx) + std::abs(p.cy - t.cy) + std::abs(p.w - t.w) + std::abs(p.h - t.h);
            const double g = eval::giou(pb, corners(t));
            values[i * m + j] = config.cost_class * cls + config.cost_l1 * l1 - config.cost_giou * g;
        }
    }
    return CostMatrix(n, m, std::move(values));
}

}  // namespace deal::model
