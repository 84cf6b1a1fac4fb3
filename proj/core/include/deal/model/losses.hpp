#pragma once

#include <span>

#include "deal/model/config.hpp"
#include "deal/model/matcher.hpp"
#include "deal/model/types.hpp"

namespace deal::model {

struct LossBreakdown {
    Tensor total;
    double classification = 0.0;
    double regression = 0.0;  // weighted L1 + GIoU
    double l1 = 0.0;
    double giou = 0.0;
    double density = 0.0;
};

// Focal classification over all queries (matched -> 1), L1 + GIoU over the
// matched pairs, and lambda-weighted focal density supervision. Both focal
// terms are summed and divided by their positive count (at least 1).
LossBreakdown compute_losses(const DecoderOutput& decoded, std::span<const NormalizedBox> targets,
                             const Assignment& assignment, const DensityMap& dm, const Tensor& dm_gt, double lambda,
                             const ModelConfig& config);

// Hungarian assignment of the decoder output to `targets` under the
// configured matching cost.
Assignment match_detections(const DecoderOutput& decoded, std::span<const NormalizedBox> targets,
                            const ModelConfig& config);

}  // namespace deal::model
