#include "deal/model/losses.hpp"

#include <algorithm>

#include "deal/tensor/losses.hpp"
#include "deal/tensor/ops.hpp"

namespace deal::model {

using namespace deal::ops;

namespace {

struct Corners {
    Tensor x0, y0, x1, y1;
};

Corners corners(const Tensor& boxes) {
    const Tensor cx = slice(boxes, 1, 0, 1), cy = slice(boxes, 1, 1, 1);
    const Tensor hw = mul_scalar(slice(boxes, 1, 2, 1), 0.5), hh = mul_scalar(slice(boxes, 1, 3, 1), 0.5);
    return Corners{sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh)};
}

// Mean generalized IoU loss (1 - GIoU) over rows of two [P,4] cxcywh tensors.
Tensor giou_loss(const Tensor& pred, const Tensor& target) {
    const Corners p = corners(pred), t = corners(target);
    const Tensor iw = relu(sub(minimum(p.x1, t.x1), maximum(p.x0, t.x0)));
    const Tensor ih = relu(sub(minimum(p.y1, t.y1), maximum(p.y0, t.y0)));
    const Tensor inter = mul(iw, ih);
    const Tensor area_p = mul(slice(pred, 1, 2, 1), slice(pred, 1, 3, 1));
    const Tensor area_t = mul(slice(target, 1, 2, 1), slice(target, 1, 3, 1));
    const Tensor uni = sub(add(area_p, area_t), inter);
    const Tensor hull = mul(sub(maximum(p.x1, t.x1), minimum(p.x0, t.x0)), sub(maximum(p.y1, t.y1), minimum(p.y0, t.y0)));
    const Tensor g = sub(div(inter, uni), div(sub(hull, uni), hull));
    return mean(add_scalar(neg(g), 1.0));
}

}  // namespace

Assignment match_detections(const DecoderOutput& decoded, std::span<const NormalizedBox> targets,
                            const ModelConfig& config) {
    std::vector<NormalizedBox> boxes;
    for (const auto& d : decoded.detections) boxes.push_back(d.box);
    return hungarian_match(matching_cost(decoded.scores.data(), boxes, targets, config));
}

LossBreakdown compute_losses(const DecoderOutput& decoded, std::span<const NormalizedBox> targets,
                             const Assignment& assignment, const DensityMap& dm, const Tensor& dm_gt, double lambda,
                             const ModelConfig& config) {
    const std::size_t n = decoded.scores.dim(0);
    std::vector<double> labels(n, 0.0);
    std::vector<std::size_t> pred_rows;
    std::vector<double> target_values;
    for (auto [p, g] : assignment) {
        if (p >= n || g >= targets.size()) throw RangeError("compute_losses: assignment index out of range");
        labels[p] = 1.0;
        pred_rows.push_back(p);
        const auto& t = targets[g];
        target_values.insert(target_values.end(), {t.cx, t.cy, t.w, t.h});
    }
    LossBreakdown out;
    // Focal sums are normalized by the positive count, not the element count.
    const double matched = static_cast<double>(std::max<std::size_t>(pred_rows.size(), 1));
    const Tensor cls = mul_scalar(
        focal_loss(decoded.scores, Tensor::from_data({n, 1}, std::move(labels)), config.alpha, config.gamma),
        static_cast<double>(n) / matched);
    std::vector<Tensor> terms{cls};
    out.classification = cls.item();

    if (!pred_rows.empty()) {
        const std::size_t p = pred_rows.size();
        const Tensor pred = gather_rows(decoded.boxes, pred_rows);
        const Tensor target = Tensor::from_data({p, 4}, std::move(target_values));
        const Tensor l1 = mul_scalar(sum(abs(sub(pred, target))), 1.0 / static_cast<double>(p));
        const Tensor g = giou_loss(pred, target);
        const Tensor reg = add(mul_scalar(l1, config.loss_l1), mul_scalar(g, config.loss_giou));
        out.l1 = l1.item();
        out.giou = g.item();
        out.regression = reg.item();
        terms.push_back(reg);
    }

    if (dm_gt.shape() != dm.grid.shape()) throw DimensionError("compute_losses: density target shape mismatch");
    double positives = 0.0;
    for (double v : dm_gt.data()) positives += v;
    const Tensor density = mul_scalar(focal_loss(dm.grid, dm_gt, config.alpha, config.gamma),
                                      static_cast<double>(dm_gt.numel()) / std::max(positives, 1.0));
    out.density = density.item();
    if (lambda != 0.0) terms.push_back(mul_scalar(density, lambda));
    out.total = add_n(terms);
    return out;
}

}  // namespace deal::model
