#include "deal/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace deal::eval {

double iou(const Box& a, const Box& b) {
    const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
    const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
    const double iw = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
    const double ih = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    const double hull = (std::max(a.right(), b.right()) - std::min(a.x, b.x)) *
                        (std::max(a.bottom(), b.bottom()) - std::min(a.y, b.y));
    if (uni <= 0.0 || hull <= 0.0) return 0.0;
    return inter / uni - (hull - uni) / hull;
}

std::string_view bucket_name(ScaleBucket bucket) {
    switch (bucket) {
        case ScaleBucket::VeryTiny: return "vt";
        case ScaleBucket::Tiny: return "t";
        case ScaleBucket::Small: return "s";
        case ScaleBucket::Medium: return "m";
    }
    return "?";
}

std::pair<double, double> bucket_bounds(ScaleBucket bucket) {
    switch (bucket) {
        case ScaleBucket::VeryTiny: return {2.0, 8.0};
        case ScaleBucket::Tiny: return {8.0, 16.0};
        case ScaleBucket::Small: return {16.0, 32.0};
        case ScaleBucket::Medium: return {32.0, 64.0};
    }
    return {0.0, 0.0};
}

std::optional<ScaleBucket> scale_bucket(const Box& box) {
    const double scale = std::sqrt(box.w * box.h);
    for (auto b : kScaleBuckets) {
        const auto [lo, hi] = bucket_bounds(b);
        if (scale >= lo && scale < hi) return b;
    }
    return std::nullopt;
}

ApResult compute_ap(std::span<const ImageDetections> images, double iou_threshold, std::optional<ScaleBucket> bucket) {
    struct Ranked {
        double score;
        std::size_t image;
        std::size_t index;
    };
    std::vector<Ranked> ranked;
    std::size_t positives = 0;
    std::vector<std::vector<bool>> in_bucket(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        for (std::size_t d = 0; d < images[i].detections.size(); ++d) {
            ranked.push_back({images[i].detections[d].score, i, d});
        }
        for (const auto& gt : images[i].ground_truth) {
            const bool counted = !bucket || scale_bucket(gt) == bucket;
            in_bucket[i].push_back(counted);
            if (counted) ++positives;
        }
    }
    if (positives == 0) return ApResult{0.0, true};
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

    std::vector<std::vector<bool>> taken(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) taken[i].assign(images[i].ground_truth.size(), false);

    std::vector<double> recall, precision;
    std::size_t tp = 0, fp = 0;
    for (const auto& r : ranked) {
        const auto& img = images[r.image];
        const Box& det = img.detections[r.index].box;
        double best = -1.0;
        std::size_t best_gt = 0;
        for (std::size_t g = 0; g < img.ground_truth.size(); ++g) {
            if (taken[r.image][g]) continue;
            const double o = iou(det, img.ground_truth[g]);
            if (o >= iou_threshold && o > best) {
                best = o;
                best_gt = g;
            }
        }
        if (best < 0.0) {
            ++fp;
        } else {
            taken[r.image][best_gt] = true;
            if (!in_bucket[r.image][best_gt]) continue;  // ignored
            ++tp;
        }
        recall.push_back(static_cast<double>(tp) / static_cast<double>(positives));
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    // Interpolated precision: best precision at any recall >= r.
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double total = 0.0;
    std::size_t cursor = 0;
    for (int k = 0; k < kRecallPoints; ++k) {
        const double r = static_cast<double>(k) / 100.0;
        while (cursor < recall.size() && recall[cursor] < r) ++cursor;
        if (cursor == recall.size()) break;
        total += precision[cursor];
    }
    return ApResult{total / kRecallPoints, false};
}

}  // namespace deal::eval
