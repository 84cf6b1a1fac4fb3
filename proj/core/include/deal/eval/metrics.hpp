#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "deal/geometry.hpp"

namespace deal::eval {

double iou(const Box& a, const Box& b);
// Generalized IoU in [-1, 1].
double giou(const Box& a, const Box& b);

enum class ScaleBucket { VeryTiny, Tiny, Small, Medium };

inline constexpr std::array<ScaleBucket, 4> kScaleBuckets = {ScaleBucket::VeryTiny, ScaleBucket::Tiny,
                                                             ScaleBucket::Small, ScaleBucket::Medium};

std::string_view bucket_name(ScaleBucket bucket);
// Right-open bounds on sqrt(w*h) in pixels.
std::pair<double, double> bucket_bounds(ScaleBucket bucket);
// Bucket containing sqrt(w*h), or nullopt outside [2, 64).
std::optional<ScaleBucket> scale_bucket(const Box& box);

struct ScoredBox {
    Box box;
    double score = 0.0;
};

// Detections and ground truth of one image, in pixels.
struct ImageDetections {
    std::vector<ScoredBox> detections;
    std::vector<Box> ground_truth;
};

struct ApResult {
    double ap = 0.0;
    bool no_ground_truth = false;  // AP reported as 0 because nothing was evaluable
};

inline constexpr int kRecallPoints = 101;

// Class-agnostic AP over a set of images: detections ranked by descending
// score (ties by insertion order, images in order), each greedily matched
// to the highest-IoU unmatched ground truth of its image at IoU >= threshold,
// 101-point interpolated precision. With a bucket filter only in-bucket
// ground truth counts; detections matched to out-of-bucket ground truth
// are ignored.
ApResult compute_ap(std::span<const ImageDetections> images, double iou_threshold,
                    std::optional<ScaleBucket> bucket = std::nullopt);

}  // namespace deal::eval
