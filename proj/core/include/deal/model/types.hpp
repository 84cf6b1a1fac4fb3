#pragma once

#include <optional>
#include <string>
#include <vector>

#include "deal/data/scene.hpp"
#include "deal/geometry.hpp"
#include "deal/tensor/tensor.hpp"

namespace deal::model {

using data::CategoryId;

// Backbone levels at strides 4/8/16/32, each [1, C, h, w].
struct FeaturePyramid {
    Tensor l2, l3, l4, l5;
    std::size_t image_height = 0;
    std::size_t image_width = 0;
};

struct EnhancedFeature {
    Tensor s3;                        // [1, C, H/8, W/8]
    std::optional<Tensor> modulated;  // S3 scaled by the density map
};

struct PromptEmbedding {
    Tensor pe;  // [k, d]
    std::vector<CategoryId> group_ids;
    std::size_t size() const { return group_ids.size(); }
};

struct DensityMap {
    Tensor grid;  // [1, 1, H/8, W/8], sigmoid output
    std::size_t stride = 8;

    std::size_t height() const { return grid.dim(2); }
    std::size_t width() const { return grid.dim(3); }
    double total() const;
};

struct Detection {
    NormalizedBox box;
    double score = 0.0;
    CategoryId prompt_group = 0;
};

// Raw decoder state kept for training; `detections` mirrors the values.
struct DecoderOutput {
    Tensor scores;          // [N, 1] probabilities
    Tensor boxes;           // [N, 4] normalized (cx, cy, w, h)
    Tensor query_features;  // [N, d]
    std::vector<std::size_t> query_cells;  // row-major density cells seeding each query
    std::vector<Detection> detections;
    std::vector<std::string> warnings;
};

// Everything the prompt-independent part of the network produces for one image.
struct ImageFeatures {
    FeaturePyramid pyramid;
    EnhancedFeature enhanced;
};

// One prompted forward pass.
struct PromptedOutput {
    PromptEmbedding embedding;
    DensityMap density;
    std::size_t n_query = 0;
    DecoderOutput decoded;
};

}  // namespace deal::model
