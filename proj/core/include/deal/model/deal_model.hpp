#pragma once

#include <optional>
#include <span>
#include <vector>

#include "deal/data/prompts.hpp"
#include "deal/model/config.hpp"
#include "deal/model/types.hpp"
#include "deal/tensor/nn.hpp"

namespace deal::model {

// Decisions that are discontinuous in the weights. Gradient checks pin them so
// that perturbed evaluations follow the same branch.
struct QueryPlan {
    std::vector<std::size_t> cells;
};

std::size_t allocate_queries(const DensityMap& dm, std::size_t n_min, std::size_t n_max);

// Indices of the n largest cells, ties broken by row-major position.
std::vector<std::size_t> top_cells(std::span<const double> values, std::size_t n);

class DealModel {
  public:
    explicit DealModel(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    nn::ParameterStore& parameters() { return store_; }
    const nn::ParameterStore& parameters() const { return store_; }

    // `image` is [3,H,W] or [1,3,H,W] with H, W divisible by 32.
    FeaturePyramid backbone_forward(const Tensor& image) const;
    EnhancedFeature hfe_forward(const FeaturePyramid& pyramid) const;
    // Prompt coordinates are image pixels.
    PromptEmbedding embed_prompts(const data::PointPromptSet& points, const FeaturePyramid& pyramid) const;
    DensityMap activate_prompts(const PromptEmbedding& pe, const EnhancedFeature& enhanced) const;
    // Stores S3 * DM in `enhanced.modulated`. A non-null plan overrides the
    // top-DM cell selection (its size then fixes the query count).
    DecoderOutput modulate_and_decode(EnhancedFeature& enhanced, const DensityMap& dm, const PromptEmbedding& pe,
                                      std::size_t n_query, const QueryPlan* plan = nullptr) const;

    ImageFeatures encode(const Tensor& image) const;
    // Prompt stage on cached image features. The query count is the density
    // allocation, raised to `min_queries` when given (training only).
    PromptedOutput run_prompts(const ImageFeatures& features, const data::PointPromptSet& points,
                               std::size_t min_queries = 0, const QueryPlan* plan = nullptr) const;

  private:
    struct Stage {
        nn::Conv2d down;
        std::vector<nn::Conv2d> body;
    };
    struct EncoderBlock {
        nn::AttentionWeights attention;
        nn::LayerNorm norm1, norm2;
        nn::FeedForward ffn;
    };
    struct DecoderLayer {
        nn::AttentionWeights self_attention, cross_attention;
        nn::LayerNorm norm1, norm2, norm3;
        nn::FeedForward ffn;
        nn::Linear box_hidden, box_out;
    };

    Tensor encoder_block(const EncoderBlock& block, const Tensor& x, const Tensor* position) const;

    ModelConfig config_;
    nn::ParameterStore store_;

    nn::Conv2d stem_;
    Stage stages_[4];

    EncoderBlock l5_encoder_;
    nn::Conv2d lateral5_, lateral4_, lateral3_;
    nn::Conv2d smooth4_, smooth3_;
    nn::Conv2d bottom_up_;
    nn::Conv2d fuse_reduce_, fuse_out_;

    nn::Linear prompt_project_;
    EncoderBlock prompt_encoder_;

    nn::AttentionWeights kernel_attention_;
    nn::LayerNorm kernel_norm_;
    nn::Linear kernel_project_;
    nn::Conv2d density_conv_;

    nn::Linear memory_project_;
    std::vector<DecoderLayer> decoder_;
    nn::Linear score_head_;
};

}  // namespace deal::model
