#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace deal::model {

struct ModelConfig {
    std::size_t channels = 32;             // unified pyramid width C
    std::size_t stem_channels = 16;
    std::size_t stage_depth = 1;           // stride-1 convs after each stride-2 conv
    std::size_t hidden = 64;               // prompt / query width d
    std::size_t heads = 4;
    std::size_t ffn_hidden = 128;
    std::size_t decoder_layers = 2;
    std::size_t correlation_channels = 8;  // output channels of each dynamic 1x1 kernel

    double lambda = 1.0;  // density-loss weight
    double alpha = 0.25;  // focal alpha
    double gamma = 2.0;   // focal gamma
    std::size_t n_min = 1;
    std::size_t n_max = 300;
    double score_threshold = 0.2;

    // Matching cost and regression loss weights.
    double cost_class = 2.0;
    double cost_l1 = 5.0;
    double cost_giou = 2.0;
    double loss_l1 = 5.0;
    double loss_giou = 2.0;

    std::uint64_t init_seed = 0;
};

class ConfigurationError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

void validate(const ModelConfig& config);

inline constexpr std::size_t kDensityStride = 8;
inline constexpr std::size_t kInputMultiple = 32;

}  // namespace deal::model
