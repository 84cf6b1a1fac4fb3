#pragma once

#include <map>
#include <stdexcept>

#include "deal/data/scene.hpp"

namespace deal::data {

inline constexpr double kScaleBinWidth = 4.0;

struct SceneStats {
    double mean_scale = 0.0;                       // mean sqrt(w*h), px
    std::size_t annotations = 0;
    std::map<std::size_t, std::size_t> scale_histogram;   // bin index (width 4 px) -> objects
    std::map<std::size_t, std::size_t> count_histogram;   // objects per image -> images
};

class StatsError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

SceneStats dataset_stats(const Dataset& dataset);

}  // namespace deal::data
