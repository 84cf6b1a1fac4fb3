#include "deal/data/stats.hpp"

#include <cmath>

namespace deal::data {

SceneStats dataset_stats(const Dataset& dataset) {
    if (dataset.scenes.empty()) throw StatsError("dataset_stats: empty dataset");
    SceneStats stats;
    double total = 0.0;
    for (const auto& scene : dataset.scenes) {
        ++stats.count_histogram[scene.annotations.size()];
        for (const auto& a : scene.annotations) {
            const double scale = std::sqrt(a.box.w * a.box.h);
            total += scale;
            ++stats.scale_histogram[static_cast<std::size_t>(scale / kScaleBinWidth)];
            ++stats.annotations;
        }
    }
    stats.mean_scale = stats.annotations ? total / static_cast<double>(stats.annotations) : 0.0;
    return stats;
}

}  // namespace deal::data
