#include "deal/model/targets.hpp"

#include <algorithm>
#include <cmath>

namespace deal::model {

std::vector<data::Annotation> prompted_annotations(std::span<const data::Annotation> gts,
                                                   std::span<const data::CategoryId> prompted) {
    std::vector<data::Annotation> out;
    for (const auto& a : gts) {
        if (std::find(prompted.begin(), prompted.end(), a.category) != prompted.end()) out.push_back(a);
    }
    return out;
}

Tensor build_density_target(std::span<const data::Annotation> gts, std::span<const data::CategoryId> prompted,
                            std::size_t stride, std::size_t height, std::size_t width) {
    if (stride == 0) throw ArgumentError("build_density_target: stride must be positive");
    std::vector<double> grid(height * width, 0.0);
    const auto cell = [stride](double v, std::size_t extent) {
        const double index = std::floor(v / static_cast<double>(stride));
        return static_cast<std::size_t>(std::clamp(index, 0.0, static_cast<double>(extent - 1)));
    };
    for (const auto& a : prompted_annotations(gts, prompted)) {
        if (height == 0 || width == 0) break;
        grid[cell(a.box.cy(), height) * width + cell(a.box.cx(), width)] = 1.0;
    }
    return Tensor::from_data({1, 1, height, width}, std::move(grid));
}

}  // namespace deal::model
