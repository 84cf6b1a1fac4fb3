#include "deal/data/preprocess.hpp"

#include <algorithm>

namespace deal::data {

bool filter_large_objects(const Scene& scene, double threshold) {
    const double image_area = static_cast<double>(scene.width()) * static_cast<double>(scene.height());
    for (const auto& a : scene.annotations) {
        if (a.box.area() > threshold * image_area) return false;
    }
    return true;
}

std::vector<std::size_t> tile_offsets(std::size_t extent, std::size_t target) {
    if (extent <= target) return {0};
    std::vector<std::size_t> offsets;
    for (std::size_t o = 0; o + target < extent; o += target) offsets.push_back(o);
    offsets.push_back(extent - target);
    return offsets;
}

std::vector<Scene> unify_resolution(const Scene& scene, std::size_t target, double survival) {
    const auto xs = tile_offsets(scene.width(), target);
    const auto ys = tile_offsets(scene.height(), target);
    const bool single = xs.size() == 1 && ys.size() == 1;
    std::vector<Scene> tiles;
    for (std::size_t oy : ys) {
        for (std::size_t ox : xs) {
            Scene tile;
            tile.id = single ? scene.id : scene.id + "_x" + std::to_string(ox) + "_y" + std::to_string(oy);
            tile.image = Image(target, target);
            const std::size_t cw = std::min(target, scene.width() - ox);
            const std::size_t ch = std::min(target, scene.height() - oy);
            for (std::size_t c = 0; c < 3; ++c) {
                for (std::size_t y = 0; y < ch; ++y) {
                    for (std::size_t x = 0; x < cw; ++x) tile.image.at(c, y, x) = scene.image.at(c, oy + y, ox + x);
                }
            }
            const double tx0 = static_cast<double>(ox), ty0 = static_cast<double>(oy);
            const double tx1 = tx0 + static_cast<double>(cw), ty1 = ty0 + static_cast<double>(ch);
            for (const auto& a : scene.annotations) {
                const double x0 = std::max(a.box.x, tx0), y0 = std::max(a.box.y, ty0);
                const double x1 = std::min(a.box.right(), tx1), y1 = std::min(a.box.bottom(), ty1);
                if (x1 <= x0 || y1 <= y0) continue;
                const double clipped = (x1 - x0) * (y1 - y0);
                if (clipped < survival * a.box.area()) continue;
                tile.annotations.push_back(Annotation{Box{x0 - tx0, y0 - ty0, x1 - x0, y1 - y0}, a.category});
            }
            tiles.push_back(std::move(tile));
        }
    }
    return tiles;
}

}  // namespace deal::data
