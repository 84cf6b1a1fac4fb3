#pragma once

#include <vector>

#include "deal/data/scene.hpp"

namespace deal::data {

inline constexpr double kLargeObjectFraction = 0.40;
inline constexpr std::size_t kUnifiedResolution = 1024;
inline constexpr double kTileSurvivalFraction = 0.25;

// True when the scene is kept: no single annotation covers strictly more
// than `threshold` of the image area.
bool filter_large_objects(const Scene& scene, double threshold = kLargeObjectFraction);

// Tile origins along one axis: one origin when extent <= target, otherwise
// steps of `target` with the last tile anchored to the far edge.
std::vector<std::size_t> tile_offsets(std::size_t extent, std::size_t target);

// Crops large images into target x target tiles and zero-pads small ones
// (bottom/right). Annotations are clipped to each tile and kept when the
// clipped area is at least `survival` of the original area.
std::vector<Scene> unify_resolution(const Scene& scene, std::size_t target = kUnifiedResolution,
                                    double survival = kTileSurvivalFraction);

}  // namespace deal::data
