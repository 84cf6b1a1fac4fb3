#pragma once

#include <span>
#include <vector>

#include "deal/data/scene.hpp"
#include "deal/tensor/tensor.hpp"

namespace deal::model {

// Center-cell indicator over a grid of `height` x `width` cells of `stride`
// pixels, for annotations whose category is in `prompted`. Shape [1,1,h,w].
Tensor build_density_target(std::span<const data::Annotation> gts, std::span<const data::CategoryId> prompted,
                            std::size_t stride, std::size_t height, std::size_t width);

// The annotations of the prompted categories, in input order.
std::vector<data::Annotation> prompted_annotations(std::span<const data::Annotation> gts,
                                                   std::span<const data::CategoryId> prompted);

}  // namespace deal::model
