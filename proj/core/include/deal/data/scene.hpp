#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "deal/data/image.hpp"
#include "deal/geometry.hpp"

namespace deal::data {

using CategoryId = int;

struct Annotation {
    Box box;
    CategoryId category = 0;

    friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Scene {
    std::string id;
    Image image;
    std::vector<Annotation> annotations;

    std::size_t width() const { return image.width(); }
    std::size_t height() const { return image.height(); }
    // Sorted list of categories that have at least one annotation.
    std::vector<CategoryId> present_categories() const;
    std::vector<std::size_t> indices_of(CategoryId category) const;
};

struct Category {
    CategoryId id = 0;
    std::string name;

    friend bool operator==(const Category&, const Category&) = default;
};

struct Dataset {
    std::vector<Category> categories;
    std::vector<Scene> scenes;
};

class ValidationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Throws ValidationError naming the first annotation that leaves the image
// or has an extent below one pixel.
void validate_scene(const Scene& scene, const std::vector<Category>& categories);

}  // namespace deal::data
