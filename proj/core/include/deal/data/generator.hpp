#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "deal/data/scene.hpp"

namespace deal::data {

struct GeneratorConfig {
    int categories = 2;
    int min_objects = 5;
    int max_objects = 30;
    double min_size = 4.0;  // px, side length before aspect jitter
    double max_size = 12.0;
    std::size_t width = 128;
    std::size_t height = 128;
    double clutter = 0.3;   // distractor specks per object slot
    double max_iou = 0.3;   // overlap cap between placed glyphs
    int placement_attempts = 1000;
};

class GenerationError : public std::runtime_error {
  public:
    GenerationError(const std::string& what, std::size_t achieved)
        : std::runtime_error(what), achieved_(achieved) {}
    std::size_t achieved() const { return achieved_; }

  private:
    std::size_t achieved_;
};

// Pixel mask of one rendered glyph over its annotation box (row-major,
// box.w x box.h, 1 = glyph pixel).
struct GlyphMask {
    Box box;
    std::vector<std::uint8_t> mask;
};

struct GeneratedScene {
    Scene scene;
    std::vector<GlyphMask> glyphs;  // parallel to scene.annotations
};

void validate_generator_config(const GeneratorConfig& config);

GeneratedScene generate_scene_with_masks(const GeneratorConfig& config, std::uint64_t seed, std::string id);
Scene generate_scene(const GeneratorConfig& config, std::uint64_t seed, std::string id);

// Scene i is generated from a seed derived from (seed, i), so any prefix of
// a dataset is reproducible on its own.
Dataset generate_dataset(const GeneratorConfig& config, std::size_t count, std::uint64_t seed,
                         const std::string& id_prefix = "scene");

std::vector<Category> default_categories(int count);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace deal::data
