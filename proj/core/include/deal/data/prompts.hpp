#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "deal/data/scene.hpp"

namespace deal::data {

// Inference prompt protocols:
//   S1 one point per present category, S2 one point per instance,
//   S3 one category with `points` of its instances, S4 one category with
//   every instance.
enum class Setting { S1 = 1, S2 = 2, S3 = 3, S4 = 4 };

std::string setting_name(Setting s);
Setting setting_from_int(int value);

struct PointPrompt {
    double x = 0.0;  // pixels
    double y = 0.0;
    CategoryId category = 0;

    friend bool operator==(const PointPrompt&, const PointPrompt&) = default;
};

struct PointPromptSet {
    std::vector<PointPrompt> prompts;
    std::optional<Setting> setting;
    std::uint64_t seed = 0;

    std::size_t size() const { return prompts.size(); }
    std::vector<CategoryId> categories() const;  // sorted, unique
};

class SamplingError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct SamplingOptions {
    double jitter = 0.0;     // fraction of box size, in [0, 0.5)
    std::size_t points = 1;  // instances prompted under S3
};

// Point at the box center displaced by U(-jitter, jitter) * (w, h), clamped
// strictly inside the box.
PointPrompt prompt_in_box(const Annotation& annotation, double jitter, std::mt19937_64& rng);

// Uniform point strictly inside the box.
PointPrompt uniform_prompt_in_box(const Annotation& annotation, std::mt19937_64& rng);

PointPromptSet sample_prompts(const Scene& scene, Setting setting, std::uint64_t seed,
                              const SamplingOptions& options = {});

}  // namespace deal::data
