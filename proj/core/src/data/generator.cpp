#include "deal/data/generator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "deal/eval/metrics.hpp"

namespace deal::data {

namespace {

using Rng = std::mt19937_64;

constexpr std::array<std::array<int, 3>, 8> kPalette = {{
    {220, 50, 40},   // red
    {40, 90, 235},   // blue
    {235, 205, 30},  // yellow
    {40, 200, 70},   // green
    {200, 50, 210},  // magenta
    {30, 210, 215},  // cyan
    {245, 130, 20},  // orange
    {245, 245, 245}, // white
}};

enum class GlyphKind { Disc, Cross, Triangle, Ring };

GlyphKind glyph_for(int category) { return static_cast<GlyphKind>(category % 4); }

std::vector<std::uint8_t> rasterize(GlyphKind kind, int w, int h) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(w * h), 0);
    const double hw = 0.5 * w, hh = 0.5 * h;
    for (int j = 0; j < h; ++j) {
        for (int i = 0; i < w; ++i) {
            const double u = i + 0.5 - hw;
            const double v = j + 0.5 - hh;
            bool on = false;
            switch (kind) {
                case GlyphKind::Disc:
                    on = (u * u) / (hw * hw) + (v * v) / (hh * hh) <= 1.0;
                    break;
                case GlyphKind::Cross: {
                    const double t = std::max(0.5, std::min(w, h) / 6.0);
                    on = std::abs(u) <= t || std::abs(v) <= t;
                    break;
                }
                case GlyphKind::Triangle: {
                    const double half = std::max(0.5, (j + 1.0) / h * hw);
                    on = std::abs(u) <= half;
                    break;
                }
                case GlyphKind::Ring: {
                    const int t = std::max(1, std::min(w, h) / 4);
                    on = i < t || j < t || i >= w - t || j >= h - t;
                    break;
                }
            }
            mask[static_cast<std::size_t>(j * w + i)] = on ? 1 : 0;
        }
    }
    return mask;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

void paint_background(Image& image, Rng& rng) {
    std::uniform_real_distribution<double> base(70.0, 150.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::array<double, 3> color = {base(rng), base(rng), base(rng)};
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::array<Wave, 3> waves;
    for (auto& wv : waves) {
        const double angle = 2.0 * std::numbers::pi * unit(rng);
        const double freq = 2.0 * std::numbers::pi * (1.0 + 3.0 * unit(rng)) / static_cast<double>(image.width());
        wv = {std::cos(angle) * freq, std::sin(angle) * freq, 2.0 * std::numbers::pi * unit(rng), 6.0 + 10.0 * unit(rng)};
    }
    std::uniform_real_distribution<double> grain(-8.0, 8.0);
    for (std::size_t y = 0; y < image.height(); ++y) {
        for (std::size_t x = 0; x < image.width(); ++x) {
            double shade = 0.0;
            for (const auto& wv : waves) shade += wv.amp * std::sin(wv.fx * x + wv.fy * y + wv.phase);
            for (std::size_t c = 0; c < 3; ++c) image.at(c, y, x) = to_byte(color[c] + shade + grain(rng));
        }
    }
}

void paint_clutter(Image& image, int count, Rng& rng) {
    std::uniform_int_distribution<int> size(2, 6);
    std::uniform_real_distribution<double> tone(60.0, 180.0);
    std::uniform_real_distribution<double> tint(-12.0, 12.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int n = 0; n < count; ++n) {
        const int w = size(rng), h = size(rng);
        const int x0 = std::uniform_int_distribution<int>(0, static_cast<int>(image.width()) - w)(rng);
        const int y0 = std::uniform_int_distribution<int>(0, static_cast<int>(image.height()) - h)(rng);
        const double g = tone(rng);
        const std::array<double, 3> color = {g + tint(rng), g + tint(rng), g + tint(rng)};
        for (int j = 0; j < h; ++j) {
            for (int i = 0; i < w; ++i) {
                if (unit(rng) < 0.35) continue;  // irregular speck
                for (std::size_t c = 0; c < 3; ++c) {
                    image.at(c, static_cast<std::size_t>(y0 + j), static_cast<std::size_t>(x0 + i)) = to_byte(color[c]);
                }
            }
        }
    }
}

void paint_glyph(Image& image, const GlyphMask& glyph, int category, Rng& rng) {
    std::uniform_real_distribution<double> jitter(-25.0, 25.0);
    const auto& base = kPalette[static_cast<std::size_t>(category) % kPalette.size()];
    const std::array<double, 3> color = {base[0] + jitter(rng), base[1] + jitter(rng), base[2] + jitter(rng)};
    const int w = static_cast<int>(glyph.box.w), h = static_cast<int>(glyph.box.h);
    const bool striped = (category / 4) % 2 == 1;  // second palette cycle gets a texture
    for (int j = 0; j < h; ++j) {
        for (int i = 0; i < w; ++i) {
            if (!glyph.mask[static_cast<std::size_t>(j * w + i)]) continue;
            const double shade = (striped && j % 2 == 1) ? 0.6 : 1.0;
            for (std::size_t c = 0; c < 3; ++c) {
                image.at(c, static_cast<std::size_t>(glyph.box.y) + static_cast<std::size_t>(j),
                         static_cast<std::size_t>(glyph.box.x) + static_cast<std::size_t>(i)) = to_byte(color[c] * shade);
            }
        }
    }
}

// Shrinks a local mask to its tight bounding box.
GlyphMask tighten(const std::vector<std::uint8_t>& mask, int w, int h, int x0, int y0) {
    int left = w, right = -1, top = h, bottom = -1;
    for (int j = 0; j < h; ++j) {
        for (int i = 0; i < w; ++i) {
            if (!mask[static_cast<std::size_t>(j * w + i)]) continue;
            left = std::min(left, i);
            right = std::max(right, i);
            top = std::min(top, j);
            bottom = std::max(bottom, j);
        }
    }
    const int tw = right - left + 1, th = bottom - top + 1;
    GlyphMask out;
    out.box = Box{static_cast<double>(x0 + left), static_cast<double>(y0 + top), static_cast<double>(tw),
                  static_cast<double>(th)};
    out.mask.resize(static_cast<std::size_t>(tw * th));
    for (int j = 0; j < th; ++j) {
        for (int i = 0; i < tw; ++i) {
            out.mask[static_cast<std::size_t>(j * tw + i)] = mask[static_cast<std::size_t>((j + top) * w + i + left)];
        }
    }
    return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void validate_generator_config(const GeneratorConfig& c) {
    if (c.categories < 1) throw std::invalid_argument("generator: need at least one category");
    if (c.min_objects < 1 || c.max_objects < c.min_objects) {
        throw std::invalid_argument("generator: object-count range must be positive and ordered");
    }
    if (c.min_size < 1.0 || c.max_size < c.min_size) throw std::invalid_argument("generator: bad size range");
    if (c.max_size * 1.25 > static_cast<double>(std::min(c.width, c.height))) {
        throw std::invalid_argument("generator: size range does not fit inside the image");
    }
    if (c.clutter < 0.0) throw std::invalid_argument("generator: clutter must be non-negative");
}

GeneratedScene generate_scene_with_masks(const GeneratorConfig& config, std::uint64_t seed, std::string id) {
    validate_generator_config(config);
    Rng rng(seed);
    GeneratedScene out;
    out.scene.id = std::move(id);
    out.scene.image = Image(config.width, config.height);
    Image& image = out.scene.image;
    paint_background(image, rng);
    paint_clutter(image, static_cast<int>(std::lround(config.clutter * config.max_objects)), rng);

    const int target = std::uniform_int_distribution<int>(config.min_objects, config.max_objects)(rng);
    std::uniform_real_distribution<double> side(config.min_size, config.max_size);
    std::uniform_real_distribution<double> log_aspect(-std::log(1.25), std::log(1.25));
    std::uniform_int_distribution<int> category(0, config.categories - 1);
    const int max_w = static_cast<int>(config.width), max_h = static_cast<int>(config.height);

    for (int n = 0; n < target; ++n) {
        const int cat = category(rng);
        const double s = side(rng);
        const double aspect = std::sqrt(std::exp(log_aspect(rng)));
        const int w = std::clamp(static_cast<int>(std::lround(s * aspect)), 1, max_w);
        const int h = std::clamp(static_cast<int>(std::lround(s / aspect)), 1, max_h);
        const auto mask = rasterize(glyph_for(cat), w, h);
        bool placed = false;
        for (int attempt = 0; attempt < config.placement_attempts && !placed; ++attempt) {
            const int x0 = std::uniform_int_distribution<int>(0, max_w - w)(rng);
            const int y0 = std::uniform_int_distribution<int>(0, max_h - h)(rng);
            GlyphMask glyph = tighten(mask, w, h, x0, y0);
            const bool clear = std::all_of(out.glyphs.begin(), out.glyphs.end(), [&](const GlyphMask& other) {
                return eval::iou(glyph.box, other.box) <= config.max_iou;
            });
            if (!clear) continue;
            paint_glyph(image, glyph, cat, rng);
            out.scene.annotations.push_back(Annotation{glyph.box, cat});
            out.glyphs.push_back(std::move(glyph));
            placed = true;
        }
        if (!placed) {
            char msg[160];
            std::snprintf(msg, sizeof msg, "infeasible packing: placed %zu of %d objects after %d attempts",
                          out.glyphs.size(), target, config.placement_attempts);
            throw GenerationError(msg, out.glyphs.size());
        }
    }
    return out;
}

Scene generate_scene(const GeneratorConfig& config, std::uint64_t seed, std::string id) {
    return std::move(generate_scene_with_masks(config, seed, std::move(id)).scene);
}

std::vector<Category> default_categories(int count) {
    static const char* kNames[] = {"red_disc",   "blue_cross",   "yellow_triangle", "green_ring",
                                   "magenta_disc", "cyan_cross", "orange_triangle", "white_ring"};
    std::vector<Category> out;
    for (int i = 0; i < count; ++i) {
        std::string name = i < 8 ? kNames[i] : "category_" + std::to_string(i);
        out.push_back(Category{i, std::move(name)});
    }
    return out;
}

Dataset generate_dataset(const GeneratorConfig& config, std::size_t count, std::uint64_t seed,
                         const std::string& id_prefix) {
    Dataset ds;
    ds.categories = default_categories(config.categories);
    ds.scenes.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        char id[64];
        std::snprintf(id, sizeof id, "%s_%05zu", id_prefix.c_str(), i);
        ds.scenes.push_back(generate_scene(config, derive_seed(seed, i), id));
    }
    return ds;
}

}  // namespace deal::data
