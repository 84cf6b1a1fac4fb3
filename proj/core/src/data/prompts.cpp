#include "deal/data/prompts.hpp"

#include <algorithm>
#include <set>

namespace deal::data {

std::string setting_name(Setting s) { return "S" + std::to_string(static_cast<int>(s)); }

Setting setting_from_int(int value) {
    if (value < 1 || value > 4) throw std::invalid_argument("setting must be 1..4, got " + std::to_string(value));
    return static_cast<Setting>(value);
}

std::vector<CategoryId> PointPromptSet::categories() const {
    std::set<CategoryId> seen;
    for (const auto& p : prompts) seen.insert(p.category);
    return {seen.begin(), seen.end()};
}

namespace {

// Keeps a coordinate strictly inside (lo, lo + extent).
double inside(double v, double lo, double extent) {
    const double margin = 1e-3 * extent;
    return std::clamp(v, lo + margin, lo + extent - margin);
}

std::size_t pick(std::size_t n, std::mt19937_64& rng) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

PointPrompt prompt_in_box(const Annotation& a, double jitter, std::mt19937_64& rng) {
    double dx = 0.0, dy = 0.0;
    if (jitter > 0.0) {
        std::uniform_real_distribution<double> u(-jitter, jitter);
        dx = u(rng) * a.box.w;
        dy = u(rng) * a.box.h;
    }
    return PointPrompt{inside(a.box.cx() + dx, a.box.x, a.box.w), inside(a.box.cy() + dy, a.box.y, a.box.h), a.category};
}

PointPrompt uniform_prompt_in_box(const Annotation& a, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return PointPrompt{inside(a.box.x + u(rng) * a.box.w, a.box.x, a.box.w),
                       inside(a.box.y + u(rng) * a.box.h, a.box.y, a.box.h), a.category};
}

PointPromptSet sample_prompts(const Scene& scene, Setting setting, std::uint64_t seed, const SamplingOptions& options) {
    if (scene.annotations.empty()) throw SamplingError("scene '" + scene.id + "' has no annotations to prompt");
    if (options.jitter < 0.0 || options.jitter >= 0.5) throw SamplingError("jitter must lie in [0, 0.5)");
    std::mt19937_64 rng(seed);
    PointPromptSet out;
    out.setting = setting;
    out.seed = seed;
    const auto categories = scene.present_categories();
    switch (setting) {
        case Setting::S1:
            for (CategoryId c : categories) {
                const auto members = scene.indices_of(c);
                out.prompts.push_back(prompt_in_box(scene.annotations[members[pick(members.size(), rng)]], options.jitter, rng));
            }
            break;
        case Setting::S2:
            for (const auto& a : scene.annotations) out.prompts.push_back(prompt_in_box(a, options.jitter, rng));
            break;
        case Setting::S3: {
            const CategoryId c = categories[pick(categories.size(), rng)];
            auto members = scene.indices_of(c);
            std::shuffle(members.begin(), members.end(), rng);
            const std::size_t n = std::min(std::max<std::size_t>(options.points, 1), members.size());
            for (std::size_t i = 0; i < n; ++i) out.prompts.push_back(prompt_in_box(scene.annotations[members[i]], options.jitter, rng));
            break;
        }
        case Setting::S4: {
            const CategoryId c = categories[pick(categories.size(), rng)];
            for (std::size_t i : scene.indices_of(c)) out.prompts.push_back(prompt_in_box(scene.annotations[i], options.jitter, rng));
            break;
        }
    }
    return out;
}

}  // namespace deal::data
