#include "deal/data/scene.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace deal::data {

std::vector<CategoryId> Scene::present_categories() const {
    std::set<CategoryId> seen;
    for (const auto& a : annotations) seen.insert(a.category);
    return {seen.begin(), seen.end()};
}

std::vector<std::size_t> Scene::indices_of(CategoryId category) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        if (annotations[i].category == category) out.push_back(i);
    }
    return out;
}

void validate_scene(const Scene& scene, const std::vector<Category>& categories) {
    const double w = static_cast<double>(scene.width());
    const double h = static_cast<double>(scene.height());
    for (std::size_t i = 0; i < scene.annotations.size(); ++i) {
        const auto& a = scene.annotations[i];
        const Box& b = a.box;
        std::string problem;
        if (b.w < 1.0 || b.h < 1.0) problem = "extent below one pixel";
        else if (b.x < 0.0 || b.y < 0.0 || b.right() > w || b.bottom() > h) problem = "box extends past image bounds";
        else if (!categories.empty() && std::none_of(categories.begin(), categories.end(),
                                                     [&](const Category& c) { return c.id == a.category; })) {
            problem = "undeclared category " + std::to_string(a.category);
        }
        if (!problem.empty()) {
            std::ostringstream msg;
            msg << "scene '" << scene.id << "' annotation " << i << ": " << problem << " (box " << b.x << ',' << b.y
                << ',' << b.w << ',' << b.h << " in " << scene.width() << 'x' << scene.height() << " image)";
            throw ValidationError(msg.str());
        }
    }
}

}  // namespace deal::data
