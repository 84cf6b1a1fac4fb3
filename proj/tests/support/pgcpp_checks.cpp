#include "pgcpp_checks.hpp"

#include <algorithm>

#include "deal/eval/metrics.hpp"

namespace oracle {

using namespace deal;

namespace {

bool strictly_inside(const data::PointPrompt& p, const Box& b) {
    return p.x > b.x && p.x < b.x + b.w && p.y > b.y && p.y < b.y + b.h;
}

}  // namespace

CycleAudit audit_cycle(const train::CycleState& cycle, const data::Scene& scene, std::size_t initial_size,
                       std::size_t steps, train::WorstPolicy policy) {
    CycleAudit audit;
    auto fail = [&](std::size_t k, const std::string& what) {
        audit.violations.push_back("step " + std::to_string(k) + ": " + what);
    };
    if (cycle.history.size() != steps + 1) fail(0, "expected " + std::to_string(steps + 1) + " forward passes");
    if (cycle.prompts.size() != initial_size + steps) fail(steps, "final prompt count");

    std::vector<data::CategoryId> categories;
    for (std::size_t i = 0; i < std::min(initial_size, cycle.prompts.size()); ++i) {
        categories.push_back(cycle.prompts.prompts[i].category);
    }
    std::sort(categories.begin(), categories.end());
    categories.erase(std::unique(categories.begin(), categories.end()), categories.end());
    std::vector<data::Annotation> gts;
    for (const auto& a : scene.annotations) {
        if (std::binary_search(categories.begin(), categories.end(), a.category)) gts.push_back(a);
    }
    const double w = static_cast<double>(scene.width()), h = static_cast<double>(scene.height());

    for (std::size_t k = 0; k < cycle.history.size(); ++k) {
        const auto& step = cycle.history[k];
        if (step.prompt_count != initial_size + k) fail(k, "prompt count " + std::to_string(step.prompt_count));
        if (k + 1 == cycle.history.size()) {
            if (step.selection) fail(k, "selection on the last step");
            continue;
        }
        if (!step.selection) {
            fail(k, "missing selection");
            continue;
        }
        const auto& sel = *step.selection;
        if (initial_size + k < cycle.prompts.size() && !(cycle.prompts.prompts[initial_size + k] == sel.prompt)) {
            fail(k, "appended prompt differs from the selection");
        }
        if (sel.qualities.empty() || sel.index >= (policy == train::WorstPolicy::Safe ? gts.size() : step.detections.size())) {
            fail(k, "selection index out of range");
            continue;
        }
        if (policy == train::WorstPolicy::Safe) {
            if (sel.qualities.size() != gts.size()) {
                fail(k, "quality vector length");
                continue;
            }
            // Recompute every quality independently of select_worst.
            std::vector<double> q(gts.size(), 0.0);
            for (std::size_t g = 0; g < gts.size(); ++g) {
                for (const auto& d : step.detections) {
                    const double score = std::clamp(d.score, 0.0, 1.0);
                    q[g] = std::max(q[g], score * eval::iou(to_pixels(d.box, w, h), gts[g].box));
                }
                if (q[g] != sel.qualities[g]) fail(k, "quality " + std::to_string(g) + " differs on recomputation");
            }
            const auto first_min = static_cast<std::size_t>(std::min_element(q.begin(), q.end()) - q.begin());
            if (sel.index != first_min) fail(k, "index is not the first argmin");
            bool inside = false;
            for (const auto& g : gts) inside |= g.category == sel.prompt.category && strictly_inside(sel.prompt, g.box);
            if (!inside) fail(k, "prompt outside every correct-category box");
        } else {
            const auto& d = step.detections[sel.index];
            if (sel.prompt.x != std::clamp(d.box.cx, 0.0, 1.0) * w || sel.prompt.y != std::clamp(d.box.cy, 0.0, 1.0) * h) {
                fail(k, "literal prompt is not the detection center");
            }
        }
        if (cycle.kind == train::CycleKind::Intra && sel.prompt.category != cycle.category) {
            fail(k, "intra cycle switched category");
        }
    }
    return audit;
}

}  // namespace oracle
