#include "deal/eval/evaluate.hpp"

#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>

#include "deal/data/generator.hpp"
#include "deal/model/targets.hpp"
#include "deal/train/pgcpp.hpp"

namespace deal::eval {

std::vector<ScoredBox> DealDetector::detect(const data::Scene& scene, const data::PointPromptSet& prompts) const {
    NoGradGuard no_grad;
    const auto features = model_.encode(train::scene_input(scene));
    const auto out = model_.run_prompts(features, prompts);
    const double w = static_cast<double>(features.pyramid.image_width);
    const double h = static_cast<double>(features.pyramid.image_height);
    std::vector<ScoredBox> boxes;
    boxes.reserve(out.decoded.detections.size());
    for (const auto& d : out.decoded.detections) boxes.push_back(ScoredBox{to_pixels(d.box, w, h), d.score});
    return boxes;
}

std::vector<ScoredBox> GroundTruthEcho::detect(const data::Scene& scene, const data::PointPromptSet& prompts) const {
    const auto categories = prompts.categories();
    std::vector<ScoredBox> boxes;
    for (const auto& a : model::prompted_annotations(scene.annotations, categories)) boxes.push_back({a.box, 1.0});
    return boxes;
}

EvalReport evaluate_setting(const Detector& detector, const data::Dataset& dataset, const EvalOptions& options) {
    if (dataset.scenes.empty()) throw EvaluationError("evaluate_setting: empty dataset");
    const bool single_category = options.setting == data::Setting::S3 || options.setting == data::Setting::S4;
    EvalReport report;
    report.setting = options.setting;
    report.n_images = dataset.scenes.size();
    std::vector<ImageDetections> images;
    images.reserve(dataset.scenes.size());
    std::size_t off_target = 0;
    for (std::size_t i = 0; i < dataset.scenes.size(); ++i) {
        const auto& scene = dataset.scenes[i];
        const auto prompts =
            data::sample_prompts(scene, options.setting, data::derive_seed(options.seed, i), options.sampling);
        const auto categories = prompts.categories();
        ImageDetections image;
        for (const auto& d : detector.detect(scene, prompts)) {
            if (d.score >= options.score_threshold) image.detections.push_back(d);
        }
        for (const auto& a : model::prompted_annotations(scene.annotations, categories)) {
            image.ground_truth.push_back(a.box);
        }
        if (single_category) {
            for (const auto& d : image.detections) {
                for (const auto& a : scene.annotations) {
                    const bool prompted = std::find(categories.begin(), categories.end(), a.category) != categories.end();
                    if (!prompted && iou(d.box, a.box) >= 0.5) {
                        ++off_target;
                        break;
                    }
                }
            }
        }
        report.n_detections += image.detections.size();
        images.push_back(std::move(image));
    }
    for (double t : kIouThresholds) report.ap_by_iou[t] = compute_ap(images, t).ap;
    for (auto bucket : kScaleBuckets) {
        const auto r = compute_ap(images, 0.5, bucket);
        report.ap_by_scale[std::string(bucket_name(bucket))] = r.ap;
        report.scale_empty[std::string(bucket_name(bucket))] = r.no_ground_truth;
    }
    if (single_category) {
        report.non_prompted_fraction =
            report.n_detections ? static_cast<double>(off_target) / static_cast<double>(report.n_detections) : 0.0;
    }
    return report;
}

std::string format_report(const EvalReport& r) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "setting %s  images %zu  detections %zu\n", data::setting_name(r.setting).c_str(),
                  r.n_images, r.n_detections);
    out << line;
    out << "  AP0.25   AP0.5   AP0.75 |  APvt    APt     APs     APm\n";
    std::snprintf(line, sizeof line, "  %6.4f   %6.4f  %6.4f |", r.ap_by_iou.at(0.25), r.ap_by_iou.at(0.5),
                  r.ap_by_iou.at(0.75));
    out << line;
    for (auto bucket : kScaleBuckets) {
        const std::string name(bucket_name(bucket));
        if (r.scale_empty.at(name)) {
            out << "     -  ";
        } else {
            std::snprintf(line, sizeof line, "  %6.4f", r.ap_by_scale.at(name));
            out << line;
        }
    }
    out << '\n';
    if (r.non_prompted_fraction) {
        std::snprintf(line, sizeof line, "  detections on non-prompted objects: %.4f\n", *r.non_prompted_fraction);
        out << line;
    }
    return out.str();
}

std::string report_to_json(const EvalReport& r) {
    nlohmann::json ap_iou = nlohmann::json::object();
    for (const auto& [t, ap] : r.ap_by_iou) {
        char key[16];
        std::snprintf(key, sizeof key, "%.2f", t);
        ap_iou[key] = ap;
    }
    nlohmann::json ap_scale = nlohmann::json::object();
    for (const auto& [name, ap] : r.ap_by_scale) ap_scale[name] = r.scale_empty.at(name) ? nlohmann::json() : nlohmann::json(ap);
    nlohmann::json j{{"setting", data::setting_name(r.setting)},
                     {"n_images", r.n_images},
                     {"n_detections", r.n_detections},
                     {"ap_by_iou", ap_iou},
                     {"ap_by_scale", ap_scale}};
    if (r.non_prompted_fraction) j["non_prompted_fraction"] = *r.non_prompted_fraction;
    return j.dump(2);
}

}  // namespace deal::eval
