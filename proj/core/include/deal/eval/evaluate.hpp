#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deal/data/prompts.hpp"
#include "deal/eval/metrics.hpp"
#include "deal/model/deal_model.hpp"

namespace deal::eval {

inline constexpr double kDefaultScoreThreshold = 0.2;
inline constexpr std::array<double, 3> kIouThresholds = {0.25, 0.5, 0.75};

// Anything that maps (scene, prompts) to scored pixel boxes.
class Detector {
  public:
    virtual ~Detector() = default;
    virtual std::vector<ScoredBox> detect(const data::Scene& scene, const data::PointPromptSet& prompts) const = 0;
};

// Inference with a DEAL model: full forward, no threshold applied here.
class DealDetector final : public Detector {
  public:
    explicit DealDetector(const model::DealModel& model) : model_(model) {}
    std::vector<ScoredBox> detect(const data::Scene& scene, const data::PointPromptSet& prompts) const override;

  private:
    const model::DealModel& model_;
};

// Echoes the prompted categories' ground truth with score 1.
class GroundTruthEcho final : public Detector {
  public:
    std::vector<ScoredBox> detect(const data::Scene& scene, const data::PointPromptSet& prompts) const override;
};

class EvaluationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct EvalOptions {
    data::Setting setting = data::Setting::S1;
    std::uint64_t seed = 0;
    double score_threshold = kDefaultScoreThreshold;
    data::SamplingOptions sampling{};
};

struct EvalReport {
    data::Setting setting = data::Setting::S1;
    std::size_t n_images = 0;
    std::size_t n_detections = 0;               // after thresholding
    std::map<double, double> ap_by_iou;         // 0.25 / 0.5 / 0.75
    std::map<std::string, double> ap_by_scale;  // vt / t / s / m at IoU 0.5
    std::map<std::string, bool> scale_empty;    // bucket had no ground truth
    // Single-category settings only: share of kept detections that overlap a
    // non-prompted object at IoU >= 0.5.
    std::optional<double> non_prompted_fraction;
};

EvalReport evaluate_setting(const Detector& detector, const data::Dataset& dataset, const EvalOptions& options);

std::string format_report(const EvalReport& report);
std::string report_to_json(const EvalReport& report);

}  // namespace deal::eval
