#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deal/data/prompts.hpp"
#include "deal/model/deal_model.hpp"
#include "deal/model/matcher.hpp"
#include "deal/tensor/optim.hpp"

namespace deal::train {

// Epochs in the "1x" schedule.
inline constexpr std::size_t kOneXEpochs = 3;

struct MatchQuality {
    double value = 0.0;  // score * iou
    double score = 0.0;
    double iou = 0.0;
};

MatchQuality match_quality(const model::Detection& detection, const data::Annotation& gt, double image_width,
                           double image_height);

// Safe: the worst-covered ground truth's center becomes the next prompt.
// Literal: the center of the matched detection with the lowest quality.
enum class WorstPolicy { Safe, Literal };

std::string policy_name(WorstPolicy policy);
WorstPolicy policy_from_name(const std::string& name);

class SelectionError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Raised by run_cycle when the network's predictions are NaN or infinite.
class NonFiniteError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Selection {
    std::size_t index = 0;         // ground-truth index (safe) or detection index (literal)
    data::PointPrompt prompt;
    std::vector<double> qualities; // the vector the argmin was taken over
};

// Lowest index wins ties. `assignment` (detection, gt) is needed by the
// literal policy only.
Selection select_worst(std::span<const model::Detection> detections, std::span<const data::Annotation> gts,
                       double image_width, double image_height, WorstPolicy policy,
                       const model::Assignment& assignment = {});

enum class CycleKind { Intra, Inter };

struct CycleStep {
    std::size_t prompt_count = 0;
    double classification = 0.0;
    double regression = 0.0;
    double density = 0.0;
    double total = 0.0;
    std::vector<model::Detection> detections;
    std::optional<Selection> selection;  // absent on the last step
};

struct CycleState {
    CycleKind kind = CycleKind::Intra;
    data::CategoryId category = 0;  // intra only
    data::PointPromptSet prompts;
    std::size_t step = 0;
    std::vector<CycleStep> history;
    Tensor loss;  // mean of the per-step losses
};

struct CycleOptions {
    std::size_t steps = 2;  // K
    double lambda = 1.0;
    WorstPolicy policy = WorstPolicy::Safe;
};

// One cycle from a given initial prompt set on precomputed image features.
// Runs K+1 forward passes: the initial set, then after each of K additions.
CycleState run_cycle(const model::DealModel& model, const model::ImageFeatures& features, const data::Scene& scene,
                     CycleKind kind, const data::PointPromptSet& initial, const CycleOptions& options);

// Self-contained form: encodes the image and samples the initial prompts
// (uniform inside a random GT box of `category`, or one per present
// category for the inter cycle).
CycleState run_cycle(const model::DealModel& model, const data::Scene& scene, CycleKind kind,
                     data::CategoryId category, const CycleOptions& options, std::uint64_t seed);

// One initial point per present category, keyed by category order.
std::vector<data::PointPrompt> initial_points(const data::Scene& scene, std::mt19937_64& rng);

struct TrainConfig {
    std::size_t cycles = 1;       // T
    std::size_t inner_steps = 2;  // K
    double lambda = 1.0;
    std::size_t epochs = kOneXEpochs;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 1;  // epochs; 0 writes only the final checkpoint
    std::size_t batch_size = 1;        // images per optimizer step
    std::size_t warmup_steps = 100;
    double min_lr_fraction = 0.1;      // cosine decay floor
    optim::OptimizerConfig optimizer{.max_grad_norm = 1.0};
    WorstPolicy policy = WorstPolicy::Safe;
};

void validate(const TrainConfig& config);

struct StepRecord {
    std::size_t step = 0;  // optimizer step the record contributes to
    std::size_t epoch = 0;
    std::string scene;
    std::string cycle;  // "intra:<category>" or "inter"
    std::size_t k = 0;
    double classification = 0.0;
    double regression = 0.0;
    double density = 0.0;
    double total = 0.0;
};

std::string to_json_line(const StepRecord& record);

struct TrainResult {
    std::vector<std::filesystem::path> checkpoints;  // cadence checkpoints in order
    std::filesystem::path final_checkpoint;
    std::size_t optimizer_steps = 0;
    double last_loss = 0.0;
};

class TrainingAborted : public std::runtime_error {
  public:
    TrainingAborted(const std::string& scene, std::filesystem::path last_good)
        : std::runtime_error("non-finite loss on scene " + scene + "; last good weights at " + last_good.string()),
          scene_(scene),
          last_good_(std::move(last_good)) {}
    const std::string& scene() const { return scene_; }
    const std::filesystem::path& last_good() const { return last_good_; }

  private:
    std::string scene_;
    std::filesystem::path last_good_;
};

// Image loss for one outer cycle: every intra cycle, then the inter cycle,
// averaged over all forward passes.
struct ImageLoss {
    Tensor loss;
    std::vector<CycleState> cycles;
};

ImageLoss image_loss(const model::DealModel& model, const data::Scene& scene, const CycleOptions& options,
                     std::mt19937_64& rng);

using ProgressCallback = std::function<void(const StepRecord&)>;

// Writes <output>/epoch_NNN.ckpt at the cadence, <output>/final.ckpt and
// <output>/metrics.ndjson.
TrainResult train(model::DealModel& model, const data::Dataset& dataset, const TrainConfig& config,
                  const std::filesystem::path& output, const ProgressCallback& progress = {});

double learning_rate_at(const TrainConfig& config, std::size_t step, std::size_t total_steps);

inline constexpr double kInputMean = 0.5;
inline constexpr double kInputScale = 0.25;

// Network input for a scene: [1,3,H',W'] with H', W' padded up to multiples
// of 32, pixel values mapped to (v/255 - kInputMean) / kInputScale.
Tensor scene_input(const data::Scene& scene);

}  // namespace deal::train
