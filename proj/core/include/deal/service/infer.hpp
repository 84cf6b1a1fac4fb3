#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deal/data/image.hpp"
#include "deal/data/prompts.hpp"
#include "deal/model/deal_model.hpp"

namespace deal::service {

inline constexpr std::size_t kMaxInlineImageBytes = 8u << 20;
inline constexpr const char* kZeroPromptMessage = "P2SOD requires at least one point prompt";

// Carries the HTTP status that the failure maps to (4xx caller, 5xx server).
class InferError : public std::runtime_error {
  public:
    InferError(int status, const std::string& message) : std::runtime_error(message), status_(status) {}
    int status() const { return status_; }

  private:
    int status_;
};

struct InferRequest {
    std::optional<std::string> image_id;
    std::optional<std::string> image_base64;  // PNG bytes
    std::vector<data::PointPrompt> prompts;
    std::optional<double> score_threshold;
};

struct DensityPayload {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> values;  // row-major
};

struct InferResponse {
    std::vector<model::Detection> detections;  // normalized to the image extent
    std::size_t n_query = 0;
    DensityPayload density_map;
    double timing_ms = 0.0;
};

struct ImageEntry {
    std::filesystem::path path;
    data::Image image;
};

// Immutable after construction; shared by concurrent requests.
struct ServiceState {
    std::shared_ptr<const model::DealModel> model;  // null when no checkpoint is loaded
    std::map<std::string, ImageEntry> images;
    double default_threshold = 0.2;
};

// Registers every PNG in `directory` under its file stem.
std::map<std::string, ImageEntry> scan_images(const std::filesystem::path& directory);

// Model with the configured architecture and checkpoint weights.
std::shared_ptr<const model::DealModel> load_model(const model::ModelConfig& config,
                                                   const std::filesystem::path& checkpoint);

InferRequest parse_infer_request(const std::string& body);
std::string infer_response_to_json(const InferResponse& response);

InferResponse handle_infer(const InferRequest& request, const ServiceState& state);

// Inference on an already decoded image.
InferResponse infer_image(const model::DealModel& model, const data::Image& image,
                          const std::vector<data::PointPrompt>& prompts, double score_threshold);

}  // namespace deal::service
