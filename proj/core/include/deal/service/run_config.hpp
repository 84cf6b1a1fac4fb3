#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "deal/data/generator.hpp"
#include "deal/data/prompts.hpp"
#include "deal/model/config.hpp"
#include "deal/train/pgcpp.hpp"

namespace deal::service {

struct GeneratorSection {
    data::GeneratorConfig scenes{};
    std::size_t train_scenes = 2000;
    std::size_t test_scenes = 200;
};

struct EvaluationSection {
    int setting = 1;
    double score_threshold = 0.2;
    double jitter = 0.0;
    std::size_t points = 1;
};

struct ServiceSection {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string image_dir;
    std::string checkpoint;
};

struct RunConfig {
    std::uint64_t seed = 0;
    model::ModelConfig model{};
    GeneratorSection generator{};
    train::TrainConfig training{};
    EvaluationSection evaluation{};
    ServiceSection service{};
};

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Parses a JSON document. Keys absent from the document keep their
// defaults; unknown keys and wrongly typed values are rejected.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// Every field, defaults included.
std::string run_config_to_json(const RunConfig& config);

}  // namespace deal::service
