#include "deal/service/cli.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

#include "deal/data/annotations.hpp"
#include "deal/eval/evaluate.hpp"
#include "deal/service/run_config.hpp"
#include "deal/service/server.hpp"
#include "deal/tensor/checkpoint.hpp"

namespace deal::service {

namespace {

class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
};

RunConfig effective_config(const CommonFlags& flags, std::ostream& err) {
    RunConfig config;
    if (!flags.config.empty()) {
        try {
            config = load_run_config(flags.config);
        } catch (const ConfigError& e) {
            throw UsageError(e.what());
        }
    }
    if (flags.seed) {
        config.seed = *flags.seed;
        config.training.seed = *flags.seed;
    }
    err << "effective configuration:\n" << run_config_to_json(config) << '\n';
    return config;
}

std::filesystem::path annotation_file(const std::string& data) {
    if (data.empty()) throw UsageError("--data is required");
    std::filesystem::path p(data);
    if (std::filesystem::is_directory(p)) p /= "annotations.json";
    if (!std::filesystem::exists(p)) throw UsageError("annotation file not found: " + p.string());
    return p;
}

std::shared_ptr<const model::DealModel> require_model(const RunConfig& config, const std::string& checkpoint) {
    const std::string path = checkpoint.empty() ? config.service.checkpoint : checkpoint;
    if (path.empty()) throw UsageError("--checkpoint is required");
    if (!std::filesystem::exists(path)) throw UsageError("checkpoint not found: " + path);
    return load_model(config.model, path);
}

std::vector<data::PointPrompt> read_prompts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("prompt file not found: " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw UsageError(path + ": " + e.what());
    }
    const auto& list = doc.is_object() ? doc.at("prompts") : doc;
    std::vector<data::PointPrompt> prompts;
    for (const auto& p : list) prompts.push_back({p.at("x").get<double>(), p.at("y").get<double>(), p.value("category", 0)});
    return prompts;
}

HttpService* g_running_service = nullptr;

extern "C" void stop_on_signal(int) {
    if (g_running_service) g_running_service->stop();
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Point-prompted small object detection toolkit"};
    app.require_subcommand(1);
    CommonFlags common;
    std::string data, output, checkpoint, image, prompts_file, host;
    std::optional<int> setting, port, points;
    std::optional<double> threshold, jitter;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "Run configuration (JSON)");
        sub->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { common.seed = s; }, "Seed override");
    };
    auto* generate = app.add_subcommand("generate", "Write a synthetic train/test dataset");
    add_common(generate);
    generate->add_option("--out", output, "Output directory")->default_val("data");

    auto* train_cmd = app.add_subcommand("train", "Train with prediction-guided cyclic prompting");
    add_common(train_cmd);
    train_cmd->add_option("--data", data, "Training annotations (file or directory)");
    train_cmd->add_option("--out", output, "Run directory")->default_val("runs/train");

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint under one prompt setting");
    add_common(eval_cmd);
    eval_cmd->add_option("--data", data, "Test annotations (file or directory)");
    eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file");
    eval_cmd->add_option_function<int>("--setting", [&](int s) { setting = s; }, "Prompt setting 1-4")
        ->check(CLI::Range(1, 4));
    eval_cmd->add_option_function<double>("--score-threshold", [&](double t) { threshold = t; }, "Score threshold")
        ->check(CLI::Range(0.0, 1.0));
    eval_cmd->add_option_function<double>("--jitter", [&](double j) { jitter = j; }, "Prompt jitter (box fraction)");
    eval_cmd->add_option_function<int>("--points", [&](int p) { points = p; }, "Prompted instances under setting 3");
    eval_cmd->add_option("--out", output, "Directory for report.txt and report.json");

    auto* infer_cmd = app.add_subcommand("infer", "Run one prompted inference and print the response");
    add_common(infer_cmd);
    infer_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file");
    infer_cmd->add_option("--image", image, "PNG image")->required();
    infer_cmd->add_option("--prompts", prompts_file, "JSON list of {x, y, category}")->required();
    infer_cmd->add_option_function<double>("--score-threshold", [&](double t) { threshold = t; }, "Score threshold")
        ->check(CLI::Range(0.0, 1.0));

    auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP inference API");
    add_common(serve_cmd);
    serve_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file");
    serve_cmd->add_option("--data", data, "Directory of PNG images to expose");
    serve_cmd->add_option_function<int>("--port", [&](int p) { port = p; }, "Port")->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--host", host, "Bind address");
    serve_cmd->add_option_function<double>("--score-threshold", [&](double t) { threshold = t; }, "Default threshold")
        ->check(CLI::Range(0.0, 1.0));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << '\n' << app.help();
        return 1;
    }

    try {
        if (generate->parsed()) {
            const RunConfig config = effective_config(common, err);
            const std::filesystem::path root(output);
            const auto& g = config.generator;
            data::export_annotations(data::generate_dataset(g.scenes, g.train_scenes, data::derive_seed(config.seed, 1), "train"),
                                     root / "train");
            data::export_annotations(data::generate_dataset(g.scenes, g.test_scenes, data::derive_seed(config.seed, 2), "test"),
                                     root / "test");
            out << "wrote " << g.train_scenes << " train and " << g.test_scenes << " test scenes to " << root.string()
                << '\n';
        } else if (train_cmd->parsed()) {
            const RunConfig config = effective_config(common, err);
            const auto dataset = data::ingest_annotations(annotation_file(data));
            std::filesystem::create_directories(output);
            std::ofstream(std::filesystem::path(output) / "run_config.json") << run_config_to_json(config) << '\n';
            model::DealModel model(config.model);
            std::size_t seen = 0;
            const auto result = train::train(model, dataset, config.training, output, [&](const train::StepRecord& r) {
                if (++seen % 1000 == 0) {
                    err << "epoch " << r.epoch + 1 << " step " << r.step << " loss " << r.total << '\n';
                }
            });
            out << "trained " << result.optimizer_steps << " steps; final checkpoint " << result.final_checkpoint.string()
                << '\n';
        } else if (eval_cmd->parsed()) {
            const RunConfig config = effective_config(common, err);
            const auto model = require_model(config, checkpoint);
            const auto dataset = data::ingest_annotations(annotation_file(data));
            eval::EvalOptions options;
            options.setting = data::setting_from_int(setting.value_or(config.evaluation.setting));
            options.seed = config.seed;
            options.score_threshold = threshold.value_or(config.evaluation.score_threshold);
            options.sampling.jitter = jitter.value_or(config.evaluation.jitter);
            options.sampling.points = points ? static_cast<std::size_t>(*points) : config.evaluation.points;
            const auto report = eval::evaluate_setting(eval::DealDetector(*model), dataset, options);
            out << eval::format_report(report);
            if (!output.empty()) {
                std::filesystem::create_directories(output);
                std::ofstream(std::filesystem::path(output) / "report.txt") << eval::format_report(report);
                std::ofstream(std::filesystem::path(output) / "report.json") << eval::report_to_json(report) << '\n';
            }
        } else if (infer_cmd->parsed()) {
            const RunConfig config = effective_config(common, err);
            const auto model = require_model(config, checkpoint);
            if (!std::filesystem::exists(image)) throw UsageError("image not found: " + image);
            const auto response = infer_image(*model, data::read_png(image), read_prompts(prompts_file),
                                              threshold.value_or(config.model.score_threshold));
            out << infer_response_to_json(response) << '\n';
        } else if (serve_cmd->parsed()) {
            const RunConfig config = effective_config(common, err);
            auto state = std::make_shared<ServiceState>();
            state->model = require_model(config, checkpoint);
            state->images = scan_images(data.empty() ? config.service.image_dir : data);
            state->default_threshold = threshold.value_or(config.model.score_threshold);
            HttpService service(state);
            const int bound = service.bind(host.empty() ? config.service.host : host, port.value_or(config.service.port));
            out << "serving " << state->images.size() << " images on port " << bound << std::endl;
            g_running_service = &service;
            std::signal(SIGINT, stop_on_signal);
            std::signal(SIGTERM, stop_on_signal);
            service.listen();
            g_running_service = nullptr;
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const InferError& e) {
        err << "error: " << e.what() << '\n';
        return e.status() < 500 ? 1 : 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

}  // namespace deal::service
