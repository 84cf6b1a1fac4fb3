#include "deal/service/run_config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <type_traits>

namespace deal::service {

using nlohmann::json;

namespace {

json to_document(const RunConfig& c) {
    const auto& m = c.model;
    const auto& g = c.generator;
    const auto& t = c.training;
    return json{
        {"seed", c.seed},
        {"model",
         {{"channels", m.channels},
          {"stem_channels", m.stem_channels},
          {"stage_depth", m.stage_depth},
          {"hidden", m.hidden},
          {"heads", m.heads},
          {"ffn_hidden", m.ffn_hidden},
          {"decoder_layers", m.decoder_layers},
          {"correlation_channels", m.correlation_channels},
          {"lambda", m.lambda},
          {"alpha", m.alpha},
          {"gamma", m.gamma},
          {"n_min", m.n_min},
          {"n_max", m.n_max},
          {"score_threshold", m.score_threshold},
          {"cost_class", m.cost_class},
          {"cost_l1", m.cost_l1},
          {"cost_giou", m.cost_giou},
          {"loss_l1", m.loss_l1},
          {"loss_giou", m.loss_giou},
          {"init_seed", m.init_seed}}},
        {"generator",
         {{"categories", g.scenes.categories},
          {"min_objects", g.scenes.min_objects},
          {"max_objects", g.scenes.max_objects},
          {"min_size", g.scenes.min_size},
          {"max_size", g.scenes.max_size},
          {"width", g.scenes.width},
          {"height", g.scenes.height},
          {"clutter", g.scenes.clutter},
          {"max_iou", g.scenes.max_iou},
          {"placement_attempts", g.scenes.placement_attempts},
          {"train_scenes", g.train_scenes},
          {"test_scenes", g.test_scenes}}},
        {"training",
         {{"cycles", t.cycles},
          {"inner_steps", t.inner_steps},
          {"epochs", t.epochs},
          {"checkpoint_every", t.checkpoint_every},
          {"batch_size", t.batch_size},
          {"warmup_steps", t.warmup_steps},
          {"min_lr_fraction", t.min_lr_fraction},
          {"learning_rate", t.optimizer.learning_rate},
          {"beta1", t.optimizer.beta1},
          {"beta2", t.optimizer.beta2},
          {"weight_decay", t.optimizer.weight_decay},
          {"max_grad_norm", t.optimizer.max_grad_norm},
          {"policy", train::policy_name(t.policy)}}},
        {"evaluation",
         {{"setting", c.evaluation.setting},
          {"score_threshold", c.evaluation.score_threshold},
          {"jitter", c.evaluation.jitter},
          {"points", c.evaluation.points}}},
        {"service",
         {{"host", c.service.host},
          {"port", c.service.port},
          {"image_dir", c.service.image_dir},
          {"checkpoint", c.service.checkpoint}}}};
}

template <typename T>
void read(const json& doc, const char* section, const char* key, T& out) {
    const json& v = section ? doc.at(section).at(key) : doc.at(key);
    bool fits = true;
    if constexpr (std::is_same_v<T, bool>) {
        fits = v.is_boolean();
    } else if constexpr (std::is_unsigned_v<T>) {
        fits = v.is_number_unsigned();
    } else if constexpr (std::is_integral_v<T>) {
        fits = v.is_number_integer();
    } else if constexpr (std::is_floating_point_v<T>) {
        fits = v.is_number();
    }
    try {
        if (!fits) throw json::type_error::create(302, "type mismatch", &v);
        out = v.get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config key '") + (section ? std::string(section) + "." : "") + key +
                          "' has the wrong type");
    }
}

RunConfig from_document(const json& d) {
    RunConfig c;
    read(d, nullptr, "seed", c.seed);
    auto& m = c.model;
    read(d, "model", "channels", m.channels);
    read(d, "model", "stem_channels", m.stem_channels);
    read(d, "model", "stage_depth", m.stage_depth);
    read(d, "model", "hidden", m.hidden);
    read(d, "model", "heads", m.heads);
    read(d, "model", "ffn_hidden", m.ffn_hidden);
    read(d, "model", "decoder_layers", m.decoder_layers);
    read(d, "model", "correlation_channels", m.correlation_channels);
    read(d, "model", "lambda", m.lambda);
    read(d, "model", "alpha", m.alpha);
    read(d, "model", "gamma", m.gamma);
    read(d, "model", "n_min", m.n_min);
    read(d, "model", "n_max", m.n_max);
    read(d, "model", "score_threshold", m.score_threshold);
    read(d, "model", "cost_class", m.cost_class);
    read(d, "model", "cost_l1", m.cost_l1);
    read(d, "model", "cost_giou", m.cost_giou);
    read(d, "model", "loss_l1", m.loss_l1);
    read(d, "model", "loss_giou", m.loss_giou);
    read(d, "model", "init_seed", m.init_seed);
    auto& g = c.generator;
    read(d, "generator", "categories", g.scenes.categories);
    read(d, "generator", "min_objects", g.scenes.min_objects);
    read(d, "generator", "max_objects", g.scenes.max_objects);
    read(d, "generator", "min_size", g.scenes.min_size);
    read(d, "generator", "max_size", g.scenes.max_size);
    read(d, "generator", "width", g.scenes.width);
    read(d, "generator", "height", g.scenes.height);
    read(d, "generator", "clutter", g.scenes.clutter);
    read(d, "generator", "max_iou", g.scenes.max_iou);
    read(d, "generator", "placement_attempts", g.scenes.placement_attempts);
    read(d, "generator", "train_scenes", g.train_scenes);
    read(d, "generator", "test_scenes", g.test_scenes);
    auto& t = c.training;
    read(d, "training", "cycles", t.cycles);
    read(d, "training", "inner_steps", t.inner_steps);
    read(d, "training", "epochs", t.epochs);
    read(d, "training", "checkpoint_every", t.checkpoint_every);
    read(d, "training", "batch_size", t.batch_size);
    read(d, "training", "warmup_steps", t.warmup_steps);
    read(d, "training", "min_lr_fraction", t.min_lr_fraction);
    read(d, "training", "learning_rate", t.optimizer.learning_rate);
    read(d, "training", "beta1", t.optimizer.beta1);
    read(d, "training", "beta2", t.optimizer.beta2);
    read(d, "training", "weight_decay", t.optimizer.weight_decay);
    read(d, "training", "max_grad_norm", t.optimizer.max_grad_norm);
    std::string policy;
    read(d, "training", "policy", policy);
    try {
        t.policy = train::policy_from_name(policy);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("training.policy: ") + e.what());
    }
    t.lambda = m.lambda;
    t.seed = c.seed;
    read(d, "evaluation", "setting", c.evaluation.setting);
    read(d, "evaluation", "score_threshold", c.evaluation.score_threshold);
    read(d, "evaluation", "jitter", c.evaluation.jitter);
    read(d, "evaluation", "points", c.evaluation.points);
    read(d, "service", "host", c.service.host);
    read(d, "service", "port", c.service.port);
    read(d, "service", "image_dir", c.service.image_dir);
    read(d, "service", "checkpoint", c.service.checkpoint);
    return c;
}

void reject_unknown(const json& input, const json& known, const std::string& prefix) {
    for (const auto& [key, value] : input.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!known.contains(key)) throw ConfigError("unknown config key '" + path + "'");
        if (value.is_null()) throw ConfigError("config key '" + path + "' is null");
        if (known[key].is_object()) {
            if (!value.is_object()) throw ConfigError("config key '" + path + "' must be an object");
            reject_unknown(value, known[key], path);
        }
    }
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    json input;
    try {
        input = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!input.is_object()) throw ConfigError("config must be a JSON object");
    json merged = to_document(RunConfig{});
    reject_unknown(input, merged, "");
    merged.merge_patch(input);
    RunConfig config = from_document(merged);
    try {
        model::validate(config.model);
        train::validate(config.training);
        data::setting_from_int(config.evaluation.setting);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    try {
        return parse_run_config(text.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string run_config_to_json(const RunConfig& config) { return to_document(config).dump(2); }

}  // namespace deal::service
