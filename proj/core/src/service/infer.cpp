#include "deal/service/infer.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <nlohmann/json.hpp>

#include "deal/tensor/checkpoint.hpp"
#include "deal/train/pgcpp.hpp"

namespace deal::service {

using nlohmann::json;

namespace {

std::vector<std::uint8_t> decode_base64(const std::string& text) {
    std::string clean;
    clean.reserve(text.size());
    for (char ch : text) {
        if (!std::isspace(static_cast<unsigned char>(ch))) clean.push_back(ch);
    }
    if (clean.size() % 4 != 0) throw InferError(400, "image_base64 is not valid base64");
    std::vector<std::uint8_t> out(clean.size() / 4 * 3);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                  static_cast<int>(clean.size()));
    if (n < 0) throw InferError(400, "image_base64 is not valid base64");
    std::size_t size = static_cast<std::size_t>(n);
    // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
    if (!clean.empty() && clean.back() == '=') --size;
    if (clean.size() >= 2 && clean[clean.size() - 2] == '=') --size;
    out.resize(size);
    return out;
}

}  // namespace

std::map<std::string, ImageEntry> scan_images(const std::filesystem::path& directory) {
    std::map<std::string, ImageEntry> out;
    if (directory.empty()) return out;
    if (!std::filesystem::is_directory(directory)) {
        throw std::runtime_error("image directory not found: " + directory.string());
    }
    for (const auto& entry : std::filesystem::directory_iterator(directory)) {
        if (entry.path().extension() != ".png") continue;
        out.emplace(entry.path().stem().string(), ImageEntry{entry.path(), data::read_png(entry.path())});
    }
    return out;
}

std::shared_ptr<const model::DealModel> load_model(const model::ModelConfig& config,
                                                   const std::filesystem::path& checkpoint) {
    auto m = std::make_shared<model::DealModel>(config);
    assign_checkpoint(load_checkpoint(checkpoint), m->parameters().all());
    return m;
}

InferRequest parse_infer_request(const std::string& body) {
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::parse_error& e) {
        throw InferError(400, std::string("request body is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw InferError(400, "request body must be a JSON object");
    InferRequest req;
    try {
        for (const auto& [key, value] : doc.items()) {
            if (key == "image_id") {
                req.image_id = value.get<std::string>();
            } else if (key == "image_base64") {
                req.image_base64 = value.get<std::string>();
            } else if (key == "score_threshold") {
                if (!value.is_null()) req.score_threshold = value.get<double>();
            } else if (key == "prompts") {
                if (!value.is_array()) throw InferError(400, "prompts must be an array");
                for (const auto& p : value) {
                    req.prompts.push_back(data::PointPrompt{p.at("x").get<double>(), p.at("y").get<double>(),
                                                            p.value("category", 0)});
                }
            } else {
                throw InferError(400, "unknown request field '" + key + "'");
            }
        }
    } catch (const json::exception& e) {
        throw InferError(400, std::string("malformed request: ") + e.what());
    }
    return req;
}

std::string infer_response_to_json(const InferResponse& r) {
    json detections = json::array();
    for (const auto& d : r.detections) {
        detections.push_back({{"box", {d.box.cx, d.box.cy, d.box.w, d.box.h}},
                              {"score", d.score},
                              {"prompt_group", d.prompt_group}});
    }
    return json{{"detections", detections},
                {"n_query", r.n_query},
                {"density_map",
                 {{"width", r.density_map.width}, {"height", r.density_map.height}, {"values", r.density_map.values}}},
                {"timing_ms", r.timing_ms}}
        .dump();
}

InferResponse infer_image(const model::DealModel& model, const data::Image& image,
                          const std::vector<data::PointPrompt>& prompts, double score_threshold) {
    const auto start = std::chrono::steady_clock::now();
    if (prompts.empty()) throw InferError(400, kZeroPromptMessage);
    const double w = static_cast<double>(image.width()), h = static_cast<double>(image.height());
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const auto& p = prompts[i];
        if (!(p.x >= 0.0 && p.x <= w && p.y >= 0.0 && p.y <= h)) {
            throw InferError(400, "prompt " + std::to_string(i) + " at (" + std::to_string(p.x) + ", " +
                                      std::to_string(p.y) + ") lies outside the " + std::to_string(image.width()) +
                                      "x" + std::to_string(image.height()) + " image");
        }
    }
    if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) throw InferError(400, "score_threshold must lie in [0,1]");

    NoGradGuard no_grad;
    data::Scene scene;
    scene.image = image;
    const auto features = model.encode(train::scene_input(scene));
    data::PointPromptSet set;
    set.prompts = prompts;
    const auto out = model.run_prompts(features, set);

    InferResponse r;
    r.n_query = out.n_query;
    const double in_w = static_cast<double>(features.pyramid.image_width);
    const double in_h = static_cast<double>(features.pyramid.image_height);
    for (const auto& d : out.decoded.detections) {
        if (d.score < score_threshold) continue;
        // Boxes come out relative to the padded network input.
        model::Detection det = d;
        det.box.cx = std::clamp(d.box.cx * in_w / w, 0.0, 1.0);
        det.box.cy = std::clamp(d.box.cy * in_h / h, 0.0, 1.0);
        det.box.w = d.box.w * in_w / w;
        det.box.h = d.box.h * in_h / h;
        r.detections.push_back(det);
    }
    r.density_map.width = out.density.width();
    r.density_map.height = out.density.height();
    const auto values = out.density.grid.data();
    r.density_map.values.assign(values.begin(), values.end());
    r.timing_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return r;
}

InferResponse handle_infer(const InferRequest& request, const ServiceState& state) {
    if (request.prompts.empty()) throw InferError(400, kZeroPromptMessage);
    if (!state.model) throw InferError(503, "no checkpoint loaded");
    const double threshold = request.score_threshold.value_or(state.default_threshold);
    if (request.image_id && request.image_base64) {
        throw InferError(400, "give either image_id or image_base64, not both");
    }
    if (request.image_id) {
        auto it = state.images.find(*request.image_id);
        if (it == state.images.end()) throw InferError(404, "unknown image id '" + *request.image_id + "'");
        return infer_image(*state.model, it->second.image, request.prompts, threshold);
    }
    if (request.image_base64) {
        if (request.image_base64->size() / 4 * 3 > kMaxInlineImageBytes) {
            throw InferError(413, "inline image exceeds 8 MiB; register it in the image directory instead");
        }
        const auto bytes = decode_base64(*request.image_base64);
        data::Image image;
        try {
            image = data::decode_png(bytes);
        } catch (const data::ImageIoError& e) {
            throw InferError(400, std::string("inline image: ") + e.what());
        }
        return infer_image(*state.model, image, request.prompts, threshold);
    }
    throw InferError(400, "request needs image_id or image_base64");
}

}  // namespace deal::service
