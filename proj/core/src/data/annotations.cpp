#include "deal/data/annotations.hpp"

#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

namespace deal::data {

using nlohmann::json;

namespace {

json dataset_document(const Dataset& dataset) {
    json images = json::array();
    json annotations = json::array();
    json categories = json::array();
    std::size_t annotation_id = 1;
    for (std::size_t i = 0; i < dataset.scenes.size(); ++i) {
        const Scene& s = dataset.scenes[i];
        images.push_back({{"id", i + 1},
                          {"file_name", "images/" + s.id + ".png"},
                          {"width", s.width()},
                          {"height", s.height()}});
        for (const auto& a : s.annotations) {
            annotations.push_back({{"id", annotation_id++},
                                   {"image_id", i + 1},
                                   {"bbox", {a.box.x, a.box.y, a.box.w, a.box.h}},
                                   {"category_id", a.category}});
        }
    }
    for (const auto& c : dataset.categories) categories.push_back({{"id", c.id}, {"name", c.name}});
    return json{{"images", images}, {"annotations", annotations}, {"categories", categories}};
}

template <typename T>
T field(const json& record, const char* key, const std::string& context) {
    if (!record.is_object() || !record.contains(key)) {
        throw AnnotationParseError(context + ": missing field '" + key + "'");
    }
    try {
        return record.at(key).get<T>();
    } catch (const json::exception& e) {
        throw AnnotationParseError(context + ": field '" + key + "' has the wrong type (" + e.what() + ")");
    }
}

}  // namespace

std::string annotations_to_json(const Dataset& dataset) { return dataset_document(dataset).dump(2); }

void export_annotations(const Dataset& dataset, const std::filesystem::path& directory) {
    std::filesystem::create_directories(directory / "images");
    for (const auto& s : dataset.scenes) write_png(directory / "images" / (s.id + ".png"), s.image);
    std::ofstream out(directory / "annotations.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (directory / "annotations.json").string());
    out << annotations_to_json(dataset) << '\n';
}

Dataset ingest_annotations(const std::filesystem::path& annotation_file) {
    std::ifstream in(annotation_file);
    if (!in) throw AnnotationParseError("cannot open annotation file " + annotation_file.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw AnnotationParseError(annotation_file.string() + ": " + e.what());
    }
    const std::string file = annotation_file.string();
    for (const char* key : {"images", "annotations", "categories"}) {
        if (!doc.contains(key) || !doc[key].is_array()) {
            throw AnnotationParseError(file + ": top-level '" + key + "' array missing");
        }
    }
    Dataset ds;
    for (std::size_t i = 0; i < doc["categories"].size(); ++i) {
        const auto& rec = doc["categories"][i];
        const std::string ctx = file + ": categories[" + std::to_string(i) + "]";
        ds.categories.push_back(Category{field<int>(rec, "id", ctx), field<std::string>(rec, "name", ctx)});
    }
    const auto base = annotation_file.parent_path();
    std::map<long long, std::size_t> by_image_id;
    for (std::size_t i = 0; i < doc["images"].size(); ++i) {
        const auto& rec = doc["images"][i];
        const std::string ctx = file + ": images[" + std::to_string(i) + "]";
        const auto id = field<long long>(rec, "id", ctx);
        const auto name = field<std::string>(rec, "file_name", ctx);
        const auto width = field<std::size_t>(rec, "width", ctx);
        const auto height = field<std::size_t>(rec, "height", ctx);
        Scene scene;
        scene.id = std::filesystem::path(name).stem().string();
        scene.image = read_png(base / name);
        if (scene.width() != width || scene.height() != height) {
            throw AnnotationParseError(ctx + ": declared " + std::to_string(width) + "x" + std::to_string(height) +
                                       " but " + name + " is " + std::to_string(scene.width()) + "x" +
                                       std::to_string(scene.height()));
        }
        if (!by_image_id.emplace(id, ds.scenes.size()).second) {
            throw AnnotationParseError(ctx + ": duplicate image id " + std::to_string(id));
        }
        ds.scenes.push_back(std::move(scene));
    }
    for (std::size_t i = 0; i < doc["annotations"].size(); ++i) {
        const auto& rec = doc["annotations"][i];
        const std::string ctx = file + ": annotations[" + std::to_string(i) + "]";
        const auto image_id = field<long long>(rec, "image_id", ctx);
        const auto bbox = field<std::vector<double>>(rec, "bbox", ctx);
        if (bbox.size() != 4) throw AnnotationParseError(ctx + ": bbox must have 4 numbers");
        auto it = by_image_id.find(image_id);
        if (it == by_image_id.end()) throw AnnotationParseError(ctx + ": unknown image_id " + std::to_string(image_id));
        ds.scenes[it->second].annotations.push_back(
            Annotation{Box{bbox[0], bbox[1], bbox[2], bbox[3]}, field<int>(rec, "category_id", ctx)});
    }
    for (const auto& s : ds.scenes) {
        try {
            validate_scene(s, ds.categories);
        } catch (const ValidationError& e) {
            throw ValidationError(file + ": " + e.what());
        }
    }
    return ds;
}

}  // namespace deal::data
