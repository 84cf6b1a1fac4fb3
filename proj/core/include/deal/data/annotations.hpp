#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "deal/data/scene.hpp"

namespace deal::data {

class AnnotationParseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Detection-interchange layout:
//   { "images": [{"id", "file_name", "width", "height"}],
//     "annotations": [{"id", "image_id", "bbox": [x, y, w, h], "category_id"}],
//     "categories": [{"id", "name"}] }
// Image file names are resolved relative to the annotation file; a scene id
// is its file name without extension.
Dataset ingest_annotations(const std::filesystem::path& annotation_file);

// Writes `annotations.json` plus `images/<scene id>.png` under `directory`.
void export_annotations(const Dataset& dataset, const std::filesystem::path& directory);

// Annotation document without touching image files.
std::string annotations_to_json(const Dataset& dataset);

}  // namespace deal::data
