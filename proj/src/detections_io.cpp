#include "detpo/detections_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "detpo/error.hpp"

namespace detpo {

void write_detections(std::ostream& out, std::span<const Detection> detections,
                      std::span<const ClassSpec> classes) {
  for (const auto& det : detections) {
    nlohmann::ordered_json line;
    line["image_id"] = det.image_id;
    line["category_id"] = classes[static_cast<std::size_t>(det.class_id)].coco_id;
    line["bbox"] = {det.box.x1, det.box.y1, det.box.x2, det.box.y2};
    line["score"] = det.score;
    out << line.dump() << '\n';
  }
}

void write_detections_file(const std::filesystem::path& file,
                           std::span<const Detection> detections,
                           std::span<const ClassSpec> classes) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  write_detections(out, detections, classes);
}

std::vector<Detection> read_detections(std::istream& in, const LoadedDataset& dataset) {
  std::vector<Detection> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "detections line " + std::to_string(number);
    const auto doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw DatasetError(where + ": not a JSON object");
    try {
      Detection det;
      det.image_id = doc.at("image_id").get<ImageId>();
      const auto coco_id = doc.at("category_id").get<std::int64_t>();
      const ClassSpec* cls = dataset.find_by_coco_id(coco_id);
      if (cls == nullptr) {
        throw DatasetError(where + ": unknown category id " + std::to_string(coco_id));
      }
      det.class_id = cls->id;
      det.box = box_from_json(doc.at("bbox"), CornerOrder::kXyxy);
      det.score = doc.value("score", 1.0);
      out.push_back(det);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(where + ": " + e.what());
    } catch (const ContractViolation& e) {
      throw DatasetError(where + ": " + e.what());
    }
  }
  return out;
}

std::vector<Detection> read_detections_file(const std::filesystem::path& file,
                                            const LoadedDataset& dataset) {
  std::ifstream in(file);
  if (!in) throw DatasetError("cannot read detections file " + file.string());
  return read_detections(in, dataset);
}

}  // namespace detpo
