#include "detpo/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "detpo/error.hpp"
#include "detpo/random.hpp"

namespace detpo {

CoordinateSpace ImageRecord::pixel_space() const {
  return CoordinateSpace::pixel(width, height);
}

std::vector<std::uint8_t> ImageRecord::load_bytes() const {
  if (bytes) {
    return *bytes;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ImageError("cannot read image " + path.string());
  }
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::string ClassSpec::seed_definition() const {
  std::string out = description;
  if (!instructions.empty()) {
    if (!out.empty()) {
      out += "\n";
    }
    out += instructions;
  }
  return out.empty() ? name : out;
}

std::string to_string(SplitRole role) {
  switch (role) {
    case SplitRole::kTrain:
      return "train";
    case SplitRole::kVal:
      return "val";
    case SplitRole::kTest:
      return "test";
  }
  return "train";
}

SplitRole split_role_from_string(const std::string& name) {
  if (name == "train") return SplitRole::kTrain;
  if (name == "val" || name == "valid" || name == "validation") return SplitRole::kVal;
  if (name == "test") return SplitRole::kTest;
  throw ConfigError("unknown split '" + name + "'");
}

DatasetSplit::DatasetSplit(SplitRole role, std::vector<ImageRecord> images,
                           std::vector<GroundTruthBox> ground_truth, int num_classes)
    : role_(role),
      num_classes_(num_classes),
      images_(std::move(images)),
      ground_truth_(std::move(ground_truth)),
      by_class_(static_cast<std::size_t>(num_classes)) {
  for (std::size_t i = 0; i < images_.size(); ++i) {
    const auto& img = images_[i];
    if (img.width <= 0 || img.height <= 0) {
      throw DatasetError("image " + std::to_string(img.id) + " has non-positive size");
    }
    if (!image_index_.emplace(img.id, i).second) {
      throw DatasetError("duplicate image id " + std::to_string(img.id));
    }
  }
  for (std::size_t i = 0; i < ground_truth_.size(); ++i) {
    const auto& gt = ground_truth_[i];
    if (!image_index_.contains(gt.image_id)) {
      throw DatasetError("annotation " + std::to_string(gt.annotation_id) +
                         " references unknown image id " + std::to_string(gt.image_id));
    }
    if (gt.class_id < 0 || gt.class_id >= num_classes_) {
      throw DatasetError("annotation " + std::to_string(gt.annotation_id) +
                         " has class id out of range");
    }
    by_image_[gt.image_id].push_back(i);
    by_class_[static_cast<std::size_t>(gt.class_id)].push_back(i);
  }
}

bool DatasetSplit::contains_image(ImageId id) const { return image_index_.contains(id); }

const ImageRecord& DatasetSplit::image(ImageId id) const {
  auto it = image_index_.find(id);
  if (it == image_index_.end()) {
    throw DatasetError("unknown image id " + std::to_string(id));
  }
  return images_[it->second];
}

std::span<const std::size_t> DatasetSplit::ground_truth_for_image(ImageId id) const {
  auto it = by_image_.find(id);
  if (it == by_image_.end()) {
    return {};
  }
  return it->second;
}

std::span<const std::size_t> DatasetSplit::ground_truth_for_class(ClassId c) const {
  if (c < 0 || c >= num_classes_) {
    return {};
  }
  return by_class_[static_cast<std::size_t>(c)];
}

std::vector<ImageId> DatasetSplit::images_with_class(ClassId c) const {
  std::set<ImageId> ids;
  for (std::size_t i : ground_truth_for_class(c)) {
    ids.insert(ground_truth_[i].image_id);
  }
  return {ids.begin(), ids.end()};
}

std::size_t DatasetSplit::instance_count(ClassId c) const {
  return ground_truth_for_class(c).size();
}

DatasetSplit DatasetSplit::restricted_to(const std::vector<ImageId>& keep) const {
  const std::set<ImageId> wanted(keep.begin(), keep.end());
  std::vector<ImageRecord> images;
  for (const auto& img : images_) {
    if (wanted.contains(img.id)) {
      images.push_back(img);
    }
  }
  std::vector<GroundTruthBox> gts;
  for (const auto& gt : ground_truth_) {
    if (wanted.contains(gt.image_id)) {
      gts.push_back(gt);
    }
  }
  return DatasetSplit(role_, std::move(images), std::move(gts), num_classes_);
}

std::optional<ClassId> LoadedDataset::find_class(const std::string& name) const {
  for (const auto& c : classes) {
    if (c.name == name) {
      return c.id;
    }
  }
  return std::nullopt;
}

const ClassSpec* LoadedDataset::find_by_coco_id(std::int64_t coco_id) const {
  for (const auto& c : classes) {
    if (c.coco_id == coco_id) {
      return &c;
    }
  }
  return nullptr;
}

std::map<std::string, ClassMetadata> load_class_metadata(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw DatasetError("cannot read class metadata " + file.string());
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("malformed class metadata " + file.string() + ": " + e.what());
  }
  if (!doc.is_object()) {
    throw DatasetError("class metadata must be a JSON object keyed by class name");
  }
  std::map<std::string, ClassMetadata> out;
  for (const auto& [name, entry] : doc.items()) {
    ClassMetadata meta;
    if (entry.is_string()) {
      meta.description = entry.get<std::string>();
    } else if (entry.is_object()) {
      meta.description = entry.value("description", "");
      meta.instructions = entry.value("instructions", "");
    } else {
      throw DatasetError("class metadata for '" + name + "' must be a string or object");
    }
    out.emplace(name, std::move(meta));
  }
  return out;
}

namespace {

const nlohmann::json& require_array(const nlohmann::json& coco, const char* key) {
  if (!coco.contains(key) || !coco.at(key).is_array()) {
    throw DatasetError(std::string("COCO file lacks a '") + key + "' array");
  }
  return coco.at(key);
}

}  // namespace

LoadedDataset load_coco(const nlohmann::json& coco, const std::filesystem::path& image_root,
                        SplitRole role, const std::map<std::string, ClassMetadata>& metadata) {
  if (!coco.is_object()) {
    throw DatasetError("COCO annotations must be a JSON object");
  }
  LoadedDataset out;
  try {
    std::vector<std::pair<std::int64_t, std::string>> cats;
    for (const auto& cat : require_array(coco, "categories")) {
      cats.emplace_back(cat.at("id").get<std::int64_t>(), cat.at("name").get<std::string>());
    }
    std::sort(cats.begin(), cats.end());
    std::map<std::int64_t, ClassId> dense;
    for (const auto& [coco_id, name] : cats) {
      if (name.empty()) {
        throw DatasetError("category " + std::to_string(coco_id) + " has an empty name");
      }
      ClassSpec spec;
      spec.id = static_cast<ClassId>(out.classes.size());
      spec.coco_id = coco_id;
      spec.name = name;
      if (auto it = metadata.find(name); it != metadata.end()) {
        spec.description = it->second.description;
        spec.instructions = it->second.instructions;
      }
      if (!dense.emplace(coco_id, spec.id).second) {
        throw DatasetError("duplicate category id " + std::to_string(coco_id));
      }
      out.classes.push_back(std::move(spec));
    }

    std::vector<ImageRecord> images;
    std::map<ImageId, std::pair<int, int>> sizes;
    for (const auto& img : require_array(coco, "images")) {
      ImageRecord rec;
      rec.id = img.at("id").get<ImageId>();
      rec.path = image_root / img.at("file_name").get<std::string>();
      rec.width = img.at("width").get<int>();
      rec.height = img.at("height").get<int>();
      sizes[rec.id] = {rec.width, rec.height};
      images.push_back(std::move(rec));
    }

    std::vector<GroundTruthBox> gts;
    for (const auto& ann : require_array(coco, "annotations")) {
      GroundTruthBox gt;
      gt.annotation_id = ann.value("id", static_cast<std::int64_t>(gts.size()));
      gt.image_id = ann.at("image_id").get<ImageId>();
      const auto coco_cat = ann.at("category_id").get<std::int64_t>();
      auto cat = dense.find(coco_cat);
      if (cat == dense.end()) {
        throw DatasetError("annotation " + std::to_string(gt.annotation_id) +
                           " references unknown category id " + std::to_string(coco_cat));
      }
      gt.class_id = cat->second;
      const auto& bbox = ann.at("bbox");
      if (!bbox.is_array() || bbox.size() != 4 ||
          !std::all_of(bbox.begin(), bbox.end(), [](const auto& v) { return v.is_number(); })) {
        throw DatasetError("annotation " + std::to_string(gt.annotation_id) +
                           " has a malformed bbox");
      }
      const double w = bbox[2].get<double>();
      const double h = bbox[3].get<double>();
      if (w < 0.0 || h < 0.0) {
        throw DatasetError("annotation " + std::to_string(gt.annotation_id) +
                           " has negative bbox size");
      }
      auto size = sizes.find(gt.image_id);
      if (size == sizes.end()) {
        throw DatasetError("annotation " + std::to_string(gt.annotation_id) +
                           " references unknown image id " + std::to_string(gt.image_id));
      }
      gt.box = BoundingBox::from_xywh(bbox[0].get<double>(), bbox[1].get<double>(), w, h)
                   .clamped(size->second.first, size->second.second);
      gts.push_back(gt);
    }
    out.split = DatasetSplit(role, std::move(images), std::move(gts),
                             static_cast<int>(out.classes.size()));
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("malformed COCO annotations: ") + e.what());
  }
  return out;
}

LoadedDataset load_coco_file(const std::filesystem::path& annotation_file,
                             const std::filesystem::path& image_root, SplitRole role,
                             const std::optional<std::filesystem::path>& metadata_file) {
  std::ifstream in(annotation_file);
  if (!in) {
    throw DatasetError("cannot read annotations " + annotation_file.string());
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("annotations " + annotation_file.string() + " are not valid JSON: " +
                       e.what());
  }
  std::map<std::string, ClassMetadata> meta;
  if (metadata_file) {
    meta = load_class_metadata(*metadata_file);
  }
  return load_coco(doc, image_root, role, meta);
}

DatasetSplit subsample_k_shot(const DatasetSplit& split, int k, std::uint64_t seed) {
  if (k < 1) {
    throw ContractViolation("k-shot subsampling needs k >= 1");
  }
  const auto limit = static_cast<std::size_t>(k);
  std::vector<std::size_t> counts(static_cast<std::size_t>(split.num_classes()), 0);
  std::set<ImageId> kept;

  auto classes_in = [&](ImageId id) {
    std::set<ClassId> out;
    for (std::size_t i : split.ground_truth_for_image(id)) {
      out.insert(split.ground_truth()[i].class_id);
    }
    return out;
  };

  // An image is only added when every class it contains is still below k,
  // so the per-class cap holds even with co-occurring classes.
  for (ClassId c = 0; c < split.num_classes(); ++c) {
    auto candidates = split.images_with_class(c);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(candidates);
    for (ImageId id : candidates) {
      if (counts[static_cast<std::size_t>(c)] >= limit) {
        break;
      }
      if (kept.contains(id)) {
        continue;
      }
      const auto present = classes_in(id);
      const bool fits = std::all_of(present.begin(), present.end(), [&](ClassId other) {
        return counts[static_cast<std::size_t>(other)] < limit;
      });
      if (!fits) {
        continue;
      }
      kept.insert(id);
      for (ClassId other : present) {
        ++counts[static_cast<std::size_t>(other)];
      }
    }
  }
  return split.restricted_to({kept.begin(), kept.end()});
}

}  // namespace detpo
