#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detpo/geometry.hpp"

namespace detpo {

using ImageId = std::int64_t;
// Dense class index in [0, C).
using ClassId = int;

struct ImageRecord {
  ImageId id = 0;
  std::filesystem::path path;
  // In-memory payload; takes precedence over `path` when set.
  std::shared_ptr<const std::vector<std::uint8_t>> bytes;
  int width = 0;
  int height = 0;

  CoordinateSpace pixel_space() const;

  // Reads the encoded image. Throws ImageError when the file is unreadable.
  std::vector<std::uint8_t> load_bytes() const;
};

struct GroundTruthBox {
  std::int64_t annotation_id = 0;
  ImageId image_id = 0;
  ClassId class_id = 0;
  BoundingBox box;
};

struct ClassSpec {
  ClassId id = 0;
  std::int64_t coco_id = 0;
  std::string name;
  std::string description;
  std::string instructions;

  // Text used as the seed definition; falls back to the class name.
  std::string seed_definition() const;
};

enum class SplitRole { kTrain, kVal, kTest };

std::string to_string(SplitRole role);
SplitRole split_role_from_string(const std::string& name);

/// Images and ground truth of one split, indexed by image and by class.
/// Immutable after construction.
class DatasetSplit {
 public:
  DatasetSplit() = default;
  DatasetSplit(SplitRole role, std::vector<ImageRecord> images,
               std::vector<GroundTruthBox> ground_truth, int num_classes);

  SplitRole role() const { return role_; }
  int num_classes() const { return num_classes_; }
  const std::vector<ImageRecord>& images() const { return images_; }
  const std::vector<GroundTruthBox>& ground_truth() const { return ground_truth_; }

  bool contains_image(ImageId id) const;
  const ImageRecord& image(ImageId id) const;

  // Indices into ground_truth().
  std::span<const std::size_t> ground_truth_for_image(ImageId id) const;
  std::span<const std::size_t> ground_truth_for_class(ClassId c) const;

  // Sorted ids of images containing at least one instance of `c`.
  std::vector<ImageId> images_with_class(ClassId c) const;
  std::size_t instance_count(ClassId c) const;

  // Keeps only the listed images (and their boxes), in original order.
  DatasetSplit restricted_to(const std::vector<ImageId>& keep) const;

 private:
  SplitRole role_ = SplitRole::kTrain;
  int num_classes_ = 0;
  std::vector<ImageRecord> images_;
  std::vector<GroundTruthBox> ground_truth_;
  std::map<ImageId, std::size_t> image_index_;
  std::map<ImageId, std::vector<std::size_t>> by_image_;
  std::vector<std::vector<std::size_t>> by_class_;
};

struct LoadedDataset {
  std::vector<ClassSpec> classes;
  DatasetSplit split;

  std::optional<ClassId> find_class(const std::string& name) const;
  const ClassSpec* find_by_coco_id(std::int64_t coco_id) const;
};

// Sidecar metadata: {"<class name>": {"description": ..., "instructions": ...}}.
struct ClassMetadata {
  std::string description;
  std::string instructions;
};
std::map<std::string, ClassMetadata> load_class_metadata(const std::filesystem::path& file);

/// Builds a split from parsed COCO JSON. Categories are mapped to dense
/// ids in ascending COCO id order; boxes are converted from xywh and
/// clamped to the image.
LoadedDataset load_coco(const nlohmann::json& coco, const std::filesystem::path& image_root,
                        SplitRole role,
                        const std::map<std::string, ClassMetadata>& metadata = {});

LoadedDataset load_coco_file(const std::filesystem::path& annotation_file,
                             const std::filesystem::path& image_root, SplitRole role,
                             const std::optional<std::filesystem::path>& metadata_file = {});

/// Keeps at most `k` images per class, sampled deterministically from
/// `seed`. Images without annotations are dropped.
DatasetSplit subsample_k_shot(const DatasetSplit& split, int k, std::uint64_t seed);

}  // namespace detpo
