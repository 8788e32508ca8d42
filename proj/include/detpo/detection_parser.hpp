#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "detpo/dataset.hpp"
#include "detpo/eval.hpp"
#include "detpo/geometry.hpp"

namespace detpo {

inline constexpr std::size_t kMaxDetectionsPerResponse = 20;

struct ParsedDetections {
  std::vector<Detection> detections;
  bool parse_failed = false;
  std::size_t unknown_labels = 0;
  std::size_t malformed = 0;
  std::size_t duplicates = 0;
  std::size_t truncated = 0;
};

/// Reads model output into pixel-space detections. Takes the first JSON
/// array in the text (code fences and surrounding prose are tolerated; a
/// truncated array keeps its complete elements). Elements need "bbox_2d"
/// and a label matching a class name up to case and whitespace; a missing
/// score becomes 1.0. Boxes are corner-normalized, clamped to the image,
/// exact duplicates dropped and the result capped at 20.
ParsedDetections parse_detections(std::string_view text, const CoordinateSpace& expected_space,
                                  const ImageRecord& image, std::span<const ClassSpec> classes);

// Canonical model-style JSON array for `detections` in `space`.
std::string serialize_detections(std::span<const Detection> detections,
                                 const CoordinateSpace& space, const ImageRecord& image,
                                 std::span<const ClassSpec> classes);

// Finds the span of the first well-formed (or salvageable) JSON array.
std::optional<nlohmann::json> extract_json_array(std::string_view text);

}  // namespace detpo
