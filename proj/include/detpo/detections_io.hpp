#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "detpo/dataset.hpp"
#include "detpo/eval.hpp"

namespace detpo {

// One JSON object per line:
// {"image_id": .., "category_id": <COCO id>, "bbox": [x1, y1, x2, y2], "score": ..}
// with pixel-space corners.
void write_detections(std::ostream& out, std::span<const Detection> detections,
                      std::span<const ClassSpec> classes);
void write_detections_file(const std::filesystem::path& file,
                           std::span<const Detection> detections,
                           std::span<const ClassSpec> classes);

// Blank lines are skipped. Unknown category ids and malformed lines raise
// DatasetError with the line number.
std::vector<Detection> read_detections(std::istream& in, const LoadedDataset& dataset);
std::vector<Detection> read_detections_file(const std::filesystem::path& file,
                                            const LoadedDataset& dataset);

}  // namespace detpo
