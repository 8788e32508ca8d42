#pragma once

#include <optional>
#include <set>
#include <span>

#include <nlohmann/json.hpp>

#include "detpo/dataset.hpp"
#include "detpo/eval.hpp"

namespace detpo {

enum class ErrorKind { kFalsePositive, kFalseNegative };

struct ErrorRecord {
  ErrorKind kind = ErrorKind::kFalsePositive;
  ImageId image_id = 0;
  BoundingBox box;  // offending detection (FP) or missed ground truth (FN)
  double severity = 0.0;
  double score = 0.0;  // detection confidence for FPs
  // FP: nearest ground truth of another class. FN: best overlapping detection.
  std::optional<BoundingBox> support_box;
  double support_iou = 0.0;
  double sigma = 0.0;  // FN only
};

// Highest s*IoU correctly detected instance, drawn as the positive example.
struct MatchExemplar {
  ImageId image_id = 0;
  BoundingBox box;  // ground-truth box of the matched pair
  double strength = 0.0;
};

struct ErrorSelection {
  std::optional<ErrorRecord> false_positive;
  std::optional<ErrorRecord> false_negative;
  std::optional<MatchExemplar> best_match;

  bool empty() const { return !false_positive && !false_negative; }
};

/// s * max(0.2, max IoU against ground truth of other classes).
double fp_severity(double score, const BoundingBox& box,
                   std::span<const BoundingBox> other_class_ground_truth);

struct FnSeverity {
  double epsilon = 1.0;  // 1 - sigma
  double sigma = 0.0;    // max over detections of s * IoU
  std::optional<std::size_t> best_detection;
};

FnSeverity fn_severity(const BoundingBox& ground_truth, std::span<const Detection> detections);

/// Picks the most severe false positive and false negative of `class_id`
/// from `eval` (computed on `split`), skipping images in `excluded`.
ErrorSelection select_worst_errors(const EvalResult& eval, const DatasetSplit& split,
                                   ClassId class_id, const std::set<ImageId>& excluded);

// No unmatched detections or ground truth of `class_id` at IoU 0.5.
bool is_perfect(const EvalResult& eval, const DatasetSplit& split, ClassId class_id);

nlohmann::ordered_json to_json(const ErrorRecord& record);
nlohmann::ordered_json to_json(const MatchExemplar& exemplar);

}  // namespace detpo
