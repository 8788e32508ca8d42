#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "detpo/dataset.hpp"
#include "detpo/geometry.hpp"

namespace detpo {

struct Detection {
  ImageId image_id = 0;
  ClassId class_id = 0;
  BoundingBox box;  // pixel space
  double score = 1.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

// Indices refer to the detection and ground-truth spans passed to the
// matcher.
struct MatchPair {
  std::size_t detection = 0;
  std::size_t ground_truth = 0;
  double iou = 0.0;
};

struct MatchResult {
  std::vector<MatchPair> pairs;
  std::vector<std::size_t> unmatched_detections;
  std::vector<std::size_t> unmatched_ground_truths;
  double iou_threshold = 0.5;
};

/// Greedy one-to-one matching. Detections are visited by descending score
/// (stable on input order) and each takes the unmatched ground truth of the
/// same image and class with the highest IoU >= threshold. Zero-area ground
/// truth is never matched.
MatchResult greedy_match(std::span<const Detection> detections,
                         std::span<const GroundTruthBox> ground_truth, double iou_threshold);

inline constexpr std::size_t kNumIouThresholds = 10;
inline constexpr std::size_t kMaxDetectionsPerImage = 100;

// 0.50, 0.55, ..., 0.95.
std::array<double, kNumIouThresholds> coco_iou_thresholds();

/// COCO-style 101-point interpolated AP for one class at one IoU threshold.
/// Detections are capped at 100 per image (highest scores kept). Returns
/// nullopt when the class has no ground truth.
std::optional<double> average_precision(std::span<const Detection> detections,
                                        std::span<const GroundTruthBox> ground_truth,
                                        ClassId class_id, double iou_threshold,
                                        std::size_t max_per_image = kMaxDetectionsPerImage);

struct ClassMetrics {
  ClassId class_id = 0;
  std::size_t ground_truth_count = 0;
  std::size_t detection_count = 0;
  std::array<double, kNumIouThresholds> ap_at_iou{};
  double ap = 0.0;  // mean over thresholds
  double ap50 = 0.0;

  bool has_ground_truth() const { return ground_truth_count > 0; }
};

struct ImageF1 {
  ImageId image_id = 0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct EvalResult {
  std::vector<ClassMetrics> per_class;  // one entry per class id
  double map = 0.0;                     // mean AP over classes with ground truth
  double map50 = 0.0;
  std::vector<ImageF1> per_image;
  std::vector<Detection> detections;  // the evaluated detections
  MatchResult matches;                // greedy at IoU 0.5 over the whole split

  const ClassMetrics& for_class(ClassId c) const { return per_class.at(static_cast<std::size_t>(c)); }
};

EvalResult coco_map(std::span<const Detection> detections, const DatasetSplit& split);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Single-image metrics from greedy-match counts. An image with neither
/// detections nor ground truth scores 1.0 across the board.
PrecisionRecall per_image_f1(std::span<const Detection> detections,
                             std::span<const GroundTruthBox> ground_truth,
                             double iou_threshold = 0.5);

/// (C+1) x (C+1) counts. Row C is background (unmatched detections), column C
/// is "missed" (unmatched ground truth).
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::vector<std::size_t>> counts;

  std::size_t at(int gt_row, int pred_col) const {
    return counts.at(static_cast<std::size_t>(gt_row)).at(static_cast<std::size_t>(pred_col));
  }
  std::size_t row_sum(int row) const;
};

ConfusionMatrix confusion_matrix(std::span<const Detection> detections,
                                 const DatasetSplit& split, double iou_threshold = 0.5,
                                 double score_threshold = 0.3);

enum class TideError { kCls, kLoc, kBoth, kDupe, kBkg, kMiss };

struct TideReport {
  std::size_t cls = 0;
  std::size_t loc = 0;
  std::size_t both = 0;
  std::size_t dupe = 0;
  std::size_t bkg = 0;
  std::size_t miss = 0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;  // unmatched detections
  std::size_t false_negatives = 0;  // unmatched ground truth
  // Kind assigned to each unmatched detection, aligned with the input order
  // of `detections`; nullopt for true positives.
  std::vector<std::optional<TideError>> detection_kinds;
};

/// TIDE-style error counts at foreground IoU 0.5 and background IoU 0.1.
TideReport tide_decompose(std::span<const Detection> detections, const DatasetSplit& split);

const char* to_string(TideError kind);

nlohmann::ordered_json to_json(const EvalResult& result, const std::vector<ClassSpec>& classes);
nlohmann::ordered_json to_json(const TideReport& report);
nlohmann::ordered_json to_json(const ConfusionMatrix& matrix, const std::vector<ClassSpec>& classes);
std::string to_csv(const ConfusionMatrix& matrix, const std::vector<ClassSpec>& classes);

}  // namespace detpo
