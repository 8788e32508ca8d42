#include "detpo/error_mining.hpp"

#include <algorithm>
#include <tuple>
#include <vector>

namespace detpo {

namespace {

constexpr double kFpFloor = 0.2;

// Deterministic tie-break: higher severity wins, then lower image id, then
// lexicographically smaller box.
bool better(double severity, ImageId image, const BoundingBox& box, double best_severity,
            ImageId best_image, const BoundingBox& best_box) {
  if (severity != best_severity) return severity > best_severity;
  return std::tie(image, box) < std::tie(best_image, best_box);
}

}  // namespace

double fp_severity(double score, const BoundingBox& box,
                   std::span<const BoundingBox> other_class_ground_truth) {
  double nearest = 0.0;
  for (const auto& gt : other_class_ground_truth) {
    nearest = std::max(nearest, iou(box, gt));
  }
  return score * std::max(kFpFloor, nearest);
}

FnSeverity fn_severity(const BoundingBox& ground_truth, std::span<const Detection> detections) {
  FnSeverity out;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const double strength = detections[i].score * iou(detections[i].box, ground_truth);
    if (strength > out.sigma) {
      out.sigma = strength;
      out.best_detection = i;
    }
  }
  out.epsilon = 1.0 - out.sigma;
  return out;
}

ErrorSelection select_worst_errors(const EvalResult& eval, const DatasetSplit& split,
                                   ClassId class_id, const std::set<ImageId>& excluded) {
  ErrorSelection out;
  const auto& dets = eval.detections;
  const auto& gts = split.ground_truth();

  for (std::size_t d : eval.matches.unmatched_detections) {
    const Detection& det = dets[d];
    if (det.class_id != class_id || excluded.contains(det.image_id)) continue;
    std::vector<BoundingBox> others;
    std::optional<BoundingBox> nearest;
    double nearest_iou = 0.0;
    for (std::size_t g : split.ground_truth_for_image(det.image_id)) {
      if (gts[g].class_id == class_id) continue;
      others.push_back(gts[g].box);
      const double overlap = iou(det.box, gts[g].box);
      if (!nearest || overlap > nearest_iou) {
        nearest = gts[g].box;
        nearest_iou = overlap;
      }
    }
    ErrorRecord rec;
    rec.kind = ErrorKind::kFalsePositive;
    rec.image_id = det.image_id;
    rec.box = det.box;
    rec.score = det.score;
    rec.severity = fp_severity(det.score, det.box, others);
    rec.support_box = nearest;
    rec.support_iou = nearest_iou;
    if (!out.false_positive || better(rec.severity, rec.image_id, rec.box,
                                      out.false_positive->severity,
                                      out.false_positive->image_id, out.false_positive->box)) {
      out.false_positive = rec;
    }
  }

  for (std::size_t g : eval.matches.unmatched_ground_truths) {
    const GroundTruthBox& gt = gts[g];
    if (gt.class_id != class_id || excluded.contains(gt.image_id)) continue;
    std::vector<Detection> same;
    for (const auto& det : dets) {
      if (det.image_id == gt.image_id && det.class_id == class_id) same.push_back(det);
    }
    const FnSeverity sev = fn_severity(gt.box, same);
    ErrorRecord rec;
    rec.kind = ErrorKind::kFalseNegative;
    rec.image_id = gt.image_id;
    rec.box = gt.box;
    rec.severity = sev.epsilon;
    rec.sigma = sev.sigma;
    if (sev.best_detection) {
      rec.support_box = same[*sev.best_detection].box;
      rec.support_iou = iou(same[*sev.best_detection].box, gt.box);
    }
    if (!out.false_negative || better(rec.severity, rec.image_id, rec.box,
                                      out.false_negative->severity,
                                      out.false_negative->image_id, out.false_negative->box)) {
      out.false_negative = rec;
    }
  }

  for (const auto& pair : eval.matches.pairs) {
    const Detection& det = dets[pair.detection];
    if (det.class_id != class_id) continue;
    const GroundTruthBox& gt = gts[pair.ground_truth];
    const double strength = det.score * pair.iou;
    if (!out.best_match || better(strength, gt.image_id, gt.box, out.best_match->strength,
                                  out.best_match->image_id, out.best_match->box)) {
      out.best_match = MatchExemplar{gt.image_id, gt.box, strength};
    }
  }
  return out;
}

bool is_perfect(const EvalResult& eval, const DatasetSplit& split, ClassId class_id) {
  for (std::size_t d : eval.matches.unmatched_detections) {
    if (eval.detections[d].class_id == class_id) return false;
  }
  for (std::size_t g : eval.matches.unmatched_ground_truths) {
    if (split.ground_truth()[g].class_id == class_id) return false;
  }
  return true;
}

nlohmann::ordered_json to_json(const ErrorRecord& record) {
  nlohmann::ordered_json out;
  out["kind"] = record.kind == ErrorKind::kFalsePositive ? "false_positive" : "false_negative";
  out["image_id"] = record.image_id;
  out["box"] = record.box.to_array(CornerOrder::kXyxy);
  out["severity"] = record.severity;
  if (record.kind == ErrorKind::kFalsePositive) {
    out["score"] = record.score;
  } else {
    out["sigma"] = record.sigma;
  }
  if (record.support_box) {
    out["support_box"] = record.support_box->to_array(CornerOrder::kXyxy);
    out["support_iou"] = record.support_iou;
  } else {
    out["support_box"] = nullptr;
  }
  return out;
}

nlohmann::ordered_json to_json(const MatchExemplar& exemplar) {
  nlohmann::ordered_json out;
  out["image_id"] = exemplar.image_id;
  out["box"] = exemplar.box.to_array(CornerOrder::kXyxy);
  out["strength"] = exemplar.strength;
  return out;
}

}  // namespace detpo
