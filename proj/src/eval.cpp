#include "detpo/eval.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <utility>

namespace detpo {

namespace {

using GroupKey = std::pair<ImageId, ClassId>;

// Indices sorted by descending score; equal scores keep input order.
std::vector<std::size_t> score_order(std::span<const Detection> dets,
                                     const std::vector<std::size_t>& indices) {
  std::vector<std::size_t> order = indices;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  return order;
}

constexpr double kBackgroundIou = 0.1;
constexpr double kForegroundIou = 0.5;

}  // namespace

MatchResult greedy_match(std::span<const Detection> detections,
                         std::span<const GroundTruthBox> ground_truth, double iou_threshold) {
  MatchResult result;
  result.iou_threshold = iou_threshold;

  std::map<GroupKey, std::vector<std::size_t>> det_groups;
  std::map<GroupKey, std::vector<std::size_t>> gt_groups;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    det_groups[{detections[i].image_id, detections[i].class_id}].push_back(i);
  }
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    gt_groups[{ground_truth[i].image_id, ground_truth[i].class_id}].push_back(i);
  }

  std::vector<bool> det_matched(detections.size(), false);
  std::vector<bool> gt_matched(ground_truth.size(), false);
  for (const auto& [key, det_indices] : det_groups) {
    auto gts = gt_groups.find(key);
    if (gts == gt_groups.end()) {
      continue;
    }
    for (std::size_t d : score_order(detections, det_indices)) {
      double best_iou = -1.0;
      std::size_t best_gt = 0;
      for (std::size_t g : gts->second) {
        if (gt_matched[g] || !(ground_truth[g].box.area() > 0.0)) {
          continue;
        }
        const double overlap = iou(detections[d].box, ground_truth[g].box);
        if (overlap >= iou_threshold && overlap > best_iou) {
          best_iou = overlap;
          best_gt = g;
        }
      }
      if (best_iou >= 0.0) {
        gt_matched[best_gt] = true;
        det_matched[d] = true;
        result.pairs.push_back({d, best_gt, best_iou});
      }
    }
  }
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (!det_matched[i]) result.unmatched_detections.push_back(i);
  }
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    if (!gt_matched[i]) result.unmatched_ground_truths.push_back(i);
  }
  return result;
}

std::array<double, kNumIouThresholds> coco_iou_thresholds() {
  std::array<double, kNumIouThresholds> out{};
  for (std::size_t i = 0; i < kNumIouThresholds; ++i) {
    out[i] = static_cast<double>(50 + 5 * i) / 100.0;
  }
  return out;
}

std::optional<double> average_precision(std::span<const Detection> detections,
                                        std::span<const GroundTruthBox> ground_truth,
                                        ClassId class_id, double iou_threshold,
                                        std::size_t max_per_image) {
  std::vector<GroundTruthBox> gts;
  for (const auto& gt : ground_truth) {
    if (gt.class_id == class_id) gts.push_back(gt);
  }
  if (gts.empty()) {
    return std::nullopt;
  }

  // Keep the top `max_per_image` detections of each image, laid out image by
  // image in ascending id order so that cross-image ties are deterministic.
  std::map<ImageId, std::vector<std::size_t>> per_image;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (detections[i].class_id == class_id) per_image[detections[i].image_id].push_back(i);
  }
  std::vector<Detection> kept;
  for (const auto& [image, indices] : per_image) {
    auto order = score_order(detections, indices);
    if (order.size() > max_per_image) order.resize(max_per_image);
    for (std::size_t i : order) kept.push_back(detections[i]);
  }
  if (kept.empty()) {
    return 0.0;
  }

  const MatchResult matches = greedy_match(kept, gts, iou_threshold);
  std::vector<bool> is_tp(kept.size(), false);
  for (const auto& pair : matches.pairs) is_tp[pair.detection] = true;

  std::vector<std::size_t> all(kept.size());
  std::iota(all.begin(), all.end(), 0);
  const auto ranked = score_order(kept, all);

  const double num_gt = static_cast<double>(gts.size());
  std::vector<double> recall(ranked.size());
  std::vector<double> precision(ranked.size());
  double tp = 0.0;
  double fp = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (is_tp[ranked[i]]) {
      tp += 1.0;
    } else {
      fp += 1.0;
    }
    recall[i] = tp / num_gt;
    precision[i] = tp / (tp + fp);
  }
  for (std::size_t i = precision.size() - 1; i > 0; --i) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }

  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double threshold = static_cast<double>(r) / 100.0;
    auto it = std::lower_bound(recall.begin(), recall.end(), threshold);
    if (it != recall.end()) {
      sum += precision[static_cast<std::size_t>(it - recall.begin())];
    }
  }
  return sum / 101.0;
}

PrecisionRecall per_image_f1(std::span<const Detection> detections,
                             std::span<const GroundTruthBox> ground_truth,
                             double iou_threshold) {
  if (detections.empty() && ground_truth.empty()) {
    return {1.0, 1.0, 1.0};
  }
  const MatchResult m = greedy_match(detections, ground_truth, iou_threshold);
  const double tp = static_cast<double>(m.pairs.size());
  PrecisionRecall out;
  if (!detections.empty()) out.precision = tp / static_cast<double>(detections.size());
  if (!ground_truth.empty()) out.recall = tp / static_cast<double>(ground_truth.size());
  if (out.precision + out.recall > 0.0) {
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  }
  return out;
}

EvalResult coco_map(std::span<const Detection> detections, const DatasetSplit& split) {
  EvalResult result;
  for (const auto& det : detections) {
    if (split.contains_image(det.image_id) && det.class_id >= 0 &&
        det.class_id < split.num_classes()) {
      result.detections.push_back(det);
    }
  }
  const auto& gts = split.ground_truth();
  const auto thresholds = coco_iou_thresholds();

  double map_sum = 0.0;
  double map50_sum = 0.0;
  std::size_t classes_with_gt = 0;
  for (ClassId c = 0; c < split.num_classes(); ++c) {
    ClassMetrics metrics;
    metrics.class_id = c;
    metrics.ground_truth_count = split.instance_count(c);
    metrics.detection_count = static_cast<std::size_t>(
        std::count_if(result.detections.begin(), result.detections.end(),
                      [c](const Detection& d) { return d.class_id == c; }));
    if (metrics.has_ground_truth()) {
      double sum = 0.0;
      for (std::size_t t = 0; t < thresholds.size(); ++t) {
        metrics.ap_at_iou[t] = *average_precision(result.detections, gts, c, thresholds[t]);
        sum += metrics.ap_at_iou[t];
      }
      metrics.ap = sum / static_cast<double>(thresholds.size());
      metrics.ap50 = metrics.ap_at_iou[0];
      map_sum += metrics.ap;
      map50_sum += metrics.ap50;
      ++classes_with_gt;
    }
    result.per_class.push_back(metrics);
  }
  if (classes_with_gt > 0) {
    result.map = map_sum / static_cast<double>(classes_with_gt);
    result.map50 = map50_sum / static_cast<double>(classes_with_gt);
  }

  result.matches = greedy_match(result.detections, gts, 0.5);

  std::map<ImageId, ImageF1> per_image;
  for (const auto& img : split.images()) {
    per_image[img.id].image_id = img.id;
  }
  for (const auto& pair : result.matches.pairs) {
    ++per_image[result.detections[pair.detection].image_id].true_positives;
  }
  for (std::size_t d : result.matches.unmatched_detections) {
    ++per_image[result.detections[d].image_id].false_positives;
  }
  for (std::size_t g : result.matches.unmatched_ground_truths) {
    ++per_image[gts[g].image_id].false_negatives;
  }
  for (auto& [id, f] : per_image) {
    const double tp = static_cast<double>(f.true_positives);
    const double ndet = tp + static_cast<double>(f.false_positives);
    const double ngt = tp + static_cast<double>(f.false_negatives);
    if (ndet == 0.0 && ngt == 0.0) {
      f.precision = f.recall = f.f1 = 1.0;
    } else {
      f.precision = ndet > 0.0 ? tp / ndet : 0.0;
      f.recall = ngt > 0.0 ? tp / ngt : 0.0;
      f.f1 = f.precision + f.recall > 0.0
                 ? 2.0 * f.precision * f.recall / (f.precision + f.recall)
                 : 0.0;
    }
    result.per_image.push_back(f);
  }
  return result;
}

std::size_t ConfusionMatrix::row_sum(int row) const {
  const auto& r = counts.at(static_cast<std::size_t>(row));
  return std::accumulate(r.begin(), r.end(), std::size_t{0});
}

ConfusionMatrix confusion_matrix(std::span<const Detection> detections,
                                 const DatasetSplit& split, double iou_threshold,
                                 double score_threshold) {
  const int num_classes = split.num_classes();
  ConfusionMatrix cm;
  cm.num_classes = num_classes;
  cm.counts.assign(static_cast<std::size_t>(num_classes + 1),
                   std::vector<std::size_t>(static_cast<std::size_t>(num_classes + 1), 0));

  // Class-agnostic matching: collapse every label onto one class and let the
  // greedy matcher pair boxes by IoU alone.
  std::vector<Detection> agnostic;
  std::vector<ClassId> det_class;
  for (const auto& det : detections) {
    if (det.score < score_threshold || !split.contains_image(det.image_id) ||
        det.class_id < 0 || det.class_id >= num_classes) {
      continue;
    }
    Detection copy = det;
    copy.class_id = 0;
    agnostic.push_back(copy);
    det_class.push_back(det.class_id);
  }
  std::vector<GroundTruthBox> gts = split.ground_truth();
  for (auto& gt : gts) gt.class_id = 0;

  const MatchResult m = greedy_match(agnostic, gts, iou_threshold);
  const auto& original = split.ground_truth();
  const auto bg = static_cast<std::size_t>(num_classes);
  for (const auto& pair : m.pairs) {
    ++cm.counts[static_cast<std::size_t>(original[pair.ground_truth].class_id)]
               [static_cast<std::size_t>(det_class[pair.detection])];
  }
  for (std::size_t d : m.unmatched_detections) {
    ++cm.counts[bg][static_cast<std::size_t>(det_class[d])];
  }
  for (std::size_t g : m.unmatched_ground_truths) {
    ++cm.counts[static_cast<std::size_t>(original[g].class_id)][bg];
  }
  return cm;
}

const char* to_string(TideError kind) {
  switch (kind) {
    case TideError::kCls:
      return "Cls";
    case TideError::kLoc:
      return "Loc";
    case TideError::kBoth:
      return "Both";
    case TideError::kDupe:
      return "Dupe";
    case TideError::kBkg:
      return "Bkg";
    case TideError::kMiss:
      return "Miss";
  }
  return "?";
}

TideReport tide_decompose(std::span<const Detection> detections, const DatasetSplit& split) {
  TideReport report;
  report.detection_kinds.assign(detections.size(), std::nullopt);
  const auto& gts = split.ground_truth();
  const MatchResult m = greedy_match(detections, gts, kForegroundIou);

  std::vector<bool> gt_used(gts.size(), false);
  for (const auto& pair : m.pairs) gt_used[pair.ground_truth] = true;
  std::set<std::size_t> explained;

  report.true_positives = m.pairs.size();
  report.false_positives = m.unmatched_detections.size();
  report.false_negatives = m.unmatched_ground_truths.size();

  for (std::size_t d : m.unmatched_detections) {
    const Detection& det = detections[d];
    double same_best = 0.0;
    std::size_t same_idx = 0;
    double other_best = 0.0;
    std::size_t other_idx = 0;
    double used_best = 0.0;
    double any_best = 0.0;
    if (split.contains_image(det.image_id)) {
      for (std::size_t g : split.ground_truth_for_image(det.image_id)) {
        const double overlap = iou(det.box, gts[g].box);
        any_best = std::max(any_best, overlap);
        if (gts[g].class_id == det.class_id) {
          if (overlap > same_best) {
            same_best = overlap;
            same_idx = g;
          }
          if (gt_used[g]) used_best = std::max(used_best, overlap);
        } else if (overlap > other_best) {
          other_best = overlap;
          other_idx = g;
        }
      }
    }

    // Checked in TIDE's order: localization, classification, duplicate,
    // background, then both.
    TideError kind;
    if (same_best >= kBackgroundIou && same_best < kForegroundIou) {
      kind = TideError::kLoc;
      explained.insert(same_idx);
      ++report.loc;
    } else if (other_best >= kForegroundIou) {
      kind = TideError::kCls;
      explained.insert(other_idx);
      ++report.cls;
    } else if (used_best >= kForegroundIou) {
      kind = TideError::kDupe;
      ++report.dupe;
    } else if (any_best < kBackgroundIou) {
      kind = TideError::kBkg;
      ++report.bkg;
    } else {
      kind = TideError::kBoth;
      ++report.both;
    }
    report.detection_kinds[d] = kind;
  }
  for (std::size_t g : m.unmatched_ground_truths) {
    if (!explained.contains(g)) ++report.miss;
  }
  return report;
}

nlohmann::ordered_json to_json(const EvalResult& result, const std::vector<ClassSpec>& classes) {
  nlohmann::ordered_json out;
  out["map"] = result.map;
  out["map50"] = result.map50;
  auto& per_class = out["per_class"] = nlohmann::ordered_json::array();
  for (const auto& m : result.per_class) {
    nlohmann::ordered_json entry;
    entry["class_id"] = m.class_id;
    if (static_cast<std::size_t>(m.class_id) < classes.size()) {
      entry["name"] = classes[static_cast<std::size_t>(m.class_id)].name;
      entry["category_id"] = classes[static_cast<std::size_t>(m.class_id)].coco_id;
    }
    entry["gt_count"] = m.ground_truth_count;
    entry["det_count"] = m.detection_count;
    if (m.has_ground_truth()) {
      entry["ap"] = m.ap;
      entry["ap50"] = m.ap50;
      entry["ap_at_iou"] = m.ap_at_iou;
    } else {
      entry["ap"] = nullptr;
    }
    per_class.push_back(entry);
  }
  auto& per_image = out["per_image"] = nlohmann::ordered_json::array();
  for (const auto& f : result.per_image) {
    per_image.push_back({{"image_id", f.image_id},
                         {"tp", f.true_positives},
                         {"fp", f.false_positives},
                         {"fn", f.false_negatives},
                         {"precision", f.precision},
                         {"recall", f.recall},
                         {"f1", f.f1}});
  }
  return out;
}

nlohmann::ordered_json to_json(const TideReport& report) {
  nlohmann::ordered_json out;
  out["counts"] = {{"Cls", report.cls},   {"Loc", report.loc}, {"Both", report.both},
                   {"Dupe", report.dupe}, {"Bkg", report.bkg}, {"Miss", report.miss}};
  out["true_positives"] = report.true_positives;
  out["false_positives"] = report.false_positives;
  out["false_negatives"] = report.false_negatives;
  return out;
}

nlohmann::ordered_json to_json(const ConfusionMatrix& matrix,
                               const std::vector<ClassSpec>& classes) {
  nlohmann::ordered_json out;
  auto labels = nlohmann::ordered_json::array();
  for (const auto& c : classes) labels.push_back(c.name);
  auto rows = labels;
  rows.push_back("background");
  auto cols = labels;
  cols.push_back("missed");
  out["rows"] = rows;
  out["columns"] = cols;
  out["counts"] = matrix.counts;
  return out;
}

std::string to_csv(const ConfusionMatrix& matrix, const std::vector<ClassSpec>& classes) {
  auto quote = [](const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
      if (ch == '"') out += '"';
      out += ch;
    }
    return out + "\"";
  };
  std::ostringstream csv;
  csv << "gt\\pred";
  for (const auto& c : classes) csv << "," << quote(c.name);
  csv << ",missed\n";
  for (int r = 0; r <= matrix.num_classes; ++r) {
    csv << (r < matrix.num_classes ? quote(classes.at(static_cast<std::size_t>(r)).name)
                                   : std::string("background"));
    for (int c = 0; c <= matrix.num_classes; ++c) csv << "," << matrix.at(r, c);
    csv << "\n";
  }
  return csv.str();
}

}  // namespace detpo
