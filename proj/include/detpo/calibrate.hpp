#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detpo/backend.hpp"
#include "detpo/dataset.hpp"
#include "detpo/eval.hpp"
#include "detpo/prompts.hpp"
#include "detpo/trace.hpp"

namespace detpo {

// A parsed detection whose confidence may be missing.
struct RawDetection {
  ImageId image_id = 0;
  ClassId class_id = 0;
  BoundingBox box;
  std::optional<double> score;
};

// Missing scores become 1.0; present ones are clamped to [0, 1].
double default_score(std::optional<double> score);
std::vector<Detection> apply_score_defaults(std::span<const RawDetection> detections);

// p_yes / (p_yes + p_no); nullopt when both are (numerically) zero.
std::optional<double> vqa_score(const YesNoProbability& p);

struct RescoreAudit {
  std::size_t detection = 0;  // index into the input
  double p_yes = 0.0;
  double p_no = 0.0;
  double original_score = 0.0;
  double score = 0.0;
  bool flagged = false;
  std::string reason;
  std::optional<RequestRecord> request;
};

struct RescoreResult {
  std::vector<Detection> detections;  // same order and geometry as the input
  std::vector<RescoreAudit> audit;
  std::size_t flagged = 0;
};

/// Replaces each score with the VQA yes-probability from `scorer`. One
/// request per detection: the box drawn in red and the vqa-score template
/// filled with the class name and its definition (`definitions`, falling
/// back to the class seed text). Failed queries keep the original score and
/// are flagged. Throws CapabilityError up front when the scorer lacks
/// log-probabilities.
RescoreResult vqa_rescore(std::span<const Detection> detections, const DatasetSplit& split,
                          std::span<const ClassSpec> classes,
                          const std::map<ClassId, std::string>& definitions, Backend& scorer,
                          const TemplateRegistry& templates, int jobs = 1);

nlohmann::ordered_json to_json(const RescoreAudit& audit);

}  // namespace detpo
