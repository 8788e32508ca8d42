#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "detpo/backend.hpp"
#include "detpo/dataset.hpp"
#include "detpo/detection_parser.hpp"
#include "detpo/eval.hpp"
#include "detpo/prompts.hpp"
#include "detpo/trace.hpp"

namespace detpo {

// kDetpo and kSingleClass issue one request per image and class; the
// multi-class modes issue one request per image.
enum class DetectMode { kDetpo, kSingleClass, kMultiClass, kWithInstructions };

const char* to_string(DetectMode mode);
DetectMode detect_mode_from_string(const std::string& name);

struct DetectOptions {
  DetectMode mode = DetectMode::kDetpo;
  DecodingOptions decoding{0.0, 2048};
  int jobs = 1;
  std::string phase = kPhaseDetection;
  std::string step = "detect";
};

struct DetectStats {
  std::size_t requests = 0;
  std::size_t parse_failures = 0;
  std::size_t unknown_labels = 0;
  std::size_t malformed = 0;
  std::size_t duplicates = 0;
  std::size_t truncated = 0;

  DetectStats& operator+=(const ParsedDetections& parsed);
  DetectStats& operator+=(const DetectStats& other);
};

struct DetectionRun {
  std::vector<Detection> detections;  // image order, then class order
  std::vector<RequestRecord> requests;
  DetectStats stats;
};

/// Runs one class over every image of `split` with `definition` as the
/// class text. Uses the detpo-detect template, or single-class-detect when
/// options.mode is kSingleClass.
DetectionRun detect_class(const DatasetSplit& split, const ClassSpec& cls,
                          const std::string& definition, Backend& backend,
                          const TemplateRegistry& templates, const DetectOptions& options);

/// Runs the whole split in the requested mode. `definitions` overrides the
/// per-class seed text.
DetectionRun detect_split(const DatasetSplit& split, std::span<const ClassSpec> classes,
                          const std::map<ClassId, std::string>& definitions, Backend& backend,
                          const TemplateRegistry& templates, const DetectOptions& options);

nlohmann::ordered_json to_json(const DetectStats& stats);

}  // namespace detpo
