#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "detpo/backend.hpp"
#include "detpo/calibrate.hpp"
#include "detpo/dataset.hpp"
#include "detpo/detector.hpp"
#include "detpo/eval.hpp"
#include "detpo/optimizer.hpp"
#include "detpo/report.hpp"

namespace detpo::cli {

struct DatasetRef {
  // An annotation file, or a directory laid out as <dir>/<split>/_annotations.coco.json.
  std::filesystem::path path;
  std::string split = "train";
  // Defaults to class_metadata.json next to the split or at the dataset root.
  std::optional<std::filesystem::path> metadata;
};

std::filesystem::path resolve_annotation_file(const DatasetRef& ref);
LoadedDataset load_dataset(const DatasetRef& ref);

TemplateRegistry load_templates(const std::filesystem::path& dir);

struct DetectArgs {
  DatasetRef dataset;
  std::optional<std::filesystem::path> prompt_file;
  DetectMode mode = DetectMode::kDetpo;
  DecodingOptions decoding{0.0, 2048};
  int jobs = 1;
  std::filesystem::path out_dir;
  std::filesystem::path templates;  // empty = default directory
  std::string config_hash;
};

struct DetectOutput {
  DetectionRun run;
  std::filesystem::path detections_file;
  std::filesystem::path trace_file;
  std::filesystem::path usage_file;
};

// Writes detections.jsonl, detect_trace.jsonl and usage.json to out_dir.
DetectOutput run_detect(const DetectArgs& args, Backend& backend);

struct EvaluateArgs {
  DatasetRef dataset;
  std::filesystem::path detections;
  std::filesystem::path out_dir;
  double score_threshold = 0.3;
};

struct EvaluateOutput {
  EvalResult eval;
  TideReport tide;
  ConfusionMatrix confusion;
  std::filesystem::path eval_file;
};

// Writes eval.json, tide.json, confusion.json and confusion.csv to out_dir.
EvaluateOutput run_evaluate(const EvaluateArgs& args);

struct OptimizeArgs {
  DatasetRef dataset;
  std::optional<DatasetRef> val;
  OptimizerConfig config;
  std::filesystem::path out_dir;
  std::filesystem::path templates;
  std::string config_hash;
};

struct OptimizeOutput {
  DatasetOptimization result;
  std::filesystem::path prompt_file;
  std::filesystem::path trace_file;
};

// Writes prompts.json and optimize_trace.jsonl to out_dir.
OptimizeOutput run_optimize(const OptimizeArgs& args, Backend& backend);

struct RerankArgs {
  DatasetRef dataset;
  std::filesystem::path detections;
  std::optional<std::filesystem::path> prompt_file;
  int jobs = 1;
  std::filesystem::path out_dir;
  std::filesystem::path templates;
  std::string config_hash;
};

struct RerankOutput {
  RescoreResult result;
  std::filesystem::path detections_file;
  std::filesystem::path audit_file;
  std::filesystem::path trace_file;
};

// Writes detections_rescored.jsonl, rerank_audit.jsonl and rerank_trace.jsonl.
RerankOutput run_rerank(const RerankArgs& args, Backend& scorer);

// Writes the markdown report to `out` and returns the summary.
ReportSummary run_report(const ReportInputs& inputs, const std::filesystem::path& out);

}  // namespace detpo::cli
