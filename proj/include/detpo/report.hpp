#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "detpo/backend.hpp"
#include "detpo/trace.hpp"

namespace detpo {

struct ReportInputs {
  std::vector<std::filesystem::path> traces;
  std::vector<std::filesystem::path> evals;  // eval.json files from `evaluate`
  std::optional<std::filesystem::path> prompt_file;
};

struct IterationPoint {
  int iteration = 0;
  std::string action;
  double map = 0.0;
  double accepted_map = 0.0;
};

struct ClassRow {
  std::string name;
  std::optional<double> train_map;
  std::optional<double> val_map;
  std::string provenance;
  // One entry per eval file, aligned with ReportInputs::evals.
  std::vector<std::optional<double>> test_ap;
};

struct ReportSummary {
  std::vector<std::string> config_hashes;  // one per trace header
  std::string prompt_file_hash;
  std::vector<std::string> eval_names;
  std::vector<ClassRow> classes;
  std::map<std::string, std::vector<IterationPoint>> iterations;  // by class
  std::map<std::string, Usage> tokens_by_phase;
  std::map<std::pair<std::string, std::string>, Usage> tokens_by_step;  // (phase, step)
  std::map<std::string, std::size_t> requests_by_phase;
  std::int64_t wall_clock_ms = 0;   // sum of trace headers
  std::int64_t model_latency_ms = 0;  // sum of request latencies

  Usage total_tokens() const;
};

ReportSummary summarize_report(const ReportInputs& inputs);

// Markdown rendering of the summary.
std::string render_report(const ReportSummary& summary);

}  // namespace detpo
