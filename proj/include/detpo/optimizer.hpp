#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detpo/backend.hpp"
#include "detpo/dataset.hpp"
#include "detpo/error_mining.hpp"
#include "detpo/eval.hpp"
#include "detpo/prompts.hpp"
#include "detpo/random.hpp"
#include "detpo/trace.hpp"

namespace detpo {

enum class Provenance { kSeed, kStage1, kIteration, kBest, kFinal, kAlternative };

const char* to_string(Provenance provenance);
Provenance provenance_from_string(const std::string& name);

// Lower wins ties in the final selection: best, final, alternative, stage1,
// seed, then plain iterations.
int selection_priority(Provenance provenance);

struct PromptCandidate {
  ClassId class_id = 0;
  std::string text;
  Provenance provenance = Provenance::kSeed;
  int iteration = -1;
  std::optional<double> train_map;
  std::optional<double> val_map;
};

struct OptimizerConfig {
  int t_max = 10;
  std::optional<int> k_shot;
  std::uint64_t seed = 0;
  int jobs = 1;
  DecodingOptions detection_decoding{0.0, 2048};
  DecodingOptions refinement_decoding{0.7, 2048};
  int max_refinement_retries = 1;

  // Throws ConfigError for t_max < 1, k_shot < 1 or jobs < 1.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  // Missing keys keep their defaults.
  static OptimizerConfig from_json(const nlohmann::json& doc);
};

struct IterationRecord {
  int iteration = 0;
  std::string action;  // accept, revert, early_stop
  double map = 0.0;    // training AP of the refined prompt
  double accepted_map = 0.0;
  double best_map = 0.0;
  ErrorSelection selection;
  Usage usage;
};

struct OptimizationState {
  ClassId class_id = 0;
  std::string current;
  std::string previous;
  std::string best;
  double initial_map = 0.0;  // training AP of the stage-1 prompt
  double accepted_map = 0.0;
  double best_map = 0.0;
  int best_iteration = 0;
  int t = 0;
  int t_max = 10;
  std::set<ImageId> excluded;
  std::vector<IterationRecord> history;
  // Training evaluation of `current`.
  std::optional<EvalResult> accepted_eval;
  std::size_t refinement_calls = 0;
  bool stopped_early = false;
};

struct OptimizerInputs {
  std::vector<ClassSpec> classes;
  DatasetSplit train;
  // Stage-3 selection split; the training images when absent.
  std::optional<DatasetSplit> val;

  const DatasetSplit& validation() const { return val ? *val : train; }
};

/// Shared handles for one class run. The trace collects every request and
/// decision of the class.
struct ClassContext {
  const OptimizerInputs& inputs;
  Backend& backend;
  const TemplateRegistry& templates;
  const OptimizerConfig& config;
  Rng& rng;
  TraceLog& trace;
};

// Training (or validation) AP of `definition` for one class via detpo-detect.
EvalResult evaluate_prompt(const ClassSpec& cls, const std::string& definition,
                           const DatasetSplit& split, ClassContext& ctx, const std::string& step);

/// Summarizes every training image containing the class (green boxes), then
/// runs one contrastive refinement per other class in dataset order.
/// Throws DatasetError when the class has no training instance.
PromptCandidate stage1_bootstrap(const ClassSpec& cls, ClassContext& ctx);

// Starting state for stage 2 from the stage-1 prompt.
OptimizationState initial_state(const ClassSpec& cls, const std::string& stage1_prompt,
                                int t_max);

/// Error-driven refinement with the revert rule, best tracking, exclusion
/// of used images and early stop on a perfect evaluation.
OptimizationState stage2_iterate(const ClassSpec& cls, OptimizationState state,
                                 ClassContext& ctx);

/// Adds the generated alternative of the best candidate, deduplicates by
/// text, scores each candidate on the validation split and returns the
/// argmax (ties by selection_priority). `candidates` is updated with the
/// evaluated set.
PromptCandidate stage3_select(const ClassSpec& cls, std::vector<PromptCandidate>& candidates,
                              ClassContext& ctx);

struct ClassOptimizationResult {
  ClassId class_id = 0;
  std::string class_name;
  PromptCandidate final;
  std::vector<PromptCandidate> candidates;
  std::optional<OptimizationState> state;
  TraceLog trace;
  bool fell_back = false;
  // Set when the fallback came from an error rather than missing data.
  bool failed = false;
  std::string message;
};

struct DatasetOptimization {
  std::vector<ClassOptimizationResult> classes;  // dataset class order

  std::vector<nlohmann::ordered_json> trace_entries() const;
  bool any_failed() const;
};

// Runs one class end to end. Failures fall back to the seed definition.
ClassOptimizationResult optimize_class(const ClassSpec& cls, const OptimizerInputs& inputs,
                                       Backend& backend, const TemplateRegistry& templates,
                                       const OptimizerConfig& config);

/// Optimizes every class independently (config.jobs classes at a time).
/// Applies the k-shot subsample to the training split first.
DatasetOptimization optimize_dataset(OptimizerInputs inputs, Backend& backend,
                                     const TemplateRegistry& templates,
                                     const OptimizerConfig& config);

// {"<class>": {"definition", "provenance", "train_map", "val_map"}} in class
// order.
nlohmann::ordered_json prompt_file_json(const DatasetOptimization& result);
void write_prompt_file(const std::filesystem::path& file, const DatasetOptimization& result);

struct PromptEntry {
  std::string definition;
  std::string provenance;
  std::optional<double> train_map;
  std::optional<double> val_map;
};

// Keyed by class name. Throws ConfigError on malformed files.
std::map<std::string, PromptEntry> read_prompt_file(const std::filesystem::path& file);

// Class-id keyed definitions for the classes named in the prompt file.
std::map<ClassId, std::string> definitions_for(const std::map<std::string, PromptEntry>& prompts,
                                               std::span<const ClassSpec> classes);

nlohmann::ordered_json to_json(const PromptCandidate& candidate);

}  // namespace detpo
