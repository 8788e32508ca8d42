#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "detpo/backend.hpp"
#include "detpo/detector.hpp"
#include "detpo/optimizer.hpp"

namespace detpo {

// Replaces ${NAME} in every string value with the environment variable.
// Unset variables raise ConfigError; "$${" escapes a literal "${".
nlohmann::json interpolate_env(const nlohmann::json& doc);
std::string interpolate_env(const std::string& text);

/// Experiment manifest:
/// {
///   "dataset": "<dir or annotation file>", "split": "train",
///   "val_split": "valid", "metadata": "<class_metadata.json>",
///   "templates": "<dir>", "mode": "detpo", "score_threshold": 0.3,
///   "backend": {...}, "scorer": {...}, "optimizer": {...}
/// }
/// Relative paths resolve against the config file's directory.
struct RunConfig {
  std::filesystem::path dataset;
  std::string split = "train";
  std::optional<std::string> val_split;
  std::optional<std::filesystem::path> metadata;
  std::filesystem::path templates;
  DetectMode mode = DetectMode::kDetpo;
  double score_threshold = 0.3;
  BackendDescriptor backend;
  std::optional<BackendDescriptor> scorer;
  OptimizerConfig optimizer;

  static RunConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& file);

  nlohmann::ordered_json to_json() const;
  // Fingerprint of to_json(); embedded in traces and reports.
  std::string hash() const;
};

}  // namespace detpo
