#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detpo/backend.hpp"

namespace detpo {

inline constexpr const char* kPhaseOptimization = "optimization";
inline constexpr const char* kPhaseDetection = "detection";
inline constexpr const char* kPhaseRerank = "rerank";

// One model call as it appears in a trace.
struct RequestRecord {
  std::string class_name;
  std::string phase;
  std::string step;
  std::string request_hash;
  std::string response_hash;
  Usage usage;
  std::int64_t latency_ms = 0;
};

RequestRecord make_request_record(std::string class_name, std::string phase, std::string step,
                                  const ChatRequest& request, const ChatResponse& response);

nlohmann::ordered_json to_json(const RequestRecord& record);
RequestRecord request_record_from_json(const nlohmann::json& entry);

/// Append-only list of trace entries. Thread-safe.
class TraceLog {
 public:
  TraceLog() = default;
  TraceLog(const TraceLog& other);
  TraceLog& operator=(const TraceLog& other);

  void add(nlohmann::ordered_json entry);
  void add_request(const RequestRecord& record) { add(to_json(record)); }
  void append(const TraceLog& other);

  std::vector<nlohmann::ordered_json> entries() const;
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::vector<nlohmann::ordered_json> entries_;
};

struct TraceFile {
  nlohmann::ordered_json header;
  std::vector<nlohmann::ordered_json> entries;
};

/// Writes a header line {"type": "header", "created": .., "wall_clock_ms": ..,
/// "config_hash": ..} followed by one entry per line. The header is the only
/// line that varies between identical runs.
void write_trace(const std::filesystem::path& file, const std::string& config_hash,
                 std::int64_t wall_clock_ms, const std::vector<nlohmann::ordered_json>& entries);

TraceFile read_trace(const std::filesystem::path& file);

// ISO-8601 UTC timestamp of the current time.
std::string utc_timestamp();

}  // namespace detpo
