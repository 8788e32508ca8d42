#include "detpo/trace.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include "detpo/error.hpp"
#include "detpo/hash.hpp"

namespace detpo {

RequestRecord make_request_record(std::string class_name, std::string phase, std::string step,
                                  const ChatRequest& request, const ChatResponse& response) {
  RequestRecord record;
  record.class_name = std::move(class_name);
  record.phase = std::move(phase);
  record.step = std::move(step);
  record.request_hash = request.content_hash();
  record.response_hash = fnv1a_hex(response.text);
  record.usage = response.usage;
  record.latency_ms = response.latency.count();
  return record;
}

nlohmann::ordered_json to_json(const RequestRecord& record) {
  nlohmann::ordered_json out;
  out["type"] = "request";
  out["class"] = record.class_name;
  out["phase"] = record.phase;
  out["step"] = record.step;
  out["request_hash"] = record.request_hash;
  out["response_hash"] = record.response_hash;
  out["prompt_tokens"] = record.usage.prompt_tokens;
  out["completion_tokens"] = record.usage.completion_tokens;
  out["latency_ms"] = record.latency_ms;
  return out;
}

RequestRecord request_record_from_json(const nlohmann::json& entry) {
  RequestRecord record;
  record.class_name = entry.value("class", "");
  record.phase = entry.value("phase", "");
  record.step = entry.value("step", "");
  record.request_hash = entry.value("request_hash", "");
  record.response_hash = entry.value("response_hash", "");
  record.usage.prompt_tokens = entry.value("prompt_tokens", std::int64_t{0});
  record.usage.completion_tokens = entry.value("completion_tokens", std::int64_t{0});
  record.latency_ms = entry.value("latency_ms", std::int64_t{0});
  return record;
}

TraceLog::TraceLog(const TraceLog& other) : entries_(other.entries()) {}

TraceLog& TraceLog::operator=(const TraceLog& other) {
  if (this != &other) {
    auto copy = other.entries();
    std::lock_guard lock(mutex_);
    entries_ = std::move(copy);
  }
  return *this;
}

void TraceLog::add(nlohmann::ordered_json entry) {
  std::lock_guard lock(mutex_);
  entries_.push_back(std::move(entry));
}

void TraceLog::append(const TraceLog& other) {
  auto copy = other.entries();
  std::lock_guard lock(mutex_);
  for (auto& e : copy) entries_.push_back(std::move(e));
}

std::vector<nlohmann::ordered_json> TraceLog::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::size_t TraceLog::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_trace(const std::filesystem::path& file, const std::string& config_hash,
                 std::int64_t wall_clock_ms, const std::vector<nlohmann::ordered_json>& entries) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write trace " + file.string());
  nlohmann::ordered_json header;
  header["type"] = "header";
  header["created"] = utc_timestamp();
  header["wall_clock_ms"] = wall_clock_ms;
  header["config_hash"] = config_hash;
  out << header.dump() << '\n';
  for (const auto& entry : entries) out << entry.dump() << '\n';
}

TraceFile read_trace(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot read trace " + file.string());
  TraceFile trace;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    auto entry = nlohmann::ordered_json::parse(line, nullptr, false);
    if (entry.is_discarded()) {
      throw Error(file.string() + ":" + std::to_string(number) + ": invalid JSON");
    }
    if (entry.value("type", "") == "header") {
      trace.header = std::move(entry);
    } else {
      trace.entries.push_back(std::move(entry));
    }
  }
  return trace;
}

}  // namespace detpo
