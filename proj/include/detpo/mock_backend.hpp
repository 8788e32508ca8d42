#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detpo/backend.hpp"

namespace detpo {

enum class MockFailure { kNone, kTransient, kAuth, kPayloadTooLarge };

struct MockReply {
  std::string text;
  std::optional<std::vector<TokenLogprob>> logprobs;
  MockFailure failure = MockFailure::kNone;
};

/// Replies to requests whose joined text contains every `contains` string
/// and (when given) that show one of `image_ids`. `replies` are served in
/// order, the last one repeating. The first `fail_times` matches fail.
struct MockRule {
  std::vector<std::string> contains;
  std::vector<ImageId> image_ids;
  std::vector<MockReply> replies;
  int fail_times = 0;
  MockFailure fail_kind = MockFailure::kTransient;
};

/// Scripted responses. Lookup order: handler, exact content hash, rules in
/// order, the ordered `sequence`, then `fallback`. An unscripted request is
/// a non-transient TransportError.
struct MockScript {
  std::function<std::optional<MockReply>(const ChatRequest&)> handler;
  std::map<std::string, MockReply> by_hash;
  std::vector<MockRule> rules;
  std::vector<MockReply> sequence;
  std::optional<MockReply> fallback;

  static MockScript from_json(const nlohmann::json& doc);
  static MockScript load(const std::filesystem::path& file);
};

struct MockCall {
  std::string hash;
  std::string text;
  std::vector<ImageId> image_ids;
  std::size_t drawn_boxes = 0;
  bool logprobs = false;
};

/// Deterministic stand-in for a model. Token usage is synthetic: one token
/// per four characters plus 256 per image.
class MockTransport : public Transport {
 public:
  explicit MockTransport(MockScript script);

  ChatResponse send(const ChatRequest& request, const BackendDescriptor& backend) override;

  std::vector<MockCall> calls() const;
  std::size_t call_count() const;

  static Usage synthetic_usage(const ChatRequest& request, const std::string& reply);

 private:
  MockScript script_;
  mutable std::mutex mutex_;
  std::vector<int> rule_hits_;
  std::size_t sequence_pos_ = 0;
  std::vector<MockCall> calls_;
};

}  // namespace detpo
