#include "detpo/mock_backend.hpp"

#include <algorithm>
#include <fstream>

namespace detpo {

namespace {

MockFailure failure_from_string(const std::string& name) {
  if (name == "transient") return MockFailure::kTransient;
  if (name == "auth") return MockFailure::kAuth;
  if (name == "payload_too_large") return MockFailure::kPayloadTooLarge;
  if (name.empty() || name == "none") return MockFailure::kNone;
  throw ConfigError("unknown mock failure kind '" + name + "'");
}

MockReply reply_from_json(const nlohmann::json& value) {
  MockReply reply;
  if (value.is_string()) {
    reply.text = value.get<std::string>();
    return reply;
  }
  if (!value.is_object()) throw ConfigError("mock reply must be a string or object");
  reply.text = value.value("text", "");
  reply.failure = failure_from_string(value.value("fail", ""));
  if (value.contains("logprobs")) {
    std::vector<TokenLogprob> table;
    const auto& lp = value.at("logprobs");
    if (lp.is_object()) {
      for (const auto& [token, logprob] : lp.items()) {
        table.push_back({token, logprob.get<double>()});
      }
    } else if (lp.is_array()) {
      for (const auto& entry : lp) {
        table.push_back({entry.at(0).get<std::string>(), entry.at(1).get<double>()});
      }
    } else {
      throw ConfigError("mock logprobs must be an object or [token, logprob] list");
    }
    reply.logprobs = std::move(table);
  }
  return reply;
}

[[noreturn]] void raise(MockFailure failure, const std::string& context) {
  switch (failure) {
    case MockFailure::kAuth:
      throw AuthenticationError("mock: authentication failed (" + context + ")");
    case MockFailure::kPayloadTooLarge:
      throw PayloadTooLargeError("mock: payload too large (" + context + ")");
    default:
      throw TransportError("mock: transient failure (" + context + ")", true, 503);
  }
}

}  // namespace

MockScript MockScript::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("mock script must be a JSON object");
  MockScript script;
  try {
    for (const auto& [hash, reply] : doc.value("responses", nlohmann::json::object()).items()) {
      script.by_hash.emplace(hash, reply_from_json(reply));
    }
    for (const auto& r : doc.value("rules", nlohmann::json::array())) {
      MockRule rule;
      const auto contains = r.value("contains", nlohmann::json::array());
      if (contains.is_string()) {
        rule.contains.push_back(contains.get<std::string>());
      } else {
        rule.contains = contains.get<std::vector<std::string>>();
      }
      rule.image_ids = r.value("image_ids", std::vector<ImageId>{});
      if (r.contains("sequence")) {
        for (const auto& reply : r.at("sequence")) rule.replies.push_back(reply_from_json(reply));
      } else {
        rule.replies.push_back(reply_from_json(r));
      }
      rule.fail_times = r.value("fail_times", 0);
      rule.fail_kind = failure_from_string(r.value("fail_kind", "transient"));
      script.rules.push_back(std::move(rule));
    }
    for (const auto& reply : doc.value("sequence", nlohmann::json::array())) {
      script.sequence.push_back(reply_from_json(reply));
    }
    if (doc.contains("default")) script.fallback = reply_from_json(doc.at("default"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed mock script: ") + e.what());
  }
  return script;
}

MockScript MockScript::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read mock script " + file.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("mock script " + file.string() + " is not valid JSON: " + e.what());
  }
}

MockTransport::MockTransport(MockScript script)
    : script_(std::move(script)), rule_hits_(script_.rules.size(), 0) {}

Usage MockTransport::synthetic_usage(const ChatRequest& request, const std::string& reply) {
  std::size_t chars = request.system.size();
  for (const auto& part : request.parts) {
    if (const auto* text = std::get_if<TextPart>(&part)) chars += text->text.size();
  }
  Usage usage;
  usage.prompt_tokens = static_cast<std::int64_t>((chars + 3) / 4 + 256 * request.image_count());
  usage.completion_tokens = static_cast<std::int64_t>((reply.size() + 3) / 4);
  return usage;
}

ChatResponse MockTransport::send(const ChatRequest& request, const BackendDescriptor&) {
  const std::string hash = request.content_hash();
  const std::string text = request.joined_text();
  const auto images = request.image_ids();

  std::optional<MockReply> reply;
  {
    std::lock_guard lock(mutex_);
    MockCall call{hash, text, images, 0, request.request_logprobs};
    for (const auto& part : request.parts) {
      if (const auto* img = std::get_if<ImagePart>(&part)) call.drawn_boxes += img->boxes.size();
    }
    calls_.push_back(std::move(call));

    if (script_.handler) reply = script_.handler(request);
    if (!reply) {
      if (auto it = script_.by_hash.find(hash); it != script_.by_hash.end()) reply = it->second;
    }
    for (std::size_t i = 0; !reply && i < script_.rules.size(); ++i) {
      const MockRule& rule = script_.rules[i];
      const bool text_ok = std::all_of(rule.contains.begin(), rule.contains.end(),
                                       [&](const std::string& s) {
                                         return text.find(s) != std::string::npos ||
                                                request.system.find(s) != std::string::npos;
                                       });
      const bool image_ok =
          rule.image_ids.empty() ||
          std::any_of(images.begin(), images.end(), [&](ImageId id) {
            return std::find(rule.image_ids.begin(), rule.image_ids.end(), id) !=
                   rule.image_ids.end();
          });
      if (!text_ok || !image_ok) continue;
      const int hit = rule_hits_[i]++;
      if (hit < rule.fail_times) raise(rule.fail_kind, "rule " + std::to_string(i));
      const auto served = static_cast<std::size_t>(hit - rule.fail_times);
      reply = rule.replies.empty() ? MockReply{}
                                   : rule.replies[std::min(served, rule.replies.size() - 1)];
    }
    if (!reply && sequence_pos_ < script_.sequence.size()) {
      reply = script_.sequence[sequence_pos_++];
    }
    if (!reply) reply = script_.fallback;
  }
  if (!reply) {
    throw TransportError("mock: no scripted response for request " + hash, false);
  }
  if (reply->failure != MockFailure::kNone) raise(reply->failure, "scripted reply");

  ChatResponse response;
  response.text = reply->text;
  response.first_token_logprobs = reply->logprobs;
  response.usage = synthetic_usage(request, reply->text);
  return response;
}

std::vector<MockCall> MockTransport::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

std::size_t MockTransport::call_count() const {
  std::lock_guard lock(mutex_);
  return calls_.size();
}

}  // namespace detpo
