#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "detpo/backend.hpp"

namespace detpo {

/// OpenAI-compatible chat-completions client. Images are sent as base64
/// data URLs after drawing their boxes.
class HttpTransport : public Transport {
 public:
  explicit HttpTransport(std::string api_key);

  ChatResponse send(const ChatRequest& request, const BackendDescriptor& backend) override;

  // Exposed for tests.
  static nlohmann::json build_body(const ChatRequest& request, const BackendDescriptor& backend);
  static ChatResponse parse_body(const std::string& body);

 private:
  std::string api_key_;
};

std::string base64_encode(const std::vector<std::uint8_t>& data);

}  // namespace detpo
