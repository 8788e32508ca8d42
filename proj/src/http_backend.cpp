#include "detpo/http_backend.hpp"

#include <chrono>
#include <regex>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <openssl/evp.h>

namespace detpo {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // .../chat/completions
};

Endpoint split_endpoint(const std::string& url) {
  static const std::regex pattern(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, pattern)) {
    throw ConfigError("malformed endpoint URL '" + url + "'");
  }
  Endpoint out{m[1].str(), m[2].matched ? m[2].str() : std::string()};
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  const std::string suffix = "/chat/completions";
  if (out.path.size() < suffix.size() ||
      out.path.compare(out.path.size() - suffix.size(), suffix.size(), suffix) != 0) {
    out.path += suffix;
  }
  return out;
}

std::chrono::milliseconds parse_retry_after(const httplib::Result& res) {
  if (!res || !res->has_header("Retry-After")) return std::chrono::milliseconds{0};
  try {
    return std::chrono::milliseconds(
        static_cast<std::int64_t>(std::stod(res->get_header_value("Retry-After")) * 1000.0));
  } catch (const std::exception&) {
    return std::chrono::milliseconds{0};
  }
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  const int written = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(),
                                      static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(written));
  return out;
}

HttpTransport::HttpTransport(std::string api_key) : api_key_(std::move(api_key)) {}

nlohmann::json HttpTransport::build_body(const ChatRequest& request,
                                         const BackendDescriptor& backend) {
  nlohmann::json content = nlohmann::json::array();
  for (const auto& part : request.parts) {
    if (const auto* text = std::get_if<TextPart>(&part)) {
      content.push_back({{"type", "text"}, {"text", text->text}});
      continue;
    }
    const auto& image = std::get<ImagePart>(part);
    const auto raw = image.image.load_bytes();
    const auto encoded = draw_boxes(raw, image.boxes, backend.image_encoding);
    const std::string url = std::string("data:") + mime_type(backend.image_encoding.format) +
                            ";base64," + base64_encode(encoded);
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
  }
  nlohmann::json messages = nlohmann::json::array();
  if (!request.system.empty()) {
    messages.push_back({{"role", "system"}, {"content", request.system}});
  }
  messages.push_back({{"role", "user"}, {"content", content}});

  nlohmann::json body = {{"model", backend.model},
                         {"messages", messages},
                         {"temperature", request.decoding.temperature},
                         {"max_tokens", request.decoding.max_output_tokens}};
  if (request.request_logprobs) {
    body["logprobs"] = true;
    body["top_logprobs"] = backend.top_logprobs;
  }
  return body;
}

ChatResponse HttpTransport::parse_body(const std::string& body) {
  ChatResponse out;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw TransportError(std::string("response is not JSON: ") + e.what(), true);
  }
  try {
    const auto& choice = doc.at("choices").at(0);
    const auto& message = choice.at("message");
    if (message.contains("content") && message.at("content").is_string()) {
      out.text = message.at("content").get<std::string>();
    }
    if (choice.contains("logprobs") && choice.at("logprobs").is_object()) {
      const auto& lp = choice.at("logprobs");
      if (lp.contains("content") && lp.at("content").is_array() && !lp.at("content").empty()) {
        const auto& first = lp.at("content").at(0);
        std::vector<TokenLogprob> table;
        for (const auto& alt : first.value("top_logprobs", nlohmann::json::array())) {
          table.push_back({alt.at("token").get<std::string>(), alt.at("logprob").get<double>()});
        }
        if (table.empty() && first.contains("token")) {
          table.push_back({first.at("token").get<std::string>(), first.at("logprob").get<double>()});
        }
        out.first_token_logprobs = std::move(table);
      }
    }
    if (doc.contains("usage") && doc.at("usage").is_object()) {
      out.usage.prompt_tokens = doc.at("usage").value("prompt_tokens", std::int64_t{0});
      out.usage.completion_tokens = doc.at("usage").value("completion_tokens", std::int64_t{0});
    }
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("unexpected response shape: ") + e.what(), true);
  }
  return out;
}

ChatResponse HttpTransport::send(const ChatRequest& request, const BackendDescriptor& backend) {
  const Endpoint endpoint = split_endpoint(backend.endpoint);
  const std::string payload = build_body(request, backend).dump();

  httplib::Client client(endpoint.origin);
  client.set_connection_timeout(std::chrono::seconds(30));
  client.set_read_timeout(backend.timeout);
  client.set_write_timeout(backend.timeout);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const auto start = std::chrono::steady_clock::now();
  auto res = client.Post(endpoint.path, headers, payload, "application/json");
  const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - start);

  if (!res) {
    throw TransportError("transport failure: " + httplib::to_string(res.error()), true);
  }
  const int status = res->status;
  if (status == 401 || status == 403) {
    throw AuthenticationError("authentication failed (HTTP " + std::to_string(status) + ")");
  }
  if (status == 413) {
    throw PayloadTooLargeError("payload too large (" + std::to_string(payload.size()) + " bytes)");
  }
  if (status == 408 || status == 429 || status >= 500) {
    throw TransportError("HTTP " + std::to_string(status), true, status, parse_retry_after(res));
  }
  if (status < 200 || status >= 300) {
    throw TransportError("HTTP " + std::to_string(status) + ": " + res->body, false, status);
  }
  ChatResponse out = parse_body(res->body);
  out.latency = latency;
  return out;
}

}  // namespace detpo
