#include "detpo/backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <sstream>
#include <thread>

#include "detpo/hash.hpp"
#include "detpo/http_backend.hpp"
#include "detpo/mock_backend.hpp"

namespace detpo {

namespace {

std::string fixed1(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1) << v;
  return out.str();
}

CoordinateSpace parse_coordinates(const nlohmann::json& value) {
  CoordinateSpace space{CoordinateSpace::Kind::kPixel, 0, 0, CornerOrder::kXyxy};
  std::string kind = "pixel";
  std::string order = "xyxy";
  if (value.is_string()) {
    kind = value.get<std::string>();
    if (kind == "per_mille_yxyx") {
      kind = "per_mille";
      order = "yxyx";
    }
  } else if (value.is_object()) {
    kind = value.value("kind", kind);
    order = value.value("order", order);
  }
  if (kind == "per_mille") {
    space = CoordinateSpace::per_mille();
  } else if (kind != "pixel") {
    throw ConfigError("unknown coordinate kind '" + kind + "'");
  }
  if (order == "yxyx") {
    space.order = CornerOrder::kYxyx;
  } else if (order != "xyxy") {
    throw ConfigError("unknown corner order '" + order + "'");
  }
  return space;
}

}  // namespace

void ChatRequest::validate() const {
  if (parts.empty()) throw ContractViolation("chat request needs at least one content part");
  if (decoding.temperature < 0.0) throw ContractViolation("temperature must be >= 0");
}

std::string ChatRequest::content_hash() const {
  Fnv1a h;
  h.update(system);
  h.separator('\x1f');
  for (const auto& part : parts) {
    if (const auto* text = std::get_if<TextPart>(&part)) {
      h.separator('T');
      h.update(text->text);
    } else {
      const auto& image = std::get<ImagePart>(part);
      h.separator('I');
      h.update(std::to_string(image.image.id));
      for (const auto& b : image.boxes) {
        h.update(std::string(":") + to_string(b.color) + "," + fixed1(b.box.x1) + "," +
                 fixed1(b.box.y1) + "," + fixed1(b.box.x2) + "," + fixed1(b.box.y2));
      }
    }
    h.separator('\x1e');
  }
  return h.hex();
}

std::string ChatRequest::joined_text() const {
  std::string out;
  for (const auto& part : parts) {
    if (const auto* text = std::get_if<TextPart>(&part)) {
      if (!out.empty()) out += "\n";
      out += text->text;
    }
  }
  return out;
}

std::vector<ImageId> ChatRequest::image_ids() const {
  std::vector<ImageId> out;
  for (const auto& part : parts) {
    if (const auto* image = std::get_if<ImagePart>(&part)) out.push_back(image->image.id);
  }
  return out;
}

std::size_t ChatRequest::image_count() const { return image_ids().size(); }

std::chrono::milliseconds RetryPolicy::backoff(int retry) const {
  const double base = static_cast<double>(initial_backoff.count()) *
                      std::pow(multiplier, static_cast<double>(std::max(0, retry)));
  const double capped = std::min(base, static_cast<double>(max_backoff.count()));
  return std::chrono::milliseconds(static_cast<std::int64_t>(capped));
}

CoordinateSpace BackendDescriptor::space_for(const ImageRecord& image) const {
  if (coordinates.is_pixel()) {
    return CoordinateSpace::pixel(image.width, image.height, coordinates.order);
  }
  return CoordinateSpace::per_mille(coordinates.order);
}

BackendDescriptor BackendDescriptor::from_json(const nlohmann::json& config,
                                               const std::filesystem::path& base_dir) {
  if (!config.is_object()) throw ConfigError("backend config must be an object");
  BackendDescriptor d;
  try {
    const std::string kind = config.value("kind", "mock");
    if (kind == "http") {
      d.kind = BackendKind::kHttp;
    } else if (kind == "mock") {
      d.kind = BackendKind::kMock;
    } else {
      throw ConfigError("unknown backend kind '" + kind + "'");
    }
    d.endpoint = config.value("endpoint", "");
    d.model = config.value("model", "");
    d.api_key_env = config.value("api_key_env", "");
    if (config.contains("coordinates")) d.coordinates = parse_coordinates(config.at("coordinates"));
    d.supports_logprobs = config.value("supports_logprobs", false);
    d.top_logprobs = config.value("top_logprobs", 20);
    if (config.contains("retry")) {
      const auto& r = config.at("retry");
      d.retry.max_retries = r.value("max_retries", d.retry.max_retries);
      d.retry.initial_backoff =
          std::chrono::milliseconds(r.value("initial_backoff_ms", d.retry.initial_backoff.count()));
      d.retry.max_backoff =
          std::chrono::milliseconds(r.value("max_backoff_ms", d.retry.max_backoff.count()));
      d.retry.multiplier = r.value("multiplier", d.retry.multiplier);
    }
    if (config.contains("rate_limit")) {
      const auto& r = config.at("rate_limit");
      d.rate_limit.requests_per_second =
          r.value("requests_per_second", d.rate_limit.requests_per_second);
      d.rate_limit.max_in_flight = r.value("max_in_flight", d.rate_limit.max_in_flight);
    }
    if (config.contains("image")) {
      const auto& img = config.at("image");
      const std::string format = img.value("format", "jpeg");
      d.image_encoding.format = format == "png" ? ImageFormat::kPng : ImageFormat::kJpeg;
      d.image_encoding.jpeg_quality = img.value("jpeg_quality", d.image_encoding.jpeg_quality);
      d.image_encoding.max_side = img.value("max_side", d.image_encoding.max_side);
    }
    d.timeout = std::chrono::seconds(config.value("timeout_s", d.timeout.count()));
    if (config.contains("mock_script")) {
      std::filesystem::path script = config.at("mock_script").get<std::string>();
      d.mock_script = script.is_relative() && !base_dir.empty() ? base_dir / script : script;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed backend config: ") + e.what());
  }
  if (d.retry.max_retries < 0) throw ConfigError("retry.max_retries must be >= 0");
  if (d.rate_limit.max_in_flight < 1) throw ConfigError("rate_limit.max_in_flight must be >= 1");
  return d;
}

nlohmann::ordered_json BackendDescriptor::to_json() const {
  nlohmann::ordered_json out;
  out["kind"] = kind == BackendKind::kHttp ? "http" : "mock";
  out["endpoint"] = endpoint;
  out["model"] = model;
  out["api_key_env"] = api_key_env;
  out["coordinates"] = {{"kind", coordinates.is_pixel() ? "pixel" : "per_mille"},
                        {"order", coordinates.order == CornerOrder::kXyxy ? "xyxy" : "yxyx"}};
  out["supports_logprobs"] = supports_logprobs;
  out["retry"] = {{"max_retries", retry.max_retries},
                  {"initial_backoff_ms", retry.initial_backoff.count()},
                  {"max_backoff_ms", retry.max_backoff.count()},
                  {"multiplier", retry.multiplier}};
  out["rate_limit"] = {{"requests_per_second", rate_limit.requests_per_second},
                       {"max_in_flight", rate_limit.max_in_flight}};
  return out;
}

RateLimiter::RateLimiter(double requests_per_second) {
  if (requests_per_second > 0.0) {
    interval_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / requests_per_second));
  }
}

void RateLimiter::acquire() {
  if (interval_.count() == 0) return;
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mutex_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_);
    next_ = slot + interval_;
  }
  std::this_thread::sleep_until(slot);
}

Backend::Backend(BackendDescriptor descriptor, std::shared_ptr<Transport> transport,
                 Sleeper sleeper)
    : descriptor_(std::move(descriptor)),
      transport_(std::move(transport)),
      sleeper_(sleeper ? std::move(sleeper)
                       : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })),
      limiter_(descriptor_.rate_limit.requests_per_second),
      in_flight_(std::clamp(descriptor_.rate_limit.max_in_flight, 1, 1024)) {}

ChatResponse Backend::complete(const ChatRequest& request) {
  request.validate();
  const int attempts = 1 + descriptor_.retry.max_retries;
  std::string last_error;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      sleeper_(descriptor_.retry.backoff(attempt - 1));
    }
    limiter_.acquire();
    in_flight_.acquire();
    try {
      ChatResponse response = transport_->send(request, descriptor_);
      in_flight_.release();
      std::lock_guard lock(stats_mutex_);
      usage_ += response.usage;
      ++requests_;
      return response;
    } catch (const TransportError& e) {
      in_flight_.release();
      if (!e.transient()) throw;
      last_error = e.what();
      if (e.retry_after().count() > 0 && attempt + 1 < attempts) {
        sleeper_(e.retry_after());
      }
    } catch (...) {
      in_flight_.release();
      throw;
    }
  }
  throw RetriesExhaustedError("request failed after " + std::to_string(attempts) +
                                  " attempts: " + last_error,
                              attempts);
}

Usage Backend::total_usage() const {
  std::lock_guard lock(stats_mutex_);
  return usage_;
}

std::size_t Backend::request_count() const {
  std::lock_guard lock(stats_mutex_);
  return requests_;
}

YesNoProbability read_yes_no(const std::vector<TokenLogprob>& table) {
  YesNoProbability out;
  bool seen = false;
  for (const auto& entry : table) {
    std::string token = entry.token;
    // SentencePiece and byte-level BPE spell a leading space as U+2581 or
    // U+0120; strip those along with plain whitespace.
    for (bool changed = true; changed;) {
      changed = false;
      for (const std::string prefix : {" ", "\t", "\n", "\xE2\x96\x81", "\xC4\xA0"}) {
        if (token.rfind(prefix, 0) == 0) {
          token.erase(0, prefix.size());
          changed = true;
        }
      }
    }
    std::transform(token.begin(), token.end(), token.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (token == "yes") {
      out.yes += std::exp(entry.logprob);
      seen = true;
    } else if (token == "no") {
      out.no += std::exp(entry.logprob);
      seen = true;
    }
  }
  if (!seen) throw CapabilityError("neither Yes nor No among the first-token log-probabilities");
  return out;
}

YesNoProbability yes_no_probability(Backend& backend, ChatRequest request) {
  if (!backend.descriptor().supports_logprobs) {
    throw CapabilityError("backend '" + backend.descriptor().model +
                          "' does not expose token log-probabilities");
  }
  request.request_logprobs = true;
  const ChatResponse response = backend.complete(request);
  if (!response.first_token_logprobs || response.first_token_logprobs->empty()) {
    throw CapabilityError("response carries no log-probabilities");
  }
  return read_yes_no(*response.first_token_logprobs);
}

std::unique_ptr<Backend> make_backend(const BackendDescriptor& descriptor) {
  if (descriptor.kind == BackendKind::kMock) {
    if (descriptor.mock_script.empty()) throw ConfigError("mock backend needs a mock_script");
    return std::make_unique<Backend>(
        descriptor, std::make_shared<MockTransport>(MockScript::load(descriptor.mock_script)));
  }
  if (descriptor.endpoint.empty()) throw ConfigError("http backend needs an endpoint");
  std::string key;
  if (!descriptor.api_key_env.empty()) {
    const char* value = std::getenv(descriptor.api_key_env.c_str());
    if (value == nullptr || *value == '\0') {
      throw ConfigError("environment variable " + descriptor.api_key_env +
                        " holding the API key is not set");
    }
    key = value;
  }
  return std::make_unique<Backend>(descriptor, std::make_shared<HttpTransport>(key));
}

}  // namespace detpo
