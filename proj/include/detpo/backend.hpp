#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "detpo/annotate.hpp"
#include "detpo/dataset.hpp"
#include "detpo/error.hpp"
#include "detpo/geometry.hpp"

namespace detpo {

struct TextPart {
  std::string text;
};

// An image plus the boxes to draw on it before sending. Rendering happens in
// the transport, so scripted backends never touch pixels.
struct ImagePart {
  ImageRecord image;
  std::vector<AnnotatedBox> boxes;
};

using ContentPart = std::variant<TextPart, ImagePart>;

struct DecodingOptions {
  double temperature = 0.0;
  int max_output_tokens = 2048;
};

struct ChatRequest {
  std::string system;
  std::vector<ContentPart> parts;
  DecodingOptions decoding;
  bool request_logprobs = false;

  // Throws ContractViolation on an empty part list or negative temperature.
  void validate() const;

  // Stable 16-hex-digit hash of the system text, the text parts, the image
  // ids and a summary of the drawn boxes.
  std::string content_hash() const;

  std::string joined_text() const;
  std::vector<ImageId> image_ids() const;
  std::size_t image_count() const;
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
};

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  std::int64_t total() const { return prompt_tokens + completion_tokens; }
  Usage& operator+=(const Usage& other) {
    prompt_tokens += other.prompt_tokens;
    completion_tokens += other.completion_tokens;
    return *this;
  }
};

struct ChatResponse {
  std::string text;
  // Top alternatives for the first generated token.
  std::optional<std::vector<TokenLogprob>> first_token_logprobs;
  Usage usage;
  std::chrono::milliseconds latency{0};
};

class BackendError : public Error {
 public:
  using Error::Error;
};

// A single failed attempt. `transient` failures are retried.
class TransportError : public BackendError {
 public:
  TransportError(const std::string& what, bool transient, int status = 0,
                 std::chrono::milliseconds retry_after = std::chrono::milliseconds{0})
      : BackendError(what), transient_(transient), status_(status), retry_after_(retry_after) {}

  bool transient() const { return transient_; }
  int status() const { return status_; }
  std::chrono::milliseconds retry_after() const { return retry_after_; }

 private:
  bool transient_;
  int status_;
  std::chrono::milliseconds retry_after_;
};

class AuthenticationError : public BackendError {
 public:
  using BackendError::BackendError;
};

class PayloadTooLargeError : public BackendError {
 public:
  using BackendError::BackendError;
};

class RetriesExhaustedError : public BackendError {
 public:
  RetriesExhaustedError(const std::string& what, int attempts)
      : BackendError(what), attempts_(attempts) {}
  int attempts() const { return attempts_; }

 private:
  int attempts_;
};

// The backend cannot serve this kind of query (e.g. no token probabilities).
class CapabilityError : public BackendError {
 public:
  using BackendError::BackendError;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::milliseconds max_backoff{8000};
  double multiplier = 2.0;

  // Delay before retry number `retry` (0-based), capped at max_backoff.
  std::chrono::milliseconds backoff(int retry) const;
};

struct RateLimitConfig {
  double requests_per_second = 0.0;  // 0 = unlimited
  int max_in_flight = 4;
};

enum class BackendKind { kHttp, kMock };

struct BackendDescriptor {
  BackendKind kind = BackendKind::kMock;
  std::string endpoint;
  std::string model;
  std::string api_key_env;
  CoordinateSpace coordinates = CoordinateSpace{CoordinateSpace::Kind::kPixel, 0, 0,
                                                CornerOrder::kXyxy};
  bool supports_logprobs = false;
  int top_logprobs = 20;
  RetryPolicy retry;
  RateLimitConfig rate_limit;
  EncodeOptions image_encoding;
  std::chrono::seconds timeout{120};
  std::filesystem::path mock_script;

  // `coordinates` for a pixel-space backend only records the corner order;
  // the image size comes from each request.
  CoordinateSpace space_for(const ImageRecord& image) const;

  static BackendDescriptor from_json(const nlohmann::json& config,
                                     const std::filesystem::path& base_dir = {});
  nlohmann::ordered_json to_json() const;
};

/// One raw attempt against a model. Throws TransportError on failure.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual ChatResponse send(const ChatRequest& request, const BackendDescriptor& backend) = 0;
};

/// Spaces request starts at least 1/rps apart. Thread-safe.
class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_second);
  void acquire();

 private:
  std::mutex mutex_;
  std::chrono::steady_clock::duration interval_{0};
  std::chrono::steady_clock::time_point next_{};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// A model endpoint with retries, rate limiting, an in-flight cap and usage
/// accounting layered over a Transport.
class Backend {
 public:
  Backend(BackendDescriptor descriptor, std::shared_ptr<Transport> transport,
          Sleeper sleeper = {});

  ChatResponse complete(const ChatRequest& request);

  const BackendDescriptor& descriptor() const { return descriptor_; }
  Usage total_usage() const;
  std::size_t request_count() const;

 private:
  BackendDescriptor descriptor_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
  RateLimiter limiter_;
  std::counting_semaphore<1024> in_flight_;
  mutable std::mutex stats_mutex_;
  Usage usage_;
  std::size_t requests_ = 0;
};

struct YesNoProbability {
  double yes = 0.0;
  double no = 0.0;
};

// Sums exp(logprob) over case and leading-whitespace variants of yes/no.
// Throws CapabilityError when neither token is present.
YesNoProbability read_yes_no(const std::vector<TokenLogprob>& table);

/// Asks for first-token log-probabilities and reads the yes/no mass.
/// Throws CapabilityError when the backend does not expose logprobs or the
/// response lacks them.
YesNoProbability yes_no_probability(Backend& backend, ChatRequest request);

// Builds the transport named by the descriptor. Live backends need their API
// key variable to be set (ConfigError otherwise).
std::unique_ptr<Backend> make_backend(const BackendDescriptor& descriptor);

}  // namespace detpo
