#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <string_view>

#include "vlmprobe/protocol.hpp"

namespace vlmprobe {

struct TransportReply {
  int status = 0;
  std::string body;
};

/// One POST to a backend. Implementations throw TransportError for failures
/// that never produced an HTTP status (refused, reset, timed out) and must be
/// safe to call from several threads at once.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual TransportReply post(std::string_view path, const std::string& body) = 0;
  virtual std::string describe() const = 0;
};

class HttpTransport final : public Transport {
 public:
  /// base_url like "http://127.0.0.1:8080".
  explicit HttpTransport(std::string base_url, std::chrono::seconds read_timeout = std::chrono::seconds(600));

  TransportReply post(std::string_view path, const std::string& body) override;
  std::string describe() const override { return base_url_; }

 private:
  std::string base_url_;
  std::chrono::seconds read_timeout_;
};

struct SubmitOptions {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  double backoff_multiplier = 2.0;
  /// Where relative sidecar paths from the backend are resolved.
  std::filesystem::path dump_root = ".";
};

struct SubmitResult {
  ExamineResponse response;
  int retry_count = 0;
};

/// Sends one request with bounded exponential backoff on TransportError (and
/// on 502/503/504). Schema and dimension failures are not retried. Backend
/// error bodies surface as UnknownImage or BackendError.
SubmitResult submit(const ExamineRequest& request, Transport& transport, const SubmitOptions& options);

}  // namespace vlmprobe
