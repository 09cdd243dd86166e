#include "vlmprobe/client.hpp"

#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "vlmprobe/errors.hpp"

namespace vlmprobe {

HttpTransport::HttpTransport(std::string base_url, std::chrono::seconds read_timeout)
    : base_url_(std::move(base_url)), read_timeout_(read_timeout) {}

TransportReply HttpTransport::post(std::string_view path, const std::string& body) {
  // httplib::Client is not meant for concurrent use; one per call is cheap.
  httplib::Client client(base_url_);
  if (!client.is_valid()) throw TransportError(fmt::format("invalid endpoint '{}'", base_url_));
  client.set_connection_timeout(std::chrono::seconds(5));
  client.set_read_timeout(read_timeout_);
  client.set_write_timeout(std::chrono::seconds(60));
  auto result = client.Post(std::string(path), body, "application/json");
  if (!result) {
    throw TransportError(fmt::format("{}{}: {}", base_url_, path, httplib::to_string(result.error())));
  }
  return {result->status, result->body};
}

namespace {

[[noreturn]] void raise_backend_error(const TransportReply& reply) {
  std::string kind = "BackendError";
  std::string message = reply.body;
  const auto j = nlohmann::json::parse(reply.body, nullptr, false);
  if (j.is_object() && j.contains("error") && j["error"].is_object()) {
    kind = j["error"].value("kind", kind);
    message = j["error"].value("message", message);
  }
  message = fmt::format("HTTP {}: {}", reply.status, message);
  if (kind == "UnknownImage") throw UnknownImage(message);
  if (kind == "SchemaError") throw SchemaError(message);
  throw BackendError(message);
}

bool retryable_status(int status) { return status == 502 || status == 503 || status == 504; }

}  // namespace

SubmitResult submit(const ExamineRequest& request, Transport& transport, const SubmitOptions& options) {
  request.validate();
  const auto body = encode_request(request);
  auto backoff = options.initial_backoff;
  const int attempts = std::max(1, options.max_attempts);
  for (int attempt = 0;; ++attempt) {
    try {
      const auto reply = transport.post(kExaminePath, body);
      if (retryable_status(reply.status)) {
        throw TransportError(fmt::format("{} answered HTTP {}", transport.describe(), reply.status));
      }
      if (reply.status != 200) raise_backend_error(reply);
      return {decode_response(reply.body, options.dump_root), attempt};
    } catch (const TransportError& e) {
      if (attempt + 1 >= attempts) {
        throw TransportError(fmt::format("giving up after {} attempts: {}", attempts, e.what()));
      }
    }
    std::this_thread::sleep_for(backoff);
    backoff = std::chrono::milliseconds(static_cast<long long>(backoff.count() * options.backoff_multiplier));
  }
}

}  // namespace vlmprobe
