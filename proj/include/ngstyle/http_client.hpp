#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>

#include "ngstyle/core.hpp"
#include "ngstyle/protocol.hpp"

namespace ngstyle {

struct EndpointConfig {
  std::string url;                 // e.g. "http://127.0.0.1:8080"
  int timeout_ms = 30000;
  int retries = 2;                 // extra attempts after the first
  int retry_backoff_ms = 100;

  // NGSTYLE_LM_URL, NGSTYLE_TIMEOUT_MS and NGSTYLE_RETRIES override the defaults.
  static EndpointConfig from_env(std::string url = {}) {
    EndpointConfig c;
    c.url = std::move(url);
    if (c.url.empty()) {
      if (const char* v = std::getenv("NGSTYLE_LM_URL")) c.url = v;
    }
    if (const char* v = std::getenv("NGSTYLE_TIMEOUT_MS")) c.timeout_ms = std::atoi(v);
    if (const char* v = std::getenv("NGSTYLE_RETRIES")) c.retries = std::atoi(v);
    return c;
  }
};

// Thin blocking client for the wire protocol. A fresh httplib::Client is
// created per call so one Endpoint can be shared by concurrent workers.
class Endpoint {
 public:
  explicit Endpoint(EndpointConfig config) : config_(std::move(config)) {
    if (config_.url.empty()) throw UsageError("LM endpoint URL is empty");
    if (config_.retries < 0) config_.retries = 0;
  }

  const EndpointConfig& config() const { return config_; }

  protocol::ServerInfo info() const { return protocol::parse_info(call(protocol::kInfoPath, nullptr)); }

  Logits logits(TokenView tokens, std::size_t vocab_size) const {
    auto body = protocol::logits_request(tokens);
    return protocol::parse_logits(call(protocol::kLogitsPath, &body), vocab_size);
  }

  TokenSeq encode(std::string_view text) const {
    auto body = protocol::encode_request(text);
    return protocol::parse_encode(call(protocol::kEncodePath, &body));
  }

  std::string decode(TokenView tokens) const {
    auto body = protocol::decode_request(tokens);
    return protocol::parse_decode(call(protocol::kDecodePath, &body));
  }

 private:
  // GET when body is null, POST otherwise. Retries transport failures and 5xx;
  // 4xx replies are final.
  std::string call(const char* path, const std::string* body) const {
    std::string last_error;
    int last_status = 0;
    const int max_attempts = config_.retries + 1;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
      httplib::Client client(config_.url);
      const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
      client.set_connection_timeout(timeout);
      client.set_read_timeout(timeout);
      client.set_write_timeout(timeout);

      auto res = body ? client.Post(path, *body, protocol::kContentType) : client.Get(path);
      if (!res) {
        last_error = httplib::to_string(res.error());
        last_status = 0;
      } else if (res->status == 200) {
        return res->body;
      } else {
        last_status = res->status;
        last_error = protocol::parse_error(res->body);
        if (res->status < 500) {
          throw TransportError(std::string(path) + ": HTTP " + std::to_string(res->status) + ": " + last_error,
                               attempt, res->status);
        }
      }
      if (attempt < max_attempts && config_.retry_backoff_ms > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(config_.retry_backoff_ms * attempt));
      }
    }
    throw TransportError(std::string(path) + ": " + last_error + " (after " + std::to_string(max_attempts) +
                             " attempts)",
                         max_attempts, last_status);
  }

  EndpointConfig config_;
};

}  // namespace ngstyle
