#pragma once

// JSON wire protocol spoken between the client and an LM server.
//
//   GET  /v1/info                       -> {"vocab_size": int, "tokenizer_id": string}
//   POST /v1/logits {"tokens":[...]}    -> {"logits":[float x vocab_size]}
//   POST /v1/encode {"text": string}    -> {"tokens":[...]}
//   POST /v1/decode {"tokens":[...]}    -> {"text": string}
//
// Failures are non-200 replies carrying {"error": string}.

#include <cmath>
#include <string>
#include <string_view>

#include <json.hpp>

#include "ngstyle/core.hpp"

namespace ngstyle::protocol {

using json = nlohmann::json;

inline constexpr const char* kInfoPath = "/v1/info";
inline constexpr const char* kLogitsPath = "/v1/logits";
inline constexpr const char* kEncodePath = "/v1/encode";
inline constexpr const char* kDecodePath = "/v1/decode";
inline constexpr const char* kContentType = "application/json";

struct ServerInfo {
  std::size_t vocab_size = 0;
  std::string tokenizer_id;
};

inline std::string tokens_request(TokenView tokens) {
  json body;
  body["tokens"] = json::array();
  for (TokenId t : tokens) body["tokens"].push_back(t);
  return body.dump();
}

inline std::string logits_request(TokenView tokens) { return tokens_request(tokens); }
inline std::string decode_request(TokenView tokens) { return tokens_request(tokens); }

inline std::string encode_request(std::string_view text) {
  json body;
  body["text"] = std::string(text);
  return body.dump();
}

namespace detail {

inline json parse_object(std::string_view body, const char* what) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed ") + what + " reply: " + e.what());
  }
  if (!j.is_object()) throw FormatError(std::string("malformed ") + what + " reply: not an object");
  return j;
}

inline const json& field(const json& j, const char* key, const char* what) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(std::string("malformed ") + what + " reply: missing \"" + key + "\"");
  return *it;
}

inline TokenSeq parse_token_array(const json& arr, const char* what) {
  if (!arr.is_array()) throw FormatError(std::string("malformed ") + what + " reply: tokens is not an array");
  TokenSeq out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number_integer()) throw FormatError(std::string("malformed ") + what + " reply: non-integer token");
    out.push_back(v.get<TokenId>());
  }
  return out;
}

}  // namespace detail

inline ServerInfo parse_info(std::string_view body) {
  auto j = detail::parse_object(body, "info");
  const auto& vs = detail::field(j, "vocab_size", "info");
  const auto& id = detail::field(j, "tokenizer_id", "info");
  if (!vs.is_number_integer() || vs.get<long long>() <= 0) throw FormatError("malformed info reply: vocab_size");
  if (!id.is_string()) throw FormatError("malformed info reply: tokenizer_id");
  return {vs.get<std::size_t>(), id.get<std::string>()};
}

inline Logits parse_logits(std::string_view body, std::size_t vocab_size) {
  auto j = detail::parse_object(body, "logits");
  const auto& arr = detail::field(j, "logits", "logits");
  if (!arr.is_array()) throw FormatError("malformed logits reply: logits is not an array");
  if (arr.size() != vocab_size) {
    throw FormatError("malformed logits reply: expected " + std::to_string(vocab_size) + " values, got " +
                      std::to_string(arr.size()));
  }
  Logits out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw FormatError("malformed logits reply: non-numeric logit");
    double x = v.get<double>();
    if (!std::isfinite(x)) throw FormatError("malformed logits reply: non-finite logit");
    out.push_back(x);
  }
  return out;
}

inline TokenSeq parse_encode(std::string_view body) {
  auto j = detail::parse_object(body, "encode");
  return detail::parse_token_array(detail::field(j, "tokens", "encode"), "encode");
}

inline std::string parse_decode(std::string_view body) {
  auto j = detail::parse_object(body, "decode");
  const auto& t = detail::field(j, "text", "decode");
  if (!t.is_string()) throw FormatError("malformed decode reply: text is not a string");
  return t.get<std::string>();
}

// Best-effort extraction of {"error": ...} from a failed reply.
inline std::string parse_error(std::string_view body) {
  try {
    auto j = json::parse(body);
    if (j.is_object() && j.contains("error") && j["error"].is_string()) return j["error"].get<std::string>();
  } catch (const json::exception&) {
  }
  return std::string(body.substr(0, 200));
}

}  // namespace ngstyle::protocol
