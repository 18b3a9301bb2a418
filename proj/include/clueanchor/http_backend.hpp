#pragma once

#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
#include <json.hpp>

#include "clueanchor/backends.hpp"

namespace clueanchor {

struct HttpBackendConfig {
  std::string base_url;                 // e.g. "http://localhost:8000"
  std::string model;                    // chat completion model name
  std::string embedding_model;          // embeddings model name
  int timeout_ms = 60000;
  std::string api_key;                  // empty: read CLUEANCHOR_API_KEY
};

inline std::string resolve_api_key(const HttpBackendConfig& config) {
  if (!config.api_key.empty()) return config.api_key;
  const char* env = std::getenv("CLUEANCHOR_API_KEY");
  return env ? std::string(env) : std::string();
}

// OpenAI-compatible remote provider. Each request sends the rendered prompt
// as a single user message. A fresh client per call keeps concurrent use
// safe; retry belongs to the Retrying* decorators, not here.
class OpenAiHttpBackend : public GenerationProvider, public EmbeddingProvider {
 public:
  explicit OpenAiHttpBackend(HttpBackendConfig config)
      : config_(std::move(config)), api_key_(resolve_api_key(config_)) {
    if (config_.base_url.empty())
      throw std::invalid_argument("OpenAiHttpBackend: base_url must be set");
  }

  std::string generate(const std::string& prompt, const GenParams& params) override {
    validate(params);
    if (prompt.empty()) throw std::invalid_argument("generate: prompt must be non-empty");

    nlohmann::json body = {
        {"model", config_.model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
        {"temperature", params.temperature},
        {"max_tokens", params.max_tokens},
    };
    if (params.stop) body["stop"] = *params.stop;
    if (params.seed) body["seed"] = *params.seed;

    const nlohmann::json reply = post_json("/v1/chat/completions", body);
    if (!reply.contains("choices") || !reply["choices"].is_array() || reply["choices"].empty())
      throw BackendError(BackendErrorKind::bad_response, "chat completion has no choices");
    const nlohmann::json& message = reply["choices"][0].value("message", nlohmann::json::object());
    if (!message.contains("content") || !message["content"].is_string())
      throw BackendError(BackendErrorKind::bad_response, "chat completion has no message content");
    return message["content"].get<std::string>();
  }

  std::vector<std::vector<double>> embed_raw(const std::vector<std::string>& texts) override {
    nlohmann::json body = {
        {"model", config_.embedding_model.empty() ? config_.model : config_.embedding_model},
        {"input", texts},
    };
    const nlohmann::json reply = post_json("/v1/embeddings", body);
    if (!reply.contains("data") || !reply["data"].is_array())
      throw BackendError(BackendErrorKind::bad_response, "embedding response has no data array");

    std::vector<std::vector<double>> out(texts.size());
    std::vector<bool> filled(texts.size(), false);
    for (const auto& row : reply["data"]) {
      if (!row.contains("index") || !row.contains("embedding"))
        throw BackendError(BackendErrorKind::bad_response, "embedding row missing index/embedding");
      const std::size_t index = row["index"].get<std::size_t>();
      if (index >= out.size())
        throw BackendError(BackendErrorKind::bad_response, "embedding index out of range");
      out[index] = row["embedding"].get<std::vector<double>>();
      filled[index] = true;
    }
    for (std::size_t i = 0; i < filled.size(); ++i)
      if (!filled[i])
        throw BackendError(BackendErrorKind::bad_response,
                           "embedding response missing index " + std::to_string(i));
    return out;
  }

 private:
  nlohmann::json post_json(const std::string& path, const nlohmann::json& body) {
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(0, config_.timeout_ms * 1000LL);
    client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000LL);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    const httplib::Result result =
        client.Post(path, headers, body.dump(), "application/json");
    if (!result)
      throw BackendError(BackendErrorKind::transport,
                         "request to " + path + " failed: " + httplib::to_string(result.error()));
    if (result->status == 429)
      throw BackendError(BackendErrorKind::rate_limited, "HTTP 429 from " + path);
    if (result->status >= 500)
      throw BackendError(BackendErrorKind::transport,
                         "HTTP " + std::to_string(result->status) + " from " + path);
    if (result->status < 200 || result->status >= 300)
      throw BackendError(BackendErrorKind::bad_response,
                         "HTTP " + std::to_string(result->status) + " from " + path + ": " +
                             result->body.substr(0, 200));

    nlohmann::json parsed = nlohmann::json::parse(result->body, nullptr, false);
    if (parsed.is_discarded())
      throw BackendError(BackendErrorKind::bad_response, "non-JSON body from " + path);
    return parsed;
  }

  HttpBackendConfig config_;
  std::string api_key_;
};

}  // namespace clueanchor
