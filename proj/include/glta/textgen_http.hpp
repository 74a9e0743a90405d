#pragma once

// OpenAI-compatible chat-completion client: single-turn POST with retries and
// exponential backoff. Auth failures (401/403) surface immediately.

#include <chrono>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "glta/errors.hpp"
#include "glta/textgen.hpp"

namespace glta::textgen {

inline std::string chat_complete(const ChatConfig& cfg, const std::string& prompt) {
  if (cfg.endpoint.empty()) throw ContractError("chat_complete: no endpoint configured");
  nlohmann::json body = {
      {"model", cfg.model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
  const std::string payload = body.dump();

  std::string last_error = "no attempts made";
  int last_status = 0;
  std::string last_body;
  for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
    if (attempt > 1) {
      const int delay = cfg.backoff_base_ms * (1 << (attempt - 2));
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }
    httplib::Client client(cfg.endpoint);
    client.set_connection_timeout(0, cfg.timeout_ms * 1000);
    client.set_read_timeout(0, cfg.timeout_ms * 1000);
    httplib::Headers headers;
    if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);
    auto res = client.Post("/v1/chat/completions", headers, payload, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      last_status = 0;
      continue;
    }
    if (res->status == 401 || res->status == 403)
      throw AuthError("chat_complete: authentication rejected (HTTP " +
                      std::to_string(res->status) + ")");
    if (res->status < 200 || res->status >= 300) {
      last_status = res->status;
      last_body = res->body.substr(0, 200);
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.contains("choices") || j["choices"].empty() ||
        !j["choices"][0].contains("message"))
      throw ParseError("chat_complete: malformed response body: " + res->body.substr(0, 200));
    return j["choices"][0]["message"]["content"].get<std::string>();
  }
  if (last_status != 0)
    throw StatusError(last_status, "chat_complete: " + last_error + " after " +
                                       std::to_string(cfg.max_attempts) +
                                       " attempts; body: " + last_body);
  throw TransportError("chat_complete: " + last_error + " after " +
                       std::to_string(cfg.max_attempts) + " attempts");
}

}  // namespace glta::textgen
