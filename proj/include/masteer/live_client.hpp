#pragma once

// HTTP adapter for OpenAI-compatible chat-completion endpoints. Kept out of
// chat_client.hpp so only the CLI pays for the HTTP dependency.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "masteer/chat_client.hpp"
#include "masteer/core.hpp"

namespace masteer {

struct LiveClientConfig {
  std::string base_url;  // e.g. "https://api.example.com" or "http://127.0.0.1:8080"
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.0;
  int timeout_seconds = 120;
};

inline LiveClientConfig load_live_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorKind::io, "cannot open live client config " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, "malformed live client config: " + std::string(e.what()));
  }
  LiveClientConfig c;
  c.base_url = j.value("base_url", c.base_url);
  c.path = j.value("path", c.path);
  c.model = j.value("model", c.model);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.temperature = j.value("temperature", c.temperature);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  if (c.base_url.empty() || c.model.empty()) fail(ErrorKind::config, "live client config needs base_url and model");
  return c;
}

class LiveChatClient final : public ChatClient {
 public:
  explicit LiveChatClient(LiveClientConfig cfg) : cfg_(std::move(cfg)), http_(cfg_.base_url) {
    http_.set_read_timeout(cfg_.timeout_seconds, 0);
    http_.set_connection_timeout(30, 0);
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key != nullptr && *key != '\0') {
      http_.set_bearer_token_auth(key);
    }
  }

  std::string send(const std::string& system_prompt, const std::string& user_payload) override {
    const nlohmann::json body = {{"model", cfg_.model},
                                 {"temperature", cfg_.temperature},
                                 {"messages",
                                  {{{"role", "system"}, {"content", system_prompt}},
                                   {{"role", "user"}, {"content", user_payload}}}}};
    auto res = http_.Post(cfg_.path, body.dump(), "application/json");
    if (!res) fail(ErrorKind::io, "chat endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) {
      fail(ErrorKind::io, "chat endpoint returned HTTP " + std::to_string(res->status));
    }
    try {
      return nlohmann::json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::parse, "unexpected chat endpoint response: " + std::string(e.what()));
    }
  }

 private:
  LiveClientConfig cfg_;
  httplib::Client http_;
};

}  // namespace masteer
