#pragma once

// Chat-completion client abstraction used by the sample-generation agents.
// The core never performs network I/O itself; see live_client.hpp for the
// HTTP adapter.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "masteer/core.hpp"

namespace masteer {

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string send(const std::string& system_prompt, const std::string& user_payload) = 0;
};

/// FNV-1a 64 over system prompt, a unit separator and the payload, as 16 hex digits.
inline std::string request_hash(std::string_view system_prompt, std::string_view user_payload) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
  };
  mix(system_prompt);
  mix("\x1f");
  mix(user_payload);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Adapts a callable; used for in-process scripted agents.
class FunctionClient final : public ChatClient {
 public:
  using Fn = std::function<std::string(const std::string&, const std::string&)>;
  explicit FunctionClient(Fn fn) : fn_(std::move(fn)) {}

  std::string send(const std::string& system_prompt, const std::string& user_payload) override {
    return fn_(system_prompt, user_payload);
  }

 private:
  Fn fn_;
};

/// Replays recorded request -> reply pairs from a fixture directory.
///
/// Each `<hash>.json` file holds {"system", "user", "replies": [...]}. The
/// n-th identical request receives replies[n], the last reply repeating once
/// the list is exhausted.
class FixtureClient final : public ChatClient {
 public:
  explicit FixtureClient(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!std::filesystem::is_directory(dir_)) fail(ErrorKind::io, "fixture directory not found: " + dir_.string());
  }

  std::string send(const std::string& system_prompt, const std::string& user_payload) override {
    const auto key = request_hash(system_prompt, user_payload);
    const auto file = dir_ / (key + ".json");
    std::ifstream in(file);
    if (!in) fail(ErrorKind::pipeline, "no recorded reply for request " + key);
    nlohmann::json rec;
    try {
      in >> rec;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::pipeline, "malformed fixture " + file.string() + ": " + e.what());
    }
    const auto& replies = rec.at("replies");
    if (!replies.is_array() || replies.empty()) fail(ErrorKind::pipeline, "fixture " + key + " has no replies");
    auto& n = calls_[key];
    const auto idx = std::min<std::size_t>(n++, replies.size() - 1);
    return replies[idx].get<std::string>();
  }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::size_t> calls_;
};

/// Forwards to another client and records every exchange in fixture layout.
class RecordingClient final : public ChatClient {
 public:
  RecordingClient(ChatClient& inner, std::filesystem::path dir) : inner_(inner), dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) fail(ErrorKind::io, "cannot create " + dir_.string());
  }

  std::string send(const std::string& system_prompt, const std::string& user_payload) override {
    auto reply = inner_.send(system_prompt, user_payload);
    const auto key = request_hash(system_prompt, user_payload);
    auto& rec = records_[key];
    if (rec.is_null()) rec = {{"system", system_prompt}, {"user", user_payload}, {"replies", nlohmann::json::array()}};
    rec["replies"].push_back(reply);
    std::ofstream out(dir_ / (key + ".json"), std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write fixture " + key);
    out << rec.dump(2) << '\n';
    return reply;
  }

 private:
  ChatClient& inner_;
  std::filesystem::path dir_;
  std::map<std::string, nlohmann::json> records_;
};

/// Appends one JSON line per exchange to a transcript stream.
class TranscriptClient final : public ChatClient {
 public:
  TranscriptClient(ChatClient& inner, std::ostream& log) : inner_(inner), log_(log) {}

  std::string send(const std::string& system_prompt, const std::string& user_payload) override {
    const auto key = request_hash(system_prompt, user_payload);
    nlohmann::json rec = {{"seq", seq_++},
                          {"request", key},
                          {"system", request_hash(system_prompt, "")},
                          {"user", user_payload}};
    try {
      auto reply = inner_.send(system_prompt, user_payload);
      rec["reply"] = reply;
      log_ << rec.dump() << '\n';
      return reply;
    } catch (const std::exception& e) {
      rec["error"] = e.what();
      log_ << rec.dump() << '\n';
      throw;
    }
  }

 private:
  ChatClient& inner_;
  std::ostream& log_;
  std::size_t seq_ = 0;
};

}  // namespace masteer
