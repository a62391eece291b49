#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trajdemo/error.hpp"

namespace trajdemo {

enum class Role { system, user, assistant };

std::string_view to_string(Role r);
Role parse_role(std::string_view s);

struct Message {
  Role role = Role::user;
  std::string content;

  bool operator==(const Message&) const = default;
};

struct ChatRequest {
  std::vector<Message> messages;
  double temperature = 0.1;
  double top_p = 0.5;
  int max_output_tokens = 2000;
  std::optional<std::int64_t> seed;
};

struct ChatResponse {
  std::string content;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  bool estimated = false;  // counts derived from text length, not reported

  bool operator==(const ChatResponse&) const = default;
};

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual ChatResponse chat(const ChatRequest& request) = 0;
  virtual std::string name() const = 0;
};

// Throws ConfigError on empty messages or out-of-range decoding parameters.
void validate_request(const ChatRequest& request);

// Sum of per-message ceil(chars/4).
std::int64_t estimate_input_tokens(const std::vector<Message>& messages);

// Hash over messages and decoding parameters only.
std::string request_hash(const ChatRequest& request);

// Deterministic rule-table provider. The first rule whose predicate holds
// produces the completion; usage is always estimated.
class ScriptedProvider final : public ChatProvider {
 public:
  using Predicate = std::function<bool(const ChatRequest&)>;
  using Responder = std::function<std::string(const ChatRequest&)>;

  struct Rule {
    std::string name;
    Predicate when;
    Responder respond;
  };

  explicit ScriptedProvider(std::vector<Rule> rules, std::string name = "scripted")
      : rules_(std::move(rules)), name_(std::move(name)) {}

  ChatResponse chat(const ChatRequest& request) override;
  std::string name() const override { return name_; }

  std::int64_t calls() const { return calls_.load(); }

 private:
  std::vector<Rule> rules_;
  std::string name_;
  std::atomic<std::int64_t> calls_{0};
};

// Passes requests to `inner` and appends each exchange to a session file:
// one JSON line per call, {"hash", "content", "input_tokens",
// "output_tokens", "estimated"}.
class RecordingProvider final : public ChatProvider {
 public:
  RecordingProvider(std::shared_ptr<ChatProvider> inner, const std::filesystem::path& store);

  ChatResponse chat(const ChatRequest& request) override;
  std::string name() const override { return inner_->name(); }

 private:
  std::shared_ptr<ChatProvider> inner_;
  std::mutex mutex_;
  std::ofstream out_;
};

// Serves responses from a recorded session. Repeated identical requests get
// the recorded responses in order; the last one repeats once exhausted.
class ReplayProvider final : public ChatProvider {
 public:
  explicit ReplayProvider(const std::filesystem::path& store);

  ChatResponse chat(const ChatRequest& request) override;
  std::string name() const override { return "replay"; }

  std::int64_t served() const { return served_.load(); }

 private:
  struct Entry {
    std::vector<ChatResponse> responses;
    std::size_t next = 0;
  };
  std::mutex mutex_;
  std::map<std::string, Entry> entries_;
  std::atomic<std::int64_t> served_{0};
};

// Counts calls that reach the wrapped provider.
class CountingProvider final : public ChatProvider {
 public:
  explicit CountingProvider(std::shared_ptr<ChatProvider> inner) : inner_(std::move(inner)) {}

  ChatResponse chat(const ChatRequest& request) override {
    ++calls_;
    return inner_->chat(request);
  }
  std::string name() const override { return inner_->name(); }
  std::int64_t calls() const { return calls_.load(); }

 private:
  std::shared_ptr<ChatProvider> inner_;
  std::atomic<std::int64_t> calls_{0};
};

}  // namespace trajdemo
