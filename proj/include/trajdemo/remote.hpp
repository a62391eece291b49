#pragma once

#include <chrono>
#include <functional>
#include <string>

#include "trajdemo/embed.hpp"
#include "trajdemo/provider.hpp"

namespace trajdemo {

// Connection settings for an OpenAI-compatible HTTP endpoint.
struct RemoteConfig {
  std::string base_url = "http://127.0.0.1:8000";  // scheme://host[:port][/prefix]
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";  // empty: send no Authorization header
  int max_retries = 4;
  std::chrono::milliseconds initial_backoff{500};
  double backoff_multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};
  std::chrono::seconds timeout{120};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

// POST {base_url}/v1/chat/completions. Retries connection failures, 408,
// 409, 429 and 5xx with exponential backoff; other statuses fail at once.
class RemoteChatProvider final : public ChatProvider {
 public:
  explicit RemoteChatProvider(RemoteConfig config, Sleeper sleeper = {});

  ChatResponse chat(const ChatRequest& request) override;
  std::string name() const override { return "remote:" + config_.model; }

 private:
  RemoteConfig config_;
  Sleeper sleeper_;
};

// POST {base_url}/v1/embeddings with {"model", "input": [text]}. Token
// vectors are obtained by embedding each token string on its own.
class RemoteEmbedder final : public EmbeddingProvider {
 public:
  RemoteEmbedder(RemoteConfig config, std::size_t dimension, Sleeper sleeper = {});

  std::string id() const override { return "remote:" + config_.model; }
  std::size_t dimension() const override { return dimension_; }
  Vector token_vector(std::string_view token) override;
  Vector sequence_vector(std::string_view text, const std::vector<TokenEmbedding>& tokens) override;

 private:
  Vector embed_one(std::string_view text);

  RemoteConfig config_;
  std::size_t dimension_;
  Sleeper sleeper_;
};

}  // namespace trajdemo
