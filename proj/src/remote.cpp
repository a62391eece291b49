#include "trajdemo/remote.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "trajdemo/core.hpp"

namespace trajdemo {

using nlohmann::json;

namespace {

struct Endpoint {
  std::string scheme_host_port;
  std::string prefix;
};

Endpoint split_base_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base_url needs a scheme: " + base_url);
  const auto path_start = base_url.find('/', scheme_end + 3);
  Endpoint e;
  if (path_start == std::string::npos) {
    e.scheme_host_port = base_url;
  } else {
    e.scheme_host_port = base_url.substr(0, path_start);
    e.prefix = base_url.substr(path_start);
    while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  }
  return e;
}

bool transient_status(int status) {
  return status == 408 || status == 409 || status == 429 || status >= 500;
}

// Posts `body` with retry-with-backoff and returns the parsed JSON reply.
json post_with_retries(const RemoteConfig& config, const Sleeper& sleeper, const std::string& route,
                       const json& body) {
  const Endpoint ep = split_base_url(config.base_url);
  httplib::Client client(ep.scheme_host_port);
  client.set_connection_timeout(config.timeout);
  client.set_read_timeout(config.timeout);
  client.set_write_timeout(config.timeout);

  httplib::Headers headers;
  if (!config.api_key_env.empty()) {
    if (const char* key = std::getenv(config.api_key_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  const std::string payload = body.dump();
  auto backoff = config.initial_backoff;
  int last_status = 0;
  std::string last_error;
  const int attempts = std::max(1, config.max_retries + 1);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    auto res = client.Post(ep.prefix + route, headers, payload, "application/json");
    if (res) {
      last_status = res->status;
      if (res->status >= 200 && res->status < 300) {
        try {
          return json::parse(res->body);
        } catch (const json::exception& e) {
          throw ProviderError(std::string("unparseable response body: ") + e.what(), attempt, res->status);
        }
      }
      last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
      if (!transient_status(res->status)) throw ProviderError(last_error, attempt, res->status);
    } else {
      last_error = "connection failed: " + httplib::to_string(res.error());
    }
    if (attempt == attempts) break;
    if (sleeper) {
      sleeper(backoff);
    } else {
      std::this_thread::sleep_for(backoff);
    }
    backoff = std::min(config.max_backoff,
                       std::chrono::milliseconds(static_cast<long long>(backoff.count() * config.backoff_multiplier)));
  }
  throw ProviderError("retries exhausted (" + last_error + ")", attempts, last_status);
}

}  // namespace

RemoteChatProvider::RemoteChatProvider(RemoteConfig config, Sleeper sleeper)
    : config_(std::move(config)), sleeper_(std::move(sleeper)) {
  split_base_url(config_.base_url);
  if (config_.model.empty()) throw ConfigError("remote provider needs a model name");
}

ChatResponse RemoteChatProvider::chat(const ChatRequest& request) {
  validate_request(request);
  json msgs = json::array();
  for (const auto& m : request.messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  json body{{"model", config_.model},
            {"messages", std::move(msgs)},
            {"temperature", request.temperature},
            {"top_p", request.top_p},
            {"max_tokens", request.max_output_tokens}};
  if (request.seed) body["seed"] = *request.seed;

  const json reply = post_with_retries(config_, sleeper_, "/v1/chat/completions", body);
  ChatResponse out;
  try {
    out.content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw ProviderError(std::string("response has no message content: ") + e.what());
  }
  const auto usage = reply.find("usage");
  if (usage != reply.end() && usage->is_object() && usage->contains("prompt_tokens") &&
      usage->contains("completion_tokens")) {
    out.input_tokens = usage->at("prompt_tokens").get<std::int64_t>();
    out.output_tokens = usage->at("completion_tokens").get<std::int64_t>();
  } else {
    out.input_tokens = estimate_input_tokens(request.messages);
    out.output_tokens = estimate_tokens(out.content);
    out.estimated = true;
  }
  return out;
}

RemoteEmbedder::RemoteEmbedder(RemoteConfig config, std::size_t dimension, Sleeper sleeper)
    : config_(std::move(config)), dimension_(dimension), sleeper_(std::move(sleeper)) {
  split_base_url(config_.base_url);
  if (config_.model.empty()) throw ConfigError("remote embedder needs a model name");
}

Vector RemoteEmbedder::embed_one(std::string_view text) {
  const json body{{"model", config_.model}, {"input", json::array({std::string(text)})}};
  const json reply = post_with_retries(config_, sleeper_, "/v1/embeddings", body);
  Vector v;
  try {
    v = reply.at("data").at(0).at("embedding").get<Vector>();
  } catch (const json::exception& e) {
    throw ProviderError(std::string("response has no embedding: ") + e.what());
  }
  if (v.size() != dimension_) {
    throw ProviderError("embedding dimension " + std::to_string(v.size()) + " != configured " +
                        std::to_string(dimension_));
  }
  normalize(v);
  return v;
}

Vector RemoteEmbedder::token_vector(std::string_view token) { return embed_one(token); }

Vector RemoteEmbedder::sequence_vector(std::string_view text, const std::vector<TokenEmbedding>& tokens) {
  if (tokens.empty()) return {};
  return embed_one(text);
}

}  // namespace trajdemo
