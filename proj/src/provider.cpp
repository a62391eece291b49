#include "trajdemo/provider.hpp"

#include <sstream>

#include <json.hpp>

#include "trajdemo/core.hpp"

namespace trajdemo {

using nlohmann::json;

std::string_view to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

Role parse_role(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  throw ParseError("unknown role '" + std::string(s) + "'");
}

void validate_request(const ChatRequest& request) {
  if (request.messages.empty()) throw ConfigError("chat request has no messages");
  if (request.temperature < 0.0 || request.temperature > 2.0) {
    throw ConfigError("temperature must be in [0, 2]");
  }
  if (request.top_p <= 0.0 || request.top_p > 1.0) throw ConfigError("top_p must be in (0, 1]");
  if (request.max_output_tokens < 1) throw ConfigError("max_output_tokens must be positive");
}

std::int64_t estimate_input_tokens(const std::vector<Message>& messages) {
  std::int64_t total = 0;
  for (const auto& m : messages) total += estimate_tokens(m.content);
  return total;
}

std::string request_hash(const ChatRequest& request) {
  json j;
  json msgs = json::array();
  for (const auto& m : request.messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  j["messages"] = std::move(msgs);
  j["temperature"] = request.temperature;
  j["top_p"] = request.top_p;
  j["max_tokens"] = request.max_output_tokens;
  j["seed"] = request.seed ? json(*request.seed) : json(nullptr);
  const std::string canonical = j.dump();
  // Two independent FNV streams give 128 bits.
  return hex64(stable_hash(canonical)) + hex64(stable_hash(canonical, 0x84222325cbf29ce4ULL));
}

ChatResponse ScriptedProvider::chat(const ChatRequest& request) {
  validate_request(request);
  ++calls_;
  for (const auto& rule : rules_) {
    if (!rule.when || rule.when(request)) {
      ChatResponse r;
      r.content = rule.respond(request);
      r.input_tokens = estimate_input_tokens(request.messages);
      r.output_tokens = estimate_tokens(r.content);
      r.estimated = true;
      return r;
    }
  }
  throw ProviderError("scripted provider: no rule matched");
}

RecordingProvider::RecordingProvider(std::shared_ptr<ChatProvider> inner, const std::filesystem::path& store)
    : inner_(std::move(inner)), out_(store, std::ios::binary | std::ios::app) {
  if (!out_) throw IoError("cannot open replay store " + store.string());
}

ChatResponse RecordingProvider::chat(const ChatRequest& request) {
  ChatResponse response = inner_->chat(request);
  json line{{"hash", request_hash(request)},
            {"content", response.content},
            {"input_tokens", response.input_tokens},
            {"output_tokens", response.output_tokens},
            {"estimated", response.estimated}};
  std::lock_guard lock(mutex_);
  out_ << line.dump() << '\n';
  out_.flush();
  if (!out_) throw IoError("replay store write failed");
  return response;
}

ReplayProvider::ReplayProvider(const std::filesystem::path& store) {
  std::ifstream in(store, std::ios::binary);
  if (!in) throw IoError("cannot open replay store " + store.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      ChatResponse r;
      r.content = j.at("content").get<std::string>();
      r.input_tokens = j.at("input_tokens").get<std::int64_t>();
      r.output_tokens = j.at("output_tokens").get<std::int64_t>();
      r.estimated = j.at("estimated").get<bool>();
      entries_[j.at("hash").get<std::string>()].responses.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad replay record: ") + e.what(), line_no);
    }
  }
}

ChatResponse ReplayProvider::chat(const ChatRequest& request) {
  const std::string hash = request_hash(request);
  std::lock_guard lock(mutex_);
  auto it = entries_.find(hash);
  if (it == entries_.end()) throw ReplayMissError("no recorded response for request " + hash);
  Entry& e = it->second;
  const ChatResponse& r = e.responses[std::min(e.next, e.responses.size() - 1)];
  if (e.next < e.responses.size()) ++e.next;
  ++served_;
  return r;
}

}  // namespace trajdemo
