#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "ragbias/http_backends.hpp"

#include <cstdlib>

#include <nlohmann/json.hpp>

#include "ragbias/error.hpp"

namespace ragbias::http {

using nlohmann::json;

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : fallback;
}

namespace {

httplib::Client make_client(const ServiceConfig& config) {
  httplib::Client cli(config.base_url);
  cli.set_connection_timeout(config.timeout_seconds);
  cli.set_read_timeout(config.timeout_seconds);
  cli.set_write_timeout(config.timeout_seconds);
  return cli;
}

httplib::Headers make_headers(const ServiceConfig& config) {
  httplib::Headers headers;
  if (!config.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + config.api_key);
  }
  return headers;
}

json post_json(const ServiceConfig& config, const std::string& path,
               const json& body) {
  auto cli = make_client(config);
  auto res = cli.Post(path, make_headers(config), body.dump(),
                      "application/json");
  if (!res) {
    throw TransportError("http: no response from " + config.base_url + path +
                         " (" + httplib::to_string(res.error()) + ")");
  }
  if (res->status < 200 || res->status >= 300) {
    throw TransportError("http: status " + std::to_string(res->status) +
                         " from " + config.base_url + path);
  }
  json parsed = json::parse(res->body, nullptr, false);
  if (parsed.is_discarded()) {
    throw TransportError("http: malformed json body from " + config.base_url +
                         path);
  }
  return parsed;
}

}  // namespace

HttpChatBackend::HttpChatBackend(std::string tag, ServiceConfig config,
                                 int max_tokens)
    : tag_(std::move(tag)), config_(std::move(config)), max_tokens_(max_tokens) {
  if (config_.path.empty()) config_.path = "/v1/chat/completions";
}

std::string HttpChatBackend::generate(
    const generation::GenerationRequest& request) {
  json messages = json::array();
  if (!request.prompt.system_text.empty()) {
    messages.push_back({{"role", "system"}, {"content", request.prompt.system_text}});
  }
  messages.push_back({{"role", "user"}, {"content", request.prompt.user_text}});
  const json body{{"model", config_.model},
                  {"messages", messages},
                  {"temperature", 0},
                  {"max_tokens", max_tokens_}};
  const json response = post_json(config_, config_.path, body);
  try {
    return response.at("choices").at(0).at("message").at("content")
        .get<std::string>();
  } catch (const std::exception& e) {
    throw TransportError(std::string("chat response missing content: ") +
                         e.what());
  }
}

bool HttpChatBackend::reachable() const {
  auto cli = make_client(config_);
  auto res = cli.Get("/");
  return static_cast<bool>(res);
}

HttpEmbedder::HttpEmbedder(ServiceConfig config) : config_(std::move(config)) {
  if (config_.path.empty()) config_.path = "/v1/embeddings";
}

std::vector<std::vector<float>> HttpEmbedder::embed(
    const std::vector<std::string>& texts) {
  const json body{{"model", config_.model}, {"input", texts}};
  const json response = post_json(config_, config_.path, body);
  std::vector<std::vector<float>> out(texts.size());
  std::vector<bool> filled(texts.size(), false);
  try {
    const auto& data = response.at("data");
    if (!data.is_array() || data.size() != texts.size()) {
      throw TransportError("embedding response size mismatch");
    }
    for (const auto& item : data) {
      const auto idx = item.at("index").get<std::size_t>();
      if (idx >= texts.size() || filled[idx]) {
        throw TransportError("embedding response has bad index");
      }
      out[idx] = item.at("embedding").get<std::vector<float>>();
      filled[idx] = true;
    }
  } catch (const TransportError&) {
    throw;
  } catch (const std::exception& e) {
    throw TransportError(std::string("embedding response malformed: ") +
                         e.what());
  }
  return out;
}

}  // namespace ragbias::http
