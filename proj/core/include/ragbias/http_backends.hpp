#pragma once

#include <string>

#include "ragbias/generation.hpp"
#include "ragbias/retrieval.hpp"

namespace ragbias::http {

// Connection settings for the chat-completion and embedding services.
// Base URLs and keys come from the environment so configs stay shareable.
struct ServiceConfig {
  std::string base_url;  // e.g. https://api.example.com or http://host:port
  std::string path;      // endpoint path, defaulted per client
  std::string model;
  std::string api_key;
  int timeout_seconds = 60;
};

std::string env_or(const char* name, const std::string& fallback = {});

// POST {model, messages, temperature: 0, max_tokens} against the common
// chat-completions schema; returns choices[0].message.content.
class HttpChatBackend final : public generation::GeneratorHandle {
 public:
  HttpChatBackend(std::string tag, ServiceConfig config, int max_tokens = 16);
  std::string tag() const override { return tag_; }
  std::string generate(const generation::GenerationRequest& request) override;

  // Any HTTP response counts as reachable; connection failure does not.
  bool reachable() const;

 private:
  std::string tag_;
  ServiceConfig config_;
  int max_tokens_;
};

// POST {model, input: [texts]} against the common embeddings schema;
// returns data[i].embedding ordered by index.
class HttpEmbedder final : public retrieval::EmbedderHandle {
 public:
  explicit HttpEmbedder(ServiceConfig config);
  std::string model_tag() const override { return config_.model; }
  std::vector<std::vector<float>> embed(
      const std::vector<std::string>& texts) override;

 private:
  ServiceConfig config_;
};

}  // namespace ragbias::http
