#include <doctest.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <atomic>
#include <thread>

#include <nlohmann/json.hpp>

#include "ragbias/error.hpp"
#include "ragbias/http_backends.hpp"
#include "ragbias/retrieval.hpp"
#include "test_util.hpp"

using namespace ragbias;
using nlohmann::json;
using testutil::TempDir;

namespace {

// Local mock service speaking the chat-completions / embeddings wire format.
class TestServer {
 public:
  TestServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~TestServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string base_url() const {
    return "http://127.0.0.1:" + std::to_string(port_);
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_CASE("chat backend speaks the completion schema at temperature 0") {
  TestServer ts;
  std::atomic<int> requests{0};
  std::string seen_auth;
  ts.server().Post("/v1/chat/completions",
                   [&](const httplib::Request& req, httplib::Response& res) {
                     ++requests;
                     seen_auth = req.get_header_value("Authorization");
                     const json body = json::parse(req.body);
                     CHECK(body.at("model") == "demo-model");
                     CHECK(body.at("temperature") == 0);
                     CHECK(body.at("max_tokens") == 16);
                     REQUIRE(body.at("messages").is_array());
                     CHECK(body["messages"].back().at("role") == "user");
                     const json reply{
                         {"choices",
                          json::array({json{{"message",
                                             json{{"role", "assistant"},
                                                  {"content", "B"}}}}})}};
                     res.set_content(reply.dump(), "application/json");
                   });

  http::ServiceConfig service;
  service.base_url = ts.base_url();
  service.model = "demo-model";
  service.api_key = "sk-test";
  http::HttpChatBackend backend("svc:demo", service, 16);

  generation::GenerationRequest request;
  request.prompt.user_text = "Context: x\nQuestion: y\nAnswer:";
  CHECK(backend.generate(request) == "B");
  CHECK(requests == 1);
  CHECK(seen_auth == "Bearer sk-test");
  CHECK(backend.reachable());
}

TEST_CASE("transient 500s are retried and then succeed") {
  TestServer ts;
  std::atomic<int> requests{0};
  ts.server().Post("/v1/chat/completions",
                   [&](const httplib::Request&, httplib::Response& res) {
                     const int n = ++requests;
                     if (n <= 2) {
                       res.status = 500;
                       return;
                     }
                     const json reply{
                         {"choices",
                          json::array({json{{"message",
                                             json{{"content", "C"}}}}})}};
                     res.set_content(reply.dump(), "application/json");
                   });

  http::ServiceConfig service;
  service.base_url = ts.base_url();
  service.model = "m";
  http::HttpChatBackend backend("svc:retry", service);

  generation::GenerationRequest request;
  request.prompt.user_text = "p";
  generation::RetryPolicy retry{3, std::chrono::milliseconds(1)};
  const auto outcome = generation::generate(request, backend, nullptr, retry);
  CHECK(outcome.ok);
  CHECK(outcome.response == "C");
  CHECK(requests == 3);
}

TEST_CASE("malformed service responses fail the record, not the run") {
  TestServer ts;
  ts.server().Post("/v1/chat/completions",
                   [&](const httplib::Request&, httplib::Response& res) {
                     res.set_content("{\"unexpected\": true}",
                                     "application/json");
                   });
  http::ServiceConfig service;
  service.base_url = ts.base_url();
  service.model = "m";
  http::HttpChatBackend backend("svc:bad", service);
  generation::GenerationRequest request;
  request.prompt.user_text = "p";
  generation::RetryPolicy retry{2, std::chrono::milliseconds(1)};
  const auto outcome = generation::generate(request, backend, nullptr, retry);
  CHECK_FALSE(outcome.ok);
  CHECK(outcome.error.find("content") != std::string::npos);
}

TEST_CASE("embedding client reorders responses by index and caches results") {
  TestServer ts;
  std::atomic<int> requests{0};
  ts.server().Post("/v1/embeddings",
                   [&](const httplib::Request& req, httplib::Response& res) {
                     ++requests;
                     const json body = json::parse(req.body);
                     CHECK(body.at("model") == "embedder-1");
                     const auto& inputs = body.at("input");
                     json data = json::array();
                     // Deliberately answer in reverse order; the index field
                     // is authoritative.
                     for (std::size_t i = inputs.size(); i-- > 0;) {
                       const double v = static_cast<double>(
                           inputs[i].get<std::string>().size());
                       data.push_back(json{
                           {"index", i},
                           {"embedding", json::array({v, 1.0})}});
                     }
                     res.set_content(json{{"data", data}}.dump(),
                                     "application/json");
                   });

  http::ServiceConfig service;
  service.base_url = ts.base_url();
  service.model = "embedder-1";
  http::HttpEmbedder embedder(service);

  TempDir dir;
  retrieval::EmbeddingCache cache(dir.path());
  const std::vector<std::string> texts = {"a", "bb", "ccc"};
  const auto m = retrieval::embed_batch(texts, embedder, &cache);
  REQUIRE(m.dim == 2);
  CHECK(m.vectors[0][0] == doctest::Approx(1.0));
  CHECK(m.vectors[1][0] == doctest::Approx(2.0));
  CHECK(m.vectors[2][0] == doctest::Approx(3.0));
  CHECK(requests == 1);

  // Warm cache: a re-run issues no further requests.
  const auto m2 = retrieval::embed_batch(texts, embedder, &cache);
  CHECK(requests == 1);
  CHECK(m2.vectors == m.vectors);
}

TEST_CASE("embedding size mismatch is a transport error") {
  TestServer ts;
  ts.server().Post("/v1/embeddings",
                   [&](const httplib::Request&, httplib::Response& res) {
                     res.set_content(json{{"data", json::array()}}.dump(),
                                     "application/json");
                   });
  http::ServiceConfig service;
  service.base_url = ts.base_url();
  service.model = "m";
  http::HttpEmbedder embedder(service);
  CHECK_THROWS_AS(embedder.embed({"x"}), TransportError);
}
