#include <doctest.h>

#include "ragbias/error.hpp"
#include "ragbias/generation.hpp"
#include "ragbias/io.hpp"
#include "test_util.hpp"

using namespace ragbias;
using namespace ragbias::generation;
using testutil::TempDir;

namespace {

InstructionSet test_instructions() {
  return {"Pick A, B, or C.", "Choose one of A, B, C."};
}

std::vector<PromptDocRef> two_docs() {
  return {{"d1", "women are nurses", corpus::Polarity::Stereotype},
          {"d2", "men are nurses", corpus::Polarity::AntiStereotype}};
}

}  // namespace

TEST_CASE("prompt without docs omits the social impressions block") {
  const auto inst = testutil::make_instance("q1");
  const auto p = assemble_prompt(inst, bbq::ContextView::Ambiguous, {},
                                 InstructionVariant::V1, test_instructions());
  CHECK(p.user_text.find("Social impressions") == std::string::npos);
  CHECK(p.user_text.find("Context: ") != std::string::npos);
  CHECK(p.user_text.find("Question: Who was the secretary?") != std::string::npos);
}

TEST_CASE("docs render as an enumerated block in retrieval order") {
  const auto inst = testutil::make_instance("q1");
  const auto p = assemble_prompt(inst, bbq::ContextView::Ambiguous, two_docs(),
                                 InstructionVariant::V1, test_instructions());
  const auto pos_block = p.user_text.find("Social impressions:");
  const auto pos1 = p.user_text.find("1. women are nurses");
  const auto pos2 = p.user_text.find("2. men are nurses");
  const auto pos_ctx = p.user_text.find("Context: ");
  REQUIRE(pos_block != std::string::npos);
  REQUIRE(pos1 != std::string::npos);
  REQUIRE(pos2 != std::string::npos);
  CHECK(pos_block < pos1);
  CHECK(pos1 < pos2);
  CHECK(pos2 < pos_ctx);  // retrieved docs come before context and question
}

TEST_CASE("identical inputs produce identical prompt hashes") {
  const auto inst = testutil::make_instance("q1");
  const auto p1 = assemble_prompt(inst, bbq::ContextView::Disambiguated,
                                  two_docs(), InstructionVariant::V2,
                                  test_instructions());
  const auto p2 = assemble_prompt(inst, bbq::ContextView::Disambiguated,
                                  two_docs(), InstructionVariant::V2,
                                  test_instructions());
  CHECK(p1.hash() == p2.hash());
  const auto p3 = assemble_prompt(inst, bbq::ContextView::Disambiguated,
                                  two_docs(), InstructionVariant::V1,
                                  test_instructions());
  CHECK(p1.hash() != p3.hash());
}

TEST_CASE("instruction variants select the configured text") {
  const auto inst = testutil::make_instance("q1");
  const auto p = assemble_prompt(inst, bbq::ContextView::Ambiguous, {},
                                 InstructionVariant::V2, test_instructions());
  CHECK(p.user_text.rfind("Choose one of A, B, C.", 0) == 0);
}

TEST_CASE("answer parsing ladder") {
  const auto options = testutil::make_instance("x").options;
  CHECK(parse_answer("The answer is (B).", options) == ParsedAnswer::B);
  CHECK(parse_answer("a", options) == ParsedAnswer::A);
  CHECK(parse_answer("Both A and B", options) == ParsedAnswer::Invalid);
  CHECK(parse_answer("", options) == ParsedAnswer::Invalid);
  CHECK(parse_answer("I cannot answer this question.", options) ==
        ParsedAnswer::Invalid);
  // Rule 2: a unique option text substring resolves to its letter.
  CHECK(parse_answer("It must be the man.", options) == ParsedAnswer::B);
  // Two option texts mentioned: ambiguous, stays invalid.
  CHECK(parse_answer("the woman or the man", options) == ParsedAnswer::Invalid);
  // Letter embedded in a word does not count.
  CHECK(parse_answer("cab", options) == ParsedAnswer::Invalid);
}

TEST_CASE("mock policies answer by role") {
  const auto inst = testutil::make_instance("q1", bbq::ContextPolarity::CounterStereotyped);
  const auto instructions = test_instructions();

  SUBCASE("AlwaysUnknown returns the unknown letter for any prompt") {
    const auto p = assemble_prompt(inst, bbq::ContextView::Ambiguous, two_docs(),
                                   InstructionVariant::V1, instructions);
    const auto roles = roles_for(inst, bbq::ContextView::Ambiguous);
    CHECK(mock_generate(MockPolicy::AlwaysUnknown, p, roles) == "C");
  }
  SUBCASE("ContextFollower answers evidence on disambiguated views") {
    const auto p = assemble_prompt(inst, bbq::ContextView::Disambiguated, {},
                                   InstructionVariant::V1, instructions);
    const auto roles = roles_for(inst, bbq::ContextView::Disambiguated);
    CHECK(mock_generate(MockPolicy::ContextFollower, p, roles) == "B");
    const auto roles_a = roles_for(inst, bbq::ContextView::Ambiguous);
    CHECK(mock_generate(MockPolicy::ContextFollower, p, roles_a) == "C");
  }
  SUBCASE("DocMajority follows the majority polarity, ties to unknown") {
    const auto roles = roles_for(inst, bbq::ContextView::Ambiguous);
    auto p_empty = assemble_prompt(inst, bbq::ContextView::Ambiguous, {},
                                   InstructionVariant::V1, instructions);
    CHECK(mock_generate(MockPolicy::DocMajority, p_empty, roles) == "C");

    std::vector<PromptDocRef> docs = {
        {"s1", "x", corpus::Polarity::Stereotype},
        {"s2", "y", corpus::Polarity::Stereotype},
        {"s3", "z", corpus::Polarity::Stereotype},
        {"a1", "w", corpus::Polarity::AntiStereotype}};
    auto p_major = assemble_prompt(inst, bbq::ContextView::Ambiguous, docs,
                                   InstructionVariant::V1, instructions);
    CHECK(mock_generate(MockPolicy::DocMajority, p_major, roles) == "A");
  }
  SUBCASE("fixed policies") {
    const auto p = assemble_prompt(inst, bbq::ContextView::Ambiguous, {},
                                   InstructionVariant::V1, instructions);
    const auto roles = roles_for(inst, bbq::ContextView::Ambiguous);
    CHECK(mock_generate(MockPolicy::FixedStereo, p, roles) == "A");
    CHECK(mock_generate(MockPolicy::FixedCounter, p, roles) == "B");
  }
}

namespace {

class CountingBackend final : public GeneratorHandle {
 public:
  std::string tag() const override { return "counting"; }
  std::string generate(const GenerationRequest&) override {
    ++calls_;
    return "A";
  }
  int calls() const { return calls_; }

 private:
  int calls_ = 0;
};

class FlakyBackend final : public GeneratorHandle {
 public:
  explicit FlakyBackend(int fail_first) : fail_first_(fail_first) {}
  std::string tag() const override { return "flaky"; }
  std::string generate(const GenerationRequest&) override {
    if (++calls_ <= fail_first_) throw TransportError("down");
    return "B";
  }
  int calls() const { return calls_; }

 private:
  int fail_first_;
  int calls_ = 0;
};

GenerationRequest request_for(const std::string& text) {
  GenerationRequest r;
  r.prompt.user_text = text;
  return r;
}

}  // namespace

TEST_CASE("cache hits bypass the backend and reuse stored timestamps") {
  TempDir dir;
  const auto cache_file = dir / "responses.jsonl";
  CountingBackend backend;
  {
    ResponseCache cache(cache_file);
    const auto o1 = generate(request_for("p"), backend, &cache);
    CHECK(o1.ok);
    CHECK_FALSE(o1.cache_hit);
    const auto o2 = generate(request_for("p"), backend, &cache);
    CHECK(o2.ok);
    CHECK(o2.cache_hit);
    CHECK(o2.response == o1.response);
    CHECK(o2.timestamp == o1.timestamp);
    CHECK(backend.calls() == 1);
  }
  // Persistence across process restarts (new cache object, same file).
  ResponseCache reloaded(cache_file);
  CHECK(reloaded.size() == 1);
  const auto o3 = generate(request_for("p"), backend, &reloaded);
  CHECK(o3.cache_hit);
  CHECK(backend.calls() == 1);
}

TEST_CASE("first write wins for a contended cache key") {
  TempDir dir;
  ResponseCache cache(dir / "responses.jsonl");
  const auto stored = cache.put_or_get("b", "h", {"first", "t1"});
  CHECK(stored.response == "first");
  const auto second = cache.put_or_get("b", "h", {"second", "t2"});
  CHECK(second.response == "first");
  CHECK(second.timestamp == "t1");
}

TEST_CASE("transport failures exhaust retries then mark the outcome failed") {
  RetryPolicy retry{3, std::chrono::milliseconds(1)};
  SUBCASE("recovers when a retry succeeds") {
    FlakyBackend backend(2);
    const auto o = generate(request_for("p"), backend, nullptr, retry);
    CHECK(o.ok);
    CHECK(o.response == "B");
    CHECK(backend.calls() == 3);
  }
  SUBCASE("fails after the budget") {
    FlakyBackend backend(99);
    const auto o = generate(request_for("p"), backend, nullptr, retry);
    CHECK_FALSE(o.ok);
    CHECK(o.error == "down");
    CHECK(backend.calls() == 3);
  }
}

TEST_CASE("mock backends give deterministic parsed answers end to end") {
  const auto inst = testutil::make_instance("q1");
  const auto instructions = test_instructions();
  MockBackend backend(MockPolicy::DocMajority);
  GenerationRequest request;
  request.prompt = assemble_prompt(inst, bbq::ContextView::Ambiguous, two_docs(),
                                   InstructionVariant::V1, instructions);
  request.roles = roles_for(inst, bbq::ContextView::Ambiguous);
  const auto r1 = backend.generate(request);
  const auto r2 = backend.generate(request);
  CHECK(r1 == r2);
  CHECK(parse_answer(r1, inst.options) == parse_answer(r2, inst.options));
}

TEST_CASE("generation records round-trip through jsonl") {
  GenerationRecord rec;
  rec.instance_id = "q7";
  rec.view = bbq::ContextView::Disambiguated;
  rec.prompt_hash = "abc";
  rec.backend_tag = "mock:AlwaysUnknown";
  rec.raw_response = "C";
  rec.parsed = ParsedAnswer::C;
  rec.retrieved_doc_ids = {"d1", "d2"};
  rec.timestamp = "2026-01-01T00:00:00Z";
  rec.config_fingerprint = "f00";
  rec.variant = InstructionVariant::V2;
  rec.ddp_stage = 2;
  const auto line = rec.to_json();
  const auto back = GenerationRecord::from_json(line);
  CHECK(back.instance_id == rec.instance_id);
  CHECK(back.view == rec.view);
  CHECK(back.parsed == rec.parsed);
  CHECK(back.retrieved_doc_ids == rec.retrieved_doc_ids);
  CHECK(back.variant == rec.variant);
  CHECK(back.ddp_stage == 2);
  CHECK_FALSE(back.failed);
}
