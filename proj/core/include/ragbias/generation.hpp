#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ragbias/bbq.hpp"
#include "ragbias/corpus.hpp"

namespace ragbias::generation {

enum class InstructionVariant { V1, V2 };
std::string_view to_string(InstructionVariant v);
InstructionVariant parse_variant(std::string_view s);

// The two task-instruction texts live in an editable JSON asset so
// multilingual runs can swap them without code changes.
struct InstructionSet {
  std::string v1;
  std::string v2;
  static InstructionSet load(const std::filesystem::path& path);
  const std::string& text(InstructionVariant v) const {
    return v == InstructionVariant::V1 ? v1 : v2;
  }
};

struct PromptDocRef {
  std::string doc_id;
  std::string text;
  corpus::Polarity polarity = corpus::Polarity::Stereotype;
};

// Structured prompt pieces kept alongside the rendered text for audit.
struct PromptParts {
  std::string task_instruction;
  std::vector<std::string> icl_blocks;   // rendered few-shot examples
  std::optional<std::string> guidance;   // two-stage prompting augmentation
  std::vector<PromptDocRef> docs;        // the "social impressions" block
  std::string context;
  std::string question;
  std::array<std::string, 3> option_texts;
};

struct Prompt {
  std::string system_text;
  std::string user_text;
  InstructionVariant variant = InstructionVariant::V1;
  PromptParts parts;
  bool icl_applied = false;
  std::string hash() const;
};

// Deterministic render: instruction, guidance, examples, enumerated social
// impressions (omitted when no docs), then context/question/options.
std::string render_user_text(const PromptParts& parts);

Prompt assemble_prompt(const bbq::BbqInstance& inst, bbq::ContextView view,
                       const std::vector<PromptDocRef>& docs,
                       InstructionVariant variant,
                       const InstructionSet& instructions);

enum class ParsedAnswer { A, B, C, Invalid };
std::string_view to_string(ParsedAnswer a);
ParsedAnswer parse_answer_string(std::string_view s);
ParsedAnswer from_letter(bbq::OptionLetter l);

// Extraction ladder: (1) standalone A/B/C token, case-insensitive, invalid
// when two distinct letters appear; (2) unique option-text substring;
// (3) invalid. Total: every string maps to {A,B,C,invalid}.
ParsedAnswer parse_answer(std::string_view raw,
                          const std::array<bbq::Option, 3>& options);

// Per-instance role/letter map handed to mock policies.
struct InstanceRoles {
  bbq::OptionLetter stereo_aligned = bbq::OptionLetter::A;
  bbq::OptionLetter counter_aligned = bbq::OptionLetter::B;
  bbq::OptionLetter unknown = bbq::OptionLetter::C;
  bbq::ContextView view = bbq::ContextView::Ambiguous;
  bbq::ContextPolarity context_polarity = bbq::ContextPolarity::Stereotyped;
};

InstanceRoles roles_for(const bbq::BbqInstance& inst, bbq::ContextView view);

enum class MockPolicy {
  AlwaysUnknown,
  ContextFollower,
  DocMajority,
  FixedStereo,
  FixedCounter
};
std::string_view to_string(MockPolicy p);
MockPolicy parse_mock_policy(std::string_view s);

// Deterministic policy responses. DocMajority answers with the option role
// matching the majority polarity of the rendered docs; ties and empty
// blocks answer unknown. ContextFollower answers the evidence on
// disambiguated views and unknown on ambiguous ones.
std::string mock_generate(MockPolicy policy, const Prompt& p,
                          const InstanceRoles& roles);

struct GenerationRequest {
  Prompt prompt;
  std::optional<InstanceRoles> roles;  // filled by the runner; mocks use it
};

class GeneratorHandle {
 public:
  virtual ~GeneratorHandle() = default;
  virtual std::string tag() const = 0;
  // Raw response text. Throws TransportError on failure.
  virtual std::string generate(const GenerationRequest& request) = 0;
  // Extra cache-key material for backends whose response depends on request
  // metadata beyond the rendered prompt (mock policies read roles and doc
  // polarities). Remote backends see only the prompt text and return "".
  virtual std::string cache_salt(const GenerationRequest&) const { return {}; }
};

class MockBackend final : public GeneratorHandle {
 public:
  explicit MockBackend(MockPolicy policy, std::string tag = {})
      : policy_(policy), tag_(std::move(tag)) {}
  std::string tag() const override;
  std::string generate(const GenerationRequest& request) override;
  std::string cache_salt(const GenerationRequest& request) const override;

 private:
  MockPolicy policy_;
  std::string tag_;
};

// Mock that echoes the first sentence of each rendered doc, used to pin the
// summarizer contract without a live service.
class EchoSummarizerBackend final : public GeneratorHandle {
 public:
  explicit EchoSummarizerBackend(std::string tag = "mock:EchoSummarizer")
      : tag_(std::move(tag)) {}
  std::string tag() const override { return tag_; }
  std::string generate(const GenerationRequest& request) override;

 private:
  std::string tag_;
};

struct CacheEntry {
  std::string response;
  std::string timestamp;
};

// Append-only JSONL response cache keyed by (backend_tag, prompt_hash).
// Timestamps are stored with the entry so warm re-runs reproduce the
// results log byte for byte. Thread-safe; the first write for a key wins
// and later writers receive the stored entry.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path file);
  std::optional<CacheEntry> get(std::string_view backend_tag,
                                std::string_view prompt_hash) const;
  CacheEntry put_or_get(std::string_view backend_tag,
                        std::string_view prompt_hash, CacheEntry entry);
  std::size_t size() const;

 private:
  std::filesystem::path file_;
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, std::string>, CacheEntry> entries_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
};

struct GenerationOutcome {
  bool ok = false;
  bool cache_hit = false;
  std::string response;
  std::string timestamp;
  std::string error;  // set when !ok, after the retry budget is spent
};

// Cache-first generation with bounded retries and exponential backoff.
// Failures do not throw; the caller records the failed trial and moves on.
GenerationOutcome generate(const GenerationRequest& request,
                           GeneratorHandle& backend, ResponseCache* cache,
                           const RetryPolicy& retry = {});

// One prompt -> response -> parsed-answer event.
struct GenerationRecord {
  std::string instance_id;
  bbq::ContextView view = bbq::ContextView::Ambiguous;
  std::string prompt_hash;
  std::string backend_tag;
  std::string raw_response;
  ParsedAnswer parsed = ParsedAnswer::Invalid;
  std::vector<std::string> retrieved_doc_ids;
  std::string timestamp;
  std::string config_fingerprint;
  InstructionVariant variant = InstructionVariant::V1;
  int ddp_stage = 0;  // 0 = final answer, 1 = first-stage audit record
  bool failed = false;

  std::string to_json() const;
  static GenerationRecord from_json(std::string_view line);
};

std::string utc_timestamp();

}  // namespace ragbias::generation
