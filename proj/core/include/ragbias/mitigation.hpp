#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ragbias/bbq.hpp"
#include "ragbias/corpus.hpp"
#include "ragbias/generation.hpp"

namespace ragbias::mitigation {

enum class MitigationKind { None, Icl, Summarizer, Ddp };
std::string_view to_string(MitigationKind k);
MitigationKind parse_mitigation_kind(std::string_view s);

struct IclExample {
  std::string block_text;  // question + options, without the answer line
  bbq::OptionLetter answer = bbq::OptionLetter::C;
};

// Ordered examples from a JSON asset; the shipped default covers ambiguous
// and disambiguated scenarios with two unknown answers.
std::vector<IclExample> load_icl_examples(const std::filesystem::path& path);

struct DdpRule {
  std::string match;        // whole word, case-sensitive
  std::string placeholder;
};

struct DdpRules {
  std::map<std::string, std::vector<DdpRule>> by_category;
  // Stage-2 augmentation; "{initial}" expands to the first-stage letter.
  std::string stage2_instruction;
  static DdpRules load(const std::filesystem::path& path);
  const std::vector<DdpRule>& rules_for(const corpus::BiasCategory& c) const;
};

struct MitigationPlan {
  MitigationKind kind = MitigationKind::None;
  std::vector<IclExample> icl_examples;
  generation::GeneratorHandle* summarizer_backend = nullptr;
  std::string summarizer_prompt;  // template with {documents}
  DdpRules ddp_rules;
  generation::GeneratorHandle* ddp_backend = nullptr;

  void validate() const;  // icl needs >=1 example, summarizer a backend, ...
};

// Prepends the plan's few-shot examples and re-renders. Applying twice is
// an error, not a duplicate block.
generation::Prompt apply_icl(generation::Prompt p, const MitigationPlan& plan);

struct SummaryResult {
  // One synthetic document replacing the retrieved block; nullopt when the
  // input was empty (pass-through, no backend call).
  std::optional<corpus::Document> summary;
  std::vector<std::string> source_ids;
  bool fell_back = false;  // backend failed; caller keeps the original docs
};

SummaryResult summarize_docs(const std::vector<corpus::Document>& docs,
                             generation::GeneratorHandle& backend,
                             generation::ResponseCache* cache,
                             const std::string& prompt_template,
                             const generation::RetryPolicy& retry = {});

// One replaced span, recorded as a bijection so the audit trail can
// reconstruct the original text exactly.
struct Substitution {
  std::string field;       // "context", "option_a", ...
  std::size_t offset = 0;  // byte offset of the placeholder in the output
  std::string placeholder;
  std::string original;
};

struct NeutralizedText {
  std::string text;
  std::vector<Substitution> substitutions;
};

NeutralizedText neutralize_text(std::string_view text, std::string_view field,
                                const std::vector<DdpRule>& rules);

// Exact inverse of neutralize_text for one field.
std::string reconstruct_text(std::string_view neutralized,
                             const std::vector<Substitution>& substitutions);

struct DdpOutcome {
  generation::ParsedAnswer final_answer = generation::ParsedAnswer::Invalid;
  generation::GenerationRecord stage1;  // ddp_stage = 1, audit only
  generation::GenerationRecord stage2;  // ddp_stage = 2, the final answer
  std::vector<Substitution> substitutions;
  bool zero_substitutions = false;  // proceed-with-warning case
};

// Two-stage flow: a neutralized prompt yields an initial prediction, then
// the original prompt runs again augmented with that prediction and an
// explicit ignore-stereotypes instruction. Both stages are cached.
DdpOutcome apply_ddp(const bbq::BbqInstance& inst, bbq::ContextView view,
                     const std::vector<generation::PromptDocRef>& docs,
                     generation::InstructionVariant variant,
                     const generation::InstructionSet& instructions,
                     const MitigationPlan& plan,
                     generation::ResponseCache* cache,
                     const generation::RetryPolicy& retry = {});

}  // namespace ragbias::mitigation
