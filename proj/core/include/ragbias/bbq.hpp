#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ragbias/corpus.hpp"

namespace ragbias::bbq {

enum class OptionLetter { A, B, C };
char to_char(OptionLetter l);
OptionLetter parse_letter(std::string_view s);

enum class OptionRole { StereoAligned, CounterAligned, Unknown };
std::string_view to_string(OptionRole r);
OptionRole parse_role(std::string_view s);

// Which group the disambiguated evidence favors.
enum class ContextPolarity { Stereotyped, CounterStereotyped };
std::string_view to_string(ContextPolarity p);
ContextPolarity parse_context_polarity(std::string_view s);

enum class ContextView { Ambiguous, Disambiguated };
std::string_view to_string(ContextView v);

struct Option {
  OptionLetter letter = OptionLetter::A;
  std::string text;
  OptionRole role = OptionRole::Unknown;
};

// One QA instance: a question, both contexts, and three role-labelled
// options. Exactly one option carries each role; the ambiguous answer is
// always the unknown option and the disambiguated answer follows
// context_polarity.
struct BbqInstance {
  std::string id;
  corpus::BiasCategory category;
  corpus::Language language;
  std::string question;
  std::string ambiguous_context;
  std::string disambiguated_context;
  std::array<Option, 3> options;  // letters A, B, C in order
  ContextPolarity context_polarity = ContextPolarity::Stereotyped;

  const std::string& context(ContextView v) const {
    return v == ContextView::Ambiguous ? ambiguous_context
                                       : disambiguated_context;
  }
  OptionLetter letter_with_role(OptionRole r) const;
  OptionLetter correct_letter(ContextView v) const;
};

struct InstanceReject {
  std::string id;
  std::size_t line = 0;
  std::string reason;
};

struct BbqLoadResult {
  std::vector<BbqInstance> instances;
  std::vector<InstanceReject> rejects;
};

// Loads the JSONL schema {id, category, language, question,
// ambiguous_context, disambiguated_context, context_polarity,
// options:[{letter,text,role} x3]}. Invariant violations become rejects;
// more than 5% rejects aborts as a likely schema mismatch.
BbqLoadResult load_bbq(const std::filesystem::path& path);

// One evaluation item per (instance, view).
struct EvalItem {
  std::size_t instance_index = 0;
  ContextView view = ContextView::Ambiguous;
};

struct SplitViews {
  std::vector<EvalItem> ambiguous;
  std::vector<EvalItem> disambiguated;
  std::size_t n_stereotyped = 0;          // disambiguated, stereotyped contexts
  std::size_t n_counter_stereotyped = 0;
};

SplitViews pair_split(const std::vector<BbqInstance>& instances);

std::string rejects_to_jsonl(const std::vector<InstanceReject>& rejects);

}  // namespace ragbias::bbq
