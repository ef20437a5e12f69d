#include "ragbias/mitigation.hpp"

#include <algorithm>
#include <cctype>

#include <nlohmann/json.hpp>

#include "ragbias/error.hpp"
#include "ragbias/hash.hpp"
#include "ragbias/io.hpp"
#include "ragbias/text.hpp"

namespace ragbias::mitigation {

using nlohmann::json;

std::string_view to_string(MitigationKind k) {
  switch (k) {
    case MitigationKind::None: return "none";
    case MitigationKind::Icl: return "icl";
    case MitigationKind::Summarizer: return "summarizer";
    case MitigationKind::Ddp: return "ddp";
  }
  return "none";
}

MitigationKind parse_mitigation_kind(std::string_view s) {
  const std::string v = ascii_lower(trim(s));
  if (v == "none") return MitigationKind::None;
  if (v == "icl") return MitigationKind::Icl;
  if (v == "summarizer") return MitigationKind::Summarizer;
  if (v == "ddp") return MitigationKind::Ddp;
  throw ConfigError("unknown mitigation kind: " + std::string(s));
}

std::vector<IclExample> load_icl_examples(const std::filesystem::path& path) {
  json j = json::parse(read_file(path));
  const auto& arr = j.is_array() ? j : j.at("examples");
  std::vector<IclExample> out;
  for (const auto& e : arr) {
    IclExample ex;
    ex.block_text = e.at("block_text").get<std::string>();
    ex.answer = bbq::parse_letter(e.at("answer_letter").get<std::string>());
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw ConfigError("icl examples file is empty: " + path.string());
  return out;
}

DdpRules DdpRules::load(const std::filesystem::path& path) {
  json j = json::parse(read_file(path));
  DdpRules r;
  r.stage2_instruction = j.value(
      "stage2_instruction",
      std::string("An initial answer with group references masked was: "
                  "{initial}. Now answer the actual question. Ignore "
                  "stereotypes and rely only on the information given."));
  for (auto& [category, rules] : j.at("rules").items()) {
    std::vector<DdpRule> list;
    for (const auto& rule : rules) {
      list.push_back({rule.at("match").get<std::string>(),
                      rule.at("placeholder").get<std::string>()});
    }
    // Longest match first so "woman" never tokenizes as "wo"+"man".
    std::stable_sort(list.begin(), list.end(),
                     [](const DdpRule& a, const DdpRule& b) {
                       return a.match.size() > b.match.size();
                     });
    r.by_category[corpus::BiasCategory::parse(category).name()] = std::move(list);
  }
  if (r.by_category.empty()) {
    throw ConfigError("ddp rules file has no rule sets: " + path.string());
  }
  return r;
}

const std::vector<DdpRule>& DdpRules::rules_for(
    const corpus::BiasCategory& c) const {
  static const std::vector<DdpRule> kEmpty;
  auto it = by_category.find(c.name());
  return it == by_category.end() ? kEmpty : it->second;
}

void MitigationPlan::validate() const {
  switch (kind) {
    case MitigationKind::None:
      break;
    case MitigationKind::Icl:
      if (icl_examples.empty()) {
        throw ConfigError("icl mitigation requires at least one example");
      }
      break;
    case MitigationKind::Summarizer:
      if (!summarizer_backend) {
        throw ConfigError("summarizer mitigation requires a backend");
      }
      if (summarizer_prompt.find("{documents}") == std::string::npos) {
        throw ConfigError("summarizer prompt must contain {documents}");
      }
      break;
    case MitigationKind::Ddp:
      if (ddp_rules.by_category.empty()) {
        throw ConfigError("ddp mitigation requires a non-empty rule set");
      }
      break;
  }
}

generation::Prompt apply_icl(generation::Prompt p, const MitigationPlan& plan) {
  if (plan.kind != MitigationKind::Icl) {
    throw ConfigError("apply_icl called with a non-icl plan");
  }
  if (plan.icl_examples.empty()) {
    throw ConfigError("apply_icl: plan has no examples");
  }
  if (p.icl_applied) {
    throw InvariantError("apply_icl: examples already applied to this prompt");
  }
  for (const auto& ex : plan.icl_examples) {
    p.parts.icl_blocks.push_back(ex.block_text + "\nAnswer: " +
                                 std::string(1, bbq::to_char(ex.answer)));
  }
  p.icl_applied = true;
  p.user_text = generation::render_user_text(p.parts);
  return p;
}

SummaryResult summarize_docs(const std::vector<corpus::Document>& docs,
                             generation::GeneratorHandle& backend,
                             generation::ResponseCache* cache,
                             const std::string& prompt_template,
                             const generation::RetryPolicy& retry) {
  SummaryResult result;
  if (docs.empty()) return result;

  std::string numbered;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (i) numbered += "\n";
    numbered += std::to_string(i + 1) + ". " + docs[i].text;
    result.source_ids.push_back(docs[i].id);
  }
  std::string user = prompt_template;
  const auto pos = user.find("{documents}");
  if (pos == std::string::npos) {
    throw ConfigError("summarizer prompt template lacks {documents}");
  }
  user.replace(pos, std::string("{documents}").size(), numbered);

  generation::GenerationRequest request;
  request.prompt.user_text = std::move(user);
  for (const auto& d : docs) {
    request.prompt.parts.docs.push_back({d.id, d.text, d.polarity});
  }

  const auto outcome = generation::generate(request, backend, cache, retry);
  if (!outcome.ok) {
    result.fell_back = true;
    return result;
  }

  int stereo = 0;
  int anti = 0;
  for (const auto& d : docs) {
    (d.polarity == corpus::Polarity::Stereotype ? stereo : anti) += 1;
  }
  corpus::Document summary;
  std::string id_blob;
  for (const auto& id : result.source_ids) id_blob += id + "\n";
  summary.id = "summary:" + sha256_hex(id_blob).substr(0, 16);
  summary.text = trim(outcome.response);
  if (summary.text.empty()) summary.text = "(empty summary)";
  summary.category = docs.front().category;
  summary.language = docs.front().language;
  summary.source = "summarizer";
  summary.polarity = anti > stereo ? corpus::Polarity::AntiStereotype
                                   : corpus::Polarity::Stereotype;
  result.summary = std::move(summary);
  return result;
}

namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

}  // namespace

NeutralizedText neutralize_text(std::string_view text, std::string_view field,
                                const std::vector<DdpRule>& rules) {
  NeutralizedText out;
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    if (i == 0 || !is_word_char(text[i - 1])) {
      for (const auto& rule : rules) {
        if (rule.match.empty()) continue;
        if (text.size() - i < rule.match.size()) continue;
        if (text.compare(i, rule.match.size(), rule.match) != 0) continue;
        const std::size_t end = i + rule.match.size();
        if (end < text.size() && is_word_char(text[end])) continue;
        out.substitutions.push_back(
            {std::string(field), out.text.size(), rule.placeholder, rule.match});
        out.text += rule.placeholder;
        i = end;
        matched = true;
        break;
      }
    }
    if (!matched) {
      out.text.push_back(text[i]);
      ++i;
    }
  }
  return out;
}

std::string reconstruct_text(std::string_view neutralized,
                             const std::vector<Substitution>& substitutions) {
  std::string out;
  std::size_t i = 0;
  for (const auto& sub : substitutions) {
    if (sub.offset < i || sub.offset > neutralized.size()) {
      throw InvariantError("reconstruct_text: substitution offset out of order");
    }
    out.append(neutralized.substr(i, sub.offset - i));
    if (neutralized.compare(sub.offset, sub.placeholder.size(),
                            sub.placeholder) != 0) {
      throw InvariantError("reconstruct_text: placeholder mismatch at offset " +
                           std::to_string(sub.offset));
    }
    out.append(sub.original);
    i = sub.offset + sub.placeholder.size();
  }
  out.append(neutralized.substr(i));
  return out;
}

DdpOutcome apply_ddp(const bbq::BbqInstance& inst, bbq::ContextView view,
                     const std::vector<generation::PromptDocRef>& docs,
                     generation::InstructionVariant variant,
                     const generation::InstructionSet& instructions,
                     const MitigationPlan& plan,
                     generation::ResponseCache* cache,
                     const generation::RetryPolicy& retry) {
  if (plan.kind != MitigationKind::Ddp) {
    throw ConfigError("apply_ddp called with a non-ddp plan");
  }
  if (!plan.ddp_backend) {
    throw ConfigError("apply_ddp: plan has no backend");
  }
  const auto& rules = plan.ddp_rules.rules_for(inst.category);

  DdpOutcome out;
  bbq::BbqInstance neutral = inst;
  auto run_field = [&](std::string& target, std::string_view field) {
    auto n = neutralize_text(target, field, rules);
    target = std::move(n.text);
    out.substitutions.insert(out.substitutions.end(), n.substitutions.begin(),
                             n.substitutions.end());
  };
  run_field(neutral.ambiguous_context, "ambiguous_context");
  run_field(neutral.disambiguated_context, "disambiguated_context");
  for (auto& opt : neutral.options) {
    run_field(opt.text, std::string("option_") +
                            static_cast<char>('a' + static_cast<int>(opt.letter)));
  }
  out.zero_substitutions = out.substitutions.empty();

  auto make_record = [&](const generation::Prompt& prompt,
                         const generation::GenerationOutcome& outcome,
                         int stage) {
    generation::GenerationRecord rec;
    rec.instance_id = inst.id;
    rec.view = view;
    rec.prompt_hash = prompt.hash();
    rec.backend_tag = plan.ddp_backend->tag();
    rec.raw_response = outcome.response;
    rec.timestamp = outcome.timestamp;
    rec.variant = variant;
    rec.ddp_stage = stage;
    rec.failed = !outcome.ok;
    for (const auto& d : docs) rec.retrieved_doc_ids.push_back(d.doc_id);
    return rec;
  };

  // Stage 1: neutralized prompt, initial prediction.
  generation::GenerationRequest stage1;
  stage1.prompt =
      generation::assemble_prompt(neutral, view, docs, variant, instructions);
  stage1.roles = generation::roles_for(neutral, view);
  const auto outcome1 = generation::generate(stage1, *plan.ddp_backend, cache, retry);
  out.stage1 = make_record(stage1.prompt, outcome1, 1);
  generation::ParsedAnswer initial = generation::ParsedAnswer::Invalid;
  if (outcome1.ok) {
    initial = generation::parse_answer(outcome1.response, neutral.options);
    out.stage1.parsed = initial;
  }

  // Stage 2: original prompt plus the initial prediction and the explicit
  // ignore-stereotypes instruction.
  generation::GenerationRequest stage2;
  stage2.prompt =
      generation::assemble_prompt(inst, view, docs, variant, instructions);
  std::string guidance = plan.ddp_rules.stage2_instruction;
  const std::string initial_text =
      initial == generation::ParsedAnswer::Invalid
          ? std::string("none")
          : std::string(generation::to_string(initial));
  const auto pos = guidance.find("{initial}");
  if (pos != std::string::npos) {
    guidance.replace(pos, std::string("{initial}").size(), initial_text);
  }
  stage2.prompt.parts.guidance = std::move(guidance);
  stage2.prompt.user_text = generation::render_user_text(stage2.prompt.parts);
  stage2.roles = generation::roles_for(inst, view);
  const auto outcome2 = generation::generate(stage2, *plan.ddp_backend, cache, retry);
  out.stage2 = make_record(stage2.prompt, outcome2, 2);
  if (outcome2.ok) {
    out.final_answer = generation::parse_answer(outcome2.response, inst.options);
    out.stage2.parsed = out.final_answer;
  }
  return out;
}

}  // namespace ragbias::mitigation
