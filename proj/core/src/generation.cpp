#include "ragbias/generation.hpp"

#include <algorithm>
#include <cctype>
#include <ctime>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "ragbias/error.hpp"
#include "ragbias/hash.hpp"
#include "ragbias/io.hpp"
#include "ragbias/text.hpp"

namespace ragbias::generation {

using nlohmann::json;

std::string_view to_string(InstructionVariant v) {
  return v == InstructionVariant::V1 ? "v1" : "v2";
}

InstructionVariant parse_variant(std::string_view s) {
  const std::string v = ascii_lower(trim(s));
  if (v == "v1" || v == "1") return InstructionVariant::V1;
  if (v == "v2" || v == "2") return InstructionVariant::V2;
  throw ConfigError("unknown instruction variant: " + std::string(s));
}

InstructionSet InstructionSet::load(const std::filesystem::path& path) {
  json j = json::parse(read_file(path));
  InstructionSet s;
  s.v1 = j.at("v1").get<std::string>();
  s.v2 = j.at("v2").get<std::string>();
  if (trim(s.v1).empty() || trim(s.v2).empty()) {
    throw ConfigError("instructions file has empty variant text: " + path.string());
  }
  return s;
}

std::string Prompt::hash() const {
  std::string blob;
  blob.reserve(system_text.size() + user_text.size() + 1);
  blob.append(system_text);
  blob.push_back('\x1f');
  blob.append(user_text);
  return sha256_hex(blob);
}

std::string render_user_text(const PromptParts& parts) {
  std::vector<std::string> sections;
  sections.push_back(parts.task_instruction);
  if (parts.guidance) sections.push_back(*parts.guidance);
  for (std::size_t i = 0; i < parts.icl_blocks.size(); ++i) {
    sections.push_back("Example " + std::to_string(i + 1) + "\n" +
                       parts.icl_blocks[i]);
  }
  if (!parts.docs.empty()) {
    std::string block = "Social impressions:";
    for (std::size_t i = 0; i < parts.docs.size(); ++i) {
      block += "\n" + std::to_string(i + 1) + ". " + parts.docs[i].text;
    }
    sections.push_back(std::move(block));
  }
  std::string body = "Context: " + parts.context + "\nQuestion: " +
                     parts.question + "\nA. " + parts.option_texts[0] +
                     "\nB. " + parts.option_texts[1] + "\nC. " +
                     parts.option_texts[2] + "\nAnswer:";
  sections.push_back(std::move(body));

  std::string out;
  for (std::size_t i = 0; i < sections.size(); ++i) {
    if (i) out += "\n\n";
    out += sections[i];
  }
  return out;
}

Prompt assemble_prompt(const bbq::BbqInstance& inst, bbq::ContextView view,
                       const std::vector<PromptDocRef>& docs,
                       InstructionVariant variant,
                       const InstructionSet& instructions) {
  Prompt p;
  p.variant = variant;
  p.parts.task_instruction = instructions.text(variant);
  p.parts.docs = docs;
  p.parts.context = inst.context(view);
  p.parts.question = inst.question;
  for (const auto& opt : inst.options) {
    p.parts.option_texts[static_cast<std::size_t>(opt.letter)] = opt.text;
  }
  p.user_text = render_user_text(p.parts);
  return p;
}

std::string_view to_string(ParsedAnswer a) {
  switch (a) {
    case ParsedAnswer::A: return "A";
    case ParsedAnswer::B: return "B";
    case ParsedAnswer::C: return "C";
    case ParsedAnswer::Invalid: return "invalid";
  }
  return "invalid";
}

ParsedAnswer parse_answer_string(std::string_view s) {
  const std::string v = ascii_lower(trim(s));
  if (v == "a") return ParsedAnswer::A;
  if (v == "b") return ParsedAnswer::B;
  if (v == "c") return ParsedAnswer::C;
  if (v == "invalid") return ParsedAnswer::Invalid;
  throw InputError("unknown parsed answer: " + std::string(s));
}

ParsedAnswer from_letter(bbq::OptionLetter l) {
  switch (l) {
    case bbq::OptionLetter::A: return ParsedAnswer::A;
    case bbq::OptionLetter::B: return ParsedAnswer::B;
    case bbq::OptionLetter::C: return ParsedAnswer::C;
  }
  return ParsedAnswer::Invalid;
}

ParsedAnswer parse_answer(std::string_view raw,
                          const std::array<bbq::Option, 3>& options) {
  // Rule 1: standalone letter tokens.
  bool seen[3] = {false, false, false};
  int distinct = 0;
  ParsedAnswer first = ParsedAnswer::Invalid;
  std::size_t i = 0;
  while (i < raw.size()) {
    if (!std::isalnum(static_cast<unsigned char>(raw[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < raw.size() && std::isalnum(static_cast<unsigned char>(raw[j]))) ++j;
    if (j - i == 1) {
      const char c = static_cast<char>(
          std::tolower(static_cast<unsigned char>(raw[i])));
      if (c >= 'a' && c <= 'c') {
        const int idx = c - 'a';
        if (!seen[idx]) {
          seen[idx] = true;
          ++distinct;
          if (distinct == 1) first = static_cast<ParsedAnswer>(idx);
        }
      }
    }
    i = j;
  }
  if (distinct == 1) return first;
  if (distinct > 1) return ParsedAnswer::Invalid;

  // Rule 2: exactly one option text occurs as a substring.
  const std::string raw_lower = ascii_lower(raw);
  int matches = 0;
  ParsedAnswer matched = ParsedAnswer::Invalid;
  for (const auto& opt : options) {
    const std::string text = ascii_lower(trim(opt.text));
    if (text.empty()) continue;
    if (raw_lower.find(text) != std::string::npos) {
      ++matches;
      matched = from_letter(opt.letter);
    }
  }
  if (matches == 1) return matched;
  return ParsedAnswer::Invalid;
}

InstanceRoles roles_for(const bbq::BbqInstance& inst, bbq::ContextView view) {
  InstanceRoles r;
  r.stereo_aligned = inst.letter_with_role(bbq::OptionRole::StereoAligned);
  r.counter_aligned = inst.letter_with_role(bbq::OptionRole::CounterAligned);
  r.unknown = inst.letter_with_role(bbq::OptionRole::Unknown);
  r.view = view;
  r.context_polarity = inst.context_polarity;
  return r;
}

std::string_view to_string(MockPolicy p) {
  switch (p) {
    case MockPolicy::AlwaysUnknown: return "AlwaysUnknown";
    case MockPolicy::ContextFollower: return "ContextFollower";
    case MockPolicy::DocMajority: return "DocMajority";
    case MockPolicy::FixedStereo: return "FixedStereo";
    case MockPolicy::FixedCounter: return "FixedCounter";
  }
  return "AlwaysUnknown";
}

MockPolicy parse_mock_policy(std::string_view s) {
  const std::string v = ascii_lower(trim(s));
  if (v == "alwaysunknown") return MockPolicy::AlwaysUnknown;
  if (v == "contextfollower") return MockPolicy::ContextFollower;
  if (v == "docmajority") return MockPolicy::DocMajority;
  if (v == "fixedstereo") return MockPolicy::FixedStereo;
  if (v == "fixedcounter") return MockPolicy::FixedCounter;
  throw ConfigError("unknown mock policy: " + std::string(s));
}

std::string mock_generate(MockPolicy policy, const Prompt& p,
                          const InstanceRoles& roles) {
  auto letter = [](bbq::OptionLetter l) { return std::string(1, bbq::to_char(l)); };
  switch (policy) {
    case MockPolicy::AlwaysUnknown:
      return letter(roles.unknown);
    case MockPolicy::ContextFollower:
      if (roles.view == bbq::ContextView::Ambiguous) return letter(roles.unknown);
      return roles.context_polarity == bbq::ContextPolarity::Stereotyped
                 ? letter(roles.stereo_aligned)
                 : letter(roles.counter_aligned);
    case MockPolicy::DocMajority: {
      int stereo = 0;
      int anti = 0;
      for (const auto& d : p.parts.docs) {
        (d.polarity == corpus::Polarity::Stereotype ? stereo : anti) += 1;
      }
      if (stereo > anti) return letter(roles.stereo_aligned);
      if (anti > stereo) return letter(roles.counter_aligned);
      return letter(roles.unknown);
    }
    case MockPolicy::FixedStereo:
      return letter(roles.stereo_aligned);
    case MockPolicy::FixedCounter:
      return letter(roles.counter_aligned);
  }
  return letter(roles.unknown);
}

std::string MockBackend::tag() const {
  if (!tag_.empty()) return tag_;
  return "mock:" + std::string(to_string(policy_));
}

std::string MockBackend::generate(const GenerationRequest& request) {
  if (!request.roles) {
    throw InvariantError("mock backend requires instance roles in the request");
  }
  return mock_generate(policy_, request.prompt, *request.roles);
}

std::string MockBackend::cache_salt(const GenerationRequest& request) const {
  std::string salt;
  if (request.roles) {
    const auto& r = *request.roles;
    salt += bbq::to_char(r.stereo_aligned);
    salt += bbq::to_char(r.counter_aligned);
    salt += bbq::to_char(r.unknown);
    salt += r.view == bbq::ContextView::Ambiguous ? 'a' : 'd';
    salt += r.context_polarity == bbq::ContextPolarity::Stereotyped ? 's' : 'c';
  }
  for (const auto& d : request.prompt.parts.docs) {
    salt += d.polarity == corpus::Polarity::Stereotype ? 'S' : 'A';
  }
  return salt;
}

std::string EchoSummarizerBackend::generate(const GenerationRequest& request) {
  std::string out;
  for (const auto& d : request.prompt.parts.docs) {
    std::string first = d.text;
    const auto dot = first.find('.');
    if (dot != std::string::npos) first = first.substr(0, dot + 1);
    if (!out.empty()) out += " ";
    out += trim(first);
  }
  return out;
}

ResponseCache::ResponseCache(std::filesystem::path file) : file_(std::move(file)) {
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  if (!std::filesystem::exists(file_)) return;
  for (const auto& line : split_lines(read_file(file_))) {
    if (trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    entries_[{j.at("backend_tag").get<std::string>(),
              j.at("prompt_hash").get<std::string>()}] =
        CacheEntry{j.at("response").get<std::string>(),
                   j.value("timestamp", std::string{})};
  }
}

std::optional<CacheEntry> ResponseCache::get(std::string_view backend_tag,
                                             std::string_view prompt_hash) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find({std::string(backend_tag), std::string(prompt_hash)});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

CacheEntry ResponseCache::put_or_get(std::string_view backend_tag,
                                     std::string_view prompt_hash,
                                     CacheEntry entry) {
  std::lock_guard lock(mutex_);
  auto [it, inserted] = entries_.try_emplace(
      {std::string(backend_tag), std::string(prompt_hash)}, std::move(entry));
  if (inserted) {
    json j{{"backend_tag", std::string(backend_tag)},
           {"prompt_hash", std::string(prompt_hash)},
           {"response", it->second.response},
           {"timestamp", it->second.timestamp}};
    std::ofstream out(file_, std::ios::app | std::ios::binary);
    if (!out) throw InputError("cannot append to response cache: " + file_.string());
    out << j.dump() << "\n";
  }
  return it->second;
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

GenerationOutcome generate(const GenerationRequest& request,
                           GeneratorHandle& backend, ResponseCache* cache,
                           const RetryPolicy& retry) {
  std::string prompt_hash = request.prompt.hash();
  const std::string salt = backend.cache_salt(request);
  if (!salt.empty()) prompt_hash += ":" + sha256_hex(salt);
  if (cache) {
    if (auto hit = cache->get(backend.tag(), prompt_hash)) {
      return {true, true, hit->response, hit->timestamp, {}};
    }
  }
  std::string last_error;
  auto backoff = retry.initial_backoff;
  for (int attempt = 0; attempt < std::max(1, retry.max_attempts); ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    try {
      std::string response = backend.generate(request);
      CacheEntry entry{std::move(response), utc_timestamp()};
      if (cache) entry = cache->put_or_get(backend.tag(), prompt_hash, entry);
      return {true, false, entry.response, entry.timestamp, {}};
    } catch (const TransportError& e) {
      last_error = e.what();
    }
  }
  return {false, false, {}, utc_timestamp(), last_error};
}

std::string GenerationRecord::to_json() const {
  json j{{"instance_id", instance_id},
         {"view", std::string(bbq::to_string(view))},
         {"prompt_hash", prompt_hash},
         {"backend_tag", backend_tag},
         {"raw_response", raw_response},
         {"parsed", std::string(to_string(parsed))},
         {"retrieved_doc_ids", retrieved_doc_ids},
         {"timestamp", timestamp},
         {"config_fingerprint", config_fingerprint},
         {"variant", std::string(to_string(variant))},
         {"ddp_stage", ddp_stage},
         {"failed", failed}};
  return j.dump();
}

GenerationRecord GenerationRecord::from_json(std::string_view line) {
  json j = json::parse(line);
  GenerationRecord r;
  r.instance_id = j.at("instance_id").get<std::string>();
  r.view = j.at("view").get<std::string>() == "ambiguous"
               ? bbq::ContextView::Ambiguous
               : bbq::ContextView::Disambiguated;
  r.prompt_hash = j.at("prompt_hash").get<std::string>();
  r.backend_tag = j.at("backend_tag").get<std::string>();
  r.raw_response = j.at("raw_response").get<std::string>();
  r.parsed = parse_answer_string(j.at("parsed").get<std::string>());
  r.retrieved_doc_ids = j.at("retrieved_doc_ids").get<std::vector<std::string>>();
  r.timestamp = j.value("timestamp", std::string{});
  r.config_fingerprint = j.value("config_fingerprint", std::string{});
  r.variant = parse_variant(j.value("variant", std::string("v1")));
  r.ddp_stage = j.value("ddp_stage", 0);
  r.failed = j.value("failed", false);
  return r;
}

}  // namespace ragbias::generation
