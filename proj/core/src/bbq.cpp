#include "ragbias/bbq.hpp"

#include <set>

#include <nlohmann/json.hpp>

#include "ragbias/error.hpp"
#include "ragbias/io.hpp"
#include "ragbias/text.hpp"

namespace ragbias::bbq {

using nlohmann::json;

char to_char(OptionLetter l) {
  switch (l) {
    case OptionLetter::A: return 'A';
    case OptionLetter::B: return 'B';
    case OptionLetter::C: return 'C';
  }
  return '?';
}

OptionLetter parse_letter(std::string_view s) {
  const std::string v = ascii_lower(trim(s));
  if (v == "a") return OptionLetter::A;
  if (v == "b") return OptionLetter::B;
  if (v == "c") return OptionLetter::C;
  throw InputError("unknown option letter: " + std::string(s));
}

std::string_view to_string(OptionRole r) {
  switch (r) {
    case OptionRole::StereoAligned: return "stereo_aligned";
    case OptionRole::CounterAligned: return "counter_aligned";
    case OptionRole::Unknown: return "unknown";
  }
  return "unknown";
}

OptionRole parse_role(std::string_view s) {
  const std::string v = ascii_lower(trim(s));
  if (v == "stereo_aligned" || v == "stereo") return OptionRole::StereoAligned;
  if (v == "counter_aligned" || v == "counter") return OptionRole::CounterAligned;
  if (v == "unknown") return OptionRole::Unknown;
  throw InputError("unknown option role: " + std::string(s));
}

std::string_view to_string(ContextPolarity p) {
  return p == ContextPolarity::Stereotyped ? "stereotyped"
                                           : "counter_stereotyped";
}

ContextPolarity parse_context_polarity(std::string_view s) {
  const std::string v = ascii_lower(trim(s));
  if (v == "stereotyped" || v == "stereo") return ContextPolarity::Stereotyped;
  if (v == "counter_stereotyped" || v == "counter-stereotyped" || v == "counter") {
    return ContextPolarity::CounterStereotyped;
  }
  throw InputError("unknown context polarity: " + std::string(s));
}

std::string_view to_string(ContextView v) {
  return v == ContextView::Ambiguous ? "ambiguous" : "disambiguated";
}

OptionLetter BbqInstance::letter_with_role(OptionRole r) const {
  for (const auto& opt : options) {
    if (opt.role == r) return opt.letter;
  }
  throw InvariantError("instance " + id + ": no option with role " +
                       std::string(to_string(r)));
}

OptionLetter BbqInstance::correct_letter(ContextView v) const {
  if (v == ContextView::Ambiguous) return letter_with_role(OptionRole::Unknown);
  return context_polarity == ContextPolarity::Stereotyped
             ? letter_with_role(OptionRole::StereoAligned)
             : letter_with_role(OptionRole::CounterAligned);
}

namespace {

std::string validate_instance(const BbqInstance& inst) {
  if (trim(inst.question).empty()) return "empty question";
  if (trim(inst.ambiguous_context).empty()) return "empty ambiguous_context";
  if (trim(inst.disambiguated_context).empty()) {
    return "empty disambiguated_context";
  }
  int role_counts[3] = {0, 0, 0};
  bool letter_seen[3] = {false, false, false};
  for (const auto& opt : inst.options) {
    if (trim(opt.text).empty()) return "empty option text";
    ++role_counts[static_cast<int>(opt.role)];
    const int li = static_cast<int>(opt.letter);
    if (letter_seen[li]) return "duplicate option letter";
    letter_seen[li] = true;
  }
  if (role_counts[0] != 1 || role_counts[1] != 1 || role_counts[2] != 1) {
    return "option roles are not a bijection onto "
           "{stereo_aligned, counter_aligned, unknown}";
  }
  return {};
}

}  // namespace

BbqLoadResult load_bbq(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  BbqLoadResult result;
  std::set<std::string> seen_ids;
  std::size_t line_no = 0;
  std::size_t data_lines = 0;
  for (const auto& line : split_lines(content)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++data_lines;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      result.rejects.push_back({"", line_no, "malformed json"});
      continue;
    }
    BbqInstance inst;
    std::string reason;
    try {
      inst.id = j.at("id").get<std::string>();
      inst.category = corpus::BiasCategory::parse(j.at("category").get<std::string>());
      inst.language = corpus::Language::parse(
          j.value("language", std::string("en")));
      inst.question = j.at("question").get<std::string>();
      inst.ambiguous_context = j.at("ambiguous_context").get<std::string>();
      inst.disambiguated_context = j.at("disambiguated_context").get<std::string>();
      inst.context_polarity =
          parse_context_polarity(j.at("context_polarity").get<std::string>());
      const auto& opts = j.at("options");
      if (!opts.is_array() || opts.size() != 3) {
        throw InputError("options must be an array of exactly 3");
      }
      for (std::size_t i = 0; i < 3; ++i) {
        Option o;
        o.letter = parse_letter(opts[i].at("letter").get<std::string>());
        o.text = opts[i].at("text").get<std::string>();
        o.role = parse_role(opts[i].at("role").get<std::string>());
        inst.options[i] = std::move(o);
      }
    } catch (const std::exception& e) {
      result.rejects.push_back({j.value("id", std::string{}), line_no, e.what()});
      continue;
    }
    reason = validate_instance(inst);
    if (!reason.empty()) {
      result.rejects.push_back({inst.id, line_no, reason});
      continue;
    }
    if (!seen_ids.insert(inst.id).second) {
      result.rejects.push_back({inst.id, line_no, "duplicate instance id"});
      continue;
    }
    result.instances.push_back(std::move(inst));
  }

  if (data_lines > 0) {
    const double reject_rate =
        static_cast<double>(result.rejects.size()) / static_cast<double>(data_lines);
    if (reject_rate > 0.05) {
      throw InputError("load_bbq: " + std::to_string(result.rejects.size()) +
                       "/" + std::to_string(data_lines) +
                       " instances rejected (>5%), likely schema mismatch: " +
                       path.string());
    }
  }
  return result;
}

SplitViews pair_split(const std::vector<BbqInstance>& instances) {
  SplitViews out;
  out.ambiguous.reserve(instances.size());
  out.disambiguated.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    out.ambiguous.push_back({i, ContextView::Ambiguous});
    out.disambiguated.push_back({i, ContextView::Disambiguated});
    if (instances[i].context_polarity == ContextPolarity::Stereotyped) {
      ++out.n_stereotyped;
    } else {
      ++out.n_counter_stereotyped;
    }
  }
  return out;
}

std::string rejects_to_jsonl(const std::vector<InstanceReject>& rejects) {
  std::string out;
  for (const auto& r : rejects) {
    json j{{"id", r.id}, {"line", r.line}, {"reason", r.reason}};
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace ragbias::bbq
