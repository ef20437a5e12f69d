#include "ragbias/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ragbias/error.hpp"
#include "ragbias/hash.hpp"
#include "ragbias/io.hpp"
#include "ragbias/rng.hpp"
#include "ragbias/text.hpp"

namespace ragbias::corpus {

using nlohmann::json;

std::string_view to_string(Polarity p) {
  return p == Polarity::Stereotype ? "stereotype" : "anti_stereotype";
}

Polarity parse_polarity(std::string_view s) {
  std::string v = ascii_lower(trim(s));
  if (v == "stereotype" || v == "stereo") return Polarity::Stereotype;
  if (v == "anti_stereotype" || v == "anti-stereotype" || v == "anti" ||
      v == "antistereotype") {
    return Polarity::AntiStereotype;
  }
  throw InputError("unknown polarity: " + std::string(s));
}

BiasCategory BiasCategory::parse(std::string_view s) {
  std::string v = ascii_lower(trim(s));
  if (v.empty()) throw InputError("empty bias category");
  return BiasCategory(std::move(v));
}

BiasCategory BiasCategory::other(std::string_view name) {
  return BiasCategory::parse(name);
}

bool BiasCategory::is_named() const {
  return name_ == "gender" || name_ == "age" || name_ == "race" ||
         name_ == "religion";
}

Language Language::parse(std::string_view code) {
  std::string v = ascii_lower(trim(code));
  if (v.empty()) throw InputError("empty language code");
  return Language(std::move(v));
}

SourceFormat parse_source_format(std::string_view s) {
  std::string v = ascii_lower(trim(s));
  if (v == "jsonl") return SourceFormat::Jsonl;
  if (v == "csv") return SourceFormat::Csv;
  if (v == "tsv") return SourceFormat::Tsv;
  throw ConfigError("unknown source format: " + std::string(s));
}

std::string_view to_string(SourceFormat f) {
  switch (f) {
    case SourceFormat::Jsonl: return "jsonl";
    case SourceFormat::Csv: return "csv";
    case SourceFormat::Tsv: return "tsv";
  }
  return "jsonl";
}

AdapterConfig AdapterConfig::defaults() {
  AdapterConfig a;
  a.columns = {{"text", "text"},
               {"polarity", "polarity"},
               {"category", "category"},
               {"language", "language"}};
  return a;
}

AdapterConfig AdapterConfig::load(const std::filesystem::path& path) {
  json j = json::parse(read_file(path));
  if (!j.contains("version") || !j["version"].is_number_integer()) {
    throw ConfigError("adapter config missing integer 'version': " +
                      path.string());
  }
  AdapterConfig a = defaults();
  if (j.contains("columns")) {
    for (auto& [k, v] : j["columns"].items()) {
      a.columns[k] = v.get<std::string>();
    }
  }
  if (j.contains("polarity_values")) {
    for (auto& [k, v] : j["polarity_values"].items()) {
      a.polarity_values[k] = v.get<std::vector<std::string>>();
    }
  }
  return a;
}

std::string AdapterConfig::map_column(const std::string& canonical) const {
  auto it = columns.find(canonical);
  return it == columns.end() ? canonical : it->second;
}

std::optional<Polarity> AdapterConfig::map_polarity(std::string_view raw) const {
  std::string v = ascii_lower(trim(raw));
  for (const auto& [canonical, synonyms] : polarity_values) {
    for (const auto& syn : synonyms) {
      if (ascii_lower(syn) == v) return parse_polarity(canonical);
    }
  }
  try {
    return parse_polarity(v);
  } catch (const InputError&) {
    return std::nullopt;
  }
}

namespace {

struct RawRow {
  std::optional<std::string> text, polarity, category, language;
};

std::optional<Document> row_to_document(const RawRow& row, std::size_t row_no,
                                        std::string_view source_tag,
                                        const DocumentDefaults& defaults,
                                        const AdapterConfig& adapter,
                                        std::string& reason) {
  Document d;
  if (!row.text.has_value() || trim(*row.text).empty()) {
    reason = "missing text";
    return std::nullopt;
  }
  d.text = trim(*row.text);

  if (row.polarity.has_value() && !trim(*row.polarity).empty()) {
    auto p = adapter.map_polarity(*row.polarity);
    if (!p) {
      reason = "unrecognized polarity value: " + *row.polarity;
      return std::nullopt;
    }
    d.polarity = *p;
  } else if (defaults.polarity) {
    d.polarity = *defaults.polarity;
  } else {
    reason = "missing polarity";
    return std::nullopt;
  }

  if (row.category.has_value() && !trim(*row.category).empty()) {
    d.category = BiasCategory::parse(*row.category);
  } else if (defaults.category) {
    d.category = *defaults.category;
  } else {
    reason = "missing bias category";
    return std::nullopt;
  }

  if (row.language.has_value() && !trim(*row.language).empty()) {
    d.language = Language::parse(*row.language);
  } else if (defaults.language) {
    d.language = *defaults.language;
  } else {
    d.language = Language::en();
  }

  d.source = std::string(source_tag);
  d.id = std::string(source_tag) + ":" + std::to_string(row_no);
  return d;
}

std::optional<std::string> json_field(const json& j, const std::string& key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (j[key].is_string()) return j[key].get<std::string>();
  return j[key].dump();
}

}  // namespace

LoadResult load_bias_dataset(const std::filesystem::path& path,
                             SourceFormat format, std::string_view source_tag,
                             const DocumentDefaults& defaults,
                             const AdapterConfig& adapter) {
  const std::string content = read_file(path);
  LoadResult result;

  auto add_row = [&](const RawRow& row, std::size_t row_no) {
    std::string reason;
    auto doc = row_to_document(row, row_no, source_tag, defaults, adapter, reason);
    if (doc) {
      result.documents.push_back(std::move(*doc));
    } else {
      result.rejects.push_back({path.string(), row_no, reason});
    }
  };

  if (format == SourceFormat::Jsonl) {
    const auto lines = split_lines(content);
    std::size_t row_no = 0;
    for (const auto& line : lines) {
      if (trim(line).empty()) continue;
      ++row_no;
      ++result.raw_rows;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) {
        result.rejects.push_back({path.string(), row_no, "malformed json"});
        continue;
      }
      RawRow row;
      row.text = json_field(j, adapter.map_column("text"));
      row.polarity = json_field(j, adapter.map_column("polarity"));
      row.category = json_field(j, adapter.map_column("category"));
      row.language = json_field(j, adapter.map_column("language"));
      add_row(row, row_no);
    }
  } else {
    const char delim = format == SourceFormat::Csv ? ',' : '\t';
    const auto rows = parse_csv(content, delim);
    if (rows.empty()) return result;
    const auto& header = rows[0];
    auto col_index = [&](const std::string& canonical) -> std::optional<std::size_t> {
      const std::string want = adapter.map_column(canonical);
      for (std::size_t i = 0; i < header.size(); ++i) {
        if (trim(header[i]) == want) return i;
      }
      return std::nullopt;
    };
    const auto ti = col_index("text");
    const auto pi = col_index("polarity");
    const auto ci = col_index("category");
    const auto li = col_index("language");
    for (std::size_t r = 1; r < rows.size(); ++r) {
      ++result.raw_rows;
      const auto& fields = rows[r];
      auto get = [&](std::optional<std::size_t> idx) -> std::optional<std::string> {
        if (!idx || *idx >= fields.size()) return std::nullopt;
        return fields[*idx];
      };
      RawRow row{get(ti), get(pi), get(ci), get(li)};
      add_row(row, r);
    }
  }
  return result;
}

void check_unique_ids(const std::vector<Document>& docs) {
  std::set<std::string_view> seen;
  for (const auto& d : docs) {
    if (!seen.insert(d.id).second) {
      throw InvariantError("duplicate document id: " + d.id);
    }
  }
}

std::vector<StoplistViolation> check_name_stoplist(
    const std::vector<Document>& docs, const std::vector<std::string>& names) {
  std::vector<StoplistViolation> out;
  std::vector<std::string> lowered;
  lowered.reserve(names.size());
  for (const auto& n : names) lowered.push_back(ascii_lower(trim(n)));
  for (const auto& d : docs) {
    const auto tokens = tokenize(d.text, Tokenizer::English);
    for (const auto& name : lowered) {
      if (name.empty()) continue;
      if (std::find(tokens.begin(), tokens.end(), name) != tokens.end()) {
        out.push_back({d.id, name});
      }
    }
  }
  return out;
}

std::string_view to_string(PolarityFilter f) {
  switch (f) {
    case PolarityFilter::Full: return "full";
    case PolarityFilter::StereoOnly: return "stereo_only";
    case PolarityFilter::AntiOnly: return "anti_only";
    case PolarityFilter::Mixture: return "mixture";
  }
  return "full";
}

PolarityFilter parse_polarity_filter(std::string_view s) {
  std::string v = ascii_lower(trim(s));
  if (v == "full") return PolarityFilter::Full;
  if (v == "stereo_only" || v == "stereo") return PolarityFilter::StereoOnly;
  if (v == "anti_only" || v == "anti") return PolarityFilter::AntiOnly;
  if (v == "mixture") return PolarityFilter::Mixture;
  throw ConfigError("unknown polarity filter: " + std::string(s));
}

void CollectionSpec::validate() const {
  if (categories.empty()) throw ConfigError("collection spec: empty categories");
  if (languages.empty()) throw ConfigError("collection spec: empty languages");
  const bool is_mixture = filter == PolarityFilter::Mixture;
  if (is_mixture != mixture_stereo_fraction.has_value()) {
    throw ConfigError(
        "collection spec: mixture_stereo_fraction present iff filter=mixture");
  }
  if (is_mixture &&
      (*mixture_stereo_fraction < 0.0 || *mixture_stereo_fraction > 1.0)) {
    throw ConfigError("collection spec: mixture_stereo_fraction outside [0,1]");
  }
}

std::string CollectionSpec::canonical() const {
  std::ostringstream ss;
  ss << "filter=" << to_string(filter);
  if (mixture_stereo_fraction) {
    ss << ";fraction=" << format_double(*mixture_stereo_fraction, 9);
  }
  ss << ";categories=";
  for (const auto& c : categories) ss << c.name() << ",";
  ss << ";languages=";
  for (const auto& l : languages) ss << l.code() << ",";
  ss << ";seed=" << seed;
  return ss.str();
}

const Document* Collection::find(std::string_view doc_id) const {
  auto it = by_id_.find(doc_id);
  if (it == by_id_.end()) return nullptr;
  return &documents_[it->second];
}

Collection build_collection(const std::vector<Document>& docs,
                            const CollectionSpec& spec) {
  spec.validate();
  if (docs.empty()) throw InputError("build_collection: no input documents");

  std::vector<const Document*> pool;
  pool.reserve(docs.size());
  for (const auto& d : docs) {
    if (!spec.categories.contains(d.category)) continue;
    if (!spec.languages.contains(d.language)) continue;
    pool.push_back(&d);
  }
  if (pool.empty()) {
    throw InputError(
        "build_collection: category/language filter yields zero documents (" +
        spec.canonical() + ")");
  }

  std::vector<const Document*> picked;
  switch (spec.filter) {
    case PolarityFilter::Full:
      picked = pool;
      break;
    case PolarityFilter::StereoOnly:
      for (auto* d : pool)
        if (d->polarity == Polarity::Stereotype) picked.push_back(d);
      if (picked.empty()) {
        throw InputError("build_collection: stereo_only filter yields zero documents");
      }
      break;
    case PolarityFilter::AntiOnly:
      for (auto* d : pool)
        if (d->polarity == Polarity::AntiStereotype) picked.push_back(d);
      if (picked.empty()) {
        throw InputError("build_collection: anti_only filter yields zero documents");
      }
      break;
    case PolarityFilter::Mixture: {
      std::vector<const Document*> anti;
      std::vector<const Document*> stereo;
      for (auto* d : pool) {
        (d->polarity == Polarity::AntiStereotype ? anti : stereo).push_back(d);
      }
      const double f = *spec.mixture_stereo_fraction;
      const auto n_anti = static_cast<double>(anti.size());
      const auto max_fraction =
          static_cast<double>(stereo.size()) /
          static_cast<double>(stereo.size() + anti.size());

      std::size_t want_stereo = 0;
      if (f >= 1.0) {
        // Reachable only when the whole stereo pool keeps the realized
        // fraction within 1/n of 1, i.e. at most one anti document.
        if (anti.size() > 1) {
          throw InputError(
              "build_collection: mixture fraction 1.0 unreachable; max "
              "achievable fraction is " +
              format_double(max_fraction, 6));
        }
        want_stereo = stereo.size();
        if (want_stereo == 0) {
          throw InputError("build_collection: mixture filter yields zero documents");
        }
      } else if (f <= 0.0) {
        want_stereo = 0;
        if (anti.empty()) {
          throw InputError("build_collection: mixture filter yields zero documents");
        }
      } else {
        want_stereo = static_cast<std::size_t>(
            std::llround(f * n_anti / (1.0 - f)));
        if (want_stereo > stereo.size()) {
          const double realized_at_max = max_fraction;
          if (std::abs(realized_at_max - f) >
              1.0 / static_cast<double>(anti.size() + stereo.size())) {
            throw InputError(
                "build_collection: mixture fraction " + format_double(f, 4) +
                " unreachable; max achievable fraction is " +
                format_double(max_fraction, 6));
          }
          want_stereo = stereo.size();
        }
        if (anti.empty() && want_stereo == 0) {
          throw InputError("build_collection: mixture filter yields zero documents");
        }
      }

      // Deterministic sample: stable order by id first, then seeded
      // partial Fisher-Yates without replacement.
      std::sort(stereo.begin(), stereo.end(),
                [](const Document* a, const Document* b) { return a->id < b->id; });
      std::mt19937_64 rng(spec.seed);
      for (std::size_t i = 0; i < want_stereo; ++i) {
        const std::size_t j =
            i + static_cast<std::size_t>(uniform_below(rng, stereo.size() - i));
        std::swap(stereo[i], stereo[j]);
      }
      picked = anti;
      picked.insert(picked.end(), stereo.begin(), stereo.begin() + static_cast<std::ptrdiff_t>(want_stereo));
      break;
    }
  }

  std::sort(picked.begin(), picked.end(),
            [](const Document* a, const Document* b) { return a->id < b->id; });

  Collection c;
  c.spec_ = spec;
  c.documents_.reserve(picked.size());
  std::string id_blob;
  for (const auto* d : picked) {
    c.by_id_.emplace(d->id, c.documents_.size());
    c.documents_.push_back(*d);
    id_blob += d->id;
    id_blob.push_back('\n');
  }
  if (c.by_id_.size() != c.documents_.size()) {
    throw InvariantError("build_collection: duplicate ids in input");
  }
  c.fingerprint_ = sha256_hex(id_blob + "\x1f" + spec.canonical());
  return c;
}

namespace {

CollectionStats stats_over(const std::vector<Document>& docs,
                           const std::set<BiasCategory>& categories,
                           const std::set<Language>& languages) {
  std::map<std::tuple<BiasCategory, Polarity, Language>, std::size_t> counts;
  for (const auto& cat : categories) {
    for (Polarity p : {Polarity::Stereotype, Polarity::AntiStereotype}) {
      for (const auto& lang : languages) {
        counts[{cat, p, lang}] = 0;
      }
    }
  }
  for (const auto& d : docs) {
    ++counts[{d.category, d.polarity, d.language}];
  }
  CollectionStats stats;
  for (const auto& [key, count] : counts) {
    stats.rows.push_back(
        {std::get<0>(key), std::get<1>(key), std::get<2>(key), count});
    stats.total += count;
  }
  return stats;
}

}  // namespace

CollectionStats collection_stats(const Collection& c) {
  return stats_over(c.documents(), c.spec().categories, c.spec().languages);
}

CollectionStats tally_documents(const std::vector<Document>& docs) {
  std::set<BiasCategory> cats;
  std::set<Language> langs;
  for (const auto& d : docs) {
    cats.insert(d.category);
    langs.insert(d.language);
  }
  if (docs.empty()) return {};
  return stats_over(docs, cats, langs);
}

std::string CollectionStats::to_csv() const {
  std::string out = "category,polarity,language,count\n";
  for (const auto& r : rows) {
    out += csv_row({r.category.name(), std::string(to_string(r.polarity)),
                    r.language.code(), std::to_string(r.count)});
  }
  out += csv_row({"total", "", "", std::to_string(total)});
  return out;
}

std::string rejects_to_jsonl(const std::vector<RowReject>& rejects) {
  std::string out;
  for (const auto& r : rejects) {
    json j{{"source", r.source}, {"row", r.row}, {"reason", r.reason}};
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace ragbias::corpus
