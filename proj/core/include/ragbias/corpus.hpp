#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace ragbias::corpus {

enum class Polarity { Stereotype, AntiStereotype };

std::string_view to_string(Polarity p);
Polarity parse_polarity(std::string_view s);

// Open-ended category: the four studied kinds plus other(<name>) so
// cross-category (intersectional) question sets load through the same path.
class BiasCategory {
 public:
  BiasCategory() = default;
  static BiasCategory parse(std::string_view s);
  static BiasCategory gender() { return BiasCategory("gender"); }
  static BiasCategory age() { return BiasCategory("age"); }
  static BiasCategory race() { return BiasCategory("race"); }
  static BiasCategory religion() { return BiasCategory("religion"); }
  static BiasCategory other(std::string_view name);

  const std::string& name() const { return name_; }
  bool is_named() const;  // one of the four canonical categories
  auto operator<=>(const BiasCategory&) const = default;

 private:
  explicit BiasCategory(std::string name) : name_(std::move(name)) {}
  std::string name_;
};

class Language {
 public:
  Language() = default;
  static Language parse(std::string_view code);
  static Language en() { return Language("en"); }
  static Language ja() { return Language("ja"); }
  static Language zh() { return Language("zh"); }

  const std::string& code() const { return code_; }
  auto operator<=>(const Language&) const = default;

 private:
  explicit Language(std::string code) : code_(std::move(code)) {}
  std::string code_;
};

// One corpus sentence. ids are unique within a loaded corpus; text is
// non-empty after trimming.
struct Document {
  std::string id;
  std::string text;
  BiasCategory category;
  Polarity polarity = Polarity::Stereotype;
  std::string source;
  Language language;
};

enum class SourceFormat { Jsonl, Csv, Tsv };
SourceFormat parse_source_format(std::string_view s);
std::string_view to_string(SourceFormat f);

// Column/value remapping for heterogeneous source datasets, loaded from a
// versioned JSON file. Sources sharing the sentence+polarity shape only
// need a mapping, not a bespoke parser.
struct AdapterConfig {
  std::map<std::string, std::string> columns;  // canonical field -> source column
  // polarity value synonyms, canonical -> accepted spellings
  std::map<std::string, std::vector<std::string>> polarity_values;

  static AdapterConfig load(const std::filesystem::path& path);
  static AdapterConfig defaults();
  std::string map_column(const std::string& canonical) const;
  std::optional<Polarity> map_polarity(std::string_view raw) const;
};

struct DocumentDefaults {
  std::optional<BiasCategory> category;
  std::optional<Polarity> polarity;
  std::optional<Language> language;
};

struct RowReject {
  std::string source;
  std::size_t row = 0;  // 1-based data row number
  std::string reason;
};

struct LoadResult {
  std::vector<Document> documents;
  std::vector<RowReject> rejects;
  std::size_t raw_rows = 0;  // rows seen before any rejection
};

// Parses one source file into Documents with ids "<source_tag>:<row>".
// Rows missing text or polarity (with no default) become rejects; the
// load continues. Unreadable files throw InputError.
LoadResult load_bias_dataset(const std::filesystem::path& path,
                             SourceFormat format, std::string_view source_tag,
                             const DocumentDefaults& defaults,
                             const AdapterConfig& adapter = AdapterConfig::defaults());

// Throws InvariantError on duplicate ids across the pooled sources.
void check_unique_ids(const std::vector<Document>& docs);

struct StoplistViolation {
  std::string doc_id;
  std::string term;
};

// Optional validation that a user-supplied stop-list of proper names does
// not occur in the corpus (whole-word, case-insensitive ASCII).
std::vector<StoplistViolation> check_name_stoplist(
    const std::vector<Document>& docs, const std::vector<std::string>& names);

enum class PolarityFilter { Full, StereoOnly, AntiOnly, Mixture };
std::string_view to_string(PolarityFilter f);
PolarityFilter parse_polarity_filter(std::string_view s);

struct CollectionSpec {
  PolarityFilter filter = PolarityFilter::Full;
  std::optional<double> mixture_stereo_fraction;  // present iff Mixture
  std::set<BiasCategory> categories;              // non-empty
  std::set<Language> languages;                   // non-empty
  std::uint64_t seed = 0;

  void validate() const;            // throws ConfigError
  std::string canonical() const;    // stable serialization for fingerprints
};

// Immutable filtered/mixed multiset of documents, ordered by id.
class Collection {
 public:
  const std::vector<Document>& documents() const { return documents_; }
  const CollectionSpec& spec() const { return spec_; }
  const std::string& fingerprint() const { return fingerprint_; }
  std::size_t size() const { return documents_.size(); }

  // nullptr when the id is not in the collection.
  const Document* find(std::string_view doc_id) const;

 private:
  friend Collection build_collection(const std::vector<Document>&,
                                     const CollectionSpec&);
  std::vector<Document> documents_;
  CollectionSpec spec_;
  std::string fingerprint_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
};

// Applies the spec's filters. Mixture keeps the whole anti pool and samples
// stereo documents (seeded, without replacement) so the realized stereo
// fraction lands within 1/|collection| of the target. Fatal when a filter
// empties the pool or the fraction is unreachable.
Collection build_collection(const std::vector<Document>& docs,
                            const CollectionSpec& spec);

struct StatsRow {
  BiasCategory category;
  Polarity polarity = Polarity::Stereotype;
  Language language;
  std::size_t count = 0;
};

struct CollectionStats {
  std::vector<StatsRow> rows;  // full category x polarity x language cross
  std::size_t total = 0;
  std::string to_csv() const;
};

// Counts over the collection, including zero rows for every combination the
// spec's filters admit.
CollectionStats collection_stats(const Collection& c);

// Plain tally over loaded documents (ingest-time view, no spec cross).
CollectionStats tally_documents(const std::vector<Document>& docs);

std::string rejects_to_jsonl(const std::vector<RowReject>& rejects);

}  // namespace ragbias::corpus
