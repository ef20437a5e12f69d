#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ragbias/analysis.hpp"
#include "ragbias/bbq.hpp"
#include "ragbias/corpus.hpp"
#include "ragbias/generation.hpp"
#include "ragbias/http_backends.hpp"
#include "ragbias/metrics.hpp"
#include "ragbias/mitigation.hpp"
#include "ragbias/retrieval.hpp"

namespace ragbias::runner {

struct SourceConfig {
  std::filesystem::path path;
  corpus::SourceFormat format = corpus::SourceFormat::Jsonl;
  std::string tag;
  corpus::DocumentDefaults defaults;
  std::optional<std::filesystem::path> adapter;
};

struct CollectionConfig {
  std::string name;
  corpus::CollectionSpec spec;
};

enum class RetrieverKind { None, Sparse, Dense };
std::string_view to_string(RetrieverKind k);

struct RetrieverConfig {
  std::string name;
  RetrieverKind kind = RetrieverKind::None;
  retrieval::Bm25Params bm25;
  std::string embedder = "hashing";  // "hashing" or "http"
  std::size_t hashing_dim = 64;
  Tokenizer tokenizer = Tokenizer::English;
};

enum class BackendKind { Mock, Http, EchoSummarizer, PolarityJudge };

struct BackendConfig {
  std::string tag;
  BackendKind kind = BackendKind::Mock;
  generation::MockPolicy policy = generation::MockPolicy::AlwaysUnknown;
  std::string model;  // http backends
};

struct MitigationConfig {
  std::string name;  // defaults to the kind
  mitigation::MitigationKind kind = mitigation::MitigationKind::None;
  std::optional<std::filesystem::path> icl_file;
  std::optional<std::filesystem::path> ddp_rules_file;
  std::optional<std::filesystem::path> summarizer_prompt_file;
  std::string summarizer_backend_tag;
};

struct AnalysisConfig {
  bool enabled = false;
  std::string judge_backend_tag;
  std::optional<std::filesystem::path> judge_prompt_file;
  bool judge_include_query = false;
};

struct RunConfig {
  int version = 1;
  std::string run_id;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::filesystem::path config_dir;  // directory of the config file

  std::vector<SourceConfig> sources;
  std::vector<CollectionConfig> collections;
  std::optional<std::filesystem::path> name_stoplist;

  std::vector<RetrieverConfig> retrievers;
  std::vector<std::size_t> k_values;  // defaults to {10}
  bool query_includes_context = true;
  std::size_t embed_chunk_size = 64;
  std::size_t embed_max_in_flight = 1;
  std::string http_embedder_model;

  std::vector<std::filesystem::path> benchmark_paths;
  std::set<corpus::BiasCategory> benchmark_categories;  // empty = all

  std::vector<BackendConfig> backends;
  std::vector<generation::InstructionVariant> variants;  // defaults {v1, v2}
  std::filesystem::path instructions_file;
  int max_tokens = 16;
  int max_retries = 3;
  std::size_t concurrency = 1;

  std::vector<MitigationConfig> mitigations;  // defaults to {none}
  metrics::BootstrapSettings bootstrap;
  AnalysisConfig analysis;
  std::vector<std::string> macro_backends;  // empty = all generator backends

  std::string fingerprint;  // filled by validate()

  static RunConfig load(const std::filesystem::path& config_path);
};

// Fills defaults, checks referenced assets, computes the fingerprint
// (experiment-defining fields only, so moving output_dir does not change
// identity). Throws ConfigError on problems.
RunConfig validate(RunConfig cfg);

struct DryRunPlan {
  std::size_t prompt_count = 0;
  std::size_t estimated_backend_calls = 0;  // prompts missing from the cache
  std::size_t estimated_network_calls = 0;  // subset hitting http backends
  std::size_t estimated_embed_calls = 0;    // embedding-cache misses
  std::vector<std::string> notes;
  std::string to_string() const;
};

// One generation slice of the experiment grid, before variant expansion.
struct SliceKey {
  std::string collection;  // "-" for the w/o-RAG baseline
  std::string retriever;
  std::size_t k = 0;
  std::string backend;
  std::string mitigation;
  std::string to_string() const;
  std::string file_stem() const;
};

struct SliceResult {
  SliceKey key;
  std::string variant;  // "pooled", "v1", "v2"
  metrics::MetricReport report;
  std::optional<double> stereo_fraction;
  std::size_t stereo_entries = 0;  // pooled retrieved entries behind the fraction
};

struct RunOutputs {
  std::vector<SliceResult> slices;
  std::vector<std::string> collapsed_combos;  // skipped grid combinations
};

// Subcommand entry points. All validate the config first.
void cmd_ingest(const RunConfig& cfg);
void cmd_index(const RunConfig& cfg);
DryRunPlan cmd_dry_run(const RunConfig& cfg);
RunOutputs cmd_run(const RunConfig& cfg, bool resume);
RunOutputs cmd_score(const RunConfig& cfg);
void cmd_analyze(const RunConfig& cfg);
void cmd_report(const RunConfig& cfg, const std::string& format);
bool check_backends(const RunConfig& cfg, std::string& problem);

}  // namespace ragbias::runner
