#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ragbias/error.hpp"
#include "ragbias/hash.hpp"
#include "ragbias/io.hpp"
#include "ragbias/runner.hpp"
#include "ragbias/text.hpp"

namespace ragbias::runner {

using nlohmann::json;

std::string_view to_string(RetrieverKind k) {
  switch (k) {
    case RetrieverKind::None: return "none";
    case RetrieverKind::Sparse: return "sparse";
    case RetrieverKind::Dense: return "dense";
  }
  return "none";
}

namespace {

RetrieverKind parse_retriever_kind(std::string_view s) {
  const std::string v = ascii_lower(trim(s));
  if (v == "none") return RetrieverKind::None;
  if (v == "sparse") return RetrieverKind::Sparse;
  if (v == "dense") return RetrieverKind::Dense;
  throw ConfigError("unknown retriever kind: " + std::string(s));
}

BackendKind parse_backend_kind(std::string_view s) {
  const std::string v = ascii_lower(trim(s));
  if (v == "mock") return BackendKind::Mock;
  if (v == "http") return BackendKind::Http;
  if (v == "echo_summarizer") return BackendKind::EchoSummarizer;
  if (v == "polarity_judge") return BackendKind::PolarityJudge;
  throw ConfigError("unknown backend kind: " + std::string(s));
}

std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::Mock: return "mock";
    case BackendKind::Http: return "http";
    case BackendKind::EchoSummarizer: return "echo_summarizer";
    case BackendKind::PolarityJudge: return "polarity_judge";
  }
  return "mock";
}

std::filesystem::path resolve(const std::filesystem::path& base,
                              const std::filesystem::path& p) {
  if (p.is_absolute()) return p;
  return base / p;
}

corpus::DocumentDefaults parse_defaults(const json& j) {
  corpus::DocumentDefaults d;
  if (j.contains("category")) {
    d.category = corpus::BiasCategory::parse(j["category"].get<std::string>());
  }
  if (j.contains("polarity")) {
    d.polarity = corpus::parse_polarity(j["polarity"].get<std::string>());
  }
  if (j.contains("language")) {
    d.language = corpus::Language::parse(j["language"].get<std::string>());
  }
  return d;
}

}  // namespace

RunConfig RunConfig::load(const std::filesystem::path& config_path) {
  json j = json::parse(read_file(config_path));
  RunConfig cfg;
  cfg.config_dir = config_path.has_parent_path()
                       ? config_path.parent_path()
                       : std::filesystem::path(".");

  cfg.version = j.value("version", 1);
  cfg.run_id = j.value("run_id", std::string{});
  cfg.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("output_dir")) {
    cfg.output_dir = resolve(cfg.config_dir, j["output_dir"].get<std::string>());
  }

  if (j.contains("corpus")) {
    const auto& c = j["corpus"];
    for (const auto& s : c.value("sources", json::array())) {
      SourceConfig sc;
      sc.path = resolve(cfg.config_dir, s.at("path").get<std::string>());
      sc.format = corpus::parse_source_format(s.value("format", "jsonl"));
      sc.tag = s.at("source_tag").get<std::string>();
      if (s.contains("defaults")) sc.defaults = parse_defaults(s["defaults"]);
      if (s.contains("adapter")) {
        sc.adapter = resolve(cfg.config_dir, s["adapter"].get<std::string>());
      }
      cfg.sources.push_back(std::move(sc));
    }
    for (const auto& col : c.value("collections", json::array())) {
      CollectionConfig cc;
      cc.name = col.at("name").get<std::string>();
      cc.spec.filter =
          corpus::parse_polarity_filter(col.value("polarity_filter", "full"));
      if (col.contains("mixture_stereo_fraction")) {
        cc.spec.mixture_stereo_fraction =
            col["mixture_stereo_fraction"].get<double>();
      }
      for (const auto& cat : col.at("categories")) {
        cc.spec.categories.insert(
            corpus::BiasCategory::parse(cat.get<std::string>()));
      }
      for (const auto& lang : col.at("languages")) {
        cc.spec.languages.insert(
            corpus::Language::parse(lang.get<std::string>()));
      }
      cc.spec.seed = col.value("seed", cfg.seed);
      cfg.collections.push_back(std::move(cc));
    }
    if (c.contains("name_stoplist")) {
      cfg.name_stoplist =
          resolve(cfg.config_dir, c["name_stoplist"].get<std::string>());
    }
  }

  if (j.contains("retrieval")) {
    const auto& r = j["retrieval"];
    for (const auto& ret : r.value("retrievers", json::array())) {
      RetrieverConfig rc;
      rc.name = ret.at("name").get<std::string>();
      rc.kind = parse_retriever_kind(ret.at("kind").get<std::string>());
      rc.bm25.k1 = ret.value("k1", 1.2);
      rc.bm25.b = ret.value("b", 0.75);
      rc.tokenizer = parse_tokenizer(ret.value("tokenizer", "english"));
      rc.bm25.tokenizer = rc.tokenizer;
      rc.embedder = ret.value("embedder", "hashing");
      rc.hashing_dim = ret.value("dim", std::size_t{64});
      cfg.retrievers.push_back(std::move(rc));
    }
    for (const auto& k : r.value("k_values", json::array())) {
      cfg.k_values.push_back(k.get<std::size_t>());
    }
    cfg.query_includes_context = r.value("query_includes_context", true);
    cfg.embed_chunk_size = r.value("embed_chunk_size", std::size_t{64});
    cfg.embed_max_in_flight = r.value("embed_max_in_flight", std::size_t{1});
    cfg.http_embedder_model = r.value("http_embedder_model", std::string{});
  }

  if (j.contains("benchmark")) {
    const auto& b = j["benchmark"];
    for (const auto& p : b.value("paths", json::array())) {
      cfg.benchmark_paths.push_back(resolve(cfg.config_dir, p.get<std::string>()));
    }
    for (const auto& cat : b.value("categories", json::array())) {
      cfg.benchmark_categories.insert(
          corpus::BiasCategory::parse(cat.get<std::string>()));
    }
  }

  if (j.contains("generation")) {
    const auto& g = j["generation"];
    for (const auto& b : g.value("backends", json::array())) {
      BackendConfig bc;
      bc.tag = b.at("tag").get<std::string>();
      bc.kind = parse_backend_kind(b.at("kind").get<std::string>());
      if (bc.kind == BackendKind::Mock) {
        bc.policy = generation::parse_mock_policy(b.at("policy").get<std::string>());
      }
      bc.model = b.value("model", std::string{});
      cfg.backends.push_back(std::move(bc));
    }
    for (const auto& v : g.value("instruction_variants", json::array())) {
      cfg.variants.push_back(generation::parse_variant(v.get<std::string>()));
    }
    if (g.contains("instructions_file")) {
      cfg.instructions_file =
          resolve(cfg.config_dir, g["instructions_file"].get<std::string>());
    }
    cfg.max_tokens = g.value("max_tokens", 16);
    cfg.max_retries = g.value("max_retries", 3);
    cfg.concurrency = g.value("concurrency", std::size_t{1});
  }

  for (const auto& m : j.value("mitigations", json::array())) {
    MitigationConfig mc;
    mc.kind = mitigation::parse_mitigation_kind(m.value("kind", "none"));
    mc.name = m.value("name", std::string(mitigation::to_string(mc.kind)));
    if (m.contains("icl_file")) {
      mc.icl_file = resolve(cfg.config_dir, m["icl_file"].get<std::string>());
    }
    if (m.contains("ddp_rules_file")) {
      mc.ddp_rules_file =
          resolve(cfg.config_dir, m["ddp_rules_file"].get<std::string>());
    }
    if (m.contains("summarizer_prompt_file")) {
      mc.summarizer_prompt_file = resolve(
          cfg.config_dir, m["summarizer_prompt_file"].get<std::string>());
    }
    mc.summarizer_backend_tag = m.value("summarizer_backend", std::string{});
    cfg.mitigations.push_back(std::move(mc));
  }

  if (j.contains("bootstrap")) {
    const auto& b = j["bootstrap"];
    cfg.bootstrap.resamples = b.value("resamples", std::size_t{10000});
    cfg.bootstrap.level = b.value("level", 0.95);
    cfg.bootstrap.threads = b.value("threads", std::size_t{1});
  }

  if (j.contains("analysis")) {
    const auto& a = j["analysis"];
    cfg.analysis.enabled = a.value("enabled", false);
    cfg.analysis.judge_backend_tag = a.value("judge_backend", std::string{});
    if (a.contains("judge_prompt_file")) {
      cfg.analysis.judge_prompt_file =
          resolve(cfg.config_dir, a["judge_prompt_file"].get<std::string>());
    }
    cfg.analysis.judge_include_query = a.value("judge_include_query", false);
  }

  if (j.contains("report")) {
    for (const auto& t : j["report"].value("macro_backends", json::array())) {
      cfg.macro_backends.push_back(t.get<std::string>());
    }
  }
  return cfg;
}

namespace {

json normalized_json(const RunConfig& cfg) {
  json j;
  j["version"] = cfg.version;
  j["run_id"] = cfg.run_id;
  j["seed"] = cfg.seed;
  json sources = json::array();
  for (const auto& s : cfg.sources) {
    json d;
    if (s.defaults.category) d["category"] = s.defaults.category->name();
    if (s.defaults.polarity) {
      d["polarity"] = std::string(corpus::to_string(*s.defaults.polarity));
    }
    if (s.defaults.language) d["language"] = s.defaults.language->code();
    sources.push_back({{"path", s.path.filename().string()},
                       {"format", std::string(corpus::to_string(s.format))},
                       {"source_tag", s.tag},
                       {"defaults", d}});
  }
  j["sources"] = sources;
  json collections = json::array();
  for (const auto& c : cfg.collections) {
    collections.push_back({{"name", c.name}, {"spec", c.spec.canonical()}});
  }
  j["collections"] = collections;
  json retrievers = json::array();
  for (const auto& r : cfg.retrievers) {
    retrievers.push_back({{"name", r.name},
                          {"kind", std::string(to_string(r.kind))},
                          {"k1", r.bm25.k1},
                          {"b", r.bm25.b},
                          {"tokenizer", std::string(to_string(r.tokenizer))},
                          {"embedder", r.embedder},
                          {"dim", r.hashing_dim}});
  }
  j["retrievers"] = retrievers;
  j["k_values"] = cfg.k_values;
  j["query_includes_context"] = cfg.query_includes_context;
  json benchmarks = json::array();
  for (const auto& p : cfg.benchmark_paths) benchmarks.push_back(p.filename().string());
  j["benchmarks"] = benchmarks;
  json categories = json::array();
  for (const auto& c : cfg.benchmark_categories) categories.push_back(c.name());
  j["benchmark_categories"] = categories;
  json backends = json::array();
  for (const auto& b : cfg.backends) {
    backends.push_back({{"tag", b.tag},
                        {"kind", std::string(to_string(b.kind))},
                        {"policy", std::string(generation::to_string(b.policy))},
                        {"model", b.model}});
  }
  j["backends"] = backends;
  json variants = json::array();
  for (const auto& v : cfg.variants) variants.push_back(std::string(generation::to_string(v)));
  j["variants"] = variants;
  j["max_tokens"] = cfg.max_tokens;
  json mitigations = json::array();
  for (const auto& m : cfg.mitigations) {
    mitigations.push_back({{"name", m.name},
                           {"kind", std::string(mitigation::to_string(m.kind))},
                           {"summarizer_backend", m.summarizer_backend_tag}});
  }
  j["mitigations"] = mitigations;
  j["bootstrap"] = {{"resamples", cfg.bootstrap.resamples},
                    {"level", cfg.bootstrap.level}};
  j["macro_backends"] = cfg.macro_backends;
  return j;
}

}  // namespace

RunConfig validate(RunConfig cfg) {
  if (cfg.version != 1) {
    throw ConfigError("unsupported config version: " + std::to_string(cfg.version));
  }
  if (cfg.run_id.empty()) throw ConfigError("config: run_id is required");
  if (cfg.output_dir.empty()) throw ConfigError("config: output_dir is required");

  auto require_exists = [](const std::filesystem::path& p, const char* what) {
    if (!std::filesystem::exists(p)) {
      throw ConfigError(std::string("config: missing ") + what + ": " + p.string());
    }
  };

  for (const auto& s : cfg.sources) {
    require_exists(s.path, "source file");
    if (s.adapter) require_exists(*s.adapter, "adapter config");
    if (trim(s.tag).empty()) throw ConfigError("config: source_tag is required");
  }
  if (cfg.name_stoplist) require_exists(*cfg.name_stoplist, "name stoplist");

  if (cfg.retrievers.empty()) {
    throw ConfigError("config: at least one retriever is required");
  }
  {
    std::set<std::string> names;
    for (const auto& r : cfg.retrievers) {
      if (!names.insert(r.name).second) {
        throw ConfigError("config: duplicate retriever name: " + r.name);
      }
      if (r.kind == RetrieverKind::Dense && r.embedder != "hashing" &&
          r.embedder != "http") {
        throw ConfigError("config: unknown embedder: " + r.embedder);
      }
    }
  }
  const bool any_real_retriever =
      std::any_of(cfg.retrievers.begin(), cfg.retrievers.end(),
                  [](const RetrieverConfig& r) { return r.kind != RetrieverKind::None; });
  if (any_real_retriever && cfg.collections.empty()) {
    throw ConfigError("config: retrievers present but no collections defined");
  }
  {
    std::set<std::string> names;
    for (const auto& c : cfg.collections) {
      if (!names.insert(c.name).second) {
        throw ConfigError("config: duplicate collection name: " + c.name);
      }
      c.spec.validate();
    }
  }
  if (any_real_retriever && cfg.sources.empty()) {
    throw ConfigError("config: collections require corpus sources");
  }

  if (cfg.k_values.empty()) cfg.k_values = {10};
  for (auto k : cfg.k_values) {
    if (k == 0) throw ConfigError("config: k values must be positive");
  }
  std::sort(cfg.k_values.begin(), cfg.k_values.end());
  cfg.k_values.erase(std::unique(cfg.k_values.begin(), cfg.k_values.end()),
                     cfg.k_values.end());

  if (cfg.benchmark_paths.empty()) {
    throw ConfigError("config: at least one benchmark path is required");
  }
  for (const auto& p : cfg.benchmark_paths) require_exists(p, "benchmark file");

  if (cfg.backends.empty()) {
    throw ConfigError("config: at least one backend is required");
  }
  {
    std::set<std::string> tags;
    for (const auto& b : cfg.backends) {
      if (!tags.insert(b.tag).second) {
        throw ConfigError("config: duplicate backend tag: " + b.tag);
      }
      if (b.kind == BackendKind::Http && trim(b.model).empty()) {
        throw ConfigError("config: http backend needs a model: " + b.tag);
      }
    }
  }
  const bool any_generator =
      std::any_of(cfg.backends.begin(), cfg.backends.end(),
                  [](const BackendConfig& b) {
                    return b.kind == BackendKind::Mock || b.kind == BackendKind::Http;
                  });
  if (!any_generator) {
    throw ConfigError("config: at least one mock or http generator backend is required");
  }

  if (cfg.variants.empty()) {
    cfg.variants = {generation::InstructionVariant::V1,
                    generation::InstructionVariant::V2};
  }
  if (cfg.instructions_file.empty()) {
    cfg.instructions_file = cfg.config_dir / "assets" / "instructions.json";
  }
  require_exists(cfg.instructions_file, "instructions file");

  if (cfg.mitigations.empty()) {
    MitigationConfig none;
    none.kind = mitigation::MitigationKind::None;
    none.name = "none";
    cfg.mitigations.push_back(none);
  }
  {
    std::set<std::string> names;
    auto has_backend = [&](const std::string& tag) {
      return std::any_of(cfg.backends.begin(), cfg.backends.end(),
                         [&](const BackendConfig& b) { return b.tag == tag; });
    };
    for (const auto& m : cfg.mitigations) {
      if (!names.insert(m.name).second) {
        throw ConfigError("config: duplicate mitigation name: " + m.name);
      }
      switch (m.kind) {
        case mitigation::MitigationKind::None:
          break;
        case mitigation::MitigationKind::Icl:
          if (!m.icl_file) throw ConfigError("config: icl mitigation needs icl_file");
          require_exists(*m.icl_file, "icl examples file");
          break;
        case mitigation::MitigationKind::Summarizer:
          if (!m.summarizer_prompt_file) {
            throw ConfigError("config: summarizer mitigation needs summarizer_prompt_file");
          }
          require_exists(*m.summarizer_prompt_file, "summarizer prompt file");
          if (!has_backend(m.summarizer_backend_tag)) {
            throw ConfigError("config: summarizer_backend not among backends: " +
                              m.summarizer_backend_tag);
          }
          break;
        case mitigation::MitigationKind::Ddp:
          if (!m.ddp_rules_file) {
            throw ConfigError("config: ddp mitigation needs ddp_rules_file");
          }
          require_exists(*m.ddp_rules_file, "ddp rules file");
          break;
      }
    }
  }

  if (cfg.bootstrap.resamples < 1000) {
    throw ConfigError("config: bootstrap resamples must be >= 1000");
  }
  if (cfg.bootstrap.level <= 0.0 || cfg.bootstrap.level >= 1.0) {
    throw ConfigError("config: bootstrap level must be in (0,1)");
  }

  if (cfg.analysis.enabled) {
    auto it = std::find_if(cfg.backends.begin(), cfg.backends.end(),
                           [&](const BackendConfig& b) {
                             return b.tag == cfg.analysis.judge_backend_tag;
                           });
    if (it == cfg.backends.end()) {
      throw ConfigError("config: analysis judge_backend not among backends: " +
                        cfg.analysis.judge_backend_tag);
    }
    if (!cfg.analysis.judge_prompt_file) {
      throw ConfigError("config: analysis needs judge_prompt_file");
    }
    require_exists(*cfg.analysis.judge_prompt_file, "judge prompt file");
  }

  for (const auto& tag : cfg.macro_backends) {
    if (std::none_of(cfg.backends.begin(), cfg.backends.end(),
                     [&](const BackendConfig& b) { return b.tag == tag; })) {
      throw ConfigError("config: macro backend not among backends: " + tag);
    }
  }

  if (cfg.concurrency == 0) cfg.concurrency = 1;
  if (cfg.bootstrap.threads == 0) cfg.bootstrap.threads = 1;

  cfg.fingerprint = sha256_hex(normalized_json(cfg).dump());
  cfg.bootstrap.seed = cfg.seed;
  return cfg;
}

std::string SliceKey::to_string() const {
  std::ostringstream ss;
  ss << "col=" << collection << "|ret=" << retriever << "|k=" << k
     << "|backend=" << backend << "|mit=" << mitigation;
  return ss.str();
}

std::string SliceKey::file_stem() const {
  std::string s = to_string();
  for (char& c : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' ||
                    c == '.' || c == '_';
    if (!ok) c = '_';
  }
  return s;
}

std::string DryRunPlan::to_string() const {
  std::ostringstream ss;
  ss << "prompts: " << prompt_count
     << "\nestimated backend calls (net of cache): " << estimated_backend_calls
     << "\nestimated network calls: " << estimated_network_calls
     << "\nestimated embedding calls: " << estimated_embed_calls << "\n";
  for (const auto& n : notes) ss << "note: " << n << "\n";
  return ss.str();
}

}  // namespace ragbias::runner
