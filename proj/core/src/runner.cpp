#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "ragbias/error.hpp"
#include "ragbias/hash.hpp"
#include "ragbias/io.hpp"
#include "ragbias/rng.hpp"
#include "ragbias/runner.hpp"
#include "ragbias/text.hpp"

namespace ragbias::runner {

using nlohmann::json;

namespace {

struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path lock;
  std::filesystem::path records_dir;
  std::filesystem::path records_index;
  std::filesystem::path metrics_csv;
  std::filesystem::path reports_json;
  std::filesystem::path report_md;
  std::filesystem::path audit;
  std::filesystem::path response_cache;
  std::filesystem::path embedding_cache;
  std::filesystem::path rejects_dir;
  std::filesystem::path ingest_dir;
  std::filesystem::path collections_dir;
  std::filesystem::path analysis_dir;

  explicit RunPaths(const std::filesystem::path& out) : root(out) {
    lock = out / "config.lock.json";
    records_dir = out / "records";
    records_index = records_dir / "index.json";
    metrics_csv = out / "metrics" / "metrics.csv";
    reports_json = out / "metrics" / "reports.json";
    report_md = out / "report.md";
    audit = out / "audit.jsonl";
    response_cache = out / "cache" / "responses.jsonl";
    embedding_cache = out / "cache" / "embeddings";
    rejects_dir = out / "rejects";
    ingest_dir = out / "ingest";
    collections_dir = out / "collections";
    analysis_dir = out / "analysis";
  }
};

struct World {
  std::vector<corpus::Document> docs;
  std::vector<corpus::RowReject> corpus_rejects;
  std::size_t corpus_raw_rows = 0;
  std::vector<bbq::BbqInstance> instances;
  std::vector<bbq::InstanceReject> bbq_rejects;
  std::map<std::string, corpus::Collection> collections;
};

bool has_real_retriever(const RunConfig& cfg) {
  return std::any_of(
      cfg.retrievers.begin(), cfg.retrievers.end(),
      [](const RetrieverConfig& r) { return r.kind != RetrieverKind::None; });
}

World load_world(const RunConfig& cfg, bool need_collections) {
  World w;
  for (const auto& s : cfg.sources) {
    const auto adapter = s.adapter ? corpus::AdapterConfig::load(*s.adapter)
                                   : corpus::AdapterConfig::defaults();
    auto result =
        corpus::load_bias_dataset(s.path, s.format, s.tag, s.defaults, adapter);
    w.corpus_raw_rows += result.raw_rows;
    std::move(result.documents.begin(), result.documents.end(),
              std::back_inserter(w.docs));
    std::move(result.rejects.begin(), result.rejects.end(),
              std::back_inserter(w.corpus_rejects));
  }
  corpus::check_unique_ids(w.docs);

  for (const auto& p : cfg.benchmark_paths) {
    auto result = bbq::load_bbq(p);
    for (auto& inst : result.instances) {
      if (!cfg.benchmark_categories.empty() &&
          !cfg.benchmark_categories.contains(inst.category)) {
        continue;
      }
      w.instances.push_back(std::move(inst));
    }
    std::move(result.rejects.begin(), result.rejects.end(),
              std::back_inserter(w.bbq_rejects));
  }
  if (w.instances.empty()) {
    throw InputError("no benchmark instances after category filtering");
  }

  if (need_collections) {
    for (const auto& cc : cfg.collections) {
      w.collections.emplace(cc.name, corpus::build_collection(w.docs, cc.spec));
    }
  }
  return w;
}

std::string query_text(const RunConfig& cfg, const bbq::BbqInstance& inst,
                       bbq::ContextView view) {
  if (!cfg.query_includes_context) return inst.question;
  return inst.context(view) + "\n" + inst.question;
}

std::string query_key(const bbq::BbqInstance& inst, bbq::ContextView view) {
  return inst.id + "|" + std::string(bbq::to_string(view));
}

retrieval::RankedList prefix(const retrieval::RankedList& list, std::size_t k) {
  retrieval::RankedList out = list;
  out.k_requested = k;
  if (out.entries.size() > k) out.entries.resize(k);
  return out;
}

std::unique_ptr<retrieval::EmbedderHandle> make_embedder(
    const RunConfig& cfg, const RetrieverConfig& ret) {
  if (ret.embedder == "hashing") {
    return std::make_unique<retrieval::HashingEmbedder>(ret.hashing_dim,
                                                        ret.tokenizer);
  }
  if (ret.embedder == "http") {
    if (cfg.http_embedder_model.empty()) {
      throw ConfigError("config: http embedder needs http_embedder_model");
    }
    http::ServiceConfig service;
    service.base_url = http::env_or("RAGBIAS_EMBED_BASE_URL");
    service.api_key = http::env_or("RAGBIAS_EMBED_API_KEY");
    service.model = cfg.http_embedder_model;
    if (service.base_url.empty()) {
      throw ConfigError("RAGBIAS_EMBED_BASE_URL is not set");
    }
    return std::make_unique<http::HttpEmbedder>(service);
  }
  throw ConfigError("unknown embedder: " + ret.embedder);
}

std::unique_ptr<generation::GeneratorHandle> make_backend(
    const RunConfig& cfg, const BackendConfig& b) {
  switch (b.kind) {
    case BackendKind::Mock:
      return std::make_unique<generation::MockBackend>(b.policy, b.tag);
    case BackendKind::Http: {
      http::ServiceConfig service;
      service.base_url = http::env_or("RAGBIAS_CHAT_BASE_URL");
      service.api_key = http::env_or("RAGBIAS_CHAT_API_KEY");
      service.model = b.model;
      if (service.base_url.empty()) {
        throw ConfigError("RAGBIAS_CHAT_BASE_URL is not set (backend " + b.tag + ")");
      }
      return std::make_unique<http::HttpChatBackend>(b.tag, service,
                                                     cfg.max_tokens);
    }
    case BackendKind::EchoSummarizer:
      return std::make_unique<generation::EchoSummarizerBackend>(b.tag);
    case BackendKind::PolarityJudge:
      return std::make_unique<analysis::PolarityJudgeBackend>(b.tag);
  }
  throw ConfigError("unknown backend kind");
}

// Dry-run stand-in: a cache miss surfaces as a transport failure instead of
// a live call, so the shared trial loop can count misses. Wraps the real
// backend (when it is constructible offline) so cache keys salt identically.
class ProbeBackend final : public generation::GeneratorHandle {
 public:
  ProbeBackend(std::string tag, bool network,
               std::unique_ptr<generation::GeneratorHandle> inner,
               std::atomic<std::size_t>& misses,
               std::atomic<std::size_t>& network_misses)
      : tag_(std::move(tag)),
        network_(network),
        inner_(std::move(inner)),
        misses_(misses),
        network_misses_(network_misses) {}
  std::string tag() const override { return tag_; }
  std::string generate(const generation::GenerationRequest&) override {
    misses_.fetch_add(1);
    if (network_) network_misses_.fetch_add(1);
    throw TransportError("dry-run cache miss");
  }
  std::string cache_salt(
      const generation::GenerationRequest& request) const override {
    return inner_ ? inner_->cache_salt(request) : std::string{};
  }

 private:
  std::string tag_;
  bool network_;
  std::unique_ptr<generation::GeneratorHandle> inner_;
  std::atomic<std::size_t>& misses_;
  std::atomic<std::size_t>& network_misses_;
};

template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t count = std::min(threads, n);
  pool.reserve(count);
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct GenSlice {
  SliceKey key;
  const corpus::Collection* collection = nullptr;  // null for w/o RAG
  const RetrieverConfig* retriever = nullptr;
  std::size_t k = 0;
  const BackendConfig* backend = nullptr;
  const MitigationConfig* mitigation = nullptr;
};

std::vector<GenSlice> expand_grid(const RunConfig& cfg, const World& world,
                                  std::vector<std::string>& collapsed) {
  std::vector<GenSlice> slices;
  for (const auto& ret : cfg.retrievers) {
    if (ret.kind == RetrieverKind::None) {
      // The w/o-RAG baseline differs only by the missing social-impressions
      // block, so collection and k combinations collapse into one slice.
      for (const auto& backend : cfg.backends) {
        if (backend.kind != BackendKind::Mock && backend.kind != BackendKind::Http)
          continue;
        for (const auto& mit : cfg.mitigations) {
          GenSlice s;
          s.key = {"-", ret.name, 0, backend.tag, mit.name};
          s.retriever = &ret;
          s.k = 0;
          s.backend = &backend;
          s.mitigation = &mit;
          slices.push_back(s);
          for (const auto& cc : cfg.collections) {
            for (auto k : cfg.k_values) {
              SliceKey skipped{cc.name, ret.name, k, backend.tag, mit.name};
              collapsed.push_back(skipped.to_string() + " -> " +
                                  s.key.to_string());
            }
          }
        }
      }
      continue;
    }
    for (const auto& cc : cfg.collections) {
      for (auto k : cfg.k_values) {
        for (const auto& backend : cfg.backends) {
          if (backend.kind != BackendKind::Mock &&
              backend.kind != BackendKind::Http)
            continue;
          for (const auto& mit : cfg.mitigations) {
            GenSlice s;
            s.key = {cc.name, ret.name, k, backend.tag, mit.name};
            s.collection = &world.collections.at(cc.name);
            s.retriever = &ret;
            s.k = k;
            s.backend = &backend;
            s.mitigation = &mit;
            slices.push_back(s);
          }
        }
      }
    }
  }
  return slices;
}

// Per (collection, retriever) retrieval state with ranked lists at the
// largest requested k; smaller ks reuse prefixes.
struct RetrievalContext {
  bool valid = true;
  std::string invalid_reason;
  std::map<std::string, retrieval::RankedList> lists;  // by query key
  std::map<std::string, std::vector<float>> query_vecs;
  retrieval::EmbeddingMatrix doc_matrix;  // dense only
};

struct Trial {
  std::size_t instance_index = 0;
  bbq::ContextView view = bbq::ContextView::Ambiguous;
  generation::InstructionVariant variant = generation::InstructionVariant::V1;
};

struct TrialOutput {
  std::vector<generation::GenerationRecord> records;
  std::vector<json> audits;
};

struct MitigationAssets {
  mitigation::MitigationPlan base_plan;
  std::string summarizer_backend_tag;
};

class Session {
 public:
  Session(const RunConfig& cfg, World world, bool dry_run)
      : cfg_(cfg),
        world_(std::move(world)),
        paths_(cfg.output_dir),
        dry_run_(dry_run),
        cache_(paths_.response_cache),
        embedding_cache_(paths_.embedding_cache) {
    instructions_ = generation::InstructionSet::load(cfg_.instructions_file);
    retry_.max_attempts = dry_run_ ? 1 : std::max(1, cfg_.max_retries);
    retry_.initial_backoff = dry_run_ ? std::chrono::milliseconds(0)
                                      : std::chrono::milliseconds(200);
    for (const auto& b : cfg_.backends) {
      if (dry_run_) {
        const bool network = b.kind == BackendKind::Http;
        // Http backends need env credentials to construct; their salt is
        // empty anyway, so probe without an inner instance.
        auto inner = network ? nullptr : make_backend(cfg_, b);
        backends_[b.tag] = std::make_unique<ProbeBackend>(
            b.tag, network, std::move(inner), probe_misses_,
            probe_network_misses_);
      } else {
        backends_[b.tag] = make_backend(cfg_, b);
      }
    }
    for (const auto& m : cfg_.mitigations) {
      MitigationAssets assets;
      assets.base_plan.kind = m.kind;
      switch (m.kind) {
        case mitigation::MitigationKind::None:
          break;
        case mitigation::MitigationKind::Icl:
          assets.base_plan.icl_examples = mitigation::load_icl_examples(*m.icl_file);
          break;
        case mitigation::MitigationKind::Summarizer:
          assets.base_plan.summarizer_prompt =
              read_file(*m.summarizer_prompt_file);
          assets.base_plan.summarizer_backend =
              backends_.at(m.summarizer_backend_tag).get();
          assets.summarizer_backend_tag = m.summarizer_backend_tag;
          break;
        case mitigation::MitigationKind::Ddp:
          assets.base_plan.ddp_rules = mitigation::DdpRules::load(*m.ddp_rules_file);
          break;
      }
      assets.base_plan.validate();
      mitigation_assets_[m.name] = std::move(assets);
    }
  }

  const World& world() const { return world_; }
  const RunPaths& paths() const { return paths_; }
  std::vector<json>& audits() { return audits_; }

  std::size_t prompt_count() const { return prompt_count_.load(); }
  std::size_t probe_misses() const { return probe_misses_.load(); }
  std::size_t probe_network_misses() const { return probe_network_misses_.load(); }
  std::size_t embed_misses() const { return embed_misses_; }
  const std::vector<std::string>& notes() const { return notes_; }

  const RetrievalContext& context_for(const GenSlice& slice) {
    const std::string ctx_key = slice.key.collection + "\x1f" + slice.key.retriever;
    auto it = contexts_.find(ctx_key);
    if (it != contexts_.end()) return it->second;
    RetrievalContext ctx = build_context(slice);
    return contexts_.emplace(ctx_key, std::move(ctx)).first->second;
  }

  std::vector<generation::PromptDocRef> docs_for(const GenSlice& slice,
                                                 const Trial& trial) {
    if (slice.retriever->kind == RetrieverKind::None) return {};
    const auto& ctx = context_for(slice);
    if (!ctx.valid) return {};
    const auto& inst = world_.instances[trial.instance_index];
    const auto& full = ctx.lists.at(query_key(inst, trial.view));
    const auto list = prefix(full, slice.k);
    std::vector<generation::PromptDocRef> refs;
    refs.reserve(list.entries.size());
    for (const auto& [doc_id, score] : list.entries) {
      const corpus::Document* d = slice.collection->find(doc_id);
      if (!d) {
        throw InvariantError("retrieved id not in collection: " + doc_id);
      }
      refs.push_back({d->id, d->text, d->polarity});
    }
    return refs;
  }

  TrialOutput run_trial(const GenSlice& slice, const Trial& trial) {
    TrialOutput out;
    const auto& inst = world_.instances[trial.instance_index];
    const auto& assets = mitigation_assets_.at(slice.key.mitigation);
    auto& backend = *backends_.at(slice.key.backend);
    auto docrefs = docs_for(slice, trial);
    std::vector<std::string> retrieved_ids;
    for (const auto& d : docrefs) retrieved_ids.push_back(d.doc_id);

    if (slice.retriever->kind != RetrieverKind::None && docrefs.empty()) {
      out.audits.push_back(json{{"kind", "empty_retrieval"},
                                {"slice", slice.key.to_string()},
                                {"instance", inst.id},
                                {"view", std::string(bbq::to_string(trial.view))}});
    }

    if (assets.base_plan.kind == mitigation::MitigationKind::Ddp) {
      auto plan = assets.base_plan;
      plan.ddp_backend = &backend;
      prompt_count_.fetch_add(2);
      auto ddp = mitigation::apply_ddp(inst, trial.view, docrefs, trial.variant,
                                       instructions_, plan, &cache_, retry_);
      ddp.stage1.config_fingerprint = cfg_.fingerprint;
      ddp.stage2.config_fingerprint = cfg_.fingerprint;
      if (ddp.zero_substitutions) {
        out.audits.push_back(json{{"kind", "ddp_no_substitution"},
                                  {"slice", slice.key.to_string()},
                                  {"instance", inst.id}});
      }
      if (ddp.stage2.failed && !dry_run_) {
        out.audits.push_back(json{{"kind", "generation_failed"},
                                  {"slice", slice.key.to_string()},
                                  {"instance", inst.id},
                                  {"stage", 2}});
      }
      out.records.push_back(std::move(ddp.stage1));
      out.records.push_back(std::move(ddp.stage2));
      return out;
    }

    std::vector<generation::PromptDocRef> prompt_docs = docrefs;
    if (assets.base_plan.kind == mitigation::MitigationKind::Summarizer &&
        !docrefs.empty()) {
      std::vector<corpus::Document> originals;
      originals.reserve(docrefs.size());
      for (const auto& ref : docrefs) {
        originals.push_back(*slice.collection->find(ref.doc_id));
      }
      prompt_count_.fetch_add(1);
      const auto result = mitigation::summarize_docs(
          originals, *assets.base_plan.summarizer_backend, &cache_,
          assets.base_plan.summarizer_prompt, retry_);
      if (result.fell_back) {
        if (!dry_run_) {
          out.audits.push_back(json{{"kind", "summarizer_fallback"},
                                    {"slice", slice.key.to_string()},
                                    {"instance", inst.id},
                                    {"view", std::string(bbq::to_string(trial.view))}});
        }
        summarizer_cold_ = true;
      } else if (result.summary) {
        prompt_docs = {{result.summary->id, result.summary->text,
                        result.summary->polarity}};
      }
    }

    auto prompt = generation::assemble_prompt(inst, trial.view, prompt_docs,
                                              trial.variant, instructions_);
    if (assets.base_plan.kind == mitigation::MitigationKind::Icl) {
      prompt = mitigation::apply_icl(std::move(prompt), assets.base_plan);
    }

    generation::GenerationRequest request;
    request.prompt = std::move(prompt);
    request.roles = generation::roles_for(inst, trial.view);
    prompt_count_.fetch_add(1);
    const auto outcome = generation::generate(request, backend, &cache_, retry_);

    generation::GenerationRecord rec;
    rec.instance_id = inst.id;
    rec.view = trial.view;
    rec.prompt_hash = request.prompt.hash();
    rec.backend_tag = backend.tag();
    rec.raw_response = outcome.response;
    rec.parsed = outcome.ok
                     ? generation::parse_answer(outcome.response, inst.options)
                     : generation::ParsedAnswer::Invalid;
    rec.retrieved_doc_ids = retrieved_ids;
    rec.timestamp = outcome.timestamp;
    rec.config_fingerprint = cfg_.fingerprint;
    rec.variant = trial.variant;
    rec.failed = !outcome.ok;
    if (rec.failed && !dry_run_) {
      out.audits.push_back(json{{"kind", "generation_failed"},
                                {"slice", slice.key.to_string()},
                                {"instance", inst.id},
                                {"view", std::string(bbq::to_string(trial.view))},
                                {"error", outcome.error}});
    }
    out.records.push_back(std::move(rec));
    return out;
  }

  std::vector<Trial> make_trials() const {
    std::vector<Trial> trials;
    trials.reserve(cfg_.variants.size() * world_.instances.size() * 2);
    for (const auto variant : cfg_.variants) {
      for (std::size_t i = 0; i < world_.instances.size(); ++i) {
        trials.push_back({i, bbq::ContextView::Ambiguous, variant});
        trials.push_back({i, bbq::ContextView::Disambiguated, variant});
      }
    }
    return trials;
  }

  // Runs every trial of the slice with bounded parallelism; outputs are
  // merged in input order so the records file is schedule-independent.
  std::vector<generation::GenerationRecord> run_slice(const GenSlice& slice) {
    // The retrieval context is built once, serially; trial workers only read.
    if (slice.retriever->kind != RetrieverKind::None) context_for(slice);
    const auto trials = make_trials();
    std::vector<TrialOutput> outputs(trials.size());
    parallel_for(trials.size(), cfg_.concurrency,
                 [&](std::size_t i) { outputs[i] = run_trial(slice, trials[i]); });
    std::vector<generation::GenerationRecord> records;
    for (auto& o : outputs) {
      std::move(o.records.begin(), o.records.end(), std::back_inserter(records));
      for (auto& a : o.audits) audits_.push_back(std::move(a));
    }
    return records;
  }

  void add_note(std::string note) {
    if (std::find(notes_.begin(), notes_.end(), note) == notes_.end()) {
      notes_.push_back(std::move(note));
    }
  }
  bool summarizer_cold() const { return summarizer_cold_.load(); }

 private:
  RetrievalContext build_context(const GenSlice& slice) {
    RetrievalContext ctx;
    const auto& ret = *slice.retriever;
    const auto& collection = *slice.collection;
    const std::size_t k_max =
        *std::max_element(cfg_.k_values.begin(), cfg_.k_values.end());

    std::vector<std::pair<std::string, std::string>> queries;  // key, text
    for (const auto& inst : world_.instances) {
      for (auto view : {bbq::ContextView::Ambiguous, bbq::ContextView::Disambiguated}) {
        queries.emplace_back(query_key(inst, view), query_text(cfg_, inst, view));
      }
    }

    if (ret.kind == RetrieverKind::Sparse) {
      retrieval::SparseIndex index(collection, ret.bm25);
      for (const auto& [key, text] : queries) {
        ctx.lists[key] = index.search(text, k_max, key);
      }
      return ctx;
    }

    // Dense: embed documents and queries through the cache.
    auto embedder = make_embedder(cfg_, ret);
    std::vector<std::string> doc_texts;
    std::vector<std::string> doc_ids;
    doc_texts.reserve(collection.size());
    for (const auto& d : collection.documents()) {
      doc_texts.push_back(d.text);
      doc_ids.push_back(d.id);
    }
    std::vector<std::string> query_texts;
    for (const auto& [key, text] : queries) query_texts.push_back(text);

    if (dry_run_ && ret.embedder == "http") {
      std::size_t misses = 0;
      auto probe = [&](const std::vector<std::string>& texts) {
        for (const auto& t : texts) {
          if (!embedding_cache_.get(embedder->model_tag(), t)) ++misses;
        }
      };
      probe(doc_texts);
      probe(query_texts);
      if (misses > 0) {
        embed_misses_ += misses;
        ctx.valid = false;
        ctx.invalid_reason = "embedding cache cold for retriever " + ret.name;
        add_note("retriever " + ret.name +
                 ": embedding cache cold; generation estimates are an upper bound");
        return ctx;
      }
    }

    ctx.doc_matrix = retrieval::embed_batch(doc_texts, *embedder,
                                            &embedding_cache_,
                                            cfg_.embed_chunk_size,
                                            cfg_.embed_max_in_flight);
    const auto query_matrix = retrieval::embed_batch(
        query_texts, *embedder, &embedding_cache_, cfg_.embed_chunk_size,
        cfg_.embed_max_in_flight);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const auto& key = queries[q].first;
      ctx.query_vecs[key] = query_matrix.vectors[q];
      bool zero = true;
      for (float f : query_matrix.vectors[q]) {
        if (f != 0.0f) {
          zero = false;
          break;
        }
      }
      if (zero) {
        // An empty-token query cannot rank anything; surface it like the
        // zero-overlap sparse case instead of erroring the whole slice.
        retrieval::RankedList empty;
        empty.query_id = key;
        empty.k_requested = k_max;
        ctx.lists[key] = std::move(empty);
        audits_.push_back(json{{"kind", "empty_query_embedding"}, {"query", key}});
        continue;
      }
      ctx.lists[key] = retrieval::dense_search(
          ctx.doc_matrix, doc_ids, query_matrix.vectors[q], k_max, key);
    }
    return ctx;
  }

  const RunConfig& cfg_;
  World world_;
  RunPaths paths_;
  bool dry_run_ = false;
  generation::ResponseCache cache_;
  retrieval::EmbeddingCache embedding_cache_;
  generation::InstructionSet instructions_;
  generation::RetryPolicy retry_;
  std::map<std::string, std::unique_ptr<generation::GeneratorHandle>> backends_;
  std::map<std::string, MitigationAssets> mitigation_assets_;
  std::map<std::string, RetrievalContext> contexts_;
  std::vector<json> audits_;
  std::atomic<std::size_t> prompt_count_{0};
  std::atomic<std::size_t> probe_misses_{0};
  std::atomic<std::size_t> probe_network_misses_{0};
  std::size_t embed_misses_ = 0;
  std::vector<std::string> notes_;
  std::atomic<bool> summarizer_cold_{false};
};

// ---------------------------------------------------------------------------
// Scoring: records -> slice results

std::vector<generation::GenerationRecord> load_records(
    const std::filesystem::path& file) {
  std::vector<generation::GenerationRecord> records;
  for (const auto& line : split_lines(read_file(file))) {
    if (trim(line).empty()) continue;
    records.push_back(generation::GenerationRecord::from_json(line));
  }
  return records;
}

std::optional<double> stereo_fraction_of_records(
    const std::vector<generation::GenerationRecord>& records,
    const corpus::Collection* collection, std::size_t& entries_out) {
  entries_out = 0;
  if (!collection) return std::nullopt;
  std::size_t total = 0;
  std::size_t stereo = 0;
  for (const auto& rec : records) {
    if (rec.failed || rec.ddp_stage == 1) continue;
    for (const auto& id : rec.retrieved_doc_ids) {
      const corpus::Document* d = collection->find(id);
      if (!d) {
        throw InvariantError("stereo fraction: retrieved id not in collection: " + id);
      }
      ++total;
      if (d->polarity == corpus::Polarity::Stereotype) ++stereo;
    }
  }
  entries_out = total;
  if (total == 0) return std::nullopt;
  return static_cast<double>(stereo) / static_cast<double>(total);
}

struct SliceRecords {
  SliceKey key;
  std::vector<generation::GenerationRecord> records;
};

std::vector<SliceResult> score_slices(const RunConfig& cfg, const World& world,
                                      const std::vector<SliceRecords>& slices) {
  std::vector<SliceResult> out;
  for (const auto& sr : slices) {
    const corpus::Collection* collection =
        sr.key.collection == "-" ? nullptr
                                 : &world.collections.at(sr.key.collection);
    std::size_t stereo_entries = 0;
    const auto fraction =
        stereo_fraction_of_records(sr.records, collection, stereo_entries);

    auto score_subset = [&](const std::string& variant_label,
                            const std::vector<generation::GenerationRecord>& recs) {
      SliceResult result;
      result.key = sr.key;
      result.variant = variant_label;
      metrics::BootstrapSettings bs = cfg.bootstrap;
      bs.seed = derive_seed(cfg.seed,
                            fnv1a64(sr.key.to_string() + "|" + variant_label));
      try {
        const auto ps = metrics::build_prediction_set(recs, world.instances);
        result.report = metrics::make_report(ps, bs);
      } catch (const Error& e) {
        throw Error(std::string(e.what()) + " [slice " + sr.key.to_string() +
                    " variant " + variant_label + "]");
      }
      result.stereo_fraction = fraction;
      result.stereo_entries = stereo_entries;
      return result;
    };

    out.push_back(score_subset("pooled", sr.records));
    if (cfg.variants.size() > 1) {
      for (const auto variant : cfg.variants) {
        std::vector<generation::GenerationRecord> subset;
        for (const auto& rec : sr.records) {
          if (rec.variant == variant) subset.push_back(rec);
        }
        out.push_back(score_subset(std::string(generation::to_string(variant)),
                                   subset));
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const SliceResult& a, const SliceResult& b) {
    const auto ka = a.key.to_string();
    const auto kb = b.key.to_string();
    if (ka != kb) return ka < kb;
    return a.variant < b.variant;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Output files

metrics::ConfidenceInterval ci_from_json(const json& j) {
  metrics::ConfidenceInterval ci;
  ci.low = j.at("low").get<double>();
  ci.high = j.at("high").get<double>();
  ci.undefined_fraction = j.value("undefined_fraction", 0.0);
  ci.flagged_undefined = j.value("flagged_undefined", false);
  return ci;
}

json slice_to_json(const SliceResult& s) {
  const auto& r = s.report;
  json report = json::parse(r.to_json());
  json j{{"collection", s.key.collection},
         {"retriever", s.key.retriever},
         {"k", s.key.k},
         {"backend", s.key.backend},
         {"mitigation", s.key.mitigation},
         {"variant", s.variant},
         {"stereo_entries", s.stereo_entries},
         {"report", report}};
  if (s.stereo_fraction) {
    j["stereo_fraction"] = *s.stereo_fraction;
  } else {
    j["stereo_fraction"] = nullptr;
  }
  return j;
}

SliceResult slice_from_json(const json& j) {
  SliceResult s;
  s.key.collection = j.at("collection").get<std::string>();
  s.key.retriever = j.at("retriever").get<std::string>();
  s.key.k = j.at("k").get<std::size_t>();
  s.key.backend = j.at("backend").get<std::string>();
  s.key.mitigation = j.at("mitigation").get<std::string>();
  s.variant = j.at("variant").get<std::string>();
  s.stereo_entries = j.value("stereo_entries", std::size_t{0});
  if (!j.at("stereo_fraction").is_null()) {
    s.stereo_fraction = j["stereo_fraction"].get<double>();
  }
  const auto& r = j.at("report");
  auto& rep = s.report;
  rep.acc_a = r.at("acc_a").get<double>();
  rep.acc_d = r.at("acc_d").get<double>();
  rep.diff_bias_a = r.at("diff_bias_a").get<double>();
  rep.diff_bias_d = r.at("diff_bias_d").get<double>();
  rep.ci_acc_a = ci_from_json(r.at("ci_acc_a"));
  rep.ci_acc_d = ci_from_json(r.at("ci_acc_d"));
  rep.ci_a = ci_from_json(r.at("ci_a"));
  rep.ci_d = ci_from_json(r.at("ci_d"));
  rep.invalid_rate_a = r.at("invalid_rate_a").get<double>();
  rep.invalid_rate_d = r.at("invalid_rate_d").get<double>();
  rep.bound_slack_a = r.at("bound_slack_a").get<double>();
  rep.bound_slack_d = r.at("bound_slack_d").get<double>();
  const auto& c = r.at("counts");
  rep.counts.n_a = c.at("n_a").get<std::uint64_t>();
  rep.counts.n_au = c.at("n_au").get<std::uint64_t>();
  rep.counts.n_as = c.at("n_as").get<std::uint64_t>();
  rep.counts.n_ac = c.at("n_ac").get<std::uint64_t>();
  rep.counts.n_a_invalid = c.at("n_a_invalid").get<std::uint64_t>();
  rep.counts.n_s = c.at("n_s").get<std::uint64_t>();
  rep.counts.n_c = c.at("n_c").get<std::uint64_t>();
  rep.counts.n_ss = c.at("n_ss").get<std::uint64_t>();
  rep.counts.n_cc = c.at("n_cc").get<std::uint64_t>();
  rep.counts.n_d_invalid = c.at("n_d_invalid").get<std::uint64_t>();
  return s;
}

std::string metrics_csv_text(const RunConfig& cfg,
                             const std::vector<SliceResult>& slices) {
  std::string out = "run_id,slice,metric,value,ci_low,ci_high,n,invalid_rate\n";
  for (const auto& s : slices) {
    const std::string slice_str = s.key.to_string() + "|variant=" + s.variant;
    const auto& r = s.report;
    const auto n_a = std::to_string(r.counts.n_a);
    const auto n_d = std::to_string(r.counts.n_s + r.counts.n_c);
    auto row = [&](std::string_view metric, double value,
                   const metrics::ConfidenceInterval& ci, const std::string& n,
                   double invalid_rate) {
      out += csv_row({cfg.run_id, slice_str, std::string(metric),
                      format_double(value, 6), format_double(ci.low, 6),
                      format_double(ci.high, 6), n,
                      format_double(invalid_rate, 6)});
    };
    row("acc_a", r.acc_a, r.ci_acc_a, n_a, r.invalid_rate_a);
    row("acc_d", r.acc_d, r.ci_acc_d, n_d, r.invalid_rate_d);
    row("diff_bias_a", r.diff_bias_a, r.ci_a, n_a, r.invalid_rate_a);
    row("diff_bias_d", r.diff_bias_d, r.ci_d, n_d, r.invalid_rate_d);
    if (s.variant == "pooled" && s.stereo_fraction) {
      out += csv_row({cfg.run_id, slice_str, "stereo_fraction",
                      format_double(*s.stereo_fraction, 6), "", "",
                      std::to_string(s.stereo_entries), ""});
    }
  }
  return out;
}

json reports_json_object(const RunConfig& cfg, const RunOutputs& outputs) {
  json slices = json::array();
  for (const auto& s : outputs.slices) slices.push_back(slice_to_json(s));
  return json{{"run_id", cfg.run_id},
              {"fingerprint", cfg.fingerprint},
              {"collapsed_combos", outputs.collapsed_combos},
              {"slices", slices}};
}

RunOutputs outputs_from_reports_json(const json& j) {
  RunOutputs out;
  for (const auto& c : j.value("collapsed_combos", json::array())) {
    out.collapsed_combos.push_back(c.get<std::string>());
  }
  for (const auto& s : j.at("slices")) out.slices.push_back(slice_from_json(s));
  return out;
}

struct Setting {
  std::string collection;
  std::string retriever;
  std::size_t k = 0;
  bool baseline() const { return collection == "-"; }
  std::string label() const {
    if (baseline()) return "w/o RAG";
    return collection + " / " + retriever + " / k=" + std::to_string(k);
  }
  auto tie() const { return std::tuple(!baseline(), collection, retriever, k); }
  bool operator<(const Setting& o) const { return tie() < o.tie(); }
};

std::string md_escape(std::string s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += "\\|";
    else out.push_back(c);
  }
  return out;
}

// Pair tables: "amb / disamb" cells, row max in bold, row min in
// italics, '*' when the CI does not overlap the w/o-RAG baseline.
std::string render_markdown(const RunConfig& cfg, const RunOutputs& outputs) {
  std::ostringstream md;
  md << "# Run report: " << cfg.run_id << "\n\n";
  md << "- config fingerprint: `" << cfg.fingerprint << "`\n";
  md << "- slices: " << outputs.slices.size();
  if (!outputs.collapsed_combos.empty()) {
    md << " (collapsed grid combinations: " << outputs.collapsed_combos.size()
       << ")";
  }
  md << "\n";

  std::set<std::string> mitigations;
  for (const auto& s : outputs.slices) mitigations.insert(s.key.mitigation);

  for (const auto& mit : mitigations) {
    std::map<Setting, std::map<std::string, const SliceResult*>> grid;
    std::set<std::string> backends;
    for (const auto& s : outputs.slices) {
      if (s.key.mitigation != mit || s.variant != "pooled") continue;
      Setting setting{s.key.collection, s.key.retriever, s.key.k};
      grid[setting][s.key.backend] = &s;
      backends.insert(s.key.backend);
    }
    if (grid.empty()) continue;

    std::vector<Setting> settings;
    for (const auto& [setting, cells] : grid) settings.push_back(setting);
    const Setting* baseline = nullptr;
    for (const auto& s : settings) {
      if (s.baseline()) baseline = &s;
    }
    const bool mark = settings.size() > 1;

    md << "\n## Mitigation: " << mit << "\n";

    auto emit_pair_table = [&](const std::string& title, auto value_a,
                               auto value_d, auto ci_of_a, auto ci_of_d) {
      md << "\n### " << title << "\n\n";
      md << "| backend |";
      for (const auto& s : settings) md << " " << md_escape(s.label()) << " |";
      md << "\n|---|";
      for (std::size_t i = 0; i < settings.size(); ++i) md << "---|";
      md << "\n";

      std::vector<std::vector<double>> macro_a(settings.size());
      std::vector<std::vector<double>> macro_d(settings.size());
      for (const auto& backend : backends) {
        std::vector<const SliceResult*> row;
        for (const auto& setting : settings) {
          auto it = grid[setting].find(backend);
          row.push_back(it == grid[setting].end() ? nullptr : it->second);
        }
        double max_a = -1e18, min_a = 1e18, max_d = -1e18, min_d = 1e18;
        for (const auto* cell : row) {
          if (!cell) continue;
          max_a = std::max(max_a, value_a(*cell));
          min_a = std::min(min_a, value_a(*cell));
          max_d = std::max(max_d, value_d(*cell));
          min_d = std::min(min_d, value_d(*cell));
        }
        const SliceResult* base_cell = nullptr;
        if (baseline) {
          auto it = grid[*baseline].find(backend);
          if (it != grid[*baseline].end()) base_cell = it->second;
        }
        md << "| " << md_escape(backend) << " |";
        for (std::size_t i = 0; i < settings.size(); ++i) {
          const auto* cell = row[i];
          if (!cell) {
            md << " - |";
            continue;
          }
          auto fmt = [&](double v, double vmax, double vmin, bool disjoint) {
            std::string text = format_double(v * 100.0, 2);
            if (disjoint) text += "*";
            if (mark && vmax != vmin) {
              if (v == vmax) text = "**" + text + "**";
              else if (v == vmin) text = "_" + text + "_";
            }
            return text;
          };
          const bool disjoint_a =
              base_cell && cell != base_cell &&
              metrics::ci_overlap_flag(ci_of_a(*cell), ci_of_a(*base_cell));
          const bool disjoint_d =
              base_cell && cell != base_cell &&
              metrics::ci_overlap_flag(ci_of_d(*cell), ci_of_d(*base_cell));
          md << " " << fmt(value_a(*cell), max_a, min_a, disjoint_a) << " / "
             << fmt(value_d(*cell), max_d, min_d, disjoint_d) << " |";
          macro_a[i].push_back(value_a(*cell));
          macro_d[i].push_back(value_d(*cell));
        }
        md << "\n";
      }

      std::set<std::string> macro_set(cfg.macro_backends.begin(),
                                      cfg.macro_backends.end());
      const std::size_t macro_rows =
          macro_set.empty() ? backends.size() : macro_set.size();
      if (macro_rows >= 2) {
        md << "| macro-avg |";
        for (std::size_t i = 0; i < settings.size(); ++i) {
          double sum_a = 0.0, sum_d = 0.0;
          std::size_t n = 0;
          for (const auto& backend : backends) {
            if (!macro_set.empty() && !macro_set.contains(backend)) continue;
            auto it = grid[settings[i]].find(backend);
            if (it == grid[settings[i]].end()) continue;
            sum_a += value_a(*it->second);
            sum_d += value_d(*it->second);
            ++n;
          }
          if (n == 0) {
            md << " - |";
          } else {
            md << " " << format_double(sum_a / n * 100.0, 2) << " / "
               << format_double(sum_d / n * 100.0, 2) << " |";
          }
        }
        md << "\n";
      }
    };

    emit_pair_table(
        "Diff-Bias (ambiguous / disambiguated, percentage points)",
        [](const SliceResult& s) { return s.report.diff_bias_a; },
        [](const SliceResult& s) { return s.report.diff_bias_d; },
        [](const SliceResult& s) { return s.report.ci_a; },
        [](const SliceResult& s) { return s.report.ci_d; });
    emit_pair_table(
        "Accuracy (ambiguous / disambiguated, %)",
        [](const SliceResult& s) { return s.report.acc_a; },
        [](const SliceResult& s) { return s.report.acc_d; },
        [](const SliceResult& s) { return s.report.ci_acc_a; },
        [](const SliceResult& s) { return s.report.ci_acc_d; });

    bool any_fraction = false;
    for (const auto& setting : settings) {
      for (const auto& [backend, cell] : grid[setting]) {
        if (cell->stereo_fraction) any_fraction = true;
      }
    }
    if (any_fraction) {
      md << "\n### Stereo docs retrieved (%)\n\n| setting | stereo docs |\n|---|---|\n";
      for (const auto& setting : settings) {
        if (setting.baseline()) continue;
        const SliceResult* cell = nullptr;
        for (const auto& [backend, c] : grid[setting]) {
          if (c->stereo_fraction) {
            cell = c;
            break;
          }
        }
        if (!cell) continue;
        md << "| " << md_escape(setting.label()) << " | "
           << format_double(*cell->stereo_fraction * 100.0, 2) << " |\n";
      }
    }
  }

  md << "\nValues are percentages (x100). '*' marks slices whose 95% CI does "
        "not overlap the w/o-RAG baseline; bold/italic mark the row maximum "
        "and minimum.\n";
  return md.str();
}

void write_outputs(const RunConfig& cfg, const RunPaths& paths,
                   const RunOutputs& outputs) {
  write_file(paths.metrics_csv, metrics_csv_text(cfg, outputs.slices));
  write_file(paths.reports_json, reports_json_object(cfg, outputs).dump(2) + "\n");
  write_file(paths.report_md, render_markdown(cfg, outputs));
}

RunConfig ensure_validated(const RunConfig& cfg) {
  if (!cfg.fingerprint.empty()) return cfg;
  return validate(cfg);
}

void write_rejects(const World& world, const RunPaths& paths) {
  write_file(paths.rejects_dir / "corpus_rejects.jsonl",
             corpus::rejects_to_jsonl(world.corpus_rejects));
  write_file(paths.rejects_dir / "bbq_rejects.jsonl",
             bbq::rejects_to_jsonl(world.bbq_rejects));
}

void analyze_world(const RunConfig& cfg, const World& world, const RunPaths& paths);

}  // namespace

// ---------------------------------------------------------------------------
// Subcommands

void cmd_ingest(const RunConfig& raw_cfg) {
  const RunConfig cfg = ensure_validated(raw_cfg);
  const RunPaths paths(cfg.output_dir);
  World world = load_world(cfg, /*need_collections=*/false);
  write_rejects(world, paths);
  write_file(paths.ingest_dir / "stats.csv",
             corpus::tally_documents(world.docs).to_csv());

  json summary{{"raw_rows", world.corpus_raw_rows},
               {"loaded_documents", world.docs.size()},
               {"corpus_rejects", world.corpus_rejects.size()},
               {"benchmark_instances", world.instances.size()},
               {"benchmark_rejects", world.bbq_rejects.size()}};
  if (cfg.name_stoplist) {
    std::vector<std::string> names;
    for (const auto& line : split_lines(read_file(*cfg.name_stoplist))) {
      if (!trim(line).empty()) names.push_back(trim(line));
    }
    const auto violations = corpus::check_name_stoplist(world.docs, names);
    json v = json::array();
    for (const auto& viol : violations) {
      v.push_back({{"doc_id", viol.doc_id}, {"term", viol.term}});
    }
    summary["stoplist_violations"] = v;
  }
  write_file(paths.ingest_dir / "summary.json", summary.dump(2) + "\n");
}

void cmd_index(const RunConfig& raw_cfg) {
  const RunConfig cfg = ensure_validated(raw_cfg);
  const RunPaths paths(cfg.output_dir);
  World world = load_world(cfg, /*need_collections=*/true);

  json manifest = json::array();
  for (const auto& [name, collection] : world.collections) {
    manifest.push_back({{"name", name},
                        {"fingerprint", collection.fingerprint()},
                        {"documents", collection.size()}});
    write_file(paths.collections_dir / (name + "_stats.csv"),
               corpus::collection_stats(collection).to_csv());
  }
  write_file(paths.collections_dir / "collections.json", manifest.dump(2) + "\n");

  // Pre-embed every dense collection so later runs are network-free.
  retrieval::EmbeddingCache cache(paths.embedding_cache);
  for (const auto& ret : cfg.retrievers) {
    if (ret.kind != RetrieverKind::Dense) continue;
    auto embedder = make_embedder(cfg, ret);
    std::set<std::string> seen;
    std::vector<std::string> texts;
    for (const auto& [name, collection] : world.collections) {
      for (const auto& d : collection.documents()) {
        if (seen.insert(d.text).second) texts.push_back(d.text);
      }
    }
    if (!texts.empty()) {
      retrieval::embed_batch(texts, *embedder, &cache, cfg.embed_chunk_size,
                             cfg.embed_max_in_flight);
    }
  }
}

DryRunPlan cmd_dry_run(const RunConfig& raw_cfg) {
  const RunConfig cfg = ensure_validated(raw_cfg);
  World world = load_world(cfg, has_real_retriever(cfg));
  Session session(cfg, std::move(world), /*dry_run=*/true);

  std::vector<std::string> collapsed;
  const auto slices = expand_grid(cfg, session.world(), collapsed);
  for (const auto& slice : slices) session.run_slice(slice);

  DryRunPlan plan;
  plan.prompt_count = session.prompt_count();
  plan.estimated_backend_calls = session.probe_misses();
  plan.estimated_network_calls = session.probe_network_misses();
  plan.estimated_embed_calls = session.embed_misses();
  plan.notes = session.notes();
  if (session.summarizer_cold()) {
    plan.notes.push_back(
        "summarizer cache cold; downstream prompt estimates are an upper bound");
  }
  return plan;
}

RunOutputs cmd_run(const RunConfig& raw_cfg, bool resume) {
  const RunConfig cfg = ensure_validated(raw_cfg);
  const RunPaths paths(cfg.output_dir);

  if (std::filesystem::exists(paths.lock)) {
    if (!resume) {
      throw ConfigError("run directory already contains " +
                        paths.lock.string() + "; pass --resume to continue");
    }
    const json lock = json::parse(read_file(paths.lock));
    if (lock.value("fingerprint", std::string{}) != cfg.fingerprint) {
      throw ConfigError("resume refused: config fingerprint changed");
    }
  }

  World world = load_world(cfg, has_real_retriever(cfg));
  write_rejects(world, paths);

  Session session(cfg, std::move(world), /*dry_run=*/false);
  std::vector<std::string> collapsed;
  const auto slices = expand_grid(cfg, session.world(), collapsed);
  if (slices.empty()) {
    throw ConfigError("empty experiment grid");
  }

  write_file(paths.lock, json{{"run_id", cfg.run_id},
                              {"fingerprint", cfg.fingerprint},
                              {"collapsed_combos", collapsed}}
                             .dump(2) +
                             "\n");

  json index = json::array();
  std::vector<SliceRecords> slice_records;
  for (const auto& slice : slices) {
    auto records = session.run_slice(slice);
    const std::string stem = slice.key.file_stem();
    std::string blob;
    for (const auto& rec : records) blob += rec.to_json() + "\n";
    write_file(paths.records_dir / (stem + ".jsonl"), blob);
    index.push_back({{"collection", slice.key.collection},
                     {"retriever", slice.key.retriever},
                     {"k", slice.key.k},
                     {"backend", slice.key.backend},
                     {"mitigation", slice.key.mitigation},
                     {"file", stem + ".jsonl"}});
    slice_records.push_back({slice.key, std::move(records)});
  }
  write_file(paths.records_index, index.dump(2) + "\n");

  std::string audit_blob;
  for (const auto& a : session.audits()) audit_blob += a.dump() + "\n";
  write_file(paths.audit, audit_blob);

  RunOutputs outputs;
  outputs.collapsed_combos = collapsed;
  outputs.slices = score_slices(cfg, session.world(), slice_records);
  write_outputs(cfg, paths, outputs);

  if (cfg.analysis.enabled) {
    analyze_world(cfg, session.world(), paths);
  }
  return outputs;
}

RunOutputs cmd_score(const RunConfig& raw_cfg) {
  const RunConfig cfg = ensure_validated(raw_cfg);
  const RunPaths paths(cfg.output_dir);
  if (!std::filesystem::exists(paths.records_index)) {
    throw InputError("no records index at " + paths.records_index.string() +
                     "; run the pipeline first");
  }
  World world = load_world(cfg, has_real_retriever(cfg));

  std::vector<SliceRecords> slice_records;
  const json index = json::parse(read_file(paths.records_index));
  std::vector<std::string> collapsed;
  if (std::filesystem::exists(paths.lock)) {
    const json lock = json::parse(read_file(paths.lock));
    for (const auto& c : lock.value("collapsed_combos", json::array())) {
      collapsed.push_back(c.get<std::string>());
    }
  }
  for (const auto& entry : index) {
    SliceKey key{entry.at("collection").get<std::string>(),
                 entry.at("retriever").get<std::string>(),
                 entry.at("k").get<std::size_t>(),
                 entry.at("backend").get<std::string>(),
                 entry.at("mitigation").get<std::string>()};
    slice_records.push_back(
        {key, load_records(paths.records_dir / entry.at("file").get<std::string>())});
  }

  RunOutputs outputs;
  outputs.collapsed_combos = std::move(collapsed);
  outputs.slices = score_slices(cfg, world, slice_records);
  write_outputs(cfg, paths, outputs);
  return outputs;
}

void cmd_report(const RunConfig& raw_cfg, const std::string& format) {
  const RunConfig cfg = ensure_validated(raw_cfg);
  const RunPaths paths(cfg.output_dir);
  if (!std::filesystem::exists(paths.reports_json)) {
    if (std::filesystem::exists(paths.records_index)) {
      cmd_score(cfg);
    } else {
      throw InputError("run directory has no results: " + paths.root.string());
    }
  }
  const auto outputs =
      outputs_from_reports_json(json::parse(read_file(paths.reports_json)));

  const std::string fmt = ascii_lower(trim(format));
  if (fmt == "markdown" || fmt == "markdown-table" || fmt == "md") {
    write_file(paths.report_md, render_markdown(cfg, outputs));
  } else if (fmt == "csv") {
    write_file(paths.root / "report.csv", metrics_csv_text(cfg, outputs.slices));
  } else if (fmt == "json") {
    write_file(paths.root / "report.json",
               reports_json_object(cfg, outputs).dump(2) + "\n");
  } else {
    throw ConfigError("unknown report format: " + format);
  }
}

bool check_backends(const RunConfig& raw_cfg, std::string& problem) {
  const RunConfig cfg = ensure_validated(raw_cfg);
  for (const auto& b : cfg.backends) {
    if (b.kind != BackendKind::Http) continue;
    http::ServiceConfig service;
    service.base_url = http::env_or("RAGBIAS_CHAT_BASE_URL");
    service.api_key = http::env_or("RAGBIAS_CHAT_API_KEY");
    service.model = b.model;
    if (service.base_url.empty()) {
      problem = "RAGBIAS_CHAT_BASE_URL is not set (backend " + b.tag + ")";
      return false;
    }
    http::HttpChatBackend backend(b.tag, service, cfg.max_tokens);
    if (!backend.reachable()) {
      problem = "backend unreachable: " + b.tag + " at " + service.base_url;
      return false;
    }
  }
  return true;
}

namespace {

void analyze_world(const RunConfig& cfg, const World& world, const RunPaths& paths) {
  generation::ResponseCache cache(paths.response_cache);
  retrieval::EmbeddingCache embedding_cache(paths.embedding_cache);
  const std::string judge_prompt = read_file(*cfg.analysis.judge_prompt_file);

  const auto judge_cfg_it =
      std::find_if(cfg.backends.begin(), cfg.backends.end(),
                   [&](const BackendConfig& b) {
                     return b.tag == cfg.analysis.judge_backend_tag;
                   });
  auto judge = make_backend(cfg, *judge_cfg_it);
  generation::RetryPolicy retry;
  retry.max_attempts = std::max(1, cfg.max_retries);

  // Embedder for relevance: the first dense retriever's choice, falling
  // back to the feature-hashing embedder.
  std::unique_ptr<retrieval::EmbedderHandle> embedder;
  for (const auto& ret : cfg.retrievers) {
    if (ret.kind == RetrieverKind::Dense) {
      embedder = make_embedder(cfg, ret);
      break;
    }
  }
  if (!embedder) embedder = std::make_unique<retrieval::HashingEmbedder>(64);

  json summary = json::array();
  for (const auto& ret : cfg.retrievers) {
    if (ret.kind == RetrieverKind::None) continue;
    for (const auto& cc : cfg.collections) {
      const auto& collection = world.collections.at(cc.name);
      const std::size_t k_max =
          *std::max_element(cfg.k_values.begin(), cfg.k_values.end());

      // Ranked lists at k_max, shared across the k sweep.
      std::map<std::string, retrieval::RankedList> lists;
      std::map<std::string, std::string> query_texts;
      std::vector<std::string> doc_ids;
      std::vector<std::string> doc_texts;
      for (const auto& d : collection.documents()) {
        doc_ids.push_back(d.id);
        doc_texts.push_back(d.text);
      }
      std::vector<std::string> qkeys;
      std::vector<std::string> qtexts;
      for (const auto& inst : world.instances) {
        for (auto view :
             {bbq::ContextView::Ambiguous, bbq::ContextView::Disambiguated}) {
          qkeys.push_back(query_key(inst, view));
          qtexts.push_back(query_text(cfg, inst, view));
        }
      }
      const auto doc_matrix = retrieval::embed_batch(
          doc_texts, *embedder, &embedding_cache, cfg.embed_chunk_size,
          cfg.embed_max_in_flight);
      const auto query_matrix = retrieval::embed_batch(
          qtexts, *embedder, &embedding_cache, cfg.embed_chunk_size,
          cfg.embed_max_in_flight);
      std::map<std::string, std::size_t> doc_index;
      for (std::size_t i = 0; i < doc_ids.size(); ++i) doc_index[doc_ids[i]] = i;

      if (ret.kind == RetrieverKind::Sparse) {
        retrieval::SparseIndex index(collection, ret.bm25);
        for (std::size_t q = 0; q < qkeys.size(); ++q) {
          lists[qkeys[q]] = index.search(qtexts[q], k_max, qkeys[q]);
        }
      } else {
        for (std::size_t q = 0; q < qkeys.size(); ++q) {
          bool zero = true;
          for (float f : query_matrix.vectors[q]) {
            if (f != 0.0f) {
              zero = false;
              break;
            }
          }
          if (zero) {
            lists[qkeys[q]] = retrieval::RankedList{qkeys[q], {}, k_max};
            continue;
          }
          lists[qkeys[q]] = retrieval::dense_search(
              doc_matrix, doc_ids, query_matrix.vectors[q], k_max, qkeys[q]);
        }
      }

      std::vector<analysis::TradeoffRow> rows;
      std::size_t unreliable_sets = 0;
      for (auto k : cfg.k_values) {
        double relevance_sum = 0.0;
        double bias_sum = 0.0;
        std::size_t sets = 0;
        for (std::size_t q = 0; q < qkeys.size(); ++q) {
          const auto list = prefix(lists[qkeys[q]], k);
          if (list.entries.empty()) continue;
          std::vector<std::vector<float>> doc_vecs;
          std::vector<corpus::Document> docs;
          for (const auto& [id, score] : list.entries) {
            doc_vecs.push_back(doc_matrix.vectors[doc_index.at(id)]);
            docs.push_back(*collection.find(id));
          }
          bool usable = true;
          double rel = 0.0;
          try {
            rel = analysis::relevance_score(query_matrix.vectors[q], doc_vecs);
          } catch (const Error&) {
            usable = false;  // zero vectors; skip this query's set
          }
          if (!usable) continue;
          const auto bias = analysis::bias_level_score(
              docs, *judge, &cache, judge_prompt,
              cfg.analysis.judge_include_query ? qtexts[q] : std::string{},
              retry);
          if (!bias.reliable) ++unreliable_sets;
          relevance_sum += rel;
          bias_sum += bias.score;
          ++sets;
        }
        if (sets == 0) continue;
        analysis::TradeoffRow row;
        row.k = k;
        row.relevance = relevance_sum / static_cast<double>(sets);
        row.bias_level = bias_sum / static_cast<double>(sets);
        row.harmonic = analysis::harmonic_impact(std::max(0.0, row.relevance),
                                                 row.bias_level);
        rows.push_back(row);
      }
      const std::string stem = cc.name + "__" + ret.name;
      write_file(paths.analysis_dir / ("tradeoff_" + stem + ".csv"),
                 analysis::tradeoff_to_csv(rows));
      summary.push_back({{"collection", cc.name},
                         {"retriever", ret.name},
                         {"rows", rows.size()},
                         {"unreliable_sets", unreliable_sets}});
    }
  }
  write_file(paths.analysis_dir / "summary.json", summary.dump(2) + "\n");
}

}  // namespace

void cmd_analyze(const RunConfig& raw_cfg) {
  const RunConfig cfg = ensure_validated(raw_cfg);
  if (!cfg.analysis.enabled) {
    throw ConfigError("analysis is not enabled in the config");
  }
  const RunPaths paths(cfg.output_dir);
  World world = load_world(cfg, /*need_collections=*/true);
  analyze_world(cfg, world, paths);
}

}  // namespace ragbias::runner
