#include "ragbias/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <thread>

#include "ragbias/error.hpp"
#include "ragbias/hash.hpp"
#include "ragbias/io.hpp"

namespace ragbias::retrieval {

SparseIndex::SparseIndex(const corpus::Collection& c, Bm25Params params)
    : params_(params) {
  if (c.size() == 0) throw InputError("sparse index: empty collection");
  doc_ids_.reserve(c.size());
  doc_lengths_.reserve(c.size());
  std::uint64_t total_len = 0;
  for (const auto& d : c.documents()) {
    const auto tokens = tokenize(d.text, params_.tokenizer);
    const auto doc = static_cast<std::uint32_t>(doc_ids_.size());
    doc_ids_.push_back(d.id);
    doc_lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
    total_len += tokens.size();
    std::map<std::string, std::uint32_t> tf;
    for (const auto& t : tokens) ++tf[t];
    for (const auto& [term, count] : tf) {
      postings_[term].push_back({doc, count});
    }
  }
  if (total_len == 0) {
    throw InputError("sparse index: every document tokenizes to nothing");
  }
  avgdl_ = static_cast<double>(total_len) / static_cast<double>(doc_ids_.size());
}

RankedList SparseIndex::search(std::string_view query, std::size_t k,
                               std::string query_id) const {
  RankedList out;
  out.query_id = std::move(query_id);
  out.k_requested = k;
  if (k == 0) return out;

  auto query_tokens = tokenize(query, params_.tokenizer);
  if (query_tokens.empty()) return out;
  std::map<std::string, std::uint32_t> qtf;
  for (const auto& t : query_tokens) ++qtf[t];

  const double n_docs = static_cast<double>(doc_ids_.size());
  std::map<std::uint32_t, double> scores;  // candidate doc -> score
  for (const auto& [term, count] : qtf) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const auto& plist = it->second;
    const double df = static_cast<double>(plist.size());
    const double idf =
        std::max(0.0, std::log((n_docs - df + 0.5) / (df + 0.5)));
    for (const auto& p : plist) {
      const double tf = static_cast<double>(p.tf);
      const double len = static_cast<double>(doc_lengths_[p.doc]);
      const double denom =
          tf + params_.k1 * (1.0 - params_.b + params_.b * len / avgdl_);
      scores[p.doc] += idf * tf * (params_.k1 + 1.0) / denom;
    }
  }
  if (scores.empty()) return out;

  std::vector<std::pair<std::string, double>> ranked;
  ranked.reserve(scores.size());
  for (const auto& [doc, score] : scores) {
    ranked.emplace_back(doc_ids_[doc], score);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > k) ranked.resize(k);
  out.entries = std::move(ranked);
  return out;
}

std::string HashingEmbedder::model_tag() const {
  return "hashing-" + std::string(to_string(tokenizer_)) + "-d" +
         std::to_string(dim_);
}

std::vector<std::vector<float>> HashingEmbedder::embed(
    const std::vector<std::string>& texts) {
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    std::vector<float> v(dim_, 0.0f);
    for (const auto& tok : tokenize(text, tokenizer_)) {
      v[fnv1a64(tok) % dim_] += 1.0f;
    }
    out.push_back(std::move(v));
  }
  return out;
}

EmbeddingCache::EmbeddingCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

namespace {

std::filesystem::path cache_path(const std::filesystem::path& dir,
                                 std::string_view model_tag,
                                 std::string_view text) {
  std::string key;
  key.reserve(model_tag.size() + 1 + text.size());
  key.append(model_tag);
  key.push_back('\x1f');
  key.append(text);
  return dir / (sha256_hex(key) + ".vec");
}

void store_le64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t load_le64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return v;
}

float load_le_float(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  float f;
  std::memcpy(&f, &bits, sizeof(f));
  return f;
}

void store_le_float(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

}  // namespace

std::optional<std::vector<float>> EmbeddingCache::get(std::string_view model_tag,
                                                      std::string_view text) const {
  const auto path = cache_path(dir_, model_tag, text);
  if (!std::filesystem::exists(path)) return std::nullopt;
  const std::string blob = read_file(path);
  if (blob.size() < 8) return std::nullopt;
  const std::uint64_t dim = load_le64(blob.data());
  if (blob.size() != 8 + dim * 4) return std::nullopt;
  std::vector<float> v(dim);
  for (std::uint64_t i = 0; i < dim; ++i) {
    v[i] = load_le_float(blob.data() + 8 + i * 4);
  }
  return v;
}

void EmbeddingCache::put(std::string_view model_tag, std::string_view text,
                         const std::vector<float>& vec) const {
  std::string blob;
  blob.reserve(8 + vec.size() * 4);
  store_le64(blob, vec.size());
  for (float f : vec) store_le_float(blob, f);
  // Temp file + rename so concurrent writers of the same entry cannot
  // leave a torn file behind.
  const auto final_path = cache_path(dir_, model_tag, text);
  const auto tmp_path = final_path.string() + ".tmp" +
                        std::to_string(reinterpret_cast<std::uintptr_t>(&blob));
  write_file(tmp_path, blob);
  std::filesystem::rename(tmp_path, final_path);
}

EmbeddingMatrix embed_batch(const std::vector<std::string>& texts,
                            EmbedderHandle& embedder,
                            const EmbeddingCache* cache,
                            std::size_t chunk_size,
                            std::size_t max_in_flight) {
  if (texts.empty()) throw InputError("embed_batch: no texts");
  if (chunk_size == 0) chunk_size = 1;
  if (max_in_flight == 0) max_in_flight = 1;

  EmbeddingMatrix m;
  m.model_tag = embedder.model_tag();
  m.vectors.resize(texts.size());

  std::vector<std::size_t> misses;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (cache) {
      if (auto hit = cache->get(m.model_tag, texts[i])) {
        m.vectors[i] = std::move(*hit);
        continue;
      }
    }
    misses.push_back(i);
  }

  // Chunked requests with at most max_in_flight concurrent calls; outputs
  // land by input index so scheduling cannot reorder anything.
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  for (std::size_t off = 0; off < misses.size(); off += chunk_size) {
    chunks.emplace_back(off, std::min(off + chunk_size, misses.size()));
  }
  for (std::size_t base = 0; base < chunks.size(); base += max_in_flight) {
    const std::size_t wave_end = std::min(base + max_in_flight, chunks.size());
    std::vector<std::thread> workers;
    std::vector<std::string> errors(wave_end - base);
    for (std::size_t c = base; c < wave_end; ++c) {
      workers.emplace_back([&, c] {
        const auto [lo, hi] = chunks[c];
        std::vector<std::string> chunk_texts;
        chunk_texts.reserve(hi - lo);
        for (std::size_t j = lo; j < hi; ++j) chunk_texts.push_back(texts[misses[j]]);
        try {
          auto vecs = embedder.embed(chunk_texts);
          if (vecs.size() != chunk_texts.size()) {
            errors[c - base] = "embedder returned wrong vector count";
            return;
          }
          for (std::size_t j = lo; j < hi; ++j) {
            m.vectors[misses[j]] = std::move(vecs[j - lo]);
          }
        } catch (const std::exception& e) {
          errors[c - base] = e.what();
        }
      });
    }
    for (auto& w : workers) w.join();
    // Persist whatever arrived before surfacing a failure.
    if (cache) {
      for (std::size_t c = base; c < wave_end; ++c) {
        if (!errors[c - base].empty()) continue;
        const auto [lo, hi] = chunks[c];
        for (std::size_t j = lo; j < hi; ++j) {
          cache->put(m.model_tag, texts[misses[j]], m.vectors[misses[j]]);
        }
      }
    }
    for (const auto& err : errors) {
      if (!err.empty()) throw TransportError("embed_batch: " + err);
    }
  }

  for (std::size_t i = 0; i < m.vectors.size(); ++i) {
    const auto& v = m.vectors[i];
    if (v.empty()) throw InvariantError("embed_batch: missing vector");
    if (m.dim == 0) m.dim = v.size();
    if (v.size() != m.dim) {
      throw InvariantError("embed_batch: dimension drift at text " +
                           std::to_string(i) + " (" + std::to_string(v.size()) +
                           " vs " + std::to_string(m.dim) + ")");
    }
    for (float f : v) {
      if (!std::isfinite(f)) {
        throw InvariantError("embed_batch: non-finite component at text " +
                             std::to_string(i));
      }
    }
  }
  return m;
}

double cosine_similarity(const std::vector<float>& a,
                         const std::vector<float>& b) {
  if (a.size() != b.size()) {
    throw InvariantError("cosine: dimension mismatch");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

RankedList dense_search(const EmbeddingMatrix& m,
                        const std::vector<std::string>& doc_ids,
                        const std::vector<float>& query_vec, std::size_t k,
                        std::string query_id) {
  if (doc_ids.size() != m.vectors.size()) {
    throw InvariantError("dense_search: ids/vectors size mismatch");
  }
  if (query_vec.size() != m.dim) {
    throw InvariantError("dense_search: query dim " +
                         std::to_string(query_vec.size()) + " != matrix dim " +
                         std::to_string(m.dim));
  }
  double qnorm = 0.0;
  for (float f : query_vec) qnorm += static_cast<double>(f) * f;
  if (qnorm == 0.0) {
    throw InputError("dense_search: zero query vector (cosine undefined)");
  }

  RankedList out;
  out.query_id = std::move(query_id);
  out.k_requested = k;
  if (k == 0) return out;

  std::vector<std::pair<std::string, double>> ranked;
  ranked.reserve(m.vectors.size());
  for (std::size_t i = 0; i < m.vectors.size(); ++i) {
    ranked.emplace_back(doc_ids[i], cosine_similarity(query_vec, m.vectors[i]));
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > k) ranked.resize(k);
  out.entries = std::move(ranked);
  return out;
}

double stereo_fraction(const std::vector<RankedList>& lists,
                       const corpus::Collection& c) {
  std::size_t total = 0;
  std::size_t stereo = 0;
  for (const auto& list : lists) {
    for (const auto& [doc_id, score] : list.entries) {
      const corpus::Document* d = c.find(doc_id);
      if (!d) {
        throw InvariantError("stereo_fraction: doc id not in collection: " +
                             doc_id);
      }
      ++total;
      if (d->polarity == corpus::Polarity::Stereotype) ++stereo;
    }
  }
  if (total == 0) {
    throw UndefinedMetricError("stereo_fraction: no retrieved entries");
  }
  return static_cast<double>(stereo) / static_cast<double>(total);
}

}  // namespace ragbias::retrieval
