#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ragbias/corpus.hpp"
#include "ragbias/text.hpp"

namespace ragbias::retrieval {

// Entries sorted by score descending, ties broken by ascending doc_id.
struct RankedList {
  std::string query_id;
  std::vector<std::pair<std::string, double>> entries;  // (doc_id, score)
  std::size_t k_requested = 0;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
  Tokenizer tokenizer = Tokenizer::English;
};

// Okapi BM25 inverted index over an immutable collection. idf uses the
// +0.5-smoothed form floored at 0. Candidates are documents sharing at
// least one query term; queries with no overlap return an empty list.
class SparseIndex {
 public:
  SparseIndex(const corpus::Collection& c, Bm25Params params);

  RankedList search(std::string_view query, std::size_t k,
                    std::string query_id = {}) const;

  double avgdl() const { return avgdl_; }
  std::size_t doc_count() const { return doc_ids_.size(); }
  const Bm25Params& params() const { return params_; }

  struct Posting {
    std::uint32_t doc = 0;  // position in doc_ids_
    std::uint32_t tf = 0;
  };
  // Exposed for index inspection in tests/tools.
  const std::map<std::string, std::vector<Posting>>& postings() const {
    return postings_;
  }
  const std::vector<std::uint32_t>& doc_lengths() const { return doc_lengths_; }
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }

 private:
  Bm25Params params_;
  std::map<std::string, std::vector<Posting>> postings_;
  std::vector<std::uint32_t> doc_lengths_;
  std::vector<std::string> doc_ids_;
  double avgdl_ = 0.0;
};

struct EmbeddingMatrix {
  std::size_t dim = 0;
  std::vector<std::vector<float>> vectors;
  std::string model_tag;
};

class EmbedderHandle {
 public:
  virtual ~EmbedderHandle() = default;
  virtual std::string model_tag() const = 0;
  // One vector per text, in order. Throws TransportError on failure.
  virtual std::vector<std::vector<float>> embed(
      const std::vector<std::string>& texts) = 0;
};

// Deterministic feature-hashing embedder for offline runs and tests:
// each token increments the bucket fnv1a64(token) % dim.
class HashingEmbedder final : public EmbedderHandle {
 public:
  explicit HashingEmbedder(std::size_t dim = 64,
                           Tokenizer tokenizer = Tokenizer::English)
      : dim_(dim), tokenizer_(tokenizer) {}
  std::string model_tag() const override;
  std::vector<std::vector<float>> embed(
      const std::vector<std::string>& texts) override;

 private:
  std::size_t dim_;
  Tokenizer tokenizer_;
};

// Content-addressed vector cache. File per entry named
// sha256(model_tag \x1f text), 8-byte little-endian dim header followed by
// float32 little-endian components.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path dir);
  std::optional<std::vector<float>> get(std::string_view model_tag,
                                        std::string_view text) const;
  void put(std::string_view model_tag, std::string_view text,
           const std::vector<float>& vec) const;

 private:
  std::filesystem::path dir_;
};

// Embeds texts through the cache; only misses reach the embedder, issued in
// chunks with a bounded number in flight and merged back in input order.
// Dimension drift across the batch is fatal; partial cache survives failures.
EmbeddingMatrix embed_batch(const std::vector<std::string>& texts,
                            EmbedderHandle& embedder,
                            const EmbeddingCache* cache = nullptr,
                            std::size_t chunk_size = 64,
                            std::size_t max_in_flight = 1);

double cosine_similarity(const std::vector<float>& a,
                         const std::vector<float>& b);

// Exact top-k by cosine similarity via full scan; ties broken by doc_id.
// doc_ids[i] labels vectors[i]. Zero query vector is an error.
RankedList dense_search(const EmbeddingMatrix& m,
                        const std::vector<std::string>& doc_ids,
                        const std::vector<float>& query_vec, std::size_t k,
                        std::string query_id = {});

// Pooled fraction (with multiplicity) of retrieved entries whose document
// polarity is stereotype. Unresolvable ids mean the index and collection
// diverged and are fatal.
double stereo_fraction(const std::vector<RankedList>& lists,
                       const corpus::Collection& c);

}  // namespace ragbias::retrieval
