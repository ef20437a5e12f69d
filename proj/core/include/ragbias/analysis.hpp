#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ragbias/corpus.hpp"
#include "ragbias/generation.hpp"

namespace ragbias::analysis {

// Arithmetic mean of per-document cosine similarities to the query.
// Zero vectors are errors naming the offender.
double relevance_score(const std::vector<float>& query_vec,
                       const std::vector<std::vector<float>>& doc_vecs);

// First integer in [-3, 3] found in the judge's reply; nullopt when none.
std::optional<int> parse_bias_level(std::string_view raw);

struct BiasLevelResult {
  double score = 0.0;        // mean of per-document judge scores
  std::size_t scored = 0;
  std::size_t excluded = 0;  // unparseable or out-of-range replies
  bool reliable = true;      // false when more than 20% are excluded
};

// Scores each document on the -3..+3 stereotype scale via one judge call
// per document (cached). The prompt template takes {document} and an
// optional {query}.
BiasLevelResult bias_level_score(const std::vector<corpus::Document>& docs,
                                 generation::GeneratorHandle& judge,
                                 generation::ResponseCache* cache,
                                 const std::string& prompt_template,
                                 const std::string& query_text = {},
                                 const generation::RetryPolicy& retry = {});

// 2 r |b| / (r + |b|) over the raw bias level; 0 when either side is 0.
// Negative relevance is an error (the diagnostic assumes the
// positive-relevance regime).
double harmonic_impact(double relevance, double bias_level);

// Spearman rank correlation with average ranks for ties. Constant input
// sequences are errors naming the offending side.
double spearman_rho(const std::vector<double>& xs,
                    const std::vector<double>& ys);

struct TradeoffRow {
  std::size_t k = 0;
  double relevance = 0.0;
  double bias_level = 0.0;
  double harmonic = 0.0;
};

std::string tradeoff_to_csv(const std::vector<TradeoffRow>& rows);

// Deterministic judge used by offline runs and tests: scores +2 for
// stereotype documents and -2 for anti-stereotype ones.
class PolarityJudgeBackend final : public generation::GeneratorHandle {
 public:
  explicit PolarityJudgeBackend(std::string tag = "mock:PolarityJudge")
      : tag_(std::move(tag)) {}
  std::string tag() const override { return tag_; }
  std::string generate(const generation::GenerationRequest& request) override;
  std::string cache_salt(
      const generation::GenerationRequest& request) const override;

 private:
  std::string tag_;
};

}  // namespace ragbias::analysis
