#include "ragbias/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "ragbias/error.hpp"
#include "ragbias/io.hpp"
#include "ragbias/retrieval.hpp"

namespace ragbias::analysis {

double relevance_score(const std::vector<float>& query_vec,
                       const std::vector<std::vector<float>>& doc_vecs) {
  if (doc_vecs.empty()) {
    throw UndefinedMetricError("relevance_score: no documents");
  }
  auto norm_sq = [](const std::vector<float>& v) {
    double s = 0.0;
    for (float f : v) s += static_cast<double>(f) * f;
    return s;
  };
  if (norm_sq(query_vec) == 0.0) {
    throw InputError("relevance_score: zero query vector");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < doc_vecs.size(); ++i) {
    if (doc_vecs[i].size() != query_vec.size()) {
      throw InvariantError("relevance_score: dim mismatch at doc " +
                           std::to_string(i));
    }
    if (norm_sq(doc_vecs[i]) == 0.0) {
      throw InputError("relevance_score: zero vector at doc " +
                       std::to_string(i));
    }
    sum += retrieval::cosine_similarity(query_vec, doc_vecs[i]);
  }
  return sum / static_cast<double>(doc_vecs.size());
}

std::optional<int> parse_bias_level(std::string_view raw) {
  std::size_t i = 0;
  while (i < raw.size()) {
    if (std::isdigit(static_cast<unsigned char>(raw[i])) ||
        ((raw[i] == '-' || raw[i] == '+') && i + 1 < raw.size() &&
         std::isdigit(static_cast<unsigned char>(raw[i + 1])))) {
      const bool neg = raw[i] == '-';
      if (raw[i] == '-' || raw[i] == '+') ++i;
      long v = 0;
      bool overflow = false;
      while (i < raw.size() && std::isdigit(static_cast<unsigned char>(raw[i]))) {
        v = v * 10 + (raw[i] - '0');
        if (v > 1000) overflow = true;
        ++i;
      }
      if (!overflow) {
        const long signed_v = neg ? -v : v;
        if (signed_v >= -3 && signed_v <= 3) return static_cast<int>(signed_v);
      }
    } else {
      ++i;
    }
  }
  return std::nullopt;
}

BiasLevelResult bias_level_score(const std::vector<corpus::Document>& docs,
                                 generation::GeneratorHandle& judge,
                                 generation::ResponseCache* cache,
                                 const std::string& prompt_template,
                                 const std::string& query_text,
                                 const generation::RetryPolicy& retry) {
  if (docs.empty()) {
    throw UndefinedMetricError("bias_level_score: no documents");
  }
  BiasLevelResult out;
  double sum = 0.0;
  for (const auto& d : docs) {
    std::string user = prompt_template;
    auto replace_all = [&user](std::string_view key, std::string_view value) {
      std::size_t pos = 0;
      while ((pos = user.find(key, pos)) != std::string::npos) {
        user.replace(pos, key.size(), value);
        pos += value.size();
      }
    };
    replace_all("{document}", d.text);
    replace_all("{query}", query_text);

    generation::GenerationRequest request;
    request.prompt.user_text = std::move(user);
    request.prompt.parts.docs.push_back({d.id, d.text, d.polarity});

    const auto outcome = generation::generate(request, judge, cache, retry);
    std::optional<int> level;
    if (outcome.ok) level = parse_bias_level(outcome.response);
    if (level) {
      sum += *level;
      ++out.scored;
    } else {
      ++out.excluded;
    }
  }
  if (out.scored == 0) {
    throw UndefinedMetricError("bias_level_score: every judge reply unparseable");
  }
  out.score = sum / static_cast<double>(out.scored);
  out.reliable = static_cast<double>(out.excluded) /
                     static_cast<double>(docs.size()) <=
                 0.20;
  return out;
}

double harmonic_impact(double relevance, double bias_level) {
  if (relevance < 0.0) {
    throw InputError("harmonic_impact: negative relevance " +
                     format_double(relevance, 6));
  }
  const double b = std::abs(bias_level);
  if (relevance == 0.0 || b == 0.0) return 0.0;
  return 2.0 * relevance * b / (relevance + b);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_rho(const std::vector<double>& xs,
                    const std::vector<double>& ys) {
  if (xs.size() != ys.size()) {
    throw InputError("spearman_rho: length mismatch");
  }
  if (xs.size() < 3) {
    throw InputError("spearman_rho: need at least 3 points");
  }
  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(),
                       [&](double x) { return x == v.front(); });
  };
  if (constant(xs)) throw UndefinedMetricError("spearman_rho: xs is constant");
  if (constant(ys)) throw UndefinedMetricError("spearman_rho: ys is constant");

  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double num = 0.0, dx = 0.0, dy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  return num / std::sqrt(dx * dy);
}

std::string tradeoff_to_csv(const std::vector<TradeoffRow>& rows) {
  std::string out = "k,relevance,bias_level,harmonic\n";
  for (const auto& r : rows) {
    out += csv_row({std::to_string(r.k), format_double(r.relevance, 6),
                    format_double(r.bias_level, 6), format_double(r.harmonic, 6)});
  }
  return out;
}

std::string PolarityJudgeBackend::generate(
    const generation::GenerationRequest& request) {
  if (request.prompt.parts.docs.empty()) return "0";
  return request.prompt.parts.docs.front().polarity ==
                 corpus::Polarity::Stereotype
             ? "2"
             : "-2";
}

std::string PolarityJudgeBackend::cache_salt(
    const generation::GenerationRequest& request) const {
  std::string salt;
  for (const auto& d : request.prompt.parts.docs) {
    salt += d.polarity == corpus::Polarity::Stereotype ? 'S' : 'A';
  }
  return salt;
}

}  // namespace ragbias::analysis
