#include <doctest.h>

#include <cmath>
#include <random>

#include "ragbias/analysis.hpp"
#include "ragbias/error.hpp"
#include "test_util.hpp"

using namespace ragbias;
using namespace ragbias::analysis;
using testutil::TempDir;
using testutil::make_doc;

TEST_CASE("relevance is the mean cosine similarity") {
  const std::vector<float> query = {1.0f, 0.0f};
  SUBCASE("identical docs give 1.0") {
    CHECK(relevance_score(query, {{2.0f, 0.0f}, {0.5f, 0.0f}}) ==
          doctest::Approx(1.0));
  }
  SUBCASE("cosines 0.9 and 0.7 average to 0.8") {
    const std::vector<std::vector<float>> docs = {
        {0.9f, std::sqrt(1.0f - 0.81f)}, {0.7f, std::sqrt(1.0f - 0.49f)}};
    CHECK(relevance_score(query, docs) == doctest::Approx(0.8).epsilon(1e-6));
  }
  SUBCASE("orthogonal docs give 0") {
    CHECK(relevance_score(query, {{0.0f, 3.0f}}) == doctest::Approx(0.0));
  }
  SUBCASE("zero vectors name the offender") {
    CHECK_THROWS_WITH_AS(relevance_score({0.0f, 0.0f}, {{1.0f, 0.0f}}),
                         doctest::Contains("query"), InputError);
    CHECK_THROWS_WITH_AS(relevance_score(query, {{1.0f, 0.0f}, {0.0f, 0.0f}}),
                         doctest::Contains("doc 1"), InputError);
  }
}

TEST_CASE("bias level parsing takes the first in-range integer") {
  CHECK(parse_bias_level("2") == 2);
  CHECK(parse_bias_level("-3") == -3);
  CHECK(parse_bias_level("+1 maybe") == 1);
  CHECK(parse_bias_level("score: -2 out of 3") == -2);
  CHECK(parse_bias_level("5") == std::nullopt);       // out of range
  CHECK(parse_bias_level("55 then 1") == 1);          // skips out-of-range
  CHECK(parse_bias_level("no digits") == std::nullopt);
}

namespace {

class ConstantJudge final : public generation::GeneratorHandle {
 public:
  explicit ConstantJudge(std::string reply) : reply_(std::move(reply)) {}
  std::string tag() const override { return "judge:" + reply_; }
  std::string generate(const generation::GenerationRequest&) override {
    return reply_;
  }

 private:
  std::string reply_;
};

}  // namespace

TEST_CASE("bias level scoring aggregates per-document judge calls") {
  SUBCASE("a judge replying 0 scores the set 0") {
    ConstantJudge judge("0");
    const auto result = bias_level_score(
        {make_doc("d1", "x", corpus::Polarity::Stereotype)}, judge, nullptr,
        "Rate: {document}");
    CHECK(result.score == doctest::Approx(0.0));
    CHECK(result.reliable);
  }
  SUBCASE("polarity judge on 3 stereo + 1 anti averages to +1") {
    PolarityJudgeBackend judge;
    std::vector<corpus::Document> docs = {
        make_doc("s1", "a", corpus::Polarity::Stereotype),
        make_doc("s2", "b", corpus::Polarity::Stereotype),
        make_doc("s3", "c", corpus::Polarity::Stereotype),
        make_doc("a1", "d", corpus::Polarity::AntiStereotype)};
    const auto result = bias_level_score(docs, judge, nullptr, "{document}");
    CHECK(result.score == doctest::Approx(1.0));
    CHECK(result.scored == 4);
    CHECK(result.excluded == 0);
  }
  SUBCASE("out-of-range replies are excluded and flagged past 20%") {
    ConstantJudge judge("5");
    std::vector<corpus::Document> docs = {
        make_doc("d1", "x", corpus::Polarity::Stereotype),
        make_doc("d2", "y", corpus::Polarity::Stereotype)};
    CHECK_THROWS_AS(bias_level_score(docs, judge, nullptr, "{document}"),
                    UndefinedMetricError);
  }
  SUBCASE("partial exclusions flip the reliability flag") {
    // First doc parses, the judge echoes the document text.
    class EchoJudge final : public generation::GeneratorHandle {
     public:
      std::string tag() const override { return "echo"; }
      std::string generate(const generation::GenerationRequest& r) override {
        return r.prompt.parts.docs.front().text;
      }
    } judge;
    std::vector<corpus::Document> docs = {
        make_doc("d1", "2", corpus::Polarity::Stereotype),
        make_doc("d2", "out of range 9", corpus::Polarity::Stereotype)};
    const auto result = bias_level_score(docs, judge, nullptr, "{document}");
    CHECK(result.scored == 1);
    CHECK(result.excluded == 1);
    CHECK_FALSE(result.reliable);  // 50% excluded
  }
}

TEST_CASE("harmonic impact reproduces the published trade-off rows") {
  // (relevance, bias_level) -> harmonic, within 1e-3 each.
  CHECK(std::abs(harmonic_impact(0.846, -0.198) - 0.320) <= 1e-3);
  CHECK(std::abs(harmonic_impact(0.842, -0.266) - 0.405) <= 1e-3);
  CHECK(std::abs(harmonic_impact(0.835, -0.384) - 0.526) <= 1e-3);
  CHECK(std::abs(harmonic_impact(0.829, -0.377) - 0.518) <= 1e-3);
  CHECK(std::abs(harmonic_impact(0.818, -0.384) - 0.523) <= 1e-3);
}

TEST_CASE("harmonic impact edge behavior and bounds") {
  CHECK(harmonic_impact(0.5, 0.0) == doctest::Approx(0.0));
  CHECK(harmonic_impact(0.0, -2.0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(harmonic_impact(-0.1, 1.0), InputError);
  // Symmetric in (r, |b|): h(r, b) == h(|b|, r) for positive pairs.
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const double r = 0.01 + double(rng() % 100) / 100.0;
    const double b = -3.0 + double(rng() % 601) / 100.0;
    const double h = harmonic_impact(r, b);
    CHECK(h == doctest::Approx(harmonic_impact(std::abs(b), r)));
    CHECK(h <= std::min(2.0 * r, 2.0 * std::abs(b)) + 1e-12);
    CHECK(h <= std::max(r, std::abs(b)) + 1e-12);
  }
}

TEST_CASE("spearman hand-computed values") {
  CHECK(spearman_rho({1, 2, 3, 4}, {1, 2, 3, 4}) == doctest::Approx(1.0));
  CHECK(spearman_rho({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman_rho({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8));
  // Tied values take average ranks: hand-computed 1.5/sqrt(1.5*2).
  CHECK(spearman_rho({1, 1, 2}, {1, 2, 3}) ==
        doctest::Approx(1.5 / std::sqrt(3.0)));
}

TEST_CASE("spearman errors name the degenerate side") {
  CHECK_THROWS_WITH_AS(spearman_rho({1, 1, 1}, {1, 2, 3}),
                       doctest::Contains("xs"), UndefinedMetricError);
  CHECK_THROWS_WITH_AS(spearman_rho({1, 2, 3}, {2, 2, 2}),
                       doctest::Contains("ys"), UndefinedMetricError);
  CHECK_THROWS_AS(spearman_rho({1, 2}, {1, 2}), InputError);
}

TEST_CASE("spearman is invariant under strictly monotone transforms") {
  std::mt19937_64 rng(17);
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<double> xs, ys;
    const std::size_t n = 4 + rng() % 20;
    for (std::size_t i = 0; i < n; ++i) {
      xs.push_back(double(rng() % 1000));
      ys.push_back(double(rng() % 1000));
    }
    double rho;
    try {
      rho = spearman_rho(xs, ys);
    } catch (const UndefinedMetricError&) {
      continue;
    }
    auto squash = [](double v) { return std::exp(v / 1000.0) + v * 3.0; };
    std::vector<double> xs2, ys2;
    for (double v : xs) xs2.push_back(squash(v));
    for (double v : ys) ys2.push_back(v * 7.0 - 2.0);
    CHECK(spearman_rho(xs2, ys2) == doctest::Approx(rho));
  }
}

TEST_CASE("tradeoff table emits the published column layout") {
  std::vector<TradeoffRow> rows = {{3, 0.846, -0.198, 0.320},
                                   {10, 0.835, -0.384, 0.526}};
  const auto csv = tradeoff_to_csv(rows);
  CHECK(csv.rfind("k,relevance,bias_level,harmonic\n", 0) == 0);
  CHECK(csv.find("3,0.846000,-0.198000,0.320000") != std::string::npos);
}
