#include <benchmark/benchmark.h>

#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "ragbias/corpus.hpp"
#include "ragbias/retrieval.hpp"

namespace {

using namespace ragbias;

corpus::Collection synthetic_collection(std::size_t n_docs, std::size_t vocab,
                                        std::size_t words_per_doc) {
  std::mt19937_64 rng(7);
  std::vector<corpus::Document> docs;
  docs.reserve(n_docs);
  for (std::size_t i = 0; i < n_docs; ++i) {
    corpus::Document d;
    char buf[24];
    std::snprintf(buf, sizeof(buf), "d%06zu", i);
    d.id = buf;
    for (std::size_t w = 0; w < words_per_doc; ++w) {
      d.text += "w" + std::to_string(rng() % vocab) + " ";
    }
    d.category = corpus::BiasCategory::gender();
    d.polarity = (i % 2) ? corpus::Polarity::Stereotype
                         : corpus::Polarity::AntiStereotype;
    d.source = "bench";
    d.language = corpus::Language::en();
    docs.push_back(std::move(d));
  }
  corpus::CollectionSpec spec;
  spec.categories = {corpus::BiasCategory::gender()};
  spec.languages = {corpus::Language::en()};
  return corpus::build_collection(docs, spec);
}

void BM_SparseIndexBuild(benchmark::State& state) {
  const auto collection =
      synthetic_collection(static_cast<std::size_t>(state.range(0)), 2000, 12);
  for (auto _ : state) {
    retrieval::SparseIndex index(collection, {});
    benchmark::DoNotOptimize(index.doc_count());
  }
}
BENCHMARK(BM_SparseIndexBuild)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_SparseSearch(benchmark::State& state) {
  const auto collection =
      synthetic_collection(static_cast<std::size_t>(state.range(0)), 2000, 12);
  retrieval::SparseIndex index(collection, {});
  std::size_t q = 0;
  for (auto _ : state) {
    const std::string query =
        "w" + std::to_string(q % 2000) + " w" + std::to_string((q * 7) % 2000);
    benchmark::DoNotOptimize(index.search(query, 10));
    ++q;
  }
}
BENCHMARK(BM_SparseSearch)->Arg(10000)->Arg(60000);

void BM_DenseSearch(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const std::size_t dim = 64;
  std::mt19937_64 rng(3);
  retrieval::EmbeddingMatrix m;
  m.dim = dim;
  m.model_tag = "bench";
  std::vector<std::string> ids;
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> v(dim);
    for (auto& f : v) f = gauss(rng);
    m.vectors.push_back(std::move(v));
    ids.push_back("d" + std::to_string(i));
  }
  std::vector<float> query(dim);
  for (auto& f : query) f = gauss(rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(retrieval::dense_search(m, ids, query, 10));
  }
}
BENCHMARK(BM_DenseSearch)->Arg(10000)->Arg(65000);

}  // namespace
