#include <doctest.h>

#include <nlohmann/json.hpp>

#include "ragbias/bbq.hpp"
#include "ragbias/error.hpp"
#include "ragbias/io.hpp"
#include "test_util.hpp"

using namespace ragbias;
using namespace ragbias::bbq;
using nlohmann::json;
using testutil::TempDir;

namespace {

json instance_json(const std::string& id, const std::string& polarity,
                   std::vector<std::array<std::string, 3>> options = {
                       {"A", "The woman", "stereo_aligned"},
                       {"B", "The man", "counter_aligned"},
                       {"C", "Not enough information", "unknown"}}) {
  json opts = json::array();
  for (const auto& [letter, text, role] : options) {
    opts.push_back({{"letter", letter}, {"text", text}, {"role", role}});
  }
  return json{{"id", id},
              {"category", "gender"},
              {"language", "en"},
              {"question", "Who was the secretary?"},
              {"ambiguous_context", "A man and a woman arrived."},
              {"disambiguated_context", "The woman ran the meeting."},
              {"context_polarity", polarity},
              {"options", opts}};
}

std::string lines_of(const std::vector<json>& objs) {
  std::string out;
  for (const auto& j : objs) out += j.dump() + "\n";
  return out;
}

}  // namespace

TEST_CASE("valid fixture loads with zero rejects") {
  TempDir dir;
  const auto file = dir / "bbq.jsonl";
  write_file(file, lines_of({instance_json("q1", "stereotyped"),
                             instance_json("q2", "counter_stereotyped"),
                             instance_json("q3", "stereotyped"),
                             instance_json("q4", "counter_stereotyped")}));
  const auto result = load_bbq(file);
  CHECK(result.instances.size() == 4);
  CHECK(result.rejects.empty());
  for (const auto& inst : result.instances) {
    // Role bijection holds on every loaded instance.
    CHECK(inst.letter_with_role(OptionRole::StereoAligned) == OptionLetter::A);
    CHECK(inst.letter_with_role(OptionRole::CounterAligned) == OptionLetter::B);
    CHECK(inst.letter_with_role(OptionRole::Unknown) == OptionLetter::C);
  }
}

TEST_CASE("two unknown options reject the instance with a named violation") {
  TempDir dir;
  const auto file = dir / "bbq.jsonl";
  std::vector<json> objs;
  // 20 valid instances keep the reject rate under the fatal 5% threshold...
  for (int i = 0; i < 20; ++i) {
    objs.push_back(instance_json("ok" + std::to_string(i), "stereotyped"));
  }
  objs.push_back(instance_json("bad", "stereotyped",
                               {{{"A", "The woman", "unknown"},
                                 {"B", "The man", "counter_aligned"},
                                 {"C", "Not enough information", "unknown"}}}));
  write_file(file, lines_of(objs));
  const auto result = load_bbq(file);
  CHECK(result.instances.size() == 20);
  REQUIRE(result.rejects.size() == 1);
  CHECK(result.rejects[0].id == "bad");
  CHECK(result.rejects[0].reason ==
        "option roles are not a bijection onto "
        "{stereo_aligned, counter_aligned, unknown}");
}

TEST_CASE("duplicate instance ids are rejected") {
  TempDir dir;
  const auto file = dir / "bbq.jsonl";
  std::vector<json> objs;
  for (int i = 0; i < 20; ++i) {
    objs.push_back(instance_json("ok" + std::to_string(i), "stereotyped"));
  }
  objs.push_back(instance_json("ok0", "counter_stereotyped"));
  write_file(file, lines_of(objs));
  const auto result = load_bbq(file);
  CHECK(result.instances.size() == 20);
  REQUIRE(result.rejects.size() == 1);
  CHECK(result.rejects[0].reason == "duplicate instance id");
}

TEST_CASE("more than 5% rejects is fatal") {
  TempDir dir;
  const auto file = dir / "bbq.jsonl";
  write_file(file, lines_of({instance_json("ok", "stereotyped"),
                             instance_json("bad", "stereotyped",
                                           {{{"A", "x", "unknown"},
                                             {"B", "y", "unknown"},
                                             {"C", "z", "unknown"}}})}));
  CHECK_THROWS_AS(load_bbq(file), InputError);
}

TEST_CASE("shuffled option letters keep their text binding") {
  TempDir dir;
  const auto file = dir / "bbq.jsonl";
  write_file(file, lines_of({instance_json(
                       "q1", "stereotyped",
                       {{{"B", "The man", "counter_aligned"},
                         {"C", "Not enough information", "unknown"},
                         {"A", "The woman", "stereo_aligned"}}})}));
  const auto result = load_bbq(file);
  REQUIRE(result.instances.size() == 1);
  const auto& inst = result.instances[0];
  // File order is preserved; each letter still maps to its own text.
  CHECK(inst.options[0].letter == OptionLetter::B);
  CHECK(inst.options[0].text == "The man");
  CHECK(inst.options[2].letter == OptionLetter::A);
  CHECK(inst.letter_with_role(OptionRole::Unknown) == OptionLetter::C);
}

TEST_CASE("correct answers follow the view and context polarity") {
  const auto stereo_ctx =
      testutil::make_instance("s", ContextPolarity::Stereotyped);
  CHECK(stereo_ctx.correct_letter(ContextView::Ambiguous) == OptionLetter::C);
  CHECK(stereo_ctx.correct_letter(ContextView::Disambiguated) == OptionLetter::A);
  const auto counter_ctx =
      testutil::make_instance("c", ContextPolarity::CounterStereotyped);
  CHECK(counter_ctx.correct_letter(ContextView::Disambiguated) == OptionLetter::B);
}

TEST_CASE("pair split counts strata and conserves instances") {
  std::vector<BbqInstance> instances;
  for (int i = 0; i < 6; ++i) {
    instances.push_back(testutil::make_instance("s" + std::to_string(i),
                                                ContextPolarity::Stereotyped));
  }
  for (int i = 0; i < 4; ++i) {
    instances.push_back(testutil::make_instance(
        "c" + std::to_string(i), ContextPolarity::CounterStereotyped));
  }
  const auto split = pair_split(instances);
  CHECK(split.ambiguous.size() == 10);
  CHECK(split.disambiguated.size() == 10);
  CHECK(split.n_stereotyped == 6);
  CHECK(split.n_counter_stereotyped == 4);

  const auto empty = pair_split({});
  CHECK(empty.ambiguous.empty());
  CHECK(empty.disambiguated.empty());
  CHECK(empty.n_stereotyped == 0);

  std::vector<BbqInstance> balanced = {
      testutil::make_instance("a", ContextPolarity::Stereotyped),
      testutil::make_instance("b", ContextPolarity::CounterStereotyped)};
  const auto bsplit = pair_split(balanced);
  CHECK(bsplit.n_stereotyped == bsplit.n_counter_stereotyped);
}
