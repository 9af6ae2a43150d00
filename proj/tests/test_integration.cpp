// Checks on the outputs of the default desk-scale pipeline run.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "styleforge/detector.hpp"
#include "styleforge/io.hpp"
#include "styleforge/model.hpp"
#include "styleforge/synfeat.hpp"

using namespace styleforge;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kRun = STYLEFORGE_DESK_RUN;

json read(const std::string& rel) { return io::read_json(kRun / rel); }

// words_per_sentence values keyed by (population, author).
std::map<std::pair<std::string, std::string>, std::vector<double>> sentence_lengths(const std::string& method) {
  std::map<std::pair<std::string, std::string>, std::vector<double>> out;
  for (const auto& row : io::read_jsonl(kRun / "synfeat/features.jsonl")) {
    const bool real = row.at("population") == "real";
    if (!real && row.at("method") != method) continue;
    out[{real ? "real" : "generated", row.at("author").get<std::string>()}].push_back(
        row.at("features").at("words_per_sentence").get<double>());
  }
  return out;
}

double jsd(const std::vector<double>& a, const std::vector<double>& b) {
  double lo = a.front(), hi = a.front();
  for (const auto* v : {&a, &b}) {
    for (double x : *v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  const auto edges = synfeat::equal_width_edges(lo, hi, 20);
  return synfeat::jensen_shannon(synfeat::bin_counts(a, edges), synfeat::bin_counts(b, edges));
}

}  // namespace

TEST_CASE("real test-split accuracy equals the detector's best epoch") {
  const auto report = read("finetune/detector/report.json");
  double best = 0.0;
  for (const auto& e : report.at("epochs")) best = std::max(best, e.at("test_accuracy").get<double>());
  const auto agreement = read("evaluate/real/agreement.json");
  CHECK(agreement.at("agreement_rate").get<double>() == doctest::Approx(best).epsilon(1e-12));
  CHECK(agreement.at("source") == "real_test");
}

TEST_CASE("every checkpoint carries the same tag scheme") {
  std::string hash;
  for (const char* dir : {"finetune/base", "finetune/fft", "finetune/lora", "finetune/detector"}) {
    const auto meta = read(std::string(dir) + "/config.json");
    if (hash.empty()) hash = meta.at("scheme_hash");
    CHECK(meta.at("scheme_hash") == hash);
  }
  const auto lora = read("finetune/lora/config.json");
  CHECK(lora.at("lora").at("rank") == 8);
  CHECK(lora.at("report").at("trainable_parameter_count").get<double>() <
        lora.at("report").at("parameter_count").get<double>());
}

TEST_CASE("generation met its plan") {
  for (const char* m : {"fft", "lora"}) {
    const auto report = read(std::string("generate/") + m + "/report.json");
    for (const auto& a : report.at("authors")) {
      INFO(m << " " << a.at("author"));
      CHECK(a.at("accepted") == 100);
    }
  }
}

TEST_CASE("generated sentence lengths are closer to their own author") {
  // Divergence of each author's generated sentence lengths from the same
  // author's real ones, against the mean over the other authors.
  const auto lengths = sentence_lengths("fft");
  const std::vector<std::string> authors = {"Dickens", "Austen", "Twain", "Alcott", "Melville"};
  double matched = 0.0, mismatched = 0.0;
  for (const auto& g : authors) {
    const auto& gen = lengths.at({"generated", g});
    for (const auto& r : authors) {
      const double d = jsd(lengths.at({"real", r}), gen);
      if (r == g) {
        matched += d / 5.0;
      } else {
        mismatched += d / 20.0;
      }
    }
  }
  MESSAGE("words_per_sentence JSD: own author " << matched << ", other authors " << mismatched);
  CHECK(matched < mismatched);
}

TEST_CASE("heatmaps satisfy completeness at the configured steps") {
  const auto s = read("explain/ig-gen/ig_heatmaps.json").at("summary");
  MESSAGE("worst relative completeness gap " << s.at("worst_relative_gap").get<double>() << " at "
                                             << s.at("steps").get<int>() << " steps");
  CHECK(s.at("worst_relative_gap").get<double>() <= 0.01);
}

// Expected to fail at desk scale: the seed words sit next to the generated
// tokens and draw most of the attribution.
TEST_CASE("tag attribution exceeds seed-word attribution" * doctest::may_fail()) {
  const auto s = read("explain/ig-gen/ig_heatmaps.json").at("summary");
  REQUIRE(s.at("with_seed_words").get<int>() > 0);
  const double tag = s.at("mean_tag_attribution");
  const double words = s.at("mean_seed_word_attribution");
  MESSAGE("mean tag attribution " << tag << ", seed words " << words << ", tag ahead in "
                                  << s.at("tag_beats_seed_words").get<int>() << "/"
                                  << s.at("with_seed_words").get<int>());
  CHECK(tag > words);
}

TEST_CASE("classifier token rankings are ordered and supported") {
  const auto top = read("explain/ig-cls/top_tokens.json");
  REQUIRE(top.at("rankings").size() == 5);
  for (const auto& r : top.at("rankings")) {
    const auto& tokens = r.at("tokens");
    CHECK(tokens.size() > 0);
    CHECK(tokens.size() <= 20);
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      CHECK(std::abs(tokens[i - 1].at("mean").get<double>()) >= std::abs(tokens[i].at("mean").get<double>()));
    }
    for (const auto& t : tokens) CHECK(t.at("support").get<int>() >= 3);
  }
}
