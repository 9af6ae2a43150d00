#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "styleforge/corpus.hpp"
#include "styleforge/rng.hpp"
#include "styleforge/synfeat.hpp"

// Deterministic stand-in for the novel corpus: a small probabilistic grammar
// per author that emits parse trees, rendered as Gutenberg-style plain-text
// books plus a parse sidecar.
namespace styleforge::fixture {

struct FixtureConfig {
  int sentences_per_author = 2200;
  int documents_per_author = 3;
  int max_tokens = 60;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static FixtureConfig from_json(const nlohmann::json& j);
};

struct FixtureSentence {
  int author = 0;
  std::string text;
  std::string parse;
};

struct FixtureCorpus {
  std::vector<corpus::Document> documents;
  std::vector<FixtureSentence> sentences;
};

// Number of built-in author grammars; scheme authors map to them by index.
int grammar_count();

// One sentence tree from author `author`'s grammar.
synfeat::ParseTree sample_tree(int author, Rng& rng);
// Sentence text for a tree: leaves joined with English spacing around
// punctuation and quotes.
std::string render(const synfeat::ParseTree& tree);

FixtureCorpus make_fixture(const FixtureConfig& config, const corpus::TagScheme& scheme);

// Writes DIR/<AuthorName>/<doc>.txt and DIR/parses.jsonl.
void write_fixture(const FixtureCorpus& fixture, const corpus::TagScheme& scheme, const std::filesystem::path& dir);

// Per-author sentence counts and content hashes.
nlohmann::json fixture_manifest(const FixtureCorpus& fixture, const corpus::TagScheme& scheme);

}  // namespace styleforge::fixture
