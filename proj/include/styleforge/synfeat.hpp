#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "styleforge/corpus.hpp"

namespace styleforge::synfeat {

using nlohmann::json;

// Constituency tree. A terminal carries a token and has no children; every
// other node has a label and at least one child.
struct ParseTree {
  std::string label;
  std::string token;
  std::vector<ParseTree> children;

  bool is_terminal() const { return children.empty(); }
  // A non-terminal whose children are all terminals, e.g. (DT The).
  bool is_preterminal() const;

  static ParseTree terminal(std::string token);
  static ParseTree node(std::string label, std::vector<ParseTree> children);
};

// Reads a Penn-style bracketing. Throws kMalformedTree.
ParseTree parse_tree_from_bracketed(std::string_view s);
// Canonical single-space bracketing.
std::string serialize(const ParseTree& tree);
std::vector<std::string> leaves(const ParseTree& tree);

// Label without function tags or indices: "NP-SBJ-1" -> "NP".
std::string base_label(std::string_view label);

// Edges on the longest root-to-leaf path.
int longest_path(const ParseTree& tree);
// 100 * PP constituents / phrasal constituents (non-terminals that are not
// pre-terminals); 0 when there are none.
double pp_percentage(const ParseTree& tree);
double phrase_percentage(const ParseTree& tree, std::string_view label);

enum class FeatureSource { kText, kTree };

struct FeatureSpec {
  std::string name;
  FeatureSource source;
  std::string description;
};

constexpr std::size_t kFeatureCount = 16;

const std::array<FeatureSpec, kFeatureCount>& feature_registry();
// sha256 over the registry names, sources and descriptions.
std::string registry_hash();
std::optional<std::size_t> feature_index(std::string_view name);

struct FeatureVector {
  std::array<double, kFeatureCount> values{};
  // Tree features are absent when the record has no parse.
  std::array<bool, kFeatureCount> present{};

  std::optional<double> get(std::string_view name) const;
  json to_json() const;
};

FeatureVector feature_vector(std::string_view text, const ParseTree* tree);
// Parses record.parse when present; a malformed parse propagates the error.
FeatureVector feature_vector(const corpus::SentenceRecord& record);

struct Histogram {
  std::string feature;
  std::string population;  // "real" or "generated"
  std::string author;      // author name, or "all"
  std::vector<double> edges;
  std::vector<std::int64_t> counts;

  std::int64_t total() const;
  json to_json() const;
};

// Equal-width edges over [lo, hi]; a degenerate range is widened by 0.5 on
// both sides.
std::vector<double> equal_width_edges(double lo, double hi, int bins);
// Counts into the bins defined by `edges`; the last bin is closed.
std::vector<std::int64_t> bin_counts(const std::vector<double>& values, const std::vector<double>& edges);

// Jensen-Shannon divergence (natural log) of two count vectors after
// normalization. Range [0, ln 2].
double jensen_shannon(const std::vector<std::int64_t>& p, const std::vector<std::int64_t>& q);

struct Comparison {
  Histogram real;
  Histogram generated;
  double divergence = 0.0;
};

// Shared bins over the pooled range of present values. Throws
// kInvalidArgument when either population has no value for the feature.
Comparison compare(const std::vector<FeatureVector>& real, const std::vector<FeatureVector>& generated,
                   std::string_view feature, int bins = 20);

}  // namespace styleforge::synfeat
