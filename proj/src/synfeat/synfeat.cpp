#include "styleforge/synfeat.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>

#include "styleforge/error.hpp"
#include "styleforge/io.hpp"

namespace styleforge::synfeat {

namespace {

[[noreturn]] void malformed(const std::string& why) {
  throw Error(ErrorKind::kMalformedTree, "malformed tree: " + why);
}

class Reader {
 public:
  explicit Reader(std::string_view s) : s_(s) {}

  ParseTree read_root() {
    skip_space();
    if (at_end()) malformed("empty input");
    if (s_[pos_] != '(') malformed("expected '('");
    ParseTree tree = read_node();
    skip_space();
    if (!at_end()) malformed("trailing text after tree");
    return tree;
  }

 private:
  bool at_end() const { return pos_ >= s_.size(); }

  void skip_space() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  std::string read_atom() {
    const std::size_t start = pos_;
    while (!at_end() && s_[pos_] != '(' && s_[pos_] != ')' && !std::isspace(static_cast<unsigned char>(s_[pos_]))) {
      ++pos_;
    }
    return std::string(s_.substr(start, pos_ - start));
  }

  ParseTree read_node() {
    ++pos_;  // '('
    if (++depth_ > 10000) malformed("nesting too deep");
    skip_space();
    ParseTree node;
    if (!at_end() && s_[pos_] != '(' && s_[pos_] != ')') node.label = read_atom();
    for (;;) {
      skip_space();
      if (at_end()) malformed("unbalanced parentheses");
      if (s_[pos_] == ')') {
        ++pos_;
        break;
      }
      if (s_[pos_] == '(') {
        node.children.push_back(read_node());
      } else {
        node.children.push_back(ParseTree::terminal(read_atom()));
      }
    }
    if (node.children.empty()) malformed("node without children");
    --depth_;
    return node;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  int depth_ = 0;
};

void serialize_into(const ParseTree& t, std::string& out) {
  if (t.is_terminal()) {
    out += t.token;
    return;
  }
  out += '(';
  out += t.label;
  for (const auto& c : t.children) {
    out += ' ';
    serialize_into(c, out);
  }
  out += ')';
}

void collect_leaves(const ParseTree& t, std::vector<std::string>& out) {
  if (t.is_terminal()) {
    out.push_back(t.token);
    return;
  }
  for (const auto& c : t.children) collect_leaves(c, out);
}

struct Counts {
  int nodes = 0;
  int preterminals = 0;
  int phrasal = 0;
  int phrasal_children = 0;
  int clauses = 0;
  std::map<std::string, int> phrasal_labels;
};

bool is_clause_label(const std::string& label) {
  return label == "S" || label == "SINV" || label == "SQ" || label == "SBARQ";
}

void count(const ParseTree& t, Counts& c) {
  ++c.nodes;
  if (t.is_terminal()) return;
  if (t.is_preterminal()) {
    ++c.preterminals;
  } else {
    ++c.phrasal;
    c.phrasal_children += static_cast<int>(t.children.size());
    const std::string base = base_label(t.label);
    ++c.phrasal_labels[base];
    if (is_clause_label(base)) ++c.clauses;
  }
  for (const auto& ch : t.children) count(ch, c);
}

double percent(const Counts& c, const std::string& label) {
  if (c.phrasal == 0) return 0.0;
  const auto it = c.phrasal_labels.find(label);
  const int n = it == c.phrasal_labels.end() ? 0 : it->second;
  return 100.0 * n / c.phrasal;
}

std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

int quote_marks(std::string_view s) {
  int n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') {
      ++n;
    } else if (s.compare(i, 3, "\xE2\x80\x9C") == 0 || s.compare(i, 3, "\xE2\x80\x9D") == 0) {
      ++n;
      i += 2;
    }
  }
  return n;
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

bool ParseTree::is_preterminal() const {
  if (children.empty()) return false;
  return std::all_of(children.begin(), children.end(), [](const ParseTree& c) { return c.is_terminal(); });
}

ParseTree ParseTree::terminal(std::string token) {
  ParseTree t;
  t.token = std::move(token);
  return t;
}

ParseTree ParseTree::node(std::string label, std::vector<ParseTree> children) {
  ParseTree t;
  t.label = std::move(label);
  t.children = std::move(children);
  return t;
}

ParseTree parse_tree_from_bracketed(std::string_view s) { return Reader(s).read_root(); }

std::string serialize(const ParseTree& tree) {
  std::string out;
  serialize_into(tree, out);
  return out;
}

std::vector<std::string> leaves(const ParseTree& tree) {
  std::vector<std::string> out;
  collect_leaves(tree, out);
  return out;
}

std::string base_label(std::string_view label) {
  // "-NONE-", "-LRB-" and friends keep their dashes.
  if (label.empty() || label.front() == '-') return std::string(label);
  const auto cut = label.find_first_of("-=");
  return std::string(label.substr(0, cut));
}

int longest_path(const ParseTree& tree) {
  if (tree.is_terminal()) return 0;
  int best = 0;
  for (const auto& c : tree.children) best = std::max(best, longest_path(c));
  return best + 1;
}

double pp_percentage(const ParseTree& tree) { return phrase_percentage(tree, "PP"); }

double phrase_percentage(const ParseTree& tree, std::string_view label) {
  Counts c;
  count(tree, c);
  return percent(c, std::string(label));
}

// ---------------------------------------------------------------------------
// Registry. Order and wording are part of the registry hash.

const std::array<FeatureSpec, kFeatureCount>& feature_registry() {
  static const std::array<FeatureSpec, kFeatureCount> registry = {{
      {"words_per_sentence", FeatureSource::kText, "tokens that are not punctuation-only"},
      {"pp_percentage", FeatureSource::kTree, "100 * PP / phrasal constituents"},
      {"longest_parse_path", FeatureSource::kTree, "edges on the longest root-to-leaf path"},
      {"char_length", FeatureSource::kText, "sentence length in characters"},
      {"clause_count", FeatureSource::kTree, "constituents labelled S, SINV, SQ or SBARQ"},
      {"np_percentage", FeatureSource::kTree, "100 * NP / phrasal constituents"},
      {"vp_percentage", FeatureSource::kTree, "100 * VP / phrasal constituents"},
      {"adjp_percentage", FeatureSource::kTree, "100 * ADJP / phrasal constituents"},
      {"advp_percentage", FeatureSource::kTree, "100 * ADVP / phrasal constituents"},
      {"sbar_percentage", FeatureSource::kTree, "100 * SBAR / phrasal constituents"},
      {"mean_branching_factor", FeatureSource::kTree, "mean child count of phrasal constituents"},
      {"node_count", FeatureSource::kTree, "all nodes including terminals"},
      {"preterminal_count", FeatureSource::kTree, "part-of-speech nodes"},
      {"comma_count", FeatureSource::kText, "comma characters"},
      {"quote_count", FeatureSource::kText, "double quotation marks"},
      {"type_token_ratio", FeatureSource::kText, "distinct lowercased words / words"},
  }};
  return registry;
}

std::string registry_hash() {
  json j = json::array();
  for (const auto& f : feature_registry()) {
    j.push_back({f.name, f.source == FeatureSource::kText ? "text" : "tree", f.description});
  }
  return io::sha256_hex(j.dump());
}

std::optional<std::size_t> feature_index(std::string_view name) {
  const auto& reg = feature_registry();
  for (std::size_t i = 0; i < reg.size(); ++i) {
    if (reg[i].name == name) return i;
  }
  return std::nullopt;
}

std::optional<double> FeatureVector::get(std::string_view name) const {
  const auto i = feature_index(name);
  if (!i) throw Error(ErrorKind::kInvalidArgument, "unknown feature " + std::string(name));
  if (!present[*i]) return std::nullopt;
  return values[*i];
}

json FeatureVector::to_json() const {
  json j = json::object();
  const auto& reg = feature_registry();
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    if (present[i]) {
      j[reg[i].name] = values[i];
    } else {
      j[reg[i].name] = nullptr;
    }
  }
  return j;
}

FeatureVector feature_vector(std::string_view text, const ParseTree* tree) {
  FeatureVector fv;
  auto set = [&](const char* name, double v) {
    const auto i = *feature_index(name);
    fv.values[i] = v;
    fv.present[i] = true;
  };

  const auto tokens = corpus::word_tokens(text);
  std::set<std::string> types;
  int words = 0;
  for (const auto& t : tokens) {
    if (!corpus::is_word_token(t)) continue;
    ++words;
    types.insert(lower(t));
  }
  set("words_per_sentence", words);
  set("char_length", static_cast<double>(utf8_length(text)));
  set("comma_count", static_cast<double>(std::count(text.begin(), text.end(), ',')));
  set("quote_count", quote_marks(text));
  set("type_token_ratio", words == 0 ? 0.0 : static_cast<double>(types.size()) / words);

  if (tree) {
    Counts c;
    count(*tree, c);
    set("pp_percentage", percent(c, "PP"));
    set("longest_parse_path", longest_path(*tree));
    set("clause_count", c.clauses);
    set("np_percentage", percent(c, "NP"));
    set("vp_percentage", percent(c, "VP"));
    set("adjp_percentage", percent(c, "ADJP"));
    set("advp_percentage", percent(c, "ADVP"));
    set("sbar_percentage", percent(c, "SBAR"));
    set("mean_branching_factor", c.phrasal == 0 ? 0.0 : static_cast<double>(c.phrasal_children) / c.phrasal);
    set("node_count", c.nodes);
    set("preterminal_count", c.preterminals);
  }
  return fv;
}

FeatureVector feature_vector(const corpus::SentenceRecord& record) {
  if (!record.parse) return feature_vector(record.text, nullptr);
  const ParseTree tree = parse_tree_from_bracketed(*record.parse);
  return feature_vector(record.text, &tree);
}

// ---------------------------------------------------------------------------
// Histograms

std::int64_t Histogram::total() const {
  std::int64_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

json Histogram::to_json() const {
  return {{"feature", feature}, {"population", population}, {"author", author},
          {"edges", edges},     {"counts", counts},         {"total", total()}};
}

std::vector<double> equal_width_edges(double lo, double hi, int bins) {
  if (bins < 1) throw Error(ErrorKind::kInvalidArgument, "bins must be >= 1");
  if (!std::isfinite(lo) || !std::isfinite(hi) || hi < lo) {
    throw Error(ErrorKind::kInvalidArgument, "bad histogram range");
  }
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  std::vector<double> edges(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) edges[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / bins;
  edges.back() = hi;
  return edges;
}

std::vector<std::int64_t> bin_counts(const std::vector<double>& values, const std::vector<double>& edges) {
  if (edges.size() < 2) throw Error(ErrorKind::kInvalidArgument, "need at least two edges");
  const std::size_t bins = edges.size() - 1;
  std::vector<std::int64_t> counts(bins, 0);
  for (double v : values) {
    if (v < edges.front() || v > edges.back()) {
      throw Error(ErrorKind::kInvalidArgument, "value outside histogram range");
    }
    auto it = std::upper_bound(edges.begin(), edges.end(), v);
    std::size_t bin = static_cast<std::size_t>(it - edges.begin());
    bin = bin == 0 ? 0 : bin - 1;
    if (bin >= bins) bin = bins - 1;
    ++counts[bin];
  }
  return counts;
}

double jensen_shannon(const std::vector<std::int64_t>& p, const std::vector<std::int64_t>& q) {
  if (p.size() != q.size()) throw Error(ErrorKind::kInvalidArgument, "histograms differ in length");
  double np = 0.0, nq = 0.0;
  for (auto v : p) np += static_cast<double>(v);
  for (auto v : q) nq += static_cast<double>(v);
  if (np <= 0.0 || nq <= 0.0) throw Error(ErrorKind::kInvalidArgument, "empty histogram");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = static_cast<double>(p[i]) / np;
    const double b = static_cast<double>(q[i]) / nq;
    const double m = 0.5 * (a + b);
    if (a > 0.0) js += 0.5 * a * std::log(a / m);
    if (b > 0.0) js += 0.5 * b * std::log(b / m);
  }
  return std::clamp(js, 0.0, std::log(2.0));
}

Comparison compare(const std::vector<FeatureVector>& real, const std::vector<FeatureVector>& generated,
                   std::string_view feature, int bins) {
  const auto idx = feature_index(feature);
  if (!idx) throw Error(ErrorKind::kInvalidArgument, "unknown feature " + std::string(feature));
  auto values = [&](const std::vector<FeatureVector>& pop) {
    std::vector<double> out;
    for (const auto& fv : pop) {
      if (fv.present[*idx]) out.push_back(fv.values[*idx]);
    }
    return out;
  };
  const auto r = values(real);
  const auto g = values(generated);
  if (r.empty() || g.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "no values for feature " + std::string(feature) + " in a population");
  }
  const auto [rlo, rhi] = std::minmax_element(r.begin(), r.end());
  const auto [glo, ghi] = std::minmax_element(g.begin(), g.end());
  const auto edges = equal_width_edges(std::min(*rlo, *glo), std::max(*rhi, *ghi), bins);

  Comparison c;
  c.real = {std::string(feature), "real", "all", edges, bin_counts(r, edges)};
  c.generated = {std::string(feature), "generated", "all", edges, bin_counts(g, edges)};
  c.divergence = jensen_shannon(c.real.counts, c.generated.counts);
  return c;
}

}  // namespace styleforge::synfeat
