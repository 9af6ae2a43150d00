#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

namespace styleforge::corpus {

using nlohmann::json;

struct AuthorId {
  int index = 0;
  std::string name;
};

// Bijection between authors and their single-token tags, plus the tag that
// terminates every training string.
class TagScheme {
 public:
  TagScheme(std::vector<AuthorId> authors, std::vector<std::string> author_tags,
            std::string end_tag);

  // Dickens=<0>, Austen=<1>, Twain=<2>, Alcott=<3>, Melville=<4>, end=<end>.
  static TagScheme default_scheme();
  static TagScheme from_json(const json& j);
  json to_json() const;

  int author_count() const { return static_cast<int>(authors_.size()); }
  const std::vector<AuthorId>& authors() const { return authors_; }
  const AuthorId& author(int index) const;
  const std::string& tag_for(int author) const;
  const std::string& end_tag() const { return end_tag_; }

  // Author tags in index order followed by the end tag.
  std::vector<std::string> all_tags() const;
  std::optional<int> author_for_tag(std::string_view tag) const;
  std::optional<int> author_by_name(std::string_view name) const;

  bool contains_any_tag(std::string_view text) const;

  // Stable content hash, recorded in checkpoints so a model is never paired
  // with a different tag mapping.
  std::string hash() const;

 private:
  std::vector<AuthorId> authors_;
  std::vector<std::string> author_tags_;
  std::string end_tag_;
};

enum class Split { kTrain, kTest };
const char* to_string(Split split);

struct SentenceRecord {
  std::string text;
  int author = 0;
  Split split = Split::kTrain;
  std::string source_doc;
  std::optional<std::string> parse;
  int word_count = 0;
};

json to_json(const SentenceRecord& record, const TagScheme& scheme);
SentenceRecord record_from_json(const json& j);

struct Corpus {
  std::vector<SentenceRecord> records;
  TagScheme scheme = TagScheme::default_scheme();
  // source_doc -> sha256 of the raw document.
  std::map<std::string, std::string> provenance;
  // reason -> number of sentences dropped.
  std::map<std::string, std::int64_t> rejections;

  std::vector<std::int64_t> author_counts() const;
  std::vector<std::int64_t> author_counts(Split split) const;
  std::vector<SentenceRecord> subset(Split split) const;
};

// ---------------------------------------------------------------------------
// Text cleaning and segmentation

struct CleanConfig {
  // ECMAScript regexes matched against single lines. Content is taken from
  // the line after the start marker up to the line before the end marker.
  std::string start_marker = R"(^\s*\*\*\*\s*START\b.*\*\*\*\s*$)";
  std::string end_marker = R"(^\s*\*\*\*\s*END\b.*\*\*\*\s*$)";
  // Whole lines matching any of these are dropped (chapter headings etc.).
  std::vector<std::string> drop_lines = {
      R"(^\s*(CHAPTER|Chapter|BOOK|Book|VOLUME|Volume|PART|Part)\s+[IVXLCDM0-9]+\.?\s*$)"};
  // Strict: both markers must be present.
  bool strict = false;
};

std::string clean_text(std::string_view raw, const CleanConfig& config = {});

// Word-level tokens: runs of letters/digits (with inner apostrophes or
// hyphens) are one token, every other non-space character is its own token.
std::vector<std::string> word_tokens(std::string_view text);
bool is_word_token(std::string_view token);
// Number of tokens that are not punctuation-only.
int word_count(std::string_view text);

class Segmenter {
 public:
  // Built-in abbreviation guard list.
  Segmenter();
  explicit Segmenter(std::unordered_set<std::string> abbreviations);
  // One abbreviation per line, '#' starts a comment.
  static Segmenter from_file(const std::filesystem::path& path);

  // Splits whitespace-normalized text into sentences. Joining the result
  // with single spaces reproduces the input.
  std::vector<std::string> segment(std::string_view clean) const;

  bool is_abbreviation(std::string_view word_with_period) const;

 private:
  std::unordered_set<std::string> abbreviations_;
};

std::vector<std::string> segment(std::string_view clean);

// ---------------------------------------------------------------------------
// Parse annotations

class ParseProvider {
 public:
  virtual ~ParseProvider() = default;
  virtual std::optional<std::string> parse(std::string_view sentence) const = 0;
};

// Looks sentences up in a JSON-lines sidecar of {"text": ..., "parse": ...}.
class SidecarParseProvider : public ParseProvider {
 public:
  SidecarParseProvider() = default;
  static SidecarParseProvider from_file(const std::filesystem::path& path);
  void add(std::string text, std::string parse);
  std::optional<std::string> parse(std::string_view sentence) const override;
  std::size_t size() const { return table_.size(); }

 private:
  std::unordered_map<std::string, std::string> table_;
};

// ---------------------------------------------------------------------------
// Corpus assembly

struct Document {
  int author = 0;
  std::string source_doc;
  std::string raw;
};

struct CorpusConfig {
  CleanConfig clean;
  int min_words = 3;
  int max_words = 128;
};

Corpus build_corpus(const std::vector<Document>& docs, const TagScheme& scheme,
                    const CorpusConfig& config = {}, const Segmenter& segmenter = Segmenter(),
                    const ParseProvider* parses = nullptr);

// Stratified per author: each author contributes round(test_fraction * n)
// test records. Deterministic in rng_seed.
Corpus split_corpus(const Corpus& corpus, double test_fraction, std::uint64_t rng_seed);

// "<tag> text <end>"
std::string format_example(const SentenceRecord& record, const TagScheme& scheme);
// Removes every scheme tag and re-normalizes whitespace.
std::string strip_tags(std::string_view text, const TagScheme& scheme);
// Collapses whitespace runs to single spaces and trims.
std::string normalize_whitespace(std::string_view text);

// Strict UTF-8: no overlong forms, surrogates or code points past U+10FFFF.
bool is_valid_utf8(std::string_view text);

// Checks the corpus invariants; throws Error on violation.
void validate(const Corpus& corpus);

// corpus.jsonl, manifest.json and scheme.json under `dir`.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);
json manifest(const Corpus& corpus);

// Reads `dir/<AuthorName>/*.txt` for every author of the scheme, in sorted
// path order. Author directory names match case-insensitively.
std::vector<Document> read_documents(const std::filesystem::path& dir, const TagScheme& scheme);

}  // namespace styleforge::corpus
