#include "styleforge/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "styleforge/error.hpp"
#include "styleforge/io.hpp"
#include "styleforge/rng.hpp"

namespace styleforge::corpus {

namespace {

#include "abbreviations.inc"

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> split_lines(std::string_view raw) {
  std::vector<std::string> lines;
  std::string current;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const char c = raw[i];
    if (c == '\r') {
      if (i + 1 < raw.size() && raw[i + 1] == '\n') ++i;
      lines.push_back(std::move(current));
      current.clear();
    } else if (c == '\n') {
      lines.push_back(std::move(current));
      current.clear();
    } else {
      current += c;
    }
  }
  lines.push_back(std::move(current));
  return lines;
}

bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }
bool is_opener(char c) { return c == '"' || c == '\'' || c == '(' || c == '['; }

}  // namespace

// ---------------------------------------------------------------------------
// TagScheme

TagScheme::TagScheme(std::vector<AuthorId> authors, std::vector<std::string> author_tags,
                     std::string end_tag)
    : authors_(std::move(authors)), author_tags_(std::move(author_tags)), end_tag_(std::move(end_tag)) {
  if (authors_.empty() || authors_.size() != author_tags_.size()) {
    throw Error(ErrorKind::kInvalidArgument, "tag scheme needs one tag per author");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < authors_.size(); ++i) {
    if (authors_[i].index != static_cast<int>(i)) {
      throw Error(ErrorKind::kInvalidArgument, "author indices must be 0..n-1 in order");
    }
  }
  auto check = [&](const std::string& tag) {
    if (tag.empty() || std::any_of(tag.begin(), tag.end(), is_space)) {
      throw Error(ErrorKind::kInvalidArgument, "tag must be non-empty without whitespace: '" + tag + "'");
    }
    if (!seen.insert(tag).second) {
      throw Error(ErrorKind::kInvalidArgument, "duplicate tag " + tag);
    }
  };
  for (const auto& t : author_tags_) check(t);
  check(end_tag_);
}

TagScheme TagScheme::default_scheme() {
  return TagScheme({{0, "Dickens"}, {1, "Austen"}, {2, "Twain"}, {3, "Alcott"}, {4, "Melville"}},
                   {"<0>", "<1>", "<2>", "<3>", "<4>"}, "<end>");
}

TagScheme TagScheme::from_json(const json& j) {
  std::vector<AuthorId> authors;
  std::vector<std::string> tags;
  for (const auto& a : j.at("authors")) {
    authors.push_back({a.at("index").get<int>(), a.at("name").get<std::string>()});
    tags.push_back(a.at("tag").get<std::string>());
  }
  std::vector<std::size_t> order(authors.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return authors[a].index < authors[b].index; });
  std::vector<AuthorId> sorted_authors;
  std::vector<std::string> sorted_tags;
  for (auto i : order) {
    sorted_authors.push_back(authors[i]);
    sorted_tags.push_back(tags[i]);
  }
  return TagScheme(std::move(sorted_authors), std::move(sorted_tags), j.at("end_tag").get<std::string>());
}

json TagScheme::to_json() const {
  json authors = json::array();
  for (std::size_t i = 0; i < authors_.size(); ++i) {
    authors.push_back({{"index", authors_[i].index}, {"name", authors_[i].name}, {"tag", author_tags_[i]}});
  }
  return {{"authors", authors}, {"end_tag", end_tag_}};
}

const AuthorId& TagScheme::author(int index) const {
  if (index < 0 || index >= author_count()) {
    throw Error(ErrorKind::kInvalidArgument, "author index out of range: " + std::to_string(index));
  }
  return authors_[static_cast<std::size_t>(index)];
}

const std::string& TagScheme::tag_for(int author_index) const {
  author(author_index);
  return author_tags_[static_cast<std::size_t>(author_index)];
}

std::vector<std::string> TagScheme::all_tags() const {
  std::vector<std::string> tags = author_tags_;
  tags.push_back(end_tag_);
  return tags;
}

std::optional<int> TagScheme::author_for_tag(std::string_view tag) const {
  for (std::size_t i = 0; i < author_tags_.size(); ++i) {
    if (author_tags_[i] == tag) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::optional<int> TagScheme::author_by_name(std::string_view name) const {
  const std::string wanted = lower(name);
  for (const auto& a : authors_) {
    if (lower(a.name) == wanted) return a.index;
  }
  return std::nullopt;
}

bool TagScheme::contains_any_tag(std::string_view text) const {
  for (const auto& t : author_tags_) {
    if (text.find(t) != std::string_view::npos) return true;
  }
  return text.find(end_tag_) != std::string_view::npos;
}

std::string TagScheme::hash() const { return io::sha256_hex(to_json().dump()); }

// ---------------------------------------------------------------------------
// Records

const char* to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

json to_json(const SentenceRecord& r, const TagScheme& scheme) {
  json j = {{"text", r.text},
            {"author", r.author},
            {"author_name", scheme.author(r.author).name},
            {"split", to_string(r.split)},
            {"source_doc", r.source_doc},
            {"word_count", r.word_count}};
  if (r.parse) j["parse"] = *r.parse;
  return j;
}

SentenceRecord record_from_json(const json& j) {
  SentenceRecord r;
  r.text = j.at("text").get<std::string>();
  r.author = j.at("author").get<int>();
  const std::string split = j.value("split", "train");
  if (split != "train" && split != "test") {
    throw Error(ErrorKind::kIo, "bad split value '" + split + "'");
  }
  r.split = split == "test" ? Split::kTest : Split::kTrain;
  r.source_doc = j.value("source_doc", "");
  if (j.contains("parse") && !j["parse"].is_null()) r.parse = j["parse"].get<std::string>();
  r.word_count = j.contains("word_count") ? j["word_count"].get<int>() : word_count(r.text);
  return r;
}

std::vector<std::int64_t> Corpus::author_counts() const {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(scheme.author_count()), 0);
  for (const auto& r : records) ++counts[static_cast<std::size_t>(r.author)];
  return counts;
}

std::vector<std::int64_t> Corpus::author_counts(Split split) const {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(scheme.author_count()), 0);
  for (const auto& r : records) {
    if (r.split == split) ++counts[static_cast<std::size_t>(r.author)];
  }
  return counts;
}

std::vector<SentenceRecord> Corpus::subset(Split split) const {
  std::vector<SentenceRecord> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cleaning

bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
      ++i;
      continue;
    }
    int len = 0;
    std::uint32_t cp = 0;
    if ((c & 0xe0) == 0xc0) {
      len = 2;
      cp = c & 0x1fu;
    } else if ((c & 0xf0) == 0xe0) {
      len = 3;
      cp = c & 0x0fu;
    } else if ((c & 0xf8) == 0xf0) {
      len = 4;
      cp = c & 0x07u;
    } else {
      return false;
    }
    if (i + static_cast<std::size_t>(len) > s.size()) return false;
    for (int k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
      if ((cc & 0xc0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3fu);
    }
    static constexpr std::uint32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len] || cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) return false;
    i += static_cast<std::size_t>(len);
  }
  return true;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out += ' ';
      pending_space = false;
      out += c;
    }
  }
  return out;
}

std::string clean_text(std::string_view raw, const CleanConfig& config) {
  const auto lines = split_lines(raw);
  const std::regex start_re(config.start_marker);
  const std::regex end_re(config.end_marker);
  std::vector<std::regex> drops;
  for (const auto& d : config.drop_lines) drops.emplace_back(d);

  std::size_t begin = 0;
  std::size_t end = lines.size();
  bool have_start = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (std::regex_search(lines[i], start_re)) {
      begin = i + 1;
      have_start = true;
      break;
    }
  }
  bool have_end = false;
  for (std::size_t i = begin; i < lines.size(); ++i) {
    if (std::regex_search(lines[i], end_re)) {
      end = i;
      have_end = true;
      break;
    }
  }
  if (config.strict && !(have_start && have_end)) {
    throw Error(ErrorKind::kNoContent, "no content between markers");
  }

  std::string body;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& line = lines[i];
    if (std::any_of(drops.begin(), drops.end(), [&](const std::regex& re) { return std::regex_search(line, re); })) {
      continue;
    }
    body += line;
    body += '\n';
  }
  std::string out = normalize_whitespace(body);
  if (out.empty()) throw Error(ErrorKind::kNoContent, "no content between markers");
  return out;
}

// ---------------------------------------------------------------------------
// Word tokens

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(static_cast<char>(c))) {
      ++i;
      continue;
    }
    if (!is_word_char(c)) {
      tokens.emplace_back(1, static_cast<char>(c));
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < n) {
      const auto d = static_cast<unsigned char>(text[j]);
      if (is_word_char(d)) {
        ++j;
      } else if ((d == '\'' || d == '-') && j + 1 < n && is_word_char(static_cast<unsigned char>(text[j + 1]))) {
        j += 2;
      } else {
        break;
      }
    }
    tokens.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return tokens;
}

bool is_word_token(std::string_view token) {
  return std::any_of(token.begin(), token.end(), [](char c) { return is_word_char(static_cast<unsigned char>(c)); });
}

int word_count(std::string_view text) {
  int count = 0;
  for (const auto& t : word_tokens(text)) {
    if (is_word_token(t)) ++count;
  }
  return count;
}

// ---------------------------------------------------------------------------
// Segmentation

Segmenter::Segmenter() {
  for (const char* a : kDefaultAbbreviations) abbreviations_.insert(a);
}

Segmenter::Segmenter(std::unordered_set<std::string> abbreviations) : abbreviations_(std::move(abbreviations)) {}

Segmenter Segmenter::from_file(const std::filesystem::path& path) {
  std::unordered_set<std::string> set;
  std::istringstream in(io::read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = normalize_whitespace(line);
    if (!line.empty()) set.insert(line);
  }
  return Segmenter(std::move(set));
}

bool Segmenter::is_abbreviation(std::string_view word) const {
  return abbreviations_.count(std::string(word)) > 0;
}

std::vector<std::string> Segmenter::segment(std::string_view clean) const {
  std::vector<std::string_view> chunks;
  std::size_t pos = 0;
  while (pos < clean.size()) {
    while (pos < clean.size() && clean[pos] == ' ') ++pos;
    if (pos >= clean.size()) break;
    std::size_t end = clean.find(' ', pos);
    if (end == std::string_view::npos) end = clean.size();
    chunks.push_back(clean.substr(pos, end - pos));
    pos = end;
  }

  std::vector<std::string> sentences;
  std::string current;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (!current.empty()) current += ' ';
    current += chunks[i];

    std::string_view core = chunks[i];
    while (!core.empty() && is_closer(core.back())) core.remove_suffix(1);
    if (core.empty()) continue;
    const char last = core.back();
    if (last != '.' && last != '!' && last != '?') continue;

    if (last == '.') {
      std::string_view word = core;
      while (!word.empty() && is_opener(word.front())) word.remove_prefix(1);
      if (is_abbreviation(word)) continue;
      if (word.size() == 2 && std::isupper(static_cast<unsigned char>(word[0]))) continue;  // initial
    }
    if (i + 1 < chunks.size()) {
      const auto next = static_cast<unsigned char>(chunks[i + 1].front());
      if (std::islower(next)) continue;
    }
    sentences.push_back(std::move(current));
    current.clear();
  }
  if (!current.empty()) sentences.push_back(std::move(current));
  return sentences;
}

std::vector<std::string> segment(std::string_view clean) {
  static const Segmenter segmenter;
  return segmenter.segment(clean);
}

// ---------------------------------------------------------------------------
// Parses

SidecarParseProvider SidecarParseProvider::from_file(const std::filesystem::path& path) {
  SidecarParseProvider provider;
  for (const auto& row : io::read_jsonl(path)) {
    provider.add(row.at("text").get<std::string>(), row.at("parse").get<std::string>());
  }
  return provider;
}

void SidecarParseProvider::add(std::string text, std::string parse) {
  table_.insert_or_assign(normalize_whitespace(text), std::move(parse));
}

std::optional<std::string> SidecarParseProvider::parse(std::string_view sentence) const {
  auto it = table_.find(normalize_whitespace(sentence));
  if (it == table_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// Assembly

Corpus build_corpus(const std::vector<Document>& docs, const TagScheme& scheme, const CorpusConfig& config,
                    const Segmenter& segmenter, const ParseProvider* parses) {
  std::vector<int> docs_per_author(static_cast<std::size_t>(scheme.author_count()), 0);
  for (const auto& d : docs) {
    scheme.author(d.author);
    ++docs_per_author[static_cast<std::size_t>(d.author)];
  }
  for (int a = 0; a < scheme.author_count(); ++a) {
    if (docs_per_author[static_cast<std::size_t>(a)] == 0) {
      throw Error(ErrorKind::kMissingAuthor, "author without documents: " + scheme.author(a).name);
    }
  }

  Corpus corpus;
  corpus.scheme = scheme;
  for (const auto& doc : docs) {
    corpus.provenance[doc.source_doc] = io::sha256_hex(doc.raw);
    const std::string clean = clean_text(doc.raw, config.clean);
    for (auto& sentence : segmenter.segment(clean)) {
      const int words = word_count(sentence);
      if (words < config.min_words) {
        ++corpus.rejections["too_short"];
        continue;
      }
      if (words > config.max_words) {
        ++corpus.rejections["too_long"];
        continue;
      }
      if (scheme.contains_any_tag(sentence)) {
        ++corpus.rejections["contains_tag"];
        continue;
      }
      SentenceRecord r;
      r.text = std::move(sentence);
      r.author = doc.author;
      r.source_doc = doc.source_doc;
      r.word_count = words;
      if (parses) r.parse = parses->parse(r.text);
      corpus.records.push_back(std::move(r));
    }
  }
  validate(corpus);
  return corpus;
}

Corpus split_corpus(const Corpus& corpus, double test_fraction, std::uint64_t rng_seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "test_fraction must be in (0, 1)");
  }
  Corpus out = corpus;
  for (int a = 0; a < corpus.scheme.author_count(); ++a) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < out.records.size(); ++i) {
      if (out.records[i].author == a) idx.push_back(i);
    }
    Rng rng = Rng::derive(rng_seed, static_cast<std::uint64_t>(a));
    rng.shuffle(idx);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.records[idx[k]].split = k < n_test ? Split::kTest : Split::kTrain;
    }
  }
  return out;
}

std::string format_example(const SentenceRecord& record, const TagScheme& scheme) {
  return scheme.tag_for(record.author) + " " + record.text + " " + scheme.end_tag();
}

std::string strip_tags(std::string_view text, const TagScheme& scheme) {
  std::string out(text);
  for (const auto& tag : scheme.all_tags()) {
    std::size_t pos;
    while ((pos = out.find(tag)) != std::string::npos) out.replace(pos, tag.size(), " ");
  }
  return normalize_whitespace(out);
}

void validate(const Corpus& corpus) {
  const auto counts = corpus.author_counts();
  for (int a = 0; a < corpus.scheme.author_count(); ++a) {
    if (counts[static_cast<std::size_t>(a)] == 0) {
      throw Error(ErrorKind::kMissingAuthor, "no sentences for author " + corpus.scheme.author(a).name);
    }
  }
  for (const auto& r : corpus.records) {
    if (r.text.empty() || normalize_whitespace(r.text) != r.text) {
      throw Error(ErrorKind::kInvalidArgument, "record text not normalized: '" + r.text + "'");
    }
    if (corpus.scheme.contains_any_tag(r.text)) {
      throw Error(ErrorKind::kTagHygiene, "tag inside record text: '" + r.text + "'");
    }
    if (r.word_count < 1 || r.word_count != word_count(r.text)) {
      throw Error(ErrorKind::kInvalidArgument, "bad word_count for '" + r.text + "'");
    }
  }
}

json manifest(const Corpus& corpus) {
  const auto total = corpus.author_counts();
  const auto train = corpus.author_counts(Split::kTrain);
  const auto test = corpus.author_counts(Split::kTest);
  json authors = json::array();
  for (const auto& a : corpus.scheme.authors()) {
    const auto i = static_cast<std::size_t>(a.index);
    authors.push_back({{"index", a.index}, {"name", a.name}, {"total", total[i]}, {"train", train[i]}, {"test", test[i]}});
  }
  json rejections = json::object();
  for (const auto& [k, v] : corpus.rejections) rejections[k] = v;
  json provenance = json::object();
  for (const auto& [k, v] : corpus.provenance) provenance[k] = v;
  return {{"records", corpus.records.size()},
          {"scheme_hash", corpus.scheme.hash()},
          {"authors", authors},
          {"rejections", rejections},
          {"provenance", provenance}};
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::vector<json> rows;
  rows.reserve(corpus.records.size());
  for (const auto& r : corpus.records) rows.push_back(to_json(r, corpus.scheme));
  io::write_jsonl(dir / "corpus.jsonl", rows);
  io::write_json(dir / "scheme.json", corpus.scheme.to_json());
  io::write_json(dir / "manifest.json", manifest(corpus));
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus corpus;
  if (std::filesystem::exists(dir / "scheme.json")) {
    corpus.scheme = TagScheme::from_json(io::read_json(dir / "scheme.json"));
  }
  for (const auto& row : io::read_jsonl(dir / "corpus.jsonl")) {
    corpus.records.push_back(record_from_json(row));
    corpus.scheme.author(corpus.records.back().author);
  }
  if (std::filesystem::exists(dir / "manifest.json")) {
    const auto m = io::read_json(dir / "manifest.json");
    const json provenance = m.value("provenance", json::object());
    const json rejections = m.value("rejections", json::object());
    for (const auto& [k, v] : provenance.items()) corpus.provenance[k] = v.get<std::string>();
    for (const auto& [k, v] : rejections.items()) corpus.rejections[k] = v.get<std::int64_t>();
  }
  return corpus;
}

std::vector<Document> read_documents(const std::filesystem::path& dir, const TagScheme& scheme) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error(ErrorKind::kIo, "not a directory: " + dir.string());
  std::vector<fs::path> author_dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) author_dirs.push_back(entry.path());
  }
  std::sort(author_dirs.begin(), author_dirs.end());
  std::vector<Document> docs;
  for (const auto& adir : author_dirs) {
    const auto author = scheme.author_by_name(adir.filename().string());
    if (!author) continue;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(adir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      docs.push_back({*author, adir.filename().string() + "/" + f.filename().string(), io::read_file(f)});
    }
  }
  std::stable_sort(docs.begin(), docs.end(), [](const Document& a, const Document& b) { return a.author < b.author; });
  return docs;
}

}  // namespace styleforge::corpus
