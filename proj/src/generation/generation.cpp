#include "styleforge/generation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "styleforge/io.hpp"
#include "styleforge/rng.hpp"

namespace styleforge::generation {

using backend::Example;
using backend::Model;
using backend::Tokenizer;
using corpus::TagScheme;

namespace {

int special_id(const Tokenizer& tokenizer, const std::string& tag) {
  const auto id = tokenizer.id_of(tag);
  if (!id || !tokenizer.is_special(*id)) {
    throw Error(ErrorKind::kTagNotSingleToken, "tag not single-token: tokenizer lacks special '" + tag + "'");
  }
  return *id;
}

void require_extended(const Tokenizer& tokenizer, const TagScheme& scheme) {
  for (const auto& tag : scheme.all_tags()) special_id(tokenizer, tag);
}

std::vector<std::string> split_spaces(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ') ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

bool has_terminal_punctuation(std::string_view s) {
  std::size_t end = s.size();
  while (end > 0 && (s[end - 1] == '"' || s[end - 1] == '\'')) --end;
  if (end == 0) return false;
  const char c = s[end - 1];
  return c == '.' || c == '!' || c == '?';
}

// Byte-fallback tokens can be sampled in orders that do not form valid
// UTF-8; such output cannot be written as JSON. Control bytes are refused too.
bool well_formed_text(std::string_view s) {
  if (!corpus::is_valid_utf8(s)) return false;
  return std::none_of(s.begin(), s.end(), [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return u < 0x20 || u == 0x7f;
  });
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::vector<double> window_means(const std::vector<double>& losses, std::size_t windows) {
  std::vector<double> out;
  if (losses.empty()) return out;
  const std::size_t width = std::max<std::size_t>(1, losses.size() / windows);
  for (std::size_t start = 0; start < losses.size(); start += width) {
    const std::size_t end = std::min(losses.size(), start + width);
    double sum = 0.0;
    for (std::size_t i = start; i < end; ++i) sum += losses[i];
    out.push_back(sum / static_cast<double>(end - start));
  }
  return out;
}

TrainingReport run_training(Model& model, std::vector<Example> examples, std::int64_t truncated,
                            const backend::TrainConfig& config, const std::string& task, const std::string& method) {
  TrainingReport report;
  report.task = task;
  report.method = method;
  report.config = config;
  report.examples = static_cast<std::int64_t>(examples.size());
  report.truncated = truncated;
  const auto info = model.info();
  report.parameter_count = info.parameter_count;
  report.trainable_parameter_count = info.trainable_parameter_count;

  Stopwatch clock;
  backend::AdamW optimizer(config.optimizer());
  const std::int64_t total = backend::steps_per_epoch(examples.size(), config.batch_size) * config.epochs;
  std::int64_t step = 0;
  std::vector<double> all_losses;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    try {
      auto r = backend::train_epoch(model, examples, backend::Objective::kNextToken, optimizer, config, epoch, step,
                                    total);
      report.epoch_losses.push_back(r.mean_loss);
      all_losses.insert(all_losses.end(), r.step_losses.begin(), r.step_losses.end());
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDivergence) throw;
      report.aborted = e.what();
      report.steps = step;
      report.loss_curve = window_means(all_losses, 100);
      report.wall_seconds = clock.seconds();
      throw TrainingAborted(std::string(e.what()) + " (" + task + "/" + method + ", epoch " +
                                std::to_string(epoch + 1) + ")",
                            report);
    }
    report.epochs = epoch + 1;
  }
  report.steps = step;
  report.loss_curve = window_means(all_losses, 100);
  report.wall_seconds = clock.seconds();
  return report;
}

std::vector<int> fit_context(std::vector<int> tokens, int context, std::int64_t& truncated) {
  if (static_cast<int>(tokens.size()) > context) {
    tokens.resize(static_cast<std::size_t>(context));
    ++truncated;
  }
  return tokens;
}

}  // namespace

const char* to_string(Method method) { return method == Method::kFft ? "fft" : "lora"; }

Method method_from_string(const std::string& s) {
  if (s == "fft") return Method::kFft;
  if (s == "lora") return Method::kLora;
  throw Error(ErrorKind::kConfig, "unknown method '" + s + "' (expected fft or lora)");
}

std::vector<int> tagged_tokens(const corpus::SentenceRecord& record, const Tokenizer& tokenizer,
                               const TagScheme& scheme) {
  require_extended(tokenizer, scheme);
  return tokenizer.encode(corpus::format_example(record, scheme));
}

std::vector<int> untagged_tokens(std::string_view text, const Tokenizer& tokenizer, const TagScheme& scheme) {
  auto ids = tokenizer.encode(" " + std::string(text));
  ids.push_back(special_id(tokenizer, scheme.end_tag()));
  return ids;
}

TrainingReport pretrain(Model& model, const std::vector<corpus::SentenceRecord>& train, const Tokenizer& tokenizer,
                        const TagScheme& scheme, const backend::TrainConfig& config) {
  if (train.empty()) throw Error(ErrorKind::kInvalidArgument, "pretraining needs sentences");
  if (model.config().vocab < tokenizer.vocab_size()) {
    model.resize_vocab(tokenizer.vocab_size(), config.seed);
  }
  model.unfreeze_all();
  std::vector<Example> examples;
  std::int64_t truncated = 0;
  for (const auto& r : train) {
    examples.push_back({fit_context(untagged_tokens(r.text, tokenizer, scheme), model.config().context, truncated)});
  }
  return run_training(model, std::move(examples), truncated, config, "pretrain", "fft");
}

TrainingReport fine_tune(Model& model, const std::vector<corpus::SentenceRecord>& train, const Tokenizer& tokenizer,
                         const TagScheme& scheme, Method method, const FineTuneConfig& config) {
  require_extended(tokenizer, scheme);
  std::vector<std::int64_t> per_author(static_cast<std::size_t>(scheme.author_count()), 0);
  for (const auto& r : train) ++per_author.at(static_cast<std::size_t>(r.author));
  for (int a = 0; a < scheme.author_count(); ++a) {
    if (per_author[static_cast<std::size_t>(a)] == 0) {
      throw Error(ErrorKind::kMissingAuthor, "no training sentences for " + scheme.author(a).name);
    }
  }
  if (model.config().vocab < tokenizer.vocab_size()) {
    model.resize_vocab(tokenizer.vocab_size(), config.train.seed);
  }
  if (method == Method::kFft) {
    model.unfreeze_all();
  } else if (!model.lora()) {
    model.enable_lora(config.lora, config.train.seed);
  }

  std::vector<Example> examples;
  std::int64_t truncated = 0;
  for (const auto& r : train) {
    examples.push_back({fit_context(tagged_tokens(r, tokenizer, scheme), model.config().context, truncated)});
  }
  return run_training(model, std::move(examples), truncated, config.train, "generator", to_string(method));
}

// ---------------------------------------------------------------------------

std::string Seed::render(const TagScheme& scheme) const {
  std::string out = scheme.tag_for(author);
  for (const auto& w : extra_tokens) out += " " + w;
  return out;
}

void GenerationConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorKind::kConfig, "temperature must be > 0");
  }
  if (max_new_tokens < 1) throw Error(ErrorKind::kConfig, "max_new_tokens must be >= 1");
}

json GenerationConfig::to_json() const {
  return {{"temperature", temperature}, {"max_new_tokens", max_new_tokens}, {"sample", sample}, {"rng_seed", rng_seed}};
}

GenerationConfig GenerationConfig::from_json(const json& j) { return from_json(j, GenerationConfig{}); }

GenerationConfig GenerationConfig::from_json(const json& j, GenerationConfig c) {
  c.temperature = j.value("temperature", c.temperature);
  c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
  c.sample = j.value("sample", c.sample);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  c.validate();
  return c;
}

RawGeneration generate(const Model& model, const Tokenizer& tokenizer, const TagScheme& scheme, const Seed& seed,
                       const GenerationConfig& config, bool capture_trace) {
  Rng rng(config.rng_seed);
  return generate(model, tokenizer, scheme, seed, config, rng, capture_trace);
}

RawGeneration generate(const Model& model, const Tokenizer& tokenizer, const TagScheme& scheme, const Seed& seed,
                       const GenerationConfig& config, Rng& rng, bool capture_trace) {
  config.validate();
  const int end_id = special_id(tokenizer, scheme.end_tag());
  RawGeneration raw;
  raw.seed = seed;
  raw.token_ids = tokenizer.encode(seed.render(scheme));
  raw.prompt_length = static_cast<int>(raw.token_ids.size());
  const int context = model.config().context;
  if (raw.prompt_length > context) {
    throw Error(ErrorKind::kContextOverflow, "context overflow: seed longer than the model context");
  }

  std::vector<double> weights;
  for (int step = 0; step < config.max_new_tokens && static_cast<int>(raw.token_ids.size()) < context; ++step) {
    backend::RowVector logits = model.next_token_logits(raw.token_ids);
    // Padding is never a training target.
    logits[Tokenizer::kPad] = -std::numeric_limits<double>::infinity();
    // Rows past the tokenizer (a model built with spare vocabulary) cannot be decoded.
    for (Eigen::Index i = tokenizer.vocab_size(); i < logits.size(); ++i) {
      logits[i] = -std::numeric_limits<double>::infinity();
    }
    int next = 0;
    if (!config.sample) {
      logits.maxCoeff(&next);
    } else {
      const double top = logits.maxCoeff();
      weights.assign(static_cast<std::size_t>(logits.size()), 0.0);
      for (Eigen::Index i = 0; i < logits.size(); ++i) {
        weights[static_cast<std::size_t>(i)] = std::exp((logits[i] - top) / config.temperature);
      }
      next = static_cast<int>(rng.categorical(weights));
    }
    raw.token_ids.push_back(next);
    if (next == end_id) {
      raw.hit_end_tag = true;
      break;
    }
  }
  raw.text = tokenizer.decode(raw.token_ids);
  if (capture_trace) raw.trace = model.forward(raw.token_ids, backend::kCaptureAll);
  return raw;
}

// ---------------------------------------------------------------------------

std::vector<std::string> collapse_repeats(std::vector<std::string> words) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t n = 1; n <= 3 && !changed; ++n) {
      for (std::size_t i = 0; i + 3 * n <= words.size(); ++i) {
        std::size_t reps = 1;
        while (i + (reps + 1) * n <= words.size() &&
               std::equal(words.begin() + static_cast<std::ptrdiff_t>(i), words.begin() + static_cast<std::ptrdiff_t>(i + n),
                          words.begin() + static_cast<std::ptrdiff_t>(i + reps * n))) {
          ++reps;
        }
        if (reps >= 3) {
          words.erase(words.begin() + static_cast<std::ptrdiff_t>(i + n),
                      words.begin() + static_cast<std::ptrdiff_t>(i + reps * n));
          changed = true;
          break;
        }
      }
    }
  }
  return words;
}

Postprocessed postprocess_text(std::string_view body, const TagScheme& scheme) {
  Postprocessed out;
  std::string text(body);
  if (const auto cut = text.find(scheme.end_tag()); cut != std::string::npos) text.resize(cut);
  if (scheme.contains_any_tag(text)) {
    out.rejection = "contains_tag";
    return out;
  }
  if (!well_formed_text(corpus::normalize_whitespace(text))) {
    out.rejection = "malformed_text";
    return out;
  }
  const auto words = collapse_repeats(split_spaces(corpus::normalize_whitespace(text)));
  if (words.empty()) {
    out.rejection = "empty_after_strip";
    return out;
  }
  std::string sentence = join(words);
  if (!has_terminal_punctuation(sentence)) {
    out.rejection = "incomplete";
    return out;
  }
  out.sentence = std::move(sentence);
  return out;
}

Postprocessed postprocess(std::string_view raw_text, const TagScheme& scheme) {
  const std::string_view trimmed = raw_text.substr(std::min(raw_text.size(), raw_text.find_first_not_of(' ')));
  for (int a = 0; a < scheme.author_count(); ++a) {
    const auto& tag = scheme.tag_for(a);
    if (trimmed.substr(0, tag.size()) == tag) return postprocess_text(trimmed.substr(tag.size()), scheme);
  }
  throw Error(ErrorKind::kInvalidArgument, "raw generation does not start with an author tag");
}

Postprocessed postprocess(const RawGeneration& raw, const TagScheme& scheme) { return postprocess(raw.text, scheme); }

// ---------------------------------------------------------------------------

json SeedVocabulary::to_json() const { return {{"first", first}, {"second", second}}; }

SeedVocabulary SeedVocabulary::from_json(const json& j) {
  return {j.at("first").get<std::vector<std::string>>(), j.at("second").get<std::vector<std::string>>()};
}

SeedVocabulary build_seed_vocabulary(const std::vector<corpus::SentenceRecord>& train, std::size_t size) {
  std::unordered_map<std::string, std::int64_t> first, second;
  for (const auto& r : train) {
    int seen = 0;
    for (const auto& tok : corpus::word_tokens(r.text)) {
      if (!corpus::is_word_token(tok)) continue;
      ++(seen == 0 ? first : second)[tok];
      if (++seen == 2) break;
    }
  }
  auto top = [size](const std::unordered_map<std::string, std::int64_t>& counts) {
    std::vector<std::pair<std::string, std::int64_t>> rows(counts.begin(), counts.end());
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < rows.size() && i < size; ++i) out.push_back(rows[i].first);
    return out;
  };
  return {top(first), top(second)};
}

std::vector<std::int64_t> GeneratedSet::per_author_counts() const {
  std::vector<std::int64_t> counts(per_author.size(), 0);
  for (const auto& item : items) ++counts.at(static_cast<std::size_t>(item.seed.author));
  return counts;
}

json GeneratedSet::report(const TagScheme& scheme) const {
  json authors = json::array();
  for (std::size_t a = 0; a < per_author.size(); ++a) {
    const auto& s = per_author[a];
    authors.push_back({{"author", scheme.author(static_cast<int>(a)).name},
                       {"planned", s.planned},
                       {"accepted", s.accepted},
                       {"attempts", s.attempts},
                       {"retries", s.attempts - s.accepted},
                       {"acceptance_rate", s.attempts > 0 ? static_cast<double>(s.accepted) / s.attempts : 0.0},
                       {"rejections", s.rejections}});
  }
  return {{"method", method}, {"items", items.size()}, {"authors", authors}, {"warnings", warnings}};
}

GeneratedSet generate_batch(const Model& model, const Tokenizer& tokenizer, const TagScheme& scheme,
                            const std::vector<std::int64_t>& plan, const SeedVocabulary& vocabulary,
                            const GenerationConfig& config, const std::string& method) {
  config.validate();
  if (static_cast<int>(plan.size()) != scheme.author_count()) {
    throw Error(ErrorKind::kInvalidArgument, "plan needs one count per author");
  }
  if (vocabulary.first.empty() || vocabulary.second.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "seed vocabulary is empty");
  }
  GeneratedSet set;
  set.method = method;
  set.per_author.resize(plan.size());
  std::int64_t index = 0;
  for (int a = 0; a < scheme.author_count(); ++a) {
    auto& stats = set.per_author[static_cast<std::size_t>(a)];
    stats.planned = plan[static_cast<std::size_t>(a)];
    if (stats.planned < 1) throw Error(ErrorKind::kInvalidArgument, "plan counts must be >= 1");
    const std::int64_t budget = 10 * stats.planned;
    for (std::int64_t slot = 0; slot < stats.planned; ++slot, ++index) {
      if (stats.attempts >= budget) break;
      Rng rng = Rng::derive(config.rng_seed, static_cast<std::uint64_t>(index));
      Seed seed{a, {}};
      const auto kind = index % 3;
      if (kind >= 1) seed.extra_tokens.push_back(vocabulary.first[rng.below(vocabulary.first.size())]);
      if (kind == 2) seed.extra_tokens.push_back(vocabulary.second[rng.below(vocabulary.second.size())]);
      int retries = 0;
      while (stats.attempts < budget) {
        ++stats.attempts;
        const auto raw = generate(model, tokenizer, scheme, seed, config, rng, false);
        const auto pp = postprocess(raw, scheme);
        if (pp.accepted()) {
          set.items.push_back({index, seed, *pp.sentence, retries});
          ++stats.accepted;
          break;
        }
        ++stats.rejections[pp.rejection];
        ++retries;
      }
    }
    if (stats.accepted < stats.planned) {
      set.warnings.push_back("retry budget exhausted for " + scheme.author(a).name + ": " +
                             std::to_string(stats.accepted) + " of " + std::to_string(stats.planned) + " accepted");
    }
  }
  return set;
}

void save_generated(const GeneratedSet& set, const TagScheme& scheme, const std::filesystem::path& file) {
  std::vector<json> rows;
  for (const auto& item : set.items) {
    rows.push_back({{"index", item.index},
                    {"seed", item.seed.render(scheme)},
                    {"seed_words", item.seed.extra_tokens},
                    {"author", item.seed.author},
                    {"author_name", scheme.author(item.seed.author).name},
                    {"method", set.method},
                    {"text", item.text},
                    {"retry_count", item.retry_count}});
  }
  io::write_jsonl(file, rows);
}

GeneratedSet load_generated(const std::filesystem::path& file, const TagScheme& scheme) {
  GeneratedSet set;
  set.per_author.resize(static_cast<std::size_t>(scheme.author_count()));
  for (const auto& row : io::read_jsonl(file)) {
    GeneratedItem item;
    item.index = row.value("index", static_cast<std::int64_t>(set.items.size()));
    item.seed.author = row.at("author").get<int>();
    scheme.author(item.seed.author);
    item.seed.extra_tokens = row.value("seed_words", std::vector<std::string>{});
    item.text = row.at("text").get<std::string>();
    item.retry_count = row.value("retry_count", 0);
    if (set.method.empty()) set.method = row.value("method", "");
    auto& stats = set.per_author[static_cast<std::size_t>(item.seed.author)];
    ++stats.planned;
    ++stats.accepted;
    stats.attempts += 1 + item.retry_count;
    set.items.push_back(std::move(item));
  }
  return set;
}

}  // namespace styleforge::generation
