#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "styleforge/corpus.hpp"
#include "styleforge/error.hpp"
#include "styleforge/model.hpp"
#include "styleforge/rng.hpp"
#include "styleforge/tokenizer.hpp"
#include "styleforge/training.hpp"

namespace styleforge::generation {

using nlohmann::json;

enum class Method { kFft, kLora };

const char* to_string(Method method);
Method method_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Training sequences

// "<tag> text <end>" as token ids.
std::vector<int> tagged_tokens(const corpus::SentenceRecord& record, const backend::Tokenizer& tokenizer,
                               const corpus::TagScheme& scheme);
// " text <end>": the untagged form used to pretrain the base model.
std::vector<int> untagged_tokens(std::string_view text, const backend::Tokenizer& tokenizer,
                                 const corpus::TagScheme& scheme);

using backend::TrainingAborted;
using backend::TrainingReport;

// Trains a causal LM on untagged sentences (the stand-in for a pretrained
// base model). Every parameter is trainable.
TrainingReport pretrain(backend::Model& model, const std::vector<corpus::SentenceRecord>& train,
                        const backend::Tokenizer& tokenizer, const corpus::TagScheme& scheme,
                        const backend::TrainConfig& config);

struct FineTuneConfig {
  backend::TrainConfig train;
  backend::LoraConfig lora;
};

// Fine-tunes `model` in place on tagged training sentences. FFT makes every
// parameter trainable; LoRA injects adapters and trains only those.
TrainingReport fine_tune(backend::Model& model, const std::vector<corpus::SentenceRecord>& train,
                         const backend::Tokenizer& tokenizer, const corpus::TagScheme& scheme, Method method,
                         const FineTuneConfig& config);

// ---------------------------------------------------------------------------
// Sampling

struct Seed {
  int author = 0;
  std::vector<std::string> extra_tokens;

  // "<0> When"
  std::string render(const corpus::TagScheme& scheme) const;
};

struct GenerationConfig {
  double temperature = 0.9;
  int max_new_tokens = 64;
  bool sample = true;
  std::uint64_t rng_seed = 0;

  void validate() const;
  json to_json() const;
  static GenerationConfig from_json(const json& j);
  static GenerationConfig from_json(const json& j, GenerationConfig defaults);
};

struct RawGeneration {
  Seed seed;
  std::vector<int> token_ids;  // prompt followed by generated tokens
  int prompt_length = 0;
  std::string text;
  bool hit_end_tag = false;
  std::optional<backend::ForwardTrace> trace;

  int generated_count() const { return static_cast<int>(token_ids.size()) - prompt_length; }
};

// Samples until the end tag, `max_new_tokens` or the model context is
// reached. With `sample` false decoding is greedy.
RawGeneration generate(const backend::Model& model, const backend::Tokenizer& tokenizer,
                       const corpus::TagScheme& scheme, const Seed& seed, const GenerationConfig& config,
                       bool capture_trace = false);
// Same, drawing from an explicit random stream.
RawGeneration generate(const backend::Model& model, const backend::Tokenizer& tokenizer,
                       const corpus::TagScheme& scheme, const Seed& seed, const GenerationConfig& config,
                       Rng& rng, bool capture_trace);

// ---------------------------------------------------------------------------
// Post-processing

struct Postprocessed {
  std::optional<std::string> sentence;
  // "incomplete", "empty_after_strip", "contains_tag" or "malformed_text"
  std::string rejection;

  bool accepted() const { return sentence.has_value(); }
};

// Drops everything from the first end tag on, collapses immediate n-gram
// repeats (n <= 3, three or more in a row) and requires terminal
// punctuation. Text that is not valid UTF-8 is rejected as malformed. The
// input carries no leading author tag.
Postprocessed postprocess_text(std::string_view body, const corpus::TagScheme& scheme);
// Full post-processing of raw model output, which must start with an author tag.
Postprocessed postprocess(std::string_view raw_text, const corpus::TagScheme& scheme);
Postprocessed postprocess(const RawGeneration& raw, const corpus::TagScheme& scheme);

// Collapses runs of three or more identical whitespace-separated n-grams
// (n <= 3) to one occurrence, to a fixed point.
std::vector<std::string> collapse_repeats(std::vector<std::string> words);

// ---------------------------------------------------------------------------
// Batches

struct SeedVocabulary {
  std::vector<std::string> first;   // most frequent sentence-initial words
  std::vector<std::string> second;  // most frequent second words

  json to_json() const;
  static SeedVocabulary from_json(const json& j);
};

SeedVocabulary build_seed_vocabulary(const std::vector<corpus::SentenceRecord>& train, std::size_t size = 500);

struct GeneratedItem {
  std::int64_t index = 0;
  Seed seed;
  std::string text;
  int retry_count = 0;
};

struct AuthorBatchStats {
  std::int64_t planned = 0;
  std::int64_t accepted = 0;
  std::int64_t attempts = 0;
  std::map<std::string, std::int64_t> rejections;
};

struct GeneratedSet {
  std::string method;
  std::vector<GeneratedItem> items;
  std::vector<AuthorBatchStats> per_author;
  std::vector<std::string> warnings;

  std::vector<std::int64_t> per_author_counts() const;
  json report(const corpus::TagScheme& scheme) const;
};

// Exactly plan[a] accepted sentences per author unless the retry budget
// (10x the plan) runs out. Item k uses the random stream derived from
// (config.rng_seed, k); a third of the seeds are tag-only, a third carry
// one word and a third two.
GeneratedSet generate_batch(const backend::Model& model, const backend::Tokenizer& tokenizer,
                            const corpus::TagScheme& scheme, const std::vector<std::int64_t>& plan,
                            const SeedVocabulary& vocabulary, const GenerationConfig& config,
                            const std::string& method);

void save_generated(const GeneratedSet& set, const corpus::TagScheme& scheme, const std::filesystem::path& file);
GeneratedSet load_generated(const std::filesystem::path& file, const corpus::TagScheme& scheme);

}  // namespace styleforge::generation
