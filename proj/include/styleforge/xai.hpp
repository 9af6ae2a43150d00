#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "styleforge/corpus.hpp"
#include "styleforge/detector.hpp"
#include "styleforge/generation.hpp"
#include "styleforge/model.hpp"
#include "styleforge/tokenizer.hpp"

namespace styleforge::xai {

using backend::Matrix;
using nlohmann::json;

struct TagSpan {
  int start = 0;
  int end = 1;

  int length() const { return end - start; }
};

// Position of the first author tag in `ids`.
std::optional<TagSpan> find_tag_span(std::span<const int> ids, const backend::Tokenizer& tokenizer,
                                     const corpus::TagScheme& scheme);

// ---------------------------------------------------------------------------
// Attention enrichment

// Mean over heads and over queries q in [span.end, T) of the attention q
// pays to the keys inside the span. `heads` holds [T', T'] matrices with
// T' >= T; only the leading T x T block is read.
double to_tag_mass(const std::vector<Matrix>& heads, const TagSpan& span, int T);

struct LayerEnrichment {
  double mass = 0.0;
  double enrichment = 0.0;
};

struct EnrichmentProfile {
  std::vector<LayerEnrichment> layers;
  double T = 0.0;  // valid tokens; a mean when profiles are averaged
  int tag_len = 1;
  int samples = 0;  // number of (trace, step) profiles folded in

  double max_enrichment() const;
  json to_json() const;
};

// Profile of one forward pass over its first T tokens (all of them by default).
EnrichmentProfile enrichment_profile(const backend::ForwardTrace& trace, const TagSpan& span,
                                     std::optional<int> T = std::nullopt);
// Equal-weight mean of several profiles.
EnrichmentProfile average_profiles(const std::vector<EnrichmentProfile>& profiles);
// Averages the per-step profiles of one generation: every prefix the model
// was fed, from the prompt up to the sequence that produced the last token.
// Causal attention makes each prefix's rows identical to the final trace's.
EnrichmentProfile generation_profile(const backend::ForwardTrace& trace, const TagSpan& span, int prompt_length);

// ---------------------------------------------------------------------------
// Integrated gradients

// Scalar function of the embeddings; writes d/d(embeddings) when grad is set.
using EmbeddingFunction = std::function<double(const Matrix& embeddings, Matrix* grad)>;

struct IgResult {
  Matrix attributions;  // [T, embed_dim]
  double f_input = 0.0;
  double f_baseline = 0.0;
  int steps = 0;

  double delta() const { return f_input - f_baseline; }
  double sum() const { return attributions.sum(); }
  // |sum - delta|
  double completeness_gap() const;
};

// (e - e') times the midpoint-rule average of the gradient along the
// straight path from e' to e.
IgResult integrated_gradients(const EmbeddingFunction& f, const Matrix& input, const Matrix& baseline, int steps);

struct BaselineSpec {
  // Token positions whose embeddings are zeroed; all others keep their
  // actual embeddings. Positional embeddings are never touched.
  std::vector<int> zeroed;

  static BaselineSpec zero_prefix(int n);
  static BaselineSpec zero_all(int n);
  Matrix apply(const Matrix& embeddings) const;
};

IgResult integrated_gradients(const backend::Model& model, std::span<const int> token_ids, const BaselineSpec& baseline,
                              const backend::LogitTarget& target, int steps);

// Log-probability of `token` under the logits row `row`.
backend::LogitTarget log_prob_target(int row, int token);
// Raw logit of `label` (classifier models).
backend::LogitTarget class_logit_target(int label);

// L2 norm across embedding dimensions of the first `prompt_length` rows.
std::vector<double> token_attributions(const Matrix& ig, int prompt_length);

struct AttributionMatrix {
  Matrix values;  // [prompt tokens, generated tokens]
  std::vector<std::string> prompt_tokens;
  std::vector<std::string> generated_tokens;
  std::vector<double> completeness_gap;  // absolute, per column
  std::vector<double> delta;             // f(e) - f(e') per column
  int steps = 0;

  double relative_gap(int column) const;
  json to_json() const;
};

AttributionMatrix tag_attribution_heatmap(const backend::Model& model, const backend::Tokenizer& tokenizer,
                                          const generation::RawGeneration& generation, int steps = 64);

// ---------------------------------------------------------------------------
// Classifier token ranking

struct TokenScore {
  std::string token;
  double mean = 0.0;            // mean signed attribution
  double mean_magnitude = 0.0;  // mean L2 norm
  std::int64_t support = 0;
};

struct TokenRanking {
  int author = 0;
  std::int64_t sentences = 0;
  std::vector<TokenScore> entries;  // sorted by |mean| descending

  json to_json(const corpus::TagScheme& scheme) const;
};

struct RankingConfig {
  int steps = 64;
  std::size_t top_k = 20;
  std::int64_t min_support = 1;
  // 0 means every sentence of the author.
  std::size_t max_sentences = 0;
};

// Signed per-token IG toward the author's class logit from a zero baseline,
// aggregated by token text over the author's sentences in `records`.
TokenRanking classifier_token_ranking(const detector::Detector& detector,
                                      const std::vector<corpus::SentenceRecord>& records, int author,
                                      const RankingConfig& config = {});

// CSV: layer,tag,mass,enrichment,samples
std::string enrichment_csv(const std::vector<std::pair<std::string, EnrichmentProfile>>& by_tag);

}  // namespace styleforge::xai
