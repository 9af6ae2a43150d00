#include "styleforge/xai.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "styleforge/error.hpp"

namespace styleforge::xai {

using backend::Model;
using backend::RowVector;

namespace {

// Token text that is safe to put in JSON: lone bytes become <0xNN>.
std::string display_token(const backend::Tokenizer& tokenizer, int id) {
  std::string text = tokenizer.token_text(id);
  if (corpus::is_valid_utf8(text)) return text;
  std::string out;
  char buf[8];
  for (unsigned char c : text) {
    std::snprintf(buf, sizeof buf, "<0x%02X>", c);
    out += buf;
  }
  return out;
}

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

}  // namespace

std::optional<TagSpan> find_tag_span(std::span<const int> ids, const backend::Tokenizer& tokenizer,
                                     const corpus::TagScheme& scheme) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!tokenizer.is_special(ids[i])) continue;
    if (scheme.author_for_tag(tokenizer.piece(ids[i]))) {
      return TagSpan{static_cast<int>(i), static_cast<int>(i) + 1};
    }
  }
  return std::nullopt;
}

double to_tag_mass(const std::vector<Matrix>& heads, const TagSpan& span, int T) {
  if (span.start < 0 || span.end <= span.start || span.end > T) {
    throw Error(ErrorKind::kInvalidArgument, "tag span outside the sequence");
  }
  if (span.end >= T) throw Error(ErrorKind::kEmptyQuerySet, "empty query set");
  if (heads.empty()) throw Error(ErrorKind::kInvalidArgument, "no attention heads");
  double total = 0.0;
  for (const auto& a : heads) {
    if (a.rows() < T || a.cols() < T) throw Error(ErrorKind::kInvalidArgument, "attention smaller than T");
    for (int q = span.end; q < T; ++q) {
      for (int k = span.start; k < span.end; ++k) total += a(q, k);
    }
  }
  return total / (static_cast<double>(heads.size()) * static_cast<double>(T - span.end));
}

double EnrichmentProfile::max_enrichment() const {
  double best = 0.0;
  for (const auto& l : layers) best = std::max(best, l.enrichment);
  return best;
}

json EnrichmentProfile::to_json() const {
  json rows = json::array();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    rows.push_back({{"layer", i}, {"mass", layers[i].mass}, {"enrichment", layers[i].enrichment}});
  }
  return {{"layers", rows}, {"T", T}, {"tag_len", tag_len}, {"samples", samples}};
}

EnrichmentProfile enrichment_profile(const backend::ForwardTrace& trace, const TagSpan& span, std::optional<int> T) {
  const int n = T.value_or(trace.valid_len);
  if (trace.attentions.empty()) throw Error(ErrorKind::kInvalidArgument, "trace has no attentions");
  if (n > trace.valid_len) throw Error(ErrorKind::kInvalidArgument, "T exceeds the valid tokens of the trace");
  EnrichmentProfile p;
  p.T = n;
  p.tag_len = span.length();
  p.samples = 1;
  const double chance = static_cast<double>(span.length()) / static_cast<double>(n);
  for (const auto& layer : trace.attentions) {
    const double mass = to_tag_mass(layer, span, n);
    p.layers.push_back({mass, mass / chance});
  }
  return p;
}

EnrichmentProfile average_profiles(const std::vector<EnrichmentProfile>& profiles) {
  if (profiles.empty()) throw Error(ErrorKind::kInvalidArgument, "no profiles to average");
  EnrichmentProfile out;
  out.layers.resize(profiles.front().layers.size());
  out.tag_len = profiles.front().tag_len;
  for (const auto& p : profiles) {
    if (p.layers.size() != out.layers.size()) throw Error(ErrorKind::kInvalidArgument, "layer counts differ");
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      out.layers[l].mass += p.layers[l].mass;
      out.layers[l].enrichment += p.layers[l].enrichment;
    }
    out.T += p.T;
    out.samples += p.samples;
  }
  const double n = static_cast<double>(profiles.size());
  for (auto& l : out.layers) {
    l.mass /= n;
    l.enrichment /= n;
  }
  out.T /= n;
  return out;
}

EnrichmentProfile generation_profile(const backend::ForwardTrace& trace, const TagSpan& span, int prompt_length) {
  std::vector<EnrichmentProfile> steps;
  // The last token was produced from the first valid_len - 1 tokens.
  for (int n = std::max(prompt_length, span.end + 1); n <= trace.valid_len - 1; ++n) {
    steps.push_back(enrichment_profile(trace, span, n));
  }
  if (steps.empty()) throw Error(ErrorKind::kEmptyQuerySet, "empty query set");
  return average_profiles(steps);
}

// ---------------------------------------------------------------------------

double IgResult::completeness_gap() const { return std::abs(sum() - delta()); }

IgResult integrated_gradients(const EmbeddingFunction& f, const Matrix& input, const Matrix& baseline, int steps) {
  if (steps < 1) throw Error(ErrorKind::kInvalidArgument, "steps must be >= 1");
  if (input.rows() != baseline.rows() || input.cols() != baseline.cols()) {
    throw Error(ErrorKind::kInvalidArgument, "baseline shape differs from the input");
  }
  IgResult r;
  r.steps = steps;
  const Matrix diff = input - baseline;
  Matrix avg = Matrix::Zero(input.rows(), input.cols());
  Matrix grad(input.rows(), input.cols());
  for (int s = 0; s < steps; ++s) {
    const double alpha = (s + 0.5) / steps;
    grad.setZero();
    f(baseline + alpha * diff, &grad);
    if (!grad.allFinite()) {
      throw Error(ErrorKind::kNumericalFailure, "numerical failure at alpha=" + format_number(alpha));
    }
    avg += grad;
  }
  r.attributions = diff.cwiseProduct(avg / steps);
  r.f_input = f(input, nullptr);
  r.f_baseline = f(baseline, nullptr);
  return r;
}

BaselineSpec BaselineSpec::zero_prefix(int n) {
  BaselineSpec b;
  for (int i = 0; i < n; ++i) b.zeroed.push_back(i);
  return b;
}

BaselineSpec BaselineSpec::zero_all(int n) { return zero_prefix(n); }

Matrix BaselineSpec::apply(const Matrix& embeddings) const {
  Matrix out = embeddings;
  for (int i : zeroed) {
    if (i < 0 || i >= out.rows()) throw Error(ErrorKind::kInvalidArgument, "baseline position out of range");
    out.row(i).setZero();
  }
  return out;
}

IgResult integrated_gradients(const Model& model, std::span<const int> token_ids, const BaselineSpec& baseline,
                              const backend::LogitTarget& target, int steps) {
  const Matrix input = model.token_embeddings(token_ids);
  const EmbeddingFunction f = [&](const Matrix& e, Matrix* grad) { return model.target_value(e, target, grad); };
  return integrated_gradients(f, input, baseline.apply(input), steps);
}

backend::LogitTarget log_prob_target(int row, int token) {
  return [row, token](const Matrix& logits, Matrix& grad) {
    const RowVector r = logits.row(row);
    const double mx = r.maxCoeff();
    const double lse = mx + std::log((r.array() - mx).exp().sum());
    grad.setZero();
    grad.row(row) = -(r.array() - lse).exp().matrix();
    grad(row, token) += 1.0;
    return r(token) - lse;
  };
}

backend::LogitTarget class_logit_target(int label) {
  return [label](const Matrix& logits, Matrix& grad) {
    grad.setZero();
    grad(0, label) = 1.0;
    return logits(0, label);
  };
}

std::vector<double> token_attributions(const Matrix& ig, int prompt_length) {
  if (prompt_length < 0 || prompt_length > ig.rows()) {
    throw Error(ErrorKind::kInvalidArgument, "prompt length outside the attribution rows");
  }
  std::vector<double> out;
  for (int i = 0; i < prompt_length; ++i) out.push_back(ig.row(i).norm());
  return out;
}

double AttributionMatrix::relative_gap(int column) const {
  const double d = std::abs(delta.at(static_cast<std::size_t>(column)));
  const double g = completeness_gap.at(static_cast<std::size_t>(column));
  return d > 0.0 ? g / d : (g == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
}

json AttributionMatrix::to_json() const {
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    std::vector<double> r;
    for (Eigen::Index j = 0; j < values.cols(); ++j) r.push_back(values(i, j));
    rows.push_back(std::move(r));
  }
  return {{"prompt_tokens", prompt_tokens}, {"generated_tokens", generated_tokens}, {"values", rows},
          {"completeness_gap", completeness_gap}, {"delta", delta}, {"steps", steps}};
}

AttributionMatrix tag_attribution_heatmap(const Model& model, const backend::Tokenizer& tokenizer,
                                          const generation::RawGeneration& generation, int steps) {
  const auto& ids = generation.token_ids;
  const int prompt = generation.prompt_length;
  const int generated = generation.generated_count();
  if (prompt < 1 || generated < 0) throw Error(ErrorKind::kInvalidArgument, "generation has no prompt");
  AttributionMatrix m;
  m.steps = steps;
  m.values = Matrix::Zero(prompt, generated);
  for (int i = 0; i < prompt; ++i) m.prompt_tokens.push_back(display_token(tokenizer, ids[static_cast<std::size_t>(i)]));
  const auto baseline = BaselineSpec::zero_prefix(prompt);
  for (int j = 0; j < generated; ++j) {
    const int pos = prompt + j;
    m.generated_tokens.push_back(display_token(tokenizer, ids[static_cast<std::size_t>(pos)]));
    // Causal attention: the prefix alone determines the logits at pos - 1.
    const std::span<const int> prefix(ids.data(), static_cast<std::size_t>(pos));
    const auto ig = integrated_gradients(model, prefix, baseline, log_prob_target(pos - 1, ids[static_cast<std::size_t>(pos)]),
                                         steps);
    const auto col = token_attributions(ig.attributions, prompt);
    for (int i = 0; i < prompt; ++i) m.values(i, j) = col[static_cast<std::size_t>(i)];
    m.completeness_gap.push_back(ig.completeness_gap());
    m.delta.push_back(ig.delta());
  }
  return m;
}

// ---------------------------------------------------------------------------

json TokenRanking::to_json(const corpus::TagScheme& scheme) const {
  json rows = json::array();
  for (const auto& e : entries) {
    rows.push_back(
        {{"token", e.token}, {"mean", e.mean}, {"mean_magnitude", e.mean_magnitude}, {"support", e.support}});
  }
  return {{"author", scheme.author(author).name}, {"author_index", author}, {"sentences", sentences}, {"tokens", rows}};
}

TokenRanking classifier_token_ranking(const detector::Detector& detector,
                                      const std::vector<corpus::SentenceRecord>& records, int author,
                                      const RankingConfig& config) {
  detector.scheme.author(author);
  struct Acc {
    double signed_sum = 0.0;
    double magnitude_sum = 0.0;
    std::int64_t support = 0;
  };
  std::map<std::string, Acc> acc;
  TokenRanking out;
  out.author = author;
  const int context = detector.model->config().context;
  for (const auto& r : records) {
    if (r.author != author) continue;
    if (config.max_sentences > 0 && static_cast<std::size_t>(out.sentences) >= config.max_sentences) break;
    const auto ids = detector::classifier_tokens(detector.tokenizer, r.text, context);
    if (ids.empty()) continue;
    const auto ig = integrated_gradients(*detector.model, ids, BaselineSpec::zero_all(static_cast<int>(ids.size())),
                                         class_logit_target(author), config.steps);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto& a = acc[display_token(detector.tokenizer, ids[i])];
      a.signed_sum += ig.attributions.row(static_cast<Eigen::Index>(i)).sum();
      a.magnitude_sum += ig.attributions.row(static_cast<Eigen::Index>(i)).norm();
      ++a.support;
    }
    ++out.sentences;
  }
  if (out.sentences == 0) {
    throw Error(ErrorKind::kInvalidArgument, "no sentences for " + detector.scheme.author(author).name);
  }
  for (const auto& [token, a] : acc) {
    if (a.support < config.min_support) continue;
    const double n = static_cast<double>(a.support);
    out.entries.push_back({token, a.signed_sum / n, a.magnitude_sum / n, a.support});
  }
  std::sort(out.entries.begin(), out.entries.end(), [](const TokenScore& x, const TokenScore& y) {
    if (std::abs(x.mean) != std::abs(y.mean)) return std::abs(x.mean) > std::abs(y.mean);
    return x.token < y.token;
  });
  if (config.top_k > 0 && out.entries.size() > config.top_k) out.entries.resize(config.top_k);
  return out;
}

std::string enrichment_csv(const std::vector<std::pair<std::string, EnrichmentProfile>>& by_tag) {
  std::string out = "layer,tag,mass,enrichment,samples\n";
  for (const auto& [tag, p] : by_tag) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      out += std::to_string(l) + "," + tag + "," + format_number(p.layers[l].mass) + "," +
             format_number(p.layers[l].enrichment) + "," + std::to_string(p.samples) + "\n";
    }
  }
  return out;
}

}  // namespace styleforge::xai
