#include "styleforge/detector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "styleforge/error.hpp"
#include "styleforge/io.hpp"

namespace styleforge::detector {

using backend::Example;
using backend::Model;

namespace {

double mean(double sum, std::int64_t n) { return n == 0 ? 0.0 : sum / static_cast<double>(n); }

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::vector<double> row_logits(const backend::Matrix& logits) {
  std::vector<double> out(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index i = 0; i < logits.cols(); ++i) out[static_cast<std::size_t>(i)] = logits(0, i);
  return out;
}

Detector make_detector(std::unique_ptr<Model> model, const backend::Tokenizer& tokenizer,
                       const corpus::TagScheme& scheme) {
  Detector d;
  d.model = std::move(model);
  d.tokenizer = tokenizer;
  d.scheme = scheme;
  return d;
}

}  // namespace

DetectorConfig::DetectorConfig() {
  model.kind = backend::ModelKind::kClassifier;
  train.epochs = 9;
  train.lr = 1e-3;
  train.batch_size = 16;
}

json DetectorConfig::to_json() const {
  return {{"model", model.to_json()}, {"train", train.to_json()}, {"patience", patience}};
}

DetectorConfig DetectorConfig::from_json(const json& j) {
  DetectorConfig c;
  if (j.contains("model")) c.model = backend::ModelConfig::from_json(j["model"]);
  c.model.kind = backend::ModelKind::kClassifier;
  if (j.contains("train")) c.train = backend::TrainConfig::from_json(j["train"], c.train);
  c.patience = j.value("patience", c.patience);
  if (c.patience < 1) throw Error(ErrorKind::kConfig, "patience must be >= 1");
  return c;
}

json Detector::report() const {
  json epochs = json::array();
  for (const auto& m : history) {
    epochs.push_back({{"epoch", m.epoch},
                      {"train_loss", m.train_loss},
                      {"test_accuracy", m.test_accuracy},
                      {"test_macro_f1", m.test_macro_f1}});
  }
  const auto info = model->info();
  return {{"epochs", epochs},
          {"best_epoch", best_epoch},
          {"early_stopped", early_stopped},
          {"parameter_count", info.parameter_count},
          {"trainable_parameter_count", info.trainable_parameter_count}};
}

json Prediction::to_json() const {
  return {{"sentence_id", sentence_id}, {"probs", probs},   {"predicted", predicted},
          {"confidence", confidence},   {"expected", expected}, {"tie", tie}};
}

Prediction Prediction::from_json(const json& j) {
  Prediction p;
  p.sentence_id = j.value("sentence_id", "");
  p.probs = j.at("probs").get<std::vector<double>>();
  p.predicted = j.at("predicted").get<int>();
  p.confidence = j.at("confidence").get<double>();
  p.expected = j.value("expected", -1);
  p.tie = j.value("tie", false);
  return p;
}

Prediction prediction_from_logits(const std::vector<double>& logits, int expected, std::string sentence_id) {
  if (logits.empty()) throw Error(ErrorKind::kInvalidArgument, "no logits");
  const double top = *std::max_element(logits.begin(), logits.end());
  Prediction p;
  p.sentence_id = std::move(sentence_id);
  p.expected = expected;
  p.probs.resize(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p.probs[i] = std::exp(logits[i] - top);
    z += p.probs[i];
  }
  for (auto& v : p.probs) v /= z;
  p.predicted = 0;
  for (std::size_t i = 1; i < p.probs.size(); ++i) {
    if (p.probs[i] > p.probs[static_cast<std::size_t>(p.predicted)]) p.predicted = static_cast<int>(i);
  }
  p.confidence = p.probs[static_cast<std::size_t>(p.predicted)];
  p.tie = std::count(p.probs.begin(), p.probs.end(), p.confidence) > 1;
  return p;
}

std::vector<int> classifier_tokens(const backend::Tokenizer& tokenizer, std::string_view sentence, int context) {
  auto ids = tokenizer.encode(" " + corpus::normalize_whitespace(sentence));
  if (static_cast<int>(ids.size()) > context) ids.resize(static_cast<std::size_t>(context));
  return ids;
}

Detector train_detector(const std::vector<corpus::SentenceRecord>& train,
                        const std::vector<corpus::SentenceRecord>& test, const backend::Tokenizer& tokenizer,
                        const corpus::TagScheme& scheme, const DetectorConfig& config) {
  std::vector<std::int64_t> per_author(static_cast<std::size_t>(scheme.author_count()), 0);
  for (const auto& r : train) {
    if (scheme.contains_any_tag(r.text)) {
      throw Error(ErrorKind::kTagHygiene, "detector training sentence carries a tag: " + r.text);
    }
    ++per_author.at(static_cast<std::size_t>(r.author));
  }
  for (int a = 0; a < scheme.author_count(); ++a) {
    if (per_author[static_cast<std::size_t>(a)] == 0) {
      throw Error(ErrorKind::kMissingAuthor, "no detector training sentences for " + scheme.author(a).name);
    }
  }
  if (test.empty()) throw Error(ErrorKind::kInvalidArgument, "detector needs a test split");

  backend::ModelConfig mc = config.model;
  mc.kind = backend::ModelKind::kClassifier;
  mc.num_classes = scheme.author_count();
  mc.vocab = std::max(mc.vocab, tokenizer.vocab_size());
  Detector det = make_detector(backend::make_model(mc, config.backend_name), tokenizer, scheme);

  std::vector<Example> examples;
  for (const auto& r : train) examples.push_back({classifier_tokens(tokenizer, r.text, mc.context), r.author});

  const auto started = std::chrono::steady_clock::now();
  backend::AdamW optimizer(config.train.optimizer());
  const std::int64_t total = backend::steps_per_epoch(examples.size(), config.train.batch_size) * config.train.epochs;
  std::int64_t step = 0;
  std::unique_ptr<Model> best;
  double best_accuracy = -1.0;
  int since_best = 0;
  for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
    backend::EpochResult r;
    try {
      r = backend::train_epoch(*det.model, examples, backend::Objective::kClassLabel, optimizer, config.train, epoch,
                               step, total);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDivergence) throw;
      backend::TrainingReport report;
      report.task = "detector";
      report.method = "fft";
      report.epochs = epoch;
      report.steps = step;
      report.examples = static_cast<std::int64_t>(examples.size());
      for (const auto& m : det.history) report.epoch_losses.push_back(m.train_loss);
      report.config = config.train;
      report.aborted = e.what();
      report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      throw backend::TrainingAborted(std::string(e.what()) + " (detector, epoch " + std::to_string(epoch + 1) + ")",
                                     report);
    }
    const auto preds = classify_records(det, test);
    EpochMetrics m{epoch + 1, r.mean_loss, accuracy(preds), macro_f1(preds, scheme.author_count())};
    det.history.push_back(m);
    if (m.test_accuracy > best_accuracy) {
      best_accuracy = m.test_accuracy;
      best = det.model->clone();
      det.best_epoch = m.epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      det.early_stopped = epoch + 1 < config.train.epochs;
      break;
    }
  }
  det.model = std::move(best);
  return det;
}

Prediction classify(const Detector& detector, std::string_view sentence, int expected, std::string sentence_id) {
  const std::string clean = corpus::normalize_whitespace(sentence);
  if (clean.empty()) throw Error(ErrorKind::kEmptySentence, "empty sentence");
  if (detector.scheme.contains_any_tag(clean)) {
    throw Error(ErrorKind::kTagHygiene, "classifier input carries a tag: " + clean);
  }
  const auto ids = classifier_tokens(detector.tokenizer, clean, detector.model->config().context);
  const auto trace = detector.model->forward(ids, backend::kCaptureLogits);
  return prediction_from_logits(row_logits(trace.logits), expected, std::move(sentence_id));
}

std::vector<Prediction> classify_records(const Detector& detector, const std::vector<corpus::SentenceRecord>& records) {
  std::vector<Prediction> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::string id = r.source_doc.empty() ? std::to_string(i) : r.source_doc + ":" + std::to_string(i);
    out.push_back(classify(detector, r.text, r.author, id));
  }
  return out;
}

std::vector<Prediction> classify_generated(const Detector& detector, const generation::GeneratedSet& set) {
  std::vector<Prediction> out;
  out.reserve(set.items.size());
  for (const auto& item : set.items) {
    out.push_back(classify(detector, item.text, item.seed.author, set.method + ":" + std::to_string(item.index)));
  }
  return out;
}

double accuracy(const std::vector<Prediction>& preds) {
  if (preds.empty()) return 0.0;
  std::int64_t ok = 0;
  for (const auto& p : preds) ok += p.correct() ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(preds.size());
}

double macro_f1(const std::vector<Prediction>& preds, int classes) {
  if (classes < 1) throw Error(ErrorKind::kInvalidArgument, "classes must be >= 1");
  double sum = 0.0;
  for (int c = 0; c < classes; ++c) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (const auto& p : preds) {
      if (p.predicted == c && p.expected == c) ++tp;
      if (p.predicted == c && p.expected != c) ++fp;
      if (p.predicted != c && p.expected == c) ++fn;
    }
    const std::int64_t denom = 2 * tp + fp + fn;
    sum += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return sum / classes;
}

std::int64_t AgreementMatrix::total() const {
  std::int64_t n = 0;
  for (const auto& row : counts) {
    for (auto v : row) n += v;
  }
  return n;
}

std::int64_t AgreementMatrix::diagonal() const {
  std::int64_t n = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) n += counts[i][i];
  return n;
}

double AgreementMatrix::agreement_rate() const {
  const auto n = total();
  return n == 0 ? 0.0 : static_cast<double>(diagonal()) / static_cast<double>(n);
}

std::vector<std::int64_t> AgreementMatrix::row_sums() const {
  std::vector<std::int64_t> out;
  for (const auto& row : counts) {
    std::int64_t s = 0;
    for (auto v : row) s += v;
    out.push_back(s);
  }
  return out;
}

json AgreementMatrix::to_json(const corpus::TagScheme& scheme) const {
  std::vector<std::string> labels;
  for (int a = 0; a < scheme.author_count(); ++a) labels.push_back(scheme.author(a).name);
  return {{"labels", labels},           {"rows", "expected"},
          {"columns", "predicted"},     {"counts", counts},
          {"total", total()},           {"diagonal", diagonal()},
          {"agreement_rate", agreement_rate()}};
}

AgreementMatrix agreement_matrix(const std::vector<Prediction>& preds, int classes) {
  AgreementMatrix m;
  m.counts.assign(static_cast<std::size_t>(classes), std::vector<std::int64_t>(static_cast<std::size_t>(classes), 0));
  for (const auto& p : preds) {
    if (p.expected < 0 || p.expected >= classes || p.predicted < 0 || p.predicted >= classes) {
      throw Error(ErrorKind::kInvalidArgument, "prediction outside the class range");
    }
    ++m.counts[static_cast<std::size_t>(p.expected)][static_cast<std::size_t>(p.predicted)];
  }
  return m;
}

AgreementMatrix agreement_matrix(const Detector& detector, const generation::GeneratedSet& set) {
  return agreement_matrix(classify_generated(detector, set), detector.scheme.author_count());
}

json FilteredReport::to_json(const corpus::TagScheme& scheme) const {
  json authors = json::array();
  for (std::size_t a = 0; a < per_author.size(); ++a) {
    const auto& s = per_author[a];
    authors.push_back({{"author", scheme.author(static_cast<int>(a)).name},
                       {"retained", s.retained},
                       {"total", s.total},
                       {"avg_confidence", optional_number(s.avg_confidence)},
                       {"avg_accuracy", optional_number(s.avg_accuracy)}});
  }
  return {{"threshold", threshold},
          {"retained", retained},
          {"total", total},
          {"retained_fraction", retained_fraction},
          {"avg_confidence", optional_number(avg_confidence)},
          {"avg_accuracy", optional_number(avg_accuracy)},
          {"averages_defined", retained > 0},
          {"averaging", "micro"},
          {"per_author", authors}};
}

FilteredReport confidence_filter(const std::vector<Prediction>& preds, double threshold, int classes) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "threshold must lie in [0, 1]");
  }
  FilteredReport r;
  r.threshold = threshold;
  r.total = static_cast<std::int64_t>(preds.size());
  r.per_author.resize(static_cast<std::size_t>(classes));
  std::vector<double> conf_sum(static_cast<std::size_t>(classes), 0.0);
  std::vector<std::int64_t> correct(static_cast<std::size_t>(classes), 0);
  double all_conf = 0.0;
  std::int64_t all_correct = 0;
  for (const auto& p : preds) {
    const bool has_author = p.expected >= 0 && p.expected < classes;
    if (has_author) ++r.per_author[static_cast<std::size_t>(p.expected)].total;
    if (!(p.confidence > threshold)) continue;
    ++r.retained;
    all_conf += p.confidence;
    all_correct += p.correct() ? 1 : 0;
    if (has_author) {
      const auto a = static_cast<std::size_t>(p.expected);
      ++r.per_author[a].retained;
      conf_sum[a] += p.confidence;
      correct[a] += p.correct() ? 1 : 0;
    }
  }
  r.retained_fraction = r.total == 0 ? 0.0 : static_cast<double>(r.retained) / static_cast<double>(r.total);
  if (r.retained > 0) {
    r.avg_confidence = mean(all_conf, r.retained);
    r.avg_accuracy = mean(static_cast<double>(all_correct), r.retained);
  }
  for (std::size_t a = 0; a < r.per_author.size(); ++a) {
    auto& s = r.per_author[a];
    if (s.retained > 0) {
      s.avg_confidence = mean(conf_sum[a], s.retained);
      s.avg_accuracy = mean(static_cast<double>(correct[a]), s.retained);
    }
  }
  return r;
}

double binomial_upper_tail(std::int64_t k, std::int64_t n, double p) {
  if (n < 0 || p < 0.0 || p > 1.0) throw Error(ErrorKind::kInvalidArgument, "bad binomial parameters");
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  const double dn = static_cast<double>(n);
  const double lp = std::log(p), lq = std::log1p(-p);
  std::vector<double> terms;
  for (std::int64_t i = k; i <= n; ++i) {
    const double di = static_cast<double>(i);
    terms.push_back(std::lgamma(dn + 1.0) - std::lgamma(di + 1.0) - std::lgamma(dn - di + 1.0) + di * lp +
                    (dn - di) * lq);
  }
  const double top = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - top);
  return std::min(1.0, std::exp(top + std::log(s)));
}

void write_evaluation(const std::vector<Prediction>& preds, const corpus::TagScheme& scheme, double threshold,
                      const std::filesystem::path& dir, const json& extra) {
  std::vector<json> rows;
  for (const auto& p : preds) rows.push_back(p.to_json());
  io::write_jsonl(dir / "predictions.jsonl", rows);

  const int classes = scheme.author_count();
  const auto matrix = agreement_matrix(preds, classes);
  json agreement = matrix.to_json(scheme);
  const double chance = 1.0 / classes;
  agreement["chance"] = chance;
  agreement["binomial_p_value"] = binomial_upper_tail(matrix.diagonal(), matrix.total(), chance);
  std::int64_t ties = 0;
  for (const auto& p : preds) ties += p.tie ? 1 : 0;
  agreement["ties"] = ties;
  agreement["macro_f1"] = macro_f1(preds, classes);
  for (const auto& [k, v] : extra.items()) agreement[k] = v;
  io::write_json(dir / "agreement.json", agreement);
  io::write_json(dir / "filtered_report.json", confidence_filter(preds, threshold, classes).to_json(scheme));
}

void save_detector(const Detector& detector, const std::filesystem::path& dir) {
  json meta = {{"task", "detector"}, {"scheme", detector.scheme.to_json()}, {"scheme_hash", detector.scheme.hash()},
               {"report", detector.report()}};
  backend::save_checkpoint(*detector.model, detector.tokenizer, meta, dir);
}

Detector load_detector(const std::filesystem::path& dir) {
  auto ck = backend::load_checkpoint(dir);
  if (ck.meta.value("task", "") != "detector") {
    throw Error(ErrorKind::kConfig, "checkpoint at " + dir.string() + " is not a detector");
  }
  Detector d = make_detector(std::move(ck.model), ck.tokenizer, corpus::TagScheme::from_json(ck.meta.at("scheme")));
  const auto& report = ck.meta.at("report");
  d.best_epoch = report.value("best_epoch", 0);
  d.early_stopped = report.value("early_stopped", false);
  for (const auto& e : report.value("epochs", json::array())) {
    d.history.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("test_accuracy").get<double>(),
                         e.at("test_macro_f1").get<double>()});
  }
  return d;
}

}  // namespace styleforge::detector
