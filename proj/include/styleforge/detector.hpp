#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "styleforge/corpus.hpp"
#include "styleforge/generation.hpp"
#include "styleforge/model.hpp"
#include "styleforge/tokenizer.hpp"
#include "styleforge/training.hpp"

namespace styleforge::detector {

using nlohmann::json;

struct DetectorConfig {
  backend::ModelConfig model;  // kind is forced to classifier
  backend::TrainConfig train;
  int patience = 3;
  std::string backend_name = backend::backend_from_env();

  DetectorConfig();
  json to_json() const;
  static DetectorConfig from_json(const json& j);
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double test_macro_f1 = 0.0;
};

struct Detector {
  std::unique_ptr<backend::Model> model;
  backend::Tokenizer tokenizer;
  corpus::TagScheme scheme = corpus::TagScheme::default_scheme();
  std::vector<EpochMetrics> history;
  int best_epoch = 0;
  bool early_stopped = false;

  json report() const;
};

struct Prediction {
  std::string sentence_id;
  std::vector<double> probs;
  int predicted = 0;
  double confidence = 0.0;
  int expected = -1;
  // More than one class shared the maximum probability.
  bool tie = false;

  bool correct() const { return predicted == expected; }
  json to_json() const;
  static Prediction from_json(const json& j);
};

// Softmax over the logits; ties go to the lowest index.
Prediction prediction_from_logits(const std::vector<double>& logits, int expected = -1, std::string sentence_id = "");

// Token ids fed to the classifier for one sentence.
std::vector<int> classifier_tokens(const backend::Tokenizer& tokenizer, std::string_view sentence, int context);

// Trains on `train` and reports accuracy / macro-F1 on `test` after every
// epoch, keeping the weights of the best test epoch. Stops after
// config.train.epochs or when `patience` epochs pass without improvement.
Detector train_detector(const std::vector<corpus::SentenceRecord>& train,
                        const std::vector<corpus::SentenceRecord>& test, const backend::Tokenizer& tokenizer,
                        const corpus::TagScheme& scheme, const DetectorConfig& config);

Prediction classify(const Detector& detector, std::string_view sentence, int expected = -1,
                     std::string sentence_id = "");

std::vector<Prediction> classify_records(const Detector& detector, const std::vector<corpus::SentenceRecord>& records);
std::vector<Prediction> classify_generated(const Detector& detector, const generation::GeneratedSet& set);

double accuracy(const std::vector<Prediction>& preds);
// Unweighted mean over classes of per-class F1; a class with no support and
// no predictions contributes 0.
double macro_f1(const std::vector<Prediction>& preds, int classes);

struct AgreementMatrix {
  // counts[expected][predicted]
  std::vector<std::vector<std::int64_t>> counts;

  std::int64_t total() const;
  std::int64_t diagonal() const;
  double agreement_rate() const;
  std::vector<std::int64_t> row_sums() const;
  json to_json(const corpus::TagScheme& scheme) const;
};

AgreementMatrix agreement_matrix(const std::vector<Prediction>& preds, int classes);
AgreementMatrix agreement_matrix(const Detector& detector, const generation::GeneratedSet& set);

struct AuthorFilterStats {
  std::int64_t retained = 0;
  std::int64_t total = 0;
  std::optional<double> avg_confidence;
  std::optional<double> avg_accuracy;
};

struct FilteredReport {
  double threshold = 0.0;
  std::int64_t retained = 0;
  std::int64_t total = 0;
  double retained_fraction = 0.0;
  // Undefined when nothing is retained.
  std::optional<double> avg_confidence;
  std::optional<double> avg_accuracy;
  std::vector<AuthorFilterStats> per_author;  // indexed by expected author

  json to_json(const corpus::TagScheme& scheme) const;
};

// Keeps predictions with confidence strictly above `threshold`. Averages
// are micro averages over the retained predictions.
FilteredReport confidence_filter(const std::vector<Prediction>& preds, double threshold, int classes);

// One-sided P(X >= k) for X ~ Binomial(n, p).
double binomial_upper_tail(std::int64_t k, std::int64_t n, double p);

// predictions.jsonl, agreement.json and filtered_report.json under `dir`.
void write_evaluation(const std::vector<Prediction>& preds, const corpus::TagScheme& scheme, double threshold,
                      const std::filesystem::path& dir, const json& extra = json::object());

void save_detector(const Detector& detector, const std::filesystem::path& dir);
Detector load_detector(const std::filesystem::path& dir);

}  // namespace styleforge::detector
