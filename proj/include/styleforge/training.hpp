#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "styleforge/error.hpp"
#include "styleforge/model.hpp"

namespace styleforge::backend {

struct TrainConfig {
  int epochs = 3;
  int batch_size = 16;
  double lr = 1e-3;
  // Linear warmup over this fraction of all steps, then linear decay to
  // `final_lr_fraction` of the peak.
  double warmup_fraction = 0.05;
  double final_lr_fraction = 0.1;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;

  AdamWConfig optimizer() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig defaults);
};

struct TrainingReport {
  std::string task;
  std::string method;
  int epochs = 0;
  std::int64_t steps = 0;
  std::int64_t examples = 0;
  std::int64_t truncated = 0;
  std::vector<double> epoch_losses;
  // Mean loss over consecutive windows of optimizer steps.
  std::vector<double> loss_curve;
  std::int64_t parameter_count = 0;
  std::int64_t trainable_parameter_count = 0;
  double wall_seconds = 0.0;
  std::optional<std::string> aborted;
  TrainConfig config;

  nlohmann::json to_json() const;
};

// Thrown when training stops on a non-finite loss; carries the partial report.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& message, TrainingReport report)
      : Error(ErrorKind::kDivergence, message), report_(std::move(report)) {}
  const TrainingReport& report() const { return report_; }

 private:
  TrainingReport report_;
};

double lr_scale(std::int64_t step, std::int64_t total_steps, const TrainConfig& config);

// Batches per epoch for `n` examples.
std::int64_t steps_per_epoch(std::size_t n, int batch_size);

struct EpochResult {
  double mean_loss = 0.0;
  std::vector<double> step_losses;
};

// One pass over `examples` in an order shuffled by (config.seed, epoch).
// `global_step` is advanced by the number of optimizer steps taken.
EpochResult train_epoch(Model& model, const std::vector<Example>& examples, Objective objective, AdamW& optimizer,
                        const TrainConfig& config, int epoch, std::int64_t& global_step, std::int64_t total_steps);

}  // namespace styleforge::backend
