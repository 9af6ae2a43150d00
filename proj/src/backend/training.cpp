#include "styleforge/training.hpp"

#include <algorithm>
#include <numeric>

#include "styleforge/error.hpp"
#include "styleforge/rng.hpp"

namespace styleforge::backend {

AdamWConfig TrainConfig::optimizer() const {
  AdamWConfig c;
  c.lr = lr;
  c.weight_decay = weight_decay;
  c.clip_norm = clip_norm;
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"warmup_fraction", warmup_fraction},
          {"final_lr_fraction", final_lr_fraction},
          {"weight_decay", weight_decay},
          {"clip_norm", clip_norm},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.final_lr_fraction = j.value("final_lr_fraction", c.final_lr_fraction);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  if (c.epochs < 1 || c.batch_size < 1 || !(c.lr > 0.0)) {
    throw Error(ErrorKind::kConfig, "training needs epochs >= 1, batch_size >= 1 and lr > 0");
  }
  return c;
}

nlohmann::json TrainingReport::to_json() const {
  nlohmann::json j = {{"task", task},
            {"method", method},
            {"epochs", epochs},
            {"steps", steps},
            {"examples", examples},
            {"truncated", truncated},
            {"epoch_losses", epoch_losses},
            {"loss_curve", loss_curve},
            {"parameter_count", parameter_count},
            {"trainable_parameter_count", trainable_parameter_count},
            {"trainable_fraction", parameter_count > 0 ? static_cast<double>(trainable_parameter_count) /
                                                             static_cast<double>(parameter_count)
                                                       : 0.0},
            {"wall_seconds", wall_seconds},
            {"config", config.to_json()}};
  if (aborted) {
    j["aborted"] = *aborted;
  } else {
    j["aborted"] = nullptr;
  }
  return j;
}

double lr_scale(std::int64_t step, std::int64_t total_steps, const TrainConfig& config) {
  if (total_steps <= 0) return 1.0;
  const auto warmup = static_cast<std::int64_t>(config.warmup_fraction * static_cast<double>(total_steps));
  if (step < warmup) return static_cast<double>(step + 1) / static_cast<double>(warmup + 1);
  const double rest = static_cast<double>(std::max<std::int64_t>(1, total_steps - warmup));
  const double t = std::clamp(static_cast<double>(step - warmup) / rest, 0.0, 1.0);
  return 1.0 - (1.0 - config.final_lr_fraction) * t;
}

std::int64_t steps_per_epoch(std::size_t n, int batch_size) {
  return static_cast<std::int64_t>((n + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size));
}

EpochResult train_epoch(Model& model, const std::vector<Example>& examples, Objective objective, AdamW& optimizer,
                        const TrainConfig& config, int epoch, std::int64_t& global_step, std::int64_t total_steps) {
  if (examples.empty()) throw Error(ErrorKind::kInvalidArgument, "no training examples");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::derive(config.seed, static_cast<std::uint64_t>(epoch));
  rng.shuffle(order);

  EpochResult result;
  double total = 0.0;
  std::vector<Example> batch;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
    batch.clear();
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
    for (std::size_t i = start; i < end; ++i) batch.push_back(examples[order[i]]);
    const auto step = train_step(model, batch, objective, optimizer, lr_scale(global_step, total_steps, config));
    ++global_step;
    result.step_losses.push_back(step.loss);
    total += step.loss * static_cast<double>(batch.size());
  }
  result.mean_loss = total / static_cast<double>(examples.size());
  return result;
}

}  // namespace styleforge::backend
