#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "styleforge/tokenizer.hpp"

namespace styleforge::backend {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

enum class ModelKind { kCausalLm, kClassifier };

struct ModelConfig {
  ModelKind kind = ModelKind::kCausalLm;
  int layers = 2;
  int heads = 2;
  int embed_dim = 64;
  int vocab = 1024;
  int context = 96;
  int num_classes = 5;
  int mlp_ratio = 4;
  std::uint64_t seed = 0;
  double init_std = 0.02;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct LoraConfig {
  int rank = 8;
  double alpha = 16.0;
};

// Summary of a model; what the rest of the pipeline sees of it.
struct ModelInfo {
  ModelKind kind = ModelKind::kCausalLm;
  int layer_count = 0;
  int head_count = 0;
  int embed_dim = 0;
  std::int64_t parameter_count = 0;
  std::int64_t trainable_parameter_count = 0;
};

enum Capture : unsigned {
  kCaptureNone = 0,
  kCaptureAttentions = 1u << 0,
  kCaptureEmbeddings = 1u << 1,
  kCaptureLogits = 1u << 2,
  kCaptureAll = 7u,
};

struct ForwardTrace {
  std::vector<int> token_ids;
  int valid_len = 0;
  // attentions[layer][head]: valid_len x valid_len, rows sum to one over the
  // keys the query may see.
  std::vector<std::vector<Matrix>> attentions;
  // Input token embeddings, [valid_len, embed_dim]. Positional embeddings
  // are added inside the model and are not part of this tensor.
  Matrix embeddings;
  // [valid_len, vocab] for a causal LM, [1, num_classes] for a classifier.
  Matrix logits;
};

// Scalar function of the logits. Returns its value and writes the gradient
// with respect to the logits (same shape) into `grad`.
using LogitTarget = std::function<double(const Matrix& logits, Matrix& grad)>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;
};

enum class Objective { kNextToken, kClassLabel };

struct Example {
  std::vector<int> tokens;
  int label = -1;  // class index for kClassLabel
};

// Capability surface shared by every backend: introspective forward passes,
// gradients with respect to input embeddings, and training.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string backend_name() const = 0;
  virtual const ModelConfig& config() const = 0;
  virtual ModelInfo info() const = 0;

  virtual ForwardTrace forward(std::span<const int> tokens, unsigned capture) const = 0;
  // Same as forward() but from explicit token embeddings ([T, embed_dim]).
  virtual ForwardTrace forward_embeddings(const Matrix& embeddings, unsigned capture) const = 0;
  virtual Matrix token_embeddings(std::span<const int> tokens) const = 0;

  // Logits for the token following `tokens` (causal LM only).
  virtual RowVector next_token_logits(std::span<const int> tokens) const = 0;

  // Evaluates target(logits(embeddings)); when `grad` is non-null, stores the
  // gradient with respect to the embeddings.
  virtual double target_value(const Matrix& embeddings, const LogitTarget& target, Matrix* grad) const = 0;

  // Adds d(loss)/d(parameters) of one example into Parameter::grad and
  // returns the example loss.
  virtual double accumulate_gradients(const Example& example, Objective objective) = 0;

  virtual std::vector<Parameter>& parameters() = 0;
  virtual const std::vector<Parameter>& parameters() const = 0;

  // Grows the token vocabulary (new embedding rows / output columns drawn
  // from the init distribution with `seed`).
  virtual void resize_vocab(int vocab, std::uint64_t seed) = 0;
  // Injects low-rank adapters and freezes every other parameter.
  virtual void enable_lora(const LoraConfig& lora, std::uint64_t seed) = 0;
  virtual std::optional<LoraConfig> lora() const = 0;
  // Marks every parameter trainable.
  virtual void unfreeze_all() = 0;
  virtual std::unique_ptr<Model> clone() const = 0;

  void zero_grad();
};

std::unique_ptr<Model> make_reference_model(const ModelConfig& config);

// STYLEFORGE_BACKEND, defaulting to "reference".
std::string backend_from_env();
std::unique_ptr<Model> make_model(const ModelConfig& config, const std::string& backend);

// Closed-form parameter count of the reference architecture.
std::int64_t reference_parameter_count(const ModelConfig& config, int lora_rank = 0);

// ---------------------------------------------------------------------------
// Optimization

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}
  // Applies one update to the trainable parameters using their grads.
  // Returns the pre-clip global gradient norm.
  double step(std::vector<Parameter>& params, double lr_scale = 1.0);
  std::int64_t steps() const { return step_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  std::int64_t step_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
};

// One optimizer step on the mean loss of `batch`. Throws kDivergence when
// the loss or gradient is not finite.
StepResult train_step(Model& model, std::span<const Example> batch, Objective objective, AdamW& optimizer,
                      double lr_scale = 1.0);

// ---------------------------------------------------------------------------
// Checkpoints: weights.bin, tokenizer.json, config.json.

struct Checkpoint {
  std::unique_ptr<Model> model;
  Tokenizer tokenizer;
  nlohmann::json meta;
};

void save_checkpoint(const Model& model, const Tokenizer& tokenizer, const nlohmann::json& meta,
                     const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace styleforge::backend
