#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "styleforge/error.hpp"
#include "styleforge/io.hpp"
#include "styleforge/model.hpp"

namespace styleforge::backend {

using nlohmann::json;

json ModelConfig::to_json() const {
  return {{"kind", kind == ModelKind::kCausalLm ? "causal_lm" : "classifier"},
          {"layers", layers},
          {"heads", heads},
          {"embed_dim", embed_dim},
          {"vocab", vocab},
          {"context", context},
          {"num_classes", num_classes},
          {"mlp_ratio", mlp_ratio},
          {"seed", seed},
          {"init_std", init_std}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  const std::string kind = j.value("kind", "causal_lm");
  if (kind != "causal_lm" && kind != "classifier") throw Error(ErrorKind::kConfig, "unknown model kind " + kind);
  c.kind = kind == "causal_lm" ? ModelKind::kCausalLm : ModelKind::kClassifier;
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.vocab = j.value("vocab", c.vocab);
  c.context = j.value("context", c.context);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.seed = j.value("seed", c.seed);
  c.init_std = j.value("init_std", c.init_std);
  return c;
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.grad.setZero();
}

std::string backend_from_env() {
  const char* env = std::getenv("STYLEFORGE_BACKEND");
  return env && *env ? std::string(env) : std::string("reference");
}

std::unique_ptr<Model> make_model(const ModelConfig& config, const std::string& backend) {
  if (backend == "reference") return make_reference_model(config);
  throw Error(ErrorKind::kConfig, "unknown backend '" + backend + "' (available: reference)");
}

std::int64_t reference_parameter_count(const ModelConfig& c, int lora_rank) {
  const std::int64_t d = c.embed_dim;
  const std::int64_t hidden = static_cast<std::int64_t>(c.mlp_ratio) * d;
  // ln1, ln2: 4d; q,k,v,o: 4(d^2 + d); mlp: d*hidden + hidden + hidden*d + d
  const std::int64_t per_layer = 4 * d + 4 * (d * d + d) + 2 * d * hidden + hidden + d;
  std::int64_t total = static_cast<std::int64_t>(c.vocab) * d + static_cast<std::int64_t>(c.context) * d +
                       c.layers * per_layer + 2 * d;
  if (c.kind == ModelKind::kCausalLm) {
    total += d * c.vocab;
  } else {
    total += d * c.num_classes + c.num_classes;
  }
  total += static_cast<std::int64_t>(c.layers) * 4 * lora_rank * (d + d);
  return total;
}

// ---------------------------------------------------------------------------

double AdamW::step(std::vector<Parameter>& params, double lr_scale) {
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.trainable) sq += p.grad.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double clip = (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

  ++step_;
  const double lr = config_.lr * lr_scale;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    if (m_[i].rows() != p.value.rows() || m_[i].cols() != p.value.cols()) {
      m_[i] = Matrix::Zero(p.value.rows(), p.value.cols());
      v_[i] = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    const Matrix g = p.grad * clip;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    // Decay weight matrices only; gains, biases and row vectors are exempt.
    if (config_.weight_decay > 0.0 && p.value.rows() > 1) p.value *= (1.0 - lr * config_.weight_decay);
    p.value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + config_.eps);
  }
  return norm;
}

StepResult train_step(Model& model, std::span<const Example> batch, Objective objective, AdamW& optimizer,
                      double lr_scale) {
  if (batch.empty()) throw Error(ErrorKind::kInvalidArgument, "empty batch");
  model.zero_grad();
  double loss = 0.0;
  for (const auto& ex : batch) loss += model.accumulate_gradients(ex, objective);
  const double inv = 1.0 / static_cast<double>(batch.size());
  loss *= inv;
  for (auto& p : model.parameters()) {
    if (p.trainable) p.grad *= inv;
  }
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "divergence: loss=" << loss << " at optimizer step " << optimizer.steps() + 1;
    throw Error(ErrorKind::kDivergence, msg.str());
  }
  StepResult result;
  result.loss = loss;
  result.grad_norm = optimizer.step(model.parameters(), lr_scale);
  if (!std::isfinite(result.grad_norm)) {
    std::ostringstream msg;
    msg << "divergence: gradient norm=" << result.grad_norm << " at optimizer step " << optimizer.steps();
    throw Error(ErrorKind::kDivergence, msg.str());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'S', 'F', 'W', '1'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error(ErrorKind::kIo, "truncated weights file");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

void save_checkpoint(const Model& model, const Tokenizer& tokenizer, const json& meta,
                     const std::filesystem::path& dir) {
  std::string blob(kMagic, 4);
  const auto& params = model.parameters();
  put<std::uint64_t>(blob, params.size());
  for (const auto& p : params) {
    put<std::uint32_t>(blob, static_cast<std::uint32_t>(p.name.size()));
    blob += p.name;
    put<std::uint8_t>(blob, p.trainable ? 1 : 0);
    put<std::uint64_t>(blob, static_cast<std::uint64_t>(p.value.rows()));
    put<std::uint64_t>(blob, static_cast<std::uint64_t>(p.value.cols()));
    blob.append(reinterpret_cast<const char*>(p.value.data()), sizeof(double) * static_cast<std::size_t>(p.value.size()));
  }
  io::write_file(dir / "weights.bin", blob);
  io::write_json(dir / "tokenizer.json", tokenizer.to_json());

  json config = meta;
  config["backend"] = model.backend_name();
  config["model"] = model.config().to_json();
  if (auto lora = model.lora()) {
    config["lora"] = {{"rank", lora->rank}, {"alpha", lora->alpha}};
  } else {
    config["lora"] = nullptr;
  }
  const auto info = model.info();
  config["parameter_count"] = info.parameter_count;
  config["trainable_parameter_count"] = info.trainable_parameter_count;
  config["weights_sha256"] = io::sha256_hex(blob);
  io::write_json(dir / "config.json", config);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Checkpoint ck;
  ck.meta = io::read_json(dir / "config.json");
  ck.tokenizer = Tokenizer::from_json(io::read_json(dir / "tokenizer.json"));
  const auto config = ModelConfig::from_json(ck.meta.at("model"));
  ck.model = make_model(config, ck.meta.value("backend", "reference"));
  if (ck.meta.contains("lora") && !ck.meta["lora"].is_null()) {
    ck.model->enable_lora({ck.meta["lora"].at("rank").get<int>(), ck.meta["lora"].at("alpha").get<double>()}, 0);
  }

  const std::string blob = io::read_file(dir / "weights.bin");
  if (blob.size() < 4 || std::memcmp(blob.data(), kMagic, 4) != 0) {
    throw Error(ErrorKind::kIo, "not a weights file: " + (dir / "weights.bin").string());
  }
  std::size_t pos = 4;
  auto& params = ck.model->parameters();
  const auto count = take<std::uint64_t>(blob, pos);
  if (count != params.size()) throw Error(ErrorKind::kIo, "weights file parameter count mismatch");
  for (auto& p : params) {
    const auto len = take<std::uint32_t>(blob, pos);
    if (pos + len > blob.size()) throw Error(ErrorKind::kIo, "truncated weights file");
    const std::string name = blob.substr(pos, len);
    pos += len;
    if (name != p.name) throw Error(ErrorKind::kIo, "weights file has '" + name + "' where '" + p.name + "' expected");
    p.trainable = take<std::uint8_t>(blob, pos) != 0;
    const auto rows = take<std::uint64_t>(blob, pos);
    const auto cols = take<std::uint64_t>(blob, pos);
    if (static_cast<Eigen::Index>(rows) != p.value.rows() || static_cast<Eigen::Index>(cols) != p.value.cols()) {
      throw Error(ErrorKind::kIo, "shape mismatch for " + name);
    }
    const std::size_t bytes = sizeof(double) * rows * cols;
    if (pos + bytes > blob.size()) throw Error(ErrorKind::kIo, "truncated weights file");
    std::memcpy(p.value.data(), blob.data() + pos, bytes);
    pos += bytes;
  }
  return ck;
}

}  // namespace styleforge::backend
