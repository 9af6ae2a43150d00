#include <cmath>
#include <cstdlib>
#include <limits>

#include "styleforge/error.hpp"
#include "styleforge/model.hpp"
#include "styleforge/rng.hpp"

namespace styleforge::backend {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

struct LnCache {
  Matrix xhat;
  Eigen::VectorXd inv_std;
};

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LnCache& cache) {
  const auto rows = x.rows();
  const auto n = static_cast<double>(x.cols());
  cache.xhat.resize(rows, x.cols());
  cache.inv_std.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = x.row(r).sum() / n;
    const double var = (x.row(r).array() - mean).square().sum() / n;
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    cache.inv_std(r) = inv;
    cache.xhat.row(r) = (x.row(r).array() - mean) * inv;
  }
  Matrix y = cache.xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

// Returns dx; accumulates dgain / dbias when the pointers are non-null.
Matrix layer_norm_backward(const Matrix& dy, const LnCache& cache, const Matrix& gain, Matrix* dgain, Matrix* dbias) {
  if (dgain) dgain->row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  if (dbias) dbias->row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
  const auto n = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double sum_d = dxhat.row(r).sum();
    const double sum_dx = dxhat.row(r).dot(cache.xhat.row(r));
    dx.row(r) = (cache.inv_std(r) / n) *
                (n * dxhat.row(r).array() - sum_d - cache.xhat.row(r).array() * sum_dx).matrix();
  }
  return dx;
}

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u))); }

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

void softmax_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
}

Matrix normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double std) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * std;
  return m;
}

enum class LogitMode { kNone, kLastRow, kAll };

class ReferenceTransformer final : public Model {
 public:
  explicit ReferenceTransformer(const ModelConfig& config) : cfg_(config) {
    if (cfg_.layers < 1 || cfg_.heads < 1 || cfg_.embed_dim < 1 || cfg_.vocab < 1 || cfg_.context < 1 ||
        cfg_.num_classes < 1 || cfg_.mlp_ratio < 1) {
      throw Error(ErrorKind::kInvalidArgument, "model dimensions must be >= 1");
    }
    if (cfg_.embed_dim % cfg_.heads != 0) {
      throw Error(ErrorKind::kInvalidArgument, "embed_dim must be divisible by heads");
    }
    build();
  }

  std::string backend_name() const override { return "reference"; }
  const ModelConfig& config() const override { return cfg_; }

  ModelInfo info() const override {
    ModelInfo info;
    info.kind = cfg_.kind;
    info.layer_count = cfg_.layers;
    info.head_count = cfg_.heads;
    info.embed_dim = cfg_.embed_dim;
    for (const auto& p : params_) {
      info.parameter_count += p.value.size();
      if (p.trainable) info.trainable_parameter_count += p.value.size();
    }
    return info;
  }

  std::vector<Parameter>& parameters() override { return params_; }
  const std::vector<Parameter>& parameters() const override { return params_; }

  std::unique_ptr<Model> clone() const override { return std::make_unique<ReferenceTransformer>(*this); }

  Matrix token_embeddings(std::span<const int> tokens) const override {
    check_tokens(tokens);
    const Matrix& table = params_[tok_emb_].value;
    Matrix e(static_cast<Eigen::Index>(tokens.size()), cfg_.embed_dim);
    for (std::size_t t = 0; t < tokens.size(); ++t) e.row(static_cast<Eigen::Index>(t)) = table.row(tokens[t]);
    return e;
  }

  ForwardTrace forward(std::span<const int> tokens, unsigned capture) const override {
    ForwardTrace trace = forward_embeddings(token_embeddings(tokens), capture);
    trace.token_ids.assign(tokens.begin(), tokens.end());
    return trace;
  }

  ForwardTrace forward_embeddings(const Matrix& embeddings, unsigned capture) const override {
    Cache cache;
    const LogitMode mode = (capture & kCaptureLogits) ? LogitMode::kAll : LogitMode::kNone;
    Matrix logits = run(embeddings, cache, mode);
    ForwardTrace trace;
    trace.valid_len = static_cast<int>(embeddings.rows());
    if (capture & kCaptureAttentions) {
      trace.attentions.reserve(cache.layers.size());
      for (auto& layer : cache.layers) trace.attentions.push_back(std::move(layer.probs));
    }
    if (capture & kCaptureEmbeddings) trace.embeddings = embeddings;
    if (capture & kCaptureLogits) trace.logits = std::move(logits);
    return trace;
  }

  RowVector next_token_logits(std::span<const int> tokens) const override {
    require_causal();
    Cache cache;
    Matrix logits = run(token_embeddings(tokens), cache, LogitMode::kLastRow);
    return logits.row(0);
  }

  double target_value(const Matrix& embeddings, const LogitTarget& target, Matrix* grad) const override {
    Cache cache;
    Matrix logits = run(embeddings, cache, LogitMode::kAll);
    Matrix dlogits = Matrix::Zero(logits.rows(), logits.cols());
    const double value = target(logits, dlogits);
    if (grad) *grad = backward(cache, dlogits, nullptr);
    return value;
  }

  double accumulate_gradients(const Example& ex, Objective objective) override {
    Cache cache;
    Matrix logits = run(token_embeddings(ex.tokens), cache, LogitMode::kAll);
    Matrix dlogits;
    double loss = 0.0;
    if (objective == Objective::kNextToken) {
      require_causal();
      const auto T = static_cast<Eigen::Index>(ex.tokens.size());
      if (T < 2) throw Error(ErrorKind::kInvalidArgument, "next-token objective needs at least 2 tokens");
      dlogits = Matrix::Zero(T, logits.cols());
      const double inv = 1.0 / static_cast<double>(T - 1);
      for (Eigen::Index t = 0; t + 1 < T; ++t) {
        const int target = ex.tokens[static_cast<std::size_t>(t + 1)];
        RowVector row = logits.row(t);
        const double mx = row.maxCoeff();
        const double lse = mx + std::log((row.array() - mx).exp().sum());
        loss += (lse - row(target)) * inv;
        dlogits.row(t) = ((row.array() - lse).exp() * inv).matrix();
        dlogits(t, target) -= inv;
      }
    } else {
      if (cfg_.kind != ModelKind::kClassifier) {
        throw Error(ErrorKind::kInvalidArgument, "class-label objective needs a classifier model");
      }
      if (ex.label < 0 || ex.label >= cfg_.num_classes) {
        throw Error(ErrorKind::kInvalidArgument, "class label out of range");
      }
      RowVector row = logits.row(0);
      const double mx = row.maxCoeff();
      const double lse = mx + std::log((row.array() - mx).exp().sum());
      loss = lse - row(ex.label);
      dlogits = (row.array() - lse).exp().matrix();
      dlogits(0, ex.label) -= 1.0;
    }
    const Matrix demb = backward(cache, dlogits, &params_);
    auto& table = params_[static_cast<std::size_t>(tok_emb_)];
    if (table.trainable) {
      for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
        table.grad.row(ex.tokens[t]) += demb.row(static_cast<Eigen::Index>(t));
      }
    }
    return loss;
  }

  void resize_vocab(int vocab, std::uint64_t seed) override {
    if (vocab < cfg_.vocab) throw Error(ErrorKind::kInvalidArgument, "vocabulary can only grow");
    if (vocab == cfg_.vocab) return;
    Rng rng(seed);
    const int old = cfg_.vocab;
    auto& emb = params_[tok_emb_];
    Matrix grown(vocab, cfg_.embed_dim);
    grown.topRows(old) = emb.value;
    grown.bottomRows(vocab - old) = normal_matrix(rng, vocab - old, cfg_.embed_dim, cfg_.init_std);
    emb.value = std::move(grown);
    emb.grad = Matrix::Zero(vocab, cfg_.embed_dim);
    if (cfg_.kind == ModelKind::kCausalLm) {
      auto& head = params_[head_w_];
      Matrix wide(cfg_.embed_dim, vocab);
      wide.leftCols(old) = head.value;
      wide.rightCols(vocab - old) = normal_matrix(rng, cfg_.embed_dim, vocab - old, cfg_.init_std);
      head.value = std::move(wide);
      head.grad = Matrix::Zero(cfg_.embed_dim, vocab);
    }
    cfg_.vocab = vocab;
  }

  void enable_lora(const LoraConfig& lora, std::uint64_t seed) override {
    if (lora.rank < 1) throw Error(ErrorKind::kInvalidArgument, "LoRA rank must be >= 1");
    if (lora_rank_ > 0) throw Error(ErrorKind::kInvalidArgument, "LoRA already enabled");
    for (auto& p : params_) p.trainable = false;
    Rng rng(seed);
    const int d = cfg_.embed_dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    static constexpr const char* kProj[4] = {"q", "k", "v", "o"};
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      for (int j = 0; j < 4; ++j) {
        const std::string base = "layers." + std::to_string(l) + ".attn." + kProj[j];
        Matrix a(d, lora.rank);
        for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = (2.0 * rng.uniform() - 1.0) * bound;
        layers_[l].lora_a[j] = add(base + ".lora_a", std::move(a));
        layers_[l].lora_b[j] = add(base + ".lora_b", Matrix::Zero(lora.rank, d));
      }
    }
    lora_rank_ = lora.rank;
    lora_alpha_ = lora.alpha;
    lora_scale_ = lora.alpha / static_cast<double>(lora.rank);
  }

  void unfreeze_all() override {
    for (auto& p : params_) p.trainable = true;
  }

  std::optional<LoraConfig> lora() const override {
    if (lora_rank_ == 0) return std::nullopt;
    return LoraConfig{lora_rank_, lora_alpha_};
  }

 private:
  struct LayerIds {
    int ln1_g, ln1_b, ln2_g, ln2_b;
    int w[4], b[4];  // q, k, v, o
    int w1, b1, w2, b2;
    int lora_a[4] = {-1, -1, -1, -1};
    int lora_b[4] = {-1, -1, -1, -1};
  };

  struct LayerCache {
    LnCache ln1;
    Matrix h1, q, k, v, ctx;
    std::vector<Matrix> probs;
    Matrix lora_h[4];  // input @ A for each adapted projection
    LnCache ln2;
    Matrix h2, u, g;
  };

  struct Cache {
    std::vector<LayerCache> layers;
    LnCache lnf;
    Matrix xf;
    RowVector pooled;
  };

  int add(std::string name, Matrix value) {
    Parameter p;
    p.name = std::move(name);
    p.grad = Matrix::Zero(value.rows(), value.cols());
    p.value = std::move(value);
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
  }

  void build() {
    Rng rng(cfg_.seed);
    const int d = cfg_.embed_dim;
    const int hidden = cfg_.mlp_ratio * d;
    const double std = cfg_.init_std;
    const double resid_std = std / std::sqrt(2.0 * cfg_.layers);
    tok_emb_ = add("tok_emb", normal_matrix(rng, cfg_.vocab, d, std));
    pos_emb_ = add("pos_emb", normal_matrix(rng, cfg_.context, d, std));
    static constexpr const char* kProj[4] = {"q", "k", "v", "o"};
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string pre = "layers." + std::to_string(l) + ".";
      LayerIds ids{};
      ids.ln1_g = add(pre + "ln1.g", Matrix::Ones(1, d));
      ids.ln1_b = add(pre + "ln1.b", Matrix::Zero(1, d));
      for (int j = 0; j < 4; ++j) {
        ids.w[j] = add(pre + "attn." + kProj[j] + ".w", normal_matrix(rng, d, d, j == 3 ? resid_std : std));
        ids.b[j] = add(pre + "attn." + kProj[j] + ".b", Matrix::Zero(1, d));
      }
      ids.ln2_g = add(pre + "ln2.g", Matrix::Ones(1, d));
      ids.ln2_b = add(pre + "ln2.b", Matrix::Zero(1, d));
      ids.w1 = add(pre + "mlp.w1", normal_matrix(rng, d, hidden, std));
      ids.b1 = add(pre + "mlp.b1", Matrix::Zero(1, hidden));
      ids.w2 = add(pre + "mlp.w2", normal_matrix(rng, hidden, d, resid_std));
      ids.b2 = add(pre + "mlp.b2", Matrix::Zero(1, d));
      layers_.push_back(ids);
    }
    lnf_g_ = add("ln_f.g", Matrix::Ones(1, d));
    lnf_b_ = add("ln_f.b", Matrix::Zero(1, d));
    if (cfg_.kind == ModelKind::kCausalLm) {
      head_w_ = add("lm_head.w", normal_matrix(rng, d, cfg_.vocab, std));
    } else {
      head_w_ = add("cls_head.w", normal_matrix(rng, d, cfg_.num_classes, std));
      head_b_ = add("cls_head.b", Matrix::Zero(1, cfg_.num_classes));
    }
  }

  void require_causal() const {
    if (cfg_.kind != ModelKind::kCausalLm) throw Error(ErrorKind::kInvalidArgument, "operation needs a causal LM");
  }

  void check_tokens(std::span<const int> tokens) const {
    if (tokens.empty()) throw Error(ErrorKind::kInvalidArgument, "empty token sequence");
    if (static_cast<int>(tokens.size()) > cfg_.context) {
      throw Error(ErrorKind::kContextOverflow, "context overflow: " + std::to_string(tokens.size()) + " tokens > " +
                                                   std::to_string(cfg_.context));
    }
    for (int t : tokens) {
      if (t < 0 || t >= cfg_.vocab) throw Error(ErrorKind::kInvalidArgument, "token id out of range");
    }
  }

  const Matrix& P(int id) const { return params_[static_cast<std::size_t>(id)].value; }

  Matrix project(const LayerIds& ids, int j, const Matrix& h, LayerCache& lc) const {
    Matrix y = h * P(ids.w[j]);
    y.rowwise() += P(ids.b[j]).row(0);
    if (ids.lora_a[j] >= 0) {
      lc.lora_h[j] = h * P(ids.lora_a[j]);
      y.noalias() += lora_scale_ * (lc.lora_h[j] * P(ids.lora_b[j]));
    }
    return y;
  }

  Matrix project_backward(const LayerIds& ids, int j, const Matrix& h, const Matrix& dy, const LayerCache& lc,
                          std::vector<Parameter>* grads) const {
    Matrix dh = dy * P(ids.w[j]).transpose();
    if (grads) {
      auto& w = (*grads)[static_cast<std::size_t>(ids.w[j])];
      auto& b = (*grads)[static_cast<std::size_t>(ids.b[j])];
      if (w.trainable) w.grad.noalias() += h.transpose() * dy;
      if (b.trainable) b.grad.row(0) += dy.colwise().sum();
    }
    if (ids.lora_a[j] >= 0) {
      const Matrix dyB = dy * P(ids.lora_b[j]).transpose();
      dh.noalias() += lora_scale_ * (dyB * P(ids.lora_a[j]).transpose());
      if (grads) {
        auto& a = (*grads)[static_cast<std::size_t>(ids.lora_a[j])];
        auto& b = (*grads)[static_cast<std::size_t>(ids.lora_b[j])];
        if (a.trainable) a.grad.noalias() += lora_scale_ * (h.transpose() * dyB);
        if (b.trainable) b.grad.noalias() += lora_scale_ * (lc.lora_h[j].transpose() * dy);
      }
    }
    return dh;
  }

  Matrix run(const Matrix& embeddings, Cache& cache, LogitMode mode) const {
    const auto T = embeddings.rows();
    if (T < 1) throw Error(ErrorKind::kInvalidArgument, "empty token sequence");
    if (T > cfg_.context) {
      throw Error(ErrorKind::kContextOverflow,
                  "context overflow: " + std::to_string(T) + " tokens > " + std::to_string(cfg_.context));
    }
    if (embeddings.cols() != cfg_.embed_dim) throw Error(ErrorKind::kInvalidArgument, "embedding width mismatch");

    const int d = cfg_.embed_dim;
    const int dh = d / cfg_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool causal = cfg_.kind == ModelKind::kCausalLm;

    Matrix x = embeddings + P(pos_emb_).topRows(T);
    cache.layers.resize(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const LayerIds& ids = layers_[l];
      LayerCache& lc = cache.layers[l];
      lc.h1 = layer_norm(x, P(ids.ln1_g), P(ids.ln1_b), lc.ln1);
      lc.q = project(ids, 0, lc.h1, lc);
      lc.k = project(ids, 1, lc.h1, lc);
      lc.v = project(ids, 2, lc.h1, lc);
      lc.ctx.resize(T, d);
      lc.probs.resize(static_cast<std::size_t>(cfg_.heads));
      for (int h = 0; h < cfg_.heads; ++h) {
        Matrix s = (lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose()) * scale;
        if (causal) {
          for (Eigen::Index i = 0; i < T; ++i) {
            for (Eigen::Index j = i + 1; j < T; ++j) s(i, j) = -std::numeric_limits<double>::infinity();
          }
        }
        softmax_rows(s);
        lc.ctx.middleCols(h * dh, dh).noalias() = s * lc.v.middleCols(h * dh, dh);
        lc.probs[static_cast<std::size_t>(h)] = std::move(s);
      }
      x += project(ids, 3, lc.ctx, lc);
      lc.h2 = layer_norm(x, P(ids.ln2_g), P(ids.ln2_b), lc.ln2);
      lc.u = lc.h2 * P(ids.w1);
      lc.u.rowwise() += P(ids.b1).row(0);
      lc.g = lc.u.unaryExpr([](double u) { return gelu(u); });
      x.noalias() += lc.g * P(ids.w2);
      x.rowwise() += P(ids.b2).row(0);
    }
    cache.xf = layer_norm(x, P(lnf_g_), P(lnf_b_), cache.lnf);

    if (cfg_.kind == ModelKind::kClassifier) {
      cache.pooled = cache.xf.colwise().mean();
      if (mode == LogitMode::kNone) return {};
      Matrix logits = cache.pooled * P(head_w_);
      logits.row(0) += P(head_b_).row(0);
      return logits;
    }
    switch (mode) {
      case LogitMode::kNone: return {};
      case LogitMode::kLastRow: return cache.xf.bottomRows(1) * P(head_w_);
      case LogitMode::kAll: return cache.xf * P(head_w_);
    }
    return {};
  }

  // Returns d/d(input embeddings); accumulates parameter grads into `grads`
  // when non-null.
  Matrix backward(const Cache& cache, const Matrix& dlogits, std::vector<Parameter>* grads) const {
    const auto T = cache.xf.rows();
    const int d = cfg_.embed_dim;
    const int dh = d / cfg_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    auto grad_of = [&](int id) -> Parameter* {
      if (!grads) return nullptr;
      auto& p = (*grads)[static_cast<std::size_t>(id)];
      return p.trainable ? &p : nullptr;
    };

    Matrix dxf;
    if (cfg_.kind == ModelKind::kClassifier) {
      const RowVector dpooled = dlogits.row(0) * P(head_w_).transpose();
      if (auto* g = grad_of(head_w_)) g->grad.noalias() += cache.pooled.transpose() * dlogits.row(0);
      if (auto* g = grad_of(head_b_)) g->grad.row(0) += dlogits.row(0);
      dxf = dpooled.replicate(T, 1) / static_cast<double>(T);
    } else {
      dxf = dlogits * P(head_w_).transpose();
      if (auto* g = grad_of(head_w_)) g->grad.noalias() += cache.xf.transpose() * dlogits;
    }
    Matrix dx = layer_norm_backward(dxf, cache.lnf, P(lnf_g_), grad_of(lnf_g_) ? &grad_of(lnf_g_)->grad : nullptr,
                                    grad_of(lnf_b_) ? &grad_of(lnf_b_)->grad : nullptr);

    for (std::size_t li = layers_.size(); li-- > 0;) {
      const LayerIds& ids = layers_[li];
      const LayerCache& lc = cache.layers[li];

      // MLP block
      const Matrix dg = dx * P(ids.w2).transpose();
      if (auto* g = grad_of(ids.w2)) g->grad.noalias() += lc.g.transpose() * dx;
      if (auto* g = grad_of(ids.b2)) g->grad.row(0) += dx.colwise().sum();
      const Matrix du = dg.array() * lc.u.unaryExpr([](double u) { return gelu_grad(u); }).array();
      const Matrix dh2 = du * P(ids.w1).transpose();
      if (auto* g = grad_of(ids.w1)) g->grad.noalias() += lc.h2.transpose() * du;
      if (auto* g = grad_of(ids.b1)) g->grad.row(0) += du.colwise().sum();
      dx += layer_norm_backward(dh2, lc.ln2, P(ids.ln2_g), grad_of(ids.ln2_g) ? &grad_of(ids.ln2_g)->grad : nullptr,
                                grad_of(ids.ln2_b) ? &grad_of(ids.ln2_b)->grad : nullptr);

      // Attention block
      const Matrix dctx = project_backward(ids, 3, lc.ctx, dx, lc, grads);
      Matrix dq(T, d), dk(T, d), dv(T, d);
      for (int h = 0; h < cfg_.heads; ++h) {
        const Matrix& p = lc.probs[static_cast<std::size_t>(h)];
        const auto dctx_h = dctx.middleCols(h * dh, dh);
        const Matrix dp = dctx_h * lc.v.middleCols(h * dh, dh).transpose();
        dv.middleCols(h * dh, dh).noalias() = p.transpose() * dctx_h;
        const Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
        const Matrix ds = p.array() * (dp.array().colwise() - rowdot.array());
        dq.middleCols(h * dh, dh).noalias() = scale * (ds * lc.k.middleCols(h * dh, dh));
        dk.middleCols(h * dh, dh).noalias() = scale * (ds.transpose() * lc.q.middleCols(h * dh, dh));
      }
      Matrix dh1 = project_backward(ids, 0, lc.h1, dq, lc, grads);
      dh1 += project_backward(ids, 1, lc.h1, dk, lc, grads);
      dh1 += project_backward(ids, 2, lc.h1, dv, lc, grads);
      dx += layer_norm_backward(dh1, lc.ln1, P(ids.ln1_g), grad_of(ids.ln1_g) ? &grad_of(ids.ln1_g)->grad : nullptr,
                                grad_of(ids.ln1_b) ? &grad_of(ids.ln1_b)->grad : nullptr);
    }
    if (auto* g = grad_of(pos_emb_)) g->grad.topRows(T) += dx;
    return dx;
  }

  ModelConfig cfg_;
  std::vector<Parameter> params_;
  std::vector<LayerIds> layers_;
  int tok_emb_ = -1, pos_emb_ = -1, lnf_g_ = -1, lnf_b_ = -1, head_w_ = -1, head_b_ = -1;
  int lora_rank_ = 0;
  double lora_alpha_ = 0.0;
  double lora_scale_ = 0.0;
};

}  // namespace

std::unique_ptr<Model> make_reference_model(const ModelConfig& config) {
  return std::make_unique<ReferenceTransformer>(config);
}

}  // namespace styleforge::backend
