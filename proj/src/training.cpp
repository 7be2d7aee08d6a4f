#include "mmsa/training.hpp"

#include <cmath>
#include <utility>

#include "mmsa/errors.hpp"
#include "mmsa/ops.hpp"

namespace mmsa {
namespace {

// Sub-stream salts for the independent random streams a training run uses.
constexpr uint64_t kOrderStream = 1;
constexpr uint64_t kDropoutStream = 2;
constexpr uint64_t kPipelineInit = 10;
constexpr uint64_t kPipelineTrain = 20;

const char* kApproachNames[] = {"video", "audio", "text", "a0", "a1", "a2"};

}  // namespace

const char* approach_name(Approach a) { return kApproachNames[static_cast<int>(a)]; }

Approach parse_approach(const std::string& name) {
  for (int i = 0; i < 6; ++i) {
    if (name == kApproachNames[i]) return static_cast<Approach>(i);
  }
  throw ConfigError("unknown approach '" + name +
                    "' (expected video, audio, text, a0, a1, or a2)");
}

bool approach_is_unimodal(Approach a) {
  return a == Approach::Video || a == Approach::Audio || a == Approach::Text;
}

Modality approach_modality(Approach a) {
  if (!approach_is_unimodal(a)) {
    throw ContractError(std::string("approach_modality: ") + approach_name(a) +
                        " is not unimodal");
  }
  return static_cast<Modality>(static_cast<int>(a));
}

FusionMode approach_mode(Approach a) {
  switch (a) {
    case Approach::EarlyConcat:
      return FusionMode::EarlyConcat;
    case Approach::Attention:
      return FusionMode::Attention;
    default:
      return FusionMode::LateVote;
  }
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: expected [batch x classes] logits, got " +
                     shape_string(logits.shape()));
  }
  int b = logits.extent(0);
  int c = logits.extent(1);
  if (int(labels.size()) != b) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(b) + " logit rows");
  }
  for (int i = 0; i < b; ++i) {
    if (labels[size_t(i)] < 0 || labels[size_t(i)] >= c) {
      throw DataError("cross_entropy: label " + std::to_string(labels[size_t(i)]) +
                      " at row " + std::to_string(i) + " outside [0, " + std::to_string(c) +
                      ")");
    }
  }

  Tensor probs = Tensor::zeros({b, c});
  std::span<const Scalar> xv = logits.data();
  std::span<Scalar> pv = probs.data();
  Scalar total = 0;
  for (int i = 0; i < b; ++i) {
    const Scalar* row = xv.data() + int64_t(i) * c;
    Scalar* prow = pv.data() + int64_t(i) * c;
    Scalar m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    Scalar sum = 0;
    for (int j = 0; j < c; ++j) {
      prow[j] = std::exp(row[j] - m);
      sum += prow[j];
    }
    for (int j = 0; j < c; ++j) prow[j] /= sum;
    total += m + std::log(sum) - row[labels[size_t(i)]];
  }
  Tensor out = Tensor::scalar_value(total / Scalar(b));
  ensure_finite(out.data(), "cross_entropy");

  if (taping(logits)) {
    out.set_requires_grad(true);
    Tensor lt = logits, ot = out, pt = probs;
    std::vector<int> yv = labels;
    active_tape()->record([lt, ot, pt, yv]() mutable {
      if (!ot.has_grad()) return;
      Scalar g = std::as_const(ot).grad()[0];
      int rows = lt.extent(0), cols = lt.extent(1);
      Scalar scale = g / Scalar(rows);
      std::span<const Scalar> p = pt.data();
      std::span<Scalar> dx = lt.grad_or_zeros();
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
          Scalar onehot = j == yv[size_t(i)] ? Scalar(1) : Scalar(0);
          dx[size_t(i) * size_t(cols) + size_t(j)] +=
              scale * (p[size_t(i) * size_t(cols) + size_t(j)] - onehot);
        }
      }
      ensure_finite(dx, "cross_entropy");
    });
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate > Scalar(0))) throw ConfigError("learning_rate must be positive");
  if (!(beta1 > Scalar(0) && beta1 < Scalar(1))) throw ConfigError("beta1 must be in (0,1)");
  if (!(beta2 > Scalar(0) && beta2 < Scalar(1))) throw ConfigError("beta2 must be in (0,1)");
  if (!(eps > Scalar(0))) throw ConfigError("eps must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      lr_(cfg.learning_rate),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.eps) {
  cfg.validate();
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(size_t(p.numel()), Scalar(0));
    v_.emplace_back(size_t(p.numel()), Scalar(0));
  }
}

void AdamOptimizer::step() {
  t_ += 1;
  Scalar bc1 = Scalar(1) - std::pow(beta1_, Scalar(t_));
  Scalar bc2 = Scalar(1) - std::pow(beta2_, Scalar(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    std::span<Scalar> pv = p.data();
    std::span<const Scalar> gv = p.grad_or_zeros();
    std::vector<Scalar>& m = m_[k];
    std::vector<Scalar>& v = v_[k];
    for (size_t i = 0; i < pv.size(); ++i) {
      Scalar g = gv[i];
      m[i] = beta1_ * m[i] + (Scalar(1) - beta1_) * g;
      v[i] = beta2_ * v[i] + (Scalar(1) - beta2_) * g * g;
      Scalar m_hat = m[i] / bc1;
      Scalar v_hat = v[i] / bc2;
      pv[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
    ensure_finite(pv, "adam step");
    p.clear_grad();
  }
}

Tensor approach_loss(const FusionModel& model, Approach a, const Batch& batch,
                     const ForwardCtx& ctx) {
  switch (a) {
    case Approach::EarlyConcat:
      return cross_entropy(early_fusion_forward(model, batch, ctx), batch.labels);
    case Approach::Attention:
      return cross_entropy(attention_fusion_forward(model, batch, ctx), batch.labels);
    case Approach::LateVote: {
      std::array<Tensor, 3> logits = late_fusion_logits(model, batch, ctx);
      return add(add(cross_entropy(logits[0], batch.labels),
                     cross_entropy(logits[1], batch.labels)),
                 cross_entropy(logits[2], batch.labels));
    }
    default: {
      Modality m = approach_modality(a);
      int mi = static_cast<int>(m);
      EncodedModality enc = modality_forward(batch.features[size_t(mi)], batch.mask(m),
                                             model.encoder(m), model.config, ctx);
      return cross_entropy(enc.logits, batch.labels);
    }
  }
}

std::vector<int> approach_predict(const FusionModel& model, Approach a, const Batch& batch) {
  if (approach_is_unimodal(a)) {
    Modality m = approach_modality(a);
    int mi = static_cast<int>(m);
    ForwardCtx ctx;
    EncodedModality enc = modality_forward(batch.features[size_t(mi)], batch.mask(m),
                                           model.encoder(m), model.config, ctx);
    return argmax_rows(enc.logits);
  }
  return predict(model, batch);
}

std::vector<Tensor> approach_params(const FusionModel& model, Approach a) {
  if (model.mode != approach_mode(a)) {
    throw ContractError(std::string("approach ") + approach_name(a) + " needs a " +
                        fusion_mode_name(approach_mode(a)) + " model, got " +
                        fusion_mode_name(model.mode));
  }
  if (!approach_is_unimodal(a)) return trainable_params(model);
  std::string prefix = std::string(approach_name(a)) + ".";
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params(model)) {
    if (name.rfind(prefix, 0) == 0) out.push_back(t);
  }
  return out;
}

EvalResult evaluate(const FusionModel& model, Approach a, const Dataset& ds, int batch_size) {
  if (ds.size() == 0) throw DataError("evaluate: empty dataset");
  if (model.mode != approach_mode(a)) {
    throw ContractError(std::string("approach ") + approach_name(a) + " needs a " +
                        fusion_mode_name(approach_mode(a)) + " model, got " +
                        fusion_mode_name(model.mode));
  }
  ForwardCtx ctx;
  Scalar total_loss = 0;
  int64_t correct = 0;
  for (const Batch& batch : make_batches(ds, identity_order(ds.size()), batch_size)) {
    total_loss += approach_loss(model, a, batch, ctx).value() * Scalar(batch.size());
    std::vector<int> preds = approach_predict(model, a, batch);
    for (int i = 0; i < batch.size(); ++i) {
      if (preds[size_t(i)] == batch.labels[size_t(i)]) ++correct;
    }
  }
  EvalResult r;
  r.accuracy = Scalar(correct) / Scalar(ds.size());
  r.mean_loss = total_loss / Scalar(ds.size());
  return r;
}

TrainHistory train(FusionModel& model, const Dataset& train_set, const Dataset& val_set,
                   const TrainConfig& cfg) {
  cfg.validate();
  if (model.mode != approach_mode(cfg.approach)) {
    throw ContractError(std::string("approach ") + approach_name(cfg.approach) + " needs a " +
                        fusion_mode_name(approach_mode(cfg.approach)) + " model, got " +
                        fusion_mode_name(model.mode));
  }
  if (train_set.size() == 0) throw DataError("train: empty training set");
  if (val_set.size() == 0) throw DataError("train: empty validation set");

  AdamOptimizer optimizer(approach_params(model, cfg.approach), cfg);
  Rng order_rng = Rng(cfg.seed).derive(kOrderStream);
  Rng dropout_rng = Rng(cfg.seed).derive(kDropoutStream);
  std::vector<int> order = identity_order(train_set.size());

  TrainHistory history;
  history.reserve(size_t(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (const Batch& batch : make_batches(train_set, order, cfg.batch_size)) {
      GradTape tape;
      TapeScope scope(&tape);
      ForwardCtx ctx;
      ctx.training = true;
      ctx.dropout_rate = model.config.dropout_rate;
      ctx.rng = &dropout_rng;
      Tensor loss = approach_loss(model, cfg.approach, batch, ctx);
      backward(loss, tape);
      optimizer.step();
    }
    EvalResult tr = evaluate(model, cfg.approach, train_set, cfg.batch_size);
    EvalResult va = evaluate(model, cfg.approach, val_set, cfg.batch_size);
    history.push_back({tr.mean_loss, tr.accuracy, va.mean_loss, va.accuracy});
  }
  return history;
}

uint64_t sub_seed(uint64_t seed, uint64_t salt) { return Rng(seed).derive(salt).next_u64(); }

PipelineResult late_fusion_pipeline(const Dataset& train_set, const Dataset& val_set,
                                    const Dataset& test_set, const EncoderConfig& enc_cfg,
                                    int fusion_hidden, const TrainConfig& cfg) {
  if (cfg.approach != Approach::LateVote) {
    throw ContractError(std::string("late_fusion_pipeline: approach must be a0, got ") +
                        approach_name(cfg.approach));
  }
  std::array<int, 3> dims = {int(train_set.shapes[0].feat_dim),
                             int(train_set.shapes[1].feat_dim),
                             int(train_set.shapes[2].feat_dim)};
  Rng init_rng(sub_seed(cfg.seed, kPipelineInit));
  PipelineResult result{
      make_fusion_model(FusionMode::LateVote, dims, enc_cfg, fusion_hidden, init_rng),
      {},
      {},
      0};
  for (int m = 0; m < 3; ++m) {
    TrainConfig sub = cfg;
    sub.approach = static_cast<Approach>(m);
    sub.seed = sub_seed(cfg.seed, kPipelineTrain + uint64_t(m));
    result.unimodal_history[size_t(m)] = train(result.model, train_set, val_set, sub);
    result.unimodal_test_accuracy[size_t(m)] =
        evaluate(result.model, sub.approach, test_set, cfg.batch_size).accuracy;
  }
  result.voted_test_accuracy =
      evaluate(result.model, Approach::LateVote, test_set, cfg.batch_size).accuracy;
  return result;
}

}  // namespace mmsa
