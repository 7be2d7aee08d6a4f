#include "mmsa/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "mmsa/errors.hpp"

namespace mmsa {

const char* fusion_mode_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::LateVote: return "late_vote";
    case FusionMode::EarlyConcat: return "early_concat";
    case FusionMode::Attention: return "attention";
  }
  throw ContractError("unknown fusion mode");
}

const ModalityEncoder& FusionModel::encoder(Modality m) const {
  switch (m) {
    case Modality::Video: return video;
    case Modality::Audio: return audio;
    case Modality::Text: return text;
  }
  throw ContractError("unknown modality");
}

ModalityEncoder& FusionModel::encoder(Modality m) {
  return const_cast<ModalityEncoder&>(std::as_const(*this).encoder(m));
}

FusionModel make_fusion_model(FusionMode mode, const std::array<int, 3>& input_dims,
                              const EncoderConfig& config, int fusion_hidden, Rng& rng) {
  config.validate();
  if (fusion_hidden < 1) throw ConfigError("fusion_hidden must be positive");
  FusionModel model;
  model.mode = mode;
  model.config = config;
  model.fusion_hidden = fusion_hidden;
  model.input_dims = input_dims;
  // Each component gets its own stream so per-modality initialization is a
  // reproducible sub-seed of the caller's seed.
  Rng video_rng(rng.next_u64()), audio_rng(rng.next_u64()), text_rng(rng.next_u64());
  model.video = make_modality_encoder(input_dims[0], config, video_rng);
  model.audio = make_modality_encoder(input_dims[1], config, audio_rng);
  model.text = make_modality_encoder(input_dims[2], config, text_rng);
  int d = config.model_dim;
  if (mode == FusionMode::EarlyConcat) {
    EarlyFusionHead head;
    head.hidden = make_linear(3 * d, fusion_hidden, rng);
    head.out = make_linear(fusion_hidden, 3, rng);
    model.early_head = std::move(head);
  } else if (mode == FusionMode::Attention) {
    AttentionFusionHead head;
    head.modality_embeddings = Tensor::zeros({3, d}, true);
    Scalar bound = Scalar(1) / std::sqrt(Scalar(d));
    for (Scalar& v : head.modality_embeddings.data()) {
      v = Scalar(rng.uniform(-double(bound), double(bound)));
    }
    head.attention.query = make_linear(d, d, rng);
    head.attention.key = make_linear(d, d, rng);
    head.attention.value = make_linear(d, d, rng);
    head.attention.out = make_linear(d, d, rng);
    head.hidden = make_linear(d, fusion_hidden, rng);
    head.out = make_linear(fusion_hidden, 3, rng);
    model.attention_head = std::move(head);
  }
  return model;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("argmax_rows: expected [batch x classes], got " +
                     shape_string(logits.shape()));
  }
  int b = logits.extent(0), c = logits.extent(1);
  std::vector<int> out(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) {
    int best = 0;
    for (int j = 1; j < c; ++j) {
      if (double(logits.at({i, j})) > double(logits.at({i, best}))) best = j;
    }
    out[size_t(i)] = best;
  }
  return out;
}

std::vector<int> late_fusion_predict(const Tensor& video_logits, const Tensor& audio_logits,
                                     const Tensor& text_logits) {
  const std::array<const Tensor*, 3> all{&video_logits, &audio_logits, &text_logits};
  for (const Tensor* t : all) {
    if (t->rank() != 2 || t->extent(1) != 3) {
      throw ShapeError("late_fusion_predict: expected [batch x 3] logits, got " +
                       shape_string(t->shape()));
    }
  }
  int b = video_logits.extent(0);
  if (audio_logits.extent(0) != b || text_logits.extent(0) != b) {
    throw ContractError("late_fusion_predict: batch sizes differ across modalities");
  }
  std::array<std::vector<int>, 3> votes{argmax_rows(video_logits), argmax_rows(audio_logits),
                                        argmax_rows(text_logits)};
  std::vector<int> out(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) {
    std::array<int, 3> counts{0, 0, 0};
    for (int m = 0; m < 3; ++m) counts[size_t(votes[size_t(m)][size_t(i)])] += 1;
    int majority = -1;
    for (int c = 0; c < 3; ++c) {
      if (counts[size_t(c)] >= 2) majority = c;
    }
    if (majority >= 0) {
      out[size_t(i)] = majority;
      continue;
    }
    // Three-way disagreement: the class with the largest summed softmax mass
    // wins, ties broken toward the lowest index.
    std::array<double, 3> mass{0, 0, 0};
    for (const Tensor* t : all) {
      double peak = double(t->at({i, 0}));
      for (int j = 1; j < 3; ++j) peak = std::max(peak, double(t->at({i, j})));
      double total = 0;
      std::array<double, 3> e{};
      for (int j = 0; j < 3; ++j) {
        e[size_t(j)] = std::exp(double(t->at({i, j})) - peak);
        total += e[size_t(j)];
      }
      for (int j = 0; j < 3; ++j) mass[size_t(j)] += e[size_t(j)] / total;
    }
    int best = 0;
    for (int j = 1; j < 3; ++j) {
      if (mass[size_t(j)] > mass[size_t(best)]) best = j;
    }
    out[size_t(i)] = best;
  }
  return out;
}

namespace {

EncodedModality encode(const FusionModel& model, const Batch& batch, Modality m,
                       const ForwardCtx& ctx) {
  return modality_forward(batch.features[size_t(int(m))], batch.mask(m), model.encoder(m),
                          model.config, ctx);
}

void require_batch(const Batch& batch) {
  if (batch.size() < 1) throw ContractError("batch is empty");
}

}  // namespace

std::array<Tensor, 3> late_fusion_logits(const FusionModel& model, const Batch& batch,
                                         const ForwardCtx& ctx) {
  require_batch(batch);
  return {encode(model, batch, Modality::Video, ctx).logits,
          encode(model, batch, Modality::Audio, ctx).logits,
          encode(model, batch, Modality::Text, ctx).logits};
}

Tensor early_fusion_forward(const FusionModel& model, const Batch& batch,
                            const ForwardCtx& ctx) {
  if (model.mode != FusionMode::EarlyConcat || !model.early_head.has_value()) {
    throw ContractError("early_fusion_forward: model mode is " +
                        std::string(fusion_mode_name(model.mode)));
  }
  require_batch(batch);
  Tensor pooled = concat({encode(model, batch, Modality::Video, ctx).pooled,
                          encode(model, batch, Modality::Audio, ctx).pooled,
                          encode(model, batch, Modality::Text, ctx).pooled},
                         1);
  const EarlyFusionHead& head = *model.early_head;
  return linear(relu(linear(pooled, head.hidden)), head.out);
}

Tensor attention_fusion_forward(const FusionModel& model, const Batch& batch,
                                const ForwardCtx& ctx, Tensor* attention_probe) {
  if (model.mode != FusionMode::Attention || !model.attention_head.has_value()) {
    throw ContractError("attention_fusion_forward: model mode is " +
                        std::string(fusion_mode_name(model.mode)));
  }
  require_batch(batch);
  int b = batch.size(), d = model.config.model_dim;
  Tensor tokens = concat({encode(model, batch, Modality::Video, ctx).pooled.reshape({b, 1, d}),
                          encode(model, batch, Modality::Audio, ctx).pooled.reshape({b, 1, d}),
                          encode(model, batch, Modality::Text, ctx).pooled.reshape({b, 1, d})},
                         1);
  const AttentionFusionHead& head = *model.attention_head;
  tokens = add_rows(tokens, head.modality_embeddings);
  Tensor mixed = multi_head_attention(tokens, AttentionMask::all_valid(b, 3), head.attention,
                                      model.config.num_heads, ctx, attention_probe);
  Tensor fused = mean_axis(add(tokens, mixed), 1);
  return linear(relu(linear(fused, head.hidden)), head.out);
}

std::vector<int> predict(const FusionModel& model, const Batch& batch) {
  ForwardCtx eval;
  switch (model.mode) {
    case FusionMode::LateVote: {
      std::array<Tensor, 3> logits = late_fusion_logits(model, batch, eval);
      return late_fusion_predict(logits[0], logits[1], logits[2]);
    }
    case FusionMode::EarlyConcat:
      return argmax_rows(early_fusion_forward(model, batch, eval));
    case FusionMode::Attention:
      return argmax_rows(attention_fusion_forward(model, batch, eval));
  }
  throw ContractError("unknown fusion mode");
}

std::vector<std::pair<std::string, Tensor>> named_params(const FusionModel& model) {
  std::vector<std::pair<std::string, Tensor>> out;
  append_named_params(model.video, "video", out);
  append_named_params(model.audio, "audio", out);
  append_named_params(model.text, "text", out);
  if (model.early_head.has_value()) {
    out.emplace_back("early.hidden.weight", model.early_head->hidden.weight);
    out.emplace_back("early.hidden.bias", model.early_head->hidden.bias);
    out.emplace_back("early.out.weight", model.early_head->out.weight);
    out.emplace_back("early.out.bias", model.early_head->out.bias);
  }
  if (model.attention_head.has_value()) {
    const AttentionFusionHead& head = *model.attention_head;
    out.emplace_back("fusion.embeddings", head.modality_embeddings);
    out.emplace_back("fusion.attention.query.weight", head.attention.query.weight);
    out.emplace_back("fusion.attention.query.bias", head.attention.query.bias);
    out.emplace_back("fusion.attention.key.weight", head.attention.key.weight);
    out.emplace_back("fusion.attention.key.bias", head.attention.key.bias);
    out.emplace_back("fusion.attention.value.weight", head.attention.value.weight);
    out.emplace_back("fusion.attention.value.bias", head.attention.value.bias);
    out.emplace_back("fusion.attention.out.weight", head.attention.out.weight);
    out.emplace_back("fusion.attention.out.bias", head.attention.out.bias);
    out.emplace_back("fusion.hidden.weight", head.hidden.weight);
    out.emplace_back("fusion.hidden.bias", head.hidden.bias);
    out.emplace_back("fusion.out.weight", head.out.weight);
    out.emplace_back("fusion.out.bias", head.out.bias);
  }
  return out;
}

std::vector<Tensor> trainable_params(const FusionModel& model) {
  std::vector<Tensor> out;
  bool fused = model.mode != FusionMode::LateVote;
  for (auto& [name, tensor] : named_params(model)) {
    // The per-modality classifier heads sit outside the fused loss paths;
    // training them there would only accumulate stale zero-gradient state.
    if (fused && name.find(".classifier.") != std::string::npos) continue;
    out.push_back(tensor);
  }
  return out;
}

}  // namespace mmsa
