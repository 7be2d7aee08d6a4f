#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmsa/data.hpp"
#include "mmsa/transformer.hpp"

namespace mmsa {

enum class FusionMode { LateVote, EarlyConcat, Attention };

const char* fusion_mode_name(FusionMode mode);

// Two-layer classifier over the concatenated pooled vectors. The hidden layer
// matters: the joint synthetic task needs a cross-modality interaction that
// no purely linear map over the concatenation can express.
struct EarlyFusionHead {
  LinearParams hidden;  // [3*model_dim x fusion_hidden]
  LinearParams out;     // [fusion_hidden x 3]
};

// One attention block over the three pooled vectors, treated as a length-3
// token sequence with learned per-modality embeddings added, followed by a
// residual connection, a mean over the tokens, and a two-layer classifier.
struct AttentionFusionHead {
  Tensor modality_embeddings;  // [3 x model_dim]
  AttentionParams attention;
  LinearParams hidden;  // [model_dim x fusion_hidden]
  LinearParams out;     // [fusion_hidden x 3]
};

struct FusionModel {
  FusionMode mode = FusionMode::LateVote;
  EncoderConfig config;
  int fusion_hidden = 64;
  std::array<int, 3> input_dims{};

  ModalityEncoder video, audio, text;
  std::optional<EarlyFusionHead> early_head;
  std::optional<AttentionFusionHead> attention_head;

  const ModalityEncoder& encoder(Modality m) const;
  ModalityEncoder& encoder(Modality m);
};

FusionModel make_fusion_model(FusionMode mode, const std::array<int, 3>& input_dims,
                              const EncoderConfig& config, int fusion_hidden, Rng& rng);

// Majority vote over per-modality argmax logits. A three-way disagreement
// falls back to the class with the largest summed softmax mass; remaining
// ties pick the lowest class index. All logits are [b x 3].
std::vector<int> late_fusion_predict(const Tensor& video_logits, const Tensor& audio_logits,
                                     const Tensor& text_logits);

// Fused logits [b x 3] for the matching mode; ContractError on a mode
// mismatch. attention_probe receives the fusion attention weights.
Tensor early_fusion_forward(const FusionModel& model, const Batch& batch,
                            const ForwardCtx& ctx = {});
Tensor attention_fusion_forward(const FusionModel& model, const Batch& batch,
                                const ForwardCtx& ctx = {}, Tensor* attention_probe = nullptr);

// Per-modality logits for the late-vote mode.
std::array<Tensor, 3> late_fusion_logits(const FusionModel& model, const Batch& batch,
                                         const ForwardCtx& ctx = {});

// Class predictions under the model's own mode, evaluation context.
// Argmax ties pick the lowest class index.
std::vector<int> predict(const FusionModel& model, const Batch& batch);

std::vector<int> argmax_rows(const Tensor& logits);

// Every tensor in the model, stable order, prefixed names.
std::vector<std::pair<std::string, Tensor>> named_params(const FusionModel& model);

// The tensors the optimizer updates for the model's mode. Late-vote uses the
// per-modality classifier heads; the fused modes use their fusion head and
// skip the unused per-modality classifiers.
std::vector<Tensor> trainable_params(const FusionModel& model);

}  // namespace mmsa
