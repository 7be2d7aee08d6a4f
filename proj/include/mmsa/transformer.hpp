#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mmsa/ops.hpp"
#include "mmsa/rng.hpp"
#include "mmsa/tensor.hpp"

namespace mmsa {

struct EncoderConfig {
  int model_dim = 64;  // must be even (sinusoidal positions pair channels)
  int num_heads = 4;
  int ff_dim = 128;
  int num_layers = 2;
  int max_seq_len = 64;
  Scalar dropout_rate = Scalar(0.1);

  void validate() const;  // throws ConfigError
};

// Per-position validity flags for a batch of sequences. Every row must keep
// at least one valid position so attention always has a key and pooling a row.
class AttentionMask {
 public:
  AttentionMask(int batch, int seq_len, std::vector<uint8_t> valid);
  static AttentionMask from_lengths(const std::vector<int>& lengths, int seq_len);
  static AttentionMask all_valid(int batch, int seq_len);

  int batch() const { return batch_; }
  int seq_len() const { return seq_len_; }
  bool is_valid(int row, int pos) const;
  int last_valid(int row) const;
  // One pooling index per batch row.
  std::vector<int> last_valid_rows() const;

 private:
  int batch_;
  int seq_len_;
  std::vector<uint8_t> valid_;
};

// weight is [in x out]; forward is x . weight + bias over the trailing axis.
struct LinearParams {
  Tensor weight;
  Tensor bias;
};

LinearParams make_linear(int in_dim, int out_dim, Rng& rng);  // U(+-1/sqrt(in)), zero bias
LinearParams make_zero_linear(int in_dim, int out_dim);
Tensor linear(const Tensor& x, const LinearParams& p);

struct LayerNormParams {
  Tensor gain;  // ones
  Tensor bias;  // zeros
};

LayerNormParams make_layer_norm_params(int dim);

struct AttentionParams {
  LinearParams query, key, value, out;
};

struct EncoderLayerParams {
  LayerNormParams norm1, norm2;
  AttentionParams attention;
  LinearParams ff1, ff2;
};

// Linear projection into model space, a stack of pre-norm encoder layers,
// and a 3-way classification head over the pooled state.
struct ModalityEncoder {
  int input_dim = 0;
  LinearParams input_projection;
  std::vector<EncoderLayerParams> layers;
  LinearParams classifier;
};

ModalityEncoder make_modality_encoder(int input_dim, const EncoderConfig& cfg, Rng& rng);

// Runtime switches threaded through forward passes. Dropout fires only when
// training is set and the rate is nonzero; evaluation never touches the rng.
struct ForwardCtx {
  bool training = false;
  Scalar dropout_rate = 0;
  Rng* rng = nullptr;
};

// [seq_len x model_dim]; entry(pos, 2i) = sin(pos / 10000^(2i/d)),
// entry(pos, 2i+1) = cos of the same argument.
Tensor positional_encoding(int seq_len, int model_dim);

// Scaled dot-product attention over num_heads heads with key-side masking.
// attention_probe, when given, receives the softmaxed weights [(b*h) x s x s].
Tensor multi_head_attention(const Tensor& x, const AttentionMask& mask,
                            const AttentionParams& p, int num_heads,
                            const ForwardCtx& ctx = {}, Tensor* attention_probe = nullptr);

// Pre-norm residual block: x + MHA(LN(x)), then + FF(LN(.)).
Tensor encoder_layer_forward(const Tensor& x, const AttentionMask& mask,
                             const EncoderLayerParams& layer, int num_heads,
                             const ForwardCtx& ctx = {});

// The layer stack alone, applied to an already-projected input.
Tensor encoder_stack_forward(const Tensor& x, const AttentionMask& mask,
                             const ModalityEncoder& encoder, const EncoderConfig& cfg,
                             const ForwardCtx& ctx = {});

struct EncodedModality {
  Tensor pooled;  // [b x model_dim], hidden state at the last valid position
  Tensor logits;  // [b x 3]
};

// Projection + positions + encoder stack + pooling + classification head.
EncodedModality modality_forward(const Tensor& features, const AttentionMask& mask,
                                 const ModalityEncoder& encoder, const EncoderConfig& cfg,
                                 const ForwardCtx& ctx = {});

// Stable traversal used by the optimizer and the checkpoint container.
void append_named_params(const ModalityEncoder& encoder, const std::string& prefix,
                         std::vector<std::pair<std::string, Tensor>>& out);

}  // namespace mmsa
