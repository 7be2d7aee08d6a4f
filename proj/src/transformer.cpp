#include "mmsa/transformer.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "mmsa/errors.hpp"

namespace mmsa {

void EncoderConfig::validate() const {
  if (model_dim < 2 || model_dim % 2 != 0) {
    throw ConfigError("model_dim must be a positive even integer, got " +
                      std::to_string(model_dim));
  }
  if (num_heads < 1) throw ConfigError("num_heads must be positive");
  if (model_dim % num_heads != 0) {
    throw ConfigError("model_dim " + std::to_string(model_dim) + " is not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
  if (ff_dim < 1) throw ConfigError("ff_dim must be positive");
  if (num_layers < 1) throw ConfigError("num_layers must be positive");
  if (max_seq_len < 1) throw ConfigError("max_seq_len must be positive");
  if (dropout_rate < Scalar(0) || dropout_rate >= Scalar(1)) {
    throw ConfigError("dropout_rate must lie in [0, 1)");
  }
}

AttentionMask::AttentionMask(int batch, int seq_len, std::vector<uint8_t> valid)
    : batch_(batch), seq_len_(seq_len), valid_(std::move(valid)) {
  if (batch_ < 1 || seq_len_ < 1) throw ContractError("mask needs positive batch and seq_len");
  if (int64_t(valid_.size()) != int64_t(batch_) * seq_len_) {
    throw ContractError("mask flag count does not match batch x seq_len");
  }
  for (int row = 0; row < batch_; ++row) {
    bool any = false;
    for (int pos = 0; pos < seq_len_; ++pos) any = any || is_valid(row, pos);
    if (!any) {
      throw ContractError("mask row " + std::to_string(row) + " has no valid position");
    }
  }
}

AttentionMask AttentionMask::from_lengths(const std::vector<int>& lengths, int seq_len) {
  std::vector<uint8_t> valid(lengths.size() * size_t(seq_len), 0);
  for (size_t row = 0; row < lengths.size(); ++row) {
    if (lengths[row] < 1 || lengths[row] > seq_len) {
      throw ContractError("valid length " + std::to_string(lengths[row]) +
                          " outside [1, " + std::to_string(seq_len) + "]");
    }
    for (int pos = 0; pos < lengths[row]; ++pos) valid[row * size_t(seq_len) + size_t(pos)] = 1;
  }
  return AttentionMask(int(lengths.size()), seq_len, std::move(valid));
}

AttentionMask AttentionMask::all_valid(int batch, int seq_len) {
  return AttentionMask(batch, seq_len,
                       std::vector<uint8_t>(size_t(batch) * size_t(seq_len), 1));
}

bool AttentionMask::is_valid(int row, int pos) const {
  return valid_[size_t(row) * size_t(seq_len_) + size_t(pos)] != 0;
}

int AttentionMask::last_valid(int row) const {
  for (int pos = seq_len_ - 1; pos >= 0; --pos)
    if (is_valid(row, pos)) return pos;
  throw ContractError("mask row has no valid position");
}

std::vector<int> AttentionMask::last_valid_rows() const {
  std::vector<int> rows(static_cast<size_t>(batch_));
  for (int i = 0; i < batch_; ++i) rows[size_t(i)] = last_valid(i);
  return rows;
}

LinearParams make_linear(int in_dim, int out_dim, Rng& rng) {
  if (in_dim < 1 || out_dim < 1) throw ConfigError("linear dims must be positive");
  Tensor weight = Tensor::zeros({in_dim, out_dim}, true);
  Scalar bound = Scalar(1) / std::sqrt(Scalar(in_dim));
  for (Scalar& v : weight.data()) v = Scalar(rng.uniform(-double(bound), double(bound)));
  Tensor bias = Tensor::zeros({out_dim}, true);
  return {weight, bias};
}

LinearParams make_zero_linear(int in_dim, int out_dim) {
  return {Tensor::zeros({in_dim, out_dim}, true), Tensor::zeros({out_dim}, true)};
}

Tensor linear(const Tensor& x, const LinearParams& p) {
  if (x.rank() < 1 || x.extent(x.rank() - 1) != p.weight.extent(0)) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                     shape_string(p.weight.shape()));
  }
  int in_dim = p.weight.extent(0), out_dim = p.weight.extent(1);
  int64_t rows = x.numel() / in_dim;
  Tensor flat = x.reshape({int(rows), in_dim});
  Tensor out = add_bias(matmul(flat, p.weight), p.bias);
  std::vector<int> out_shape = x.shape();
  out_shape[out_shape.size() - 1] = out_dim;
  return out.reshape(std::move(out_shape));
}

LayerNormParams make_layer_norm_params(int dim) {
  Tensor gain = Tensor::full({dim}, Scalar(1));
  gain.set_requires_grad(true);
  return {gain, Tensor::zeros({dim}, true)};
}

ModalityEncoder make_modality_encoder(int input_dim, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  if (input_dim < 1) throw ConfigError("input_dim must be positive");
  ModalityEncoder enc;
  enc.input_dim = input_dim;
  enc.input_projection = make_linear(input_dim, cfg.model_dim, rng);
  enc.layers.reserve(size_t(cfg.num_layers));
  for (int i = 0; i < cfg.num_layers; ++i) {
    EncoderLayerParams layer;
    layer.norm1 = make_layer_norm_params(cfg.model_dim);
    layer.attention.query = make_linear(cfg.model_dim, cfg.model_dim, rng);
    layer.attention.key = make_linear(cfg.model_dim, cfg.model_dim, rng);
    layer.attention.value = make_linear(cfg.model_dim, cfg.model_dim, rng);
    layer.attention.out = make_linear(cfg.model_dim, cfg.model_dim, rng);
    layer.norm2 = make_layer_norm_params(cfg.model_dim);
    layer.ff1 = make_linear(cfg.model_dim, cfg.ff_dim, rng);
    layer.ff2 = make_linear(cfg.ff_dim, cfg.model_dim, rng);
    enc.layers.push_back(std::move(layer));
  }
  enc.classifier = make_linear(cfg.model_dim, 3, rng);
  return enc;
}

Tensor positional_encoding(int seq_len, int model_dim) {
  if (seq_len < 1) throw ConfigError("positional_encoding: seq_len must be positive");
  if (model_dim < 2 || model_dim % 2 != 0) {
    throw ConfigError("positional_encoding: model_dim must be a positive even integer");
  }
  Tensor pe = Tensor::zeros({seq_len, model_dim});
  std::span<Scalar> v = pe.data();
  for (int pos = 0; pos < seq_len; ++pos) {
    for (int i = 0; i < model_dim / 2; ++i) {
      double angle = double(pos) / std::pow(10000.0, (2.0 * i) / double(model_dim));
      v[size_t(pos) * size_t(model_dim) + size_t(2 * i)] = Scalar(std::sin(angle));
      v[size_t(pos) * size_t(model_dim) + size_t(2 * i + 1)] = Scalar(std::cos(angle));
    }
  }
  return pe;
}

namespace {

Tensor maybe_dropout(const Tensor& x, const ForwardCtx& ctx) {
  if (!ctx.training || ctx.dropout_rate == Scalar(0)) return x;
  return dropout(x, ctx.dropout_rate, ctx.rng);
}

// Additive key-side bias: 0 on valid keys, a large negative constant on
// padding, broadcast over query positions and heads.
Tensor mask_bias(const AttentionMask& mask, int num_heads) {
  int b = mask.batch(), s = mask.seq_len();
  Tensor bias = Tensor::zeros({b * num_heads, s, s});
  std::span<Scalar> v = bias.data();
  for (int row = 0; row < b; ++row) {
    for (int key = 0; key < s; ++key) {
      if (mask.is_valid(row, key)) continue;
      for (int h = 0; h < num_heads; ++h) {
        size_t base = (size_t(row) * size_t(num_heads) + size_t(h)) * size_t(s) * size_t(s);
        for (int query = 0; query < s; ++query) {
          v[base + size_t(query) * size_t(s) + size_t(key)] = kMaskedScore;
        }
      }
    }
  }
  return bias;
}

}  // namespace

Tensor multi_head_attention(const Tensor& x, const AttentionMask& mask,
                            const AttentionParams& p, int num_heads, const ForwardCtx& ctx,
                            Tensor* attention_probe) {
  if (x.rank() != 3) {
    throw ShapeError("multi_head_attention: expected [batch x seq x dim], got " +
                     shape_string(x.shape()));
  }
  int d = x.extent(2);
  if (num_heads < 1 || d % num_heads != 0) {
    throw ConfigError("multi_head_attention: width " + std::to_string(d) +
                      " is not divisible by " + std::to_string(num_heads) + " heads");
  }
  if (mask.batch() != x.extent(0) || mask.seq_len() != x.extent(1)) {
    throw ContractError("multi_head_attention: mask does not match input batch or seq_len");
  }
  Tensor q = split_heads(linear(x, p.query), num_heads);
  Tensor k = split_heads(linear(x, p.key), num_heads);
  Tensor v = split_heads(linear(x, p.value), num_heads);
  Scalar inv_scale = Scalar(1) / std::sqrt(Scalar(d / num_heads));
  Tensor scores = scale(bmm(q, transpose_last2(k)), inv_scale);
  Tensor weights = softmax(add(scores, mask_bias(mask, num_heads)), 2);
  if (attention_probe != nullptr) *attention_probe = weights;
  Tensor mixed = bmm(maybe_dropout(weights, ctx), v);
  return linear(merge_heads(mixed, num_heads), p.out);
}

Tensor encoder_layer_forward(const Tensor& x, const AttentionMask& mask,
                             const EncoderLayerParams& layer, int num_heads,
                             const ForwardCtx& ctx) {
  Tensor attn_in = layer_norm(x, layer.norm1.gain, layer.norm1.bias);
  Tensor attn_out = multi_head_attention(attn_in, mask, layer.attention, num_heads, ctx);
  Tensor mid = add(x, maybe_dropout(attn_out, ctx));
  Tensor ff_in = layer_norm(mid, layer.norm2.gain, layer.norm2.bias);
  Tensor ff_out = linear(relu(linear(ff_in, layer.ff1)), layer.ff2);
  return add(mid, maybe_dropout(ff_out, ctx));
}

Tensor encoder_stack_forward(const Tensor& x, const AttentionMask& mask,
                             const ModalityEncoder& encoder, const EncoderConfig& cfg,
                             const ForwardCtx& ctx) {
  Tensor h = x;
  for (const EncoderLayerParams& layer : encoder.layers) {
    h = encoder_layer_forward(h, mask, layer, cfg.num_heads, ctx);
  }
  return h;
}

EncodedModality modality_forward(const Tensor& features, const AttentionMask& mask,
                                 const ModalityEncoder& encoder, const EncoderConfig& cfg,
                                 const ForwardCtx& ctx) {
  if (features.rank() != 3) {
    throw ShapeError("modality_forward: expected [batch x seq x dim], got " +
                     shape_string(features.shape()));
  }
  if (features.extent(2) != encoder.input_dim) {
    throw ShapeError("modality_forward: feature dim " + std::to_string(features.extent(2)) +
                     " does not match encoder input dim " + std::to_string(encoder.input_dim));
  }
  if (features.extent(1) > cfg.max_seq_len) {
    throw ConfigError("modality_forward: seq_len " + std::to_string(features.extent(1)) +
                      " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  if (mask.batch() != features.extent(0) || mask.seq_len() != features.extent(1)) {
    throw ContractError("modality_forward: mask does not match features");
  }
  Tensor h = linear(features, encoder.input_projection);
  h = add_rows(h, positional_encoding(features.extent(1), cfg.model_dim));
  h = encoder_stack_forward(h, mask, encoder, cfg, ctx);
  EncodedModality out;
  out.pooled = take_rows(h, mask.last_valid_rows());
  out.logits = linear(out.pooled, encoder.classifier);
  return out;
}

namespace {

void append_linear(const LinearParams& p, const std::string& prefix,
                   std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".weight", p.weight);
  out.emplace_back(prefix + ".bias", p.bias);
}

}  // namespace

void append_named_params(const ModalityEncoder& encoder, const std::string& prefix,
                         std::vector<std::pair<std::string, Tensor>>& out) {
  append_linear(encoder.input_projection, prefix + ".projection", out);
  for (size_t i = 0; i < encoder.layers.size(); ++i) {
    const EncoderLayerParams& layer = encoder.layers[i];
    std::string base = prefix + ".layer" + std::to_string(i);
    out.emplace_back(base + ".norm1.gain", layer.norm1.gain);
    out.emplace_back(base + ".norm1.bias", layer.norm1.bias);
    append_linear(layer.attention.query, base + ".attention.query", out);
    append_linear(layer.attention.key, base + ".attention.key", out);
    append_linear(layer.attention.value, base + ".attention.value", out);
    append_linear(layer.attention.out, base + ".attention.out", out);
    out.emplace_back(base + ".norm2.gain", layer.norm2.gain);
    out.emplace_back(base + ".norm2.bias", layer.norm2.bias);
    append_linear(layer.ff1, base + ".ff1", out);
    append_linear(layer.ff2, base + ".ff2", out);
  }
  append_linear(encoder.classifier, prefix + ".classifier", out);
}

}  // namespace mmsa
