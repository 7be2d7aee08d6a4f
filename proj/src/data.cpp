#include "mmsa/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "binary_io.hpp"
#include "mmsa/errors.hpp"
#include "mmsa/rng.hpp"

namespace mmsa {

SentimentClass discretize_sentiment(Scalar score) {
  if (!std::isfinite(score)) throw DataError("sentiment score is not finite");
  if (score < Scalar(-3) || score > Scalar(3)) {
    throw DataError("sentiment score " + std::to_string(double(score)) +
                    " outside [-3, +3]");
  }
  if (score < Scalar(-1)) return SentimentClass::Negative;
  if (score <= Scalar(1)) return SentimentClass::Neutral;
  return SentimentClass::Positive;
}

const char* sentiment_name(SentimentClass c) {
  switch (c) {
    case SentimentClass::Negative: return "negative";
    case SentimentClass::Neutral: return "neutral";
    case SentimentClass::Positive: return "positive";
  }
  throw ContractError("unknown sentiment class");
}

std::array<int, 3> Dataset::class_counts() const {
  std::array<int, 3> counts{0, 0, 0};
  for (const MultimodalSample& s : samples) counts[size_t(int(s.label()))] += 1;
  return counts;
}

using io::put_f32;
using io::put_u32;
using io::read_file;
using io::Reader;
using io::write_file;

namespace {

constexpr char kMagic[4] = {'M', 'M', 'S', 'A'};
constexpr uint32_t kDatasetVersion = 1;

}  // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u32(buf, kDatasetVersion);
  put_u32(buf, uint32_t(ds.samples.size()));
  for (const ModalityShape& shape : ds.shapes) {
    put_u32(buf, shape.seq_len);
    put_u32(buf, shape.feat_dim);
  }
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const MultimodalSample& s = ds.samples[i];
    discretize_sentiment(Scalar(s.score));  // validates range and finiteness
    put_f32(buf, s.score);
    for (int m = 0; m < 3; ++m) {
      if (s.valid_lens[size_t(m)] < 1 || s.valid_lens[size_t(m)] > ds.shapes[size_t(m)].seq_len) {
        throw DataError("sample " + std::to_string(i) + " " + kModalityNames[size_t(m)] +
                        " valid length " + std::to_string(s.valid_lens[size_t(m)]) +
                        " outside [1, " + std::to_string(ds.shapes[size_t(m)].seq_len) + "]");
      }
      put_u32(buf, s.valid_lens[size_t(m)]);
    }
    for (int m = 0; m < 3; ++m) {
      size_t expected = size_t(ds.shapes[size_t(m)].seq_len) * ds.shapes[size_t(m)].feat_dim;
      if (s.features[size_t(m)].size() != expected) {
        throw ContractError("sample " + std::to_string(i) + " " + kModalityNames[size_t(m)] +
                            " feature block holds " +
                            std::to_string(s.features[size_t(m)].size()) + " values, expected " +
                            std::to_string(expected));
      }
      for (float v : s.features[size_t(m)]) {
        if (!std::isfinite(v)) {
          throw DataError("sample " + std::to_string(i) + " " + kModalityNames[size_t(m)] +
                          " contains a non-finite feature");
        }
        put_f32(buf, v);
      }
    }
  }
  write_file(path, buf);
}

Dataset load_dataset(const std::string& path) {
  std::vector<uint8_t> buf = read_file(path);
  Reader r{buf};
  r.need(4, "magic");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError(path + " is not a dataset file (bad magic)");
  }
  r.off = 4;
  uint32_t version = r.u32("version");
  if (version != kDatasetVersion) {
    throw FormatError(path + " has unsupported dataset version " + std::to_string(version));
  }
  Dataset ds;
  uint32_t n = r.u32("sample count");
  for (int m = 0; m < 3; ++m) {
    ds.shapes[size_t(m)].seq_len = r.u32(std::string(kModalityNames[size_t(m)]) + " seq_len");
    ds.shapes[size_t(m)].feat_dim = r.u32(std::string(kModalityNames[size_t(m)]) + " feat_dim");
    if (n > 0 && (ds.shapes[size_t(m)].seq_len == 0 || ds.shapes[size_t(m)].feat_dim == 0)) {
      throw FormatError(path + " header has a zero extent for " + kModalityNames[size_t(m)]);
    }
  }
  ds.samples.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    MultimodalSample& s = ds.samples[i];
    std::string tag = "sample " + std::to_string(i);
    s.score = r.f32(tag + " score");
    try {
      discretize_sentiment(Scalar(s.score));
    } catch (const DataError& e) {
      throw DataError(tag + ": " + e.what());
    }
    for (int m = 0; m < 3; ++m) {
      s.valid_lens[size_t(m)] = r.u32(tag + " valid length");
      if (s.valid_lens[size_t(m)] < 1 ||
          s.valid_lens[size_t(m)] > ds.shapes[size_t(m)].seq_len) {
        throw DataError(tag + " " + kModalityNames[size_t(m)] + " valid length " +
                        std::to_string(s.valid_lens[size_t(m)]) + " outside [1, " +
                        std::to_string(ds.shapes[size_t(m)].seq_len) + "]");
      }
    }
    for (int m = 0; m < 3; ++m) {
      size_t count = size_t(ds.shapes[size_t(m)].seq_len) * ds.shapes[size_t(m)].feat_dim;
      std::string what = tag + " " + kModalityNames[size_t(m)] + " features";
      r.need(4 * count, what);
      s.features[size_t(m)].resize(count);
      for (size_t j = 0; j < count; ++j) {
        float v = r.f32(what);
        if (!std::isfinite(v)) {
          throw DataError(tag + " " + kModalityNames[size_t(m)] +
                          " contains a non-finite feature");
        }
        s.features[size_t(m)][j] = v;
      }
    }
  }
  if (r.off != buf.size()) {
    throw FormatError(path + " has " + std::to_string(buf.size() - r.off) +
                      " trailing bytes past the last sample");
  }
  return ds;
}

SplitDataset split_dataset(const Dataset& ds, const SplitRatios& ratios, uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be nonnegative and sum to 1");
  }
  size_t n = ds.samples.size();
  if (n < 3) throw DataError("split needs at least 3 samples, got " + std::to_string(n));
  std::vector<int> order = identity_order(n);
  Rng rng(seed);
  rng.shuffle(order);
  size_t n_val = size_t(ratios.val * double(n));
  size_t n_test = size_t(ratios.test * double(n));
  size_t n_train = n - n_val - n_test;
  SplitDataset out;
  out.train.shapes = out.val.shapes = out.test.shapes = ds.shapes;
  for (size_t i = 0; i < n; ++i) {
    const MultimodalSample& s = ds.samples[size_t(order[i])];
    if (i < n_train) {
      out.train.samples.push_back(s);
    } else if (i < n_train + n_val) {
      out.val.samples.push_back(s);
    } else {
      out.test.samples.push_back(s);
    }
  }
  return out;
}

void SyntheticConfig::validate() const {
  for (int m = 0; m < 3; ++m) {
    if (shapes[size_t(m)].seq_len < 1 || shapes[size_t(m)].feat_dim < 1) {
      throw ConfigError(std::string("synthetic ") + kModalityNames[size_t(m)] +
                        " shape must have positive extents");
    }
  }
  if (noise_std < 0) throw ConfigError("noise_std must be nonnegative");
}

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  Rng noise_rng = root.derive(1);
  Rng len_rng = root.derive(2);
  Rng order_rng = root.derive(3);

  // Fixed unit-norm carrier pattern per modality; the phase offset just keeps
  // the three modalities from sharing an identical layout.
  std::array<std::vector<double>, 3> carriers;
  for (int m = 0; m < 3; ++m) {
    uint32_t d = cfg.shapes[size_t(m)].feat_dim;
    carriers[size_t(m)].resize(d);
    double norm = 1.0 / std::sqrt(double(d));
    for (uint32_t j = 0; j < d; ++j) {
      carriers[size_t(m)][j] = ((j + uint32_t(m)) % 2 == 0 ? norm : -norm);
    }
  }

  constexpr std::array<float, 3> kClassScores{-2.0f, 0.0f, 2.0f};
  Dataset ds;
  ds.shapes = cfg.shapes;
  ds.samples.reserve(cfg.n_samples);
  std::array<uint32_t, 3> per_label_counter{0, 0, 0};

  for (uint32_t i = 0; i < cfg.n_samples; ++i) {
    int label = int(i % 3);
    std::array<int, 3> symbols{};
    if (cfg.coupling == Coupling::Independent) {
      symbols = {label, label, label};
    } else {
      // Stratified (video, audio) pairs: each label walks the 9 combinations
      // round-robin, so symbol/label contingency tables are exactly uniform
      // whenever counts divide evenly.
      uint32_t combo = per_label_counter[size_t(label)]++ % 9;
      symbols[0] = int(combo / 3);
      symbols[1] = int(combo % 3);
      symbols[2] = ((label - symbols[0] - symbols[1]) % 3 + 3) % 3;
    }

    MultimodalSample s;
    s.score = kClassScores[size_t(label)];
    for (int m = 0; m < 3; ++m) {
      uint32_t seq = cfg.shapes[size_t(m)].seq_len;
      uint32_t d = cfg.shapes[size_t(m)].feat_dim;
      uint32_t shortest = std::max(1u, (2 * seq + 2) / 3);
      s.valid_lens[size_t(m)] =
          shortest + uint32_t(len_rng.uniform_int(int(seq - shortest + 1)));
      s.features[size_t(m)].assign(size_t(seq) * d, 0.0f);
      double level = 2.0 * (symbols[size_t(m)] - 1);
      for (uint32_t row = 0; row < s.valid_lens[size_t(m)]; ++row) {
        for (uint32_t j = 0; j < d; ++j) {
          double v = level * carriers[size_t(m)][j] + cfg.noise_std * noise_rng.normal();
          s.features[size_t(m)][size_t(row) * d + j] = float(v);
        }
      }
    }
    ds.samples.push_back(std::move(s));
  }
  order_rng.shuffle(ds.samples);
  return ds;
}

AttentionMask Batch::mask(Modality m) const {
  return AttentionMask::from_lengths(lengths[size_t(int(m))],
                                     features[size_t(int(m))].extent(1));
}

std::vector<Batch> make_batches(const Dataset& ds, const std::vector<int>& order,
                                int batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  for (int idx : order) {
    if (idx < 0 || size_t(idx) >= ds.samples.size()) {
      throw IndexError("batch order index " + std::to_string(idx) +
                       " out of range for dataset of size " + std::to_string(ds.samples.size()));
    }
  }
  std::vector<Batch> batches;
  for (size_t start = 0; start < order.size(); start += size_t(batch_size)) {
    size_t stop = std::min(order.size(), start + size_t(batch_size));
    int b = int(stop - start);
    Batch batch;
    for (size_t k = start; k < stop; ++k) {
      batch.labels.push_back(int(ds.samples[size_t(order[k])].label()));
    }
    for (int m = 0; m < 3; ++m) {
      int pad_len = 1;
      for (size_t k = start; k < stop; ++k) {
        pad_len = std::max(pad_len, int(ds.samples[size_t(order[k])].valid_lens[size_t(m)]));
      }
      int d = int(ds.shapes[size_t(m)].feat_dim);
      Tensor feats = Tensor::zeros({b, pad_len, d});
      std::span<Scalar> out = feats.data();
      for (int row = 0; row < b; ++row) {
        const MultimodalSample& s = ds.samples[size_t(order[start + size_t(row)])];
        int len = int(s.valid_lens[size_t(m)]);
        batch.lengths[size_t(m)].push_back(len);
        const float* src = s.features[size_t(m)].data();
        for (int64_t j = 0; j < int64_t(len) * d; ++j) {
          out[size_t(int64_t(row) * pad_len * d + j)] = Scalar(src[j]);
        }
      }
      batch.features[size_t(m)] = feats;
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<int> identity_order(size_t n) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  return order;
}

}  // namespace mmsa
