#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmsa/scalar.hpp"
#include "mmsa/tensor.hpp"
#include "mmsa/transformer.hpp"

namespace mmsa {

enum class SentimentClass : int { Negative = 0, Neutral = 1, Positive = 2 };

// [-3, -1) Negative, [-1, +1] Neutral, (+1, +3] Positive. Scores outside
// [-3, +3] or non-finite raise DataError. Comparisons are exact: -1.0 and
// +1.0 are Neutral, anything strictly past them is not.
SentimentClass discretize_sentiment(Scalar score);
const char* sentiment_name(SentimentClass c);

enum class Modality : int { Video = 0, Audio = 1, Text = 2 };
inline constexpr std::array<const char*, 3> kModalityNames{"video", "audio", "text"};

struct ModalityShape {
  uint32_t seq_len = 0;
  uint32_t feat_dim = 0;
  bool operator==(const ModalityShape&) const = default;
};

// Features are row-major [seq_len x feat_dim] float32, padded with zeros past
// the valid length. Disk and memory use float32; math converts on batching.
struct MultimodalSample {
  float score = 0;
  std::array<uint32_t, 3> valid_lens{};
  std::array<std::vector<float>, 3> features;

  SentimentClass label() const { return discretize_sentiment(Scalar(score)); }
};

struct Dataset {
  std::array<ModalityShape, 3> shapes{};
  std::vector<MultimodalSample> samples;

  size_t size() const { return samples.size(); }
  std::array<int, 3> class_counts() const;
};

// Binary container: magic "MMSA", version, n_samples, per-modality
// (seq_len, feat_dim) in video/audio/text order, then per sample the score,
// three valid lengths, and three feature blocks. Integers are u32 little
// endian, floats are IEEE-754 binary32 little endian.
Dataset load_dataset(const std::string& path);
void write_dataset(const Dataset& ds, const std::string& path);

struct SplitRatios {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

struct SplitDataset {
  Dataset train, val, test;
};

// Seeded shuffle, then contiguous [train | val | test]. Val and test sizes
// floor, the remainder goes to train.
SplitDataset split_dataset(const Dataset& ds, const SplitRatios& ratios, uint64_t seed);

enum class Coupling { Independent, Joint };

struct SyntheticConfig {
  uint32_t n_samples = 0;
  // Defaults echo common video/audio/text feature extractors.
  std::array<ModalityShape, 3> shapes{{{20, 35}, {20, 74}, {50, 300}}};
  Coupling coupling = Coupling::Joint;
  double noise_std = 0.3;
  uint64_t seed = 0;

  void validate() const;
};

// Balanced three-class data. Each modality carries a latent symbol in
// {0, 1, 2}, rendered as a scaled +-1 pattern plus Gaussian noise over the
// valid rows. INDEPENDENT sets every symbol to the label, so any single
// modality solves the task. JOINT makes the label the mod-3 sum of the three
// symbols with the (video, audio) pairs stratified per label, so any one or
// two modalities carry exactly zero label information and only the full
// triple decides.
Dataset generate_synthetic(const SyntheticConfig& cfg);

struct Batch {
  std::array<Tensor, 3> features;          // Scalar tensors [b x s_m x d_m]
  std::array<std::vector<int>, 3> lengths;  // valid lengths per modality
  std::vector<int> labels;

  int size() const { return int(labels.size()); }
  AttentionMask mask(Modality m) const;
};

// Groups samples in the given order into batches of batch_size (the last one
// may be short). Each modality pads to the batch-max valid length.
std::vector<Batch> make_batches(const Dataset& ds, const std::vector<int>& order,
                                int batch_size);

std::vector<int> identity_order(size_t n);

}  // namespace mmsa
