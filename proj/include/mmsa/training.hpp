#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmsa/fusion.hpp"

namespace mmsa {

// A training/evaluation recipe: one of the three fusion strategies or a
// single modality on its own. Unimodal approaches train just one encoder of
// a late-vote shaped model.
enum class Approach { Video, Audio, Text, LateVote, EarlyConcat, Attention };

const char* approach_name(Approach a);  // "video", ..., "a0", "a1", "a2"
Approach parse_approach(const std::string& name);
bool approach_is_unimodal(Approach a);
Modality approach_modality(Approach a);    // ContractError unless unimodal
FusionMode approach_mode(Approach a);      // model shape the approach runs on

// Mean over the batch of -log softmax(logits)[label], stabilized with
// log-sum-exp. logits are [b x c]; labels must lie in [0, c).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

struct TrainConfig {
  Approach approach = Approach::EarlyConcat;
  Scalar learning_rate = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
  int batch_size = 32;
  int epochs = 30;
  uint64_t seed = 7;

  void validate() const;  // ConfigError on any out-of-range field
};

// Adam over a fixed parameter list. Moments are zero-initialized and matched
// to parameters by position; step() applies one bias-corrected update and
// clears the gradients it consumed.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, const TrainConfig& cfg);

  void step();
  int64_t step_count() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<Scalar>> m_, v_;
  Scalar lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// Scalar training loss for the approach on one batch: fused cross-entropy
// for a1/a2, per-modality cross-entropy for the unimodal approaches, and the
// sum of the three per-modality losses for a0 (their parameters are
// disjoint, so this equals three independent trainings sharing a data order).
Tensor approach_loss(const FusionModel& model, Approach a, const Batch& batch,
                     const ForwardCtx& ctx);

// Class predictions for the approach, evaluation context.
std::vector<int> approach_predict(const FusionModel& model, Approach a, const Batch& batch);

// The tensors Adam updates for the approach.
std::vector<Tensor> approach_params(const FusionModel& model, Approach a);

struct EvalResult {
  Scalar accuracy = 0;
  Scalar mean_loss = 0;
};

// Dropout-free pass over the whole set in file order. DataError when empty.
EvalResult evaluate(const FusionModel& model, Approach a, const Dataset& ds, int batch_size);

struct EpochMetrics {
  Scalar train_loss = 0;
  Scalar train_accuracy = 0;
  Scalar val_loss = 0;
  Scalar val_accuracy = 0;
};

using TrainHistory = std::vector<EpochMetrics>;

// Fixed-epoch Adam training. Each epoch reshuffles the training order with a
// seeded stream, steps over the batches, then records dropout-free metrics
// on both sets. The model is left at its final-epoch parameters.
TrainHistory train(FusionModel& model, const Dataset& train_set, const Dataset& val_set,
                   const TrainConfig& cfg);

// Deterministic sub-stream seed for component `salt` of a run seeded `seed`.
uint64_t sub_seed(uint64_t seed, uint64_t salt);

struct PipelineResult {
  FusionModel model;  // late-vote model holding the three trained encoders
  std::array<TrainHistory, 3> unimodal_history;
  std::array<Scalar, 3> unimodal_test_accuracy{};
  Scalar voted_test_accuracy = 0;
};

// The late-fusion recipe: train the three unimodal classifiers independently
// (per-modality sub-seeds of cfg.seed), then score the majority vote on the
// test set alongside the individual accuracies.
PipelineResult late_fusion_pipeline(const Dataset& train_set, const Dataset& val_set,
                                    const Dataset& test_set, const EncoderConfig& enc_cfg,
                                    int fusion_hidden, const TrainConfig& cfg);

}  // namespace mmsa
