#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mmsa/fusion.hpp"

namespace mmsa {

// On-disk model container: a canonical key=value config block followed by
// named float32 tensors. Saving what load_checkpoint returned reproduces the
// original file bit for bit.
struct Checkpoint {
  std::map<std::string, std::string> config;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

// Snapshot of a model: every parameter plus the model.* keys that rebuild it.
// Callers may add their own keys (approach, seed, ...) before saving.
Checkpoint make_checkpoint(const FusionModel& model);

// Rebuilds the model described by the model.* keys, then loads every tensor.
// FormatError when keys or tensors are missing, unknown, or misshapen.
FusionModel restore_model(const Checkpoint& ck);

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Copies every parameter whose name and shape exist in both models from
// source to target; returns the number copied. Warm-starts fused encoders
// from a late-vote checkpoint.
int copy_matching_params(const FusionModel& source, FusionModel& target);

// Canonical decimal text for config values; parsing it recovers the exact
// scalar.
std::string format_scalar(Scalar v);

}  // namespace mmsa
