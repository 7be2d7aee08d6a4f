#pragma once

#include <functional>
#include <vector>

#include "mmsa/rng.hpp"
#include "mmsa/tensor.hpp"

namespace mmsa {

// All ops are pure: they allocate a fresh output (except dropout at rate 0,
// which returns its input handle) and, when a tape is active and an input
// requires grad, record a backward rule that accumulates into input grads.

// Rank-2 product: [m x k] . [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Batched rank-3 product: [n x s x k] . [n x k x t] -> [n x s x t].
Tensor bmm(const Tensor& a, const Tensor& b);

// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose_last2(const Tensor& x);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Adds a length-d vector across the trailing axis of x.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// Adds a [t x d] table across the leading axis of x [b x t x d].
Tensor add_rows(const Tensor& x, const Tensor& rows);

Tensor scale(const Tensor& x, Scalar factor);
Tensor relu(const Tensor& x);

// Numerically stable softmax along one axis (max subtraction per lane).
Tensor softmax(const Tensor& x, int axis);

// Normalizes the trailing axis to zero mean and unit variance (population
// variance, epsilon inside the square root), then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  Scalar epsilon = Scalar(1e-5));

// Concatenates along an axis; all other extents must agree.
Tensor concat(const std::vector<Tensor>& parts, int axis);

// Copies [start, start + length) along an axis.
Tensor slice(const Tensor& x, int axis, int start, int length);

// [b x s x d] -> [(b*h) x s x d/h], head-major within each batch row.
Tensor split_heads(const Tensor& x, int heads);

// Inverse of split_heads: [(b*h) x s x dh] -> [b x s x dh*h].
Tensor merge_heads(const Tensor& x, int heads);

// Gathers one row per batch entry: out[i, :] = x[i, row_index[i], :].
Tensor take_rows(const Tensor& x, const std::vector<int>& row_index);

// Reduces one axis to its mean, dropping it from the shape.
Tensor mean_axis(const Tensor& x, int axis);

// Sum of all elements as a one-element tensor.
Tensor sum_all(const Tensor& x);

// Inverted dropout: kept entries are scaled by 1/(1-rate). rate 0 is the
// identity and consumes no randomness.
Tensor dropout(const Tensor& x, Scalar rate, Rng* rng);

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool passed = true;
};

// Compares tape gradients of a scalar-valued function against central finite
// differences over every element of every input. The relative error metric is
// |analytic - numeric| / max(1, |numeric|). f must be deterministic.
GradCheckReport finite_difference_check(
    const std::function<Tensor(std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
    double step = 1e-4, double tolerance = 1e-4);

}  // namespace mmsa
