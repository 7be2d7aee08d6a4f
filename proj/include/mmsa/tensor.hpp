#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

#include "mmsa/scalar.hpp"

namespace mmsa {

// Validates that every extent is positive and returns their product.
int64_t shape_numel(const std::vector<int>& shape);

// Dense row-major tensor with value-semantic handles over shared storage.
// Copying a Tensor aliases the same data and gradient buffers; reshape()
// returns a new handle over the same storage. The gradient buffer is absent
// until something accumulates into it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, Scalar value);
  static Tensor from_data(std::vector<int> shape, std::vector<Scalar> values,
                          bool requires_grad = false);
  static Tensor scalar_value(Scalar value);

  bool defined() const { return storage_ != nullptr; }
  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return int(shape_.size()); }
  int extent(int axis) const;
  int64_t numel() const;

  std::span<const Scalar> data() const;
  std::span<Scalar> data();

  // Value of a one-element tensor.
  Scalar value() const;
  // Element by multi-index, for tests and small readers.
  Scalar at(std::initializer_list<int> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<Scalar> grad();
  std::span<const Scalar> grad() const;
  // Allocates a zero-filled gradient buffer if absent, then returns it.
  std::span<Scalar> grad_or_zeros();
  // Drops the gradient buffer entirely.
  void clear_grad();

  // Same storage, new shape; element count must match.
  Tensor reshape(std::vector<int> new_shape) const;
  // Deep copy of data (gradient buffer not copied).
  Tensor clone() const;

  bool shares_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  struct Storage {
    std::vector<Scalar> data;
    std::unique_ptr<std::vector<Scalar>> grad;
    bool requires_grad = false;
  };

  Tensor(std::vector<int> shape, std::shared_ptr<Storage> storage)
      : shape_(std::move(shape)), storage_(std::move(storage)) {}

  Storage& store();
  const Storage& store() const;

  std::vector<int> shape_;
  std::shared_ptr<Storage> storage_;
};

// Records backward rules in execution order; backward() replays them once in
// reverse. A tape can be replayed a single time and reused after clear().
class GradTape {
 public:
  void record(std::function<void()> backward_rule);
  size_t size() const { return entries_.size(); }
  void clear();

  friend void backward(const Tensor& loss, GradTape& tape);

 private:
  std::vector<std::function<void()>> entries_;
  bool consumed_ = false;
};

// Tape recording is scoped: ops record onto the innermost active tape, and
// run untaped when none is active (evaluation mode).
GradTape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(GradTape* tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse execution order.
// The loss must be a one-element tensor recorded on this tape.
void backward(const Tensor& loss, GradTape& tape);

// True when a tape is active and any argument requires grad; ops use this to
// decide whether to record and whether their output participates in autodiff.
bool taping(const Tensor& a);
bool taping(const Tensor& a, const Tensor& b);

// Adds a contribution into t's gradient buffer (allocating it when absent)
// and rejects non-finite results. No-op when t does not require grad.
void accumulate_grad(Tensor& t, std::span<const Scalar> contribution, const char* op_name);

// Throws NumericError naming op_name if any value is NaN or Inf.
void ensure_finite(std::span<const Scalar> values, const char* op_name);

// "2x3x4" style rendering for error messages.
std::string shape_string(const std::vector<int>& shape);

}  // namespace mmsa
