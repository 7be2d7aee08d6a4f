#include "mmsa/tensor.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "mmsa/errors.hpp"

namespace mmsa {

std::string shape_string(const std::vector<int>& shape) {
  if (shape.empty()) return "scalar";
  std::string out;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int extent : shape) {
    if (extent <= 0) {
      throw ShapeError("tensor shape " + shape_string(shape) + " has a non-positive extent");
    }
    n *= extent;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  int64_t n = shape_numel(shape);
  auto storage = std::make_shared<Storage>();
  storage->data.assign(size_t(n), Scalar(0));
  storage->requires_grad = requires_grad;
  return Tensor(std::move(shape), std::move(storage));
}

Tensor Tensor::full(std::vector<int> shape, Scalar value) {
  Tensor t = zeros(std::move(shape));
  for (Scalar& x : t.store().data) x = value;
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<Scalar> values, bool requires_grad) {
  int64_t n = shape_numel(shape);
  if (n != int64_t(values.size())) {
    throw ShapeError("tensor shape " + shape_string(shape) + " expects " + std::to_string(n) +
                     " values, got " + std::to_string(values.size()));
  }
  auto storage = std::make_shared<Storage>();
  storage->data = std::move(values);
  storage->requires_grad = requires_grad;
  return Tensor(std::move(shape), std::move(storage));
}

Tensor Tensor::scalar_value(Scalar value) { return from_data({1}, {value}); }

Tensor::Storage& Tensor::store() {
  if (!storage_) throw ContractError("tensor is not initialized");
  return *storage_;
}

const Tensor::Storage& Tensor::store() const {
  if (!storage_) throw ContractError("tensor is not initialized");
  return *storage_;
}

int Tensor::extent(int axis) const {
  if (axis < 0 || axis >= rank()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape_));
  }
  return shape_[size_t(axis)];
}

int64_t Tensor::numel() const { return int64_t(store().data.size()); }

std::span<const Scalar> Tensor::data() const { return store().data; }

std::span<Scalar> Tensor::data() { return store().data; }

Scalar Tensor::value() const {
  if (numel() != 1) {
    throw ContractError("value() needs a one-element tensor, got shape " + shape_string(shape_));
  }
  return store().data[0];
}

Scalar Tensor::at(std::initializer_list<int> index) const {
  if (int(index.size()) != rank()) {
    throw IndexError("index rank " + std::to_string(index.size()) + " does not match shape " +
                     shape_string(shape_));
  }
  int64_t flat = 0;
  int axis = 0;
  for (int i : index) {
    if (i < 0 || i >= shape_[size_t(axis)]) {
      throw IndexError("index " + std::to_string(i) + " out of range on axis " +
                       std::to_string(axis) + " for shape " + shape_string(shape_));
    }
    flat = flat * shape_[size_t(axis)] + i;
    ++axis;
  }
  return store().data[size_t(flat)];
}

bool Tensor::requires_grad() const { return store().requires_grad; }

void Tensor::set_requires_grad(bool value) { store().requires_grad = value; }

bool Tensor::has_grad() const { return store().grad != nullptr; }

std::span<Scalar> Tensor::grad() {
  if (!has_grad()) throw ContractError("tensor has no gradient buffer");
  return *store().grad;
}

std::span<const Scalar> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient buffer");
  return *store().grad;
}

std::span<Scalar> Tensor::grad_or_zeros() {
  Storage& s = store();
  if (!s.grad) s.grad = std::make_unique<std::vector<Scalar>>(s.data.size(), Scalar(0));
  return *s.grad;
}

void Tensor::clear_grad() { store().grad.reset(); }

Tensor Tensor::reshape(std::vector<int> new_shape) const {
  int64_t n = shape_numel(new_shape);
  if (n != numel()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(new_shape));
  }
  return Tensor(std::move(new_shape), storage_);
}

Tensor Tensor::clone() const {
  auto storage = std::make_shared<Storage>();
  storage->data = store().data;
  storage->requires_grad = store().requires_grad;
  return Tensor(shape_, std::move(storage));
}

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(GradTape* tape) : previous_(g_active_tape) { g_active_tape = tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

void GradTape::record(std::function<void()> backward_rule) {
  entries_.push_back(std::move(backward_rule));
}

void GradTape::clear() {
  entries_.clear();
  consumed_ = false;
}

void backward(const Tensor& loss, GradTape& tape) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a one-element tensor, got shape " +
                        shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss is not recorded on the tape");
  }
  if (tape.consumed_) {
    throw ContractError("backward: tape already replayed; clear() it before reuse");
  }
  tape.consumed_ = true;
  Tensor seed = loss;
  seed.grad_or_zeros()[0] += Scalar(1);
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) (*it)();
}

bool taping(const Tensor& a) { return active_tape() != nullptr && a.requires_grad(); }

bool taping(const Tensor& a, const Tensor& b) {
  return active_tape() != nullptr && (a.requires_grad() || b.requires_grad());
}

void ensure_finite(std::span<const Scalar> values, const char* op_name) {
  for (Scalar v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op_name) + ": non-finite value produced");
    }
  }
}

void accumulate_grad(Tensor& t, std::span<const Scalar> contribution, const char* op_name) {
  if (!t.requires_grad()) return;
  std::span<Scalar> g = t.grad_or_zeros();
  if (g.size() != contribution.size()) {
    throw ContractError(std::string(op_name) + ": gradient contribution size mismatch");
  }
  for (size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
  ensure_finite(g, op_name);
}

}  // namespace mmsa
