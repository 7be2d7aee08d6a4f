#include "mmsa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <utility>

#include "mmsa/errors.hpp"

namespace mmsa {

namespace {

void require_rank(const Tensor& t, int rank, const char* op_name) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op_name) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op_name) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op_name) + ": shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
  }
}

// c[m x n] += a[m x k] . b[k x n]
void matmul_accum(const Scalar* a, const Scalar* b, Scalar* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Scalar* arow = a + size_t(i) * size_t(k);
    Scalar* crow = c + size_t(i) * size_t(n);
    for (int p = 0; p < k; ++p) {
      Scalar apv = arow[p];
      const Scalar* brow = b + size_t(p) * size_t(n);
      for (int j = 0; j < n; ++j) crow[j] += apv * brow[j];
    }
  }
}

// da[m x k] += g[m x n] . b[k x n]^T
void matmul_grad_a(const Scalar* g, const Scalar* b, Scalar* da, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Scalar* grow = g + size_t(i) * size_t(n);
    Scalar* darow = da + size_t(i) * size_t(k);
    for (int p = 0; p < k; ++p) {
      const Scalar* brow = b + size_t(p) * size_t(n);
      Scalar acc = 0;
      for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

// db[k x n] += a[m x k]^T . g[m x n]
void matmul_grad_b(const Scalar* a, const Scalar* g, Scalar* db, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Scalar* arow = a + size_t(i) * size_t(k);
    const Scalar* grow = g + size_t(i) * size_t(n);
    for (int p = 0; p < k; ++p) {
      Scalar apv = arow[p];
      Scalar* dbrow = db + size_t(p) * size_t(n);
      for (int j = 0; j < n; ++j) dbrow[j] += apv * grow[j];
    }
  }
}

struct AxisSplit {
  int64_t outer;
  int64_t lanes;  // extent along the axis
  int64_t inner;
};

AxisSplit split_at(const std::vector<int>& shape, int axis, const char* op_name) {
  if (axis < 0 || axis >= int(shape.size())) {
    throw IndexError(std::string(op_name) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_string(shape));
  }
  AxisSplit s{1, shape[size_t(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[size_t(i)];
  for (int i = axis + 1; i < int(shape.size()); ++i) s.inner *= shape[size_t(i)];
  return s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul: inner extents of " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
  }
  int m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor out = Tensor::zeros({m, n});
  matmul_accum(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  ensure_finite(out.data(), "matmul");
  if (taping(a, b)) {
    out.set_requires_grad(true);
    Tensor at = a, bt = b, ot = out;
    active_tape()->record([at, bt, ot, m, k, n]() mutable {
      if (!ot.has_grad()) return;
      const Scalar* g = ot.grad().data();
      if (at.requires_grad()) {
        matmul_grad_a(g, bt.data().data(), at.grad_or_zeros().data(), m, k, n);
        ensure_finite(at.grad(), "matmul");
      }
      if (bt.requires_grad()) {
        matmul_grad_b(at.data().data(), g, bt.grad_or_zeros().data(), m, k, n);
        ensure_finite(bt.grad(), "matmul");
      }
    });
  }
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  if (a.extent(0) != b.extent(0) || a.extent(2) != b.extent(1)) {
    throw ShapeError("bmm: shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " do not chain");
  }
  int batch = a.extent(0), s = a.extent(1), k = a.extent(2), t = b.extent(2);
  Tensor out = Tensor::zeros({batch, s, t});
  for (int i = 0; i < batch; ++i) {
    matmul_accum(a.data().data() + size_t(i) * size_t(s) * size_t(k),
                 b.data().data() + size_t(i) * size_t(k) * size_t(t),
                 out.data().data() + size_t(i) * size_t(s) * size_t(t), s, k, t);
  }
  ensure_finite(out.data(), "bmm");
  if (taping(a, b)) {
    out.set_requires_grad(true);
    Tensor at = a, bt = b, ot = out;
    active_tape()->record([at, bt, ot, batch, s, k, t]() mutable {
      if (!ot.has_grad()) return;
      const Scalar* g = ot.grad().data();
      for (int i = 0; i < batch; ++i) {
        const Scalar* gslice = g + size_t(i) * size_t(s) * size_t(t);
        if (at.requires_grad()) {
          matmul_grad_a(gslice, bt.data().data() + size_t(i) * size_t(k) * size_t(t),
                        at.grad_or_zeros().data() + size_t(i) * size_t(s) * size_t(k), s, k, t);
        }
        if (bt.requires_grad()) {
          matmul_grad_b(at.data().data() + size_t(i) * size_t(s) * size_t(k), gslice,
                        bt.grad_or_zeros().data() + size_t(i) * size_t(k) * size_t(t), s, k, t);
        }
      }
      if (at.requires_grad()) ensure_finite(at.grad(), "bmm");
      if (bt.requires_grad()) ensure_finite(bt.grad(), "bmm");
    });
  }
  return out;
}

namespace {

void transpose_copy(const Scalar* src, Scalar* dst, int64_t batch, int rows, int cols) {
  for (int64_t b = 0; b < batch; ++b) {
    const Scalar* s = src + b * rows * cols;
    Scalar* d = dst + b * rows * cols;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) d[size_t(j) * rows + i] = s[size_t(i) * cols + j];
  }
}

void transpose_accum(const Scalar* src, Scalar* dst, int64_t batch, int rows, int cols) {
  for (int64_t b = 0; b < batch; ++b) {
    const Scalar* s = src + b * rows * cols;
    Scalar* d = dst + b * rows * cols;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) d[size_t(j) * rows + i] += s[size_t(i) * cols + j];
  }
}

}  // namespace

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw ShapeError("transpose_last2: expected rank 2 or 3, got shape " +
                     shape_string(x.shape()));
  }
  int64_t batch = x.rank() == 3 ? x.extent(0) : 1;
  int rows = x.extent(x.rank() - 2), cols = x.extent(x.rank() - 1);
  std::vector<int> out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  Tensor out = Tensor::zeros(out_shape);
  transpose_copy(x.data().data(), out.data().data(), batch, rows, cols);
  if (taping(x)) {
    out.set_requires_grad(true);
    Tensor xt = x, ot = out;
    active_tape()->record([xt, ot, batch, rows, cols]() mutable {
      if (!ot.has_grad()) return;
      transpose_accum(ot.grad().data(), xt.grad_or_zeros().data(), batch, cols, rows);
      ensure_finite(xt.grad(), "transpose_last2");
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  std::span<const Scalar> av = a.data(), bv = b.data();
  std::span<Scalar> ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  ensure_finite(ov, "add");
  if (taping(a, b)) {
    out.set_requires_grad(true);
    Tensor at = a, bt = b, ot = out;
    active_tape()->record([at, bt, ot]() mutable {
      if (!ot.has_grad()) return;
      auto g = std::as_const(ot).grad();
      accumulate_grad(at, g, "add");
      accumulate_grad(bt, g, "add");
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  std::span<const Scalar> av = a.data(), bv = b.data();
  std::span<Scalar> ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  ensure_finite(ov, "mul");
  if (taping(a, b)) {
    out.set_requires_grad(true);
    Tensor at = a, bt = b, ot = out;
    active_tape()->record([at, bt, ot]() mutable {
      if (!ot.has_grad()) return;
      auto g = std::as_const(ot).grad();
      if (at.requires_grad()) {
        std::span<Scalar> da = at.grad_or_zeros();
        std::span<const Scalar> bv2 = bt.data();
        for (size_t i = 0; i < da.size(); ++i) da[i] += g[i] * bv2[i];
        ensure_finite(da, "mul");
      }
      if (bt.requires_grad()) {
        std::span<Scalar> db = bt.grad_or_zeros();
        std::span<const Scalar> av2 = at.data();
        for (size_t i = 0; i < db.size(); ++i) db[i] += g[i] * av2[i];
        ensure_finite(db, "mul");
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(bias, 1, "add_bias");
  if (x.rank() < 1 || x.extent(x.rank() - 1) != bias.extent(0)) {
    throw ShapeError("add_bias: trailing extent of " + shape_string(x.shape()) +
                     " does not match bias " + shape_string(bias.shape()));
  }
  int d = bias.extent(0);
  int64_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape());
  const Scalar* xv = x.data().data();
  const Scalar* bv = bias.data().data();
  Scalar* ov = out.data().data();
  for (int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < d; ++j) ov[r * d + j] = xv[r * d + j] + bv[j];
  ensure_finite(out.data(), "add_bias");
  if (taping(x, bias)) {
    out.set_requires_grad(true);
    Tensor xt = x, bt = bias, ot = out;
    active_tape()->record([xt, bt, ot, rows, d]() mutable {
      if (!ot.has_grad()) return;
      auto g = std::as_const(ot).grad();
      if (xt.requires_grad()) accumulate_grad(xt, g, "add_bias");
      if (bt.requires_grad()) {
        std::span<Scalar> db = bt.grad_or_zeros();
        for (int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) db[size_t(j)] += g[size_t(r * d + j)];
        ensure_finite(db, "add_bias");
      }
    });
  }
  return out;
}

Tensor add_rows(const Tensor& x, const Tensor& rows) {
  require_rank(x, 3, "add_rows");
  require_rank(rows, 2, "add_rows");
  if (x.extent(1) != rows.extent(0) || x.extent(2) != rows.extent(1)) {
    throw ShapeError("add_rows: table " + shape_string(rows.shape()) +
                     " does not match trailing axes of " + shape_string(x.shape()));
  }
  int b = x.extent(0);
  int64_t block = int64_t(x.extent(1)) * x.extent(2);
  Tensor out = Tensor::zeros(x.shape());
  const Scalar* xv = x.data().data();
  const Scalar* rv = rows.data().data();
  Scalar* ov = out.data().data();
  for (int i = 0; i < b; ++i)
    for (int64_t j = 0; j < block; ++j) ov[i * block + j] = xv[i * block + j] + rv[j];
  ensure_finite(out.data(), "add_rows");
  if (taping(x, rows)) {
    out.set_requires_grad(true);
    Tensor xt = x, rt = rows, ot = out;
    active_tape()->record([xt, rt, ot, b, block]() mutable {
      if (!ot.has_grad()) return;
      auto g = std::as_const(ot).grad();
      if (xt.requires_grad()) accumulate_grad(xt, g, "add_rows");
      if (rt.requires_grad()) {
        std::span<Scalar> dr = rt.grad_or_zeros();
        for (int i = 0; i < b; ++i)
          for (int64_t j = 0; j < block; ++j) dr[size_t(j)] += g[size_t(i * block + j)];
        ensure_finite(dr, "add_rows");
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, Scalar factor) {
  Tensor out = Tensor::zeros(x.shape());
  std::span<const Scalar> xv = x.data();
  std::span<Scalar> ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * factor;
  ensure_finite(ov, "scale");
  if (taping(x)) {
    out.set_requires_grad(true);
    Tensor xt = x, ot = out;
    active_tape()->record([xt, ot, factor]() mutable {
      if (!ot.has_grad()) return;
      auto g = std::as_const(ot).grad();
      std::span<Scalar> dx = xt.grad_or_zeros();
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * factor;
      ensure_finite(dx, "scale");
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  std::span<const Scalar> xv = x.data();
  std::span<Scalar> ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > Scalar(0) ? xv[i] : Scalar(0);
  ensure_finite(ov, "relu");
  if (taping(x)) {
    out.set_requires_grad(true);
    Tensor xt = x, ot = out;
    active_tape()->record([xt, ot]() mutable {
      if (!ot.has_grad()) return;
      auto g = std::as_const(ot).grad();
      std::span<const Scalar> xv2 = xt.data();
      std::span<Scalar> dx = xt.grad_or_zeros();
      for (size_t i = 0; i < dx.size(); ++i)
        if (xv2[i] > Scalar(0)) dx[i] += g[i];
      ensure_finite(dx, "relu");
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  AxisSplit s = split_at(x.shape(), axis, "softmax");
  Tensor out = Tensor::zeros(x.shape());
  const Scalar* xv = x.data().data();
  Scalar* ov = out.data().data();
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t i = 0; i < s.inner; ++i) {
      const Scalar* lane = xv + o * s.lanes * s.inner + i;
      Scalar* olane = ov + o * s.lanes * s.inner + i;
      Scalar peak = lane[0];
      for (int64_t j = 1; j < s.lanes; ++j) peak = std::max(peak, lane[j * s.inner]);
      Scalar total = 0;
      for (int64_t j = 0; j < s.lanes; ++j) {
        Scalar e = std::exp(lane[j * s.inner] - peak);
        olane[j * s.inner] = e;
        total += e;
      }
      for (int64_t j = 0; j < s.lanes; ++j) olane[j * s.inner] /= total;
    }
  }
  ensure_finite(out.data(), "softmax");
  if (taping(x)) {
    out.set_requires_grad(true);
    Tensor xt = x, ot = out;
    active_tape()->record([xt, ot, s]() mutable {
      if (!ot.has_grad()) return;
      const Scalar* g = ot.grad().data();
      const Scalar* y = ot.data().data();
      std::span<Scalar> dx = xt.grad_or_zeros();
      for (int64_t o = 0; o < s.outer; ++o) {
        for (int64_t i = 0; i < s.inner; ++i) {
          int64_t base = o * s.lanes * s.inner + i;
          Scalar dot = 0;
          for (int64_t j = 0; j < s.lanes; ++j)
            dot += g[base + j * s.inner] * y[base + j * s.inner];
          for (int64_t j = 0; j < s.lanes; ++j) {
            int64_t p = base + j * s.inner;
            dx[size_t(p)] += y[p] * (g[p] - dot);
          }
        }
      }
      ensure_finite(dx, "softmax");
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar epsilon) {
  if (epsilon <= Scalar(0)) throw ConfigError("layer_norm: epsilon must be positive");
  if (x.rank() < 1) throw ShapeError("layer_norm: input must have at least one axis");
  int d = x.extent(x.rank() - 1);
  require_rank(gain, 1, "layer_norm");
  require_rank(bias, 1, "layer_norm");
  if (gain.extent(0) != d || bias.extent(0) != d) {
    throw ShapeError("layer_norm: gain " + shape_string(gain.shape()) + " and bias " +
                     shape_string(bias.shape()) + " must match trailing extent of " +
                     shape_string(x.shape()));
  }
  int64_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape());
  std::vector<Scalar> normalized(static_cast<size_t>(x.numel()));
  std::vector<Scalar> inv_sigma(static_cast<size_t>(rows));
  const Scalar* xv = x.data().data();
  const Scalar* gv = gain.data().data();
  const Scalar* bv = bias.data().data();
  Scalar* ov = out.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const Scalar* row = xv + r * d;
    Scalar mean = 0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= Scalar(d);
    Scalar var = 0;
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= Scalar(d);
    Scalar inv = Scalar(1) / std::sqrt(var + epsilon);
    inv_sigma[size_t(r)] = inv;
    for (int j = 0; j < d; ++j) {
      Scalar nx = (row[j] - mean) * inv;
      normalized[size_t(r * d + j)] = nx;
      ov[r * d + j] = nx * gv[j] + bv[j];
    }
  }
  ensure_finite(out.data(), "layer_norm");
  if (taping(x, gain) || taping(bias)) {
    out.set_requires_grad(true);
    Tensor xt = x, gt = gain, bt = bias, ot = out;
    auto norm = std::make_shared<std::vector<Scalar>>(std::move(normalized));
    auto inv = std::make_shared<std::vector<Scalar>>(std::move(inv_sigma));
    active_tape()->record([xt, gt, bt, ot, norm, inv, rows, d]() mutable {
      if (!ot.has_grad()) return;
      const Scalar* g = ot.grad().data();
      const Scalar* gv2 = gt.data().data();
      const Scalar* nx = norm->data();
      if (xt.requires_grad()) {
        std::span<Scalar> dx = xt.grad_or_zeros();
        for (int64_t r = 0; r < rows; ++r) {
          const Scalar* grow = g + r * d;
          const Scalar* nrow = nx + r * d;
          Scalar mean_h = 0, mean_hn = 0;
          for (int j = 0; j < d; ++j) {
            Scalar h = grow[j] * gv2[j];
            mean_h += h;
            mean_hn += h * nrow[j];
          }
          mean_h /= Scalar(d);
          mean_hn /= Scalar(d);
          Scalar is = (*inv)[size_t(r)];
          for (int j = 0; j < d; ++j) {
            Scalar h = grow[j] * gv2[j];
            dx[size_t(r * d + j)] += is * (h - mean_h - nrow[j] * mean_hn);
          }
        }
        ensure_finite(dx, "layer_norm");
      }
      if (gt.requires_grad()) {
        std::span<Scalar> dg = gt.grad_or_zeros();
        for (int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) dg[size_t(j)] += g[r * d + j] * nx[r * d + j];
        ensure_finite(dg, "layer_norm");
      }
      if (bt.requires_grad()) {
        std::span<Scalar> db = bt.grad_or_zeros();
        for (int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) db[size_t(j)] += g[r * d + j];
        ensure_finite(db, "layer_norm");
      }
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: needs at least one tensor");
  const std::vector<int>& first = parts[0].shape();
  if (axis < 0 || axis >= int(first.size())) {
    throw IndexError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(first));
  }
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != int(first.size())) {
      throw ShapeError("concat: ranks of " + shape_string(first) + " and " +
                       shape_string(p.shape()) + " differ");
    }
    for (int i = 0; i < p.rank(); ++i) {
      if (i != axis && p.shape()[size_t(i)] != first[size_t(i)]) {
        throw ShapeError("concat: shapes " + shape_string(first) + " and " +
                         shape_string(p.shape()) + " differ off the concat axis");
      }
    }
    total += p.extent(axis);
  }
  std::vector<int> out_shape = first;
  out_shape[size_t(axis)] = total;
  Tensor out = Tensor::zeros(out_shape);
  AxisSplit s = split_at(out_shape, axis, "concat");
  Scalar* ov = out.data().data();
  int64_t offset_lanes = 0;
  for (const Tensor& p : parts) {
    int64_t lanes = p.extent(axis);
    const Scalar* pv = p.data().data();
    for (int64_t o = 0; o < s.outer; ++o) {
      std::memcpy(ov + (o * total + offset_lanes) * s.inner, pv + o * lanes * s.inner,
                  size_t(lanes * s.inner) * sizeof(Scalar));
    }
    offset_lanes += lanes;
  }
  bool any_grad = false;
  for (const Tensor& p : parts) any_grad = any_grad || p.requires_grad();
  if (active_tape() != nullptr && any_grad) {
    out.set_requires_grad(true);
    std::vector<Tensor> pts = parts;
    std::vector<int64_t> lanes;
    for (const Tensor& p : parts) lanes.push_back(p.extent(axis));
    Tensor ot = out;
    active_tape()->record([pts, lanes, ot, s, total]() mutable {
      if (!ot.has_grad()) return;
      const Scalar* g = ot.grad().data();
      int64_t offset = 0;
      for (size_t which = 0; which < pts.size(); ++which) {
        Tensor& p = pts[which];
        int64_t extent = lanes[which];
        if (p.requires_grad()) {
          std::span<Scalar> dp = p.grad_or_zeros();
          for (int64_t o = 0; o < s.outer; ++o) {
            const Scalar* gsrc = g + (o * total + offset) * s.inner;
            Scalar* ddst = dp.data() + o * extent * s.inner;
            for (int64_t j = 0; j < extent * s.inner; ++j) ddst[j] += gsrc[j];
          }
          ensure_finite(dp, "concat");
        }
        offset += extent;
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int start, int length) {
  AxisSplit s = split_at(x.shape(), axis, "slice");
  if (start < 0 || length < 1 || int64_t(start) + length > s.lanes) {
    throw IndexError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of bounds for extent " +
                     std::to_string(s.lanes));
  }
  std::vector<int> out_shape = x.shape();
  out_shape[size_t(axis)] = length;
  Tensor out = Tensor::zeros(out_shape);
  const Scalar* xv = x.data().data();
  Scalar* ov = out.data().data();
  for (int64_t o = 0; o < s.outer; ++o) {
    std::memcpy(ov + o * length * s.inner, xv + (o * s.lanes + start) * s.inner,
                size_t(length * s.inner) * sizeof(Scalar));
  }
  if (taping(x)) {
    out.set_requires_grad(true);
    Tensor xt = x, ot = out;
    active_tape()->record([xt, ot, s, start, length]() mutable {
      if (!ot.has_grad()) return;
      const Scalar* g = ot.grad().data();
      std::span<Scalar> dx = xt.grad_or_zeros();
      for (int64_t o = 0; o < s.outer; ++o) {
        Scalar* dst = dx.data() + (o * s.lanes + start) * s.inner;
        const Scalar* src = g + o * length * s.inner;
        for (int64_t j = 0; j < int64_t(length) * s.inner; ++j) dst[j] += src[j];
      }
      ensure_finite(dx, "slice");
    });
  }
  return out;
}

Tensor split_heads(const Tensor& x, int heads) {
  require_rank(x, 3, "split_heads");
  if (heads < 1 || x.extent(2) % heads != 0) {
    throw ShapeError("split_heads: trailing extent of " + shape_string(x.shape()) +
                     " is not divisible into " + std::to_string(heads) + " heads");
  }
  int b = x.extent(0), s = x.extent(1), d = x.extent(2), dh = d / heads;
  Tensor out = Tensor::zeros({b * heads, s, dh});
  const Scalar* xv = x.data().data();
  Scalar* ov = out.data().data();
  for (int i = 0; i < b; ++i)
    for (int h = 0; h < heads; ++h)
      for (int t = 0; t < s; ++t) {
        std::memcpy(ov + ((size_t(i) * heads + h) * s + t) * dh,
                    xv + (size_t(i) * s + t) * d + size_t(h) * dh, size_t(dh) * sizeof(Scalar));
      }
  if (taping(x)) {
    out.set_requires_grad(true);
    Tensor xt = x, ot = out;
    active_tape()->record([xt, ot, b, s, d, dh, heads]() mutable {
      if (!ot.has_grad()) return;
      const Scalar* g = ot.grad().data();
      std::span<Scalar> dx = xt.grad_or_zeros();
      for (int i = 0; i < b; ++i)
        for (int h = 0; h < heads; ++h)
          for (int t = 0; t < s; ++t) {
            const Scalar* src = g + ((size_t(i) * heads + h) * s + t) * dh;
            Scalar* dst = dx.data() + (size_t(i) * s + t) * d + size_t(h) * dh;
            for (int j = 0; j < dh; ++j) dst[j] += src[j];
          }
      ensure_finite(dx, "split_heads");
    });
  }
  return out;
}

Tensor merge_heads(const Tensor& x, int heads) {
  require_rank(x, 3, "merge_heads");
  if (heads < 1 || x.extent(0) % heads != 0) {
    throw ShapeError("merge_heads: leading extent of " + shape_string(x.shape()) +
                     " is not divisible by " + std::to_string(heads) + " heads");
  }
  int b = x.extent(0) / heads, s = x.extent(1), dh = x.extent(2), d = dh * heads;
  Tensor out = Tensor::zeros({b, s, d});
  const Scalar* xv = x.data().data();
  Scalar* ov = out.data().data();
  for (int i = 0; i < b; ++i)
    for (int h = 0; h < heads; ++h)
      for (int t = 0; t < s; ++t) {
        std::memcpy(ov + (size_t(i) * s + t) * d + size_t(h) * dh,
                    xv + ((size_t(i) * heads + h) * s + t) * dh, size_t(dh) * sizeof(Scalar));
      }
  if (taping(x)) {
    out.set_requires_grad(true);
    Tensor xt = x, ot = out;
    active_tape()->record([xt, ot, b, s, d, dh, heads]() mutable {
      if (!ot.has_grad()) return;
      const Scalar* g = ot.grad().data();
      std::span<Scalar> dx = xt.grad_or_zeros();
      for (int i = 0; i < b; ++i)
        for (int h = 0; h < heads; ++h)
          for (int t = 0; t < s; ++t) {
            const Scalar* src = g + (size_t(i) * s + t) * d + size_t(h) * dh;
            Scalar* dst = dx.data() + ((size_t(i) * heads + h) * s + t) * dh;
            for (int j = 0; j < dh; ++j) dst[j] += src[j];
          }
      ensure_finite(dx, "merge_heads");
    });
  }
  return out;
}

Tensor take_rows(const Tensor& x, const std::vector<int>& row_index) {
  require_rank(x, 3, "take_rows");
  int b = x.extent(0), s = x.extent(1), d = x.extent(2);
  if (int(row_index.size()) != b) {
    throw ShapeError("take_rows: got " + std::to_string(row_index.size()) +
                     " indices for batch extent " + std::to_string(b));
  }
  for (int i = 0; i < b; ++i) {
    if (row_index[size_t(i)] < 0 || row_index[size_t(i)] >= s) {
      throw IndexError("take_rows: row " + std::to_string(row_index[size_t(i)]) +
                       " out of range for extent " + std::to_string(s));
    }
  }
  Tensor out = Tensor::zeros({b, d});
  const Scalar* xv = x.data().data();
  Scalar* ov = out.data().data();
  for (int i = 0; i < b; ++i) {
    std::memcpy(ov + size_t(i) * d, xv + (size_t(i) * s + size_t(row_index[size_t(i)])) * d,
                size_t(d) * sizeof(Scalar));
  }
  if (taping(x)) {
    out.set_requires_grad(true);
    Tensor xt = x, ot = out;
    std::vector<int> idx = row_index;
    active_tape()->record([xt, ot, idx, s, d]() mutable {
      if (!ot.has_grad()) return;
      const Scalar* g = ot.grad().data();
      std::span<Scalar> dx = xt.grad_or_zeros();
      for (size_t i = 0; i < idx.size(); ++i) {
        Scalar* dst = dx.data() + (i * size_t(s) + size_t(idx[i])) * size_t(d);
        const Scalar* src = g + i * size_t(d);
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
      ensure_finite(dx, "take_rows");
    });
  }
  return out;
}

Tensor mean_axis(const Tensor& x, int axis) {
  AxisSplit s = split_at(x.shape(), axis, "mean_axis");
  std::vector<int> out_shape;
  for (int i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.shape()[size_t(i)]);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out = Tensor::zeros(out_shape);
  const Scalar* xv = x.data().data();
  Scalar* ov = out.data().data();
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t i = 0; i < s.inner; ++i) {
      Scalar acc = 0;
      for (int64_t j = 0; j < s.lanes; ++j) acc += xv[(o * s.lanes + j) * s.inner + i];
      ov[o * s.inner + i] = acc / Scalar(s.lanes);
    }
  ensure_finite(out.data(), "mean_axis");
  if (taping(x)) {
    out.set_requires_grad(true);
    Tensor xt = x, ot = out;
    active_tape()->record([xt, ot, s]() mutable {
      if (!ot.has_grad()) return;
      const Scalar* g = ot.grad().data();
      std::span<Scalar> dx = xt.grad_or_zeros();
      Scalar inv = Scalar(1) / Scalar(s.lanes);
      for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t i = 0; i < s.inner; ++i) {
          Scalar gv = g[o * s.inner + i] * inv;
          for (int64_t j = 0; j < s.lanes; ++j)
            dx[size_t((o * s.lanes + j) * s.inner + i)] += gv;
        }
      ensure_finite(dx, "mean_axis");
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  Scalar acc = 0;
  for (Scalar v : x.data()) acc += v;
  Tensor out = Tensor::scalar_value(acc);
  ensure_finite(out.data(), "sum_all");
  if (taping(x)) {
    out.set_requires_grad(true);
    Tensor xt = x, ot = out;
    active_tape()->record([xt, ot]() mutable {
      if (!ot.has_grad()) return;
      Scalar g = std::as_const(ot).grad()[0];
      std::span<Scalar> dx = xt.grad_or_zeros();
      for (Scalar& v : dx) v += g;
      ensure_finite(dx, "sum_all");
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, Scalar rate, Rng* rng) {
  if (rate < Scalar(0) || rate >= Scalar(1)) {
    throw ConfigError("dropout: rate must lie in [0, 1)");
  }
  if (rate == Scalar(0)) return x;
  if (rng == nullptr) throw ContractError("dropout: rng required for a nonzero rate");
  Tensor out = Tensor::zeros(x.shape());
  auto kept_scale = std::make_shared<std::vector<Scalar>>(size_t(x.numel()));
  Scalar inv_keep = Scalar(1) / (Scalar(1) - rate);
  std::span<const Scalar> xv = x.data();
  std::span<Scalar> ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) {
    Scalar m = rng->uniform() >= double(rate) ? inv_keep : Scalar(0);
    (*kept_scale)[i] = m;
    ov[i] = xv[i] * m;
  }
  ensure_finite(ov, "dropout");
  if (taping(x)) {
    out.set_requires_grad(true);
    Tensor xt = x, ot = out;
    active_tape()->record([xt, ot, kept_scale]() mutable {
      if (!ot.has_grad()) return;
      auto g = std::as_const(ot).grad();
      std::span<Scalar> dx = xt.grad_or_zeros();
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * (*kept_scale)[i];
      ensure_finite(dx, "dropout");
    });
  }
  return out;
}

GradCheckReport finite_difference_check(const std::function<Tensor(std::vector<Tensor>&)>& f,
                                        std::vector<Tensor> inputs, double step,
                                        double tolerance) {
  if (step <= 0) throw ConfigError("finite_difference_check: step must be positive");
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  GradTape tape;
  {
    TapeScope scope(&tape);
    Tensor loss = f(inputs);
    backward(loss, tape);
  }
  std::vector<std::vector<Scalar>> analytic;
  analytic.reserve(inputs.size());
  for (Tensor& t : inputs) {
    if (t.has_grad()) {
      auto g = std::as_const(t).grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(size_t(t.numel()), Scalar(0));
    }
    t.clear_grad();
  }
  GradCheckReport report;
  for (size_t which = 0; which < inputs.size(); ++which) {
    std::span<Scalar> values = inputs[which].data();
    for (size_t j = 0; j < values.size(); ++j) {
      Scalar original = values[j];
      values[j] = original + Scalar(step);
      double f_plus = double(f(inputs).value());
      values[j] = original - Scalar(step);
      double f_minus = double(f(inputs).value());
      values[j] = original;
      double numeric = (f_plus - f_minus) / (2.0 * step);
      double rel = std::abs(double(analytic[which][j]) - numeric) /
                   std::max(1.0, std::abs(numeric));
      report.max_rel_error = std::max(report.max_rel_error, rel);
    }
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace mmsa
