#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "mmsa/rng.hpp"
#include "mmsa/tensor.hpp"

namespace mmsa::testing {

// Reference rank-2 product written with a different loop order and its own
// accumulation so it shares no code with the library kernel.
inline std::vector<double> naive_matmul(const std::vector<double>& a,
                                        const std::vector<double>& b, int m, int k, int n) {
  std::vector<double> c(size_t(m) * size_t(n), 0.0);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a[size_t(i) * k + p] * b[size_t(p) * n + j];
      c[size_t(i) * n + j] = acc;
    }
  return c;
}

// Reference softmax over a single lane, computed in extended precision.
inline std::vector<double> naive_softmax_lane(const std::vector<double>& lane) {
  long double peak = lane[0];
  for (double v : lane) peak = std::max(peak, (long double)v);
  long double total = 0.0L;
  std::vector<long double> e(lane.size());
  for (size_t i = 0; i < lane.size(); ++i) {
    e[i] = expl((long double)lane[i] - peak);
    total += e[i];
  }
  std::vector<double> out(lane.size());
  for (size_t i = 0; i < lane.size(); ++i) out[i] = double(e[i] / total);
  return out;
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -2.0,
                            double hi = 2.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Scalar& v : t.data()) v = Scalar(rng.uniform(lo, hi));
  return t;
}

// Random tensor with values kept away from zero, for kinked ops like relu.
inline Tensor random_tensor_off_zero(std::vector<int> shape, Rng& rng, double margin = 0.1) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (Scalar& v : t.data()) {
    if (std::abs(double(v)) < margin) v += v >= Scalar(0) ? Scalar(2 * margin) : Scalar(-2 * margin);
  }
  return t;
}

inline double max_abs_diff(std::span<const Scalar> a, std::span<const Scalar> b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

inline bool message_mentions(const std::exception& e, const std::string& needle) {
  return std::string(e.what()).find(needle) != std::string::npos;
}

// Fresh directory under the system temp root, unique per call.
inline std::string fresh_temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  std::filesystem::path dir = std::filesystem::temp_directory_path() /
                              ("mmsa_" + tag + "_" + std::to_string(stamp) + "_" +
                               std::to_string(counter.fetch_add(1)));
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace mmsa::testing
