// Copyright 2026 The GridDrive Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace griddrive {

// Error taxonomy shared by all modules. The CLI maps these onto its exit
// codes: InvalidInputError/ConfigError/LayoutError -> 2, IoError -> 3,
// NumericalError -> 4.
struct InvalidInputError : std::runtime_error {
  explicit InvalidInputError(const std::string& what) : std::runtime_error(what) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};
struct LayoutError : std::runtime_error {
  explicit LayoutError(const std::string& what) : std::runtime_error(what) {}
};
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Dense row-major matrix. The whole model runs on this one type; `S` is
// float for training and double for the 64-bit test mode.
template <typename S>
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<S> v;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, S(0)) {}

  S* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
  const S* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
  S& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  S at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return v.size(); }
  void zero() { std::fill(v.begin(), v.end(), S(0)); }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

using MatF = Matrix<float>;
using MatD = Matrix<double>;

// C (m x n) += A (m x k) * B (k x n). i-k-j order so the inner loop runs
// over contiguous rows of B and C and vectorizes without reassociation.
template <typename S>
inline void matmul_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<size_t>(i) * k;
    S* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S s = arow[p];
      if (s == S(0)) continue;
      const S* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
}

template <typename S>
inline void matmul_acc(const Matrix<S>& a, const Matrix<S>& b, Matrix<S>& c) {
  assert(a.cols == b.rows && a.rows == c.rows && b.cols == c.cols);
  matmul_acc(a.v.data(), b.v.data(), c.v.data(), a.rows, a.cols, b.cols);
}

// C (m x n) += A^T (m x k, stored k x m) * B (k x n).
template <typename S>
inline void matmul_at_b_acc(const Matrix<S>& a, const Matrix<S>& b, Matrix<S>& c) {
  assert(a.rows == b.rows && a.cols == c.rows && b.cols == c.cols);
  for (int p = 0; p < a.rows; ++p) {
    const S* arow = a.row(p);
    const S* brow = b.row(p);
    for (int i = 0; i < a.cols; ++i) {
      const S s = arow[i];
      if (s == S(0)) continue;
      S* crow = c.row(i);
      for (int j = 0; j < b.cols; ++j) crow[j] += s * brow[j];
    }
  }
}

// C (m x n) += A (m x k) * B^T (n x k).
template <typename S>
inline void matmul_a_bt_acc(const Matrix<S>& a, const Matrix<S>& b, Matrix<S>& c) {
  assert(a.cols == b.cols && a.rows == c.rows && b.rows == c.cols);
  for (int i = 0; i < a.rows; ++i) {
    const S* arow = a.row(i);
    S* crow = c.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const S* brow = b.row(j);
      S acc = S(0);
      for (int p = 0; p < a.cols; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

constexpr double kPi = 3.14159265358979323846;

// Normalize an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Callers own
// determinism: fn(i) must not depend on scheduling order.
inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
  if (jobs < 1) jobs = 1;
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w]() {
      for (int i = w; i < n; i += jobs) fn(i);
    });
  }
  for (auto& t : workers) t.join();
}

}  // namespace griddrive
