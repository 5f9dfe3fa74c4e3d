// src/numerics/tensor.cc

// Copyright 2026  The delulu Authors
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

#include "delulu/numerics/tensor.h"

#include <algorithm>
#include <cmath>

#include "delulu/base/error.h"

namespace delulu {

Tensor::Tensor(size_t rows, size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (rows == 0 || cols == 0)
    throw ContractError("tensor dimensions must be positive, got " +
                        std::to_string(rows) + "x" + std::to_string(cols));
}

Tensor::Tensor(size_t rows, size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (rows == 0 || cols == 0)
    throw ContractError("tensor dimensions must be positive, got " +
                        std::to_string(rows) + "x" + std::to_string(cols));
  if (data_.size() != rows * cols)
    throw ContractError("tensor " + shape_str() + " given " +
                        std::to_string(data_.size()) + " values");
}

Tensor Tensor::Row(std::vector<double> values) {
  size_t n = values.size();
  return Tensor(1, n, std::move(values));
}

std::string Tensor::shape_str() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str());
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void MatMulAcc(const double* a, size_t m, size_t n, size_t a_stride,
               const double* __restrict b, size_t p, double* c, size_t c_stride) {
  // Four output rows per pass.
  // Overlapping output rows (conv input gradients) take the plain loop.
  size_t i = 0;
  for (; c_stride >= p && i + 4 <= m; i += 4) {
    const double* a0 = a + i * a_stride;
    const double* a1 = a0 + a_stride;
    const double* a2 = a1 + a_stride;
    const double* a3 = a2 + a_stride;
    double* __restrict c0 = c + i * c_stride;
    double* __restrict c1 = c0 + c_stride;
    double* __restrict c2 = c1 + c_stride;
    double* __restrict c3 = c2 + c_stride;
    for (size_t k = 0; k < n; ++k) {
      const double x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
      const double* bk = b + k * p;
      for (size_t j = 0; j < p; ++j) {
        const double bj = bk[j];
        c0[j] += x0 * bj;
        c1[j] += x1 * bj;
        c2[j] += x2 * bj;
        c3[j] += x3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    const double* ai = a + i * a_stride;
    double* ci = c + i * c_stride;
    for (size_t k = 0; k < n; ++k) {
      const double aik = ai[k];
      const double* bk = b + k * p;
      for (size_t j = 0; j < p; ++j) ci[j] += aik * bk[j];
    }
  }
}

void MatMulTNAcc(const double* a, size_t n, size_t m, size_t a_stride,
                 const double* __restrict b, size_t p, double* __restrict c) {
  size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const double* a0 = a + k * a_stride;
    const double* a1 = a0 + a_stride;
    const double* a2 = a1 + a_stride;
    const double* a3 = a2 + a_stride;
    const double* b0 = b + k * p;
    const double* b1 = b0 + p;
    const double* b2 = b1 + p;
    const double* b3 = b2 + p;
    for (size_t i = 0; i < m; ++i) {
      const double x0 = a0[i], x1 = a1[i], x2 = a2[i], x3 = a3[i];
      double* ci = c + i * p;
      for (size_t j = 0; j < p; ++j) ci[j] += x0 * b0[j] + x1 * b1[j] + x2 * b2[j] + x3 * b3[j];
    }
  }
  for (; k < n; ++k) {
    const double* ak = a + k * a_stride;
    const double* bk = b + k * p;
    for (size_t i = 0; i < m; ++i) {
      const double aki = ak[i];
      double* ci = c + i * p;
      for (size_t j = 0; j < p; ++j) ci[j] += aki * bk[j];
    }
  }
}

Tensor MatMul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw ContractError("matmul: incompatible shapes " + a.shape_str() + " and " + b.shape_str());
  Tensor c(a.rows(), b.cols());
  MatMulAcc(a.data(), a.rows(), a.cols(), a.cols(), b.data(), b.cols(), c.data(), c.cols());
  return c;
}

Tensor Transpose(const Tensor& a) {
  Tensor t(a.cols(), a.rows());
  for (size_t i = 0; i < a.rows(); ++i)
    for (size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

}  // namespace delulu
