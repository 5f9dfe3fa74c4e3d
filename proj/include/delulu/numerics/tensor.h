// include/delulu/numerics/tensor.h

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

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace delulu {

// Dense row-major matrix of doubles. Vectors are 1xN, scalars 1x1; every
// activation in the project is at most two-dimensional (time x channel).
class Tensor {
 public:
  Tensor() = default;
  Tensor(size_t rows, size_t cols, double fill = 0.0);
  Tensor(size_t rows, size_t cols, std::vector<double> values);

  static Tensor Scalar(double v) { return Tensor(1, 1, v); }
  static Tensor Row(std::vector<double> values);

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::vector<size_t> shape() const { return {rows_, cols_}; }
  std::string shape_str() const;

  double& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
  double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  std::span<double> row(size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(size_t r) const { return {data_.data() + r * cols_, cols_}; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }

  double item() const;
  bool all_finite() const;
  void fill(double v);
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  size_t rows_ = 0;
  size_t cols_ = 0;
  std::vector<double> data_;
};

// C += A * B with A: m x n (row stride a_stride), B: n x p, C rows c_stride
// apart. Fixed i-k-j accumulation order; zero rows of B are exact no-ops. Rows of C
// may overlap (c_stride < p); they are accumulated in increasing i.
void MatMulAcc(const double* a, size_t m, size_t n, size_t a_stride,
               const double* b, size_t p, double* c, size_t c_stride);
// C += A^T * B with A: n x m (row stride a_stride), B: n x p, C: m x p.
void MatMulTNAcc(const double* a, size_t n, size_t m, size_t a_stride,
                 const double* b, size_t p, double* c);

Tensor MatMul(const Tensor& a, const Tensor& b);
Tensor Transpose(const Tensor& a);

}  // namespace delulu
