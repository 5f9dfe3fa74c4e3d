// include/delulu/numerics/graph.h

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
#include <deque>
#include <string>
#include <string_view>
#include <vector>

#include "delulu/numerics/tensor.h"

namespace delulu {

// A named trainable tensor together with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Ordered collection of parameters. Element addresses are stable (deque
// storage); graphs hold raw pointers into it.
class ParameterSet {
 public:
  Parameter& Add(std::string name, Tensor value);
  Parameter& Get(std::string_view name);
  const Parameter& Get(std::string_view name) const;
  bool Contains(std::string_view name) const;

  size_t size() const { return params_.size(); }
  Parameter& operator[](size_t i) { return params_[i]; }
  const Parameter& operator[](size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void ZeroGrad();
  size_t NumScalars() const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  std::deque<Parameter> params_;
};

enum class Op {
  kConstant,
  kInput,
  kParam,
  kMatMul,
  kMatMulNT,
  kConv1d,
  kAdd,
  kMul,
  kScale,
  kGelu,
  kLayerNorm,
  kSoftmax,
  kLogSoftmax,
  kMeanRows,
  kSquare,
  kSum,
  kGather,
  kL2Normalize,
  kSliceCols,
  kConcatCols,
  kReplaceRows,
  kPick,
};

const char* OpName(Op op);

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Tensor& grad() const;
  size_t rows() const { return value().rows(); }
  size_t cols() const { return value().cols(); }
  bool valid() const { return graph != nullptr && id >= 0; }
};

// Dynamic reverse-mode tape. Nodes are appended in creation order, which is
// a topological order: every node's inputs precede it. One graph is built
// per forward pass and discarded after Backward().
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var Constant(Tensor value);
  // A leaf that receives a gradient (finite-difference tests, probes).
  Var Input(Tensor value);
  // A leaf bound to a parameter; Backward() accumulates into param.grad.
  Var Param(Parameter& param);

  // Runs reverse-mode accumulation from a scalar node. Parameter gradients
  // are added to whatever the parameters already hold.
  void Backward(Var loss);

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& grad(int id) const;
  size_t num_nodes() const { return nodes_.size(); }
  Op op(int id) const { return nodes_[id].op; }
  const std::vector<int>& inputs(int id) const { return nodes_[id].inputs; }

 private:
  struct Node {
    Op op = Op::kConstant;
    std::vector<int> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    // Op-specific saved state.
    Tensor saved;
    std::vector<size_t> index;
    std::vector<size_t> index2;
    std::vector<double> aux;
    double scalar = 0.0;
    size_t stride = 0;
  };

  Var Push(Node node);
  Node& node(Var v) { return nodes_[v.id]; }
  Tensor& GradOf(int id);
  void BackwardNode(Node& n);

  std::vector<Node> nodes_;

  friend Var MatMul(Var a, Var b);
  friend Var MatMulNT(Var a, Var b);
  friend Var Conv1d(Var x, Var weight, Var bias, size_t stride);
  friend Var Add(Var a, Var b);
  friend Var Mul(Var a, Var b);
  friend Var Scale(Var a, double s);
  friend Var Gelu(Var a);
  friend Var LayerNorm(Var x, Var gamma, Var beta);
  friend Var Softmax(Var a);
  friend Var LogSoftmax(Var a);
  friend Var MeanRows(Var x, const std::vector<bool>& keep);
  friend Var Square(Var a);
  friend Var Sum(Var a);
  friend Var Gather(Var table, const std::vector<size_t>& rows);
  friend Var L2Normalize(Var a);
  friend Var SliceCols(Var a, size_t begin, size_t end);
  friend Var ConcatCols(const std::vector<Var>& parts);
  friend Var ReplaceRows(Var x, Var row, const std::vector<bool>& where);
  friend Var Pick(Var a, const std::vector<size_t>& rows, const std::vector<size_t>& cols);
};

// a: m x n, b: n x p.
Var MatMul(Var a, Var b);
// a * b^T with a: m x n, b: p x n.
Var MatMulNT(Var a, Var b);
// Valid (unpadded) strided convolution over time.
//   x: T x C_in (time-major), weight: (K * C_in) x C_out, bias: 1 x C_out
//   or invalid Var. Output: (floor((T - K) / stride) + 1) x C_out.
Var Conv1d(Var x, Var weight, Var bias, size_t stride);
// b may have a's shape or be a 1 x cols row broadcast over a's rows.
Var Add(Var a, Var b);
Var Mul(Var a, Var b);
Var Scale(Var a, double s);
Var Sub(Var a, Var b);
// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Var Gelu(Var a);
// Per-row normalization, eps = 1e-5 inside the square root; gamma/beta are
// optional 1 x cols affine terms. A constant row maps to beta.
Var LayerNorm(Var x, Var gamma = {}, Var beta = {});
Var Softmax(Var a);
Var LogSoftmax(Var a);
// Mean over the rows with keep[t] set (all rows when keep is empty) -> 1 x cols.
Var MeanRows(Var x, const std::vector<bool>& keep = {});
Var Square(Var a);
// Sum of all elements -> 1 x 1.
Var Sum(Var a);
Var Mean(Var a);
// Embedding lookup: output row i = table row rows[i].
Var Gather(Var table, const std::vector<size_t>& rows);
// Per-row L2 normalization; an all-zero row stays zero (and gets zero grad).
Var L2Normalize(Var a);
Var SliceCols(Var a, size_t begin, size_t end);
Var ConcatCols(const std::vector<Var>& parts);
// Rows t with where[t] set are replaced by `row` (1 x cols).
Var ReplaceRows(Var x, Var row, const std::vector<bool>& where);
// Column vector of a(rows[i], cols[i]).
Var Pick(Var a, const std::vector<size_t>& rows, const std::vector<size_t>& cols);

// Output length of a valid strided convolution, 0 when the input is shorter
// than the kernel.
size_t ConvOutputLength(size_t n, size_t kernel, size_t stride);

}  // namespace delulu
