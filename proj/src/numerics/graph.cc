// src/numerics/graph.cc

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

#include "delulu/numerics/graph.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "delulu/base/error.h"

namespace delulu {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

void CheckSameGraph(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || a.graph != b.graph)
    throw ContractError(std::string(op) + ": operands belong to different graphs");
}

[[noreturn]] void ShapeFail(const char* op, const Tensor& a, const Tensor& b) {
  throw ContractError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                      b.shape_str());
}

void CheckFinite(Op op, const Tensor& t) {
  if (!t.all_finite())
    throw NumericError(std::string(OpName(op)) + ": non-finite value in output " +
                       t.shape_str());
}

void AddInto(Tensor& dst, const Tensor& src) {
  double* d = dst.data();
  const double* s = src.data();
  for (size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

const char* OpName(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kMatMul: return "matmul";
    case Op::kMatMulNT: return "matmul_nt";
    case Op::kConv1d: return "conv1d";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kGelu: return "gelu";
    case Op::kLayerNorm: return "layer_norm";
    case Op::kSoftmax: return "softmax";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kMeanRows: return "mean_rows";
    case Op::kSquare: return "square";
    case Op::kSum: return "sum";
    case Op::kGather: return "gather";
    case Op::kL2Normalize: return "l2_normalize";
    case Op::kSliceCols: return "slice_cols";
    case Op::kConcatCols: return "concat_cols";
    case Op::kReplaceRows: return "replace_rows";
    case Op::kPick: return "pick";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// ParameterSet

Parameter& ParameterSet::Add(std::string name, Tensor value) {
  if (Contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  Tensor grad(value.rows(), value.cols());
  params_.push_back(Parameter{std::move(name), std::move(value), std::move(grad)});
  return params_.back();
}

Parameter& ParameterSet::Get(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

const Parameter& ParameterSet::Get(std::string_view name) const {
  return const_cast<ParameterSet*>(this)->Get(name);
}

bool ParameterSet::Contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const Parameter& p) { return p.name == name; });
}

void ParameterSet::ZeroGrad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

size_t ParameterSet::NumScalars() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].name != b[i].name || !(a[i].value == b[i].value)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Var / Graph

const Tensor& Var::value() const { return graph->value(id); }
const Tensor& Var::grad() const { return graph->grad(id); }

const Tensor& Graph::grad(int id) const {
  const Node& n = nodes_[id];
  if (n.grad.empty())
    throw ContractError("node " + std::to_string(id) + " (" + OpName(n.op) +
                        ") has no gradient; was Backward() run through it?");
  return n.grad;
}

Tensor& Graph::GradOf(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Graph::Push(Node node) {
  CheckFinite(node.op, node.value);
  if (node.op != Op::kConstant && node.op != Op::kInput && node.op != Op::kParam) {
    node.requires_grad = false;
    for (int in : node.inputs)
      if (in >= 0 && nodes_[in].requires_grad) node.requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::Constant(Tensor value) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  return Push(std::move(n));
}

Var Graph::Input(Tensor value) {
  Node n;
  n.op = Op::kInput;
  n.value = std::move(value);
  n.requires_grad = true;
  return Push(std::move(n));
}

Var Graph::Param(Parameter& param) {
  Node n;
  n.op = Op::kParam;
  n.value = param.value;
  n.param = &param;
  n.requires_grad = true;
  return Push(std::move(n));
}

void Graph::Backward(Var loss) {
  if (loss.graph != this) throw ContractError("backward: loss node belongs to another graph");
  const Tensor& lv = loss.value();
  if (lv.size() != 1)
    throw ContractError("backward: loss must be scalar, got " + lv.shape_str());
  GradOf(loss.id)[0] += 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.op == Op::kParam) {
      AddInto(n.param->grad, n.grad);
      continue;
    }
    BackwardNode(n);
  }
}

void Graph::BackwardNode(Node& n) {
  auto wants = [&](size_t k) {
    return k < n.inputs.size() && n.inputs[k] >= 0 && nodes_[n.inputs[k]].requires_grad;
  };
  const Tensor& dy = n.grad;
  const Tensor& y = n.value;

  switch (n.op) {
    case Op::kConstant:
    case Op::kInput:
    case Op::kParam:
      break;

    case Op::kMatMul: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      const Tensor& b = nodes_[n.inputs[1]].value;
      if (wants(0)) {
        // dA += dY * B^T
        Tensor bt = Transpose(b);
        Tensor& da = GradOf(n.inputs[0]);
        MatMulAcc(dy.data(), dy.rows(), dy.cols(), dy.cols(), bt.data(), bt.cols(), da.data(),
                  da.cols());
      }
      if (wants(1)) {
        Tensor& db = GradOf(n.inputs[1]);
        MatMulTNAcc(a.data(), a.rows(), a.cols(), a.cols(), dy.data(), dy.cols(), db.data());
      }
      break;
    }

    case Op::kMatMulNT: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      const Tensor& b = nodes_[n.inputs[1]].value;
      if (wants(0)) {
        // dA += dY * B
        Tensor& da = GradOf(n.inputs[0]);
        MatMulAcc(dy.data(), dy.rows(), dy.cols(), dy.cols(), b.data(), b.cols(), da.data(),
                  da.cols());
      }
      if (wants(1)) {
        // dB += dY^T * A
        Tensor& db = GradOf(n.inputs[1]);
        MatMulTNAcc(dy.data(), dy.rows(), dy.cols(), dy.cols(), a.data(), a.cols(), db.data());
      }
      break;
    }

    case Op::kConv1d: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      const Tensor& w = nodes_[n.inputs[1]].value;
      const size_t cin = x.cols();
      const size_t window = w.rows();
      const size_t t_out = y.rows();
      const size_t row_step = n.stride * cin;
      if (wants(0)) {
        Tensor wt = Transpose(w);
        Tensor& dx = GradOf(n.inputs[0]);
        MatMulAcc(dy.data(), t_out, dy.cols(), dy.cols(), wt.data(), window, dx.data(),
                  row_step);
      }
      if (wants(1)) {
        Tensor& dw = GradOf(n.inputs[1]);
        MatMulTNAcc(x.data(), t_out, window, row_step, dy.data(), dy.cols(), dw.data());
      }
      if (wants(2)) {
        Tensor& db = GradOf(n.inputs[2]);
        for (size_t t = 0; t < t_out; ++t)
          for (size_t j = 0; j < dy.cols(); ++j) db[j] += dy(t, j);
      }
      break;
    }

    case Op::kAdd: {
      if (wants(0)) AddInto(GradOf(n.inputs[0]), dy);
      if (wants(1)) {
        Tensor& db = GradOf(n.inputs[1]);
        if (db.rows() == dy.rows()) {
          AddInto(db, dy);
        } else {
          for (size_t t = 0; t < dy.rows(); ++t)
            for (size_t j = 0; j < dy.cols(); ++j) db[j] += dy(t, j);
        }
      }
      break;
    }

    case Op::kMul: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      const Tensor& b = nodes_[n.inputs[1]].value;
      const bool bcast = b.rows() != a.rows();
      if (wants(0)) {
        Tensor& da = GradOf(n.inputs[0]);
        for (size_t t = 0; t < a.rows(); ++t)
          for (size_t j = 0; j < a.cols(); ++j)
            da(t, j) += dy(t, j) * (bcast ? b[j] : b(t, j));
      }
      if (wants(1)) {
        Tensor& db = GradOf(n.inputs[1]);
        for (size_t t = 0; t < a.rows(); ++t)
          for (size_t j = 0; j < a.cols(); ++j) {
            if (bcast)
              db[j] += dy(t, j) * a(t, j);
            else
              db(t, j) += dy(t, j) * a(t, j);
          }
      }
      break;
    }

    case Op::kScale: {
      Tensor& da = GradOf(n.inputs[0]);
      for (size_t i = 0; i < dy.size(); ++i) da[i] += n.scalar * dy[i];
      break;
    }

    case Op::kGelu: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      Tensor& dx = GradOf(n.inputs[0]);
      for (size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const double d = 0.5 * (1.0 + th) +
                         0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        dx[i] += dy[i] * d;
      }
      break;
    }

    case Op::kLayerNorm: {
      // saved holds x_hat, aux the per-row inverse standard deviation.
      const Tensor& xhat = n.saved;
      const size_t rows = xhat.rows(), cols = xhat.cols();
      const Tensor* gamma = n.inputs[1] >= 0 ? &nodes_[n.inputs[1]].value : nullptr;
      if (wants(0)) {
        Tensor& dx = GradOf(n.inputs[0]);
        std::vector<double> g(cols);
        for (size_t t = 0; t < rows; ++t) {
          double mean_g = 0.0, mean_gx = 0.0;
          for (size_t j = 0; j < cols; ++j) {
            g[j] = dy(t, j) * (gamma ? (*gamma)[j] : 1.0);
            mean_g += g[j];
            mean_gx += g[j] * xhat(t, j);
          }
          mean_g /= static_cast<double>(cols);
          mean_gx /= static_cast<double>(cols);
          const double istd = n.aux[t];
          for (size_t j = 0; j < cols; ++j)
            dx(t, j) += istd * (g[j] - mean_g - xhat(t, j) * mean_gx);
        }
      }
      if (wants(1)) {
        Tensor& dg = GradOf(n.inputs[1]);
        for (size_t t = 0; t < rows; ++t)
          for (size_t j = 0; j < cols; ++j) dg[j] += dy(t, j) * xhat(t, j);
      }
      if (wants(2)) {
        Tensor& db = GradOf(n.inputs[2]);
        for (size_t t = 0; t < rows; ++t)
          for (size_t j = 0; j < cols; ++j) db[j] += dy(t, j);
      }
      break;
    }

    case Op::kSoftmax: {
      Tensor& dx = GradOf(n.inputs[0]);
      for (size_t t = 0; t < y.rows(); ++t) {
        double dot = 0.0;
        for (size_t j = 0; j < y.cols(); ++j) dot += dy(t, j) * y(t, j);
        for (size_t j = 0; j < y.cols(); ++j) dx(t, j) += y(t, j) * (dy(t, j) - dot);
      }
      break;
    }

    case Op::kLogSoftmax: {
      Tensor& dx = GradOf(n.inputs[0]);
      for (size_t t = 0; t < y.rows(); ++t) {
        double total = 0.0;
        for (size_t j = 0; j < y.cols(); ++j) total += dy(t, j);
        for (size_t j = 0; j < y.cols(); ++j) dx(t, j) += dy(t, j) - std::exp(y(t, j)) * total;
      }
      break;
    }

    case Op::kMeanRows: {
      Tensor& dx = GradOf(n.inputs[0]);
      const double inv = n.scalar;
      for (size_t t = 0; t < dx.rows(); ++t) {
        if (!n.index.empty() && !n.index[t]) continue;
        for (size_t j = 0; j < dx.cols(); ++j) dx(t, j) += inv * dy[j];
      }
      break;
    }

    case Op::kSquare: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      Tensor& dx = GradOf(n.inputs[0]);
      for (size_t i = 0; i < x.size(); ++i) dx[i] += 2.0 * x[i] * dy[i];
      break;
    }

    case Op::kSum: {
      Tensor& dx = GradOf(n.inputs[0]);
      const double g = dy[0];
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += g;
      break;
    }

    case Op::kGather: {
      Tensor& dt = GradOf(n.inputs[0]);
      for (size_t i = 0; i < n.index.size(); ++i) {
        auto dst = dt.row(n.index[i]);
        auto src = dy.row(i);
        for (size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
      break;
    }

    case Op::kL2Normalize: {
      Tensor& dx = GradOf(n.inputs[0]);
      for (size_t t = 0; t < y.rows(); ++t) {
        const double inv_norm = n.saved[t];
        if (inv_norm == 0.0) continue;
        double dot = 0.0;
        for (size_t j = 0; j < y.cols(); ++j) dot += y(t, j) * dy(t, j);
        for (size_t j = 0; j < y.cols(); ++j)
          dx(t, j) += inv_norm * (dy(t, j) - y(t, j) * dot);
      }
      break;
    }

    case Op::kSliceCols: {
      Tensor& dx = GradOf(n.inputs[0]);
      const size_t begin = n.stride;
      for (size_t t = 0; t < dy.rows(); ++t)
        for (size_t j = 0; j < dy.cols(); ++j) dx(t, begin + j) += dy(t, j);
      break;
    }

    case Op::kConcatCols: {
      size_t offset = 0;
      for (size_t k = 0; k < n.inputs.size(); ++k) {
        const size_t w = nodes_[n.inputs[k]].value.cols();
        if (wants(k)) {
          Tensor& dx = GradOf(n.inputs[k]);
          for (size_t t = 0; t < dy.rows(); ++t)
            for (size_t j = 0; j < w; ++j) dx(t, j) += dy(t, offset + j);
        }
        offset += w;
      }
      break;
    }

    case Op::kReplaceRows: {
      const auto& where = n.index;
      if (wants(0)) {
        Tensor& dx = GradOf(n.inputs[0]);
        for (size_t t = 0; t < dy.rows(); ++t) {
          if (where[t]) continue;
          for (size_t j = 0; j < dy.cols(); ++j) dx(t, j) += dy(t, j);
        }
      }
      if (wants(1)) {
        Tensor& dr = GradOf(n.inputs[1]);
        for (size_t t = 0; t < dy.rows(); ++t) {
          if (!where[t]) continue;
          for (size_t j = 0; j < dy.cols(); ++j) dr[j] += dy(t, j);
        }
      }
      break;
    }

    case Op::kPick: {
      Tensor& dx = GradOf(n.inputs[0]);
      for (size_t i = 0; i < n.index.size(); ++i) dx(n.index[i], n.index2[i]) += dy[i];
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Ops

size_t ConvOutputLength(size_t n, size_t kernel, size_t stride) {
  if (n < kernel) return 0;
  return (n - kernel) / stride + 1;
}

Var MatMul(Var a, Var b) {
  CheckSameGraph(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) ShapeFail("matmul", av, bv);
  Graph::Node n;
  n.op = Op::kMatMul;
  n.inputs = {a.id, b.id};
  n.value = MatMul(av, bv);
  return a.graph->Push(std::move(n));
}

Var MatMulNT(Var a, Var b) {
  CheckSameGraph(a, b, "matmul_nt");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) ShapeFail("matmul_nt", av, bv);
  Graph::Node n;
  n.op = Op::kMatMulNT;
  n.inputs = {a.id, b.id};
  n.value = MatMul(av, Transpose(bv));
  return a.graph->Push(std::move(n));
}

Var Conv1d(Var x, Var weight, Var bias, size_t stride) {
  CheckSameGraph(x, weight, "conv1d");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (stride == 0) throw ContractError("conv1d: stride must be positive");
  if (wv.rows() % xv.cols() != 0) ShapeFail("conv1d", xv, wv);
  const size_t kernel = wv.rows() / xv.cols();
  const size_t t_out = ConvOutputLength(xv.rows(), kernel, stride);
  if (t_out == 0)
    throw ContractError("conv1d: input length " + std::to_string(xv.rows()) +
                        " shorter than kernel " + std::to_string(kernel));
  const size_t cout = wv.cols();
  Graph::Node n;
  n.op = Op::kConv1d;
  n.inputs = {x.id, weight.id, -1};
  n.stride = stride;
  n.value = Tensor(t_out, cout);
  if (bias.valid()) {
    CheckSameGraph(x, bias, "conv1d");
    const Tensor& bv = bias.value();
    if (bv.rows() != 1 || bv.cols() != cout) ShapeFail("conv1d(bias)", wv, bv);
    n.inputs[2] = bias.id;
    for (size_t t = 0; t < t_out; ++t)
      std::copy(bv.data(), bv.data() + cout, n.value.row(t).data());
  }
  MatMulAcc(xv.data(), t_out, wv.rows(), stride * xv.cols(), wv.data(), cout, n.value.data(),
            cout);
  return x.graph->Push(std::move(n));
}

Var Add(Var a, Var b) {
  CheckSameGraph(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool bcast = bv.rows() == 1 && av.rows() != 1 && bv.cols() == av.cols();
  if (!av.same_shape(bv) && !bcast) ShapeFail("add", av, bv);
  Graph::Node n;
  n.op = Op::kAdd;
  n.inputs = {a.id, b.id};
  n.value = av;
  for (size_t t = 0; t < av.rows(); ++t) {
    auto dst = n.value.row(t);
    auto src = bv.row(bcast ? 0 : t);
    for (size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  return a.graph->Push(std::move(n));
}

Var Mul(Var a, Var b) {
  CheckSameGraph(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool bcast = bv.rows() == 1 && av.rows() != 1 && bv.cols() == av.cols();
  if (!av.same_shape(bv) && !bcast) ShapeFail("mul", av, bv);
  Graph::Node n;
  n.op = Op::kMul;
  n.inputs = {a.id, b.id};
  n.value = av;
  for (size_t t = 0; t < av.rows(); ++t) {
    auto dst = n.value.row(t);
    auto src = bv.row(bcast ? 0 : t);
    for (size_t j = 0; j < dst.size(); ++j) dst[j] *= src[j];
  }
  return a.graph->Push(std::move(n));
}

Var Scale(Var a, double s) {
  Graph::Node n;
  n.op = Op::kScale;
  n.inputs = {a.id};
  n.scalar = s;
  n.value = a.value();
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] *= s;
  return a.graph->Push(std::move(n));
}

Var Sub(Var a, Var b) { return Add(a, Scale(b, -1.0)); }

Var Gelu(Var a) {
  Graph::Node n;
  n.op = Op::kGelu;
  n.inputs = {a.id};
  n.value = a.value();
  for (size_t i = 0; i < n.value.size(); ++i) {
    const double v = n.value[i];
    n.value[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return a.graph->Push(std::move(n));
}

Var LayerNorm(Var x, Var gamma, Var beta) {
  const Tensor& xv = x.value();
  const size_t rows = xv.rows(), cols = xv.cols();
  Graph::Node n;
  n.op = Op::kLayerNorm;
  n.inputs = {x.id, -1, -1};
  if (gamma.valid()) {
    CheckSameGraph(x, gamma, "layer_norm");
    if (gamma.rows() != 1 || gamma.cols() != cols) ShapeFail("layer_norm(gamma)", xv, gamma.value());
    n.inputs[1] = gamma.id;
  }
  if (beta.valid()) {
    CheckSameGraph(x, beta, "layer_norm");
    if (beta.rows() != 1 || beta.cols() != cols) ShapeFail("layer_norm(beta)", xv, beta.value());
    n.inputs[2] = beta.id;
  }
  n.saved = Tensor(rows, cols);
  std::vector<double>& inv_std = n.aux;
  inv_std.resize(rows);
  for (size_t t = 0; t < rows; ++t) {
    auto r = xv.row(t);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(cols);
    inv_std[t] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (size_t j = 0; j < cols; ++j) n.saved(t, j) = (r[j] - mean) * inv_std[t];
  }
  n.value = n.saved;
  if (gamma.valid() || beta.valid()) {
    for (size_t t = 0; t < rows; ++t)
      for (size_t j = 0; j < cols; ++j) {
        double v = n.value(t, j);
        if (gamma.valid()) v *= gamma.value()[j];
        if (beta.valid()) v += beta.value()[j];
        n.value(t, j) = v;
      }
  }
  return x.graph->Push(std::move(n));
}

Var Softmax(Var a) {
  Graph::Node n;
  n.op = Op::kSoftmax;
  n.inputs = {a.id};
  n.value = a.value();
  for (size_t t = 0; t < n.value.rows(); ++t) {
    auto r = n.value.row(t);
    const double mx = *std::max_element(r.begin(), r.end());
    double total = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      total += v;
    }
    for (double& v : r) v /= total;
  }
  return a.graph->Push(std::move(n));
}

Var LogSoftmax(Var a) {
  Graph::Node n;
  n.op = Op::kLogSoftmax;
  n.inputs = {a.id};
  n.value = a.value();
  for (size_t t = 0; t < n.value.rows(); ++t) {
    auto r = n.value.row(t);
    const double mx = *std::max_element(r.begin(), r.end());
    double total = 0.0;
    for (double v : r) total += std::exp(v - mx);
    const double lse = mx + std::log(total);
    for (double& v : r) v -= lse;
  }
  return a.graph->Push(std::move(n));
}

Var MeanRows(Var x, const std::vector<bool>& keep) {
  const Tensor& xv = x.value();
  if (!keep.empty() && keep.size() != xv.rows())
    throw ContractError("mean_rows: mask length " + std::to_string(keep.size()) +
                        " != rows " + std::to_string(xv.rows()));
  size_t count = 0;
  for (size_t t = 0; t < xv.rows(); ++t) count += keep.empty() || keep[t];
  if (count == 0) throw ContractError("mean_rows: no rows selected");
  Graph::Node n;
  n.op = Op::kMeanRows;
  n.inputs = {x.id};
  n.scalar = 1.0 / static_cast<double>(count);
  if (!keep.empty()) n.index.assign(keep.begin(), keep.end());
  n.value = Tensor(1, xv.cols());
  for (size_t t = 0; t < xv.rows(); ++t) {
    if (!keep.empty() && !keep[t]) continue;
    for (size_t j = 0; j < xv.cols(); ++j) n.value[j] += xv(t, j);
  }
  for (size_t j = 0; j < xv.cols(); ++j) n.value[j] *= n.scalar;
  return x.graph->Push(std::move(n));
}

Var Square(Var a) {
  Graph::Node n;
  n.op = Op::kSquare;
  n.inputs = {a.id};
  n.value = a.value();
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] *= n.value[i];
  return a.graph->Push(std::move(n));
}

Var Sum(Var a) {
  Graph::Node n;
  n.op = Op::kSum;
  n.inputs = {a.id};
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  n.value = Tensor::Scalar(total);
  return a.graph->Push(std::move(n));
}

Var Mean(Var a) { return Scale(Sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var Gather(Var table, const std::vector<size_t>& rows) {
  const Tensor& tv = table.value();
  if (rows.empty()) throw ContractError("gather: empty index list");
  Graph::Node n;
  n.op = Op::kGather;
  n.inputs = {table.id};
  n.index = rows;
  n.value = Tensor(rows.size(), tv.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= tv.rows())
      throw ContractError("gather: index " + std::to_string(rows[i]) + " out of range for " +
                          tv.shape_str());
    auto src = tv.row(rows[i]);
    std::copy(src.begin(), src.end(), n.value.row(i).begin());
  }
  return table.graph->Push(std::move(n));
}

Var L2Normalize(Var a) {
  Graph::Node n;
  n.op = Op::kL2Normalize;
  n.inputs = {a.id};
  n.value = a.value();
  n.saved = Tensor(n.value.rows(), 1);
  for (size_t t = 0; t < n.value.rows(); ++t) {
    auto r = n.value.row(t);
    double ss = 0.0;
    for (double v : r) ss += v * v;
    const double norm = std::sqrt(ss);
    const double inv = norm > 1e-12 ? 1.0 / norm : 0.0;
    n.saved[t] = inv;
    for (double& v : r) v *= inv;
  }
  return a.graph->Push(std::move(n));
}

Var SliceCols(Var a, size_t begin, size_t end) {
  const Tensor& av = a.value();
  if (begin >= end || end > av.cols())
    throw ContractError("slice_cols: range [" + std::to_string(begin) + "," +
                        std::to_string(end) + ") invalid for " + av.shape_str());
  Graph::Node n;
  n.op = Op::kSliceCols;
  n.inputs = {a.id};
  n.stride = begin;
  n.value = Tensor(av.rows(), end - begin);
  for (size_t t = 0; t < av.rows(); ++t)
    std::copy(av.row(t).begin() + begin, av.row(t).begin() + end, n.value.row(t).begin());
  return a.graph->Push(std::move(n));
}

Var ConcatCols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const size_t rows = parts[0].rows();
  size_t cols = 0;
  for (const Var& p : parts) {
    CheckSameGraph(parts[0], p, "concat_cols");
    if (p.rows() != rows) ShapeFail("concat_cols", parts[0].value(), p.value());
    cols += p.cols();
  }
  Graph::Node n;
  n.op = Op::kConcatCols;
  n.value = Tensor(rows, cols);
  size_t offset = 0;
  for (const Var& p : parts) {
    n.inputs.push_back(p.id);
    for (size_t t = 0; t < rows; ++t)
      std::copy(p.value().row(t).begin(), p.value().row(t).end(),
                n.value.row(t).begin() + offset);
    offset += p.cols();
  }
  return parts[0].graph->Push(std::move(n));
}

Var ReplaceRows(Var x, Var row, const std::vector<bool>& where) {
  CheckSameGraph(x, row, "replace_rows");
  const Tensor& xv = x.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols()) ShapeFail("replace_rows", xv, rv);
  if (where.size() != xv.rows())
    throw ContractError("replace_rows: mask length " + std::to_string(where.size()) +
                        " != rows " + std::to_string(xv.rows()));
  Graph::Node n;
  n.op = Op::kReplaceRows;
  n.inputs = {x.id, row.id};
  n.index.assign(where.begin(), where.end());
  n.value = xv;
  for (size_t t = 0; t < xv.rows(); ++t)
    if (where[t]) std::copy(rv.data(), rv.data() + rv.cols(), n.value.row(t).begin());
  return x.graph->Push(std::move(n));
}

Var Pick(Var a, const std::vector<size_t>& rows, const std::vector<size_t>& cols) {
  const Tensor& av = a.value();
  if (rows.size() != cols.size() || rows.empty())
    throw ContractError("pick: row/col index lists must be non-empty and equal length");
  Graph::Node n;
  n.op = Op::kPick;
  n.inputs = {a.id};
  n.index = rows;
  n.index2 = cols;
  n.value = Tensor(rows.size(), 1);
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows() || cols[i] >= av.cols())
      throw ContractError("pick: index (" + std::to_string(rows[i]) + "," +
                          std::to_string(cols[i]) + ") out of range for " + av.shape_str());
    n.value[i] = av(rows[i], cols[i]);
  }
  return a.graph->Push(std::move(n));
}

}  // namespace delulu
