// include/delulu/numerics/optimizer.h

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

#include <cstdint>
#include <functional>
#include <vector>

#include "delulu/numerics/graph.h"
#include "delulu/numerics/tensor.h"

namespace delulu {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double weight_decay = 0.01;
  double epsilon = 1e-8;
};

// Moment accumulators mirror the parameter shapes one-to-one.
struct OptimizerState {
  uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  AdamWConfig config;

  static OptimizerState For(const ParameterSet& params, AdamWConfig config = {});
};

// One AdamW update with bias-corrected moments and decoupled weight decay:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
// Gradients are read from params[i].grad.
void AdamWStep(ParameterSet& params, OptimizerState& state, double lr);

// Rescales all gradients so their joint L2 norm is at most max_norm. Returns
// the norm before clipping.
double ClipGlobalNorm(ParameterSet& params, double max_norm);
double GlobalGradNorm(const ParameterSet& params);

// Linear warmup to peak_lr, then polynomial decay to zero at total_steps.
struct LrSchedule {
  double peak_lr = 5e-4;
  uint64_t warmup_steps = 400;
  uint64_t total_steps = 5000;
  double decay_power = 1.0;

  void Validate() const;
  // Steps past total_steps clamp to zero (with a warning).
  double At(uint64_t step) const;
};

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element.
Tensor FiniteDiffGrad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                      double h = 1e-5);

}  // namespace delulu
