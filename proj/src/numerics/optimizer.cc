// src/numerics/optimizer.cc

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

#include "delulu/numerics/optimizer.h"

#include <cmath>

#include "delulu/base/error.h"
#include "delulu/base/log.h"

namespace delulu {

OptimizerState OptimizerState::For(const ParameterSet& params, AdamWConfig config) {
  OptimizerState s;
  s.config = config;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.value.rows(), p.value.cols());
    s.second_moment.emplace_back(p.value.rows(), p.value.cols());
  }
  return s;
}

void AdamWStep(ParameterSet& params, OptimizerState& state, double lr) {
  if (lr < 0.0) throw ContractError("adamw: negative learning rate");
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
    throw ContractError("adamw: optimizer state holds " +
                        std::to_string(state.first_moment.size()) + " slots for " +
                        std::to_string(params.size()) + " parameters");
  const AdamWConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    if (!m.same_shape(p.value) || !v.same_shape(p.value) || !p.grad.same_shape(p.value))
      throw ContractError("adamw: shape mismatch for parameter '" + p.name + "': " +
                          p.value.shape_str() + " vs moment " + m.shape_str());
    for (size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p.value[j] -= lr * (m_hat / (std::sqrt(v_hat) + c.epsilon) + c.weight_decay * p.value[j]);
    }
  }
}

double GlobalGradNorm(const ParameterSet& params) {
  double ss = 0.0;
  for (const auto& p : params)
    for (double g : p.grad.values()) ss += g * g;
  return std::sqrt(ss);
}

double ClipGlobalNorm(ParameterSet& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("clip_global_norm: max_norm must be positive");
  const double norm = GlobalGradNorm(params);
  // Relative slack of 1e-12 above max_norm.
  if (norm > max_norm * (1.0 + 1e-12)) {
    const double scale = max_norm / norm;
    for (auto& p : params)
      for (size_t j = 0; j < p.grad.size(); ++j) p.grad[j] *= scale;
  }
  return norm;
}

void LrSchedule::Validate() const {
  if (!(peak_lr >= 0.0)) throw ContractError("lr schedule: peak_lr must be non-negative");
  if (warmup_steps == 0 || warmup_steps >= total_steps)
    throw ContractError("lr schedule: need 0 < warmup_steps (" + std::to_string(warmup_steps) +
                        ") < total_steps (" + std::to_string(total_steps) + ")");
  if (!(decay_power > 0.0)) throw ContractError("lr schedule: decay_power must be positive");
}

double LrSchedule::At(uint64_t step) const {
  if (step > total_steps) {
    log().warn("lr schedule queried at step {} past total {}; returning 0", step, total_steps);
    return 0.0;
  }
  if (step <= warmup_steps)
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double frac = static_cast<double>(step - warmup_steps) /
                      static_cast<double>(total_steps - warmup_steps);
  return peak_lr * std::pow(1.0 - frac, decay_power);
}

Tensor FiniteDiffGrad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  Tensor grad(x.rows(), x.cols());
  Tensor probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace delulu
