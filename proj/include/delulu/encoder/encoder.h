// include/delulu/encoder/encoder.h

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
#include <vector>

#include <nlohmann/json.hpp>

#include "delulu/audio/waveform.h"
#include "delulu/numerics/graph.h"
#include "delulu/numerics/tensor.h"

namespace delulu {

struct EncoderConfig {
  size_t conv_channels = 64;
  std::vector<size_t> conv_strides = {4, 2, 2, 2, 2, 2, 2};
  std::vector<size_t> conv_kernels = {10, 3, 3, 3, 3, 2, 2};
  size_t n_transformer_layers = 2;
  size_t model_dim = 96;
  size_t n_heads = 4;
  size_t ffn_dim = 192;
  size_t proj_dim = 32;
  size_t n_codes = 256;
  double logit_temperature = 0.1;
  int sample_rate_hz = 16000;
  bool positional_encoding = true;
  uint64_t init_seed = 1;

  void Validate() const;
  size_t StrideProduct() const;
  // Smallest input that yields one output frame.
  size_t ReceptiveField() const;
  double FramePeriodMs() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

// Frames after chaining L_out = floor((L_in - kernel) / stride) + 1 through
// the conv stack. Throws ContractError naming the minimum input length when
// n_samples is shorter than the receptive field.
size_t OutputLength(size_t n_samples, const EncoderConfig& cfg);

// Time-major frame matrix (n_frames x dim).
struct FrameSequence {
  Tensor values;
  double frame_period_ms = 0.0;

  size_t n_frames() const { return values.rows(); }
  size_t dim() const { return values.cols(); }
};

// Fixed sinusoidal position table (rows x dim).
Tensor SinusoidalPositions(size_t rows, size_t dim);

// The student: conv feature extractor (conv -> layer-norm -> GELU per layer),
// feature projection, pre-LN transformer stack, projection head and code
// embeddings scored by temperature-scaled cosine similarity.
class Encoder {
 public:
  explicit Encoder(EncoderConfig cfg);
  Encoder(EncoderConfig cfg, ParameterSet params);

  const EncoderConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Parameters bound into one graph, in ParameterSet order.
  struct Bound {
    std::vector<Var> vars;
    Var operator[](size_t i) const { return vars[i]; }
  };
  // Trainable binding: Backward() accumulates into params().
  Bound Bind(Graph& g);
  // Frozen binding: parameters enter as constants.
  Bound BindFrozen(Graph& g) const;

  // Waveform -> T x conv_channels.
  Var ConvStack(const Bound& p, Graph& g, const Waveform& w) const;
  // Conv features -> T x model_dim, after the feature projection. Rows with
  // mask[t] set are replaced by the learned mask embedding (mask may be empty).
  Var Features(const Bound& p, Var conv, const std::vector<bool>& mask) const;
  // Transformer stack with final layer-norm. Keys at padded positions
  // (pad[t] set) are excluded from attention; pad may be empty. A layer in
  // [0, n_transformer_layers) stops after that many blocks and skips the final
  // layer-norm; -1 runs the whole stack.
  Var Transformer(const Bound& p, Var features, const std::vector<bool>& pad,
                  int layer = -1) const;
  // T x n_codes logits: cosine(project(h_t), code_c) / temperature.
  Var CodeLogits(const Bound& p, Var hidden) const;

  // Value-level conveniences on a frozen binding.
  FrameSequence ConvStackForward(const Waveform& w) const;
  FrameSequence TransformerForward(const FrameSequence& conv, const std::vector<bool>& pad) const;
  // Final-layer frames for a waveform (or an earlier layer, as in Transformer).
  FrameSequence HiddenStates(const Waveform& w, int layer = -1) const;

 private:
  size_t Index(const char* fmt, size_t layer) const;
  void Init();
  void BuildIndex();

  EncoderConfig cfg_;
  ParameterSet params_;
  struct LayerIdx {
    size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct ConvIdx {
    size_t w, b, ln_g, ln_b;
  };
  std::vector<ConvIdx> conv_idx_;
  std::vector<LayerIdx> layer_idx_;
  size_t feat_ln_g_ = 0, feat_ln_b_ = 0, feat_w_ = 0, feat_b_ = 0, mask_emb_ = 0;
  size_t final_ln_g_ = 0, final_ln_b_ = 0, proj_w_ = 0, proj_b_ = 0, codes_ = 0;
};

}  // namespace delulu
