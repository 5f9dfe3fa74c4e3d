// src/encoder/encoder.cc

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

#include "delulu/encoder/encoder.h"

#include <cmath>
#include <numeric>

#include "delulu/base/error.h"
#include "delulu/base/log.h"
#include "delulu/base/rng.h"

namespace delulu {

namespace {

constexpr double kMaskedKey = -1e9;

Tensor XavierUniform(size_t fan_in, size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(fan_in, fan_out);
  for (size_t i = 0; i < t.size(); ++i) t[i] = Uniform(rng, -a, a);
  return t;
}

Tensor KaimingNormal(size_t fan_in, size_t fan_out, Rng& rng) {
  const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor t(fan_in, fan_out);
  for (size_t i = 0; i < t.size(); ++i) t[i] = s * Gaussian(rng);
  return t;
}

}  // namespace

void EncoderConfig::Validate() const {
  if (conv_strides.empty() || conv_strides.size() != conv_kernels.size())
    throw ContractError("encoder config: conv_strides and conv_kernels must be non-empty and of "
                        "equal length");
  for (size_t i = 0; i < conv_strides.size(); ++i)
    if (conv_strides[i] == 0 || conv_kernels[i] == 0)
      throw ContractError("encoder config: strides and kernels must be positive");
  if (conv_channels == 0 || model_dim == 0 || ffn_dim == 0 || proj_dim == 0)
    throw ContractError("encoder config: dimensions must be positive");
  if (n_heads == 0 || model_dim % n_heads != 0)
    throw ContractError("encoder config: model_dim " + std::to_string(model_dim) +
                        " not divisible by n_heads " + std::to_string(n_heads));
  if (n_codes < 2) throw ContractError("encoder config: n_codes must be at least 2");
  if (!(logit_temperature > 0.0)) throw ContractError("encoder config: temperature must be > 0");
  if (sample_rate_hz <= 0) throw ContractError("encoder config: sample rate must be positive");
}

size_t EncoderConfig::StrideProduct() const {
  return std::accumulate(conv_strides.begin(), conv_strides.end(), size_t{1},
                         std::multiplies<size_t>());
}

size_t EncoderConfig::ReceptiveField() const {
  size_t rf = 1;
  for (size_t i = conv_kernels.size(); i-- > 0;) rf = (rf - 1) * conv_strides[i] + conv_kernels[i];
  return rf;
}

double EncoderConfig::FramePeriodMs() const {
  return 1000.0 * static_cast<double>(StrideProduct()) / static_cast<double>(sample_rate_hz);
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"conv_channels", c.conv_channels},
       {"conv_strides", c.conv_strides},
       {"conv_kernels", c.conv_kernels},
       {"n_transformer_layers", c.n_transformer_layers},
       {"model_dim", c.model_dim},
       {"n_heads", c.n_heads},
       {"ffn_dim", c.ffn_dim},
       {"proj_dim", c.proj_dim},
       {"n_codes", c.n_codes},
       {"logit_temperature", c.logit_temperature},
       {"sample_rate_hz", c.sample_rate_hz},
       {"positional_encoding", c.positional_encoding},
       {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  EncoderConfig d;
  c.conv_channels = j.value("conv_channels", d.conv_channels);
  c.conv_strides = j.value("conv_strides", d.conv_strides);
  c.conv_kernels = j.value("conv_kernels", d.conv_kernels);
  c.n_transformer_layers = j.value("n_transformer_layers", d.n_transformer_layers);
  c.model_dim = j.value("model_dim", d.model_dim);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  c.proj_dim = j.value("proj_dim", d.proj_dim);
  c.n_codes = j.value("n_codes", d.n_codes);
  c.logit_temperature = j.value("logit_temperature", d.logit_temperature);
  c.sample_rate_hz = j.value("sample_rate_hz", d.sample_rate_hz);
  c.positional_encoding = j.value("positional_encoding", d.positional_encoding);
  c.init_seed = j.value("init_seed", d.init_seed);
}

size_t OutputLength(size_t n_samples, const EncoderConfig& cfg) {
  size_t len = n_samples;
  for (size_t i = 0; i < cfg.conv_strides.size(); ++i) {
    len = ConvOutputLength(len, cfg.conv_kernels[i], cfg.conv_strides[i]);
    if (len == 0)
      throw ContractError("input of " + std::to_string(n_samples) +
                          " samples is shorter than the encoder receptive field (minimum " +
                          std::to_string(cfg.ReceptiveField()) + " samples)");
  }
  return len;
}

Tensor SinusoidalPositions(size_t rows, size_t dim) {
  Tensor pe(rows, dim);
  for (size_t t = 0; t < rows; ++t)
    for (size_t i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      pe(t, i) = std::sin(static_cast<double>(t) * freq);
      if (i + 1 < dim) pe(t, i + 1) = std::cos(static_cast<double>(t) * freq);
    }
  return pe;
}

Encoder::Encoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.Validate();
  Init();
  BuildIndex();
}

Encoder::Encoder(EncoderConfig cfg, ParameterSet params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.Validate();
  // Validate names and shapes against a freshly initialized layout.
  Encoder reference(cfg_);
  if (reference.params_.size() != params_.size())
    throw DataError("checkpoint holds " + std::to_string(params_.size()) +
                    " parameters, config implies " + std::to_string(reference.params_.size()));
  for (size_t i = 0; i < params_.size(); ++i) {
    const Parameter& want = reference.params_[i];
    const Parameter& got = params_[i];
    if (want.name != got.name || !want.value.same_shape(got.value))
      throw DataError("checkpoint parameter '" + got.name + "' " + got.value.shape_str() +
                      " does not match expected '" + want.name + "' " + want.value.shape_str());
  }
  BuildIndex();
}

void Encoder::Init() {
  Rng rng(DeriveSeed(cfg_.init_seed, 101));
  const size_t c = cfg_.conv_channels, d = cfg_.model_dim;
  size_t cin = 1;
  char name[64];
  for (size_t i = 0; i < cfg_.conv_strides.size(); ++i) {
    const size_t window = cfg_.conv_kernels[i] * cin;
    std::snprintf(name, sizeof(name), "conv%zu.weight", i);
    params_.Add(name, KaimingNormal(window, c, rng));
    std::snprintf(name, sizeof(name), "conv%zu.bias", i);
    params_.Add(name, Tensor(1, c));
    std::snprintf(name, sizeof(name), "conv%zu.ln_gamma", i);
    params_.Add(name, Tensor(1, c, 1.0));
    std::snprintf(name, sizeof(name), "conv%zu.ln_beta", i);
    params_.Add(name, Tensor(1, c));
    cin = c;
  }
  params_.Add("feature.ln_gamma", Tensor(1, c, 1.0));
  params_.Add("feature.ln_beta", Tensor(1, c));
  params_.Add("feature.proj.weight", XavierUniform(c, d, rng));
  params_.Add("feature.proj.bias", Tensor(1, d));
  {
    Tensor m(1, d);
    for (size_t i = 0; i < d; ++i) m[i] = Uniform01(rng);
    params_.Add("mask_embedding", std::move(m));
  }
  for (size_t l = 0; l < cfg_.n_transformer_layers; ++l) {
    auto add = [&](const char* suffix, Tensor t) {
      std::snprintf(name, sizeof(name), "layer%zu.%s", l, suffix);
      params_.Add(name, std::move(t));
    };
    add("ln1_gamma", Tensor(1, d, 1.0));
    add("ln1_beta", Tensor(1, d));
    add("attn.wq", XavierUniform(d, d, rng));
    add("attn.bq", Tensor(1, d));
    add("attn.wk", XavierUniform(d, d, rng));
    add("attn.bk", Tensor(1, d));
    add("attn.wv", XavierUniform(d, d, rng));
    add("attn.bv", Tensor(1, d));
    add("attn.wo", XavierUniform(d, d, rng));
    add("attn.bo", Tensor(1, d));
    add("ln2_gamma", Tensor(1, d, 1.0));
    add("ln2_beta", Tensor(1, d));
    add("ffn.w1", XavierUniform(d, cfg_.ffn_dim, rng));
    add("ffn.b1", Tensor(1, cfg_.ffn_dim));
    add("ffn.w2", XavierUniform(cfg_.ffn_dim, d, rng));
    add("ffn.b2", Tensor(1, d));
  }
  params_.Add("final.ln_gamma", Tensor(1, d, 1.0));
  params_.Add("final.ln_beta", Tensor(1, d));
  params_.Add("proj.weight", XavierUniform(d, cfg_.proj_dim, rng));
  params_.Add("proj.bias", Tensor(1, cfg_.proj_dim));
  {
    Tensor codes(cfg_.n_codes, cfg_.proj_dim);
    for (size_t i = 0; i < codes.size(); ++i) codes[i] = Gaussian(rng);
    params_.Add("codes", std::move(codes));
  }
}

size_t Encoder::Index(const char* fmt, size_t layer) const {
  char name[64];
  std::snprintf(name, sizeof(name), fmt, layer);
  for (size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw ContractError(std::string("encoder: missing parameter ") + name);
}

void Encoder::BuildIndex() {
  conv_idx_.clear();
  layer_idx_.clear();
  for (size_t i = 0; i < cfg_.conv_strides.size(); ++i)
    conv_idx_.push_back({Index("conv%zu.weight", i), Index("conv%zu.bias", i),
                         Index("conv%zu.ln_gamma", i), Index("conv%zu.ln_beta", i)});
  feat_ln_g_ = Index("feature.ln_gamma", 0);
  feat_ln_b_ = Index("feature.ln_beta", 0);
  feat_w_ = Index("feature.proj.weight", 0);
  feat_b_ = Index("feature.proj.bias", 0);
  mask_emb_ = Index("mask_embedding", 0);
  for (size_t l = 0; l < cfg_.n_transformer_layers; ++l) {
    layer_idx_.push_back({Index("layer%zu.ln1_gamma", l), Index("layer%zu.ln1_beta", l),
                          Index("layer%zu.attn.wq", l), Index("layer%zu.attn.bq", l),
                          Index("layer%zu.attn.wk", l), Index("layer%zu.attn.bk", l),
                          Index("layer%zu.attn.wv", l), Index("layer%zu.attn.bv", l),
                          Index("layer%zu.attn.wo", l), Index("layer%zu.attn.bo", l),
                          Index("layer%zu.ln2_gamma", l), Index("layer%zu.ln2_beta", l),
                          Index("layer%zu.ffn.w1", l), Index("layer%zu.ffn.b1", l),
                          Index("layer%zu.ffn.w2", l), Index("layer%zu.ffn.b2", l)});
  }
  final_ln_g_ = Index("final.ln_gamma", 0);
  final_ln_b_ = Index("final.ln_beta", 0);
  proj_w_ = Index("proj.weight", 0);
  proj_b_ = Index("proj.bias", 0);
  codes_ = Index("codes", 0);
}

Encoder::Bound Encoder::Bind(Graph& g) {
  Bound b;
  for (auto& p : params_) b.vars.push_back(g.Param(p));
  return b;
}

Encoder::Bound Encoder::BindFrozen(Graph& g) const {
  Bound b;
  for (const auto& p : params_) b.vars.push_back(g.Constant(p.value));
  return b;
}

Var Encoder::ConvStack(const Bound& p, Graph& g, const Waveform& w) const {
  if (w.sample_rate_hz != cfg_.sample_rate_hz)
    throw ContractError("encoder expects " + std::to_string(cfg_.sample_rate_hz) +
                        " Hz audio, got " + std::to_string(w.sample_rate_hz) + " Hz");
  OutputLength(w.samples.size(), cfg_);
  Var x = g.Constant(Tensor(w.samples.size(), 1, w.samples));
  for (size_t i = 0; i < conv_idx_.size(); ++i) {
    const ConvIdx& c = conv_idx_[i];
    x = Conv1d(x, p[c.w], p[c.b], cfg_.conv_strides[i]);
    x = Gelu(LayerNorm(x, p[c.ln_g], p[c.ln_b]));
  }
  return x;
}

Var Encoder::Features(const Bound& p, Var conv, const std::vector<bool>& mask) const {
  Var x = LayerNorm(conv, p[feat_ln_g_], p[feat_ln_b_]);
  x = Add(MatMul(x, p[feat_w_]), p[feat_b_]);
  if (!mask.empty()) x = ReplaceRows(x, p[mask_emb_], mask);
  if (cfg_.positional_encoding)
    x = Add(x, x.graph->Constant(SinusoidalPositions(x.rows(), x.cols())));
  return x;
}

Var Encoder::Transformer(const Bound& p, Var x, const std::vector<bool>& pad, int layer) const {
  const size_t t_len = x.rows();
  if (layer < -1 || layer > static_cast<int>(cfg_.n_transformer_layers))
    throw UsageError("layer " + std::to_string(layer) + " outside [0, " +
                     std::to_string(cfg_.n_transformer_layers) + "]");
  const size_t n_blocks = layer < 0 ? layer_idx_.size() : static_cast<size_t>(layer);
  if (x.cols() != cfg_.model_dim)
    throw ContractError("transformer: input width " + std::to_string(x.cols()) +
                        " != model_dim " + std::to_string(cfg_.model_dim));
  if (!pad.empty() && pad.size() != t_len)
    throw ContractError("transformer: pad mask length " + std::to_string(pad.size()) +
                        " != frames " + std::to_string(t_len));
  Graph& g = *x.graph;
  const size_t heads = cfg_.n_heads;
  const size_t dh = cfg_.model_dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Var key_mask;
  bool any_pad = false;
  for (bool b : pad) any_pad |= b;
  if (any_pad) {
    Tensor m(t_len, t_len);
    for (size_t i = 0; i < t_len; ++i)
      for (size_t j = 0; j < t_len; ++j)
        if (pad[j]) m(i, j) = kMaskedKey;
    key_mask = g.Constant(std::move(m));
  }
  for (size_t l = 0; l < n_blocks; ++l) {
    const LayerIdx& L = layer_idx_[l];
    Var h = LayerNorm(x, p[L.ln1_g], p[L.ln1_b]);
    Var q = Add(MatMul(h, p[L.wq]), p[L.bq]);
    Var k = Add(MatMul(h, p[L.wk]), p[L.bk]);
    Var v = Add(MatMul(h, p[L.wv]), p[L.bv]);
    std::vector<Var> outs;
    for (size_t hd = 0; hd < heads; ++hd) {
      const size_t b = hd * dh, e = b + dh;
      Var scores = Scale(MatMulNT(SliceCols(q, b, e), SliceCols(k, b, e)), inv_sqrt);
      if (any_pad) scores = Add(scores, key_mask);
      outs.push_back(MatMul(Softmax(scores), SliceCols(v, b, e)));
    }
    Var att = heads == 1 ? outs[0] : ConcatCols(outs);
    x = Add(x, Add(MatMul(att, p[L.wo]), p[L.bo]));
    Var f = LayerNorm(x, p[L.ln2_g], p[L.ln2_b]);
    f = Add(MatMul(Gelu(Add(MatMul(f, p[L.w1]), p[L.b1])), p[L.w2]), p[L.b2]);
    x = Add(x, f);
  }
  if (layer >= 0 && static_cast<size_t>(layer) < layer_idx_.size()) return x;
  return LayerNorm(x, p[final_ln_g_], p[final_ln_b_]);
}

Var Encoder::CodeLogits(const Bound& p, Var hidden) const {
  Var proj = Add(MatMul(hidden, p[proj_w_]), p[proj_b_]);
  size_t zero_rows = 0;
  for (size_t t = 0; t < proj.rows(); ++t) {
    double ss = 0.0;
    for (double v : proj.value().row(t)) ss += v * v;
    zero_rows += std::sqrt(ss) <= 1e-12;
  }
  if (zero_rows > 0)
    log().warn("code_logits: {} projected frame(s) have zero norm; cosine taken as 0", zero_rows);
  Var cos = MatMulNT(L2Normalize(proj), L2Normalize(p[codes_]));
  return Scale(cos, 1.0 / cfg_.logit_temperature);
}

FrameSequence Encoder::ConvStackForward(const Waveform& w) const {
  Graph g;
  Bound p = BindFrozen(g);
  return {ConvStack(p, g, w).value(), cfg_.FramePeriodMs()};
}

FrameSequence Encoder::TransformerForward(const FrameSequence& conv,
                                          const std::vector<bool>& pad) const {
  Graph g;
  Bound p = BindFrozen(g);
  Var x = Features(p, g.Constant(conv.values), {});
  return {Transformer(p, x, pad).value(), cfg_.FramePeriodMs()};
}

FrameSequence Encoder::HiddenStates(const Waveform& w, int layer) const {
  Graph g;
  Bound p = BindFrozen(g);
  Var x = Features(p, ConvStack(p, g, w), {});
  return {Transformer(p, x, {}, layer).value(), cfg_.FramePeriodMs()};
}

}  // namespace delulu
