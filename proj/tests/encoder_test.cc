// tests/encoder_test.cc

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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "delulu/audio/synth.h"
#include "delulu/base/error.h"
#include "delulu/base/rng.h"
#include "delulu/encoder/checkpoint.h"
#include "delulu/encoder/encoder.h"
#include "grad_cases.h"
#include "test_util.h"

namespace delulu {
namespace {

using testing::RandomTensor;

EncoderConfig TinyConfig() {
  EncoderConfig c;
  c.conv_channels = 6;
  c.model_dim = 8;
  c.n_heads = 2;
  c.ffn_dim = 12;
  c.proj_dim = 5;
  c.n_codes = 7;
  c.n_transformer_layers = 2;
  c.init_seed = 3;
  return c;
}

Waveform Noise(size_t n, uint64_t seed) {
  Rng rng(seed);
  Waveform w;
  w.samples.resize(n);
  for (double& s : w.samples) s = 0.1 * Gaussian(rng);
  return w;
}

TEST(OutputLength, Examples) {
  EncoderConfig c;
  EXPECT_EQ(OutputLength(16384, c), 63u);
  EXPECT_EQ(OutputLength(16000, c), 62u);
  EXPECT_EQ(c.ReceptiveField(), 322u);
  EXPECT_EQ(OutputLength(c.ReceptiveField(), c), 1u);
  EXPECT_EQ(c.StrideProduct(), 256u);
  EXPECT_DOUBLE_EQ(c.FramePeriodMs(), 16.0);
}

TEST(OutputLength, TooShortNamesMinimum) {
  EncoderConfig c;
  try {
    OutputLength(321, c);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("minimum 322"), std::string::npos) << e.what();
  }
}

TEST(OutputLength, StrideAblationGeometry) {
  EncoderConfig c;
  c.conv_strides[0] = 5;
  EXPECT_EQ(c.StrideProduct(), 320u);
  EXPECT_DOUBLE_EQ(c.FramePeriodMs(), 20.0);
  EXPECT_EQ(OutputLength(16000, c), 49u);
}

TEST(Config, ValidateAndJson) {
  EncoderConfig c;
  c.n_heads = 5;
  EXPECT_THROW(c.Validate(), ContractError);
  c = TinyConfig();
  c.conv_kernels.pop_back();
  EXPECT_THROW(c.Validate(), ContractError);
  c = TinyConfig();
  nlohmann::json j = c;
  EncoderConfig back = j.get<EncoderConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(ConvStack, FrameCountMatchesLengthOracle) {
  Encoder enc(TinyConfig());
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const size_t n = 322 + UniformIndex(rng, 3000);
    FrameSequence f = enc.ConvStackForward(Noise(n, i));
    EXPECT_EQ(f.n_frames(), OutputLength(n, enc.config())) << n;
    EXPECT_EQ(f.dim(), enc.config().conv_channels);
    EXPECT_DOUBLE_EQ(f.frame_period_ms, 16.0);
  }
}

TEST(ConvStack, ZeroWaveformIsTimeInvariant) {
  Encoder enc(TinyConfig());
  for (auto& p : enc.params())
    if (p.name.find(".bias") != std::string::npos)
      for (size_t i = 0; i < p.value.size(); ++i) p.value[i] = 0.1 * static_cast<double>(i + 1);
  Waveform w;
  w.samples.assign(4000, 0.0);
  FrameSequence f = enc.ConvStackForward(w);
  ASSERT_GT(f.n_frames(), 2u);
  for (size_t t = 1; t < f.n_frames(); ++t)
    for (size_t c = 0; c < f.dim(); ++c) EXPECT_EQ(f.values(t, c), f.values(0, c));
}

TEST(ConvStack, ShiftBy256ShiftsFramesByOne) {
  Encoder enc(TinyConfig());
  Waveform a = Noise(6000, 11);
  Waveform b;
  b.samples.assign(a.samples.begin() + 256, a.samples.end());
  FrameSequence fa = enc.ConvStackForward(a);
  FrameSequence fb = enc.ConvStackForward(b);
  ASSERT_EQ(fb.n_frames() + 1, fa.n_frames());
  for (size_t t = 0; t < fb.n_frames(); ++t)
    for (size_t c = 0; c < fa.dim(); ++c)
      EXPECT_NEAR(fb.values(t, c), fa.values(t + 1, c), 1e-12);
}

TEST(ConvStack, ErrorsPropagate) {
  Encoder enc(TinyConfig());
  EXPECT_THROW(enc.ConvStackForward(Noise(100, 1)), ContractError);
  Waveform w = Noise(1000, 1);
  w.sample_rate_hz = 8000;
  EXPECT_THROW(enc.ConvStackForward(w), ContractError);
}

TEST(Transformer, PaddingLeavesUnpaddedOutputsBitIdentical) {
  Encoder enc(TinyConfig());
  FrameSequence f{RandomTensor(5, 6, 1), 16.0};
  FrameSequence out = enc.TransformerForward(f, {});
  FrameSequence padded{Tensor(8, 6), 16.0};
  Tensor junk = RandomTensor(8, 6, 2, 50.0);
  for (size_t t = 0; t < 8; ++t)
    for (size_t c = 0; c < 6; ++c) padded.values(t, c) = t < 5 ? f.values(t, c) : junk(t, c);
  std::vector<bool> pad = {false, false, false, false, false, true, true, true};
  FrameSequence out2 = enc.TransformerForward(padded, pad);
  ASSERT_EQ(out2.n_frames(), 8u);
  for (size_t t = 0; t < 5; ++t)
    for (size_t c = 0; c < out.dim(); ++c) EXPECT_EQ(out2.values(t, c), out.values(t, c));
}

TEST(Transformer, MaskLengthMismatch) {
  Encoder enc(TinyConfig());
  FrameSequence f{RandomTensor(5, 6, 1), 16.0};
  EXPECT_THROW(enc.TransformerForward(f, std::vector<bool>(4, false)), ContractError);
}

TEST(Transformer, PermutationEquivariantWithoutPositions) {
  EncoderConfig c = TinyConfig();
  c.positional_encoding = false;
  Encoder enc(c);
  FrameSequence f{RandomTensor(6, 6, 4), 16.0};
  FrameSequence g = f;
  for (size_t j = 0; j < 6; ++j) std::swap(g.values(1, j), g.values(4, j));
  Tensor a = enc.TransformerForward(f, {}).values;
  Tensor b = enc.TransformerForward(g, {}).values;
  for (size_t t = 0; t < 6; ++t) {
    const size_t src = t == 1 ? 4 : t == 4 ? 1 : t;
    for (size_t j = 0; j < a.cols(); ++j) EXPECT_NEAR(b(t, j), a(src, j), 1e-12);
  }
}

TEST(Transformer, SingleFrameIsPerFramePath) {
  EncoderConfig c = TinyConfig();
  c.n_transformer_layers = 1;
  Encoder enc(c);
  FrameSequence f{RandomTensor(1, 6, 8), 16.0};
  Tensor got = enc.TransformerForward(f, {}).values;

  Graph g;
  const ParameterSet& p = enc.params();
  auto P = [&](const char* n) { return g.Constant(p.Get(n).value); };
  Var x = LayerNorm(g.Constant(f.values), P("feature.ln_gamma"), P("feature.ln_beta"));
  x = Add(MatMul(x, P("feature.proj.weight")), P("feature.proj.bias"));
  x = Add(x, g.Constant(SinusoidalPositions(1, 8)));
  Var h = LayerNorm(x, P("layer0.ln1_gamma"), P("layer0.ln1_beta"));
  Var v = Add(MatMul(h, P("layer0.attn.wv")), P("layer0.attn.bv"));
  x = Add(x, Add(MatMul(v, P("layer0.attn.wo")), P("layer0.attn.bo")));
  Var m = LayerNorm(x, P("layer0.ln2_gamma"), P("layer0.ln2_beta"));
  m = Add(MatMul(Gelu(Add(MatMul(m, P("layer0.ffn.w1")), P("layer0.ffn.b1"))),
                 P("layer0.ffn.w2")),
          P("layer0.ffn.b2"));
  x = LayerNorm(Add(x, m), P("final.ln_gamma"), P("final.ln_beta"));
  for (size_t j = 0; j < 8; ++j) EXPECT_NEAR(got(0, j), x.value()(0, j), 1e-12);
}

// Sets the projection head to identity-like so project(h) == h[:proj_dim].
Encoder IdentityHeadEncoder(double temperature) {
  EncoderConfig c = TinyConfig();
  c.logit_temperature = temperature;
  Encoder enc(c);
  Tensor& w = enc.params()[enc.params().size() - 3].value;
  w.fill(0.0);
  for (size_t i = 0; i < c.proj_dim; ++i) w(i, i) = 1.0;
  return enc;
}

TEST(CodeLogits, FrameEqualToCodeHasMaxLogit) {
  Encoder enc = IdentityHeadEncoder(0.1);
  const Tensor& codes = enc.params().Get("codes").value;
  Tensor h(1, 8);
  for (size_t j = 0; j < 5; ++j) h(0, j) = codes(6, j) * 3.0;
  Graph g;
  auto p = enc.BindFrozen(g);
  Tensor logits = enc.CodeLogits(p, g.Constant(h)).value();
  ASSERT_EQ(logits.cols(), 7u);
  size_t best = 0;
  for (size_t c = 1; c < 7; ++c)
    if (logits(0, c) > logits(0, best)) best = c;
  EXPECT_EQ(best, 6u);
  EXPECT_NEAR(logits(0, 6), 10.0, 1e-12);
}

TEST(CodeLogits, TemperaturePreservesArgmax) {
  Encoder sharp = IdentityHeadEncoder(0.1);
  Encoder flat = IdentityHeadEncoder(1.0);
  Tensor h = RandomTensor(4, 8, 21);
  Graph g1, g2;
  Tensor a = sharp.CodeLogits(sharp.BindFrozen(g1), g1.Constant(h)).value();
  Tensor b = flat.CodeLogits(flat.BindFrozen(g2), g2.Constant(h)).value();
  for (size_t t = 0; t < 4; ++t) {
    size_t ia = 0, ib = 0;
    for (size_t c = 1; c < 7; ++c) {
      if (a(t, c) > a(t, ia)) ia = c;
      if (b(t, c) > b(t, ib)) ib = c;
      EXPECT_NEAR(a(t, c), 10.0 * b(t, c), 1e-12);
    }
    EXPECT_EQ(ia, ib);
  }
}

TEST(CodeLogits, OrthogonalCodesGiveUniformLogitsAndLnK) {
  Encoder enc = IdentityHeadEncoder(0.1);
  Tensor& codes = enc.params()[enc.params().size() - 1].value;
  codes.fill(0.0);
  for (size_t c = 0; c < 7; ++c) codes(c, 1 + c % 4) = 1.0;
  Tensor h(1, 8);
  h(0, 0) = 2.0;
  Graph g;
  auto p = enc.BindFrozen(g);
  Var logits = enc.CodeLogits(p, g.Constant(h));
  for (size_t c = 0; c < 7; ++c) EXPECT_EQ(logits.value()(0, c), 0.0);
  Var ce = Scale(Pick(LogSoftmax(logits), {0}, {3}), -1.0);
  EXPECT_NEAR(ce.value().item(), std::log(7.0), 1e-12);
}

TEST(CodeLogits, ZeroNormFrameGivesZeroCosine) {
  Encoder enc = IdentityHeadEncoder(0.1);
  Graph g;
  auto p = enc.BindFrozen(g);
  Tensor logits = enc.CodeLogits(p, g.Constant(Tensor(2, 8))).value();
  for (size_t i = 0; i < logits.size(); ++i) EXPECT_EQ(logits[i], 0.0);
}

TEST(Gradient, EndToEndMatchesFiniteDifferences) {
  const double worst = testing::EncoderEndToEndWorstError();
  EXPECT_LT(worst, 1e-4);
  RecordProperty("worst_rel_error", std::to_string(worst));
}

TEST(Checkpoint, RoundTripIsExact) {
  Encoder enc(TinyConfig());
  for (auto& p : enc.params()) p.value[0] += 0.123456789;
  CheckpointExtras extras;
  extras.meta = {{"step", 42}};
  extras.tensors.push_back(RandomTensor(2, 3, 9));
  const auto path = std::filesystem::temp_directory_path() / "delulu_ckpt_test.bin";
  SaveCheckpoint(path, enc, &extras);
  LoadedCheckpoint back = LoadCheckpoint(path);
  EXPECT_EQ(nlohmann::json(back.encoder.config()), nlohmann::json(enc.config()));
  EXPECT_TRUE(back.encoder.params() == enc.params());
  ASSERT_TRUE(back.extras.has_value());
  EXPECT_EQ(back.extras->meta["step"], 42);
  EXPECT_TRUE(back.extras->tensors.at(0) == extras.tensors[0]);
  SaveCheckpoint(path, enc);
  EXPECT_FALSE(LoadCheckpoint(path).extras.has_value());
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  Encoder enc(TinyConfig());
  const auto path = std::filesystem::temp_directory_path() / "delulu_ckpt_bad.bin";
  SaveCheckpoint(path, enc);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 5);
  EXPECT_THROW(LoadCheckpoint(path), DataError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE1234";
  }
  EXPECT_THROW(LoadCheckpoint(path), DataError);
  std::filesystem::remove(path);
  EXPECT_THROW(LoadCheckpoint(path), DataError);
}

TEST(Checkpoint, ShapeMismatchAgainstConfig) {
  ParameterSet params = Encoder(TinyConfig()).params();
  EncoderConfig other = TinyConfig();
  other.conv_channels = 7;
  EXPECT_THROW(Encoder(other, params), DataError);
}

TEST(Encoder, InitIsDeterministic) {
  EXPECT_TRUE(Encoder(TinyConfig()).params() == Encoder(TinyConfig()).params());
  EncoderConfig c = TinyConfig();
  c.init_seed = 4;
  EXPECT_FALSE(Encoder(c).params() == Encoder(TinyConfig()).params());
}

}  // namespace
}  // namespace delulu
