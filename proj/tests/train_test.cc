// tests/train_test.cc

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
#include <numbers>
#include <ranges>

#include "delulu/audio/corpus.h"
#include "delulu/base/error.h"
#include "delulu/encoder/checkpoint.h"
#include "delulu/train/train.h"
#include "grad_cases.h"
#include "test_util.h"

namespace delulu {
namespace {

namespace fs = std::filesystem;

Corpus SmallCorpus(size_t speakers, size_t utts, double duration_s, uint64_t seed) {
  CorpusConfig cc;
  cc.n_speakers = speakers;
  cc.utts_per_speaker = utts;
  cc.duration_s = duration_s;
  cc.seed = seed;
  return GenerateCorpus(cc);
}


EncoderConfig TinyEncoder() {
  EncoderConfig c;
  c.conv_channels = 8;
  c.n_transformer_layers = 1;
  c.model_dim = 16;
  c.n_heads = 2;
  c.ffn_dim = 32;
  c.proj_dim = 8;
  c.n_codes = 16;
  return c;
}

std::string ReadBytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path FreshDir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("delulu_train_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

struct SmallSetup {
  Corpus corpus;
  PseudoLabelSet labels;
  TrainConfig cfg;
};

// Two speakers; every frame labelled with its speaker index.
SmallSetup MakeSmallSetup() {
  SmallSetup s;
  CorpusConfig cc;
  cc.n_speakers = 2;
  cc.utts_per_speaker = 2;
  cc.duration_s = 0.6;
  cc.seed = 5;
  s.corpus = GenerateCorpus(cc);
  s.cfg.encoder = TinyEncoder();
  s.cfg.batch_size = 2;
  s.cfg.crop_s = 0.4;
  s.cfg.schedule.peak_lr = 1e-3;
  s.cfg.schedule.warmup_steps = 2;
  s.cfg.schedule.total_steps = 10;
  s.cfg.checkpoint_every = 5;
  s.cfg.noise.clips_per_kind = 1;
  s.cfg.noise.clip_s = 1.0;
  s.labels.k = 2;
  s.labels.teacher_kind = "oracle";
  for (const auto& u : s.corpus.utterances) {
    const size_t t = OutputLength(u.audio.samples.size(), s.cfg.encoder);
    const uint16_t id = u.record.speaker_id == s.corpus.speakers[0].speaker_id ? 0 : 1;
    s.labels.Add(u.record.utt_id, std::vector<uint16_t>(t, id));
  }
  return s;
}

TEST(Mask, CoverageMatchesInclusionProbability) {
  MaskConfig cfg{0.08, 10};
  Rng rng(3);
  double covered = 0.0;
  constexpr size_t kDraws = 10000, kT = 500;
  for (size_t d = 0; d < kDraws; ++d) {
    const auto m = SampleMask(kT, cfg, rng);
    covered += static_cast<double>(std::count(m.begin(), m.end(), true)) / kT;
  }
  const double expected = 1.0 - std::pow(1.0 - 0.08, 10);
  EXPECT_NEAR(covered / kDraws, expected, 0.02);
}

TEST(Mask, Extremes) {
  Rng rng(1);
  auto none = SampleMask(20, {0.0, 10}, rng);
  EXPECT_EQ(std::count(none.begin(), none.end(), true), 0);
  auto all = SampleMask(20, {1.0, 20}, rng);
  EXPECT_EQ(std::count(all.begin(), all.end(), true), 20);
  auto tail = SampleMask(5, {1.0, 10}, rng);
  EXPECT_EQ(tail.size(), 5u);
}

TEST(Mask, TrainingMaskHasBothKinds) {
  Rng rng(2);
  for (auto cfg : {MaskConfig{0.0, 10}, MaskConfig{1.0, 10}, MaskConfig{0.08, 10}}) {
    for (size_t t : {2u, 3u, 40u}) {
      const auto m = SampleTrainingMask(t, cfg, rng);
      const auto n = std::count(m.begin(), m.end(), true);
      EXPECT_GT(n, 0);
      EXPECT_LT(n, static_cast<long>(t));
    }
  }
  EXPECT_THROW(SampleTrainingMask(1, MaskConfig{}, rng), ContractError);
}

TEST(Loss, DenoisingHandCase) {
  Graph g;
  Tensor clean(2, 1, {0.0, 0.0});
  Var noisy = g.Input(Tensor(2, 1, {1.0, 2.0}));
  EXPECT_DOUBLE_EQ(DenoisingLoss(clean, noisy).value().item(), 2.5);
  EXPECT_DOUBLE_EQ(DenoisingLoss(clean, g.Constant(clean)).value().item(), 0.0);
}

TEST(Loss, DenoisingIgnoresPaddedFrames) {
  Graph g;
  Tensor clean(3, 1, {0.0, 0.0, 5.0});
  Var noisy = g.Input(Tensor(3, 1, {1.0, 2.0, -7.0}));
  EXPECT_DOUBLE_EQ(DenoisingLoss(clean, noisy, {false, false, true}).value().item(), 2.5);
}

TEST(Loss, DenoisingShapeMismatch) {
  Graph g;
  EXPECT_THROW(DenoisingLoss(Tensor(2, 1), g.Input(Tensor(3, 1))), ContractError);
}

TEST(Loss, MaskedPredictionHandCase) {
  Graph g;
  Var logits = g.Input(Tensor(3, 2, {2, 0, 9, 9, 0, 2}));
  Var loss = MaskedPredictionLoss(logits, {0, 1, 0}, {true, false, true});
  const double sigma = std::exp(2.0) / (std::exp(2.0) + 1.0);
  const double expected = 0.5 * (-std::log(sigma) - std::log(1.0 - sigma));
  EXPECT_NEAR(loss.value().item(), expected, 1e-12);
  EXPECT_NEAR(loss.value().item(), 1.1269, 1e-4);
}

TEST(Loss, UniformLogitsGiveLogK) {
  Graph g;
  Var logits = g.Input(Tensor(4, 256));
  Var loss = MaskedPredictionLoss(logits, {3, 7, 255, 0}, {true, true, false, true});
  EXPECT_NEAR(loss.value().item(), std::log(256.0), 1e-9);
}

TEST(Loss, MaskedPredictionGradientOnlyAtMaskedRows) {
  Graph g;
  Var logits = g.Input(testing::RandomTensor(4, 3, 7));
  g.Backward(MaskedPredictionLoss(logits, {0, 1, 2, 0}, {false, true, false, true}));
  for (size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(logits.grad()(0, c), 0.0);
    EXPECT_EQ(logits.grad()(2, c), 0.0);
  }
}

TEST(Loss, MaskedPredictionContracts) {
  Graph g;
  Var logits = g.Input(Tensor(2, 2));
  EXPECT_THROW(MaskedPredictionLoss(logits, {0, 1}, {false, false}), ContractError);
  EXPECT_THROW(MaskedPredictionLoss(logits, {0}, {true, false}), ContractError);
}

TEST(Loss, TotalExamplesAndLinearity) {
  EXPECT_DOUBLE_EQ(TotalLoss(2.0, 0.5, 0.0), 2.0);
  EXPECT_DOUBLE_EQ(TotalLoss(2.0, 0.5, 1.0), 2.5);
  EXPECT_DOUBLE_EQ(TotalLoss(2.0, 0.5, 2.0), 3.0);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const double m = Uniform(rng, 0, 5), d = Uniform(rng, 0, 5);
    const double l1 = Uniform(rng, 0, 3), l2 = Uniform(rng, 0, 3);
    EXPECT_NEAR(TotalLoss(m, d, l1) + TotalLoss(m, d, l2), TotalLoss(m, d, l1 + l2) + m, 1e-12);
  }
  EXPECT_THROW(TotalLoss(NAN, 0.0, 1.0), NumericError);
  EXPECT_THROW(TotalLoss(1.0, INFINITY, 1.0), NumericError);
}

TEST(TrainStepTest, MicroStepMatchesFiniteDifferences) {
  EXPECT_LT(testing::MicroTrainStepWorstError(), 1e-4);
}

TEST(TrainStepTest, LambdaZeroLeavesDenoisingOutOfGradient) {
  SmallSetup s = MakeSmallSetup();
  const NoiseBank noise = MakeNoiseBank(s.cfg.noise, 1);
  const AlignedCorpus data = AlignLabels(s.corpus, s.labels, s.cfg.encoder);
  auto batch = MakeBatch(data, noise, s.cfg, 0);
  Encoder enc(s.cfg.encoder);
  TrainConfig c0 = s.cfg;
  c0.lambda = 0.0;
  Graph g;
  auto p = enc.Bind(g);
  LossParts parts;
  Var loss = ExampleLoss(enc, p, g, batch[0], DenoisingTarget(enc, batch[0].clean), c0, &parts);
  EXPECT_GT(parts.denoise, 0.0);
  EXPECT_DOUBLE_EQ(loss.value().item(), parts.mask);
}

TEST(TrainStepTest, ZeroNoiseGivesZeroDenoisingLoss) {
  EncoderConfig ec = TinyEncoder();
  Encoder enc(ec);
  TrainConfig cfg;
  cfg.encoder = ec;
  Corpus c = SmallCorpus(1, 1, 0.5, 2);
  TrainExample ex;
  ex.clean = ex.noisy = c.utterances[0].audio;
  const size_t t = OutputLength(ex.clean.samples.size(), ec);
  ex.labels.assign(t, 0);
  ex.mask.assign(t, false);
  ex.mask[0] = true;
  Graph g;
  auto p = enc.Bind(g);
  LossParts parts;
  ExampleLoss(enc, p, g, ex, DenoisingTarget(enc, ex.clean), cfg, &parts);
  EXPECT_EQ(parts.denoise, 0.0);
}

TEST(Batch, PureFunctionOfSeedAndStep) {
  SmallSetup s = MakeSmallSetup();
  const NoiseBank noise = MakeNoiseBank(s.cfg.noise, 1);
  const AlignedCorpus data = AlignLabels(s.corpus, s.labels, s.cfg.encoder);
  auto a = MakeBatch(data, noise, s.cfg, 3);
  auto b = MakeBatch(data, noise, s.cfg, 3);
  auto c = MakeBatch(data, noise, s.cfg, 4);
  ASSERT_EQ(a.size(), 2u);
  bool any_diff = false;
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].clean.samples, b[i].clean.samples);
    EXPECT_EQ(a[i].noisy.samples, b[i].noisy.samples);
    EXPECT_EQ(a[i].mask, b[i].mask);
    EXPECT_EQ(a[i].labels.size(), OutputLength(a[i].clean.samples.size(), s.cfg.encoder));
    any_diff |= a[i].noisy.samples != c[i].noisy.samples;
  }
  EXPECT_TRUE(any_diff);
}

TEST(Align, MissingLabelsRejectedBeforeTraining) {
  SmallSetup s = MakeSmallSetup();
  s.labels.labels.erase(s.corpus.utterances[1].record.utt_id);
  EXPECT_THROW(AlignLabels(s.corpus, s.labels, s.cfg.encoder), DataError);
  const fs::path dir = FreshDir("missing");
  EXPECT_THROW(TrainLoop(s.cfg, s.corpus, s.labels, dir), DataError);
  EXPECT_FALSE(fs::exists(dir / "train_log.jsonl"));
}

TEST(Align, TooManyClustersRejected) {
  SmallSetup s = MakeSmallSetup();
  s.labels.k = 17;
  EXPECT_THROW(AlignLabels(s.corpus, s.labels, s.cfg.encoder), DataError);
}

TEST(Align, FrameRateMismatchRejected) {
  SmallSetup s = MakeSmallSetup();
  auto& seq = s.labels.labels[s.corpus.utterances[0].record.utt_id];
  seq.resize(seq.size() + 5, 0);
  EXPECT_THROW(AlignLabels(s.corpus, s.labels, s.cfg.encoder), DataError);
}

TEST(Config, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.lambda = 0.25;
  c.schedule.total_steps = 77;
  c.mask.span_len = 4;
  c.mask_on_noisy = true;
  nlohmann::json j = c;
  TrainConfig back = j.get<TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  TrainConfig bad;
  bad.lambda = -1.0;
  EXPECT_THROW(bad.Validate(), UsageError);
}

TEST(Loop, DeterministicAndHonorsTotalSteps) {
  SmallSetup s = MakeSmallSetup();
  const fs::path a = FreshDir("det_a"), b = FreshDir("det_b");
  auto ra = TrainLoop(s.cfg, s.corpus, s.labels, a);
  s.cfg.jobs = 2;
  auto rb = TrainLoop(s.cfg, s.corpus, s.labels, b);
  s.cfg.jobs = 1;
  EXPECT_EQ(ReadBytes(ra.log_path), ReadBytes(rb.log_path));
  const auto ca = LoadCheckpoint(ra.final_checkpoint).encoder;
  const auto cb = LoadCheckpoint(rb.final_checkpoint).encoder;
  for (size_t i = 0; i < ca.params().size(); ++i)
    EXPECT_TRUE(std::ranges::equal(ca.params()[i].value.values(), cb.params()[i].value.values()));

  std::ifstream in(ra.log_path);
  size_t lines = 0;
  for (std::string line; std::getline(in, line);) {
    ++lines;
    auto j = nlohmann::json::parse(line);
    ASSERT_EQ(j.size(), 6u);
    EXPECT_EQ(j.at("step").get<uint64_t>(), lines);
    for (const char* key : {"lr", "loss_mask", "loss_denoise", "loss_total", "grad_norm"}) {
      ASSERT_TRUE(j.at(key).is_number()) << key;
      EXPECT_TRUE(std::isfinite(j.at(key).get<double>()));
    }
  }
  EXPECT_EQ(lines, 10u);
  EXPECT_TRUE(fs::exists(a / "checkpoints" / "step_000005.ckpt"));
  EXPECT_TRUE(fs::exists(a / "checkpoints" / "step_000010.ckpt"));
}

TEST(Loop, ResumeIsBitIdentical) {
  SmallSetup s = MakeSmallSetup();
  const fs::path full = FreshDir("resume_full"), part = FreshDir("resume_part");
  auto r_full = TrainLoop(s.cfg, s.corpus, s.labels, full);
  fs::copy(full / "checkpoints" / "step_000005.ckpt", part / "step_000005.ckpt");
  fs::copy(full / "train_log.jsonl", part / "train_log.jsonl");
  auto r_part = TrainLoop(s.cfg, s.corpus, s.labels, part, part / "step_000005.ckpt");
  EXPECT_EQ(ReadBytes(r_full.final_checkpoint), ReadBytes(r_part.final_checkpoint));
  EXPECT_EQ(ReadBytes(r_full.log_path), ReadBytes(r_part.log_path));
}

TEST(Loop, ResumeWithDifferentEncoderRejected) {
  SmallSetup s = MakeSmallSetup();
  s.cfg.schedule.total_steps = 5;
  const fs::path dir = FreshDir("resume_bad");
  auto r = TrainLoop(s.cfg, s.corpus, s.labels, dir);
  s.cfg.encoder.model_dim = 32;
  s.cfg.encoder.ffn_dim = 64;
  EXPECT_THROW(TrainLoop(s.cfg, s.corpus, s.labels, dir, r.final_checkpoint), UsageError);
}

TEST(Loop, LossReportsRunningAverages) {
  SmallSetup s = MakeSmallSetup();
  s.cfg.schedule.total_steps = 3;
  Encoder enc(s.cfg.encoder);
  TrainState st;
  st.optimizer = OptimizerState::For(enc.params(), s.cfg.adamw);
  const NoiseBank noise = MakeNoiseBank(s.cfg.noise, s.cfg.seed);
  const AlignedCorpus data = AlignLabels(s.corpus, s.labels, s.cfg.encoder);
  auto r1 = TrainStep(enc, st, MakeBatch(data, noise, s.cfg, 0), s.cfg);
  EXPECT_EQ(st.step, 1u);
  EXPECT_DOUBLE_EQ(st.avg_total, r1.loss_total);
  EXPECT_DOUBLE_EQ(r1.lr, s.cfg.schedule.At(1));
  auto r2 = TrainStep(enc, st, MakeBatch(data, noise, s.cfg, 1), s.cfg);
  EXPECT_NEAR(st.avg_total, 0.99 * r1.loss_total + 0.01 * r2.loss_total, 1e-12);
  EXPECT_THROW(TrainStep(enc, st, {}, s.cfg), ContractError);
}

}  // namespace
}  // namespace delulu
