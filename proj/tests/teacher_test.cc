// tests/teacher_test.cc

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
#include <numbers>

#include "delulu/audio/corpus.h"
#include "delulu/base/error.h"
#include "delulu/base/rng.h"
#include "delulu/teacher/teacher.h"

namespace delulu {
namespace {

std::vector<double> MeanFrame(const FrameSequence& f) {
  std::vector<double> m(f.dim(), 0.0);
  for (size_t t = 0; t < f.n_frames(); ++t)
    for (size_t j = 0; j < f.dim(); ++j) m[j] += f.values(t, j) / f.n_frames();
  return m;
}

double Dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

Waveform Tone(double hz, size_t n) {
  Waveform w;
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) w.samples[i] = 0.3 * std::sin(2 * std::numbers::pi * hz * i / 16000.0);
  return w;
}

TEST(Teacher, FrameCountMatchesStudent) {
  EncoderConfig student;
  for (TeacherKind kind : {TeacherKind::kOracle, TeacherKind::kSpectral}) {
    TeacherConfig cfg = TeacherConfigFor(student, kind);
    cfg.Validate();
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
      const size_t n = 322 + UniformIndex(rng, 40000);
      EXPECT_EQ(TeacherFrameCount(n, cfg), OutputLength(n, student)) << n;
    }
  }
}

TEST(Teacher, StrideAblationConfigTracksStudent) {
  EncoderConfig student;
  student.conv_strides[0] = 5;
  TeacherConfig cfg = TeacherConfigFor(student, TeacherKind::kSpectral);
  EXPECT_DOUBLE_EQ(cfg.frame_period_ms, 20.0);
  EXPECT_EQ(TeacherFrameCount(16000, cfg), OutputLength(16000, student));
}

TEST(Teacher, OracleSameSpeakerCloseDifferentSpeakersFar) {
  auto bank = MakeSpeakerBank(2, 5);
  TeacherConfig cfg;
  Waveform w;
  w.samples.assign(16000, 0.0);
  auto a1 = TeacherEmbed(w, cfg, "a1", &bank[0]);
  auto a2 = TeacherEmbed(w, cfg, "a2", &bank[0]);
  auto b1 = TeacherEmbed(w, cfg, "b1", &bank[1]);
  const double t = static_cast<double>(a1.frames.n_frames());
  const double scale = cfg.content_noise * std::sqrt(2.0 / t) * std::sqrt(double(cfg.embed_dim));
  EXPECT_LT(Dist(MeanFrame(a1.frames), MeanFrame(a2.frames)), 2.0 * scale);
  EXPECT_GT(Dist(MeanFrame(a1.frames), MeanFrame(b1.frames)), 20.0 * cfg.content_noise);
}

TEST(Teacher, OracleInterIntraRatioAboveFive) {
  CorpusConfig cc;
  cc.n_speakers = 8;
  cc.utts_per_speaker = 3;
  Corpus corpus = GenerateCorpus(cc);
  TeacherConfig cfg;
  std::map<std::string, std::vector<std::vector<double>>> frames;
  for (const auto& u : corpus.utterances) {
    auto tf = TeacherEmbed(u.audio, cfg, u.record.utt_id, corpus.FindSpeaker(u.record.speaker_id));
    for (size_t t = 0; t < tf.frames.n_frames(); ++t) {
      auto row = tf.frames.values.row(t);
      frames[u.record.speaker_id].emplace_back(row.begin(), row.end());
    }
  }
  std::vector<std::vector<double>> centroids;
  double intra = 0.0;
  size_t n = 0;
  for (auto& [spk, fs] : frames) {
    std::vector<double> c(cfg.embed_dim, 0.0);
    for (auto& f : fs)
      for (size_t j = 0; j < c.size(); ++j) c[j] += f[j] / fs.size();
    for (auto& f : fs) intra += Dist(f, c), ++n;
    centroids.push_back(c);
  }
  intra /= n;
  double inter = 0.0;
  size_t pairs = 0;
  for (size_t i = 0; i < centroids.size(); ++i)
    for (size_t j = i + 1; j < centroids.size(); ++j) inter += Dist(centroids[i], centroids[j]), ++pairs;
  inter /= pairs;
  EXPECT_GT(inter / intra, 5.0);
}

TEST(Teacher, OracleNeedsSpeaker) {
  Waveform w;
  w.samples.assign(4000, 0.0);
  EXPECT_THROW(TeacherEmbed(w, TeacherConfig{}, "x", nullptr), DataError);
}

TEST(Teacher, SpectralToneLandsInCoveringMelBin) {
  TeacherConfig cfg = TeacherConfigFor(EncoderConfig{}, TeacherKind::kSpectral);
  auto tf = TeacherEmbed(Tone(440.0, 8000), cfg, "tone", nullptr);
  auto fb = MelFilterbank(cfg.n_mels, 512, 16000, 20.0, 0.475 * 16000);
  const size_t bin440 = static_cast<size_t>(std::lround(440.0 * 512 / 16000.0));
  for (size_t t = 0; t < tf.frames.n_frames(); ++t) {
    size_t best = 0;
    for (size_t k = 1; k < cfg.n_mels; ++k)
      if (tf.frames.values(t, k) > tf.frames.values(t, best)) best = k;
    EXPECT_GT(fb[best][bin440], 0.0) << "frame " << t << " peak mel " << best;
  }
}

TEST(Teacher, SpectralIsSpeakerAgnostic) {
  auto bank = MakeSpeakerBank(1, 9);
  SyntheticSpeaker twin = bank[0];
  twin.speaker_id = "twin";
  TeacherConfig cfg = TeacherConfigFor(EncoderConfig{}, TeacherKind::kSpectral);
  auto a = TeacherEmbed(SynthUtterance(bank[0], 1.0, 4), cfg, "u", &bank[0]);
  auto b = TeacherEmbed(SynthUtterance(twin, 1.0, 4), cfg, "u", &twin);
  EXPECT_TRUE(a.frames.values == b.frames.values);
}

TEST(Teacher, Deterministic) {
  auto bank = MakeSpeakerBank(1, 9);
  Waveform w = SynthUtterance(bank[0], 1.0, 4);
  for (TeacherKind kind : {TeacherKind::kOracle, TeacherKind::kSpectral}) {
    TeacherConfig cfg = TeacherConfigFor(EncoderConfig{}, kind);
    EXPECT_TRUE(TeacherEmbed(w, cfg, "u", &bank[0]).frames.values ==
                TeacherEmbed(w, cfg, "u", &bank[0]).frames.values);
  }
}

TEST(Teacher, ConfigValidation) {
  TeacherConfig cfg = TeacherConfigFor(EncoderConfig{}, TeacherKind::kSpectral);
  cfg.embed_dim = 50;
  EXPECT_THROW(cfg.Validate(), UsageError);
  cfg = TeacherConfig{};
  cfg.embed_dim = 4;
  EXPECT_THROW(cfg.Validate(), UsageError);
  cfg = TeacherConfig{};
  cfg.frame_period_ms = 0.0;
  EXPECT_THROW(cfg.Validate(), UsageError);
  EXPECT_THROW(ParseTeacherKind("redimnet"), UsageError);
  nlohmann::json j = TeacherConfigFor(EncoderConfig{}, TeacherKind::kSpectral);
  EXPECT_EQ(nlohmann::json(j.get<TeacherConfig>()), j);
}

TeacherFrames Frames(size_t t) {
  TeacherFrames tf;
  tf.utt_id = "u";
  tf.frames.values = Tensor(t, 8, 1.0);
  tf.frames.frame_period_ms = 16.0;
  return tf;
}

TEST(Align, Examples) {
  EXPECT_EQ(AlignFrames(63, Frames(63)).frames.n_frames(), 63u);
  EXPECT_EQ(AlignFrames(63, Frames(64)).frames.n_frames(), 63u);
  EXPECT_EQ(AlignFrames(63, Frames(61)).frames.n_frames(), 61u);
  try {
    AlignFrames(63, Frames(70));
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("frame-rate mismatch; check strides"), std::string::npos);
  }
}

TEST(TeacherFile, RoundTripAndIndex) {
  auto bank = MakeSpeakerBank(2, 9);
  TeacherConfig cfg;
  std::vector<TeacherFrames> all;
  Waveform w;
  w.samples.assign(5000, 0.0);
  for (int i = 0; i < 3; ++i)
    all.push_back(TeacherEmbed(w, cfg, "utt" + std::to_string(i), &bank[i % 2]));
  const auto path = std::filesystem::temp_directory_path() / "delulu_teacher_test.bin";
  WriteTeacherFrames(path, all);
  auto back = ReadTeacherFrames(path);
  ASSERT_EQ(back.size(), 3u);
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].utt_id, all[i].utt_id);
    ASSERT_TRUE(back[i].frames.values.same_shape(all[i].frames.values));
    for (size_t k = 0; k < all[i].frames.values.size(); ++k)
      EXPECT_EQ(back[i].frames.values[k],
                static_cast<double>(static_cast<float>(all[i].frames.values[k])));
  }
  auto index = ReadTeacherIndex(path);
  EXPECT_EQ(index.at("utt0"), 0u);
  const uint64_t block = 4 + 4 + 16 + all[0].frames.values.size() * 4;
  EXPECT_EQ(index.at("utt1"), block);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  EXPECT_THROW(ReadTeacherFrames(path), DataError);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".index.json");
}

}  // namespace
}  // namespace delulu
