// src/teacher/teacher.cc

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

#include "delulu/teacher/teacher.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include <fftw3.h>

#include "delulu/base/error.h"
#include "delulu/base/rng.h"

namespace delulu {

namespace {

uint64_t HashString(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double MelToHz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

size_t NextPow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

FrameSequence OracleFrames(size_t t_len, const std::string& utt_id, const SyntheticSpeaker& spk,
                           const TeacherConfig& cfg) {
  const std::vector<double> centroid = OracleCentroid(spk, cfg);
  Rng rng(DeriveSeed(cfg.seed, 2, HashString(utt_id)));
  FrameSequence f{Tensor(t_len, cfg.embed_dim), cfg.frame_period_ms};
  for (size_t t = 0; t < t_len; ++t)
    for (size_t j = 0; j < cfg.embed_dim; ++j)
      f.values(t, j) = centroid[j] + cfg.content_noise * Gaussian(rng);
  return f;
}

FrameSequence SpectralFrames(const Waveform& w, size_t t_len, const TeacherConfig& cfg) {
  const size_t win = cfg.window_samples, hop = cfg.HopSamples();
  const size_t n_fft = NextPow2(win);
  const size_t bins = n_fft / 2 + 1;
  const auto fbank = MelFilterbank(cfg.n_mels, n_fft, cfg.sample_rate_hz, 20.0,
                                   0.475 * cfg.sample_rate_hz);
  std::vector<double> window(win);
  for (size_t i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / static_cast<double>(win - 1));

  std::vector<double> in(n_fft, 0.0);
  std::vector<fftw_complex> out(bins);
  fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(n_fft), in.data(), out.data(),
                                        FFTW_ESTIMATE);
  FrameSequence f{Tensor(t_len, cfg.embed_dim), cfg.frame_period_ms};
  std::vector<double> power(bins), logmel(cfg.n_mels);
  const double m = static_cast<double>(cfg.n_mels);
  for (size_t t = 0; t < t_len; ++t) {
    std::fill(in.begin(), in.end(), 0.0);
    for (size_t i = 0; i < win; ++i) in[i] = w.samples[t * hop + i] * window[i];
    fftw_execute(plan);
    for (size_t b = 0; b < bins; ++b) power[b] = out[b][0] * out[b][0] + out[b][1] * out[b][1];
    for (size_t k = 0; k < cfg.n_mels; ++k) {
      double e = 0.0;
      for (size_t b = 0; b < bins; ++b) e += fbank[k][b] * power[b];
      logmel[k] = std::log(e + 1e-10);
      f.values(t, k) = logmel[k];
    }
    for (size_t c = 0; c < cfg.n_coeffs; ++c) {
      double s = 0.0;
      for (size_t k = 0; k < cfg.n_mels; ++k)
        s += logmel[k] * std::cos(std::numbers::pi * c * (k + 0.5) / m);
      f.values(t, cfg.n_mels + c) = s * std::sqrt((c == 0 ? 1.0 : 2.0) / m);
    }
  }
  fftw_destroy_plan(plan);
  return f;
}

}  // namespace

const char* TeacherKindName(TeacherKind k) {
  switch (k) {
    case TeacherKind::kOracle: return "oracle";
    case TeacherKind::kSpectral: return "spectral";
    case TeacherKind::kExternal: return "external";
  }
  return "?";
}

TeacherKind ParseTeacherKind(const std::string& s) {
  if (s == "oracle") return TeacherKind::kOracle;
  if (s == "spectral") return TeacherKind::kSpectral;
  if (s == "external") return TeacherKind::kExternal;
  throw UsageError("unknown teacher kind '" + s + "' (expected oracle or spectral)");
}

void TeacherConfig::Validate() const {
  if (!(frame_period_ms > 0.0)) throw UsageError("teacher frame_period_ms must be > 0");
  if (embed_dim < 8) throw UsageError("teacher embed_dim must be at least 8");
  if (sample_rate_hz <= 0) throw UsageError("teacher sample rate must be positive");
  const double hop = frame_period_ms * sample_rate_hz / 1000.0;
  if (std::abs(hop - std::round(hop)) > 1e-9 || hop < 1.0)
    throw UsageError("teacher frame period must be a whole number of samples");
  if (window_samples < 2) throw UsageError("teacher window must be at least 2 samples");
  if (kind == TeacherKind::kOracle) {
    if (!(content_noise >= 0.0)) throw UsageError("oracle content_noise must be >= 0");
  }
  if (kind == TeacherKind::kSpectral) {
    if (n_mels == 0 || n_coeffs > n_mels)
      throw UsageError("spectral teacher needs n_mels > 0 and n_coeffs <= n_mels");
    if (embed_dim != n_mels + n_coeffs)
      throw UsageError("spectral teacher embed_dim " + std::to_string(embed_dim) +
                       " must equal n_mels + n_coeffs = " + std::to_string(n_mels + n_coeffs));
  }
}

size_t TeacherConfig::HopSamples() const {
  return static_cast<size_t>(std::llround(frame_period_ms * sample_rate_hz / 1000.0));
}

void to_json(nlohmann::json& j, const TeacherConfig& c) {
  j = {{"kind", TeacherKindName(c.kind)},
       {"embed_dim", c.embed_dim},
       {"frame_period_ms", c.frame_period_ms},
       {"window_samples", c.window_samples},
       {"sample_rate_hz", c.sample_rate_hz},
       {"seed", c.seed},
       {"content_noise", c.content_noise},
       {"n_mels", c.n_mels},
       {"n_coeffs", c.n_coeffs}};
}

void from_json(const nlohmann::json& j, TeacherConfig& c) {
  TeacherConfig d;
  c.kind = ParseTeacherKind(j.value("kind", std::string(TeacherKindName(d.kind))));
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.frame_period_ms = j.value("frame_period_ms", d.frame_period_ms);
  c.window_samples = j.value("window_samples", d.window_samples);
  c.sample_rate_hz = j.value("sample_rate_hz", d.sample_rate_hz);
  c.seed = j.value("seed", d.seed);
  c.content_noise = j.value("content_noise", d.content_noise);
  c.n_mels = j.value("n_mels", d.n_mels);
  c.n_coeffs = j.value("n_coeffs", d.n_coeffs);
}

TeacherConfig TeacherConfigFor(const EncoderConfig& student, TeacherKind kind) {
  TeacherConfig c;
  c.kind = kind;
  c.frame_period_ms = student.FramePeriodMs();
  c.window_samples = student.ReceptiveField();
  c.sample_rate_hz = student.sample_rate_hz;
  if (kind == TeacherKind::kSpectral) c.embed_dim = c.n_mels + c.n_coeffs;
  return c;
}

size_t TeacherFrameCount(size_t n_samples, const TeacherConfig& cfg) {
  if (n_samples < cfg.window_samples) return 0;
  return (n_samples - cfg.window_samples) / cfg.HopSamples() + 1;
}

std::vector<double> SpeakerAttributes(const SyntheticSpeaker& s) {
  static constexpr std::array<double, kNumFormants> kBandwidthRef = {81.0, 106.0, 145.0, 204.0};
  std::vector<double> a;
  a.reserve(kSpeakerAttributeCount);
  a.push_back(std::log(s.base_f0_hz / 150.0) / 0.3);
  for (size_t i = 0; i < kNumFormants; ++i)
    a.push_back(std::log(s.formant_hz[i] / kNeutralFormantHz[i]) / 0.12);
  for (size_t i = 0; i < kNumFormants; ++i)
    a.push_back(std::log(s.bandwidth_hz[i] / kBandwidthRef[i]) / 0.17);
  a.push_back((s.spectral_tilt - 1.5) / 0.17);
  a.push_back(std::log(std::max(s.jitter, 1e-6) / 0.005) / 0.75);
  a.push_back(std::log(std::max(s.shimmer, 1e-6) / 0.045) / 0.6);
  return a;
}

std::vector<double> OracleCentroid(const SyntheticSpeaker& speaker, const TeacherConfig& cfg) {
  const std::vector<double> identity = SpeakerAttributes(speaker);
  Rng proj_rng(DeriveSeed(cfg.seed, 1));
  const double scale = 1.0 / std::sqrt(static_cast<double>(identity.size()));
  std::vector<double> out(cfg.embed_dim, 0.0);
  for (size_t j = 0; j < cfg.embed_dim; ++j)
    for (double v : identity) out[j] += scale * Gaussian(proj_rng) * v;
  return out;
}

TeacherFrames TeacherEmbed(const Waveform& w, const TeacherConfig& cfg, const std::string& utt_id,
                           const SyntheticSpeaker* speaker) {
  cfg.Validate();
  if (w.sample_rate_hz != cfg.sample_rate_hz)
    throw ContractError("teacher expects " + std::to_string(cfg.sample_rate_hz) + " Hz audio, got " +
                        std::to_string(w.sample_rate_hz) + " Hz");
  const size_t t_len = TeacherFrameCount(w.samples.size(), cfg);
  if (t_len == 0)
    throw DataError(utt_id + ": audio shorter than one teacher window (" +
                    std::to_string(cfg.window_samples) + " samples)");
  TeacherFrames out;
  out.utt_id = utt_id;
  out.kind = cfg.kind;
  switch (cfg.kind) {
    case TeacherKind::kOracle:
      if (speaker == nullptr)
        throw DataError(utt_id + ": oracle teacher needs a synthetic speaker record");
      out.frames = OracleFrames(t_len, utt_id, *speaker, cfg);
      break;
    case TeacherKind::kSpectral:
      out.frames = SpectralFrames(w, t_len, cfg);
      break;
    case TeacherKind::kExternal:
      throw UsageError("external teacher frames are read from a file, not computed");
  }
  return out;
}

TeacherFrames AlignFrames(size_t student_t, const TeacherFrames& teacher) {
  const size_t teacher_t = teacher.frames.n_frames();
  const size_t gap = student_t > teacher_t ? student_t - teacher_t : teacher_t - student_t;
  if (gap > 2)
    throw DataError(teacher.utt_id + ": frame-rate mismatch; check strides (student " +
                    std::to_string(student_t) + " frames, teacher " + std::to_string(teacher_t) +
                    ")");
  if (teacher_t <= student_t) return teacher;
  TeacherFrames out = teacher;
  const size_t dim = teacher.frames.dim();
  out.frames.values = Tensor(student_t, dim,
                             std::vector<double>(teacher.frames.values.data(),
                                                 teacher.frames.values.data() + student_t * dim));
  return out;
}

std::vector<std::vector<double>> MelFilterbank(size_t n_mels, size_t n_fft, int sample_rate_hz,
                                               double f_lo, double f_hi) {
  const size_t bins = n_fft / 2 + 1;
  const double lo = HzToMel(f_lo), hi = HzToMel(f_hi);
  std::vector<double> edges(n_mels + 2);
  for (size_t i = 0; i < edges.size(); ++i)
    edges[i] = MelToHz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  std::vector<std::vector<double>> fb(n_mels, std::vector<double>(bins, 0.0));
  for (size_t k = 0; k < n_mels; ++k)
    for (size_t b = 0; b < bins; ++b) {
      const double hz = static_cast<double>(b) * sample_rate_hz / static_cast<double>(n_fft);
      if (hz > edges[k] && hz < edges[k + 2])
        fb[k][b] = hz <= edges[k + 1] ? (hz - edges[k]) / (edges[k + 1] - edges[k])
                                      : (edges[k + 2] - hz) / (edges[k + 2] - edges[k + 1]);
    }
  return fb;
}

void WriteTeacherFrames(const std::filesystem::path& path, const std::vector<TeacherFrames>& all) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  nlohmann::json index = nlohmann::json::object();
  uint64_t offset = 0;
  auto put = [&](const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    offset += n;
  };
  for (const auto& tf : all) {
    if (index.contains(tf.utt_id)) throw DataError("duplicate teacher frames for " + tf.utt_id);
    index[tf.utt_id] = offset;
    const uint32_t len = static_cast<uint32_t>(tf.utt_id.size());
    const uint64_t t = tf.frames.n_frames(), d = tf.frames.dim();
    put(&len, 4);
    put(tf.utt_id.data(), len);
    put(&t, 8);
    put(&d, 8);
    std::vector<float> vals(tf.frames.values.size());
    for (size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<float>(tf.frames.values[i]);
    put(vals.data(), vals.size() * sizeof(float));
  }
  if (!out) throw DataError("short write to " + path.string());
  std::ofstream idx(path.string() + ".index.json");
  idx << index.dump(1) << "\n";
}

std::map<std::string, uint64_t> ReadTeacherIndex(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".index.json");
  if (!in) throw DataError("cannot open " + path.string() + ".index.json");
  try {
    return nlohmann::json::parse(in).get<std::map<std::string, uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ".index.json: " + e.what());
  }
}

std::vector<TeacherFrames> ReadTeacherFrames(const std::filesystem::path& path,
                                             double frame_period_ms) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open teacher frames " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<TeacherFrames> all;
  size_t pos = 0;
  auto get = [&](void* dst, size_t n) {
    if (pos + n > bytes.size() || pos + n < pos)
      throw DataError(path.string() + ": truncated teacher-frames block");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  while (pos < bytes.size()) {
    uint32_t len;
    get(&len, 4);
    TeacherFrames tf;
    tf.kind = TeacherKind::kExternal;
    tf.utt_id.resize(len);
    get(tf.utt_id.data(), len);
    uint64_t t, d;
    get(&t, 8);
    get(&d, 8);
    if (t == 0 || d == 0 || t > bytes.size() || d > bytes.size() || t * d > bytes.size())
      throw DataError(path.string() + ": bad block shape for " + tf.utt_id);
    std::vector<float> vals(t * d);
    get(vals.data(), vals.size() * sizeof(float));
    tf.frames.values = Tensor(t, d, std::vector<double>(vals.begin(), vals.end()));
    tf.frames.frame_period_ms = frame_period_ms;
    if (!tf.frames.values.all_finite())
      throw DataError(path.string() + ": non-finite teacher frame in " + tf.utt_id);
    all.push_back(std::move(tf));
  }
  return all;
}

}  // namespace delulu
