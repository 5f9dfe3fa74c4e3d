// src/audio/noise.cc

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

#include "delulu/audio/noise.h"

#include <cmath>
#include <numbers>

#include <fftw3.h>

#include "delulu/base/error.h"

namespace delulu {

namespace {
constexpr double kNoiseRms = 0.1;

void NormalizeRms(std::vector<double>& x, double target) {
  const double rms = Rms(x);
  if (rms <= 0.0) return;
  const double g = target / rms;
  for (double& v : x) v *= g;
}
}  // namespace

const char* NoiseKindName(NoiseKind k) { return k == NoiseKind::kBabble ? "babble" : "colored"; }

void NoiseSpec::Validate() const {
  if (snr_range_db[0] > snr_range_db[1])
    throw ContractError("noise spec: snr range lower bound exceeds upper bound");
}

double NoiseScaleForSnr(const Waveform& clean, const Waveform& noise, double snr_db,
                        size_t noise_offset) {
  if (clean.sample_rate_hz != noise.sample_rate_hz)
    throw ContractError("mix_noise: sample rates differ (" + std::to_string(clean.sample_rate_hz) +
                        " vs " + std::to_string(noise.sample_rate_hz) + ")");
  if (noise.samples.empty()) throw ContractError("mix_noise: empty noise");
  const double clean_rms = Rms(clean.samples);
  if (clean_rms < 1e-8) throw DataError("cannot define SNR against silence");
  double ss = 0.0;
  const size_t nn = noise.samples.size();
  for (size_t i = 0; i < clean.samples.size(); ++i) {
    const double v = noise.samples[(noise_offset + i) % nn];
    ss += v * v;
  }
  const double noise_rms = std::sqrt(ss / static_cast<double>(clean.samples.size()));
  if (noise_rms < 1e-12) throw DataError("mix_noise: noise segment is silent");
  return clean_rms / (noise_rms * std::pow(10.0, snr_db / 20.0));
}

Waveform MixNoise(const Waveform& clean, const Waveform& noise, double snr_db,
                  size_t noise_offset) {
  const double scale = NoiseScaleForSnr(clean, noise, snr_db, noise_offset);
  Waveform out = clean;
  const size_t nn = noise.samples.size();
  for (size_t i = 0; i < out.samples.size(); ++i)
    out.samples[i] += scale * noise.samples[(noise_offset + i) % nn];
  ClipInPlace(out, "mix_noise");
  return out;
}

double SampleSnrDb(const NoiseSpec& spec, Rng& rng) {
  spec.Validate();
  return Uniform(rng, spec.snr_range_db[0], spec.snr_range_db[1]);
}

Waveform MakeBabble(const std::vector<SyntheticSpeaker>& bank, double duration_s, uint64_t seed,
                    const VoiceConfig& cfg) {
  if (bank.size() < 2)
    throw ContractError("babble needs at least 2 speakers in the bank, got " +
                        std::to_string(bank.size()));
  Rng rng(DeriveSeed(seed, 21));
  const size_t voices = std::max<size_t>(3, std::min<size_t>(bank.size(), 5));
  // Distinct speakers while the bank allows, then repeats with new content.
  std::vector<size_t> order(bank.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[UniformIndex(rng, i)]);
  Waveform out;
  out.sample_rate_hz = cfg.sample_rate_hz;
  for (size_t v = 0; v < voices; ++v) {
    const SyntheticSpeaker& spk = bank[order[v % order.size()]];
    Waveform u = SynthUtterance(spk, duration_s, DeriveSeed(seed, 22, v), cfg);
    if (out.samples.empty()) out.samples.assign(u.samples.size(), 0.0);
    for (size_t i = 0; i < u.samples.size(); ++i) out.samples[i] += u.samples[i];
  }
  NormalizeRms(out.samples, kNoiseRms);
  return out;
}

Waveform MakeColoredNoise(double duration_s, uint64_t seed, int sample_rate_hz) {
  if (!(duration_s > 0.0)) throw ContractError("noise duration must be positive");
  Rng rng(DeriveSeed(seed, 23));
  const size_t n = static_cast<size_t>(std::llround(duration_s * sample_rate_hz));
  Waveform w;
  w.sample_rate_hz = sample_rate_hz;
  w.samples.resize(n);
  double b0 = 0.0, b1 = 0.0, b2 = 0.0;
  // Burn-in before the first kept sample.
  for (size_t i = 0; i < n + 2048; ++i) {
    const double white = Gaussian(rng);
    b0 = 0.99765 * b0 + white * 0.0990460;
    b1 = 0.96300 * b1 + white * 0.2965164;
    b2 = 0.57000 * b2 + white * 1.0526913;
    if (i >= 2048) w.samples[i - 2048] = b0 + b1 + b2 + white * 0.1848;
  }
  // Remove DC.
  double mean = 0.0;
  for (double v : w.samples) mean += v;
  mean /= static_cast<double>(n);
  for (double& v : w.samples) v -= mean;
  NormalizeRms(w.samples, kNoiseRms);
  return w;
}

double SpectralFlatness(const Waveform& w, double lo_hz, double hi_hz) {
  constexpr size_t kFrame = 512, kHop = 256;
  if (w.samples.size() < kFrame) throw ContractError("spectral flatness: signal too short");
  std::vector<double> in(kFrame);
  std::vector<fftw_complex> out(kFrame / 2 + 1);
  fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(kFrame), in.data(), out.data(),
                                        FFTW_ESTIMATE);
  std::vector<double> power(kFrame / 2 + 1, 0.0);
  for (size_t start = 0; start + kFrame <= w.samples.size(); start += kHop) {
    for (size_t i = 0; i < kFrame; ++i) {
      const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / (kFrame - 1));
      in[i] = hann * w.samples[start + i];
    }
    fftw_execute(plan);
    for (size_t k = 0; k < power.size(); ++k) power[k] += out[k][0] * out[k][0] + out[k][1] * out[k][1];
  }
  fftw_destroy_plan(plan);
  const double bin_hz = static_cast<double>(w.sample_rate_hz) / kFrame;
  const size_t k0 = std::max<size_t>(1, static_cast<size_t>(std::ceil(lo_hz / bin_hz)));
  const size_t k1 = std::min<size_t>(kFrame / 2, static_cast<size_t>(hi_hz / bin_hz));
  if (k1 < k0) throw ContractError("spectral flatness: empty band");
  double log_sum = 0.0, sum = 0.0;
  for (size_t k = k0; k <= k1; ++k) {
    const double p = power[k] + 1e-30;
    log_sum += std::log(p);
    sum += p;
  }
  const double bins = static_cast<double>(k1 - k0 + 1);
  return std::exp(log_sum / bins) / (sum / bins);
}

Waveform NoiseBank::Corrupt(const Waveform& clean, Rng& rng) const {
  const bool use_babble = Uniform01(rng) < 0.5;
  const auto& pool = use_babble && !babble.empty() ? babble : colored;
  if (pool.empty()) throw ContractError("noise bank is empty");
  const Waveform& clip = pool[UniformIndex(rng, pool.size())];
  const size_t offset = UniformIndex(rng, clip.samples.size());
  const double snr = Uniform(rng, snr_range_db[0], snr_range_db[1]);
  return MixNoise(clean, clip, snr, offset);
}

NoiseBank MakeNoiseBank(const NoiseBankConfig& cfg, uint64_t seed, int sample_rate_hz) {
  NoiseBank bank;
  bank.snr_range_db = cfg.snr_range_db;
  VoiceConfig voice;
  voice.sample_rate_hz = sample_rate_hz;
  const auto talkers = MakeSpeakerBank(6, DeriveSeed(seed, 60), voice, "babble");
  for (size_t i = 0; i < cfg.clips_per_kind; ++i) {
    bank.babble.push_back(MakeBabble(talkers, cfg.clip_s, DeriveSeed(seed, 61, i), voice));
    bank.colored.push_back(MakeColoredNoise(cfg.clip_s, DeriveSeed(seed, 62, i), sample_rate_hz));
  }
  return bank;
}

}  // namespace delulu
