// include/delulu/audio/noise.h

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

#include <array>
#include <cstdint>
#include <vector>

#include "delulu/audio/synth.h"
#include "delulu/audio/waveform.h"
#include "delulu/base/rng.h"

namespace delulu {

enum class NoiseKind { kBabble, kColored };
const char* NoiseKindName(NoiseKind k);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::kBabble;
  std::array<double, 2> snr_range_db = {15.0, 25.0};
  uint64_t seed = 0;

  void Validate() const;
};

// Adds `noise` (tiled/cropped to the clean length starting at noise_offset)
// scaled so that rms(clean) / rms(scaled noise) equals 10^(snr_db / 20).
// The mixture is clipped to [-1, 1] with a warning if needed.
Waveform MixNoise(const Waveform& clean, const Waveform& noise, double snr_db,
                  size_t noise_offset = 0);

// Noise gain MixNoise would apply.
double NoiseScaleForSnr(const Waveform& clean, const Waveform& noise, double snr_db,
                        size_t noise_offset = 0);

// Uniform draw from spec.snr_range_db.
double SampleSnrDb(const NoiseSpec& spec, Rng& rng);

// Cross-talk: at least three simultaneous synthetic utterances from the bank
// (which needs at least two speakers), RMS-normalized to 0.1.
Waveform MakeBabble(const std::vector<SyntheticSpeaker>& bank, double duration_s, uint64_t seed,
                    const VoiceConfig& cfg = {});

// 1/f noise: white Gaussian noise through Paul Kellet's three-pole pinking
// filter (pole radii 0.99765, 0.963, 0.57), RMS-normalized to 0.1.
Waveform MakeColoredNoise(double duration_s, uint64_t seed, int sample_rate_hz = 16000);

// Geometric / arithmetic mean ratio, between lo_hz and hi_hz, of the
// long-term power spectrum (Welch average of Hann-windowed 512-sample frames,
// hop 256).
double SpectralFlatness(const Waveform& w, double lo_hz = 60.0, double hi_hz = 4000.0);

struct NoiseBankConfig {
  size_t clips_per_kind = 4;
  double clip_s = 3.0;
  std::array<double, 2> snr_range_db = {15.0, 25.0};
};

// Babble (from a dedicated synthetic speaker bank disjoint from the corpus)
// and colored-noise clips for training-time corruption and noisy scoring.
struct NoiseBank {
  std::vector<Waveform> babble;
  std::vector<Waveform> colored;
  std::array<double, 2> snr_range_db = {15.0, 25.0};

  // Uniform kind, uniform clip, uniform offset, uniform SNR.
  Waveform Corrupt(const Waveform& clean, Rng& rng) const;
};

NoiseBank MakeNoiseBank(const NoiseBankConfig& cfg, uint64_t seed, int sample_rate_hz = 16000);

}  // namespace delulu
