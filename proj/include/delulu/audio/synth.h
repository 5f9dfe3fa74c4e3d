// include/delulu/audio/synth.h

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
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "delulu/audio/waveform.h"

namespace delulu {

constexpr size_t kNumFormants = 4;
// Neutral (schwa) formant layout before vocal-tract scaling.
constexpr std::array<double, kNumFormants> kNeutralFormantHz = {500.0, 1500.0, 2500.0, 3500.0};

// Ranges the synthetic voices are drawn from. Gender is tied to the f0 band
// and vocal-tract scale; age band is tied to jitter/shimmer level. These are
// the latent factors the stratified and zero-shot evaluations recover.
struct VoiceConfig {
  std::array<double, 2> male_f0_hz = {85.0, 155.0};
  std::array<double, 2> female_f0_hz = {165.0, 255.0};
  std::array<double, 2> male_tract_scale = {0.86, 1.0};
  std::array<double, 2> female_tract_scale = {1.02, 1.18};
  // Per-age-band cycle-to-cycle f0 jitter (fraction of f0).
  std::array<double, 3> jitter_by_age = {0.002, 0.006, 0.012};
  std::array<double, 3> shimmer_by_age = {0.02, 0.05, 0.09};
  // Spread of the per-utterance mean f0 around the speaker's base (fraction).
  double utterance_f0_spread = 0.005;
  int sample_rate_hz = 16000;
};

void to_json(nlohmann::json& j, const VoiceConfig& c);
void from_json(const nlohmann::json& j, VoiceConfig& c);

// Per-utterance recording channel: a first-order pre-emphasis/de-emphasis
// tilt followed by peaking-EQ bands at random centres, RMS preserving.
struct ChannelConfig {
  bool enabled = true;
  double max_tilt = 0.5;
  size_t n_bands = 2;
  double max_band_gain_db = 9.0;
  std::array<double, 2> band_hz = {400.0, 6000.0};
  double band_q = 1.4;
};

void to_json(nlohmann::json& j, const ChannelConfig& c);
void from_json(const nlohmann::json& j, ChannelConfig& c);

enum class Gender { kFemale, kMale };
const char* GenderName(Gender g);
Gender ParseGender(const std::string& s);
// "18-35", "36-55", "56+"
const char* AgeBandName(int band);

struct SyntheticSpeaker {
  std::string speaker_id;
  uint64_t identity_seed = 0;
  Gender gender = Gender::kFemale;
  int age_band = 0;
  double base_f0_hz = 0.0;
  std::array<double, kNumFormants> formant_hz{};
  std::array<double, kNumFormants> bandwidth_hz{};
  double jitter = 0.0;
  double shimmer = 0.0;
  // Source spectral slope: harmonic h has amplitude h^-tilt before shaping.
  double spectral_tilt = 1.4;
};

void to_json(nlohmann::json& j, const SyntheticSpeaker& s);
void from_json(const nlohmann::json& j, SyntheticSpeaker& s);

// Speaker parameters are a pure function of the arguments; identity_seed
// drives everything not given explicitly (formant layout, tilt).
SyntheticSpeaker MakeSpeaker(std::string speaker_id, uint64_t identity_seed, Gender gender,
                             int age_band, double base_f0_hz, const VoiceConfig& cfg = {});

// n speakers with alternating gender and cycling age band. f0 is drawn
// stratified within each gender band (one slot per speaker, shuffled), which
// guarantees a minimum inter-speaker f0 gap of 0.4 slot widths.
std::vector<SyntheticSpeaker> MakeSpeakerBank(size_t n, uint64_t seed,
                                              const VoiceConfig& cfg = {},
                                              const std::string& id_prefix = "spk");

// Harmonic source at the speaker's f0 (per-utterance offset plus AR(1)
// jitter), shaped by the speaker's formant resonances moving through a random
// vowel sequence, under a random syllabic amplitude envelope. The fundamental
// is radiated unshaped.
// Deterministic in (speaker.identity_seed, utt_seed).
Waveform SynthUtterance(const SyntheticSpeaker& speaker, double duration_s, uint64_t utt_seed,
                        const VoiceConfig& cfg = {});

// Colors w with a channel drawn from seed. No-op when disabled.
void ApplyChannel(Waveform& w, const ChannelConfig& cfg, uint64_t seed);

}  // namespace delulu
