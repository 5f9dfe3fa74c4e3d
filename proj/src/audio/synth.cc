// src/audio/synth.cc

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

#include "delulu/audio/synth.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "delulu/base/error.h"
#include "delulu/base/rng.h"

namespace delulu {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Per-vowel multipliers of the neutral layout.
constexpr std::array<std::array<double, kNumFormants>, 7> kVowelRatios = {{
    {1.46, 0.73, 0.98, 1.0},  // a
    {0.54, 1.53, 1.20, 1.0},  // i
    {0.60, 0.58, 0.90, 1.0},  // u
    {1.06, 1.23, 0.99, 1.0},  // e
    {1.14, 0.56, 0.96, 1.0},  // o
    {1.00, 1.00, 1.00, 1.0},  // schwa
    {0.78, 1.33, 1.02, 1.0},  // I
}};
constexpr std::array<double, kNumFormants> kFormantGain = {1.0, 0.75, 0.5, 0.35};
constexpr double kEnvelopeFloor = 0.04;
constexpr double kMaxHarmonicHz = 5000.0;
constexpr size_t kBlock = 32;

struct Segment {
  size_t end_sample;
  std::array<double, kNumFormants> formants;
  double amplitude;
};

}  // namespace

const char* GenderName(Gender g) { return g == Gender::kFemale ? "female" : "male"; }

Gender ParseGender(const std::string& s) {
  if (s == "female" || s == "f") return Gender::kFemale;
  if (s == "male" || s == "m") return Gender::kMale;
  throw DataError("unknown gender label '" + s + "'");
}

const char* AgeBandName(int band) {
  static const char* kNames[] = {"18-35", "36-55", "56+"};
  if (band < 0 || band > 2) throw ContractError("age band out of range");
  return kNames[band];
}

void to_json(nlohmann::json& j, const VoiceConfig& c) {
  j = {{"male_f0_hz", c.male_f0_hz},
       {"female_f0_hz", c.female_f0_hz},
       {"male_tract_scale", c.male_tract_scale},
       {"female_tract_scale", c.female_tract_scale},
       {"jitter_by_age", c.jitter_by_age},
       {"shimmer_by_age", c.shimmer_by_age},
       {"utterance_f0_spread", c.utterance_f0_spread},
       {"sample_rate_hz", c.sample_rate_hz}};
}

void from_json(const nlohmann::json& j, VoiceConfig& c) {
  VoiceConfig d;
  c.male_f0_hz = j.value("male_f0_hz", d.male_f0_hz);
  c.female_f0_hz = j.value("female_f0_hz", d.female_f0_hz);
  c.male_tract_scale = j.value("male_tract_scale", d.male_tract_scale);
  c.female_tract_scale = j.value("female_tract_scale", d.female_tract_scale);
  c.jitter_by_age = j.value("jitter_by_age", d.jitter_by_age);
  c.shimmer_by_age = j.value("shimmer_by_age", d.shimmer_by_age);
  c.utterance_f0_spread = j.value("utterance_f0_spread", d.utterance_f0_spread);
  c.sample_rate_hz = j.value("sample_rate_hz", d.sample_rate_hz);
}

void to_json(nlohmann::json& j, const ChannelConfig& c) {
  j = {{"enabled", c.enabled},
       {"max_tilt", c.max_tilt},
       {"n_bands", c.n_bands},
       {"max_band_gain_db", c.max_band_gain_db},
       {"band_hz", c.band_hz},
       {"band_q", c.band_q}};
}

void from_json(const nlohmann::json& j, ChannelConfig& c) {
  ChannelConfig d;
  c.enabled = j.value("enabled", d.enabled);
  c.max_tilt = j.value("max_tilt", d.max_tilt);
  c.n_bands = j.value("n_bands", d.n_bands);
  c.max_band_gain_db = j.value("max_band_gain_db", d.max_band_gain_db);
  c.band_hz = j.value("band_hz", d.band_hz);
  c.band_q = j.value("band_q", d.band_q);
}

void to_json(nlohmann::json& j, const SyntheticSpeaker& s) {
  j = {{"speaker_id", s.speaker_id},
       {"identity_seed", s.identity_seed},
       {"gender", GenderName(s.gender)},
       {"age_band", AgeBandName(s.age_band)},
       {"base_f0_hz", s.base_f0_hz},
       {"formant_hz", s.formant_hz},
       {"bandwidth_hz", s.bandwidth_hz},
       {"jitter", s.jitter},
       {"shimmer", s.shimmer},
       {"spectral_tilt", s.spectral_tilt}};
}

void from_json(const nlohmann::json& j, SyntheticSpeaker& s) {
  s.speaker_id = j.at("speaker_id").get<std::string>();
  s.identity_seed = j.at("identity_seed").get<uint64_t>();
  s.gender = ParseGender(j.at("gender").get<std::string>());
  const std::string band = j.at("age_band").get<std::string>();
  s.age_band = band == "18-35" ? 0 : band == "36-55" ? 1 : band == "56+" ? 2 : -1;
  if (s.age_band < 0) throw DataError("unknown age band '" + band + "'");
  s.base_f0_hz = j.at("base_f0_hz").get<double>();
  s.formant_hz = j.at("formant_hz").get<std::array<double, kNumFormants>>();
  s.bandwidth_hz = j.at("bandwidth_hz").get<std::array<double, kNumFormants>>();
  s.jitter = j.at("jitter").get<double>();
  s.shimmer = j.at("shimmer").get<double>();
  s.spectral_tilt = j.at("spectral_tilt").get<double>();
}

SyntheticSpeaker MakeSpeaker(std::string speaker_id, uint64_t identity_seed, Gender gender,
                             int age_band, double base_f0_hz, const VoiceConfig& cfg) {
  if (age_band < 0 || age_band > 2) throw ContractError("age band must be 0, 1 or 2");
  if (!(base_f0_hz > 0.0)) throw ContractError("base f0 must be positive");
  Rng rng(DeriveSeed(identity_seed, 1));
  SyntheticSpeaker s;
  s.speaker_id = std::move(speaker_id);
  s.identity_seed = identity_seed;
  s.gender = gender;
  s.age_band = age_band;
  s.base_f0_hz = base_f0_hz;
  const auto& scale_range =
      gender == Gender::kMale ? cfg.male_tract_scale : cfg.female_tract_scale;
  const double tract = Uniform(rng, scale_range[0], scale_range[1]);
  static constexpr std::array<std::array<double, 2>, kNumFormants> kBandwidths = {
      {{60.0, 110.0}, {80.0, 140.0}, {110.0, 190.0}, {160.0, 260.0}}};
  for (size_t i = 0; i < kNumFormants; ++i) {
    s.formant_hz[i] = kNeutralFormantHz[i] * tract * Uniform(rng, 0.95, 1.05);
    s.bandwidth_hz[i] = Uniform(rng, kBandwidths[i][0], kBandwidths[i][1]);
  }
  s.jitter = cfg.jitter_by_age[age_band] * Uniform(rng, 0.8, 1.2);
  s.shimmer = cfg.shimmer_by_age[age_band] * Uniform(rng, 0.8, 1.2);
  s.spectral_tilt = Uniform(rng, 1.2, 1.8);
  return s;
}

std::vector<SyntheticSpeaker> MakeSpeakerBank(size_t n, uint64_t seed, const VoiceConfig& cfg,
                                              const std::string& id_prefix) {
  if (n == 0) throw ContractError("speaker bank must be non-empty");
  const size_t n_female = (n + 1) / 2;
  const size_t n_male = n / 2;
  auto slots = [&](size_t count, uint64_t stream) {
    std::vector<size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(DeriveSeed(seed, stream));
    for (size_t i = count; i > 1; --i) std::swap(order[i - 1], order[UniformIndex(rng, i)]);
    return order;
  };
  const auto female_slots = slots(n_female, 11);
  const auto male_slots = slots(n_male, 12);

  std::vector<SyntheticSpeaker> bank;
  bank.reserve(n);
  char id[64];
  for (size_t i = 0; i < n; ++i) {
    const Gender gender = i % 2 == 0 ? Gender::kFemale : Gender::kMale;
    const size_t within = i / 2;
    const size_t count = gender == Gender::kFemale ? n_female : n_male;
    const size_t slot = gender == Gender::kFemale ? female_slots[within] : male_slots[within];
    const auto& band = gender == Gender::kFemale ? cfg.female_f0_hz : cfg.male_f0_hz;
    Rng rng(DeriveSeed(seed, 13, i));
    const double pos = (static_cast<double>(slot) + 0.2 + 0.6 * Uniform01(rng)) /
                       static_cast<double>(count);
    const double f0 = band[0] + pos * (band[1] - band[0]);
    std::snprintf(id, sizeof(id), "%s%03zu", id_prefix.c_str(), i);
    bank.push_back(MakeSpeaker(id, DeriveSeed(seed, 14, i), gender,
                               static_cast<int>(within % 3), f0, cfg));
  }
  return bank;
}

Waveform SynthUtterance(const SyntheticSpeaker& spk, double duration_s, uint64_t utt_seed,
                        const VoiceConfig& cfg) {
  if (duration_s < 0.5) throw ContractError("utterance duration must be at least 0.5 s");
  const int sr = cfg.sample_rate_hz;
  const size_t n = static_cast<size_t>(std::llround(duration_s * sr));
  Rng rng(DeriveSeed(spk.identity_seed, 2, utt_seed));

  // Content: a vowel sequence with syllabic amplitudes and occasional pauses.
  std::vector<Segment> segments;
  for (size_t pos = 0; pos < n;) {
    const size_t len = static_cast<size_t>(Uniform(rng, 0.06, 0.16) * sr);
    const auto& ratios = kVowelRatios[UniformIndex(rng, kVowelRatios.size())];
    Segment seg;
    for (size_t i = 0; i < kNumFormants; ++i) seg.formants[i] = spk.formant_hz[i] * ratios[i];
    seg.amplitude = Uniform01(rng) < 0.1 ? 0.03 : Uniform(rng, 0.45, 1.0);
    pos += len;
    seg.end_sample = std::min(pos, n);
    segments.push_back(seg);
  }
  const double f0_utt =
      spk.base_f0_hz * (1.0 + cfg.utterance_f0_spread * (2.0 * Uniform01(rng) - 1.0));
  const double target_rms = Uniform(rng, 0.05, 0.15);

  const size_t max_harm =
      std::max<size_t>(1, static_cast<size_t>(kMaxHarmonicHz / (f0_utt * 1.05)));
  std::vector<double> amp(max_harm + 1, 0.0);
  std::vector<double> out(n, 0.0);

  // AR(1) jitter / shimmer processes, updated once per block.
  constexpr double kRho = 0.9;
  const double innov = std::sqrt(1.0 - kRho * kRho);
  double jitter_state = 0.0, shimmer_state = 0.0;
  const double transition = 0.02 * sr;
  double phase = 0.0;
  size_t seg_idx = 0;

  for (size_t b0 = 0; b0 < n; b0 += kBlock) {
    const size_t b1 = std::min(n, b0 + kBlock);
    jitter_state = kRho * jitter_state + innov * spk.jitter * Gaussian(rng);
    shimmer_state = kRho * shimmer_state + innov * spk.shimmer * Gaussian(rng);
    while (segments[seg_idx].end_sample <= b0) ++seg_idx;

    // Formant targets and amplitude at the block centre, crossfading into the
    // next segment over the last `transition` samples.
    const Segment& cur = segments[seg_idx];
    const Segment& nxt = segments[std::min(seg_idx + 1, segments.size() - 1)];
    const double centre = 0.5 * static_cast<double>(b0 + b1);
    const double to_end = static_cast<double>(cur.end_sample) - centre;
    const double mix = to_end < transition ? 0.5 * (1.0 - to_end / transition) : 0.0;
    std::array<double, kNumFormants> formants;
    for (size_t i = 0; i < kNumFormants; ++i)
      formants[i] = (1.0 - mix) * cur.formants[i] + mix * nxt.formants[i];
    double envelope = (1.0 - mix) * cur.amplitude + mix * nxt.amplitude;
    const double edge = std::min(centre, static_cast<double>(n) - centre) / (0.02 * sr);
    if (edge < 1.0) envelope *= std::max(0.0, edge);
    envelope *= 1.0 + shimmer_state;

    const double f0 = f0_utt * (1.0 + jitter_state);
    const size_t n_harm = std::min(max_harm, static_cast<size_t>(kMaxHarmonicHz / f0));
    amp[1] = 1.0;
    for (size_t h = 2; h <= max_harm; ++h) {
      if (h > n_harm) {
        amp[h] = 0.0;
        continue;
      }
      const double f = static_cast<double>(h) * f0;
      double shape = kEnvelopeFloor;
      for (size_t i = 0; i < kNumFormants; ++i) {
        const double d = (f - formants[i]) / spk.bandwidth_hz[i];
        shape = std::max(shape, kFormantGain[i] / (1.0 + d * d));
      }
      amp[h] = std::pow(static_cast<double>(h), -spk.spectral_tilt) * shape;
    }

    const double dphi = kTwoPi * f0 / sr;
    for (size_t t = b0; t < b1; ++t) {
      phase += dphi;
      if (phase > kTwoPi) phase -= kTwoPi;
      // sin(h*phi) by the Chebyshev recurrence.
      const double s1 = std::sin(phase);
      const double c2 = 2.0 * std::cos(phase);
      double prev = 0.0, cur_s = s1, acc = amp[1] * s1;
      for (size_t h = 2; h <= n_harm; ++h) {
        const double next = c2 * cur_s - prev;
        prev = cur_s;
        cur_s = next;
        acc += amp[h] * next;
      }
      out[t] = envelope * acc;
    }
  }

  Waveform w;
  w.sample_rate_hz = sr;
  const double rms = Rms(out);
  const double gain = rms > 0.0 ? target_rms / rms : 0.0;
  for (double& v : out) v *= gain;
  w.samples = std::move(out);
  ClipInPlace(w, "synth_utterance");
  return w;
}

void ApplyChannel(Waveform& w, const ChannelConfig& cfg, uint64_t seed) {
  if (!cfg.enabled || w.samples.empty()) return;
  if (!(cfg.max_tilt >= 0.0 && cfg.max_tilt < 1.0))
    throw ContractError("channel tilt must lie in [0, 1)");
  if (!(cfg.band_hz[0] > 0.0 && cfg.band_hz[0] <= cfg.band_hz[1] &&
        cfg.band_hz[1] < 0.5 * w.sample_rate_hz) || !(cfg.band_q > 0.0))
    throw ContractError("channel bands must lie inside (0, nyquist) with positive Q");
  Rng rng(seed);
  const double rms_in = Rms(w.samples);
  const double tilt = Uniform(rng, -cfg.max_tilt, cfg.max_tilt);
  double prev = 0.0;
  for (double& x : w.samples) {
    const double y = x + tilt * prev;
    prev = x;
    x = y;
  }
  // RBJ peaking biquads.
  for (size_t b = 0; b < cfg.n_bands; ++b) {
    const double f = cfg.band_hz[0] * std::pow(cfg.band_hz[1] / cfg.band_hz[0], Uniform01(rng));
    const double gain_db = Uniform(rng, -cfg.max_band_gain_db, cfg.max_band_gain_db);
    const double a = std::pow(10.0, gain_db / 40.0);
    const double w0 = kTwoPi * f / w.sample_rate_hz;
    const double alpha = std::sin(w0) / (2.0 * cfg.band_q);
    const double a0 = 1.0 + alpha / a;
    const double b0 = (1.0 + alpha * a) / a0, b1 = -2.0 * std::cos(w0) / a0,
                 b2 = (1.0 - alpha * a) / a0, a1 = b1, a2 = (1.0 - alpha / a) / a0;
    double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
    for (double& x : w.samples) {
      const double y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = x;
      y2 = y1;
      y1 = y;
      x = y;
    }
  }
  const double rms_out = Rms(w.samples);
  if (rms_out > 0.0)
    for (double& x : w.samples) x *= rms_in / rms_out;
  ClipInPlace(w, "channel");
}

}  // namespace delulu
