// include/delulu/teacher/teacher.h

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
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "delulu/audio/synth.h"
#include "delulu/audio/waveform.h"
#include "delulu/encoder/encoder.h"

namespace delulu {

enum class TeacherKind { kOracle, kSpectral, kExternal };
const char* TeacherKindName(TeacherKind k);
TeacherKind ParseTeacherKind(const std::string& s);

struct TeacherConfig {
  TeacherKind kind = TeacherKind::kOracle;
  size_t embed_dim = 64;
  double frame_period_ms = 16.0;
  // Analysis window; defaults to the student's receptive field.
  size_t window_samples = 322;
  int sample_rate_hz = 16000;
  uint64_t seed = 7;
  // Oracle: per-frame content-noise level.
  double content_noise = 0.1;
  // Spectral: embed_dim must equal n_mels + n_coeffs.
  size_t n_mels = 40;
  size_t n_coeffs = 24;

  void Validate() const;
  size_t HopSamples() const;
};

void to_json(nlohmann::json& j, const TeacherConfig& c);
void from_json(const nlohmann::json& j, TeacherConfig& c);

// Teacher config whose frame rate and window match a student geometry.
TeacherConfig TeacherConfigFor(const EncoderConfig& student, TeacherKind kind);

struct TeacherFrames {
  std::string utt_id;
  TeacherKind kind = TeacherKind::kOracle;
  FrameSequence frames;
};

// Frames for n samples at the teacher's window and hop (0 if shorter than
// one window).
size_t TeacherFrameCount(size_t n_samples, const TeacherConfig& cfg);

// Oracle frames need the speaker record; spectral frames ignore it.
TeacherFrames TeacherEmbed(const Waveform& w, const TeacherConfig& cfg, const std::string& utt_id,
                           const SyntheticSpeaker* speaker);

constexpr size_t kSpeakerAttributeCount = 12;

// Standardized voice parameters (log f0, log formants, log bandwidths, tilt,
// log jitter, log shimmer): the oracle's speaker identity vector. Similar
// voices get nearby vectors.
std::vector<double> SpeakerAttributes(const SyntheticSpeaker& speaker);

// Fixed random projection of the identity vector; the oracle scatters frames
// around it.
std::vector<double> OracleCentroid(const SyntheticSpeaker& speaker, const TeacherConfig& cfg);

// Trims teacher frames to min(student_T, teacher_T); the caller trims the
// student side to the returned length. Throws DataError on a discrepancy of
// more than two frames.
TeacherFrames AlignFrames(size_t student_t, const TeacherFrames& teacher);

// Triangular HTK-mel filterbank over an n_fft-point spectrum (n_mels x bins).
std::vector<std::vector<double>> MelFilterbank(size_t n_mels, size_t n_fft, int sample_rate_hz,
                                               double f_lo, double f_hi);

// Binary blocks (u32 id length, id bytes, u64 T, u64 dim, f32 values) plus
// <path>.index.json mapping utt_id to byte offset.
void WriteTeacherFrames(const std::filesystem::path& path, const std::vector<TeacherFrames>& all);
std::vector<TeacherFrames> ReadTeacherFrames(const std::filesystem::path& path,
                                             double frame_period_ms = 16.0);
std::map<std::string, uint64_t> ReadTeacherIndex(const std::filesystem::path& path);

}  // namespace delulu
