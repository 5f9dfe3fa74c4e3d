// include/delulu/audio/waveform.h

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
#include <span>
#include <vector>

namespace delulu {

// Mono signal in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = 16000;

  size_t size() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate_hz);
  }
};

enum class WavEncoding { kPcm16, kFloat32 };

// Reads a mono RIFF/WAVE file (PCM 16-bit or IEEE float 32-bit). The sample
// rate is recorded as-is; resampling is left to the caller.
Waveform ReadWav(const std::filesystem::path& path);
Waveform ParseWav(std::span<const uint8_t> bytes);
void WriteWav(const Waveform& w, const std::filesystem::path& path,
              WavEncoding encoding = WavEncoding::kPcm16);
std::vector<uint8_t> EncodeWav(const Waveform& w, WavEncoding encoding = WavEncoding::kPcm16);

double Rms(std::span<const double> x);

// Clamps to [-1, 1]; logs a warning naming `context` when anything clipped.
// Returns the number of clipped samples.
size_t ClipInPlace(Waveform& w, const char* context);

}  // namespace delulu
