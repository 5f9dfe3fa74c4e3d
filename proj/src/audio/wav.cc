// src/audio/wav.cc

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

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "delulu/audio/waveform.h"
#include "delulu/base/error.h"
#include "delulu/base/log.h"

namespace delulu {

namespace {

static_assert(std::endian::native == std::endian::little,
              "WAV and checkpoint codecs assume a little-endian host");

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

  bool Has(size_t n) const { return pos_ + n <= bytes_.size(); }
  size_t pos() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }

  template <typename T>
  T Get(const char* what) {
    if (!Has(sizeof(T))) throw DataError(std::string("truncated ") + what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string Tag(const char* what) {
    if (!Has(4)) throw DataError(std::string("truncated ") + what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), 4);
    pos_ += 4;
    return s;
  }
  void Skip(size_t n) { pos_ += n; }
  const uint8_t* here() const { return bytes_.data() + pos_; }

 private:
  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
};

template <typename T>
void Put(std::vector<uint8_t>& out, T v) {
  uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

void PutTag(std::vector<uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

}  // namespace

Waveform ParseWav(std::span<const uint8_t> bytes) {
  if (bytes.size() < 12) throw DataError("truncated RIFF header");
  Reader r(bytes);
  if (r.Tag("RIFF header") != "RIFF") throw DataError("not a RIFF file");
  r.Get<uint32_t>("RIFF header");
  if (r.Tag("RIFF header") != "WAVE") throw DataError("RIFF file is not WAVE");

  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  while (r.remaining() >= 8) {
    const std::string id = r.Tag("chunk header");
    const uint32_t size = r.Get<uint32_t>("chunk header");
    if (id == "fmt ") {
      if (size < 16 || !r.Has(size)) throw DataError("truncated fmt chunk");
      const size_t start = r.pos();
      format = r.Get<uint16_t>("fmt chunk");
      channels = r.Get<uint16_t>("fmt chunk");
      rate = r.Get<uint32_t>("fmt chunk");
      r.Get<uint32_t>("fmt chunk");  // byte rate
      r.Get<uint16_t>("fmt chunk");  // block align
      bits = r.Get<uint16_t>("fmt chunk");
      if (format == kFormatExtensible) {
        if (size < 40) throw DataError("truncated WAVE_FORMAT_EXTENSIBLE fmt chunk");
        r.Skip(8);  // cbSize, valid bits, channel mask
        format = r.Get<uint16_t>("fmt chunk");
      }
      r.Skip(size - (r.pos() - start));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError("data chunk before fmt chunk");
      if (channels != 1)
        throw DataError("expected mono audio, got " + std::to_string(channels) + " channels");
      if (rate == 0) throw DataError("sample rate is zero");
      if (!r.Has(size)) throw DataError("truncated data chunk");
      Waveform w;
      w.sample_rate_hz = static_cast<int>(rate);
      if (format == kFormatPcm && bits == 16) {
        w.samples.resize(size / 2);
        for (size_t i = 0; i < w.samples.size(); ++i) {
          int16_t v;
          std::memcpy(&v, r.here() + 2 * i, 2);
          w.samples[i] = static_cast<double>(v) / 32768.0;
        }
      } else if (format == kFormatFloat && bits == 32) {
        w.samples.resize(size / 4);
        for (size_t i = 0; i < w.samples.size(); ++i) {
          float v;
          std::memcpy(&v, r.here() + 4 * i, 4);
          w.samples[i] = static_cast<double>(v);
        }
      } else {
        throw DataError("unsupported WAV codec: format " + std::to_string(format) + ", " +
                        std::to_string(bits) + " bits (need PCM-16 or float-32)");
      }
      if (w.samples.empty()) throw DataError("WAV file has no samples");
      return w;
    } else {
      if (!r.Has(size)) throw DataError("truncated '" + id + "' chunk");
      r.Skip(size + (size & 1));
    }
  }
  throw DataError(have_fmt ? "missing data chunk" : "missing fmt chunk");
}

Waveform ReadWav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  try {
    return ParseWav(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<uint8_t> EncodeWav(const Waveform& w, WavEncoding encoding) {
  const bool pcm = encoding == WavEncoding::kPcm16;
  const uint16_t bits = pcm ? 16 : 32;
  const uint32_t data_bytes = static_cast<uint32_t>(w.samples.size() * (bits / 8));
  std::vector<uint8_t> out;
  out.reserve(44 + data_bytes);
  PutTag(out, "RIFF");
  Put<uint32_t>(out, 36 + data_bytes);
  PutTag(out, "WAVE");
  PutTag(out, "fmt ");
  Put<uint32_t>(out, 16);
  Put<uint16_t>(out, pcm ? kFormatPcm : kFormatFloat);
  Put<uint16_t>(out, 1);
  Put<uint32_t>(out, static_cast<uint32_t>(w.sample_rate_hz));
  Put<uint32_t>(out, static_cast<uint32_t>(w.sample_rate_hz) * (bits / 8));
  Put<uint16_t>(out, bits / 8);
  Put<uint16_t>(out, bits);
  PutTag(out, "data");
  Put<uint32_t>(out, data_bytes);
  for (double s : w.samples) {
    if (pcm) {
      const double q = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
      Put<int16_t>(out, static_cast<int16_t>(std::clamp(q, -32768.0, 32767.0)));
    } else {
      Put<float>(out, static_cast<float>(s));
    }
  }
  return out;
}

void WriteWav(const Waveform& w, const std::filesystem::path& path, WavEncoding encoding) {
  const auto bytes = EncodeWav(w, encoding);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

double Rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double ss = 0.0;
  for (double v : x) ss += v * v;
  return std::sqrt(ss / static_cast<double>(x.size()));
}

size_t ClipInPlace(Waveform& w, const char* context) {
  size_t clipped = 0;
  for (double& s : w.samples) {
    if (s > 1.0 || s < -1.0) {
      s = std::clamp(s, -1.0, 1.0);
      ++clipped;
    }
  }
  if (clipped > 0) log().warn("{}: clipped {} samples to [-1, 1]", context, clipped);
  return clipped;
}

}  // namespace delulu
