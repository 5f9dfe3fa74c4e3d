// src/encoder/checkpoint.cc

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

#include "delulu/encoder/checkpoint.h"

#include <cstring>
#include <fstream>
#include <iterator>

#include "delulu/base/error.h"

namespace delulu {

namespace {

constexpr char kMagic[4] = {'D', 'L', 'L', 'U'};
constexpr uint32_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void Put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void PutString(const std::string& s) {
    Put<uint64_t>(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void PutTensor(const Tensor& t) {
    Put<uint64_t>(t.rows());
    Put<uint64_t>(t.cols());
    const auto* p = reinterpret_cast<const char*>(t.data());
    buf_.insert(buf_.end(), p, p + t.size() * sizeof(double));
  }
  const std::vector<char>& bytes() const { return buf_; }
  std::vector<char>& bytes() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string path) : buf_(std::move(bytes)), path_(std::move(path)) {}

  template <typename T>
  T Get() {
    Need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string GetString() {
    const uint64_t n = Get<uint64_t>();
    Need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  Tensor GetTensor() {
    const uint64_t r = Get<uint64_t>(), c = Get<uint64_t>();
    if (c != 0 && r > (buf_.size() - pos_) / sizeof(double) / c) Need(buf_.size() + 1);
    Tensor t(r, c);
    Need(t.size() * sizeof(double));
    std::memcpy(t.data(), buf_.data() + pos_, t.size() * sizeof(double));
    pos_ += t.size() * sizeof(double);
    return t;
  }
  bool AtEnd() const { return pos_ == buf_.size(); }

 private:
  void Need(size_t n) const {
    if (pos_ + n > buf_.size() || pos_ + n < pos_)
      throw DataError(path_ + ": truncated checkpoint");
  }
  std::vector<char> buf_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

void SaveCheckpoint(const std::filesystem::path& path, const Encoder& encoder,
                    const CheckpointExtras* extras) {
  Writer w;
  w.bytes().insert(w.bytes().end(), kMagic, kMagic + 4);
  w.Put<uint32_t>(kVersion);
  w.PutString(nlohmann::json(encoder.config()).dump());
  w.Put<uint64_t>(encoder.params().size());
  for (const auto& p : encoder.params()) {
    w.PutString(p.name);
    w.PutTensor(p.value);
  }
  w.Put<uint8_t>(extras != nullptr);
  if (extras) {
    w.PutString(extras->meta.dump());
    w.Put<uint64_t>(extras->tensors.size());
    for (const auto& t : extras->tensors) w.PutTensor(t);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw DataError(path.string() + ": not a delulu checkpoint");
  Reader r(std::move(bytes), path.string());
  r.Get<uint32_t>();
  const uint32_t version = r.Get<uint32_t>();
  if (version != kVersion)
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  EncoderConfig cfg;
  try {
    cfg = nlohmann::json::parse(r.GetString()).get<EncoderConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad config: " + e.what());
  }
  ParameterSet params;
  const uint64_t n = r.Get<uint64_t>();
  for (uint64_t i = 0; i < n; ++i) {
    std::string name = r.GetString();
    params.Add(std::move(name), r.GetTensor());
  }
  std::optional<CheckpointExtras> extras;
  if (r.Get<uint8_t>()) {
    CheckpointExtras e;
    try {
      e.meta = nlohmann::json::parse(r.GetString());
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(path.string() + ": bad train state: " + ex.what());
    }
    const uint64_t nt = r.Get<uint64_t>();
    for (uint64_t i = 0; i < nt; ++i) e.tensors.push_back(r.GetTensor());
    extras = std::move(e);
  }
  if (!r.AtEnd()) throw DataError(path.string() + ": trailing bytes in checkpoint");
  return {Encoder(cfg, std::move(params)), std::move(extras)};
}

}  // namespace delulu
