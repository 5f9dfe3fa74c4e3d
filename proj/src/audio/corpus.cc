// src/audio/corpus.cc

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

#include "delulu/audio/corpus.h"

#include <fstream>
#include <set>

#include "delulu/base/error.h"
#include "delulu/base/rng.h"

namespace fs = std::filesystem;

namespace delulu {

void to_json(nlohmann::json& j, const UtteranceRecord& r) {
  j = nlohmann::json::object();
  j["utt_id"] = r.utt_id;
  j["speaker_id"] = r.speaker_id;
  j["path"] = r.path;
  j["duration_s"] = r.duration_s;
  j["gender"] = r.gender;
  j["age_band"] = r.age_band;
}

void from_json(const nlohmann::json& j, UtteranceRecord& r) {
  r.utt_id = j.at("utt_id").get<std::string>();
  r.speaker_id = j.at("speaker_id").get<std::string>();
  r.path = j.at("path").get<std::string>();
  r.duration_s = j.at("duration_s").get<double>();
  r.gender = j.at("gender").get<std::string>();
  r.age_band = j.at("age_band").get<std::string>();
}

std::vector<UtteranceRecord> ReadManifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::vector<UtteranceRecord> records;
  std::set<std::string> seen;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      UtteranceRecord r = nlohmann::json::parse(line).get<UtteranceRecord>();
      if (!seen.insert(r.utt_id).second) throw DataError("duplicate utt_id '" + r.utt_id + "'");
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (records.empty()) throw DataError("manifest " + path.string() + " is empty");
  return records;
}

void WriteManifest(const fs::path& path, const std::vector<UtteranceRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
}

const SyntheticSpeaker* Corpus::FindSpeaker(const std::string& speaker_id) const {
  for (const auto& s : speakers)
    if (s.speaker_id == speaker_id) return &s;
  return nullptr;
}

std::vector<std::string> Corpus::SpeakerIds() const {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& u : utterances)
    if (seen.insert(u.record.speaker_id).second) ids.push_back(u.record.speaker_id);
  return ids;
}

Corpus GenerateCorpus(const CorpusConfig& cfg) {
  if (cfg.utts_per_speaker == 0) throw ContractError("utts_per_speaker must be positive");
  Corpus c;
  c.speakers = MakeSpeakerBank(cfg.n_speakers, cfg.seed, cfg.voice, cfg.id_prefix);
  char id[96];
  for (size_t s = 0; s < c.speakers.size(); ++s) {
    const SyntheticSpeaker& spk = c.speakers[s];
    for (size_t u = 0; u < cfg.utts_per_speaker; ++u) {
      Utterance utt;
      std::snprintf(id, sizeof(id), "%s_u%03zu", spk.speaker_id.c_str(), u);
      utt.record.utt_id = id;
      utt.record.speaker_id = spk.speaker_id;
      utt.record.path = std::string("wav/") + id + ".wav";
      utt.record.duration_s = cfg.duration_s;
      utt.record.gender = GenderName(spk.gender);
      utt.record.age_band = AgeBandName(spk.age_band);
      utt.audio = SynthUtterance(spk, cfg.duration_s, DeriveSeed(cfg.seed, 30, s * 100003 + u),
                                 cfg.voice);
      ApplyChannel(utt.audio, cfg.channel, DeriveSeed(cfg.seed, 31, s * 100003 + u));
      c.utterances.push_back(std::move(utt));
    }
  }
  return c;
}

void WriteCorpus(const Corpus& corpus, const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw UsageError("output directory " + dir.string() + " is not empty (use --force)");
  fs::create_directories(dir / "wav");
  std::vector<UtteranceRecord> records;
  for (const auto& u : corpus.utterances) {
    WriteWav(u.audio, dir / u.record.path);
    records.push_back(u.record);
  }
  WriteManifest(dir / "manifest.jsonl", records);
  if (!corpus.speakers.empty()) {
    std::ofstream out(dir / "speakers.json");
    out << nlohmann::json(corpus.speakers).dump(2) << '\n';
  }
}

Corpus LoadCorpus(const fs::path& manifest) {
  Corpus c;
  const fs::path base = manifest.parent_path();
  const fs::path speakers = base / "speakers.json";
  if (fs::exists(speakers)) {
    std::ifstream in(speakers);
    try {
      c.speakers = nlohmann::json::parse(in).get<std::vector<SyntheticSpeaker>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(speakers.string() + ": " + e.what());
    }
  }
  for (auto& r : ReadManifest(manifest)) {
    Utterance u;
    const fs::path p = fs::path(r.path).is_absolute() ? fs::path(r.path) : base / r.path;
    u.audio = ReadWav(p);
    u.record = std::move(r);
    c.utterances.push_back(std::move(u));
  }
  return c;
}

}  // namespace delulu
