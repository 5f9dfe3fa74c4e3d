// include/delulu/audio/corpus.h

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

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "delulu/audio/synth.h"
#include "delulu/audio/waveform.h"

namespace delulu {

// One manifest line: {utt_id, speaker_id, path, duration_s, gender, age_band}.
struct UtteranceRecord {
  std::string utt_id;
  std::string speaker_id;
  std::string path;
  double duration_s = 0.0;
  std::string gender;
  std::string age_band;
};

void to_json(nlohmann::json& j, const UtteranceRecord& r);
void from_json(const nlohmann::json& j, UtteranceRecord& r);

std::vector<UtteranceRecord> ReadManifest(const std::filesystem::path& path);
void WriteManifest(const std::filesystem::path& path, const std::vector<UtteranceRecord>& records);

struct Utterance {
  UtteranceRecord record;
  Waveform audio;
};

struct CorpusConfig {
  size_t n_speakers = 20;
  size_t utts_per_speaker = 10;
  double duration_s = 1.0;
  uint64_t seed = 1;
  std::string id_prefix = "spk";
  VoiceConfig voice;
  ChannelConfig channel;
};

// Speakers (when synthetic) plus utterances in manifest order.
struct Corpus {
  std::vector<SyntheticSpeaker> speakers;
  std::vector<Utterance> utterances;

  const SyntheticSpeaker* FindSpeaker(const std::string& speaker_id) const;
  std::vector<std::string> SpeakerIds() const;
};

Corpus GenerateCorpus(const CorpusConfig& cfg);

// Writes wav/<utt_id>.wav, manifest.jsonl and speakers.json under dir. A
// non-empty dir is refused unless force is set.
void WriteCorpus(const Corpus& corpus, const std::filesystem::path& dir, bool force);

// Loads a manifest and its audio (paths relative to the manifest's
// directory). speakers.json next to the manifest is picked up when present.
Corpus LoadCorpus(const std::filesystem::path& manifest);

}  // namespace delulu
