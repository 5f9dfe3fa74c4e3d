// include/delulu/cli/pipeline.h

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
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "delulu/audio/corpus.h"
#include "delulu/cluster/kmeans.h"
#include "delulu/eval/eval.h"
#include "delulu/teacher/teacher.h"
#include "delulu/train/train.h"

namespace delulu {

struct DataConfig {
  size_t train_speakers = 20;
  size_t eval_speakers = 10;
  size_t utts_per_speaker = 10;
  double duration_s = 1.0;
  VoiceConfig voice;
  ChannelConfig channel;
};

struct EvalConfig {
  size_t n_trials = 2000;
  size_t knn_k = 5;
  size_t knn_folds = 5;
  // Probe utterances per class for the synthetic zero-shot tasks.
  size_t probes_per_class = 20;
  int layer = -1;
  double noisy_snr_db = 20.0;
  DownstreamConfig downstream;
};

// One file governs a run. Module seeds are derived from `seed` by
// Propagate(); per-module seed fields in a loaded file are overwritten.
// Pipeline training defaults: narrower conv stack and a lower peak LR.
TrainConfig DeskTrainConfig();

struct RunConfig {
  uint64_t seed = 1;
  std::string workdir = "delulu_run";
  // Empty paths resolve under workdir.
  struct Paths {
    std::string train_manifest;
    std::string eval_manifest;
    std::string teacher_frames;
    std::string labels;
    std::string checkpoint;
  } paths;
  DataConfig data;
  TeacherConfig teacher{.content_noise = 1.0};
  // Teacher frame period and window follow the student geometry.
  bool teacher_match_student = true;
  // cluster.k == 0 selects min(256, 2 * train_speakers).
  KMeansConfig cluster{.k = 0};
  TrainConfig train = DeskTrainConfig();
  EvalConfig eval;
  size_t jobs = 1;
  // Single-threaded everywhere.
  bool deterministic = false;

  void Propagate();
  void Validate() const;

  std::filesystem::path Workdir() const { return workdir; }
  std::filesystem::path TrainManifest() const;
  std::filesystem::path EvalManifest() const;
  std::filesystem::path TeacherFramesPath() const;
  std::filesystem::path LabelsPath() const;
  std::filesystem::path TrainDir() const;
  std::filesystem::path CheckpointPath() const;
  std::filesystem::path EvalDir() const;
  size_t EffectiveK() const;
  size_t Jobs() const { return deterministic ? 1 : jobs; }
  TeacherConfig EffectiveTeacher() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig LoadRunConfig(const std::filesystem::path& path);

enum class Split { kTrain, kEval };

struct GenDataOptions {
  Split split = Split::kTrain;
  std::optional<std::filesystem::path> out;
  bool force = false;
};

// Each command writes its artifacts and returns a JSON summary.
nlohmann::json GenData(const RunConfig& cfg, const GenDataOptions& opt);
nlohmann::json TeacherExtract(const RunConfig& cfg);
nlohmann::json ClusterFrames(const RunConfig& cfg);
nlohmann::json TrainEncoder(const RunConfig& cfg,
                            const std::optional<std::filesystem::path>& resume = std::nullopt);

// The encoder an evaluation command scores: a checkpoint, or a freshly
// initialized one when random is set.
struct EvalTarget {
  std::optional<std::filesystem::path> checkpoint;
  bool random = false;
  std::string Name() const;
};

Encoder LoadTarget(const RunConfig& cfg, const EvalTarget& target);

// Upstream verification on the eval split: EER overall and per gender and
// age band; with noisy set, every utterance is corrupted at
// eval.noisy_snr_db first.
nlohmann::json EvalSv(const RunConfig& cfg, const EvalTarget& target, bool noisy = false);

// Zero-shot task: gender | age_band | speaker_count | distance.
nlohmann::json EvalKnn(const RunConfig& cfg, const EvalTarget& target, const std::string& task);

// Probe corpora for the synthetic zero-shot tasks; the class of each probe
// is returned alongside.
struct ProbeSet {
  Corpus corpus;
  std::vector<std::string> labels;
};
ProbeSet MakeSpeakerCountProbes(const Corpus& source, size_t per_class, uint64_t seed);
ProbeSet MakeDistanceProbes(const Corpus& source, size_t per_class, uint64_t seed);

nlohmann::json Stats(const RunConfig& cfg, const EvalTarget& target);

// Frozen encoder + AM-Softmax head, utterances of one split's speakers
// divided into head-train and held-out test sets.
nlohmann::json Downstream(const RunConfig& cfg, const EvalTarget& target,
                          Split split = Split::kTrain);

// Generates data when missing, then teacher -> cluster -> train -> eval-sv
// (clean and noisy) -> stats -> zero-shot KNN -> downstream, for the trained
// and a random encoder.
nlohmann::json RunPipeline(const RunConfig& cfg, bool force);

// key=v1,v2,... over k | teacher | stride | lambda. Shared data, independent
// teacher/cluster/train per point under <workdir>/ablate/<key>-<value>.
// Completed points are skipped; failing points record their error.
nlohmann::json Ablate(const RunConfig& cfg, const std::string& sweep);

}  // namespace delulu
