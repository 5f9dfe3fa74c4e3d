// include/delulu/eval/eval.h

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
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "delulu/audio/corpus.h"
#include "delulu/encoder/encoder.h"

namespace delulu {

// Temporal mean of the chosen layer's frames, L2-normalized iff normalize.
std::vector<double> UtteranceEmbedding(const Encoder& enc, const Waveform& w, bool normalize,
                                       int layer = -1);

struct EmbeddingEntry {
  std::string utt_id;
  std::string speaker_id;
  std::map<std::string, std::string> tags;
  std::vector<double> embedding;
};

struct EmbeddingTable {
  std::vector<EmbeddingEntry> entries;
  bool normalized = false;

  size_t dim() const { return entries.empty() ? 0 : entries[0].embedding.size(); }
  const EmbeddingEntry& Find(const std::string& utt_id) const;
  void Add(EmbeddingEntry e);

 private:
  std::map<std::string, size_t> index_;
};

struct EmbedOptions {
  bool normalize = false;
  int layer = -1;
  size_t jobs = 1;
  // When set, each utterance is scored after mixing in colored or babble
  // noise at this SNR (seeded per utterance).
  std::optional<double> noisy_snr_db;
  uint64_t noise_seed = 1;
};

// Tags: gender and age_band from the manifest.
EmbeddingTable EmbedCorpus(const Encoder& enc, const Corpus& corpus, const EmbedOptions& opt);

// dot / (|a| |b|); DataError on a zero norm or dimension mismatch.
double CosineScore(std::span<const double> a, std::span<const double> b);

struct Trial {
  bool target = false;
  std::string a;
  std::string b;
};

// Balanced same/different-speaker pairs: min(n/2, #same, #different) of each,
// drawn without replacement (all of them when that many exist). With
// group_tag set, both sides of every trial share that tag's value.
std::vector<Trial> GenerateTrials(const EmbeddingTable& table, size_t n_trials, uint64_t seed,
                                  const std::string& group_tag = "");

// "<0|1> <utt_a> <utt_b>" per line.
void WriteTrials(const std::filesystem::path& path, const std::vector<Trial>& trials);
std::vector<Trial> ReadTrials(const std::filesystem::path& path);

struct ScoreSet {
  std::vector<double> scores;
  std::vector<bool> targets;
};

ScoreSet ScoreTrials(const EmbeddingTable& table, const std::vector<Trial>& trials);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Thresholds: the lowest score, midpoints of adjacent sorted unique scores
// and just above the highest score. FRR(t) = share of targets below t,
// FAR(t) = share of non-targets at or above t. The EER is read where FRR -
// FAR first reaches zero, linearly interpolated from the previous threshold.
EerResult ComputeEer(const ScoreSet& scores);

struct SubgroupEer {
  double eer = 0.0;
  double threshold = 0.0;
  size_t n_trials = 0;
  bool reliable = true;
};

// Per-value EER for trials grouped by a tag; groups below min_trials are
// flagged unreliable. A trial whose sides disagree on the tag is an error.
std::map<std::string, SubgroupEer> StratifiedEer(const EmbeddingTable& table,
                                                 const std::vector<Trial>& trials,
                                                 const std::string& group_tag,
                                                 size_t min_trials = 20);

struct F1Result {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> per_fold;
};

// Stratified k-fold KNN (cosine distance, ties to the smaller class index)
// scored by macro-F1.
F1Result KnnMacroF1(const EmbeddingTable& table,
                    const std::function<std::string(const EmbeddingEntry&)>& label_fn,
                    size_t k_neighbors = 5, size_t n_folds = 5, uint64_t seed = 1);

// Cross-entropy over s * (cos_y - m) for the target and s * cos_j otherwise.
// embeddings (N x D) and weights (C x D) rows must be unit norm.
Var AmSoftmaxLoss(Var embeddings, Var weights, const std::vector<size_t>& labels, double margin,
                  double scale);

struct DownstreamConfig {
  size_t epochs = 200;
  size_t batch_size = 32;
  double lr = 1e-3;
  double margin = 0.2;
  double scale = 30.0;
  // Share of each speaker's utterances held out for testing.
  double holdout = 0.4;
  uint64_t seed = 1;
};

struct DownstreamHead {
  std::vector<std::string> classes;
  Tensor weights;  // n_classes x dim
  double margin = 0.2;
  double scale = 30.0;

  size_t Predict(std::span<const double> embedding) const;
};

struct DownstreamResult {
  DownstreamHead head;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  size_t n_train = 0;
  size_t n_test = 0;
  std::vector<double> epoch_loss;
};

// Head-only training on a table of normalized embeddings (the encoder never
// sees a gradient). Utterances are split per speaker into train and test.
DownstreamResult TrainDownstream(const EmbeddingTable& table, const DownstreamConfig& cfg);

struct EmbeddingStats {
  double intra = 0.0;
  double inter = 0.0;
  double ratio = 0.0;
  size_t n_speakers = 0;
};

// Mean cosine distance within and across speakers and inter / intra.
EmbeddingStats ComputeEmbeddingStats(const EmbeddingTable& table);

// First two principal components of the embeddings.
std::vector<std::array<double, 2>> PcaCoordinates(const EmbeddingTable& table);
void WritePcaCsv(const std::filesystem::path& path, const EmbeddingTable& table,
                 const std::string& tag);

void WriteJson(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace delulu
