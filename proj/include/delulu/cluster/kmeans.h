// include/delulu/cluster/kmeans.h

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

#include "delulu/base/rng.h"
#include "delulu/numerics/tensor.h"
#include "delulu/teacher/teacher.h"

namespace delulu {

struct KMeansConfig {
  size_t k = 40;
  size_t n_restarts = 20;
  size_t minibatch_size = 10000;
  size_t max_epochs = 50;
  // Stop a restart once an epoch improves full-data inertia by less than this
  // fraction.
  double tol = 1e-6;
  // Points drawn (without replacement) for k-means++ seeding.
  size_t init_sample = 20000;
  uint64_t seed = 1;
  // Worker threads for independent restarts; results do not depend on it.
  size_t jobs = 1;

  void Validate() const;
};

void to_json(nlohmann::json& j, const KMeansConfig& c);
void from_json(const nlohmann::json& j, KMeansConfig& c);

// k = min(256, 2 * n_speakers)
size_t DefaultClusterCount(size_t n_speakers);

struct KMeansModel {
  size_t k = 0;
  size_t dim = 0;
  Tensor centroids;
  std::vector<uint64_t> counts;
  double inertia = 0.0;
  uint64_t seed = 0;
  size_t n_restarts = 0;
  size_t minibatch_size = 0;
  size_t epochs_run = 0;
};

// Index of the nearest centroid; ties go to the lowest index.
size_t NearestCentroid(const Tensor& centroids, std::span<const double> x, double* d2 = nullptr);

// k-means++ seeding on the rows of sample. Throws DataError when the sample
// has fewer than k distinct rows.
Tensor KMeansPlusPlusInit(const Tensor& sample, size_t k, uint64_t seed);

// Streams the batch rows in order: nearest centroid, count += 1, centroid
// moves toward the point by 1/count.
void MinibatchUpdate(KMeansModel& model, const Tensor& batch);

// Sum of squared distances to the nearest centroid. Refreshes counts to this
// assignment.
double FullInertia(KMeansModel& model, const Tensor& frames);

// Exact assign-then-mean step. An emptied cluster is moved onto the point
// farthest from its assigned centroid (lowest row index on ties). Returns the
// inertia of the resulting model, which is also stored on it.
double FullLloydStep(KMeansModel& model, const Tensor& frames);

// n_restarts independent seedings + mini-batch epochs; keeps the lowest
// full-data inertia (earliest restart on ties).
KMeansModel FitKMeans(const Tensor& frames, const KMeansConfig& cfg);

// Pseudo-labels per utterance: the clustering targets for masked prediction.
struct PseudoLabelSet {
  size_t k = 0;
  std::string teacher_kind;
  uint64_t seed = 0;
  std::vector<std::string> order;
  std::map<std::string, std::vector<uint16_t>> labels;

  const std::vector<uint16_t>& At(const std::string& utt_id) const;
  void Add(const std::string& utt_id, std::vector<uint16_t> seq);
};

PseudoLabelSet AssignLabels(const KMeansModel& model, const std::vector<TeacherFrames>& frames,
                            const std::string& teacher_kind);

// Stacks all teacher frames into one matrix.
Tensor StackFrames(const std::vector<TeacherFrames>& frames);

// "DLBL", u32 version, u32 k, u32 n_utts, then per utterance u32 id length,
// id bytes, u64 T, T u16 labels. <path>.index.json holds metadata and offsets.
void WriteLabels(const std::filesystem::path& path, const PseudoLabelSet& labels);
PseudoLabelSet ReadLabels(const std::filesystem::path& path);

// Centroids as JSON for inspection and reuse.
void WriteKMeansModel(const std::filesystem::path& path, const KMeansModel& model);
KMeansModel ReadKMeansModel(const std::filesystem::path& path);

}  // namespace delulu
