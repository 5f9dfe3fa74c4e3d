// include/delulu/train/train.h

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
#include <vector>

#include <nlohmann/json.hpp>

#include "delulu/audio/corpus.h"
#include "delulu/audio/noise.h"
#include "delulu/cluster/kmeans.h"
#include "delulu/encoder/encoder.h"
#include "delulu/numerics/optimizer.h"

namespace delulu {

struct MaskConfig {
  double mask_prob = 0.08;
  size_t span_len = 10;
};

// Each frame starts a span with probability mask_prob; a span covers
// min(span_len, T - start) frames. Returns the union.
std::vector<bool> SampleMask(size_t t_len, const MaskConfig& cfg, Rng& rng);

// SampleMask redrawn until at least one frame is masked and one is not
// (after 100 draws the first or last frame is flipped). Needs T >= 2.
std::vector<bool> SampleTrainingMask(size_t t_len, const MaskConfig& cfg, Rng& rng);

// (1/T) sum_t ||clean_t - noisy_t||^2 over frames not marked in pad. clean
// enters as a constant.
Var DenoisingLoss(const Tensor& clean, Var noisy, const std::vector<bool>& pad = {});
double DenoisingLoss(const FrameSequence& clean, const FrameSequence& noisy,
                     const std::vector<bool>& pad = {});

// Mean over masked t of -log softmax(logits_t)[labels_t].
Var MaskedPredictionLoss(Var logits, const std::vector<uint16_t>& labels,
                         const std::vector<bool>& mask);

// mask_loss + lambda * denoise_loss; NumericError on non-finite input.
double TotalLoss(double mask_loss, double denoise_loss, double lambda);

struct TrainConfig {
  EncoderConfig encoder;
  MaskConfig mask;
  double lambda = 1.0;
  size_t batch_size = 4;
  // Random crop length per example; 0 keeps whole utterances.
  double crop_s = 0.5;
  LrSchedule schedule;
  AdamWConfig adamw;
  double clip_norm = 10.0;
  NoiseBankConfig noise;
  size_t checkpoint_every = 1000;
  uint64_t seed = 1;
  // Feed the masked-prediction pass the noisy instead of the clean waveform.
  bool mask_on_noisy = false;
  // Worker threads for batch assembly; results do not depend on it.
  size_t jobs = 1;

  void Validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainExample {
  std::string utt_id;
  Waveform clean;
  Waveform noisy;
  std::vector<bool> mask;
  std::vector<uint16_t> labels;
};

struct LossReport {
  uint64_t step = 0;
  double lr = 0.0;
  double loss_mask = 0.0;
  double loss_denoise = 0.0;
  double loss_total = 0.0;
  double grad_norm = 0.0;
};

void to_json(nlohmann::json& j, const LossReport& r);

struct LossParts {
  double mask = 0.0;
  double denoise = 0.0;
};

// Stop-gradient denoising target: final-layer frames of the clean input.
Tensor DenoisingTarget(const Encoder& enc, const Waveform& clean);

// Graph for one example's mask + lambda * denoise loss against a fixed
// target. With lambda == 0 the noisy pass is evaluated outside the graph.
Var ExampleLoss(Encoder& enc, const Encoder::Bound& p, Graph& g, const TrainExample& ex,
                const Tensor& target, const TrainConfig& cfg, LossParts* parts = nullptr);

struct TrainState {
  uint64_t step = 0;
  OptimizerState optimizer;
  double avg_mask = 0.0;
  double avg_denoise = 0.0;
  double avg_total = 0.0;
};

// Pseudo-labels trimmed to the student frame count, per utterance.
struct AlignedCorpus {
  const Corpus* corpus = nullptr;
  std::vector<std::vector<uint16_t>> labels;
  size_t k = 0;
};

// Errors before any training when an utterance lacks labels, a label exceeds
// the code count or frame counts disagree by more than two.
AlignedCorpus AlignLabels(const Corpus& corpus, const PseudoLabelSet& labels,
                          const EncoderConfig& enc);

// The batch for a step is a pure function of (seed, step).
std::vector<TrainExample> MakeBatch(const AlignedCorpus& data, const NoiseBank& noise,
                                    const TrainConfig& cfg, uint64_t step);

// Forward, backward, clip, AdamW at lr_at(step + 1); step += 1.
LossReport TrainStep(Encoder& enc, TrainState& state, const std::vector<TrainExample>& batch,
                     const TrainConfig& cfg);

struct TrainRun {
  std::filesystem::path final_checkpoint;
  std::filesystem::path log_path;
  LossReport last;
};

// Writes <out>/train_log.jsonl, <out>/checkpoints/step_NNNNNN.ckpt every
// checkpoint_every steps and <out>/encoder.ckpt at the end. With resume set,
// continues from that checkpoint's train state.
TrainRun TrainLoop(const TrainConfig& cfg, const Corpus& corpus, const PseudoLabelSet& labels,
                   const std::filesystem::path& out_dir,
                   const std::optional<std::filesystem::path>& resume = std::nullopt);

// Train state persisted as checkpoint extras.
void SaveTrainCheckpoint(const std::filesystem::path& path, const Encoder& enc,
                         const TrainState& state, const TrainConfig& cfg);
TrainState LoadTrainState(const std::filesystem::path& path, Encoder& enc);

}  // namespace delulu
