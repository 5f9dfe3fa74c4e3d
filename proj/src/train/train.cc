// src/train/train.cc

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

#include "delulu/train/train.h"

#include <cmath>
#include <fstream>
#include <future>

#include "delulu/base/error.h"
#include "delulu/base/log.h"
#include "delulu/encoder/checkpoint.h"
#include "delulu/teacher/teacher.h"

namespace delulu {

namespace {

constexpr double kAverageDecay = 0.99;

std::string StepName(uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%06llu.ckpt", static_cast<unsigned long long>(step));
  return buf;
}

Waveform Slice(const Waveform& w, size_t begin, size_t n) {
  Waveform out;
  out.sample_rate_hz = w.sample_rate_hz;
  out.samples.assign(w.samples.begin() + begin, w.samples.begin() + begin + n);
  return out;
}

}  // namespace

std::vector<bool> SampleMask(size_t t_len, const MaskConfig& cfg, Rng& rng) {
  std::vector<bool> m(t_len, false);
  for (size_t s = 0; s < t_len; ++s)
    if (Uniform01(rng) < cfg.mask_prob)
      for (size_t t = s; t < std::min(t_len, s + cfg.span_len); ++t) m[t] = true;
  return m;
}

std::vector<bool> SampleTrainingMask(size_t t_len, const MaskConfig& cfg, Rng& rng) {
  if (t_len < 2) throw ContractError("masking needs at least 2 frames, got " + std::to_string(t_len));
  std::vector<bool> m;
  for (int attempt = 0; attempt < 100; ++attempt) {
    m = SampleMask(t_len, cfg, rng);
    size_t n = 0;
    for (bool b : m) n += b;
    if (n > 0 && n < t_len) return m;
  }
  size_t n = 0;
  for (bool b : m) n += b;
  if (n == 0) m[0] = true;
  else m[t_len - 1] = false;
  return m;
}

Var DenoisingLoss(const Tensor& clean, Var noisy, const std::vector<bool>& pad) {
  if (!clean.same_shape(noisy.value()))
    throw ContractError("denoising loss: clean " + clean.shape_str() + " vs noisy " +
                        noisy.value().shape_str());
  if (!pad.empty() && pad.size() != clean.rows())
    throw ContractError("denoising loss: pad mask length mismatch");
  std::vector<bool> keep;
  if (!pad.empty()) {
    keep.resize(pad.size());
    for (size_t t = 0; t < pad.size(); ++t) keep[t] = !pad[t];
  }
  Var diff = Sub(noisy, noisy.graph->Constant(clean));
  return Sum(MeanRows(Square(diff), keep));
}

double DenoisingLoss(const FrameSequence& clean, const FrameSequence& noisy,
                     const std::vector<bool>& pad) {
  Graph g;
  return DenoisingLoss(clean.values, g.Constant(noisy.values), pad).value().item();
}

Var MaskedPredictionLoss(Var logits, const std::vector<uint16_t>& labels,
                         const std::vector<bool>& mask) {
  const size_t t_len = logits.rows();
  if (labels.size() != t_len || mask.size() != t_len)
    throw ContractError("masked prediction: " + std::to_string(t_len) + " frames but " +
                        std::to_string(labels.size()) + " labels and " +
                        std::to_string(mask.size()) + " mask entries");
  std::vector<size_t> rows, cols;
  for (size_t t = 0; t < t_len; ++t)
    if (mask[t]) {
      if (labels[t] >= logits.cols())
        throw ContractError("masked prediction: label " + std::to_string(labels[t]) +
                            " out of range for " + std::to_string(logits.cols()) + " codes");
      rows.push_back(t);
      cols.push_back(labels[t]);
    }
  if (rows.empty()) throw ContractError("masked prediction: empty mask");
  return Scale(Sum(Pick(LogSoftmax(logits), rows, cols)), -1.0 / static_cast<double>(rows.size()));
}

double TotalLoss(double mask_loss, double denoise_loss, double lambda) {
  if (!std::isfinite(mask_loss) || !std::isfinite(denoise_loss))
    throw NumericError("non-finite loss (mask " + std::to_string(mask_loss) + ", denoise " +
                       std::to_string(denoise_loss) + ")");
  return mask_loss + lambda * denoise_loss;
}

void TrainConfig::Validate() const {
  encoder.Validate();
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw UsageError("lambda must be >= 0");
  if (batch_size == 0) throw UsageError("batch_size must be positive");
  if (!(mask.mask_prob >= 0.0 && mask.mask_prob <= 1.0))
    throw UsageError("mask_prob must lie in [0, 1]");
  if (mask.span_len == 0) throw UsageError("span_len must be positive");
  if (!(crop_s >= 0.0)) throw UsageError("crop_s must be >= 0");
  if (!(clip_norm > 0.0)) throw UsageError("clip_norm must be > 0");
  if (noise.clips_per_kind == 0 || !(noise.clip_s > 0.0))
    throw UsageError("noise bank needs at least one clip of positive length");
  if (!(noise.snr_range_db[0] <= noise.snr_range_db[1]))
    throw UsageError("SNR range must be ordered");
  schedule.Validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"encoder", c.encoder},
       {"mask_prob", c.mask.mask_prob},
       {"span_len", c.mask.span_len},
       {"lambda", c.lambda},
       {"batch_size", c.batch_size},
       {"crop_s", c.crop_s},
       {"peak_lr", c.schedule.peak_lr},
       {"warmup_steps", c.schedule.warmup_steps},
       {"total_steps", c.schedule.total_steps},
       {"decay_power", c.schedule.decay_power},
       {"beta1", c.adamw.beta1},
       {"beta2", c.adamw.beta2},
       {"weight_decay", c.adamw.weight_decay},
       {"adam_epsilon", c.adamw.epsilon},
       {"clip_norm", c.clip_norm},
       {"noise_clips_per_kind", c.noise.clips_per_kind},
       {"noise_clip_s", c.noise.clip_s},
       {"snr_range_db", c.noise.snr_range_db},
       {"checkpoint_every", c.checkpoint_every},
       {"seed", c.seed},
       {"mask_on_noisy", c.mask_on_noisy}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.encoder = j.value("encoder", d.encoder);
  c.mask.mask_prob = j.value("mask_prob", d.mask.mask_prob);
  c.mask.span_len = j.value("span_len", d.mask.span_len);
  c.lambda = j.value("lambda", d.lambda);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.crop_s = j.value("crop_s", d.crop_s);
  c.schedule.peak_lr = j.value("peak_lr", d.schedule.peak_lr);
  c.schedule.warmup_steps = j.value("warmup_steps", d.schedule.warmup_steps);
  c.schedule.total_steps = j.value("total_steps", d.schedule.total_steps);
  c.schedule.decay_power = j.value("decay_power", d.schedule.decay_power);
  c.adamw.beta1 = j.value("beta1", d.adamw.beta1);
  c.adamw.beta2 = j.value("beta2", d.adamw.beta2);
  c.adamw.weight_decay = j.value("weight_decay", d.adamw.weight_decay);
  c.adamw.epsilon = j.value("adam_epsilon", d.adamw.epsilon);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.noise.clips_per_kind = j.value("noise_clips_per_kind", d.noise.clips_per_kind);
  c.noise.clip_s = j.value("noise_clip_s", d.noise.clip_s);
  c.noise.snr_range_db = j.value("snr_range_db", d.noise.snr_range_db);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.seed = j.value("seed", d.seed);
  c.mask_on_noisy = j.value("mask_on_noisy", d.mask_on_noisy);
}

void to_json(nlohmann::json& j, const LossReport& r) {
  j = {{"step", r.step},
       {"lr", r.lr},
       {"loss_mask", r.loss_mask},
       {"loss_denoise", r.loss_denoise},
       {"loss_total", r.loss_total},
       {"grad_norm", r.grad_norm}};
}

Tensor DenoisingTarget(const Encoder& enc, const Waveform& clean) {
  return enc.HiddenStates(clean).values;
}

Var ExampleLoss(Encoder& enc, const Encoder::Bound& p, Graph& g, const TrainExample& ex,
                const Tensor& target, const TrainConfig& cfg, LossParts* parts) {
  const bool denoise_grad = cfg.lambda > 0.0;
  Var clean_conv = enc.ConvStack(p, g, ex.clean);
  Var noisy_conv;
  if (denoise_grad || cfg.mask_on_noisy) noisy_conv = enc.ConvStack(p, g, ex.noisy);
  const size_t t_len = clean_conv.rows();
  if (ex.labels.size() != t_len)
    throw ContractError(ex.utt_id + ": " + std::to_string(ex.labels.size()) +
                        " pseudo-labels for " + std::to_string(t_len) + " student frames");

  Var pred_in = cfg.mask_on_noisy ? noisy_conv : clean_conv;
  Var hidden = enc.Transformer(p, enc.Features(p, pred_in, ex.mask), {});
  Var lm = MaskedPredictionLoss(enc.CodeLogits(p, hidden), ex.labels, ex.mask);

  Var ld;
  double ld_value;
  if (denoise_grad) {
    Var noisy_hidden = enc.Transformer(p, enc.Features(p, noisy_conv, {}), {});
    ld = DenoisingLoss(target, noisy_hidden);
    ld_value = ld.value().item();
  } else {
    Graph side;
    ld_value = DenoisingLoss(target, side.Constant(enc.HiddenStates(ex.noisy).values)).value().item();
  }
  TotalLoss(lm.value().item(), ld_value, cfg.lambda);
  if (parts) *parts = {lm.value().item(), ld_value};
  return denoise_grad ? Add(lm, Scale(ld, cfg.lambda)) : lm;
}

AlignedCorpus AlignLabels(const Corpus& corpus, const PseudoLabelSet& labels,
                          const EncoderConfig& enc) {
  if (labels.k > enc.n_codes)
    throw DataError("pseudo-labels use k=" + std::to_string(labels.k) + " but the encoder has " +
                    std::to_string(enc.n_codes) + " code embeddings");
  AlignedCorpus out;
  out.corpus = &corpus;
  out.k = labels.k;
  std::vector<std::string> missing;
  for (const auto& u : corpus.utterances)
    if (!labels.labels.count(u.record.utt_id)) missing.push_back(u.record.utt_id);
  if (!missing.empty())
    throw DataError("no pseudo-labels for " + std::to_string(missing.size()) +
                    " utterance(s), first: " + missing[0]);
  for (const auto& u : corpus.utterances) {
    const auto& seq = labels.At(u.record.utt_id);
    const size_t student_t = OutputLength(u.audio.samples.size(), enc);
    TeacherFrames shape;
    shape.utt_id = u.record.utt_id;
    shape.frames.values = Tensor(seq.size(), 1);
    const size_t t = AlignFrames(student_t, shape).frames.n_frames();
    if (t < 2) throw DataError(u.record.utt_id + ": too short to mask (" + std::to_string(t) + " frames)");
    out.labels.emplace_back(seq.begin(), seq.begin() + t);
  }
  return out;
}

std::vector<TrainExample> MakeBatch(const AlignedCorpus& data, const NoiseBank& noise,
                                    const TrainConfig& cfg, uint64_t step) {
  const Corpus& corpus = *data.corpus;
  const EncoderConfig& enc = cfg.encoder;
  Rng rng(DeriveSeed(cfg.seed, 50, step));
  const size_t hop = enc.StrideProduct(), rf = enc.ReceptiveField();
  size_t crop_frames = 0;
  if (cfg.crop_s > 0.0) {
    const size_t n = static_cast<size_t>(std::llround(cfg.crop_s * enc.sample_rate_hz));
    crop_frames = std::max<size_t>(2, n >= rf ? (n - rf) / hop + 1 : 0);
  }
  std::vector<TrainExample> batch(cfg.batch_size);
  for (auto& ex : batch) {
    const size_t u = UniformIndex(rng, corpus.utterances.size());
    const auto& utt = corpus.utterances[u];
    const auto& labels = data.labels[u];
    const size_t t_avail = labels.size();
    const size_t t_len = crop_frames == 0 ? t_avail : std::min(crop_frames, t_avail);
    const size_t start = UniformIndex(rng, t_avail - t_len + 1);
    ex.utt_id = utt.record.utt_id;
    ex.clean = Slice(utt.audio, start * hop, (t_len - 1) * hop + rf);
    ex.labels.assign(labels.begin() + start, labels.begin() + start + t_len);
    ex.mask = SampleTrainingMask(t_len, cfg.mask, rng);
    ex.noisy = noise.Corrupt(ex.clean, rng);
  }
  return batch;
}

LossReport TrainStep(Encoder& enc, TrainState& state, const std::vector<TrainExample>& batch,
                     const TrainConfig& cfg) {
  if (batch.empty()) throw ContractError("train step needs a non-empty batch");
  ParameterSet& params = enc.params();
  params.ZeroGrad();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  LossReport r;
  for (const auto& ex : batch) {
    const Tensor target = DenoisingTarget(enc, ex.clean);
    Graph g;
    auto p = enc.Bind(g);
    LossParts parts;
    Var loss = ExampleLoss(enc, p, g, ex, target, cfg, &parts);
    g.Backward(Scale(loss, inv_b));
    r.loss_mask += parts.mask * inv_b;
    r.loss_denoise += parts.denoise * inv_b;
  }
  r.loss_total = TotalLoss(r.loss_mask, r.loss_denoise, cfg.lambda);
  r.grad_norm = ClipGlobalNorm(params, cfg.clip_norm);
  if (!std::isfinite(r.grad_norm)) throw NumericError("non-finite gradient norm");
  r.lr = cfg.schedule.At(state.step + 1);
  AdamWStep(params, state.optimizer, r.lr);
  for (const auto& p : params)
    if (!p.value.all_finite()) throw NumericError("parameter " + p.name + " became non-finite");
  ++state.step;
  r.step = state.step;
  if (state.step == 1) {
    state.avg_mask = r.loss_mask;
    state.avg_denoise = r.loss_denoise;
    state.avg_total = r.loss_total;
  } else {
    state.avg_mask = kAverageDecay * state.avg_mask + (1 - kAverageDecay) * r.loss_mask;
    state.avg_denoise = kAverageDecay * state.avg_denoise + (1 - kAverageDecay) * r.loss_denoise;
    state.avg_total = kAverageDecay * state.avg_total + (1 - kAverageDecay) * r.loss_total;
  }
  return r;
}

void SaveTrainCheckpoint(const std::filesystem::path& path, const Encoder& enc,
                         const TrainState& state, const TrainConfig& cfg) {
  CheckpointExtras extras;
  extras.meta = {{"step", state.step},
                 {"optimizer_step", state.optimizer.step},
                 {"avg_mask", state.avg_mask},
                 {"avg_denoise", state.avg_denoise},
                 {"avg_total", state.avg_total},
                 {"train_config", cfg}};
  extras.tensors = state.optimizer.first_moment;
  extras.tensors.insert(extras.tensors.end(), state.optimizer.second_moment.begin(),
                        state.optimizer.second_moment.end());
  SaveCheckpoint(path, enc, &extras);
}

TrainState LoadTrainState(const std::filesystem::path& path, Encoder& enc) {
  LoadedCheckpoint ck = LoadCheckpoint(path);
  if (!ck.extras) throw DataError(path.string() + ": checkpoint has no training state");
  const size_t n = ck.encoder.params().size();
  if (ck.extras->tensors.size() != 2 * n)
    throw DataError(path.string() + ": optimizer state does not match parameters");
  TrainState s;
  try {
    const auto& m = ck.extras->meta;
    s.step = m.at("step");
    s.optimizer = OptimizerState::For(ck.encoder.params(),
                                      m.at("train_config").get<TrainConfig>().adamw);
    s.optimizer.step = m.at("optimizer_step");
    s.avg_mask = m.at("avg_mask");
    s.avg_denoise = m.at("avg_denoise");
    s.avg_total = m.at("avg_total");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad training state: " + e.what());
  }
  for (size_t i = 0; i < n; ++i) {
    s.optimizer.first_moment[i] = ck.extras->tensors[i];
    s.optimizer.second_moment[i] = ck.extras->tensors[n + i];
  }
  enc = std::move(ck.encoder);
  return s;
}

TrainRun TrainLoop(const TrainConfig& cfg, const Corpus& corpus, const PseudoLabelSet& labels,
                   const std::filesystem::path& out_dir,
                   const std::optional<std::filesystem::path>& resume) {
  cfg.Validate();
  if (corpus.utterances.empty()) throw DataError("training corpus is empty");
  const AlignedCorpus data = AlignLabels(corpus, labels, cfg.encoder);
  std::filesystem::create_directories(out_dir / "checkpoints");

  Encoder enc(cfg.encoder);
  TrainState state;
  state.optimizer = OptimizerState::For(enc.params(), cfg.adamw);
  TrainRun run;
  run.log_path = out_dir / "train_log.jsonl";
  std::vector<std::string> kept_log;
  if (resume) {
    state = LoadTrainState(*resume, enc);
    if (nlohmann::json(enc.config()) != nlohmann::json(cfg.encoder))
      throw UsageError("resume checkpoint encoder config differs from the requested config");
    std::ifstream in(run.log_path);
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      if (nlohmann::json::parse(line).at("step").get<uint64_t>() > state.step) break;
      kept_log.push_back(line);
    }
    log().info("resuming from {} at step {}", resume->string(), state.step);
  }
  std::ofstream log_out(run.log_path, std::ios::trunc);
  if (!log_out) throw DataError("cannot write " + run.log_path.string());
  for (const auto& line : kept_log) log_out << line << "\n";

  const NoiseBank noise = MakeNoiseBank(cfg.noise, cfg.seed, cfg.encoder.sample_rate_hz);
  const uint64_t total = cfg.schedule.total_steps;
  std::filesystem::path last_good = resume ? *resume : std::filesystem::path();
  const bool prefetch = cfg.jobs > 1;
  std::future<std::vector<TrainExample>> next;
  auto launch = [&](uint64_t step) {
    return std::async(prefetch ? std::launch::async : std::launch::deferred,
                      [&data, &noise, &cfg, step] { return MakeBatch(data, noise, cfg, step); });
  };
  if (state.step < total) next = launch(state.step);
  while (state.step < total) {
    std::vector<TrainExample> batch = next.get();
    if (state.step + 1 < total) next = launch(state.step + 1);
    try {
      run.last = TrainStep(enc, state, batch, cfg);
    } catch (const NumericError& e) {
      throw NumericError("training halted at step " + std::to_string(state.step + 1) + ": " +
                         e.what() + "; last good checkpoint: " +
                         (last_good.empty() ? std::string("none") : last_good.string()));
    }
    log_out << nlohmann::json(run.last).dump() << "\n";
    if (state.step % 100 == 0 || state.step == total)
      log().info("step {}/{} lr {:.3g} mask {:.4f} denoise {:.4f} total {:.4f}", state.step,
                 total, run.last.lr, state.avg_mask, state.avg_denoise, state.avg_total);
    if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0) {
      last_good = out_dir / "checkpoints" / StepName(state.step);
      SaveTrainCheckpoint(last_good, enc, state, cfg);
    }
  }
  log_out.flush();
  run.final_checkpoint = out_dir / "encoder.ckpt";
  SaveTrainCheckpoint(run.final_checkpoint, enc, state, cfg);
  return run;
}

}  // namespace delulu
