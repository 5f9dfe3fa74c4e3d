// src/cli/pipeline.cc

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

#include "delulu/cli/pipeline.h"

#include <algorithm>
#include <fstream>
#include <future>
#include <set>
#include <sstream>

#include "delulu/audio/noise.h"
#include "delulu/base/error.h"
#include "delulu/base/log.h"
#include "delulu/encoder/checkpoint.h"

namespace delulu {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kZeroShotTasks[] = {"gender", "age_band", "speaker_count", "distance"};

fs::path Or(const std::string& explicit_path, const fs::path& fallback) {
  return explicit_path.empty() ? fallback : fs::path(explicit_path);
}

template <typename Fn>
void ParallelFor(size_t n, size_t jobs, Fn fn) {
  jobs = std::max<size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> running;
  for (size_t j = 0; j < jobs; ++j)
    running.push_back(std::async(std::launch::async, [&, j] {
      for (size_t i = j; i < n; i += jobs) fn(i);
    }));
  for (auto& f : running) f.get();
}

uint64_t Fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 1099511628211ULL;
  return h;
}

uint64_t ParamHash(const Encoder& enc) {
  uint64_t h = 1469598103934665603ULL;
  for (const auto& p : enc.params()) h = Fnv1a(p.value.data(), p.value.size() * sizeof(double), h);
  return h;
}

json SubgroupJson(const std::map<std::string, SubgroupEer>& groups) {
  json out = json::object();
  for (const auto& [name, g] : groups)
    out[name] = {{"eer", std::isnan(g.eer) ? json(nullptr) : json(g.eer)},
                 {"threshold", g.threshold},
                 {"n_trials", g.n_trials},
                 {"reliable", g.reliable}};
  return out;
}

Corpus LoadSplit(const fs::path& manifest, const char* what) {
  if (!fs::exists(manifest))
    throw DataError(std::string(what) + " manifest " + manifest.string() +
                    " not found (run gen-data first)");
  return LoadCorpus(manifest);
}

std::string CheckpointName(const fs::path& p) { return p.stem().string(); }

}  // namespace

TrainConfig DeskTrainConfig() {
  TrainConfig t;
  t.encoder.conv_channels = 32;
  t.schedule.peak_lr = 2e-4;
  return t;
}

void RunConfig::Propagate() {
  teacher.seed = DeriveSeed(seed, 3);
  cluster.seed = DeriveSeed(seed, 4);
  train.seed = DeriveSeed(seed, 5);
  train.encoder.init_seed = DeriveSeed(seed, 6);
  eval.downstream.seed = DeriveSeed(seed, 9);
  train.encoder.n_codes = EffectiveK();
  cluster.jobs = Jobs();
  train.jobs = Jobs();
}

void RunConfig::Validate() const {
  if (workdir.empty()) throw UsageError("workdir must not be empty");
  if (data.train_speakers == 0 || data.utts_per_speaker == 0)
    throw UsageError("data needs at least one train speaker and one utterance per speaker");
  if (data.duration_s < 0.5) throw UsageError("utterance duration must be at least 0.5 s");
  if (eval.n_trials < 2) throw UsageError("eval.n_trials must be at least 2");
  if (eval.knn_k == 0 || eval.knn_folds < 2) throw UsageError("knn needs k >= 1 and >= 2 folds");
  if (jobs == 0) throw UsageError("jobs must be at least 1");
  train.Validate();
  EffectiveTeacher().Validate();
  KMeansConfig c = cluster;
  c.k = EffectiveK();
  c.Validate();
}

fs::path RunConfig::TrainManifest() const {
  return Or(paths.train_manifest, Workdir() / "data" / "train" / "manifest.jsonl");
}
fs::path RunConfig::EvalManifest() const {
  return Or(paths.eval_manifest, Workdir() / "data" / "eval" / "manifest.jsonl");
}
fs::path RunConfig::TeacherFramesPath() const {
  return Or(paths.teacher_frames, Workdir() / "teacher" / "frames.bin");
}
fs::path RunConfig::LabelsPath() const {
  return Or(paths.labels, Workdir() / "cluster" / "labels.bin");
}
fs::path RunConfig::TrainDir() const { return Workdir() / "train"; }
fs::path RunConfig::CheckpointPath() const {
  return Or(paths.checkpoint, TrainDir() / "encoder.ckpt");
}
fs::path RunConfig::EvalDir() const { return Workdir() / "eval"; }

size_t RunConfig::EffectiveK() const {
  return cluster.k != 0 ? cluster.k : DefaultClusterCount(data.train_speakers);
}

TeacherConfig RunConfig::EffectiveTeacher() const {
  if (!teacher_match_student) return teacher;
  TeacherConfig t = TeacherConfigFor(train.encoder, teacher.kind);
  t.embed_dim = teacher.embed_dim;
  t.seed = teacher.seed;
  t.content_noise = teacher.content_noise;
  t.n_mels = teacher.n_mels;
  t.n_coeffs = teacher.n_coeffs;
  return t;
}

void to_json(json& j, const RunConfig& c) {
  j = {{"seed", c.seed},
       {"workdir", c.workdir},
       {"paths",
        {{"train_manifest", c.paths.train_manifest},
         {"eval_manifest", c.paths.eval_manifest},
         {"teacher_frames", c.paths.teacher_frames},
         {"labels", c.paths.labels},
         {"checkpoint", c.paths.checkpoint}}},
       {"data",
        {{"train_speakers", c.data.train_speakers},
         {"eval_speakers", c.data.eval_speakers},
         {"utts_per_speaker", c.data.utts_per_speaker},
         {"duration_s", c.data.duration_s},
         {"voice", c.data.voice},
         {"channel", c.data.channel}}},
       {"teacher", c.teacher},
       {"teacher_match_student", c.teacher_match_student},
       {"cluster", c.cluster},
       {"train", c.train},
       {"eval",
        {{"n_trials", c.eval.n_trials},
         {"knn_k", c.eval.knn_k},
         {"knn_folds", c.eval.knn_folds},
         {"probes_per_class", c.eval.probes_per_class},
         {"layer", c.eval.layer},
         {"noisy_snr_db", c.eval.noisy_snr_db},
         {"downstream",
          {{"epochs", c.eval.downstream.epochs},
           {"batch_size", c.eval.downstream.batch_size},
           {"lr", c.eval.downstream.lr},
           {"margin", c.eval.downstream.margin},
           {"scale", c.eval.downstream.scale},
           {"holdout", c.eval.downstream.holdout},
           {"seed", c.eval.downstream.seed}}}}},
       {"jobs", c.jobs},
       {"deterministic", c.deterministic}};
}

void from_json(const json& j, RunConfig& c) {
  static const std::set<std::string> kKeys = {"seed",    "workdir", "paths", "data",
                                              "teacher", "teacher_match_student",
                                              "cluster", "train",   "eval",  "jobs",
                                              "deterministic"};
  if (!j.is_object()) throw UsageError("run config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!kKeys.count(key)) throw UsageError("unknown run config key '" + key + "'");
  RunConfig d;
  c.seed = j.value("seed", d.seed);
  c.workdir = j.value("workdir", d.workdir);
  const json paths = j.value("paths", json::object());
  c.paths.train_manifest = paths.value("train_manifest", "");
  c.paths.eval_manifest = paths.value("eval_manifest", "");
  c.paths.teacher_frames = paths.value("teacher_frames", "");
  c.paths.labels = paths.value("labels", "");
  c.paths.checkpoint = paths.value("checkpoint", "");
  const json data = j.value("data", json::object());
  c.data.train_speakers = data.value("train_speakers", d.data.train_speakers);
  c.data.eval_speakers = data.value("eval_speakers", d.data.eval_speakers);
  c.data.utts_per_speaker = data.value("utts_per_speaker", d.data.utts_per_speaker);
  c.data.duration_s = data.value("duration_s", d.data.duration_s);
  c.data.voice = data.value("voice", d.data.voice);
  c.data.channel = data.value("channel", d.data.channel);
  c.teacher = j.value("teacher", d.teacher);
  c.teacher_match_student = j.value("teacher_match_student", d.teacher_match_student);
  c.cluster = j.value("cluster", d.cluster);
  c.train = j.value("train", d.train);
  const json ev = j.value("eval", json::object());
  c.eval.n_trials = ev.value("n_trials", d.eval.n_trials);
  c.eval.knn_k = ev.value("knn_k", d.eval.knn_k);
  c.eval.knn_folds = ev.value("knn_folds", d.eval.knn_folds);
  c.eval.probes_per_class = ev.value("probes_per_class", d.eval.probes_per_class);
  c.eval.layer = ev.value("layer", d.eval.layer);
  c.eval.noisy_snr_db = ev.value("noisy_snr_db", d.eval.noisy_snr_db);
  const json ds = ev.value("downstream", json::object());
  c.eval.downstream.epochs = ds.value("epochs", d.eval.downstream.epochs);
  c.eval.downstream.batch_size = ds.value("batch_size", d.eval.downstream.batch_size);
  c.eval.downstream.lr = ds.value("lr", d.eval.downstream.lr);
  c.eval.downstream.margin = ds.value("margin", d.eval.downstream.margin);
  c.eval.downstream.scale = ds.value("scale", d.eval.downstream.scale);
  c.eval.downstream.holdout = ds.value("holdout", d.eval.downstream.holdout);
  c.eval.downstream.seed = ds.value("seed", d.eval.downstream.seed);
  c.jobs = j.value("jobs", d.jobs);
  c.deterministic = j.value("deterministic", d.deterministic);
}

RunConfig LoadRunConfig(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  try {
    return json::parse(in).get<RunConfig>();
  } catch (const json::exception& e) {
    throw UsageError("bad config " + path.string() + ": " + e.what());
  }
}

json GenData(const RunConfig& cfg, const GenDataOptions& opt) {
  const bool train = opt.split == Split::kTrain;
  CorpusConfig cc;
  cc.n_speakers = train ? cfg.data.train_speakers : cfg.data.eval_speakers;
  cc.utts_per_speaker = cfg.data.utts_per_speaker;
  cc.duration_s = cfg.data.duration_s;
  cc.seed = DeriveSeed(cfg.seed, train ? 1 : 2);
  cc.id_prefix = train ? "spk" : "eval";
  cc.voice = cfg.data.voice;
  cc.channel = cfg.data.channel;
  const fs::path dir =
      opt.out ? *opt.out : (train ? cfg.TrainManifest() : cfg.EvalManifest()).parent_path();
  if (fs::exists(dir) && !fs::is_empty(dir) && !opt.force)
    throw UsageError("output directory " + dir.string() + " is not empty (use --force)");
  const Corpus corpus = GenerateCorpus(cc);
  if (opt.force) fs::remove_all(dir);
  WriteCorpus(corpus, dir, opt.force);
  log().info("wrote {} utterances from {} speakers to {}", corpus.utterances.size(),
             corpus.speakers.size(), dir.string());
  return {{"split", train ? "train" : "eval"},
          {"n_speakers", corpus.speakers.size()},
          {"n_utterances", corpus.utterances.size()},
          {"manifest", (dir / "manifest.jsonl").string()}};
}

json TeacherExtract(const RunConfig& cfg) {
  const Corpus corpus = LoadSplit(cfg.TrainManifest(), "train");
  const TeacherConfig tc = cfg.EffectiveTeacher();
  std::vector<TeacherFrames> frames(corpus.utterances.size());
  ParallelFor(frames.size(), cfg.Jobs(), [&](size_t i) {
    const auto& u = corpus.utterances[i];
    const SyntheticSpeaker* spk =
        tc.kind == TeacherKind::kOracle ? corpus.FindSpeaker(u.record.speaker_id) : nullptr;
    frames[i] = TeacherEmbed(u.audio, tc, u.record.utt_id, spk);
  });
  const fs::path out = cfg.TeacherFramesPath();
  fs::create_directories(out.parent_path());
  WriteTeacherFrames(out, frames);
  size_t n_frames = 0;
  for (const auto& f : frames) n_frames += f.frames.n_frames();
  log().info("teacher {}: {} frames of dim {} from {} utterances", TeacherKindName(tc.kind),
             n_frames, tc.embed_dim, frames.size());
  return {{"teacher", TeacherKindName(tc.kind)},
          {"n_utterances", frames.size()},
          {"n_frames", n_frames},
          {"dim", tc.embed_dim},
          {"frame_period_ms", tc.frame_period_ms}};
}

json ClusterFrames(const RunConfig& cfg) {
  const TeacherConfig tc = cfg.EffectiveTeacher();
  const auto frames = ReadTeacherFrames(cfg.TeacherFramesPath(), tc.frame_period_ms);
  KMeansConfig kc = cfg.cluster;
  kc.k = cfg.EffectiveK();
  const Tensor stacked = StackFrames(frames);
  if (stacked.rows() < kc.k)
    throw DataError("cannot form k=" + std::to_string(kc.k) + " clusters from " +
                    std::to_string(stacked.rows()) + " frames");
  const KMeansModel model = FitKMeans(stacked, kc);
  const PseudoLabelSet labels = AssignLabels(model, frames, TeacherKindName(tc.kind));
  const fs::path out = cfg.LabelsPath();
  fs::create_directories(out.parent_path());
  WriteLabels(out, labels);
  WriteKMeansModel(out.parent_path() / "kmeans.json", model);
  size_t used = 0;
  for (size_t c : model.counts) used += c > 0;
  return {{"k", kc.k},
          {"n_frames", stacked.rows()},
          {"inertia", model.inertia},
          {"epochs", model.epochs_run},
          {"clusters_used", used}};
}

json TrainEncoder(const RunConfig& cfg, const std::optional<fs::path>& resume) {
  const Corpus corpus = LoadSplit(cfg.TrainManifest(), "train");
  const PseudoLabelSet labels = ReadLabels(cfg.LabelsPath());
  const TrainRun run = TrainLoop(cfg.train, corpus, labels, cfg.TrainDir(), resume);
  fs::path ckpt = cfg.CheckpointPath();
  if (ckpt != run.final_checkpoint) {
    fs::create_directories(ckpt.parent_path());
    fs::copy_file(run.final_checkpoint, ckpt, fs::copy_options::overwrite_existing);
  }
  return {{"steps", run.last.step}, {"last", run.last}};
}

std::string EvalTarget::Name() const {
  if (random) return "random";
  return checkpoint ? CheckpointName(*checkpoint) : "trained";
}

Encoder LoadTarget(const RunConfig& cfg, const EvalTarget& target) {
  if (target.random) return Encoder(cfg.train.encoder);
  const fs::path p = target.checkpoint ? *target.checkpoint : cfg.CheckpointPath();
  if (!fs::exists(p)) throw DataError("checkpoint " + p.string() + " not found (run train first)");
  return LoadCheckpoint(p).encoder;
}

json EvalSv(const RunConfig& cfg, const EvalTarget& target, bool noisy) {
  const Corpus corpus = LoadSplit(cfg.EvalManifest(), "eval");
  const Encoder enc = LoadTarget(cfg, target);
  EmbedOptions opt;
  opt.layer = cfg.eval.layer;
  opt.jobs = cfg.Jobs();
  opt.noise_seed = DeriveSeed(cfg.seed, 10);
  if (noisy) opt.noisy_snr_db = cfg.eval.noisy_snr_db;
  const EmbeddingTable table = EmbedCorpus(enc, corpus, opt);
  const uint64_t trial_seed = DeriveSeed(cfg.seed, 7);
  const auto trials = GenerateTrials(table, cfg.eval.n_trials, trial_seed);
  const EerResult eer = ComputeEer(ScoreTrials(table, trials));

  json report = {{"protocol", "upstream-sv"},
                 {"target", target.Name()},
                 {"noisy", noisy},
                 {"layer", cfg.eval.layer},
                 {"n_trials", trials.size()},
                 {"eer", eer.eer},
                 {"threshold", eer.threshold}};
  if (noisy) report["snr_db"] = cfg.eval.noisy_snr_db;
  json sub = json::object();
  for (const char* tag : {"gender", "age_band"}) {
    try {
      const auto within = GenerateTrials(table, cfg.eval.n_trials, trial_seed, tag);
      sub[tag] = SubgroupJson(StratifiedEer(table, within, tag));
    } catch (const DataError& e) {
      sub[tag] = {{"error", e.what()}};
    }
  }
  report["subgroups"] = sub;
  if (noisy) {
    // Mean clean/noisy final-layer distance on the scored utterances.
    NoiseBankConfig nc;
    nc.snr_range_db = {cfg.eval.noisy_snr_db, cfg.eval.noisy_snr_db};
    const NoiseBank bank = MakeNoiseBank(nc, DeriveSeed(opt.noise_seed, 71), enc.config().sample_rate_hz);
    std::vector<double> losses(corpus.utterances.size());
    ParallelFor(losses.size(), cfg.Jobs(), [&](size_t i) {
      Rng rng(DeriveSeed(opt.noise_seed, 72, i));
      const Waveform& clean = corpus.utterances[i].audio;
      losses[i] = DenoisingLoss(enc.HiddenStates(clean), enc.HiddenStates(bank.Corrupt(clean, rng)));
    });
    double sum = 0.0;
    for (double l : losses) sum += l;
    report["denoise_loss"] = sum / losses.size();
  }
  const fs::path dir = cfg.EvalDir() / target.Name();
  fs::create_directories(dir);
  WriteTrials(cfg.EvalDir() / "trials.txt", trials);
  WriteJson(dir / (noisy ? "sv_noisy.json" : "sv.json"), report);
  return report;
}

ProbeSet MakeSpeakerCountProbes(const Corpus& source, size_t per_class, uint64_t seed) {
  std::map<std::string, std::vector<size_t>> by_spk;
  for (size_t i = 0; i < source.utterances.size(); ++i)
    by_spk[source.utterances[i].record.speaker_id].push_back(i);
  if (by_spk.size() < 3)
    throw DataError("speaker counting probes need at least 3 speakers, got " +
                    std::to_string(by_spk.size()));
  std::vector<const std::vector<size_t>*> speakers;
  for (const auto& [id, v] : by_spk) speakers.push_back(&v);
  Rng rng(DeriveSeed(seed, 1));
  ProbeSet out;
  char id[64];
  for (size_t i = 0; i < 3 * per_class; ++i) {
    const size_t count = 1 + i % 3;
    std::vector<size_t> order(speakers.size());
    std::iota(order.begin(), order.end(), 0);
    for (size_t s = 0; s < count; ++s)
      std::swap(order[s], order[s + UniformIndex(rng, order.size() - s)]);
    Waveform mix;
    for (size_t s = 0; s < count; ++s) {
      const auto& utts = *speakers[order[s]];
      const Waveform& w = source.utterances[utts[UniformIndex(rng, utts.size())]].audio;
      if (mix.samples.empty()) {
        mix = w;
      } else {
        const size_t n = std::min(mix.samples.size(), w.samples.size());
        mix.samples.resize(n);
        for (size_t t = 0; t < n; ++t) mix.samples[t] += w.samples[t];
      }
    }
    const double g = 0.1 / std::max(Rms(mix.samples), 1e-12);
    for (double& v : mix.samples) v *= g;
    ClipInPlace(mix, "speaker-count probe");
    std::snprintf(id, sizeof(id), "count_%04zu", i);
    Utterance u;
    u.record.utt_id = id;
    u.record.speaker_id = id;
    u.record.duration_s = static_cast<double>(mix.samples.size()) / mix.sample_rate_hz;
    u.audio = std::move(mix);
    out.corpus.utterances.push_back(std::move(u));
    out.labels.push_back(std::to_string(count));
  }
  return out;
}

ProbeSet MakeDistanceProbes(const Corpus& source, size_t per_class, uint64_t seed) {
  if (source.utterances.empty()) throw DataError("distance probes need a non-empty corpus");
  static constexpr std::pair<const char*, double> kLevels[] = {
      {"near", 0.0}, {"mid", -12.0}, {"far", -24.0}};
  // Attenuated source over a fixed-level room-noise floor.
  constexpr double kFloorRms = 0.002;
  Rng rng(DeriveSeed(seed, 2));
  ProbeSet out;
  char id[64];
  for (size_t i = 0; i < 3 * per_class; ++i) {
    const auto& [name, gain_db] = kLevels[i % 3];
    const Utterance& src = source.utterances[UniformIndex(rng, source.utterances.size())];
    Waveform w = src.audio;
    const double gain = std::pow(10.0, gain_db / 20.0);
    const Waveform floor =
        MakeColoredNoise(static_cast<double>(w.samples.size()) / w.sample_rate_hz + 0.01,
                         DeriveSeed(seed, 3, i), w.sample_rate_hz);
    const double floor_gain = kFloorRms / std::max(Rms(floor.samples), 1e-12);
    for (size_t t = 0; t < w.samples.size(); ++t)
      w.samples[t] = gain * w.samples[t] + floor_gain * floor.samples[t];
    ClipInPlace(w, "distance probe");
    std::snprintf(id, sizeof(id), "dist_%04zu", i);
    Utterance u;
    u.record = src.record;
    u.record.utt_id = id;
    u.record.path.clear();
    u.audio = std::move(w);
    out.corpus.utterances.push_back(std::move(u));
    out.labels.push_back(name);
  }
  return out;
}

json EvalKnn(const RunConfig& cfg, const EvalTarget& target, const std::string& task) {
  if (std::find(std::begin(kZeroShotTasks), std::end(kZeroShotTasks), task) ==
      std::end(kZeroShotTasks))
    throw UsageError("unknown zero-shot task '" + task +
                     "' (gender, age_band, speaker_count, distance)");
  const Corpus corpus = LoadSplit(cfg.EvalManifest(), "eval");
  const Encoder enc = LoadTarget(cfg, target);
  EmbedOptions opt;
  opt.layer = cfg.eval.layer;
  opt.jobs = cfg.Jobs();
  EmbeddingTable table;
  std::map<std::string, std::string> label;
  if (task == "gender" || task == "age_band") {
    table = EmbedCorpus(enc, corpus, opt);
    for (const auto& e : table.entries) label[e.utt_id] = e.tags.at(task);
  } else {
    const uint64_t s = DeriveSeed(cfg.seed, 11);
    const ProbeSet probes = task == "speaker_count"
                                ? MakeSpeakerCountProbes(corpus, cfg.eval.probes_per_class, s)
                                : MakeDistanceProbes(corpus, cfg.eval.probes_per_class, s);
    table = EmbedCorpus(enc, probes.corpus, opt);
    for (size_t i = 0; i < table.entries.size(); ++i) label[table.entries[i].utt_id] = probes.labels[i];
  }
  const uint64_t knn_seed = DeriveSeed(cfg.seed, 8);
  auto fn = [&](const EmbeddingEntry& e) { return label.at(e.utt_id); };
  const F1Result f1 = KnnMacroF1(table, fn, cfg.eval.knn_k, cfg.eval.knn_folds, knn_seed);
  // Permutation control: the same labels shuffled across utterances.
  std::vector<std::string> values;
  for (const auto& e : table.entries) values.push_back(label.at(e.utt_id));
  Rng rng(DeriveSeed(knn_seed, 1));
  for (size_t i = values.size(); i > 1; --i) std::swap(values[i - 1], values[UniformIndex(rng, i)]);
  std::map<std::string, std::string> permuted;
  for (size_t i = 0; i < values.size(); ++i) permuted[table.entries[i].utt_id] = values[i];
  const F1Result null = KnnMacroF1(
      table, [&](const EmbeddingEntry& e) { return permuted.at(e.utt_id); }, cfg.eval.knn_k,
      cfg.eval.knn_folds, knn_seed);
  json report = {{"protocol", "zero-shot-knn"},
                 {"target", target.Name()},
                 {"task", task},
                 {"k_neighbors", cfg.eval.knn_k},
                 {"folds", cfg.eval.knn_folds},
                 {"n_examples", table.entries.size()},
                 {"macro_f1", f1.mean},
                 {"std", f1.std},
                 {"per_fold", f1.per_fold},
                 {"permuted_macro_f1", null.mean}};
  const fs::path dir = cfg.EvalDir() / target.Name();
  fs::create_directories(dir);
  WriteJson(dir / ("knn_" + task + ".json"), report);
  return report;
}

json Stats(const RunConfig& cfg, const EvalTarget& target) {
  const Corpus corpus = LoadSplit(cfg.EvalManifest(), "eval");
  const Encoder enc = LoadTarget(cfg, target);
  EmbedOptions opt;
  opt.layer = cfg.eval.layer;
  opt.jobs = cfg.Jobs();
  const EmbeddingTable table = EmbedCorpus(enc, corpus, opt);
  const EmbeddingStats s = ComputeEmbeddingStats(table);
  const fs::path dir = cfg.EvalDir() / target.Name();
  fs::create_directories(dir);
  WritePcaCsv(dir / "pca.csv", table, "gender");
  json report = {{"protocol", "embedding-stats"},
                 {"target", target.Name()},
                 {"n_speakers", s.n_speakers},
                 {"intra", s.intra},
                 {"inter", s.inter},
                 {"ratio", std::isinf(s.ratio) ? json("inf") : json(s.ratio)}};
  WriteJson(dir / "stats.json", report);
  return report;
}

json Downstream(const RunConfig& cfg, const EvalTarget& target, Split split) {
  const bool train = split == Split::kTrain;
  const Corpus corpus =
      LoadSplit(train ? cfg.TrainManifest() : cfg.EvalManifest(), train ? "train" : "eval");
  const Encoder enc = LoadTarget(cfg, target);
  const uint64_t before = ParamHash(enc);
  EmbedOptions opt;
  opt.normalize = true;
  opt.layer = cfg.eval.layer;
  opt.jobs = cfg.Jobs();
  const DownstreamResult r = TrainDownstream(EmbedCorpus(enc, corpus, opt), cfg.eval.downstream);
  const bool unchanged = ParamHash(enc) == before;
  json report = {{"protocol", "downstream-am-softmax"},
                 {"target", target.Name()},
                 {"split", train ? "train" : "eval"},
                 {"n_classes", r.head.classes.size()},
                 {"n_train", r.n_train},
                 {"n_test", r.n_test},
                 {"train_accuracy", r.train_accuracy},
                 {"test_accuracy", r.test_accuracy},
                 {"epoch_loss", r.epoch_loss},
                 {"encoder_unchanged", unchanged}};
  const fs::path dir = cfg.EvalDir() / target.Name();
  fs::create_directories(dir);
  WriteJson(dir / "downstream.json", report);
  return report;
}

json RunPipeline(const RunConfig& cfg, bool force) {
  cfg.Validate();
  json report = {{"seed", cfg.seed}};
  for (Split split : {Split::kTrain, Split::kEval}) {
    const fs::path manifest = split == Split::kTrain ? cfg.TrainManifest() : cfg.EvalManifest();
    if (force || !fs::exists(manifest)) {
      GenDataOptions opt;
      opt.split = split;
      opt.force = force;
      GenData(cfg, opt);
    }
  }
  report["teacher"] = TeacherExtract(cfg);
  report["cluster"] = ClusterFrames(cfg);
  report["train"] = TrainEncoder(cfg);
  for (bool random : {false, true}) {
    EvalTarget t;
    t.random = random;
    json& r = report[t.Name()];
    r["sv"] = EvalSv(cfg, t, false);
    r["sv_noisy"] = EvalSv(cfg, t, true);
    r["stats"] = Stats(cfg, t);
    for (const char* task : kZeroShotTasks) r["knn"][task] = EvalKnn(cfg, t, task);
    r["downstream"] = Downstream(cfg, t);
  }
  WriteJson(cfg.Workdir() / "report.json", report);
  return report;
}

namespace {

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

RunConfig SweepPoint(const RunConfig& base, const std::string& key, const std::string& value) {
  RunConfig p = base;
  p.workdir = (base.Workdir() / "ablate" / (key + "-" + value)).string();
  p.paths = {};
  p.paths.train_manifest = base.TrainManifest().string();
  p.paths.eval_manifest = base.EvalManifest().string();
  try {
    if (key == "k") {
      p.cluster.k = std::stoul(value);
    } else if (key == "teacher") {
      p.teacher.kind = ParseTeacherKind(value);
    } else if (key == "stride") {
      if (value == "16") {
        p.train.encoder.conv_strides = EncoderConfig{}.conv_strides;
      } else if (value == "20") {
        p.train.encoder.conv_strides = EncoderConfig{}.conv_strides;
        p.train.encoder.conv_strides[0] = 5;
      } else {
        throw UsageError("stride sweep supports 16 and 20 (ms)");
      }
    } else if (key == "lambda") {
      p.train.lambda = std::stod(value);
    } else {
      throw UsageError("unknown sweep key '" + key + "' (k, teacher, stride, lambda)");
    }
  } catch (const std::logic_error&) {
    throw UsageError("bad sweep value '" + value + "' for " + key);
  }
  p.Propagate();
  return p;
}

std::string Percent(const json& v) {
  if (!v.is_number()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v.get<double>());
  return buf;
}

}  // namespace

json Ablate(const RunConfig& cfg, const std::string& sweep) {
  const auto eq = sweep.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("sweep must look like key=v1,v2,...");
  const std::string key = sweep.substr(0, eq);
  const auto values = SplitList(sweep.substr(eq + 1));
  if (values.empty()) throw UsageError("sweep '" + sweep + "' lists no values");
  static const std::set<std::string> kSweepKeys = {"k", "teacher", "stride", "lambda"};
  if (!kSweepKeys.count(key))
    throw UsageError("unknown sweep key '" + key + "' (k, teacher, stride, lambda)");
  for (Split split : {Split::kTrain, Split::kEval}) {
    const fs::path manifest = split == Split::kTrain ? cfg.TrainManifest() : cfg.EvalManifest();
    if (!fs::exists(manifest)) GenData(cfg, {split, std::nullopt, false});
  }

  json rows = json::array();
  for (const auto& value : values) {
    const fs::path result = cfg.Workdir() / "ablate" / (key + "-" + value) / "result.json";
    json row;
    if (fs::exists(result)) {
      std::ifstream in(result);
      row = json::parse(in);
      log().info("sweep point {}={} already complete", key, value);
    } else {
      row = {{"key", key}, {"value", value}};
      try {
        const RunConfig p = SweepPoint(cfg, key, value);
        p.Validate();
        TeacherExtract(p);
        ClusterFrames(p);
        const json tr = TrainEncoder(p);
        const json sv = EvalSv(p, {}, false);
        const json noisy = EvalSv(p, {}, true);
        row["status"] = "ok";
        row["eer"] = sv.at("eer");
        row["noisy_eer"] = noisy.at("eer");
        row["denoise_loss"] = noisy.at("denoise_loss");
        row["final_mask_loss"] = tr.at("last").at("loss_mask");
        WriteJson(result, row);
      } catch (const Error& e) {
        row["status"] = "error";
        row["error"] = std::string(e.code_name()) + ": " + e.what();
        log().error("sweep point {}={} failed: {}", key, value, e.what());
      }
    }
    rows.push_back(row);
  }

  json table = {{"sweep", key}, {"rows", rows}};
  const fs::path dir = cfg.Workdir() / "ablate";
  fs::create_directories(dir);
  WriteJson(dir / (key + ".json"), table);
  std::ofstream md(dir / (key + ".md"));
  md << "| " << key << " | EER (%) | noisy EER (%) | status |\n|---|---|---|---|\n";
  for (const auto& r : rows)
    md << "| " << r.at("value").get<std::string>() << " | " << Percent(r.value("eer", json()))
       << " | " << Percent(r.value("noisy_eer", json())) << " | "
       << (r.at("status") == "ok" ? std::string("ok") : r.value("error", std::string("error")))
       << " |\n";
  return table;
}

}  // namespace delulu
