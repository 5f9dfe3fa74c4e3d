// tests/acceptance.cc

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

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "delulu/base/error.h"
#include "delulu/base/log.h"
#include "delulu/cli/pipeline.h"
#include "delulu/cluster/kmeans.h"
#include "delulu/encoder/encoder.h"
#include "delulu/eval/eval.h"
#include "delulu/train/train.h"
#include "grad_cases.h"
#include "metric_oracles.h"
#include "test_util.h"

namespace delulu {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Accumulates named checks; the first failure is kept for the report.
struct Checks {
  bool ok = true;
  std::string first_failure;
  void Expect(bool cond, const std::string& what) {
    if (!cond && ok) first_failure = what;
    ok = ok && cond;
  }
};

std::string Fmt(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

double Seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string ReadBytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json ReadJson(const fs::path& p) { return json::parse(ReadBytes(p)); }

// 1
Outcome GradientSuite() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_name;
  size_t n = 0;
  for (const auto& c : testing::AllOpCases())
    for (uint64_t seed = 1; seed <= 3; ++seed) {
      const double e = testing::GradCheck(c.build, testing::RandomTensor(c.rows, c.cols, seed * 31), seed);
      ++n;
      if (!(e <= worst)) {
        worst = e;
        worst_name = c.name;
      }
    }
  const double encoder = testing::EncoderEndToEndWorstError();
  const double step = testing::MicroTrainStepWorstError();
  const double secs = Seconds(t0);
  Outcome o;
  o.pass = worst < 1e-4 && encoder < 1e-4 && step < 1e-4 && secs < 120.0;
  o.detail = Fmt("%zu op checks worst %.2e (%s), encoder %.2e, micro train_step %.2e, %.1f s", n,
                 worst, worst_name.c_str(), encoder, step, secs);
  return o;
}

size_t HandChained(size_t n, const EncoderConfig& c) {
  for (size_t i = 0; i < c.conv_strides.size(); ++i) {
    if (n < c.conv_kernels[i]) return 0;
    n = (n - c.conv_kernels[i]) / c.conv_strides[i] + 1;
  }
  return n;
}

// 2
Outcome GeometrySuite() {
  Checks ck;
  EncoderConfig c;
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const size_t n = c.ReceptiveField() + UniformIndex(rng, 200000);
    ck.Expect(OutputLength(n, c) == HandChained(n, c), Fmt("length %zu", n));
  }
  ck.Expect(OutputLength(16384, c) == 63, "16384 samples -> 63 frames");
  ck.Expect(c.StrideProduct() == 256 && c.FramePeriodMs() == 16.0, "stride 256 <-> 16 ms");
  EncoderConfig s20 = c;
  s20.conv_strides[0] = 5;
  ck.Expect(s20.StrideProduct() == 320 && s20.FramePeriodMs() == 20.0, "stride 320 <-> 20 ms");
  return {ck.ok, ck.ok ? "50 random lengths match the recurrence; 16384 -> 63; 256 <-> 16 ms"
                       : "failed: " + ck.first_failure};
}

Tensor Blobs(size_t n_blobs, size_t per, double sep, double radius, uint64_t seed, size_t dim,
             std::vector<int>* truth = nullptr) {
  Rng rng(seed);
  Tensor x(n_blobs * per, dim);
  for (size_t b = 0; b < n_blobs; ++b)
    for (size_t i = 0; i < per; ++i) {
      const size_t r = b * per + i;
      x(r, 0) = sep * b;
      for (size_t j = 0; j < dim; ++j) x(r, j) += radius * Gaussian(rng);
      if (truth) truth->push_back(static_cast<int>(b));
    }
  return x;
}

// 3
Outcome ClusteringSuite() {
  Checks ck;
  for (uint64_t d = 0; d < 20; ++d) {
    Rng rng(DeriveSeed(3, d));
    const size_t n = 40 + UniformIndex(rng, 160), dim = 1 + UniformIndex(rng, 6);
    const size_t k = 2 + UniformIndex(rng, 8);
    const Tensor x = testing::RandomTensor(n, dim, DeriveSeed(3, d, 1));
    KMeansModel m;
    m.k = k;
    m.dim = dim;
    m.centroids = KMeansPlusPlusInit(x, k, d);
    m.counts.assign(k, 0);
    double prev = FullInertia(m, x);
    for (int it = 0; it < 15; ++it) {
      const double cur = FullLloydStep(m, x);
      ck.Expect(cur <= prev, Fmt("Lloyd inertia rose on dataset %d", (int)d));
      prev = cur;
    }
  }
  const Tensor two = Blobs(2, 50, 100.0, 1.0, 8, 2);
  int good = 0;
  for (uint64_t s = 0; s < 100; ++s) {
    const Tensor c = KMeansPlusPlusInit(two, 2, s);
    good += (c(0, 0) < 50.0) != (c(1, 0) < 50.0);
  }
  ck.Expect(good >= 95, Fmt("k-means++ two-blob seeding %d/100", good));
  std::vector<int> truth;
  const Tensor three = Blobs(3, 60, 20.0, 1.0, 4, 2, &truth);
  KMeansConfig cfg;
  cfg.k = 3;
  const KMeansModel fit = FitKMeans(three, cfg);
  std::vector<size_t> got;
  for (size_t i = 0; i < three.rows(); ++i) got.push_back(NearestCentroid(fit.centroids, three.row(i)));
  const double ari = testing::AdjustedRandIndex(truth, got);
  ck.Expect(ari == 1.0, Fmt("ARI %.4f", ari));
  ck.Expect(FitKMeans(three, cfg).centroids == fit.centroids, "fit not deterministic");
  const Tensor many = Blobs(8, 15, 4.0, 1.5, 3, 2);
  KMeansConfig r = cfg;
  r.k = 8;
  double prev = INFINITY;
  for (size_t n = 1; n <= 10; ++n) {
    r.n_restarts = n;
    const double inertia = FitKMeans(many, r).inertia;
    ck.Expect(inertia <= prev, Fmt("best of %zu restarts worse than best of %zu", n, n - 1));
    prev = inertia;
  }
  return {ck.ok, ck.ok ? Fmt("Lloyd monotone on 20 sets; ++ seeding %d/100; ARI %.1f; "
                             "deterministic; restart-min holds",
                             good, ari)
                       : "failed: " + ck.first_failure};
}

// 4
Outcome LossArithmetic() {
  Checks ck;
  double worst_ce = 0.0;
  for (size_t k : {2, 40, 256}) {
    Graph g;
    Var logits = g.Constant(Tensor(5, k));
    const double ce = MaskedPredictionLoss(logits, {0, 1, 1, 0, 1}, {true, true, false, true, true})
                          .value()
                          .item();
    worst_ce = std::max(worst_ce, std::abs(ce - std::log(static_cast<double>(k))));
  }
  ck.Expect(worst_ce < 1e-9, Fmt("uniform CE off ln k by %.2e", worst_ce));
  {
    FrameSequence clean{Tensor(2, 1, {0.0, 0.0}), 16.0};
    FrameSequence noisy{Tensor(2, 1, {1.0, 2.0}), 16.0};
    const double d = DenoisingLoss(clean, noisy);
    ck.Expect(d == 2.5, Fmt("denoising hand case %.17g", d));
  }
  ck.Expect(TotalLoss(2.0, 0.5, 1.0) == 2.5, "total loss 2.0 + 1 x 0.5");
  Rng rng(4);
  double worst_lin = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double m = Uniform(rng, 0, 5), d = Uniform(rng, 0, 5);
    const double l1 = Uniform(rng, 0, 3), l2 = Uniform(rng, 0, 3);
    const double slope = (TotalLoss(m, d, l2) - TotalLoss(m, d, l1)) / (l2 - l1);
    worst_lin = std::max({worst_lin, std::abs(slope - d), std::abs(TotalLoss(m, d, 0.0) - m)});
  }
  ck.Expect(worst_lin < 1e-9, Fmt("lambda linearity off by %.2e", worst_lin));
  MaskConfig mc{0.08, 10};
  double covered = 0.0;
  constexpr size_t kDraws = 10000, kT = 500;
  for (size_t d = 0; d < kDraws; ++d) {
    const auto m = SampleMask(kT, mc, rng);
    covered += static_cast<double>(std::count(m.begin(), m.end(), true)) / kT;
  }
  const double expected = 1.0 - std::pow(1.0 - 0.08, 10);
  covered /= kDraws;
  ck.Expect(std::abs(covered - expected) <= 0.02, Fmt("mask coverage %.4f vs %.4f", covered, expected));
  return {ck.ok, ck.ok ? Fmt("|CE - ln k| %.1e; denoising case 2.5; lambda-linear; coverage %.4f vs %.4f",
                             worst_ce, covered, expected)
                       : "failed: " + ck.first_failure};
}

// 5
Outcome EerOracle() {
  double worst = 0.0;
  for (uint64_t seed = 1; seed <= 200; ++seed) {
    const ScoreSet s = testing::RandomScores(seed);
    worst = std::max(worst, std::abs(ComputeEer(s).eer - testing::BruteForceEer(s)));
  }
  double worst_mono = 0.0;
  for (uint64_t seed = 1000; seed < 1050; ++seed) {
    ScoreSet s = testing::RandomScores(seed);
    const double a = ComputeEer(s).eer;
    for (double& v : s.scores) v = std::exp(3.0 * v) + 7.0;
    worst_mono = std::max(worst_mono, std::abs(ComputeEer(s).eer - a));
  }
  return {worst < 1e-9 && worst_mono == 0.0,
          Fmt("brute force max diff %.1e on 200 sets; monotone transform max diff %.1e on 50",
              worst, worst_mono)};
}

// 10
Outcome ZeroShotPlumbing() {
  Checks ck;
  const EmbeddingTable sep = testing::ClusteredTable(6, 10, 8, 0.01, 9);
  auto gender = [](const EmbeddingEntry& e) { return e.tags.at("gender"); };
  const F1Result perfect = KnnMacroF1(sep, gender);
  ck.Expect(perfect.mean == 1.0 && perfect.std == 0.0, Fmt("separable F1 %.4f", perfect.mean));
  const EmbeddingTable t = testing::ClusteredTable(10, 20, 8, 0.3, 10);
  double permuted = 0.0;
  constexpr int kPerms = 10;
  for (int p = 0; p < kPerms; ++p) {
    Rng rng(DeriveSeed(10, p));
    std::vector<std::string> labels;
    for (const auto& e : t.entries) labels.push_back(e.tags.at("gender"));
    for (size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[UniformIndex(rng, i)]);
    std::map<std::string, std::string> shuffled;
    for (size_t i = 0; i < labels.size(); ++i) shuffled[t.entries[i].utt_id] = labels[i];
    permuted += KnnMacroF1(t, [&](const EmbeddingEntry& e) { return shuffled.at(e.utt_id); }).mean;
  }
  permuted /= kPerms;
  ck.Expect(std::abs(permuted - 0.5) <= 0.05, Fmt("permuted F1 %.4f", permuted));
  EmbeddingTable all = testing::ClusteredTable(6, 4, 5, 1.0, 3);
  for (auto& e : all.entries) e.tags["all"] = "everyone";
  const auto trials = GenerateTrials(all, 200, 4);
  const EerResult global = ComputeEer(ScoreTrials(all, trials));
  const auto strat = StratifiedEer(all, trials, "all");
  ck.Expect(strat.size() == 1 && strat.at("everyone").eer == global.eer,
            "single-group stratified EER differs from global");
  return {ck.ok, ck.ok ? Fmt("separable F1 %.1f +- %.1f; permuted %.3f (mean of %d); "
                             "single-group EER == global (%.4f)",
                             perfect.mean, perfect.std, permuted, kPerms, global.eer)
                       : "failed: " + ck.first_failure};
}

// Desk-scale end-to-end configuration: defaults with a fixed seed.
RunConfig BaseConfig(const fs::path& workdir, uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.workdir = workdir.string();
  c.deterministic = true;
  c.Propagate();
  return c;
}

struct EndToEnd {
  json report;
  double seconds = 0.0;
  json spectral;
  json lambda0;
};

// 6
Outcome Discriminability(const EndToEnd& e) {
  const double trained = e.report.at("trained").at("sv").at("eer");
  const double random = e.report.at("random").at("sv").at("eer");
  Outcome o;
  o.pass = trained <= 0.10 && random >= 0.35 && e.seconds < 20 * 60;
  o.detail = Fmt("held-out EER trained %.2f%% (<= 10), random %.2f%% (>= 35); pipeline %.1f min "
                 "(< 20)",
                 100 * trained, 100 * random, e.seconds / 60);
  return o;
}

// 7
Outcome AblationOrdering(const EndToEnd& e) {
  const double oracle = e.report.at("trained").at("sv").at("eer");
  const json& row = e.spectral;
  if (row.value("status", "") != "ok")
    return {false, "spectral run failed: " + row.value("error", std::string("?"))};
  const double spectral = row.at("eer");
  return {spectral - oracle >= 0.10,
          Fmt("oracle %.2f%% vs spectral %.2f%%, margin %.2f points (>= 10)", 100 * oracle,
              100 * spectral, 100 * (spectral - oracle))};
}

// 8
Outcome DualObjective(const EndToEnd& e) {
  const json& noisy = e.report.at("trained").at("sv_noisy");
  const json& row = e.lambda0;
  if (row.value("status", "") != "ok")
    return {false, "lambda=0 run failed: " + row.value("error", std::string("?"))};
  const double d1 = noisy.at("denoise_loss"), d0 = row.at("denoise_loss");
  const double e1 = noisy.at("eer"), e0 = row.at("noisy_eer");
  return {d1 < d0 && e1 <= e0,
          Fmt("denoising loss lambda=1 %.4f vs lambda=0 %.4f; noisy EER %.2f%% vs %.2f%%", d1, d0,
              100 * e1, 100 * e0)};
}

// 9
Outcome Downstream(const EndToEnd& e) {
  const json& d = e.report.at("trained").at("downstream");
  const double acc = d.at("test_accuracy");
  const bool unchanged = d.at("encoder_unchanged");
  return {acc >= 0.95 && unchanged,
          Fmt("held-out accuracy %.2f%% (>= 95) over %d classes; encoder bits %s", 100 * acc,
              d.at("n_classes").get<int>(), unchanged ? "unchanged" : "CHANGED")};
}

// 11
Outcome Reproducibility(const fs::path& root, uint64_t seed, size_t steps) {
  std::vector<fs::path> dirs = {root / "repro_a", root / "repro_b"};
  for (const auto& d : dirs) {
    fs::remove_all(d);
    RunConfig c = BaseConfig(d, seed);
    c.train.schedule.total_steps = steps;
    c.train.schedule.warmup_steps = steps / 10;
    c.train.checkpoint_every = steps / 2;
    RunPipeline(c, false);
  }
  size_t compared = 0;
  std::string differs;
  for (const auto& entry : fs::recursive_directory_iterator(dirs[0])) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dirs[0]);
    const std::string ext = rel.extension().string();
    if (ext != ".ckpt" && ext != ".json" && ext != ".jsonl" && ext != ".bin" && ext != ".csv" &&
        ext != ".txt")
      continue;
    ++compared;
    if (ReadBytes(entry.path()) != ReadBytes(dirs[1] / rel) && differs.empty()) differs = rel.string();
  }
  return {differs.empty() && compared > 0,
          differs.empty() ? Fmt("%zu checkpoint/report/artifact files bit-identical across two "
                                "--deterministic runs (%zu steps)",
                                compared, steps)
                          : "differs: " + differs};
}

}  // namespace
}  // namespace delulu

int main(int argc, char** argv) {
  using namespace delulu;
  CLI::App app{"Acceptance criteria 1-11"};
  std::string workdir = (fs::temp_directory_path() / "delulu_acceptance").string();
  std::string only;
  uint64_t seed = 1;
  size_t repro_steps = 300;
  bool reuse = false;
  app.add_option("--workdir", workdir, "Scratch directory for the end-to-end runs");
  app.add_option("--only", only, "Comma-separated criterion numbers");
  app.add_option("--seed", seed, "Global seed of the end-to-end runs");
  app.add_option("--repro-steps", repro_steps, "Training steps of each reproducibility run");
  app.add_flag("--reuse", reuse, "Keep finished end-to-end artifacts from an earlier invocation");
  CLI11_PARSE(app, argc, argv);
  log().set_level(spdlog::level::warn);

  std::set<int> selected;
  for (size_t pos = 0; pos < only.size();) {
    const size_t comma = std::min(only.find(',', pos), only.size());
    selected.insert(std::stoi(only.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  auto want = [&](int c) { return selected.empty() || selected.count(c); };

  const fs::path root = workdir;
  std::optional<EndToEnd> e2e;
  auto end_to_end = [&]() -> const EndToEnd& {
    if (e2e) return *e2e;
    EndToEnd e;
    const fs::path dir = root / "main";
    if (!reuse) fs::remove_all(dir);
    const RunConfig cfg = BaseConfig(dir, seed);
    const fs::path timing = dir / "pipeline_seconds.txt";
    if (reuse && fs::exists(dir / "report.json") && fs::exists(timing)) {
      e.report = ReadJson(dir / "report.json");
      std::ifstream(timing) >> e.seconds;
    } else {
      const auto t0 = std::chrono::steady_clock::now();
      e.report = RunPipeline(cfg, false);
      e.seconds = Seconds(t0);
      std::ofstream(timing) << e.seconds << "\n";
    }
    e.spectral = Ablate(cfg, "teacher=spectral").at("rows").at(0);
    e.lambda0 = Ablate(cfg, "lambda=0").at("rows").at(0);
    e2e = std::move(e);
    return *e2e;
  };

  const std::vector<std::pair<int, std::pair<const char*, std::function<Outcome()>>>> criteria = {
      {1, {"gradient suite", GradientSuite}},
      {2, {"geometry suite", GeometrySuite}},
      {3, {"clustering suite", ClusteringSuite}},
      {4, {"loss arithmetic", LossArithmetic}},
      {5, {"EER oracle", EerOracle}},
      {6, {"end-to-end discriminability", [&] { return Discriminability(end_to_end()); }}},
      {7, {"ablation ordering (oracle vs spectral)", [&] { return AblationOrdering(end_to_end()); }}},
      {8, {"dual-objective effect (lambda 1 vs 0)", [&] { return DualObjective(end_to_end()); }}},
      {9, {"downstream AM-Softmax head", [&] { return Downstream(end_to_end()); }}},
      {10, {"zero-shot profiling plumbing", ZeroShotPlumbing}},
      {11, {"reproducibility", [&] { return Reproducibility(root, seed, repro_steps); }}},
  };

  int failed = 0;
  for (const auto& [id, named] : criteria) {
    if (!want(id)) continue;
    const auto& [name, run] = named;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = run();
    } catch (const std::exception& ex) {
      o = {false, std::string("threw: ") + ex.what()};
    }
    failed += !o.pass;
    std::printf("%s  %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(),
                Seconds(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
