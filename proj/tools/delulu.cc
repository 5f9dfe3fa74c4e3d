// tools/delulu.cc

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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "delulu/base/error.h"
#include "delulu/base/log.h"
#include "delulu/cli/pipeline.h"

namespace {

using delulu::RunConfig;
using nlohmann::json;

struct TargetFlags {
  std::string checkpoint;
  bool random = false;

  void Add(CLI::App* cmd) {
    cmd->add_option("--checkpoint", checkpoint, "Checkpoint to score (default: trained encoder)");
    cmd->add_flag("--random", random, "Score a freshly initialized encoder");
  }
  delulu::EvalTarget Get() const {
    if (random && !checkpoint.empty())
      throw delulu::UsageError("--random and --checkpoint are mutually exclusive");
    delulu::EvalTarget t;
    t.random = random;
    if (!checkpoint.empty()) t.checkpoint = checkpoint;
    return t;
  }
};

delulu::Split ParseSplit(const std::string& s) {
  if (s == "train") return delulu::Split::kTrain;
  if (s == "eval") return delulu::Split::kEval;
  throw delulu::UsageError("split must be train or eval, got '" + s + "'");
}

int Fail(int code, const std::string& kind, std::string message) {
  for (char& c : message)
    if (c == '\n') c = ' ';
  std::cerr << "ERROR " << code << ": " << kind << ": " << message << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DELULU desk-scale pipeline: synthetic data, teacher-guided pseudo-labels, "
               "student training and speaker-centric evaluation"};
  app.require_subcommand(0, 1);
  app.fallthrough();

  std::string config_path, workdir, log_level = "info";
  std::optional<uint64_t> seed;
  std::optional<size_t> jobs;
  bool print_config = false, deterministic = false, force = false;
  app.add_option("--config", config_path, "Run config (JSON)")->check(CLI::ExistingFile);
  app.add_flag("--print-config", print_config, "Print the effective config and exit");
  app.add_option("--workdir", workdir, "Artifact directory");
  app.add_option("--seed", seed, "Global seed (fallback: DELULU_SEED)");
  app.add_option("--jobs", jobs, "Worker cap")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", deterministic, "Single-threaded, bit-reproducible");
  app.add_flag("--force", force, "Overwrite existing outputs");
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Synthesize a corpus split");
  std::string gen_split = "train";
  std::optional<size_t> speakers, utts;
  std::optional<double> duration;
  std::string gen_out;
  gen->add_option("--split", gen_split, "train|eval");
  gen->add_option("--speakers", speakers, "Speakers in the split");
  gen->add_option("--utts-per-speaker", utts, "Utterances per speaker");
  gen->add_option("--duration", duration, "Utterance length (s)");
  gen->add_option("--out", gen_out, "Output directory");

  auto* teach = app.add_subcommand("teacher-extract", "Teacher frames for the train split");
  std::string teacher_kind;
  teach->add_option("--teacher", teacher_kind, "oracle|spectral|external");

  auto* clus = app.add_subcommand("cluster", "Fit k-means and write pseudo-labels");
  std::optional<size_t> k;
  clus->add_option("--k", k, "Cluster count (0: min(256, 2 * train speakers))");

  auto* train = app.add_subcommand("train", "Train the student encoder");
  std::optional<size_t> steps;
  std::optional<double> lambda;
  std::string resume;
  train->add_option("--steps", steps, "Optimizer steps");
  train->add_option("--lambda", lambda, "Denoising weight");
  train->add_option("--resume", resume, "Resume from a checkpoint")->check(CLI::ExistingFile);

  std::optional<int> layer;
  auto* sv = app.add_subcommand("eval-sv", "Speaker verification EER on the eval split");
  TargetFlags sv_target;
  bool noisy = false;
  std::optional<size_t> n_trials;
  sv_target.Add(sv);
  sv->add_flag("--noisy", noisy, "Corrupt utterances at eval.noisy_snr_db before scoring");
  sv->add_option("--trials", n_trials, "Trial count");
  sv->add_option("--layer", layer, "Transformer layer (-1: final)");

  auto* knn = app.add_subcommand("eval-knn", "Zero-shot KNN macro-F1");
  TargetFlags knn_target;
  std::string task = "gender";
  std::optional<size_t> knn_k, folds;
  knn_target.Add(knn);
  knn->add_option("--task", task, "gender|age_band|speaker_count|distance");
  knn->add_option("--knn-k", knn_k, "Neighbors");
  knn->add_option("--folds", folds, "Cross-validation folds");
  knn->add_option("--layer", layer, "Transformer layer (-1: final)");

  auto* stats = app.add_subcommand("stats", "Embedding-space diagnostics and PCA CSV");
  TargetFlags stats_target;
  stats_target.Add(stats);
  stats->add_option("--layer", layer, "Transformer layer (-1: final)");

  auto* down = app.add_subcommand("downstream", "Frozen encoder + AM-Softmax head");
  TargetFlags down_target;
  std::string down_split = "train";
  down_target.Add(down);
  down->add_option("--split", down_split, "train|eval");
  down->add_option("--layer", layer, "Transformer layer (-1: final)");

  auto* run = app.add_subcommand("run", "Full pipeline end to end");

  auto* ablate = app.add_subcommand("ablate", "Sweep one setting over full pipeline runs");
  std::string sweep;
  ablate->add_option("--sweep", sweep, "key=v1,v2 over k|teacher|stride|lambda")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return Fail(2, "usage", e.what());
  }

  try {
    spdlog::level::level_enum level = spdlog::level::from_str(log_level);
    if (level == spdlog::level::off && log_level != "off")
      throw delulu::UsageError("unknown log level '" + log_level + "'");
    delulu::log().set_level(level);

    RunConfig cfg;
    bool seed_in_file = false;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      const json j = json::parse(in, nullptr, false);
      if (j.is_discarded()) throw delulu::UsageError("config " + config_path + " is not valid JSON");
      seed_in_file = j.is_object() && j.contains("seed");
      cfg = delulu::LoadRunConfig(config_path);
    }
    if (seed) {
      cfg.seed = *seed;
    } else if (!seed_in_file) {
      if (const char* env = std::getenv("DELULU_SEED")) {
        try {
          cfg.seed = std::stoull(env);
        } catch (const std::logic_error&) {
          throw delulu::UsageError(std::string("DELULU_SEED is not an integer: ") + env);
        }
      }
    }
    if (!workdir.empty()) cfg.workdir = workdir;
    if (jobs) cfg.jobs = *jobs;
    if (deterministic) cfg.deterministic = true;
    if (speakers) {
      (gen_split == "eval" ? cfg.data.eval_speakers : cfg.data.train_speakers) = *speakers;
    }
    if (utts) cfg.data.utts_per_speaker = *utts;
    if (duration) cfg.data.duration_s = *duration;
    if (!teacher_kind.empty()) cfg.teacher.kind = delulu::ParseTeacherKind(teacher_kind);
    if (k) cfg.cluster.k = *k;
    if (steps) {
      cfg.train.schedule.total_steps = *steps;
      if (cfg.train.schedule.warmup_steps >= *steps) cfg.train.schedule.warmup_steps = *steps / 10;
    }
    if (lambda) cfg.train.lambda = *lambda;
    if (layer) cfg.eval.layer = *layer;
    if (n_trials) cfg.eval.n_trials = *n_trials;
    if (knn_k) cfg.eval.knn_k = *knn_k;
    if (folds) cfg.eval.knn_folds = *folds;
    cfg.Propagate();

    if (print_config) {
      std::cout << json(cfg).dump(2) << std::endl;
      return 0;
    }
    if (app.get_subcommands().empty()) throw delulu::UsageError("no command given (see --help)");
    cfg.Validate();

    json out;
    if (*gen) {
      delulu::GenDataOptions opt;
      opt.split = ParseSplit(gen_split);
      if (!gen_out.empty()) opt.out = gen_out;
      opt.force = force;
      out = delulu::GenData(cfg, opt);
    } else if (*teach) {
      out = delulu::TeacherExtract(cfg);
    } else if (*clus) {
      out = delulu::ClusterFrames(cfg);
    } else if (*train) {
      std::optional<std::filesystem::path> from;
      if (!resume.empty()) from = resume;
      out = delulu::TrainEncoder(cfg, from);
    } else if (*sv) {
      out = delulu::EvalSv(cfg, sv_target.Get(), noisy);
    } else if (*knn) {
      out = delulu::EvalKnn(cfg, knn_target.Get(), task);
    } else if (*stats) {
      out = delulu::Stats(cfg, stats_target.Get());
    } else if (*down) {
      out = delulu::Downstream(cfg, down_target.Get(), ParseSplit(down_split));
    } else if (*run) {
      out = delulu::RunPipeline(cfg, force);
    } else if (*ablate) {
      out = delulu::Ablate(cfg, sweep);
    }
    std::cout << out.dump(2) << std::endl;
    return 0;
  } catch (const delulu::Error& e) {
    return Fail(e.exit_code(), e.code_name(), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return Fail(3, "data", e.what());
  } catch (const nlohmann::json::exception& e) {
    return Fail(3, "data", e.what());
  } catch (const std::exception& e) {
    return Fail(5, "contract", e.what());
  }
}
