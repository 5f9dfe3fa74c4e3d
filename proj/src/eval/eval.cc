// src/eval/eval.cc

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

#include "delulu/eval/eval.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "delulu/audio/noise.h"
#include "delulu/base/error.h"
#include "delulu/base/log.h"
#include "delulu/numerics/optimizer.h"

namespace delulu {

namespace {

double Norm(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

void CheckUnitRows(const Tensor& t, const char* what) {
  for (size_t r = 0; r < t.rows(); ++r) {
    const double n = Norm(t.row(r));
    if (std::abs(n - 1.0) > 1e-6)
      throw ContractError(std::string("am-softmax: ") + what + " row " + std::to_string(r) +
                          " has norm " + std::to_string(n) + ", expected 1");
  }
}

}  // namespace

std::vector<double> UtteranceEmbedding(const Encoder& enc, const Waveform& w, bool normalize,
                                       int layer) {
  const FrameSequence f = enc.HiddenStates(w, layer);
  std::vector<double> e(f.dim(), 0.0);
  for (size_t t = 0; t < f.n_frames(); ++t)
    for (size_t j = 0; j < f.dim(); ++j) e[j] += f.values(t, j);
  for (double& v : e) v /= static_cast<double>(f.n_frames());
  if (normalize) {
    const double n = Norm(e);
    if (n == 0.0) throw NumericError("cannot normalize an all-zero utterance embedding");
    for (double& v : e) v /= n;
  }
  return e;
}

const EmbeddingEntry& EmbeddingTable::Find(const std::string& utt_id) const {
  auto it = index_.find(utt_id);
  if (it == index_.end()) throw DataError("utterance " + utt_id + " not in embedding table");
  return entries[it->second];
}

void EmbeddingTable::Add(EmbeddingEntry e) {
  if (!entries.empty() && e.embedding.size() != dim())
    throw ContractError("embedding table: inconsistent dimension for " + e.utt_id);
  if (!index_.emplace(e.utt_id, entries.size()).second)
    throw DataError("embedding table: duplicate utterance " + e.utt_id);
  entries.push_back(std::move(e));
}

EmbeddingTable EmbedCorpus(const Encoder& enc, const Corpus& corpus, const EmbedOptions& opt) {
  std::optional<NoiseBank> bank;
  if (opt.noisy_snr_db) {
    NoiseBankConfig nc;
    nc.snr_range_db = {*opt.noisy_snr_db, *opt.noisy_snr_db};
    bank = MakeNoiseBank(nc, DeriveSeed(opt.noise_seed, 71), enc.config().sample_rate_hz);
  }
  const size_t n = corpus.utterances.size();
  std::vector<std::vector<double>> embs(n);
  auto work = [&](size_t begin, size_t stride) {
    for (size_t i = begin; i < n; i += stride) {
      const Waveform* w = &corpus.utterances[i].audio;
      Waveform noisy;
      if (bank) {
        Rng rng(DeriveSeed(opt.noise_seed, 72, i));
        noisy = bank->Corrupt(*w, rng);
        w = &noisy;
      }
      embs[i] = UtteranceEmbedding(enc, *w, opt.normalize, opt.layer);
    }
  };
  const size_t jobs = std::max<size_t>(1, std::min(opt.jobs, n));
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::future<void>> running;
    for (size_t j = 0; j < jobs; ++j) running.push_back(std::async(std::launch::async, work, j, jobs));
    for (auto& f : running) f.get();
  }
  EmbeddingTable table;
  table.normalized = opt.normalize;
  for (size_t i = 0; i < n; ++i) {
    const auto& r = corpus.utterances[i].record;
    table.Add({r.utt_id, r.speaker_id, {{"gender", r.gender}, {"age_band", r.age_band}},
               std::move(embs[i])});
  }
  return table;
}

double CosineScore(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DataError("cosine score: dimension mismatch " + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()));
  const double na = Norm(a), nb = Norm(b);
  if (na == 0.0 || nb == 0.0) throw DataError("cosine score: zero-norm embedding");
  double dot = 0.0;
  for (size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

std::vector<Trial> GenerateTrials(const EmbeddingTable& table, size_t n_trials, uint64_t seed,
                                  const std::string& group_tag) {
  std::set<std::string> speakers;
  for (const auto& e : table.entries) speakers.insert(e.speaker_id);
  if (speakers.size() < 2)
    throw DataError("verification trials need at least 2 speakers, got " +
                    std::to_string(speakers.size()));
  std::vector<Trial> same, diff;
  for (size_t i = 0; i < table.entries.size(); ++i)
    for (size_t j = i + 1; j < table.entries.size(); ++j) {
      const auto& a = table.entries[i];
      const auto& b = table.entries[j];
      if (!group_tag.empty() && a.tags.at(group_tag) != b.tags.at(group_tag)) continue;
      (a.speaker_id == b.speaker_id ? same : diff).push_back({a.speaker_id == b.speaker_id,
                                                             a.utt_id, b.utt_id});
    }
  const size_t per_side = std::min({n_trials / 2, same.size(), diff.size()});
  if (per_side == 0) throw DataError("cannot form both target and non-target trials");
  Rng rng(DeriveSeed(seed, 80));
  auto take = [&](std::vector<Trial>& pool) {
    for (size_t i = 0; i < per_side; ++i)
      std::swap(pool[i], pool[i + UniformIndex(rng, pool.size() - i)]);
    pool.resize(per_side);
  };
  take(same);
  take(diff);
  std::vector<Trial> out;
  for (size_t i = 0; i < per_side; ++i) {
    out.push_back(same[i]);
    out.push_back(diff[i]);
  }
  return out;
}

void WriteTrials(const std::filesystem::path& path, const std::vector<Trial>& trials) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& t : trials) out << (t.target ? 1 : 0) << ' ' << t.a << ' ' << t.b << '\n';
}

std::vector<Trial> ReadTrials(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trial list " + path.string());
  std::vector<Trial> out;
  size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string flag, a, b, extra;
    if (!(ss >> flag >> a >> b) || (ss >> extra) || (flag != "0" && flag != "1"))
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected '<0|1> <utt_a> <utt_b>'");
    out.push_back({flag == "1", a, b});
  }
  if (out.empty()) throw DataError(path.string() + ": no trials");
  return out;
}

ScoreSet ScoreTrials(const EmbeddingTable& table, const std::vector<Trial>& trials) {
  ScoreSet s;
  for (const auto& t : trials) {
    s.scores.push_back(CosineScore(table.Find(t.a).embedding, table.Find(t.b).embedding));
    s.targets.push_back(t.target);
  }
  return s;
}

EerResult ComputeEer(const ScoreSet& set) {
  if (set.scores.size() != set.targets.size() || set.scores.empty())
    throw DataError("EER needs a non-empty, aligned score set");
  std::vector<std::pair<double, bool>> s;
  size_t n_tar = 0;
  for (size_t i = 0; i < set.scores.size(); ++i) {
    if (!std::isfinite(set.scores[i])) throw NumericError("non-finite verification score");
    s.emplace_back(set.scores[i], set.targets[i]);
    n_tar += set.targets[i];
  }
  const size_t n_non = s.size() - n_tar;
  if (n_tar == 0 || n_non == 0)
    throw DataError("EER needs at least one target and one non-target trial");
  std::sort(s.begin(), s.end());

  // Walk unique score values upward; before value v the counts below v are
  // final, which gives FRR/FAR at any threshold in (prev, v].
  struct Point {
    double t, frr, far;
  };
  std::vector<Point> pts;
  size_t tar_below = 0, non_below = 0;
  auto rates = [&](double t) {
    return Point{t, static_cast<double>(tar_below) / n_tar,
                 1.0 - static_cast<double>(non_below) / n_non};
  };
  pts.push_back(rates(s.front().first));
  for (size_t i = 0; i < s.size();) {
    const double v = s[i].first;
    while (i < s.size() && s[i].first == v) {
      (s[i].second ? tar_below : non_below) += 1;
      ++i;
    }
    const double next = i < s.size() ? 0.5 * (v + s[i].first)
                                     : std::nextafter(v, std::numeric_limits<double>::infinity());
    pts.push_back(rates(next));
  }
  for (size_t i = 0; i < pts.size(); ++i) {
    const double d = pts[i].frr - pts[i].far;
    if (d < 0.0) continue;
    if (d == 0.0 || i == 0) return {pts[i].frr, pts[i].t};
    const Point& a = pts[i - 1];
    const double da = a.frr - a.far;
    const double alpha = -da / (d - da);
    return {a.frr + alpha * (pts[i].frr - a.frr), a.t + alpha * (pts[i].t - a.t)};
  }
  return {pts.back().frr, pts.back().t};
}

std::map<std::string, SubgroupEer> StratifiedEer(const EmbeddingTable& table,
                                                 const std::vector<Trial>& trials,
                                                 const std::string& group_tag,
                                                 size_t min_trials) {
  std::map<std::string, ScoreSet> groups;
  auto tag_of = [&](const EmbeddingEntry& e) {
    auto it = e.tags.find(group_tag);
    if (it == e.tags.end()) throw DataError(e.utt_id + " has no tag '" + group_tag + "'");
    return it->second;
  };
  for (const auto& t : trials) {
    const auto& a = table.Find(t.a);
    const auto& b = table.Find(t.b);
    const std::string ga = tag_of(a), gb = tag_of(b);
    if (ga != gb)
      throw DataError("trial " + t.a + " / " + t.b + " crosses " + group_tag + " subgroups (" +
                      ga + " vs " + gb + ")");
    auto& g = groups[ga];
    g.scores.push_back(CosineScore(a.embedding, b.embedding));
    g.targets.push_back(t.target);
  }
  std::map<std::string, SubgroupEer> out;
  for (const auto& [name, set] : groups) {
    SubgroupEer r;
    r.n_trials = set.scores.size();
    r.reliable = r.n_trials >= min_trials;
    const size_t n_tar = std::count(set.targets.begin(), set.targets.end(), true);
    if (n_tar == 0 || n_tar == set.targets.size()) {
      r.eer = std::numeric_limits<double>::quiet_NaN();
      r.reliable = false;
    } else {
      const EerResult e = ComputeEer(set);
      r.eer = e.eer;
      r.threshold = e.threshold;
    }
    if (!r.reliable)
      log().warn("subgroup {}={} has {} trials; EER flagged unreliable", group_tag, name, r.n_trials);
    out[name] = r;
  }
  return out;
}

F1Result KnnMacroF1(const EmbeddingTable& table,
                    const std::function<std::string(const EmbeddingEntry&)>& label_fn,
                    size_t k_neighbors, size_t n_folds, uint64_t seed) {
  if (k_neighbors == 0) throw UsageError("knn needs k >= 1");
  if (n_folds < 2) throw UsageError("knn needs at least 2 folds");
  const size_t n = table.entries.size();
  std::vector<std::string> names(n);
  for (size_t i = 0; i < n; ++i) names[i] = label_fn(table.entries[i]);
  std::vector<std::string> classes(names);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw DataError("macro-F1 needs at least 2 classes");
  std::vector<size_t> label(n);
  std::vector<std::vector<size_t>> members(classes.size());
  for (size_t i = 0; i < n; ++i) {
    label[i] = std::lower_bound(classes.begin(), classes.end(), names[i]) - classes.begin();
    members[label[i]].push_back(i);
  }
  for (size_t c = 0; c < classes.size(); ++c)
    if (members[c].size() < n_folds)
      throw DataError("class '" + classes[c] + "' has " + std::to_string(members[c].size()) +
                      " examples, fewer than " + std::to_string(n_folds) + " folds");

  Rng rng(DeriveSeed(seed, 90));
  std::vector<size_t> fold(n);
  for (auto& m : members) {
    for (size_t i = m.size(); i > 1; --i) std::swap(m[i - 1], m[UniformIndex(rng, i)]);
    for (size_t i = 0; i < m.size(); ++i) fold[m[i]] = i % n_folds;
  }
  std::vector<std::vector<double>> unit(n);
  for (size_t i = 0; i < n; ++i) {
    const auto& e = table.entries[i].embedding;
    const double nn = Norm(e);
    if (nn == 0.0) throw DataError("knn: zero-norm embedding " + table.entries[i].utt_id);
    unit[i].resize(e.size());
    for (size_t j = 0; j < e.size(); ++j) unit[i][j] = e[j] / nn;
  }

  F1Result res;
  for (size_t f = 0; f < n_folds; ++f) {
    std::vector<size_t> train, test;
    for (size_t i = 0; i < n; ++i) (fold[i] == f ? test : train).push_back(i);
    const size_t k = std::min(k_neighbors, train.size());
    std::vector<size_t> tp(classes.size(), 0), fp(classes.size(), 0), fn(classes.size(), 0);
    for (size_t q : test) {
      std::vector<std::pair<double, size_t>> dist;
      for (size_t r : train) {
        double dot = 0.0;
        for (size_t j = 0; j < unit[q].size(); ++j) dot += unit[q][j] * unit[r][j];
        dist.emplace_back(1.0 - dot, r);
      }
      std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
      std::vector<size_t> votes(classes.size(), 0);
      for (size_t i = 0; i < k; ++i) ++votes[label[dist[i].second]];
      const size_t pred = std::max_element(votes.begin(), votes.end()) - votes.begin();
      if (pred == label[q]) {
        ++tp[pred];
      } else {
        ++fp[pred];
        ++fn[label[q]];
      }
    }
    double f1_sum = 0.0;
    for (size_t c = 0; c < classes.size(); ++c) {
      const double denom = 2.0 * tp[c] + fp[c] + fn[c];
      f1_sum += denom == 0.0 ? 0.0 : 2.0 * tp[c] / denom;
    }
    res.per_fold.push_back(f1_sum / classes.size());
  }
  res.mean = std::accumulate(res.per_fold.begin(), res.per_fold.end(), 0.0) / n_folds;
  double var = 0.0;
  for (double v : res.per_fold) var += (v - res.mean) * (v - res.mean);
  res.std = std::sqrt(var / n_folds);
  return res;
}

Var AmSoftmaxLoss(Var embeddings, Var weights, const std::vector<size_t>& labels, double margin,
                  double scale) {
  CheckUnitRows(embeddings.value(), "embedding");
  CheckUnitRows(weights.value(), "class weight");
  const size_t n = embeddings.rows(), c = weights.rows();
  if (labels.size() != n)
    throw ContractError("am-softmax: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(n) + " embeddings");
  Tensor shift(n, c);
  std::vector<size_t> rows(n);
  for (size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) throw ContractError("am-softmax: label out of range");
    shift(i, labels[i]) = scale * margin;
    rows[i] = i;
  }
  Var logits = Sub(Scale(MatMulNT(embeddings, weights), scale), embeddings.graph->Constant(shift));
  return Scale(Sum(Pick(LogSoftmax(logits), rows, labels)), -1.0 / static_cast<double>(n));
}

size_t DownstreamHead::Predict(std::span<const double> embedding) const {
  size_t best = 0;
  double best_s = -std::numeric_limits<double>::infinity();
  for (size_t c = 0; c < weights.rows(); ++c) {
    const double s = CosineScore(embedding, weights.row(c));
    if (s > best_s) best_s = s, best = c;
  }
  return best;
}

DownstreamResult TrainDownstream(const EmbeddingTable& table, const DownstreamConfig& cfg) {
  if (!table.normalized) throw ContractError("downstream head expects L2-normalized embeddings");
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw UsageError("downstream needs epochs and batch > 0");
  if (!(cfg.holdout > 0.0 && cfg.holdout < 1.0)) throw UsageError("holdout must lie in (0, 1)");
  DownstreamResult res;
  DownstreamHead& head = res.head;
  head.margin = cfg.margin;
  head.scale = cfg.scale;
  std::map<std::string, std::vector<size_t>> by_spk;
  for (size_t i = 0; i < table.entries.size(); ++i) by_spk[table.entries[i].speaker_id].push_back(i);
  if (by_spk.size() < 2) throw DataError("downstream classification needs at least 2 speakers");
  std::vector<size_t> train, test, label(table.entries.size());
  for (auto& [spk, idx] : by_spk) {
    const size_t c = head.classes.size();
    head.classes.push_back(spk);
    const size_t n_test = static_cast<size_t>(std::llround(cfg.holdout * idx.size()));
    if (n_test == 0 || n_test >= idx.size())
      throw DataError("speaker " + spk + " has too few utterances to split");
    for (size_t j = 0; j < idx.size(); ++j) {
      label[idx[j]] = c;
      (j + n_test >= idx.size() ? test : train).push_back(idx[j]);
    }
  }
  const size_t dim = table.dim();
  Rng rng(DeriveSeed(cfg.seed, 95));
  ParameterSet params;
  Tensor w0(head.classes.size(), dim);
  for (size_t i = 0; i < w0.size(); ++i) w0[i] = 0.01 * Gaussian(rng);
  Parameter& w = params.Add("head.weight", std::move(w0));
  AdamWConfig adam;
  adam.weight_decay = 0.0;
  OptimizerState opt = OptimizerState::For(params, adam);
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[UniformIndex(rng, i)]);
    double loss_sum = 0.0;
    size_t batches = 0;
    for (size_t b = 0; b < train.size(); b += cfg.batch_size) {
      const size_t e = std::min(train.size(), b + cfg.batch_size);
      Tensor x(e - b, dim);
      std::vector<size_t> y;
      for (size_t i = b; i < e; ++i) {
        std::copy_n(table.entries[train[i]].embedding.data(), dim, x.row(i - b).data());
        y.push_back(label[train[i]]);
      }
      params.ZeroGrad();
      Graph g;
      Var loss = AmSoftmaxLoss(g.Constant(std::move(x)), L2Normalize(g.Param(w)), y, cfg.margin,
                               cfg.scale);
      g.Backward(loss);
      AdamWStep(params, opt, cfg.lr);
      loss_sum += loss.value().item();
      ++batches;
    }
    res.epoch_loss.push_back(loss_sum / batches);
  }
  head.weights = w.value;
  auto accuracy = [&](const std::vector<size_t>& idx) {
    size_t ok = 0;
    for (size_t i : idx) ok += head.Predict(table.entries[i].embedding) == label[i];
    return static_cast<double>(ok) / idx.size();
  };
  res.n_train = train.size();
  res.n_test = test.size();
  res.train_accuracy = accuracy(train);
  res.test_accuracy = accuracy(test);
  return res;
}

EmbeddingStats ComputeEmbeddingStats(const EmbeddingTable& table) {
  std::map<std::string, size_t> per_spk;
  for (const auto& e : table.entries) ++per_spk[e.speaker_id];
  if (per_spk.size() < 2) throw DataError("embedding stats need at least 2 speakers");
  for (const auto& [spk, n] : per_spk)
    if (n < 2) throw DataError("embedding stats need at least 2 utterances for speaker " + spk);
  double intra = 0.0, inter = 0.0;
  size_t n_intra = 0, n_inter = 0;
  for (size_t i = 0; i < table.entries.size(); ++i)
    for (size_t j = i + 1; j < table.entries.size(); ++j) {
      const auto& a = table.entries[i];
      const auto& b = table.entries[j];
      const double d = 1.0 - CosineScore(a.embedding, b.embedding);
      if (a.speaker_id == b.speaker_id) intra += d, ++n_intra;
      else inter += d, ++n_inter;
    }
  EmbeddingStats s;
  s.n_speakers = per_spk.size();
  s.intra = intra / n_intra;
  s.inter = inter / n_inter;
  s.ratio = s.intra > 0.0 ? s.inter / s.intra : std::numeric_limits<double>::infinity();
  return s;
}

std::vector<std::array<double, 2>> PcaCoordinates(const EmbeddingTable& table) {
  const size_t n = table.entries.size(), d = table.dim();
  if (n < 2) throw DataError("PCA needs at least 2 embeddings");
  std::vector<double> mean(d, 0.0);
  for (const auto& e : table.entries)
    for (size_t j = 0; j < d; ++j) mean[j] += e.embedding[j] / n;
  Tensor x(n, d);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) x(i, j) = table.entries[i].embedding[j] - mean[j];
  Tensor cov = MatMul(Transpose(x), x);
  std::vector<std::vector<double>> comps;
  for (int c = 0; c < 2; ++c) {
    std::vector<double> v(d);
    for (size_t j = 0; j < d; ++j) v[j] = 1.0 / std::sqrt(double(d)) + 1e-3 * j;
    for (int it = 0; it < 500; ++it) {
      std::vector<double> nv(d, 0.0);
      for (size_t a = 0; a < d; ++a)
        for (size_t b = 0; b < d; ++b) nv[a] += cov(a, b) * v[b];
      for (const auto& prev : comps) {
        double dot = 0.0;
        for (size_t j = 0; j < d; ++j) dot += nv[j] * prev[j];
        for (size_t j = 0; j < d; ++j) nv[j] -= dot * prev[j];
      }
      const double nn = Norm(nv);
      if (nn == 0.0) break;
      for (size_t j = 0; j < d; ++j) nv[j] /= nn;
      v = nv;
    }
    comps.push_back(v);
  }
  std::vector<std::array<double, 2>> out(n);
  for (size_t i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) {
      double s = 0.0;
      for (size_t j = 0; j < d; ++j) s += x(i, j) * comps[c][j];
      out[i][c] = s;
    }
  return out;
}

void WritePcaCsv(const std::filesystem::path& path, const EmbeddingTable& table,
                 const std::string& tag) {
  const auto xy = PcaCoordinates(table);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "utt_id,speaker_id,tag,x,y\n";
  out.precision(10);
  for (size_t i = 0; i < xy.size(); ++i) {
    const auto& e = table.entries[i];
    auto it = e.tags.find(tag);
    out << e.utt_id << ',' << e.speaker_id << ',' << (it == e.tags.end() ? "" : it->second) << ','
        << xy[i][0] << ',' << xy[i][1] << '\n';
  }
}

void WriteJson(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace delulu
