// src/cluster/kmeans.cc

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

#include "delulu/cluster/kmeans.h"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <future>
#include <iterator>
#include <limits>
#include <numeric>

#include "delulu/base/error.h"
#include "delulu/base/log.h"

namespace delulu {

namespace {

constexpr char kLabelMagic[4] = {'D', 'L', 'B', 'L'};
constexpr uint32_t kLabelVersion = 1;

double SqDist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

size_t CountDistinctRows(const Tensor& x, size_t stop_at) {
  std::vector<size_t> idx(x.rows());
  std::iota(idx.begin(), idx.end(), 0);
  auto less = [&](size_t a, size_t b) {
    auto ra = x.row(a), rb = x.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  };
  std::sort(idx.begin(), idx.end(), less);
  size_t distinct = idx.empty() ? 0 : 1;
  for (size_t i = 1; i < idx.size() && distinct < stop_at; ++i)
    if (less(idx[i - 1], idx[i])) ++distinct;
  return distinct;
}

Tensor SampleRows(const Tensor& frames, size_t n, Rng& rng) {
  if (n >= frames.rows()) return frames;
  std::vector<size_t> idx(frames.rows());
  std::iota(idx.begin(), idx.end(), 0);
  for (size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + UniformIndex(rng, idx.size() - i)]);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  Tensor out(n, frames.cols());
  for (size_t i = 0; i < n; ++i)
    std::copy_n(frames.row(idx[i]).data(), frames.cols(), out.row(i).data());
  return out;
}

// Moves each empty centroid onto the point currently farthest from its
// nearest centroid.
void ReseedEmpty(KMeansModel& m, const Tensor& frames) {
  std::vector<size_t> taken;
  for (size_t c = 0; c < m.k; ++c) {
    if (m.counts[c] != 0) continue;
    size_t best = frames.rows();
    double best_d = -1.0;
    for (size_t i = 0; i < frames.rows(); ++i) {
      if (std::find(taken.begin(), taken.end(), i) != taken.end()) continue;
      double d;
      NearestCentroid(m.centroids, frames.row(i), &d);
      if (d > best_d) best_d = d, best = i;
    }
    if (best == frames.rows()) return;
    taken.push_back(best);
    std::copy_n(frames.row(best).data(), m.dim, m.centroids.row(c).data());
  }
}

KMeansModel FitOnce(const Tensor& frames, const KMeansConfig& cfg, size_t restart) {
  Rng rng(DeriveSeed(cfg.seed, 40, restart));
  const Tensor sample = SampleRows(frames, cfg.init_sample, rng);
  KMeansModel m;
  m.k = cfg.k;
  m.dim = frames.cols();
  m.centroids = KMeansPlusPlusInit(sample, cfg.k, rng());
  m.counts.assign(cfg.k, 0);
  m.seed = cfg.seed;
  m.n_restarts = cfg.n_restarts;
  m.minibatch_size = cfg.minibatch_size;

  std::vector<size_t> order(frames.rows());
  std::iota(order.begin(), order.end(), 0);
  double prev = std::numeric_limits<double>::infinity();
  std::vector<uint64_t> stream_counts(cfg.k, 0);
  for (size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[UniformIndex(rng, i)]);
    m.counts = stream_counts;
    for (size_t b = 0; b < order.size(); b += cfg.minibatch_size) {
      const size_t e = std::min(order.size(), b + cfg.minibatch_size);
      Tensor batch(e - b, m.dim);
      for (size_t i = b; i < e; ++i)
        std::copy_n(frames.row(order[i]).data(), m.dim, batch.row(i - b).data());
      MinibatchUpdate(m, batch);
    }
    stream_counts = m.counts;
    double inertia = FullInertia(m, frames);
    if (std::find(m.counts.begin(), m.counts.end(), 0u) != m.counts.end()) {
      ReseedEmpty(m, frames);
      inertia = FullInertia(m, frames);
    }
    m.epochs_run = epoch + 1;
    const bool converged = prev - inertia < cfg.tol * prev || inertia == 0.0;
    prev = inertia;
    if (converged) break;
  }
  m.inertia = prev;
  return m;
}

}  // namespace

void KMeansConfig::Validate() const {
  if (k < 2) throw UsageError("k-means needs k >= 2");
  if (k > 65535) throw UsageError("k-means k must fit in 16-bit labels");
  if (n_restarts == 0) throw UsageError("k-means needs at least one restart");
  if (minibatch_size == 0) throw UsageError("k-means minibatch_size must be positive");
  if (max_epochs == 0) throw UsageError("k-means max_epochs must be positive");
  if (!(tol >= 0.0)) throw UsageError("k-means tol must be >= 0");
  if (init_sample < k) throw UsageError("k-means init_sample must be >= k");
}

void to_json(nlohmann::json& j, const KMeansConfig& c) {
  j = {{"k", c.k},
       {"n_restarts", c.n_restarts},
       {"minibatch_size", c.minibatch_size},
       {"max_epochs", c.max_epochs},
       {"tol", c.tol},
       {"init_sample", c.init_sample},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, KMeansConfig& c) {
  KMeansConfig d;
  c.k = j.value("k", d.k);
  c.n_restarts = j.value("n_restarts", d.n_restarts);
  c.minibatch_size = j.value("minibatch_size", d.minibatch_size);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.tol = j.value("tol", d.tol);
  c.init_sample = j.value("init_sample", d.init_sample);
  c.seed = j.value("seed", d.seed);
}

size_t DefaultClusterCount(size_t n_speakers) { return std::min<size_t>(256, 2 * n_speakers); }

size_t NearestCentroid(const Tensor& centroids, std::span<const double> x, double* d2) {
  size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t c = 0; c < centroids.rows(); ++c) {
    const double d = SqDist(centroids.row(c), x);
    if (d < best_d) best_d = d, best = c;
  }
  if (d2) *d2 = best_d;
  return best;
}

Tensor KMeansPlusPlusInit(const Tensor& sample, size_t k, uint64_t seed) {
  if (k < 2) throw UsageError("k-means needs k >= 2");
  if (sample.rows() < k || CountDistinctRows(sample, k) < k)
    throw DataError("k-means++ needs at least " + std::to_string(k) + " distinct points, got " +
                    std::to_string(CountDistinctRows(sample, k)));
  Rng rng(seed);
  const size_t n = sample.rows(), dim = sample.cols();
  Tensor c(k, dim);
  size_t first = UniformIndex(rng, n);
  std::copy_n(sample.row(first).data(), dim, c.row(0).data());
  std::vector<double> d2(n);
  for (size_t i = 0; i < n; ++i) d2[i] = SqDist(sample.row(i), c.row(0));
  for (size_t j = 1; j < k; ++j) {
    double total = 0.0;
    for (double v : d2) total += v;
    const double target = Uniform01(rng) * total;
    size_t pick = n;
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      acc += d2[i];
      if (acc > target) {
        pick = i;
        break;
      }
    }
    if (pick == n)
      for (size_t i = n; i-- > 0;)
        if (d2[i] > 0.0) {
          pick = i;
          break;
        }
    std::copy_n(sample.row(pick).data(), dim, c.row(j).data());
    for (size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], SqDist(sample.row(i), c.row(j)));
  }
  return c;
}

void MinibatchUpdate(KMeansModel& model, const Tensor& batch) {
  if (batch.rows() == 0) return;
  if (batch.cols() != model.dim)
    throw DataError("k-means batch dim " + std::to_string(batch.cols()) + " != model dim " +
                    std::to_string(model.dim));
  for (size_t i = 0; i < batch.rows(); ++i) {
    auto x = batch.row(i);
    const size_t c = NearestCentroid(model.centroids, x);
    const double eta = 1.0 / static_cast<double>(++model.counts[c]);
    auto row = model.centroids.row(c);
    for (size_t j = 0; j < model.dim; ++j) row[j] += eta * (x[j] - row[j]);
  }
}

double FullInertia(KMeansModel& model, const Tensor& frames) {
  std::fill(model.counts.begin(), model.counts.end(), 0);
  double total = 0.0;
  for (size_t i = 0; i < frames.rows(); ++i) {
    double d;
    ++model.counts[NearestCentroid(model.centroids, frames.row(i), &d)];
    total += d;
  }
  model.inertia = total;
  return total;
}

double FullLloydStep(KMeansModel& model, const Tensor& frames) {
  if (frames.cols() != model.dim)
    throw DataError("k-means frame dim " + std::to_string(frames.cols()) + " != model dim " +
                    std::to_string(model.dim));
  model.counts.assign(model.k, 0);
  Tensor sums(model.k, model.dim);
  for (size_t i = 0; i < frames.rows(); ++i) {
    const size_t c = NearestCentroid(model.centroids, frames.row(i));
    ++model.counts[c];
    auto s = sums.row(c);
    auto x = frames.row(i);
    for (size_t j = 0; j < model.dim; ++j) s[j] += x[j];
  }
  for (size_t c = 0; c < model.k; ++c) {
    if (model.counts[c] == 0) continue;
    auto row = model.centroids.row(c);
    for (size_t j = 0; j < model.dim; ++j) row[j] = sums(c, j) / static_cast<double>(model.counts[c]);
  }
  ReseedEmpty(model, frames);
  return FullInertia(model, frames);
}

KMeansModel FitKMeans(const Tensor& frames, const KMeansConfig& cfg) {
  cfg.Validate();
  if (frames.rows() == 0) throw DataError("k-means: no frames to cluster");
  if (!frames.all_finite()) throw DataError("k-means: non-finite teacher frames");
  std::vector<KMeansModel> fits(cfg.n_restarts);
  const size_t jobs = std::max<size_t>(1, std::min(cfg.jobs, cfg.n_restarts));
  for (size_t base = 0; base < cfg.n_restarts; base += jobs) {
    std::vector<std::future<KMeansModel>> running;
    for (size_t r = base; r < std::min(cfg.n_restarts, base + jobs); ++r)
      running.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred,
                                   [&frames, &cfg, r] { return FitOnce(frames, cfg, r); }));
    for (size_t i = 0; i < running.size(); ++i) fits[base + i] = running[i].get();
  }
  size_t best = 0;
  for (size_t r = 0; r < fits.size(); ++r) {
    log().debug("k-means restart {}: inertia {:.6g} after {} epochs", r, fits[r].inertia,
                fits[r].epochs_run);
    if (fits[r].inertia < fits[best].inertia) best = r;
  }
  return std::move(fits[best]);
}

const std::vector<uint16_t>& PseudoLabelSet::At(const std::string& utt_id) const {
  auto it = labels.find(utt_id);
  if (it == labels.end()) throw DataError("no pseudo-labels for utterance " + utt_id);
  return it->second;
}

void PseudoLabelSet::Add(const std::string& utt_id, std::vector<uint16_t> seq) {
  for (uint16_t l : seq)
    if (l >= k) throw DataError(utt_id + ": label " + std::to_string(l) + " >= k " + std::to_string(k));
  if (!labels.emplace(utt_id, std::move(seq)).second)
    throw DataError("duplicate pseudo-labels for " + utt_id);
  order.push_back(utt_id);
}

PseudoLabelSet AssignLabels(const KMeansModel& model, const std::vector<TeacherFrames>& frames,
                            const std::string& teacher_kind) {
  PseudoLabelSet out;
  out.k = model.k;
  out.teacher_kind = teacher_kind;
  out.seed = model.seed;
  for (const auto& tf : frames) {
    if (tf.frames.dim() != model.dim)
      throw DataError(tf.utt_id + ": teacher dim " + std::to_string(tf.frames.dim()) +
                      " != centroid dim " + std::to_string(model.dim));
    std::vector<uint16_t> seq(tf.frames.n_frames());
    for (size_t t = 0; t < seq.size(); ++t)
      seq[t] = static_cast<uint16_t>(NearestCentroid(model.centroids, tf.frames.values.row(t)));
    out.Add(tf.utt_id, std::move(seq));
  }
  return out;
}

Tensor StackFrames(const std::vector<TeacherFrames>& frames) {
  if (frames.empty()) return Tensor();
  const size_t dim = frames[0].frames.dim();
  size_t rows = 0;
  for (const auto& tf : frames) {
    if (tf.frames.dim() != dim) throw DataError(tf.utt_id + ": inconsistent teacher dim");
    rows += tf.frames.n_frames();
  }
  Tensor out(rows, dim);
  size_t r = 0;
  for (const auto& tf : frames) {
    std::copy_n(tf.frames.values.data(), tf.frames.values.size(), out.row(r).data());
    r += tf.frames.n_frames();
  }
  return out;
}

void WriteLabels(const std::filesystem::path& path, const PseudoLabelSet& labels) {
  std::vector<char> buf;
  auto put = [&](const void* p, size_t n) {
    const char* c = static_cast<const char*>(p);
    buf.insert(buf.end(), c, c + n);
  };
  put(kLabelMagic, 4);
  const uint32_t header[3] = {kLabelVersion, static_cast<uint32_t>(labels.k),
                              static_cast<uint32_t>(labels.order.size())};
  put(header, sizeof(header));
  nlohmann::json offsets = nlohmann::json::object();
  for (const auto& id : labels.order) {
    offsets[id] = buf.size();
    const auto& seq = labels.At(id);
    const uint32_t len = static_cast<uint32_t>(id.size());
    const uint64_t t = seq.size();
    put(&len, 4);
    put(id.data(), len);
    put(&t, 8);
    put(seq.data(), seq.size() * sizeof(uint16_t));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  nlohmann::json index = {{"k", labels.k},
                          {"teacher", labels.teacher_kind},
                          {"seed", labels.seed},
                          {"n_utts", labels.order.size()},
                          {"offsets", offsets}};
  std::ofstream(path.string() + ".index.json") << index.dump(1) << "\n";
}

PseudoLabelSet ReadLabels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open labels " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  size_t pos = 0;
  auto get = [&](void* dst, size_t n) {
    if (pos + n > bytes.size() || pos + n < pos)
      throw DataError(path.string() + ": truncated label file");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  char magic[4];
  get(magic, 4);
  if (std::memcmp(magic, kLabelMagic, 4) != 0)
    throw DataError(path.string() + ": not a pseudo-label file");
  uint32_t header[3];
  get(header, sizeof(header));
  if (header[0] != kLabelVersion)
    throw DataError(path.string() + ": unsupported label version " + std::to_string(header[0]));
  PseudoLabelSet out;
  out.k = header[1];
  for (uint32_t u = 0; u < header[2]; ++u) {
    uint32_t len;
    get(&len, 4);
    std::string id(len, '\0');
    get(id.data(), len);
    uint64_t t;
    get(&t, 8);
    if (t > bytes.size()) throw DataError(path.string() + ": truncated label file");
    std::vector<uint16_t> seq(t);
    get(seq.data(), t * sizeof(uint16_t));
    out.Add(id, std::move(seq));
  }
  if (pos != bytes.size()) throw DataError(path.string() + ": trailing bytes in label file");
  std::ifstream idx(path.string() + ".index.json");
  if (idx) {
    try {
      auto j = nlohmann::json::parse(idx);
      out.teacher_kind = j.value("teacher", std::string());
      out.seed = j.value("seed", uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ".index.json: " + e.what());
    }
  }
  return out;
}

void WriteKMeansModel(const std::filesystem::path& path, const KMeansModel& m) {
  nlohmann::json j = {{"k", m.k},
                      {"dim", m.dim},
                      {"inertia", m.inertia},
                      {"seed", m.seed},
                      {"n_restarts", m.n_restarts},
                      {"minibatch_size", m.minibatch_size},
                      {"epochs_run", m.epochs_run},
                      {"counts", m.counts},
                      {"centroids", std::vector<double>(m.centroids.data(), m.centroids.data() + m.centroids.size())}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump() << "\n";
}

KMeansModel ReadKMeansModel(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    auto j = nlohmann::json::parse(in);
    KMeansModel m;
    m.k = j.at("k");
    m.dim = j.at("dim");
    m.inertia = j.at("inertia");
    m.seed = j.at("seed");
    m.n_restarts = j.at("n_restarts");
    m.minibatch_size = j.at("minibatch_size");
    m.epochs_run = j.at("epochs_run");
    m.counts = j.at("counts").get<std::vector<uint64_t>>();
    m.centroids = Tensor(m.k, m.dim, j.at("centroids").get<std::vector<double>>());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace delulu
