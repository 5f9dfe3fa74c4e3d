// tests/metric_oracles.h

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

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "delulu/base/rng.h"
#include "delulu/eval/eval.h"

namespace delulu::testing {

// Adjusted Rand index from the contingency table.
template <typename A, typename B>
double AdjustedRandIndex(const std::vector<A>& a, const std::vector<B>& b) {
  std::map<std::pair<A, B>, double> joint;
  std::map<A, double> ra;
  std::map<B, double> rb;
  for (size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double n) { return n * (n - 1) / 2; };
  double sum_joint = 0, sum_a = 0, sum_b = 0;
  for (auto& [k, v] : joint) sum_joint += c2(v);
  for (auto& [k, v] : ra) sum_a += c2(v);
  for (auto& [k, v] : rb) sum_b += c2(v);
  const double expected = sum_a * sum_b / c2(static_cast<double>(a.size()));
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_joint - expected) / (max_index - expected);
}

// Brute force: FRR/FAR recounted from scratch at every candidate threshold.
inline double BruteForceEer(const ScoreSet& s) {
  std::vector<double> u = s.scores;
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  std::vector<double> cand = {u.front()};
  for (size_t i = 0; i + 1 < u.size(); ++i) cand.push_back(0.5 * (u[i] + u[i + 1]));
  cand.push_back(std::nextafter(u.back(), std::numeric_limits<double>::infinity()));
  double prev_frr = 0, prev_far = 0;
  for (size_t c = 0; c < cand.size(); ++c) {
    double tar = 0, tar_below = 0, non = 0, non_above = 0;
    for (size_t i = 0; i < s.scores.size(); ++i) {
      if (s.targets[i]) {
        ++tar;
        tar_below += s.scores[i] < cand[c];
      } else {
        ++non;
        non_above += s.scores[i] >= cand[c];
      }
    }
    const double frr = tar_below / tar, far = non_above / non;
    if (frr >= far) {
      if (c == 0 || frr == far) return frr;
      const double d0 = prev_frr - prev_far, d1 = frr - far;
      const double a = -d0 / (d1 - d0);
      return prev_frr + a * (frr - prev_frr);
    }
    prev_frr = frr;
    prev_far = far;
  }
  return prev_frr;
}

inline ScoreSet RandomScores(uint64_t seed) {
  Rng rng(seed);
  ScoreSet s;
  const size_t n = 2 + UniformIndex(rng, 200);
  const bool coarse = UniformIndex(rng, 2) == 0;
  for (size_t i = 0; i < n; ++i) {
    const bool target = i == 0 ? true : i == 1 ? false : UniformIndex(rng, 2) == 0;
    double v = Gaussian(rng) + (target ? 1.0 : 0.0);
    if (coarse) v = std::round(v * 4.0) / 4.0;
    s.scores.push_back(v);
    s.targets.push_back(target);
  }
  return s;
}

inline EmbeddingEntry Entry(const std::string& utt, const std::string& spk, std::vector<double> e,
                     const std::string& gender = "female") {
  return {utt, spk, {{"gender", gender}, {"age_band", "18-35"}}, std::move(e)};
}

// n_spk speakers, n_utt utterances each, tight clusters around random unit
// centres (or pure noise when spread is huge).
inline EmbeddingTable ClusteredTable(size_t n_spk, size_t n_utt, size_t dim, double spread,
                              uint64_t seed) {
  Rng rng(seed);
  EmbeddingTable t;
  t.normalized = true;
  for (size_t s = 0; s < n_spk; ++s) {
    std::vector<double> centre(dim);
    for (double& v : centre) v = Gaussian(rng);
    for (size_t u = 0; u < n_utt; ++u) {
      std::vector<double> e(dim);
      double n2 = 0;
      for (size_t j = 0; j < dim; ++j) {
        e[j] = centre[j] + spread * Gaussian(rng);
        n2 += e[j] * e[j];
      }
      for (double& v : e) v /= std::sqrt(n2);
      t.Add(Entry("s" + std::to_string(s) + "_u" + std::to_string(u), "s" + std::to_string(s), e,
                  s % 2 ? "male" : "female"));
    }
  }
  return t;
}

}  // namespace delulu::testing
