/*
 * Copyright 2026 The SSKD Toolkit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sskd/data.hpp"
#include "sskd/domainsim.hpp"
#include "sskd/errors.hpp"
#include "sskd/model.hpp"
#include "sskd/tensor.hpp"

namespace sskd {

/// Embeddings with identity and camera labels; rows are L2-normalized on
/// construction.
struct EmbeddingSet {
  Tensor embeddings;
  std::vector<std::int64_t> identity;
  std::vector<int> camera;

  EmbeddingSet() = default;
  EmbeddingSet(const Tensor& raw, std::vector<std::int64_t> ids,
               std::vector<int> cams)
      : identity(std::move(ids)), camera(std::move(cams)) {
    if (raw.rank() != 2) throw DimensionError("embeddings must be a matrix");
    if (raw.rows() != identity.size() || raw.rows() != camera.size()) {
      throw DimensionError("embedding rows and labels differ in count");
    }
    std::vector<double> data;
    data.reserve(raw.size());
    for (std::size_t r = 0; r < raw.rows(); ++r) {
      auto n = l2_normalize(raw.row(r));
      data.insert(data.end(), n.begin(), n.end());
    }
    embeddings = Tensor({raw.rows(), raw.cols()}, std::move(data));
  }

  std::size_t size() const { return identity.size(); }
  std::size_t dim() const { return embeddings.cols(); }
};

using ProbeSet = EmbeddingSet;
using GallerySet = EmbeddingSet;

/// Cosine distance 1 − ⟨p, g⟩ between normalized rows, clamped to [0, 2].
inline Tensor distance_matrix(const ProbeSet& probe, const GallerySet& gallery) {
  if (probe.dim() != gallery.dim()) {
    throw DimensionError("probe and gallery embedding dims differ");
  }
  const std::size_t p = probe.size(), g = gallery.size(), d = probe.dim();
  std::vector<double> out(p * g);
  for (std::size_t i = 0; i < p; ++i) {
    auto a = probe.embeddings.row(i);
    for (std::size_t j = 0; j < g; ++j) {
      auto b = gallery.embeddings.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += a[k] * b[k];
      out[i * g + j] = std::clamp(1.0 - dot, 0.0, 2.0);
    }
  }
  return Tensor({p, g}, std::move(out));
}

inline constexpr int kReportedRanks[] = {1, 5, 10};

struct EvalResult {
  std::map<int, double> rank_k;        // k -> fraction of evaluated probes
  double mean_ap = 0.0;
  std::vector<double> per_query_ap;    // evaluated probes only, probe order
  std::vector<std::size_t> first_hit;  // 1-based rank of first match
  std::size_t evaluated = 0;
  std::size_t skipped = 0;             // probes without any valid match

  double rank1() const { return rank_k.at(1); }
};

/// Ranks the gallery for each probe by ascending distance (ties by gallery
/// index). With filtering, gallery entries sharing the probe's identity and
/// camera are dropped. AP is the mean of precision at each relevant position.
inline EvalResult evaluate(const ProbeSet& probe, const GallerySet& gallery,
                           bool filter_same_camera = true) {
  if (probe.size() == 0 || gallery.size() == 0) {
    throw EvalError("probe and gallery must be non-empty");
  }
  const Tensor dist = distance_matrix(probe, gallery);
  const std::size_t g = gallery.size();
  EvalResult res;
  std::vector<std::size_t> hits_within(std::size(kReportedRanks), 0);
  std::vector<std::size_t> order(g);
  for (std::size_t q = 0; q < probe.size(); ++q) {
    auto row = dist.row(q);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });
    std::size_t rank = 0, found = 0, first = 0;
    double precision_sum = 0.0;
    for (std::size_t j : order) {
      const bool same_id = gallery.identity[j] == probe.identity[q];
      if (filter_same_camera && same_id && gallery.camera[j] == probe.camera[q]) {
        continue;
      }
      ++rank;
      if (same_id) {
        ++found;
        if (first == 0) first = rank;
        precision_sum += double(found) / double(rank);
      }
    }
    if (found == 0) {
      ++res.skipped;
      continue;
    }
    ++res.evaluated;
    res.first_hit.push_back(first);
    res.per_query_ap.push_back(precision_sum / double(found));
    for (std::size_t r = 0; r < std::size(kReportedRanks); ++r) {
      if (first <= std::size_t(kReportedRanks[r])) ++hits_within[r];
    }
  }
  if (res.evaluated == 0) {
    throw EvalError("no probe has a valid gallery match");
  }
  for (std::size_t r = 0; r < std::size(kReportedRanks); ++r) {
    res.rank_k[kReportedRanks[r]] = double(hits_within[r]) / double(res.evaluated);
  }
  double total = 0.0;
  for (double ap : res.per_query_ap) total += ap;
  res.mean_ap = total / double(res.evaluated);
  return res;
}

struct ProbeGallerySplit {
  std::vector<std::size_t> probe;
  std::vector<std::size_t> gallery;
};

/// Within each (identity, camera) group, one image (the first after a seeded
/// shuffle of the group) becomes a probe; the rest go to the gallery.
inline ProbeGallerySplit split_probe_gallery(std::span<const SampleRecord> records,
                                             std::uint64_t split_seed) {
  std::map<std::pair<std::int64_t, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].identity) {
      throw EvalError("test records must carry identities");
    }
    groups[{*records[i].identity, records[i].camera}].push_back(i);
  }
  std::mt19937_64 rng(split_seed);
  ProbeGallerySplit split;
  for (auto& [key, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    split.probe.push_back(members.front());
    split.gallery.insert(split.gallery.end(), members.begin() + 1, members.end());
  }
  std::sort(split.probe.begin(), split.probe.end());
  std::sort(split.gallery.begin(), split.gallery.end());
  return split;
}

inline EmbeddingSet embed_records(const Model& model,
                                  std::span<const SampleRecord> records,
                                  std::span<const std::size_t> which) {
  std::vector<SampleRecord> picked;
  picked.reserve(which.size());
  std::vector<std::int64_t> ids;
  std::vector<int> cams;
  for (std::size_t i : which) {
    picked.push_back(records[i]);
    ids.push_back(*records[i].identity);
    cams.push_back(records[i].camera);
  }
  const Tensor x = detail::stack_features(picked);
  return EmbeddingSet(embed(model, x), std::move(ids), std::move(cams));
}

/// Evaluates a single test domain: split, embed with the model, rank.
inline EvalResult evaluate_domain(const Model& model,
                                  std::span<const SampleRecord> records,
                                  std::uint64_t split_seed,
                                  bool filter_same_camera = true) {
  if (records.empty()) throw EvalError("test domain is empty");
  const ProbeGallerySplit split = split_probe_gallery(records, split_seed);
  if (split.gallery.empty()) throw EvalError("test domain has no gallery images");
  return evaluate(embed_records(model, records, split.probe),
                  embed_records(model, records, split.gallery),
                  filter_same_camera);
}

/// Per test domain of the protocol, in the protocol's order.
inline std::vector<std::pair<std::string, EvalResult>> run_protocol(
    const ProtocolSpec& protocol, const Model& model,
    const std::map<std::string, std::vector<SampleRecord>>& domain_data,
    std::uint64_t split_seed, bool filter_same_camera = true) {
  std::vector<std::pair<std::string, EvalResult>> out;
  for (const std::string& test : protocol.tests) {
    auto it = domain_data.find(test);
    if (it == domain_data.end()) {
      throw EvalError("no data for test domain '" + test + "'");
    }
    out.emplace_back(test, evaluate_domain(model, it->second, split_seed,
                                           filter_same_camera));
  }
  return out;
}

}  // namespace sskd
