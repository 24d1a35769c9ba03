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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sskd/errors.hpp"
#include "sskd/tensor.hpp"

namespace sskd {

/// One image stand-in: a feature vector with its annotations. Unlabeled
/// records carry no identity.
struct SampleRecord {
  std::vector<double> features;
  std::optional<std::int64_t> identity;
  int camera = 0;
  std::string domain;

  bool operator==(const SampleRecord&) const = default;
};

/// Labeled training data with identities remapped to dense class indices
/// 0..K-1 in ascending identity order.
struct LabeledSet {
  Tensor features;
  std::vector<int> labels;
  std::vector<std::int64_t> class_identity;
  std::vector<std::vector<std::size_t>> members;  // sample indices per class

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return class_identity.size(); }
  std::size_t input_dim() const { return features.cols(); }
};

/// Feature-only training pool. Holds no identity information.
struct UnlabeledSet {
  std::optional<Tensor> features;

  std::size_t size() const { return features ? features->rows() : 0; }
  bool empty() const { return size() == 0; }
};

namespace detail {

inline std::size_t common_dim(std::span<const SampleRecord> records) {
  const std::size_t dim = records.front().features.size();
  if (dim == 0) throw DimensionError("records have empty feature vectors");
  for (const SampleRecord& r : records) {
    if (r.features.size() != dim) {
      throw DimensionError("records disagree on feature dimension");
    }
  }
  return dim;
}

inline Tensor stack_features(std::span<const SampleRecord> records) {
  const std::size_t dim = common_dim(records);
  std::vector<double> data;
  data.reserve(records.size() * dim);
  for (const SampleRecord& r : records) {
    data.insert(data.end(), r.features.begin(), r.features.end());
  }
  return Tensor({records.size(), dim}, std::move(data));
}

}  // namespace detail

inline LabeledSet make_labeled_set(std::span<const SampleRecord> records) {
  if (records.empty()) throw UsageError("labeled set is empty");
  std::map<std::int64_t, int> class_of;
  for (const SampleRecord& r : records) {
    if (!r.identity) throw UsageError("labeled set contains an unlabeled record");
    class_of.emplace(*r.identity, 0);
  }
  LabeledSet set;
  for (auto& [id, cls] : class_of) {
    cls = static_cast<int>(set.class_identity.size());
    set.class_identity.push_back(id);
  }
  set.members.resize(set.class_identity.size());
  set.labels.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int cls = class_of.at(*records[i].identity);
    set.labels.push_back(cls);
    set.members[static_cast<std::size_t>(cls)].push_back(i);
  }
  set.features = detail::stack_features(records);
  return set;
}

inline UnlabeledSet make_unlabeled_set(std::span<const SampleRecord> records) {
  UnlabeledSet set;
  if (!records.empty()) set.features = detail::stack_features(records);
  return set;
}

}  // namespace sskd
