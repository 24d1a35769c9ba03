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

// Shared oracles for the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <random>
#include <vector>

#include "sskd/autodiff.hpp"
#include "sskd/distill.hpp"
#include "sskd/model.hpp"
#include "sskd/retrieval.hpp"
#include "sskd/tensor.hpp"

namespace sskd::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

// |a − n| / max(|a|, |n|, floor). The floor keeps near-zero gradients from
// turning rounding noise into large relative errors.
inline double rel_error(double a, double n, double floor = 1e-3) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Largest relative error between reverse-mode gradients of f and central
/// differences with step h, over every input element.
inline double gradient_error(const ScalarFn& f, std::vector<Tensor> inputs,
                             double h = 1e-5) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
  tape.backward(f(tape, vars));

  auto eval = [&](const std::vector<Tensor>& in) {
    Tape t;
    std::vector<Var> vs;
    for (const Tensor& x : in) vs.push_back(t.constant(x));
    return f(t, vs).item();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::vector<double> analytic = tape.grad(vars[i]);
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double x0 = inputs[i][j];
      inputs[i][j] = x0 + h;
      const double up = eval(inputs);
      inputs[i][j] = x0 - h;
      const double down = eval(inputs);
      inputs[i][j] = x0;
      worst = std::max(worst, rel_error(analytic[j], (up - down) / (2 * h)));
    }
  }
  return worst;
}

/// Same check over a model's parameters, for a loss built by `f`.
inline double parameter_gradient_error(Model& m,
                                       const std::function<Var(Tape&, Model&)>& f,
                                       double h = 1e-5) {
  m.zero_grad();
  {
    Tape tape;
    tape.backward(f(tape, m));
  }
  double worst = 0.0;
  for (Tensor* p : m.parameters()) {
    const std::vector<double> analytic(p->grad().begin(), p->grad().end());
    for (std::size_t j = 0; j < p->size(); ++j) {
      const double x0 = (*p)[j];
      (*p)[j] = x0 + h;
      double up, down;
      {
        Tape t;
        up = f(t, m).item();
      }
      (*p)[j] = x0 - h;
      {
        Tape t;
        down = f(t, m).item();
      }
      (*p)[j] = x0;
      worst = std::max(worst, rel_error(analytic[j], (up - down) / (2 * h)));
    }
  }
  m.clear_grad();
  return worst;
}

/// One random micro-instance of every tape op, the three losses and the
/// composite objective on small models. Returns the worst relative gradient
/// error per check.
inline std::map<std::string, double> micro_instance_errors(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim(1, 4);
  std::uniform_real_distribution<double> tau_d(0.5, 8.0);
  const std::size_t r = std::size_t(dim(rng)), c = std::size_t(dim(rng)) + 1;
  const double tau = tau_d(rng);
  // Inputs kept away from relu's kink and log's domain edge.
  Tensor x = random_tensor({r, c}, rng);
  for (double& v : x.data()) v += v >= 0 ? 0.1 : -0.1;
  const Tensor y = random_tensor({r, c}, rng, -3, 3);
  const Tensor pos = random_tensor({r, c}, rng, 0.2, 2.0);
  const Tensor row = random_tensor({c}, rng);
  const Tensor w = random_tensor({c, 3}, rng);
  const Tensor weights = random_tensor({r, c}, rng);
  std::vector<int> labels(r);
  for (int& l : labels) l = std::uniform_int_distribution<int>(0, int(c) - 1)(rng);

  std::map<std::string, double> err;
  auto weighted = [&](Tape& tp, Var v) { return sum(mul(v, tp.constant(weights))); };
  auto check = [&](const std::string& name, const ScalarFn& f, std::vector<Tensor> in) {
    err[name] = gradient_error(f, std::move(in));
  };
  check("add", [&](Tape& t, const auto& v) { return weighted(t, add(v[0], v[1])); }, {x, y});
  check("add_row", [&](Tape& t, const auto& v) { return weighted(t, add(v[0], v[1])); }, {x, row});
  check("sub", [&](Tape& t, const auto& v) { return weighted(t, sub(v[0], v[1])); }, {x, y});
  check("mul", [&](Tape& t, const auto& v) { return weighted(t, mul(v[0], v[1])); }, {x, y});
  check("scale", [&](Tape& t, const auto& v) { return weighted(t, scale(v[0], -1.7)); }, {x});
  check("relu", [&](Tape& t, const auto& v) { return weighted(t, relu(v[0])); }, {x});
  check("exp", [&](Tape& t, const auto& v) { return weighted(t, exp(v[0])); }, {x});
  check("log", [&](Tape& t, const auto& v) { return weighted(t, log(v[0])); }, {pos});
  check("sum", [&](Tape& t, const auto& v) { return sum(mul(v[0], v[0])); }, {x});
  check("mean", [&](Tape&, const auto& v) { return mean(mul(v[0], v[0])); }, {x});
  check("matmul", [&](Tape&, const auto& v) { return sum(mul(matmul(v[0], v[1]), matmul(v[0], v[1]))); },
        {x, w});
  check("softmax", [&](Tape& t, const auto& v) { return weighted(t, softmax(v[0], tau)); }, {y});
  check("log_probability",
        [&](Tape& t, const auto& v) { return weighted(t, log_probability(softmax(v[0], tau))); },
        {y});
  check("cross_entropy",
        [&](Tape&, const auto& v) { return cross_entropy(v[0], labels, tau); }, {y});
  // Only the student side carries gradient: the teacher input is detached.
  check("kd_loss", [&](Tape& t, const auto& v) { return kd_loss(t.constant(x), v[0], tau); },
        {y});
  check("kd_loss_unlabeled",
        [&](Tape& t, const auto& v) { return kd_loss_unlabeled(t.constant(y), v[0], tau); },
        {x});

  // Composite objective over the parameters of a micro student.
  const std::size_t k = c + 1;
  const std::uint64_t seed = rng();
  Model student = build_model(ExtractorConfig{3, {4}, 3, 0}, k, k, seed);
  const Model teacher = freeze(build_model(ExtractorConfig{3, {5}, 3, 0}, k, std::nullopt, seed + 1));
  LabeledBatch batch;
  batch.features = random_tensor({r + 1, 3}, rng, -2, 2);
  for (std::size_t i = 0; i <= r; ++i) {
    batch.labels.push_back(std::uniform_int_distribution<int>(0, int(k) - 1)(rng));
    batch.indices.push_back(i);
  }
  const Tensor unlabeled = random_tensor({2, 3}, rng, -2, 2);
  const Tensor tl = main_logits(teacher, batch.features), tu = main_logits(teacher, unlabeled);
  const TemperatureConfig temps{1.0, tau, tau_d(rng)};
  err["sskd_objective"] = parameter_gradient_error(student, [&](Tape& t, Model& s) {
    return sskd_objective(t, s, batch, tl, unlabeled, tu, temps, LossOptions{}).total;
  });
  return err;
}

struct RankingOracle {
  std::vector<double> ap;           // probes with at least one valid match
  std::vector<std::size_t> first;   // 1-based rank of the first match
  std::map<int, double> rank_k;
  double mean_ap = 0.0;
};

/// Enumeration without sorting: the rank of a valid gallery entry j is one
/// plus the number of valid entries strictly closer, or equally close with a
/// smaller index. Distances are the cosine distances of the normalized rows.
inline RankingOracle brute_force_ranking(const EmbeddingSet& probe, const EmbeddingSet& gallery,
                                         bool filter) {
  RankingOracle out;
  const std::size_t d = probe.dim();
  std::vector<double> dist(gallery.size());
  for (std::size_t q = 0; q < probe.size(); ++q) {
    std::vector<bool> valid(gallery.size());
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        dot += probe.embeddings.at(q, k) * gallery.embeddings.at(j, k);
      }
      dist[j] = std::clamp(1.0 - dot, 0.0, 2.0);
      valid[j] = !(filter && gallery.identity[j] == probe.identity[q] &&
                   gallery.camera[j] == probe.camera[q]);
    }
    std::vector<std::size_t> ranks;
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      if (!valid[j] || gallery.identity[j] != probe.identity[q]) continue;
      std::size_t rank = 1;
      for (std::size_t i = 0; i < gallery.size(); ++i) {
        if (valid[i] && (dist[i] < dist[j] || (dist[i] == dist[j] && i < j))) ++rank;
      }
      ranks.push_back(rank);
    }
    if (ranks.empty()) continue;
    std::sort(ranks.begin(), ranks.end());
    double prec = 0.0;
    for (std::size_t i = 0; i < ranks.size(); ++i) prec += double(i + 1) / double(ranks[i]);
    out.ap.push_back(prec / double(ranks.size()));
    out.first.push_back(ranks.front());
  }
  if (out.ap.empty()) return out;
  for (int k : kReportedRanks) {
    std::size_t hits = 0;
    for (std::size_t f : out.first) hits += f <= std::size_t(k);
    out.rank_k[k] = double(hits) / double(out.first.size());
  }
  double total = 0.0;
  for (double a : out.ap) total += a;
  out.mean_ap = total / double(out.ap.size());
  return out;
}

/// Random instance with coarse integer coordinates so that distance ties
/// are common. Rows are never all zero.
inline std::pair<EmbeddingSet, EmbeddingSet> random_ranking_instance(std::mt19937_64& rng,
                                                                     std::size_t max_size) {
  std::uniform_int_distribution<std::size_t> sz(1, max_size);
  std::uniform_int_distribution<int> idd(0, 4), camd(0, 2), coord(-2, 2);
  auto make = [&](std::size_t n) {
    Tensor t = Tensor::zeros({n, 3});
    std::vector<std::int64_t> ids(n);
    std::vector<int> cams(n);
    for (std::size_t r = 0; r < n; ++r) {
      do {
        for (std::size_t k = 0; k < 3; ++k) t.at(r, k) = coord(rng);
      } while (t.at(r, 0) == 0 && t.at(r, 1) == 0 && t.at(r, 2) == 0);
      ids[r] = idd(rng);
      cams[r] = camd(rng);
    }
    return EmbeddingSet(t, std::move(ids), std::move(cams));
  };
  EmbeddingSet p = make(sz(rng));
  EmbeddingSet g = make(sz(rng));
  return {std::move(p), std::move(g)};
}

/// Exact agreement of evaluate() with the brute-force enumeration.
inline bool ranking_matches_oracle(const EmbeddingSet& p, const EmbeddingSet& g, bool filter,
                                   std::string* why = nullptr) {
  const RankingOracle o = brute_force_ranking(p, g, filter);
  if (o.ap.empty()) {
    try {
      evaluate(p, g, filter);
    } catch (const EvalError&) {
      return true;
    }
    if (why) *why = "expected EvalError";
    return false;
  }
  const EvalResult r = evaluate(p, g, filter);
  const bool ok = r.per_query_ap == o.ap && r.first_hit == o.first && r.rank_k == o.rank_k &&
                  r.mean_ap == o.mean_ap && r.evaluated == o.ap.size() &&
                  r.skipped == p.size() - o.ap.size();
  if (!ok && why) *why = "mismatch";
  return ok;
}

/// Plain-loop softmax at temperature tau, independent of the tape code.
inline std::vector<double> softmax_oracle(const std::vector<double>& d, double tau) {
  double mx = *std::max_element(d.begin(), d.end());
  std::vector<double> p(d.size());
  double z = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) z += p[i] = std::exp((d[i] - mx) / tau);
  for (double& x : p) x /= z;
  return p;
}

inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

}  // namespace sskd::testing
