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
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sskd/autodiff.hpp"
#include "sskd/data.hpp"
#include "sskd/errors.hpp"
#include "sskd/model.hpp"
#include "sskd/tensor.hpp"

namespace sskd {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Temperatures for the hard-label term (tau_c), labeled distillation
/// (tau_kd) and unlabeled distillation (tau_kd_u).
struct TemperatureConfig {
  double tau_c = 1.0;
  double tau_kd = 16.0;
  double tau_kd_u = 6.0;

  void validate() const {
    auto check = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw ConfigError(std::string("TemperatureConfig.") + name +
                          " must be a positive finite number");
      }
    };
    check(tau_c, "tau_c");
    check(tau_kd, "tau_kd");
    check(tau_kd_u, "tau_kd_u");
  }
};

struct LossOptions {
  // Stage-2 hard-label term at tau_kd (as the total objective is written) or
  // at tau_c.
  bool stage2_ce_at_tau_kd = true;
  // Multiply both KL terms by tau^2.
  bool scale_kl_by_tau_squared = false;
};

/// PK sampling: p identities × k images per labeled batch, plus a uniformly
/// drawn unlabeled batch per step.
struct BatchPlan {
  std::size_t p_identities = 64;
  std::size_t k_per_identity = 4;
  std::size_t unlabeled_per_step = 48;

  std::size_t labeled_batch_size() const { return p_identities * k_per_identity; }

  void validate() const {
    if (p_identities == 0 || k_per_identity == 0) {
      throw ConfigError("BatchPlan needs p_identities >= 1 and k_per_identity >= 1");
    }
  }
};

/// Linear warmup from warmup_factor·base_lr to base_lr over the first
/// warmup_epochs, then cosine decay to final_lr.
struct ScheduleConfig {
  double base_lr = 7e-4;
  double final_lr = 7e-7;
  double warmup_factor = 0.1;
  int warmup_epochs = 1;
  int total_epochs = 40;
  // Optimizer steps per epoch; 0 derives it from the labeled set size.
  std::size_t iters_per_epoch = 0;

  void validate() const {
    if (!(final_lr > 0.0) || !(final_lr <= base_lr)) {
      throw ConfigError("ScheduleConfig requires 0 < final_lr <= base_lr");
    }
    if (!(warmup_factor > 0.0) || !(warmup_factor <= 1.0)) {
      throw ConfigError("ScheduleConfig requires 0 < warmup_factor <= 1");
    }
    if (warmup_epochs < 0 || total_epochs < 0) {
      throw ConfigError("ScheduleConfig epoch counts must be non-negative");
    }
  }
};

/// Learning rate at a training-progress fraction t ∈ [0, 1] (clamped).
inline double lr_at(const ScheduleConfig& s, double t) {
  t = std::clamp(t, 0.0, 1.0);
  const double warm =
      s.total_epochs > 0
          ? std::min(1.0, double(s.warmup_epochs) / double(s.total_epochs))
          : 0.0;
  if (warm > 0.0 && t < warm) {
    const double ramp = t / warm;
    return s.base_lr * (s.warmup_factor + (1.0 - s.warmup_factor) * ramp);
  }
  if (warm >= 1.0) return s.base_lr;
  const double progress = (t - warm) / (1.0 - warm);
  return s.final_lr + (s.base_lr - s.final_lr) * 0.5 *
                          (1.0 + std::cos(std::numbers::pi * progress));
}

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // sgd only
};

/// Adam or momentum SGD over a model's parameters. Frozen models are left
/// untouched.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return steps_; }

  void step(Model& m, double lr) {
    if (m.frozen) return;
    auto params = m.parameters();
    if (first_.empty()) {
      for (Tensor* p : params) {
        first_.emplace_back(p->size(), 0.0);
        if (cfg_.kind == OptimizerKind::adam) second_.emplace_back(p->size(), 0.0);
      }
    }
    if (first_.size() != params.size()) {
      throw UsageError("optimizer state does not match model parameters");
    }
    ++steps_;
    const double t = double(steps_);
    const double c1 = 1.0 - std::pow(cfg_.beta1, t);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      if (!p.has_grad()) continue;
      auto w = p.data();
      auto g = std::as_const(p).grad();
      auto& m1 = first_[i];
      if (cfg_.kind == OptimizerKind::adam) {
        auto& m2 = second_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
          m1[j] = cfg_.beta1 * m1[j] + (1.0 - cfg_.beta1) * g[j];
          m2[j] = cfg_.beta2 * m2[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
          w[j] -= lr * (m1[j] / c1) / (std::sqrt(m2[j] / c2) + cfg_.eps);
        }
      } else {
        for (std::size_t j = 0; j < w.size(); ++j) {
          m1[j] = cfg_.momentum * m1[j] + g[j];
          w[j] -= lr * m1[j];
        }
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace detail {

inline Var log_softmax(const Var& logits, double tau) {
  return log_probability(softmax(logits, tau));
}

// Batch mean of −log p_i[y_i] given per-row log-probabilities.
inline Var nll(const Var& log_p, std::span<const int> labels) {
  const Tensor& z = log_p.value();
  if (z.rank() != 2 || z.rows() != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_string(z.shape()) +
                         " do not match " + std::to_string(labels.size()) +
                         " labels");
  }
  const std::size_t rows = z.rows(), k = z.cols();
  Tensor onehot = Tensor::zeros({rows, k});
  for (std::size_t i = 0; i < rows; ++i) {
    if (labels[i] < 0 || std::size_t(labels[i]) >= k) {
      throw DimensionError("cross_entropy: label " + std::to_string(labels[i]) +
                           " outside [0, " + std::to_string(k) + ")");
    }
    onehot.at(i, std::size_t(labels[i])) = 1.0;
  }
  Tape& tape = *log_p.tape();
  return scale(sum(mul(log_p, tape.constant(std::move(onehot)))),
               -1.0 / double(rows));
}

// Batch mean of Σ_j p_t log(p_t / p_s) for constant target logits. The
// target's Σ p_t log p_t does not depend on the student and enters as a
// constant.
inline Var kl_from_log_probs(const Tensor& target_logits, const Var& log_ps,
                             double tau, bool tau_squared) {
  Tape& tape = *log_ps.tape();
  Tape scratch;
  Tensor pt = softmax(scratch.constant(target_logits), tau).value();
  double neg_entropy = 0.0;
  for (double p : pt.data()) {
    neg_entropy += p * std::log(std::clamp(p, kProbabilityFloor, 1.0));
  }
  const double rows = double(target_logits.rows());
  Var cross = sum(mul(log_ps, tape.constant(std::move(pt))));
  Var kl = scale(sub(tape.constant(Tensor::scalar(neg_entropy)), cross), 1.0 / rows);
  return tau_squared ? scale(kl, tau * tau) : kl;
}

inline Var kl_to_constant_target(const Var& target_logits,
                                 const Var& student_logits, double tau,
                                 bool tau_squared) {
  common_tape(target_logits, student_logits);
  // Detached target: only its values are read.
  return kl_from_log_probs(target_logits.value(),
                           log_softmax(student_logits, tau), tau, tau_squared);
}

}  // namespace detail

/// Batch mean of −log softmax_τ(logits_i)[y_i].
inline Var cross_entropy(const Var& logits, std::span<const int> labels,
                         double tau) {
  return detail::nll(detail::log_softmax(logits, tau), labels);
}

/// Batch mean of KL(p_t ‖ p_s) with both sides at temperature τ. No gradient
/// reaches the teacher logits.
inline Var kd_loss(const Var& teacher_logits, const Var& student_logits,
                   double tau, bool scale_by_tau_squared = false) {
  if (teacher_logits.shape() != student_logits.shape() ||
      teacher_logits.value().rank() != 2) {
    throw DimensionError("kd_loss: teacher " +
                         shape_string(teacher_logits.shape()) + " vs student " +
                         shape_string(student_logits.shape()));
  }
  return detail::kl_to_constant_target(teacher_logits, student_logits, tau,
                                       scale_by_tau_squared);
}

/// The unlabeled-pool distillation term: teacher pseudo soft labels against
/// the student's auxiliary head.
inline Var kd_loss_unlabeled(const Var& teacher_logits,
                             const Var& student_aux_logits, double tau_u,
                             bool scale_by_tau_squared = false) {
  const Tensor& t = teacher_logits.value();
  const Tensor& s = student_aux_logits.value();
  if (t.rank() != 2 || s.rank() != 2 || t.cols() != s.cols()) {
    throw DimensionError(
        "kd_loss_unlabeled: auxiliary head width " + std::to_string(s.cols()) +
        " differs from teacher head width " + std::to_string(t.cols()));
  }
  if (t.rows() != s.rows()) {
    throw DimensionError("kd_loss_unlabeled: batch sizes differ");
  }
  return detail::kl_to_constant_target(teacher_logits, student_aux_logits,
                                       tau_u, scale_by_tau_squared);
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct LabeledBatch {
  Tensor features;
  std::vector<int> labels;
  std::vector<std::size_t> indices;

  std::size_t size() const { return labels.size(); }
};

inline Tensor gather_rows(const Tensor& src, std::span<const std::size_t> idx) {
  const std::size_t cols = src.cols();
  std::vector<double> out;
  out.reserve(idx.size() * cols);
  for (std::size_t i : idx) {
    auto r = src.row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor({idx.size(), cols}, std::move(out));
}

/// p distinct identities with k images each. Identities with fewer than k
/// images are drawn with replacement; otherwise without.
inline LabeledBatch pk_sample(const LabeledSet& data, std::size_t p,
                              std::size_t k, std::mt19937_64& rng) {
  if (p == 0 || k == 0) throw SamplingError("pk_sample needs p, k >= 1");
  if (data.num_classes() < p) {
    throw SamplingError("pk_sample: need " + std::to_string(p) +
                        " identities, dataset has " +
                        std::to_string(data.num_classes()));
  }
  std::vector<std::size_t> classes(data.num_classes());
  std::iota(classes.begin(), classes.end(), std::size_t{0});
  std::shuffle(classes.begin(), classes.end(), rng);
  classes.resize(p);

  LabeledBatch batch;
  batch.indices.reserve(p * k);
  for (std::size_t c : classes) {
    const auto& pool = data.members[c];
    if (pool.size() >= k) {
      std::vector<std::size_t> pick(pool);
      std::shuffle(pick.begin(), pick.end(), rng);
      batch.indices.insert(batch.indices.end(), pick.begin(), pick.begin() + k);
    } else {
      std::uniform_int_distribution<std::size_t> u(0, pool.size() - 1);
      for (std::size_t j = 0; j < k; ++j) batch.indices.push_back(pool[u(rng)]);
    }
  }
  for (std::size_t i : batch.indices) batch.labels.push_back(data.labels[i]);
  batch.features = gather_rows(data.features, batch.indices);
  return batch;
}

/// Uniform draw of n pool indices, without replacement when the pool allows.
inline std::vector<std::size_t> sample_unlabeled_indices(const UnlabeledSet& pool,
                                                         std::size_t n,
                                                         std::mt19937_64& rng) {
  std::vector<std::size_t> idx;
  if (n == 0) return idx;
  if (pool.empty()) throw SamplingError("unlabeled pool is empty");
  if (n <= pool.size()) {
    std::vector<std::size_t> all(pool.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    // Partial Fisher-Yates over the first n slots.
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> u(i, all.size() - 1);
      std::swap(all[i], all[u(rng)]);
    }
    idx.assign(all.begin(), all.begin() + std::ptrdiff_t(n));
  } else {
    std::uniform_int_distribution<std::size_t> u(0, pool.size() - 1);
    for (std::size_t i = 0; i < n; ++i) idx.push_back(u(rng));
  }
  return idx;
}

inline std::optional<Tensor> sample_unlabeled(const UnlabeledSet& pool,
                                              std::size_t n,
                                              std::mt19937_64& rng) {
  const auto idx = sample_unlabeled_indices(pool, n, rng);
  if (idx.empty()) return std::nullopt;
  return gather_rows(*pool.features, idx);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  TemperatureConfig temps;
  BatchPlan batch;
  ScheduleConfig schedule;
  OptimizerConfig optimizer;
  LossOptions loss;

  void validate() const {
    temps.validate();
    batch.validate();
    schedule.validate();
  }
};

struct TrainState {
  Model student;
  Model teacher;
  Optimizer student_optimizer;
  Optimizer teacher_optimizer;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  int stages_completed = 0;
};

struct EpochMetrics {
  int stage = 1;
  std::string model;  // "student" or "teacher"
  int epoch = 0;
  double lr = 0.0;
  double ce = 0.0;
  std::optional<double> kd;
  std::optional<double> kd_u;
  double total = 0.0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// The three terms of the semi-supervised distillation objective and their
/// sum. kd_u is absent when the unlabeled batch is empty.
struct SskdTerms {
  Var ce;
  Var kd;
  std::optional<Var> kd_u;
  Var total;
};

/// The objective given precomputed teacher logits for the labeled batch and,
/// when present, the unlabeled batch.
inline SskdTerms sskd_objective(Tape& tape, Model& student,
                                const LabeledBatch& labeled,
                                const Tensor& teacher_logits,
                                const std::optional<Tensor>& unlabeled,
                                const std::optional<Tensor>& teacher_unlabeled_logits,
                                const TemperatureConfig& temps,
                                const LossOptions& options) {
  const bool sq = options.scale_kl_by_tau_squared;
  const double ce_tau = options.stage2_ce_at_tau_kd ? temps.tau_kd : temps.tau_c;

  ModelOutputs s = forward(tape, student, tape.constant(labeled.features));
  if (teacher_logits.shape() != s.logits_main.shape()) {
    throw DimensionError("teacher and student main heads differ in shape");
  }
  SskdTerms terms;
  const Var log_ps = detail::log_softmax(s.logits_main, temps.tau_kd);
  terms.ce = ce_tau == temps.tau_kd
                 ? detail::nll(log_ps, labeled.labels)
                 : cross_entropy(s.logits_main, labeled.labels, ce_tau);
  terms.kd = detail::kl_from_log_probs(teacher_logits, log_ps, temps.tau_kd, sq);
  terms.total = add(terms.ce, terms.kd);
  if (unlabeled) {
    if (!student.aux_head) {
      throw UsageError("unlabeled distillation needs a student auxiliary head");
    }
    ModelOutputs su = forward(tape, student, tape.constant(*unlabeled));
    terms.kd_u = kd_loss_unlabeled(tape.constant(*teacher_unlabeled_logits),
                                   *su.logits_aux, temps.tau_kd_u, sq);
    terms.total = add(terms.total, *terms.kd_u);
  }
  return terms;
}

/// L_total = L_c(student, τ) + L_kd(student, τ_kd) + L_kd^u(student aux, τ_kd^u)
/// where τ for the hard-label term is τ_kd unless the loss options say τ_c.
/// An absent unlabeled batch drops the last term.
inline SskdTerms sskd_total(Tape& tape, TrainState& state,
                            const LabeledBatch& labeled,
                            const std::optional<Tensor>& unlabeled,
                            const TemperatureConfig& temps,
                            const LossOptions& options = {}) {
  if (!state.teacher.frozen) {
    throw UsageError("sskd_total requires a frozen teacher");
  }
  std::optional<Tensor> teacher_u;
  if (unlabeled) teacher_u = main_logits(state.teacher, *unlabeled);
  return sskd_objective(tape, state.student, labeled,
                        main_logits(state.teacher, labeled.features), unlabeled,
                        teacher_u, temps, options);
}

namespace detail {

inline std::size_t steps_per_epoch(const TrainConfig& cfg, std::size_t n) {
  if (cfg.schedule.iters_per_epoch > 0) return cfg.schedule.iters_per_epoch;
  const std::size_t b = cfg.batch.labeled_batch_size();
  return std::max<std::size_t>(1, (n + b - 1) / b);
}

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t lane) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32),
                    std::uint32_t(lane)};
  return std::mt19937_64(seq);
}

// Progress fraction of step s out of total, reaching 1 on the last step.
inline double progress(std::size_t s, std::size_t total) {
  return total > 1 ? double(s) / double(total - 1) : 0.0;
}

inline ScheduleConfig schedule_for(const ScheduleConfig& s, int epochs) {
  ScheduleConfig out = s;
  out.total_epochs = epochs;
  return out;
}

}  // namespace detail

/// Sampling lanes of the two stage-1 models; each model trained alone on its
/// lane reproduces its half of train_stage1 exactly.
enum class Stage1Lane : std::uint64_t { student = 1, teacher = 2 };

/// Cross-entropy training at tau_c of one model, in place.
inline void train_stage1_model(Model& model, Optimizer& opt, const LabeledSet& data,
                               const TrainConfig& cfg, int epochs,
                               std::uint64_t seed, Stage1Lane lane,
                               const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.size() == 0) throw UsageError("train_stage1: empty dataset");
  const std::size_t per_epoch = detail::steps_per_epoch(cfg, data.size());
  const std::size_t total = per_epoch * std::size_t(std::max(epochs, 0));
  const ScheduleConfig sched = detail::schedule_for(cfg.schedule, epochs);
  std::mt19937_64 rng = detail::stream(seed, std::uint64_t(lane));
  const char* name = lane == Stage1Lane::student ? "student" : "teacher";
  std::size_t step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double ce_sum = 0.0;
    double lr = 0.0;
    for (std::size_t it = 0; it < per_epoch; ++it, ++step) {
      LabeledBatch batch =
          pk_sample(data, cfg.batch.p_identities, cfg.batch.k_per_identity, rng);
      Tape tape;
      ModelOutputs out = forward(tape, model, tape.constant(batch.features));
      Var loss = cross_entropy(out.logits_main, batch.labels, cfg.temps.tau_c);
      model.zero_grad();
      tape.backward(loss);
      lr = lr_at(sched, detail::progress(step, total));
      opt.step(model, lr);
      ce_sum += loss.item();
    }
    if (on_epoch) {
      const double ce = ce_sum / double(per_epoch);
      on_epoch(EpochMetrics{1, name, epoch, lr, ce, std::nullopt, std::nullopt, ce});
    }
  }
}

/// Step 1: student and teacher each trained with cross-entropy at tau_c on
/// the labeled data, on independent sampling streams.
inline TrainState train_stage1(Model student, Model teacher,
                               const LabeledSet& data, const TrainConfig& cfg,
                               int epochs, std::uint64_t seed,
                               const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.size() == 0) throw UsageError("train_stage1: empty dataset");
  TrainState state{std::move(student), std::move(teacher),
                   Optimizer(cfg.optimizer), Optimizer(cfg.optimizer), 0, seed, 0};
  train_stage1_model(state.student, state.student_optimizer, data, cfg, epochs,
                     seed, Stage1Lane::student, on_epoch);
  train_stage1_model(state.teacher, state.teacher_optimizer, data, cfg, epochs,
                     seed, Stage1Lane::teacher, on_epoch);
  state.step = detail::steps_per_epoch(cfg, data.size()) *
               std::size_t(std::max(epochs, 0));
  state.stages_completed = 1;
  return state;
}

/// Step 2: freeze the teacher and train the student on the full objective.
/// Each step draws one PK batch and one unlabeled batch. With
/// unlabeled_per_step = 0 this is plain labeled distillation.
inline TrainState train_stage2_sskd(TrainState state, const LabeledSet& data,
                                    const UnlabeledSet& pool,
                                    const TrainConfig& cfg, int epochs,
                                    std::uint64_t seed,
                                    const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (state.stages_completed < 1) {
    throw UsageError("train_stage2_sskd requires a completed stage 1");
  }
  if (data.size() == 0) throw UsageError("train_stage2_sskd: empty dataset");
  const std::size_t n_unlabeled = cfg.batch.unlabeled_per_step;
  if (n_unlabeled > 0 && pool.empty()) {
    throw ConfigError(
        "unlabeled_per_step > 0 but no unlabeled pool was given; use KD mode "
        "(unlabeled_per_step = 0)");
  }
  if (n_unlabeled > 0) {
    if (!state.student.aux_head) {
      throw ConfigError("student has no auxiliary head for unlabeled distillation");
    }
    if (*state.student.aux_classes() != state.teacher.num_classes()) {
      throw DimensionError("student auxiliary head width must equal the teacher's");
    }
  }
  state.teacher = freeze(std::move(state.teacher));
  state.student_optimizer = Optimizer(cfg.optimizer);

  const std::size_t per_epoch = detail::steps_per_epoch(cfg, data.size());
  const std::size_t total = per_epoch * std::size_t(std::max(epochs, 0));
  const ScheduleConfig sched = detail::schedule_for(cfg.schedule, epochs);
  std::mt19937_64 rng = detail::stream(seed, 3);

  // The teacher is frozen, so its logits per sample are fixed for the stage.
  const Tensor teacher_labeled = main_logits(state.teacher, data.features);
  std::optional<Tensor> teacher_pool;
  if (n_unlabeled > 0) teacher_pool = main_logits(state.teacher, *pool.features);

  std::size_t step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double ce = 0.0, kd = 0.0, kd_u = 0.0, tot = 0.0, lr = 0.0;
    for (std::size_t it = 0; it < per_epoch; ++it, ++step) {
      LabeledBatch batch = pk_sample(data, cfg.batch.p_identities,
                                     cfg.batch.k_per_identity, rng);
      const auto uidx = sample_unlabeled_indices(pool, n_unlabeled, rng);
      std::optional<Tensor> ub, tub;
      if (!uidx.empty()) {
        ub = gather_rows(*pool.features, uidx);
        tub = gather_rows(*teacher_pool, uidx);
      }
      Tape tape;
      SskdTerms terms = sskd_objective(
          tape, state.student, batch, gather_rows(teacher_labeled, batch.indices),
          ub, tub, cfg.temps, cfg.loss);
      state.student.zero_grad();
      tape.backward(terms.total);
      lr = lr_at(sched, detail::progress(step, total));
      state.student_optimizer.step(state.student, lr);
      ce += terms.ce.item();
      kd += terms.kd.item();
      if (terms.kd_u) kd_u += terms.kd_u->item();
      tot += terms.total.item();
    }
    if (on_epoch) {
      const double n = double(per_epoch);
      on_epoch(EpochMetrics{
          2, "student", epoch, lr, ce / n, kd / n,
          n_unlabeled > 0 ? std::optional<double>(kd_u / n) : std::nullopt,
          tot / n});
    }
  }
  state.step += total;
  state.stages_completed = 2;
  return state;
}

}  // namespace sskd
