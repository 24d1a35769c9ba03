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
#include <array>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sskd/errors.hpp"
#include "sskd/tensor.hpp"

namespace sskd {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of executed ops. Nodes are appended in execution order, so
/// every node's inputs precede it and a reverse sweep is a valid backward
/// schedule.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const double>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A value that never receives gradient.
  Var constant(Tensor value) {
    return push(std::move(value), {}, nullptr, nullptr, false);
  }

  /// A leaf owned by the tape; read its gradient with grad().
  Var variable(Tensor value) {
    return push(std::move(value), {}, nullptr, nullptr, true);
  }

  /// A leaf bound to an external tensor. backward() accumulates into
  /// param.grad() when param.requires_grad() is set. The tensor must outlive
  /// the tape.
  Var parameter(Tensor& param) {
    const bool needs = param.requires_grad();
    return push(param, {}, nullptr, &param, needs);
  }

  /// Records an op output. The backward function receives the output gradient
  /// and scatters into its inputs with grad_buffer().
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& in : inputs) {
      check_owned(in);
      needs = needs || nodes_[in.id()].needs_grad;
      ids.push_back(in.id());
    }
    return push(std::move(value), std::move(ids), needs ? std::move(fn) : nullptr,
                nullptr, needs);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient slot of a node, allocated on first use.
  std::span<double> grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  /// Gradient of the last backward() root with respect to v (zeros if v did
  /// not influence it).
  std::vector<double> grad(Var v) const {
    check_owned(v);
    const Node& n = nodes_[v.id()];
    if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
    return n.grad;
  }

  /// Reverse sweep from a scalar root. Intermediate gradients are recomputed
  /// on each call; bound parameters accumulate across calls.
  void backward(Var loss) {
    if (loss.tape() != this) {
      throw UsageError("backward root was not recorded on this tape");
    }
    const Tensor& root = nodes_[loss.id()].value;
    if (root.rank() != 0 || root.size() != 1) {
      throw UsageError("backward root must be a scalar, got shape " +
                       shape_string(root.shape()));
    }
    for (Node& n : nodes_) n.grad.clear();
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.bound != nullptr) n.bound->accumulate_grad(n.grad);
      if (n.backward) n.backward(*this, n.grad);
    }
    for (Node& n : nodes_) {
      if (n.bound != nullptr && n.needs_grad) n.bound->ensure_grad();
    }
  }

  void check_owned(const Var& v) const {
    if (v.tape() != this) {
      throw UsageError("variable belongs to a different tape");
    }
  }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor* bound = nullptr;
    bool needs_grad = false;
  };

  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn,
           Tensor* bound, bool needs) {
    nodes_.push_back(Node{std::move(value), {}, std::move(inputs),
                          std::move(fn), bound, needs});
    return Var(this, nodes_.size() - 1);
  }

  // A deque keeps value() references valid while later ops append nodes.
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const {
  if (tape_ == nullptr) throw UsageError("use of an unbound Var");
  return tape_->value(id_);
}

namespace detail {

inline void require_finite(const Tensor& t, const char* op) {
  // A finite sum implies finite entries; only on overflow fall back to a scan.
  double acc = 0.0;
  for (double v : t.data()) acc += v;
  if (std::isfinite(acc) || t.all_finite()) return;
  throw NumericError(std::string(op) + " produced a non-finite value");
}

inline Tape& common_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw UsageError("operands live on different tapes");
  }
  return *a.tape();
}

inline bool is_scalar_like(const Tensor& t) { return t.size() == 1; }

enum class Broadcast { same, scalar_rhs, row_rhs };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op,
                                bool allow_row) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (is_scalar_like(b)) return Broadcast::scalar_rhs;
  if (allow_row && a.rank() == 2 && b.size() == a.cols() &&
      (b.rank() == 1 || (b.rank() == 2 && b.rows() == 1))) {
    return Broadcast::row_rhs;
  }
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       shape_string(a.shape()) + " and " +
                       shape_string(b.shape()));
}

}  // namespace detail

namespace detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

inline ConstMap as_matrix(const double* p, std::size_t r, std::size_t c) {
  return ConstMap(p, Eigen::Index(r), Eigen::Index(c));
}
inline MutMap as_matrix(double* p, std::size_t r, std::size_t c) {
  return MutMap(p, Eigen::Index(r), Eigen::Index(c));
}

}  // namespace detail

/// C = A·B for A [m×k], B [k×n].
inline Var matmul(const Var& a, const Var& b) {
  Tape& tape = detail::common_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_string(A.shape()) +
                         " by " + shape_string(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C = Tensor::zeros({m, n});
  detail::as_matrix(C.data().data(), m, n).noalias() =
      detail::as_matrix(A.data().data(), m, k) *
      detail::as_matrix(B.data().data(), k, n);
  detail::require_finite(C, "matmul");
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      std::move(C), {a, b}, [ia, ib, m, k, n](Tape& t, std::span<const double> g) {
        const auto G = detail::as_matrix(g.data(), m, n);
        if (t.needs_grad(ia)) {
          // dA = dC·Bᵀ
          detail::as_matrix(t.grad_buffer(ia).data(), m, k).noalias() +=
              G * detail::as_matrix(t.value(ib).data().data(), k, n).transpose();
        }
        if (t.needs_grad(ib)) {
          // dB = Aᵀ·dC
          detail::as_matrix(t.grad_buffer(ib).data(), k, n).noalias() +=
              detail::as_matrix(t.value(ia).data().data(), m, k).transpose() * G;
        }
      });
}

/// a + b. b may match a, be a single value, or be a row bias for a matrix a.
inline Var add(const Var& a, const Var& b) {
  Tape& tape = detail::common_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const auto kind = detail::broadcast_kind(A, B, "add", true);
  Tensor out = A;
  auto o = out.data();
  const std::size_t cols = A.cols();
  switch (kind) {
    case detail::Broadcast::same:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] += B[i];
      break;
    case detail::Broadcast::scalar_rhs:
      for (double& v : o) v += B[0];
      break;
    case detail::Broadcast::row_rhs:
      for (std::size_t r = 0; r < A.rows(); ++r) {
        double* dst = o.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) dst[j] += B[j];
      }
      break;
  }
  detail::require_finite(out, "add");
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b},
                     [ia, ib, kind, cols](Tape& t, std::span<const double> g) {
                       if (t.needs_grad(ia)) {
                         auto ga = t.grad_buffer(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (!t.needs_grad(ib)) return;
                       auto gb = t.grad_buffer(ib);
                       switch (kind) {
                         case detail::Broadcast::same:
                           for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                           break;
                         case detail::Broadcast::scalar_rhs:
                           for (double v : g) gb[0] += v;
                           break;
                         case detail::Broadcast::row_rhs:
                           for (std::size_t i = 0; i < g.size(); i += cols) {
                             for (std::size_t j = 0; j < cols; ++j) gb[j] += g[i + j];
                           }
                           break;
                       }
                     });
}

/// a − b for equal shapes or a single-value b.
inline Var sub(const Var& a, const Var& b) {
  Tape& tape = detail::common_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const auto kind = detail::broadcast_kind(A, B, "sub", false);
  Tensor out = A;
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] -= kind == detail::Broadcast::same ? B[i] : B[0];
  }
  detail::require_finite(out, "sub");
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b},
                     [ia, ib, kind](Tape& t, std::span<const double> g) {
                       if (t.needs_grad(ia)) {
                         auto ga = t.grad_buffer(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (t.needs_grad(ib)) {
                         auto gb = t.grad_buffer(ib);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           gb[kind == detail::Broadcast::same ? i : 0] -= g[i];
                         }
                       }
                     });
}

/// Elementwise product for equal shapes or a single-value b.
inline Var mul(const Var& a, const Var& b) {
  Tape& tape = detail::common_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const auto kind = detail::broadcast_kind(A, B, "mul", false);
  const bool same = kind == detail::Broadcast::same;
  Tensor out = A;
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= same ? B[i] : B[0];
  detail::require_finite(out, "mul");
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b},
                     [ia, ib, same](Tape& t, std::span<const double> g) {
                       const Tensor& A = t.value(ia);
                       const Tensor& B = t.value(ib);
                       if (t.needs_grad(ia)) {
                         auto ga = t.grad_buffer(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           ga[i] += g[i] * (same ? B[i] : B[0]);
                         }
                       }
                       if (t.needs_grad(ib)) {
                         auto gb = t.grad_buffer(ib);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           gb[same ? i : 0] += g[i] * A[i];
                         }
                       }
                     });
}

inline Var scale(const Var& a, double factor) {
  Tape& tape = *a.tape();
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  detail::require_finite(out, "scale");
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {a},
                     [ia, factor](Tape& t, std::span<const double> g) {
                       auto ga = t.grad_buffer(ia);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         ga[i] += factor * g[i];
                       }
                     });
}

inline Var relu(const Var& a) {
  Tape& tape = *a.tape();
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {a},
                     [ia](Tape& t, std::span<const double> g) {
                       const Tensor& x = t.value(ia);
                       auto ga = t.grad_buffer(ia);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (x[i] > 0.0) ga[i] += g[i];
                       }
                     });
}

inline Var exp(const Var& a) {
  Tape& tape = *a.tape();
  Tensor out = a.value();
  for (double& v : out.data()) v = std::exp(v);
  detail::require_finite(out, "exp");
  const std::size_t ia = a.id();
  const std::size_t io = tape.size();  // id the output will receive
  return tape.record(std::move(out), {a},
                     [ia, io](Tape& t, std::span<const double> g) {
                       const Tensor& y = t.value(io);
                       auto ga = t.grad_buffer(ia);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         ga[i] += g[i] * y[i];
                       }
                     });
}

/// Natural log of clamp(a, floor, ceiling). Clamped entries get zero
/// gradient; a clamped value that is still non-positive is a numeric error.
inline Var log(const Var& a, double floor = 0.0,
               double ceiling = std::numeric_limits<double>::infinity()) {
  Tape& tape = *a.tape();
  Tensor out = a.value();
  for (double& v : out.data()) {
    const double c = std::clamp(v, floor, ceiling);
    if (!(c > 0.0)) {
      throw NumericError("log of non-positive value " + std::to_string(c));
    }
    v = std::log(c);
  }
  detail::require_finite(out, "log");
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {a},
                     [ia, floor, ceiling](Tape& t, std::span<const double> g) {
                       const Tensor& x = t.value(ia);
                       auto ga = t.grad_buffer(ia);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (x[i] >= floor && x[i] <= ceiling) {
                           ga[i] += g[i] / x[i];
                         }
                       }
                     });
}

/// Probability floor applied before taking logs of softmax outputs.
inline constexpr double kProbabilityFloor = 1e-12;

inline Var log_probability(const Var& p) {
  return log(p, kProbabilityFloor, 1.0);
}

inline Var sum(const Var& a) {
  Tape& tape = *a.tape();
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  Tensor out = Tensor::scalar(total);
  detail::require_finite(out, "sum");
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {a},
                     [ia](Tape& t, std::span<const double> g) {
                       auto ga = t.grad_buffer(ia);
                       for (double& v : ga) v += g[0];
                     });
}

inline Var mean(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Temperature softmax over the last axis: p(k) = exp(d_k/τ) / Σ_j exp(d_j/τ).
/// Rank-1 inputs are one distribution; rank-2 inputs are one per row.
inline Var softmax(const Var& d, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ParameterError("softmax temperature must be positive, got " +
                         std::to_string(tau));
  }
  Tape& tape = *d.tape();
  const Tensor& x = d.value();
  if (x.rank() == 0 || x.rank() > 2) {
    throw DimensionError("softmax expects a vector or matrix, got " +
                         shape_string(x.shape()));
  }
  if (!x.all_finite()) throw NumericError("softmax of non-finite logits");
  Tensor out = x;
  const std::size_t rows = x.rows(), cols = x.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = out.row(r);
    const double hi = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) {
      v = std::exp((v - hi) / tau);
      z += v;
    }
    for (double& v : row) v /= z;
  }
  const std::size_t ia = d.id();
  const std::size_t io = tape.size();
  return tape.record(
      std::move(out), {d},
      [ia, io, rows, cols, tau](Tape& t, std::span<const double> g) {
        const Tensor& p = t.value(io);
        auto ga = t.grad_buffer(ia);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * cols;
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += g[base + j] * p[base + j];
          for (std::size_t j = 0; j < cols; ++j) {
            ga[base + j] += p[base + j] * (g[base + j] - dot) / tau;
          }
        }
      });
}

}  // namespace sskd
