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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sskd/autodiff.hpp"
#include "sskd/errors.hpp"
#include "sskd/tensor.hpp"

namespace sskd {

/// MLP feature extractor: input → relu(hidden)… → linear embedding.
struct ExtractorConfig {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden_dims{64};
  std::size_t embed_dim = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (input_dim == 0) throw ConfigError("extractor input_dim must be positive");
    if (hidden_dims.empty()) {
      throw ConfigError("extractor hidden_dims must be non-empty");
    }
    for (std::size_t h : hidden_dims) {
      if (h == 0) throw ConfigError("extractor hidden widths must be positive");
    }
    if (embed_dim < 2) throw ConfigError("extractor embed_dim must be >= 2");
  }
};

/// Affine layer y = x·W + b with W stored [in×out].
struct Linear {
  Tensor weight;
  Tensor bias;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

class Model {
 public:
  ExtractorConfig config;
  std::vector<Linear> extractor;
  Linear main_head;
  std::optional<Linear> aux_head;
  bool frozen = false;

  std::size_t num_classes() const { return main_head.out_dim(); }
  std::optional<std::size_t> aux_classes() const {
    if (!aux_head) return std::nullopt;
    return aux_head->out_dim();
  }
  std::size_t embed_dim() const { return config.embed_dim; }

  /// Every trainable tensor, extractor first, then main head, then aux head.
  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (Linear& l : extractor) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    out.push_back(&main_head.weight);
    out.push_back(&main_head.bias);
    if (aux_head) {
      out.push_back(&aux_head->weight);
      out.push_back(&aux_head->bias);
    }
    return out;
  }

  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    for (Tensor* t : const_cast<Model*>(this)->parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Tensor* t : parameters()) n += t->size();
    return n;
  }

  void zero_grad() {
    for (Tensor* t : parameters()) t->zero_grad();
  }
  void clear_grad() {
    for (Tensor* t : parameters()) t->clear_grad();
  }
};

namespace detail {

inline Linear make_linear(std::size_t in, std::size_t out, double bound,
                          std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> w(in * out);
  for (double& v : w) v = u(rng);
  return Linear{Tensor({in, out}, std::move(w), true),
                Tensor::zeros({out}, true)};
}

}  // namespace detail

/// Builds a model with fan-in scaled uniform weights and zero biases. Layers
/// feeding a relu use bound √(6/fan_in); linear outputs use √(3/fan_in).
inline Model build_model(const ExtractorConfig& cfg, std::size_t k_main,
                         std::optional<std::size_t> k_aux, std::uint64_t seed) {
  cfg.validate();
  if (k_main < 2) throw ConfigError("main classifier needs at least 2 classes");
  if (k_aux && *k_aux < 2) {
    throw ConfigError("aux classifier needs at least 2 classes");
  }
  Model m;
  m.config = cfg;
  m.config.seed = seed;
  std::mt19937_64 rng(seed);
  std::size_t fan_in = cfg.input_dim;
  for (std::size_t h : cfg.hidden_dims) {
    m.extractor.push_back(
        detail::make_linear(fan_in, h, std::sqrt(6.0 / double(fan_in)), rng));
    fan_in = h;
  }
  m.extractor.push_back(detail::make_linear(
      fan_in, cfg.embed_dim, std::sqrt(3.0 / double(fan_in)), rng));
  const double head_bound = std::sqrt(3.0 / double(cfg.embed_dim));
  m.main_head = detail::make_linear(cfg.embed_dim, k_main, head_bound, rng);
  if (k_aux) {
    m.aux_head = detail::make_linear(cfg.embed_dim, *k_aux, head_bound, rng);
  }
  return m;
}

inline Model build_model(const ExtractorConfig& cfg, std::size_t k_main,
                         std::optional<std::size_t> k_aux = std::nullopt) {
  return build_model(cfg, k_main, k_aux, cfg.seed);
}

/// Marks the model frozen: optimizers skip it and forward() binds its
/// parameters as constants.
inline Model freeze(Model m) {
  m.frozen = true;
  return m;
}

struct ModelOutputs {
  Var embedding;
  Var logits_main;
  std::optional<Var> logits_aux;
};

namespace detail {

// M is Model or const Model; bind maps each parameter tensor onto the tape.
template <typename M, typename Bind>
ModelOutputs run_layers(M& m, Var x, Bind&& bind) {
  const Tensor& in = x.value();
  if (in.rank() != 2 || in.cols() != m.config.input_dim) {
    throw DimensionError("model expects input [Bx" +
                         std::to_string(m.config.input_dim) + "], got " +
                         shape_string(in.shape()));
  }
  Var h = x;
  for (std::size_t i = 0; i < m.extractor.size(); ++i) {
    auto& l = m.extractor[i];
    h = add(matmul(h, bind(l.weight)), bind(l.bias));
    if (i + 1 < m.extractor.size()) h = relu(h);
  }
  ModelOutputs out;
  out.embedding = h;
  out.logits_main =
      add(matmul(h, bind(m.main_head.weight)), bind(m.main_head.bias));
  if (m.aux_head) {
    out.logits_aux =
        add(matmul(h, bind(m.aux_head->weight)), bind(m.aux_head->bias));
  }
  return out;
}

}  // namespace detail

/// Training-time forward. Parameters of an unfrozen model are bound so that
/// backward() fills their gradients; a frozen model contributes constants.
inline ModelOutputs forward(Tape& tape, Model& m, Var x) {
  if (m.frozen) {
    return detail::run_layers(m, x,
                              [&](Tensor& t) { return tape.constant(t); });
  }
  return detail::run_layers(m, x,
                            [&](Tensor& t) { return tape.parameter(t); });
}

/// Forward with every parameter treated as a constant.
inline ModelOutputs forward_inference(Tape& tape, const Model& m, Var x) {
  return detail::run_layers(m, x,
                            [&](const Tensor& t) { return tape.constant(t); });
}

/// Embeddings for a batch of inputs, outside of any training tape.
inline Tensor embed(const Model& m, const Tensor& x) {
  Tape tape;
  return forward_inference(tape, m, tape.constant(x)).embedding.value();
}

inline Tensor main_logits(const Model& m, const Tensor& x) {
  Tape tape;
  return forward_inference(tape, m, tape.constant(x)).logits_main.value();
}

/// Unit-norm copy of v. Zero vectors have no direction and are rejected.
inline std::vector<double> l2_normalize(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (!(sq > 0.0)) throw NumericError("cannot normalize a zero vector");
  const double inv = 1.0 / std::sqrt(sq);
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x *= inv;
  return out;
}

/// Retrieval feature: the raw extractor output plus its normalized copy.
struct Embedding {
  std::vector<double> vector;
  std::vector<double> normalized;

  explicit Embedding(std::vector<double> v)
      : vector(std::move(v)), normalized(l2_normalize(vector)) {}
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr const char* kCheckpointFormat = "sskd-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", t.values()}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>(),
                true);
}

inline nlohmann::json linear_to_json(const Linear& l) {
  return {{"weight", tensor_to_json(l.weight)}, {"bias", tensor_to_json(l.bias)}};
}

inline Linear linear_from_json(const nlohmann::json& j) {
  return Linear{tensor_from_json(j.at("weight")), tensor_from_json(j.at("bias"))};
}

}  // namespace detail

inline nlohmann::json model_to_json(const Model& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const Linear& l : m.extractor) layers.push_back(detail::linear_to_json(l));
  nlohmann::json j = {
      {"format", kCheckpointFormat},
      {"version", kCheckpointVersion},
      {"config",
       {{"input_dim", m.config.input_dim},
        {"hidden_dims", m.config.hidden_dims},
        {"embed_dim", m.config.embed_dim},
        {"activation", "relu"},
        {"seed", m.config.seed}}},
      {"frozen", m.frozen},
      {"extractor", layers},
      {"main_head", detail::linear_to_json(m.main_head)},
      {"aux_head", nullptr},
  };
  if (m.aux_head) j["aux_head"] = detail::linear_to_json(*m.aux_head);
  return j;
}

inline Model model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) {
      throw IoError("not a model checkpoint");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw IoError("unsupported checkpoint version " +
                    std::to_string(j.at("version").get<int>()));
    }
    Model m;
    const auto& c = j.at("config");
    m.config.input_dim = c.at("input_dim").get<std::size_t>();
    m.config.hidden_dims = c.at("hidden_dims").get<std::vector<std::size_t>>();
    m.config.embed_dim = c.at("embed_dim").get<std::size_t>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    m.config.validate();
    m.frozen = j.at("frozen").get<bool>();
    for (const auto& l : j.at("extractor")) {
      m.extractor.push_back(detail::linear_from_json(l));
    }
    m.main_head = detail::linear_from_json(j.at("main_head"));
    if (!j.at("aux_head").is_null()) {
      m.aux_head = detail::linear_from_json(j.at("aux_head"));
    }
    if (m.extractor.size() != m.config.hidden_dims.size() + 1) {
      throw IoError("checkpoint layer count does not match its config");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const Model& m, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp);
    out << model_to_json(m).dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  try {
    return model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace sskd
