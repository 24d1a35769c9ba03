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
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sskd/distill.hpp"
#include "sskd/domainsim.hpp"
#include "sskd/errors.hpp"
#include "sskd/model.hpp"

namespace sskd {

enum class Method { baseline, kd, sskd };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::baseline: return "baseline";
    case Method::kd: return "kd";
    case Method::sskd: return "sskd";
  }
  return "?";
}

/// Scale and bias vectors drawn by randomize_affine instead of listed inline.
struct AffineSpec {
  std::uint64_t seed = 0;
  double scale_spread = 0.0;
  double bias_sigma = 0.0;
};

/// A benchmark domain: generated from its spec, or read from a manifest when
/// `manifest` is set (only domain_id is used then).
struct DomainEntry {
  DomainSpec spec;
  std::optional<AffineSpec> affine;
  std::optional<std::string> manifest;

  DomainSpec resolved(std::size_t input_dim) const {
    DomainSpec out = spec;
    if (affine) {
      randomize_affine(out.shift, input_dim, affine->seed, affine->scale_spread,
                       affine->bias_sigma);
    }
    return out;
  }
};

struct BenchmarkConfig {
  WorldConfig world;
  std::vector<DomainEntry> domains;
  std::optional<DomainEntry> pool;
};

struct ExperimentConfig {
  BenchmarkConfig benchmark;
  ProtocolMode protocol_mode = ProtocolMode::leave_one_out;
  std::string held_out;  // leave_one_out: optional single fold; fixed_split: test list
  ExtractorConfig student;
  ExtractorConfig teacher;
  TrainConfig train;  // train.schedule.total_epochs is the per-stage budget
  Method method = Method::sskd;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double unlabeled_fraction = 1.0;
  std::uint64_t split_seed = 7;
  bool filter_same_camera = true;
  unsigned jobs = 1;  // 0 = hardware concurrency

  int epochs() const { return train.schedule.total_epochs; }
};

/// The shipped desk-scale benchmark: four labeled domains of 50 identities ×
/// 8 images over 4 cameras, plus a 200 × 7 unlabeled pool.
inline BenchmarkConfig default_benchmark() {
  BenchmarkConfig b;
  b.world.input_dim = 32;
  b.world.identity_dim = 8;
  b.world.prototype_scale = 1.0;
  b.world.nuisance_sigma = 1.0;
  b.world.warp_strength = 0.0;
  auto entry = [](std::string id, std::size_t ids, std::size_t imgs,
                  std::uint64_t k) {
    DomainEntry e;
    e.spec.domain_id = std::move(id);
    e.spec.n_identities = ids;
    e.spec.images_per_identity = imgs;
    e.spec.n_cameras = 4;
    e.spec.shift.rotation_seed = 100 + k;
    e.spec.shift.rotation_strength = 0.05;
    e.spec.shift.camera_sigma = 0.2;
    e.spec.shift.noise_sigma = 0.3;
    e.spec.shift.occlusion_rate = 0.1;
    e.affine = AffineSpec{200 + k, 0.2, 0.3};
    return e;
  };
  const char* names[] = {"alpha", "bravo", "charlie", "delta"};
  for (std::uint64_t k = 0; k < 4; ++k) {
    b.domains.push_back(entry(names[k], 50, 8, k));
  }
  DomainEntry pool = entry("pool", 200, 7, 99);
  pool.spec.shift.scene_jitter = 0.05;
  b.pool = pool;
  return b;
}

inline ExperimentConfig default_experiment() {
  ExperimentConfig c;
  c.benchmark = default_benchmark();
  c.student.hidden_dims = {64};
  c.student.embed_dim = 32;
  c.teacher.hidden_dims = {256};
  c.teacher.embed_dim = 32;
  c.train.schedule.iters_per_epoch = 20;
  return c;
}

// ---------------------------------------------------------------------------
// JSON (de)serialization. Every object rejects unknown keys; errors carry the
// JSON pointer of the offending field.
// ---------------------------------------------------------------------------

namespace detail {

using nlohmann::json;

[[noreturn]] inline void config_fail(const std::string& where, const std::string& msg) {
  throw ConfigError((where.empty() ? std::string("/") : where) + ": " + msg);
}

inline void expect_object(const json& j, const std::string& where) {
  if (!j.is_object()) config_fail(where, "expected an object");
}

inline void allow_keys(const json& j, const std::string& where,
                       std::initializer_list<const char*> keys) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(keys.begin(), keys.end(),
                     [&](const char* k) { return it.key() == k; })) {
      config_fail(where + "/" + it.key(), "unknown field");
    }
  }
}

inline double read_number(const json& j, const std::string& where) {
  if (!j.is_number()) config_fail(where, "expected a number");
  return j.get<double>();
}

inline std::uint64_t read_uint(const json& j, const std::string& where) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer()) {
    if (j.get<std::int64_t>() < 0) config_fail(where, "must be non-negative");
    return std::uint64_t(j.get<std::int64_t>());
  }
  config_fail(where, "expected a non-negative integer");
}

inline int read_int(const json& j, const std::string& where) {
  if (!j.is_number_integer()) config_fail(where, "expected an integer");
  return j.get<int>();
}

inline bool read_bool(const json& j, const std::string& where) {
  if (!j.is_boolean()) config_fail(where, "expected true or false");
  return j.get<bool>();
}

inline std::string read_string(const json& j, const std::string& where) {
  if (!j.is_string()) config_fail(where, "expected a string");
  return j.get<std::string>();
}

inline std::vector<double> read_numbers(const json& j, const std::string& where) {
  if (!j.is_array()) config_fail(where, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(read_number(j[i], where + "/" + std::to_string(i)));
  }
  return out;
}

inline std::vector<std::size_t> read_sizes(const json& j, const std::string& where) {
  if (!j.is_array()) config_fail(where, "expected an array of integers");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(std::size_t(read_uint(j[i], where + "/" + std::to_string(i))));
  }
  return out;
}

template <class T, class Read>
void opt_field(const json& j, const char* key, const std::string& where, T& out,
               Read read) {
  if (auto it = j.find(key); it != j.end()) out = read(*it, where + "/" + key);
}

// Runs a struct's validate() and re-raises with the section pointer.
template <class F>
void validated(const std::string& where, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    // "Struct.field must ..." messages point at the field itself.
    static const std::regex field(R"(^(\w+)\.(\w+) )");
    const std::string msg = e.what();
    std::smatch m;
    if (std::regex_search(msg, m, field)) {
      config_fail(where + (m[1] == "DomainShift" ? "/shift/" : "/") + m[2].str(), msg);
    }
    config_fail(where, msg);
  }
}

inline WorldConfig world_from_json(const json& j, const std::string& w) {
  expect_object(j, w);
  allow_keys(j, w, {"input_dim", "identity_dim", "prototype_scale", "nuisance_sigma",
                    "warp_strength"});
  WorldConfig c;
  auto sz = [](const json& v, const std::string& p) { return std::size_t(read_uint(v, p)); };
  opt_field(j, "input_dim", w, c.input_dim, sz);
  opt_field(j, "identity_dim", w, c.identity_dim, sz);
  opt_field(j, "prototype_scale", w, c.prototype_scale, read_number);
  opt_field(j, "nuisance_sigma", w, c.nuisance_sigma, read_number);
  opt_field(j, "warp_strength", w, c.warp_strength, read_number);
  validated(w, [&] { c.validate(); });
  return c;
}

inline json world_to_json(const WorldConfig& c) {
  return {{"input_dim", c.input_dim},           {"identity_dim", c.identity_dim},
          {"prototype_scale", c.prototype_scale}, {"nuisance_sigma", c.nuisance_sigma},
          {"warp_strength", c.warp_strength}};
}

inline DomainEntry domain_from_json(const json& j, const std::string& w,
                                    std::size_t input_dim) {
  expect_object(j, w);
  allow_keys(j, w, {"domain_id", "manifest", "n_identities", "images_per_identity",
                    "n_cameras", "shift"});
  DomainEntry e;
  if (!j.contains("domain_id")) config_fail(w + "/domain_id", "required");
  e.spec.domain_id = read_string(j["domain_id"], w + "/domain_id");
  if (j.contains("manifest")) {
    e.manifest = read_string(j["manifest"], w + "/manifest");
    if (e.manifest->empty()) config_fail(w + "/manifest", "empty path");
  }
  auto sz = [](const json& v, const std::string& p) { return std::size_t(read_uint(v, p)); };
  opt_field(j, "n_identities", w, e.spec.n_identities, sz);
  opt_field(j, "images_per_identity", w, e.spec.images_per_identity, sz);
  opt_field(j, "n_cameras", w, e.spec.n_cameras, sz);
  if (auto it = j.find("shift"); it != j.end()) {
    const std::string s = w + "/shift";
    expect_object(*it, s);
    allow_keys(*it, s, {"rotation_seed", "rotation_strength", "scale", "bias",
                        "camera_sigma", "noise_sigma", "occlusion_rate",
                        "scene_jitter", "affine"});
    DomainShift& sh = e.spec.shift;
    opt_field(*it, "rotation_seed", s, sh.rotation_seed, read_uint);
    opt_field(*it, "rotation_strength", s, sh.rotation_strength, read_number);
    opt_field(*it, "scale", s, sh.scale, read_numbers);
    opt_field(*it, "bias", s, sh.bias, read_numbers);
    opt_field(*it, "camera_sigma", s, sh.camera_sigma, read_number);
    opt_field(*it, "noise_sigma", s, sh.noise_sigma, read_number);
    opt_field(*it, "occlusion_rate", s, sh.occlusion_rate, read_number);
    opt_field(*it, "scene_jitter", s, sh.scene_jitter, read_number);
    if (auto a = it->find("affine"); a != it->end()) {
      const std::string ap = s + "/affine";
      expect_object(*a, ap);
      allow_keys(*a, ap, {"seed", "scale_spread", "bias_sigma"});
      AffineSpec af;
      opt_field(*a, "seed", ap, af.seed, read_uint);
      opt_field(*a, "scale_spread", ap, af.scale_spread, read_number);
      opt_field(*a, "bias_sigma", ap, af.bias_sigma, read_number);
      if (!(af.scale_spread >= 0.0) || !(af.bias_sigma >= 0.0)) {
        config_fail(ap, "scale_spread and bias_sigma must be >= 0");
      }
      if (!sh.scale.empty() || !sh.bias.empty()) {
        config_fail(ap, "give either affine or explicit scale/bias, not both");
      }
      e.affine = af;
    }
  }
  if (!e.manifest) validated(w, [&] { e.spec.validate(input_dim); });
  return e;
}

inline json domain_to_json(const DomainEntry& e) {
  json j = {{"domain_id", e.spec.domain_id}};
  if (e.manifest) {
    j["manifest"] = *e.manifest;
    return j;
  }
  const DomainShift& sh = e.spec.shift;
  j["n_identities"] = e.spec.n_identities;
  j["images_per_identity"] = e.spec.images_per_identity;
  j["n_cameras"] = e.spec.n_cameras;
  json s = {{"rotation_seed", sh.rotation_seed},
            {"rotation_strength", sh.rotation_strength},
            {"camera_sigma", sh.camera_sigma},
            {"noise_sigma", sh.noise_sigma},
            {"occlusion_rate", sh.occlusion_rate},
            {"scene_jitter", sh.scene_jitter}};
  if (e.affine) {
    s["affine"] = {{"seed", e.affine->seed},
                   {"scale_spread", e.affine->scale_spread},
                   {"bias_sigma", e.affine->bias_sigma}};
  } else {
    if (!sh.scale.empty()) s["scale"] = sh.scale;
    if (!sh.bias.empty()) s["bias"] = sh.bias;
  }
  j["shift"] = s;
  return j;
}

inline ExtractorConfig extractor_from_json(const json& j, const std::string& w,
                                           std::size_t input_dim) {
  expect_object(j, w);
  allow_keys(j, w, {"hidden_dims", "embed_dim"});
  ExtractorConfig c;
  c.input_dim = input_dim;
  opt_field(j, "hidden_dims", w, c.hidden_dims, read_sizes);
  opt_field(j, "embed_dim", w, c.embed_dim,
            [](const json& v, const std::string& p) { return std::size_t(read_uint(v, p)); });
  validated(w, [&] { c.validate(); });
  return c;
}

inline json extractor_to_json(const ExtractorConfig& c) {
  return {{"hidden_dims", c.hidden_dims}, {"embed_dim", c.embed_dim}};
}

inline std::string protocol_mode_name(ProtocolMode m) {
  return m == ProtocolMode::leave_one_out ? "leave_one_out" : "fixed_split";
}

inline std::vector<DomainSpec> domain_ids(const BenchmarkConfig& b) {
  std::vector<DomainSpec> out;
  for (const DomainEntry& e : b.domains) out.push_back(e.resolved(b.world.input_dim));
  return out;
}

}  // namespace detail

/// Parses and validates an experiment document. Missing fields take the
/// defaults of default_experiment(); unknown fields are errors.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j,
                                             const std::string& where = "") {
  using namespace detail;
  expect_object(j, where);
  allow_keys(j, where, {"benchmark", "protocol", "student", "teacher", "temperatures",
                        "loss", "batch", "schedule", "optimizer", "method", "seeds",
                        "unlabeled_fraction", "evaluation", "jobs"});
  ExperimentConfig c = default_experiment();

  if (auto it = j.find("benchmark"); it != j.end()) {
    const std::string w = where + "/benchmark";
    expect_object(*it, w);
    allow_keys(*it, w, {"world", "domains", "pool"});
    if (it->contains("world")) c.benchmark.world = world_from_json((*it)["world"], w + "/world");
    const std::size_t dim = c.benchmark.world.input_dim;
    if (auto d = it->find("domains"); d != it->end()) {
      if (!d->is_array()) config_fail(w + "/domains", "expected an array");
      c.benchmark.domains.clear();
      for (std::size_t i = 0; i < d->size(); ++i) {
        c.benchmark.domains.push_back(
            domain_from_json((*d)[i], w + "/domains/" + std::to_string(i), dim));
      }
    }
    if (auto p = it->find("pool"); p != it->end()) {
      if (p->is_null()) {
        c.benchmark.pool.reset();
      } else {
        c.benchmark.pool = domain_from_json(*p, w + "/pool", dim);
      }
    }
  }
  const std::size_t dim = c.benchmark.world.input_dim;

  if (auto it = j.find("protocol"); it != j.end()) {
    const std::string w = where + "/protocol";
    expect_object(*it, w);
    allow_keys(*it, w, {"mode", "held_out"});
    if (it->contains("mode")) {
      const std::string m = read_string((*it)["mode"], w + "/mode");
      if (m == "leave_one_out") {
        c.protocol_mode = ProtocolMode::leave_one_out;
      } else if (m == "fixed_split") {
        c.protocol_mode = ProtocolMode::fixed_split;
      } else {
        config_fail(w + "/mode", "expected leave_one_out or fixed_split, got '" + m + "'");
      }
    }
    opt_field(*it, "held_out", w, c.held_out, read_string);
  }

  c.student.input_dim = dim;
  c.teacher.input_dim = dim;
  if (j.contains("student")) c.student = extractor_from_json(j["student"], where + "/student", dim);
  if (j.contains("teacher")) c.teacher = extractor_from_json(j["teacher"], where + "/teacher", dim);

  if (auto it = j.find("temperatures"); it != j.end()) {
    const std::string w = where + "/temperatures";
    expect_object(*it, w);
    allow_keys(*it, w, {"tau_c", "tau_kd", "tau_kd_u"});
    opt_field(*it, "tau_c", w, c.train.temps.tau_c, read_number);
    opt_field(*it, "tau_kd", w, c.train.temps.tau_kd, read_number);
    opt_field(*it, "tau_kd_u", w, c.train.temps.tau_kd_u, read_number);
    validated(w, [&] { c.train.temps.validate(); });
  }
  if (auto it = j.find("loss"); it != j.end()) {
    const std::string w = where + "/loss";
    expect_object(*it, w);
    allow_keys(*it, w, {"stage2_ce_at_tau_kd", "scale_kl_by_tau_squared"});
    opt_field(*it, "stage2_ce_at_tau_kd", w, c.train.loss.stage2_ce_at_tau_kd, read_bool);
    opt_field(*it, "scale_kl_by_tau_squared", w, c.train.loss.scale_kl_by_tau_squared,
              read_bool);
  }
  if (auto it = j.find("batch"); it != j.end()) {
    const std::string w = where + "/batch";
    expect_object(*it, w);
    allow_keys(*it, w, {"p_identities", "k_per_identity", "unlabeled_per_step"});
    auto sz = [](const json& v, const std::string& p) { return std::size_t(read_uint(v, p)); };
    opt_field(*it, "p_identities", w, c.train.batch.p_identities, sz);
    opt_field(*it, "k_per_identity", w, c.train.batch.k_per_identity, sz);
    opt_field(*it, "unlabeled_per_step", w, c.train.batch.unlabeled_per_step, sz);
    validated(w, [&] { c.train.batch.validate(); });
  }
  if (auto it = j.find("schedule"); it != j.end()) {
    const std::string w = where + "/schedule";
    expect_object(*it, w);
    allow_keys(*it, w, {"base_lr", "final_lr", "warmup_factor", "warmup_epochs",
                        "total_epochs", "iters_per_epoch"});
    ScheduleConfig& s = c.train.schedule;
    opt_field(*it, "base_lr", w, s.base_lr, read_number);
    opt_field(*it, "final_lr", w, s.final_lr, read_number);
    opt_field(*it, "warmup_factor", w, s.warmup_factor, read_number);
    opt_field(*it, "warmup_epochs", w, s.warmup_epochs, read_int);
    opt_field(*it, "total_epochs", w, s.total_epochs, read_int);
    opt_field(*it, "iters_per_epoch", w, s.iters_per_epoch,
              [](const json& v, const std::string& p) { return std::size_t(read_uint(v, p)); });
    validated(w, [&] { s.validate(); });
  }
  if (auto it = j.find("optimizer"); it != j.end()) {
    const std::string w = where + "/optimizer";
    expect_object(*it, w);
    allow_keys(*it, w, {"kind", "beta1", "beta2", "eps", "momentum"});
    OptimizerConfig& o = c.train.optimizer;
    if (it->contains("kind")) {
      const std::string k = read_string((*it)["kind"], w + "/kind");
      if (k == "adam") {
        o.kind = OptimizerKind::adam;
      } else if (k == "sgd") {
        o.kind = OptimizerKind::sgd;
      } else {
        config_fail(w + "/kind", "expected adam or sgd, got '" + k + "'");
      }
    }
    opt_field(*it, "beta1", w, o.beta1, read_number);
    opt_field(*it, "beta2", w, o.beta2, read_number);
    opt_field(*it, "eps", w, o.eps, read_number);
    opt_field(*it, "momentum", w, o.momentum, read_number);
    if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0)) {
      config_fail(w, "betas must lie in [0, 1)");
    }
    if (!(o.eps > 0.0)) config_fail(w + "/eps", "must be > 0");
    if (!(o.momentum >= 0.0 && o.momentum < 1.0)) {
      config_fail(w + "/momentum", "must lie in [0, 1)");
    }
  }
  if (j.contains("method")) {
    const std::string m = read_string(j["method"], where + "/method");
    if (m == "baseline") {
      c.method = Method::baseline;
    } else if (m == "kd") {
      c.method = Method::kd;
    } else if (m == "sskd") {
      c.method = Method::sskd;
    } else {
      config_fail(where + "/method", "expected baseline, kd or sskd, got '" + m + "'");
    }
  }
  if (j.contains("seeds")) {
    const json& s = j["seeds"];
    if (!s.is_array() || s.empty()) config_fail(where + "/seeds", "expected a non-empty array");
    c.seeds.clear();
    std::set<std::uint64_t> seen;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::uint64_t v = read_uint(s[i], where + "/seeds/" + std::to_string(i));
      if (!seen.insert(v).second) {
        config_fail(where + "/seeds/" + std::to_string(i), "duplicate seed");
      }
      c.seeds.push_back(v);
    }
  }
  opt_field(j, "unlabeled_fraction", where, c.unlabeled_fraction, read_number);
  if (!(c.unlabeled_fraction >= 0.0 && c.unlabeled_fraction <= 1.0)) {
    config_fail(where + "/unlabeled_fraction", "must lie in [0, 1]");
  }
  if (auto it = j.find("evaluation"); it != j.end()) {
    const std::string w = where + "/evaluation";
    expect_object(*it, w);
    allow_keys(*it, w, {"split_seed", "filter_same_camera"});
    opt_field(*it, "split_seed", w, c.split_seed, read_uint);
    opt_field(*it, "filter_same_camera", w, c.filter_same_camera, read_bool);
  }
  if (j.contains("jobs")) c.jobs = unsigned(read_uint(j["jobs"], where + "/jobs"));

  // Cross-field invariants.
  const BenchmarkConfig& b = c.benchmark;
  if (b.domains.empty()) config_fail(where + "/benchmark/domains", "no domains");
  std::vector<std::vector<std::string>> folds;
  try {
    const std::optional<std::string> pool_id =
        b.pool ? std::optional<std::string>(b.pool->spec.domain_id) : std::nullopt;
    for (const ProtocolSpec& p :
         build_protocol(detail::domain_ids(b), c.protocol_mode, c.held_out, pool_id)) {
      folds.push_back(p.sources);
    }
  } catch (const ProtocolError& e) {
    config_fail(where + "/protocol", e.what());
  }
  for (const auto& sources : folds) {
    std::size_t ids = 0;
    bool external = false;
    for (const DomainEntry& e : b.domains) {
      if (std::find(sources.begin(), sources.end(), e.spec.domain_id) == sources.end()) continue;
      external = external || e.manifest.has_value();
      ids += e.spec.n_identities;
    }
    if (!external && ids < c.train.batch.p_identities) {
      config_fail(where + "/batch/p_identities",
                  "exceeds the " + std::to_string(ids) + " labeled identities of a fold");
    }
  }
  if (c.method == Method::sskd) {
    if (!b.pool) {
      config_fail(where + "/benchmark/pool", "method sskd requires an unlabeled pool");
    }
    if (c.train.batch.unlabeled_per_step == 0) {
      config_fail(where + "/batch/unlabeled_per_step",
                  "method sskd needs unlabeled_per_step > 0 (use method kd otherwise)");
    }
  }
  return c;
}

inline nlohmann::json experiment_to_json(const ExperimentConfig& c) {
  using namespace detail;
  json domains = json::array();
  for (const DomainEntry& e : c.benchmark.domains) domains.push_back(domain_to_json(e));
  json bench = {{"world", world_to_json(c.benchmark.world)}, {"domains", domains}};
  bench["pool"] = c.benchmark.pool ? domain_to_json(*c.benchmark.pool) : json(nullptr);
  const ScheduleConfig& s = c.train.schedule;
  const OptimizerConfig& o = c.train.optimizer;
  return {
      {"benchmark", bench},
      {"protocol", {{"mode", protocol_mode_name(c.protocol_mode)}, {"held_out", c.held_out}}},
      {"student", extractor_to_json(c.student)},
      {"teacher", extractor_to_json(c.teacher)},
      {"temperatures",
       {{"tau_c", c.train.temps.tau_c},
        {"tau_kd", c.train.temps.tau_kd},
        {"tau_kd_u", c.train.temps.tau_kd_u}}},
      {"loss",
       {{"stage2_ce_at_tau_kd", c.train.loss.stage2_ce_at_tau_kd},
        {"scale_kl_by_tau_squared", c.train.loss.scale_kl_by_tau_squared}}},
      {"batch",
       {{"p_identities", c.train.batch.p_identities},
        {"k_per_identity", c.train.batch.k_per_identity},
        {"unlabeled_per_step", c.train.batch.unlabeled_per_step}}},
      {"schedule",
       {{"base_lr", s.base_lr},
        {"final_lr", s.final_lr},
        {"warmup_factor", s.warmup_factor},
        {"warmup_epochs", s.warmup_epochs},
        {"total_epochs", s.total_epochs},
        {"iters_per_epoch", s.iters_per_epoch}}},
      {"optimizer",
       {{"kind", o.kind == OptimizerKind::adam ? "adam" : "sgd"},
        {"beta1", o.beta1},
        {"beta2", o.beta2},
        {"eps", o.eps},
        {"momentum", o.momentum}}},
      {"method", to_string(c.method)},
      {"seeds", c.seeds},
      {"unlabeled_fraction", c.unlabeled_fraction},
      {"evaluation",
       {{"split_seed", c.split_seed}, {"filter_same_camera", c.filter_same_camera}}},
      {"jobs", c.jobs},
  };
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

enum class SweepAxis { tau_kd_u, unlabeled_fraction, teacher_capacity };

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::tau_kd_u: return "tau_kd_u";
    case SweepAxis::unlabeled_fraction: return "unlabeled_fraction";
    case SweepAxis::teacher_capacity: return "teacher_capacity";
  }
  return "?";
}

/// One axis varied over `values` on top of `base`. Scalar axes use `scalars`;
/// teacher_capacity uses `capacities` (teacher hidden widths per point).
struct SweepConfig {
  SweepAxis axis = SweepAxis::tau_kd_u;
  std::vector<double> scalars;
  std::vector<std::vector<std::size_t>> capacities;
  ExperimentConfig base;

  std::size_t size() const {
    return axis == SweepAxis::teacher_capacity ? capacities.size() : scalars.size();
  }

  std::string label(std::size_t i) const {
    if (axis != SweepAxis::teacher_capacity) return nlohmann::json(scalars.at(i)).dump();
    std::string s;
    for (std::size_t h : capacities.at(i)) s += (s.empty() ? "" : "x") + std::to_string(h);
    return s;
  }

  ExperimentConfig point(std::size_t i) const {
    ExperimentConfig c = base;
    switch (axis) {
      case SweepAxis::tau_kd_u: c.train.temps.tau_kd_u = scalars.at(i); break;
      case SweepAxis::unlabeled_fraction: c.unlabeled_fraction = scalars.at(i); break;
      case SweepAxis::teacher_capacity: c.teacher.hidden_dims = capacities.at(i); break;
    }
    return c;
  }
};

inline SweepConfig sweep_from_json(const nlohmann::json& j,
                                   const std::filesystem::path& base_dir = {}) {
  using namespace detail;
  expect_object(j, "");
  allow_keys(j, "", {"axis", "values", "base"});
  SweepConfig s;
  if (!j.contains("axis")) config_fail("/axis", "required");
  const std::string axis = read_string(j["axis"], "/axis");
  if (axis == "tau_kd_u") {
    s.axis = SweepAxis::tau_kd_u;
  } else if (axis == "unlabeled_fraction") {
    s.axis = SweepAxis::unlabeled_fraction;
  } else if (axis == "teacher_capacity") {
    s.axis = SweepAxis::teacher_capacity;
  } else {
    config_fail("/axis", "expected tau_kd_u, unlabeled_fraction or teacher_capacity, got '" +
                             axis + "'");
  }
  if (!j.contains("values") || !j["values"].is_array() || j["values"].empty()) {
    config_fail("/values", "expected a non-empty array");
  }
  const json& v = j["values"];
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string w = "/values/" + std::to_string(i);
    if (s.axis == SweepAxis::teacher_capacity) {
      std::vector<std::size_t> dims = read_sizes(v[i], w);
      if (dims.empty() || std::find(dims.begin(), dims.end(), 0u) != dims.end()) {
        config_fail(w, "teacher hidden widths must be a non-empty list of positive integers");
      }
      s.capacities.push_back(std::move(dims));
    } else {
      const double x = read_number(v[i], w);
      if (s.axis == SweepAxis::tau_kd_u && !(x > 0.0 && std::isfinite(x))) {
        config_fail(w, "TemperatureConfig.tau_kd_u must be a positive finite number");
      }
      if (s.axis == SweepAxis::unlabeled_fraction && !(x >= 0.0 && x <= 1.0)) {
        config_fail(w, "unlabeled fraction must lie in [0, 1]");
      }
      s.scalars.push_back(x);
    }
  }
  if (!j.contains("base")) config_fail("/base", "required");
  if (j["base"].is_string()) {
    std::filesystem::path p = read_string(j["base"], "/base");
    if (p.is_relative()) p = base_dir / p;
    std::ifstream in(p);
    if (!in) config_fail("/base", "cannot open '" + p.string() + "'");
    json b;
    try {
      b = json::parse(in);
    } catch (const json::parse_error& e) {
      config_fail("/base", "'" + p.string() + "': " + e.what());
    }
    s.base = experiment_from_json(b, "/base");
  } else {
    s.base = experiment_from_json(j["base"], "/base");
  }
  if (s.base.method == Method::baseline) {
    config_fail("/base/method", "a sweep over " + axis + " needs method kd or sskd");
  }
  if (s.axis != SweepAxis::teacher_capacity && s.base.method != Method::sskd) {
    config_fail("/base/method", "axis " + axis + " only affects method sskd");
  }
  return s;
}

inline nlohmann::json sweep_to_json(const SweepConfig& s) {
  nlohmann::json values = nlohmann::json::array();
  if (s.axis == SweepAxis::teacher_capacity) {
    for (const auto& c : s.capacities) values.push_back(c);
  } else {
    for (double x : s.scalars) values.push_back(x);
  }
  return {{"axis", to_string(s.axis)}, {"values", values}, {"base", experiment_to_json(s.base)}};
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Parses a JSON file; syntax errors become ConfigError "path:line:col: ...".
inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t end = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string msg = e.what();
    if (auto p = msg.find("parse error"); p != std::string::npos) msg = msg.substr(p);
    throw ConfigError(path.string() + ":" + std::to_string(line) + ":" +
                      std::to_string(col) + ": " + msg);
  }
}

/// Writes through a temporary sibling and renames, so readers never observe
/// a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

/// Config documents: an object with "axis" is a sweep, anything else an
/// experiment. Errors carry the file name.
inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  try {
    return experiment_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline SweepConfig load_sweep(const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  try {
    return sweep_from_json(j, path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline bool is_sweep_document(const nlohmann::json& j) {
  return j.is_object() && j.contains("axis");
}

}  // namespace sskd
