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
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sskd/data.hpp"
#include "sskd/errors.hpp"

namespace sskd {

/// Stable 64-bit FNV-1a, used to derive per-domain seeds and identity
/// namespaces independently of the standard library's hash.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// How a domain distorts the rendered features: x = scale ⊙ (R · f) + bias,
/// with R a rotation whose distance from the identity grows with
/// rotation_strength, followed by zero-masking occlusion_rate of the
/// coordinates. scene_jitter composes a further per-identity rotation of that
/// strength. camera_sigma sets the spread of per-camera additive offsets and
/// noise_sigma the per-image noise on the identity coordinates.
struct DomainShift {
  std::uint64_t rotation_seed = 0;
  double rotation_strength = 0.0;
  std::vector<double> scale;  // empty means all ones
  std::vector<double> bias;   // empty means all zeros
  double camera_sigma = 0.0;
  double noise_sigma = 0.0;
  double occlusion_rate = 0.0;
  double scene_jitter = 0.0;

  void validate(std::size_t input_dim) const {
    auto finite_nonneg = [](double v, const char* name) {
      if (!std::isfinite(v) || v < 0.0) {
        throw ConfigError(std::string("DomainShift.") + name +
                          " must be finite and >= 0");
      }
    };
    finite_nonneg(rotation_strength, "rotation_strength");
    finite_nonneg(camera_sigma, "camera_sigma");
    finite_nonneg(noise_sigma, "noise_sigma");
    finite_nonneg(scene_jitter, "scene_jitter");
    if (!(occlusion_rate >= 0.0 && occlusion_rate <= 1.0)) {
      throw ConfigError("DomainShift.occlusion_rate must lie in [0, 1]");
    }
    if (!scale.empty() && scale.size() != input_dim) {
      throw ConfigError("DomainShift.scale must have input_dim entries");
    }
    if (!bias.empty() && bias.size() != input_dim) {
      throw ConfigError("DomainShift.bias must have input_dim entries");
    }
    for (double v : scale) {
      if (!std::isfinite(v)) throw ConfigError("DomainShift.scale must be finite");
    }
    for (double v : bias) {
      if (!std::isfinite(v)) throw ConfigError("DomainShift.bias must be finite");
    }
  }
};

/// Draws a shift's scale and bias vectors from a seed: scale entries are
/// exp(N(0, scale_spread²)), bias entries N(0, bias_sigma²).
inline void randomize_affine(DomainShift& shift, std::size_t input_dim,
                             std::uint64_t seed, double scale_spread,
                             double bias_sigma) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  shift.scale.resize(input_dim);
  shift.bias.resize(input_dim);
  for (std::size_t i = 0; i < input_dim; ++i) {
    shift.scale[i] = std::exp(scale_spread * n01(rng));
    shift.bias[i] = bias_sigma * n01(rng);
  }
}

struct DomainSpec {
  std::string domain_id;
  std::size_t n_identities = 50;
  std::size_t images_per_identity = 8;
  std::size_t n_cameras = 4;
  DomainShift shift;

  void validate(std::size_t input_dim) const {
    if (domain_id.empty()) throw ConfigError("DomainSpec.domain_id is empty");
    if (n_identities < 2) throw ConfigError("DomainSpec.n_identities must be >= 2");
    if (images_per_identity < 2) {
      throw ConfigError("DomainSpec.images_per_identity must be >= 2");
    }
    if (n_cameras < 1) throw ConfigError("DomainSpec.n_cameras must be >= 1");
    if (n_identities >= (std::size_t{1} << 24)) {
      throw ConfigError("DomainSpec.n_identities is too large");
    }
    shift.validate(input_dim);
  }
};

/// Generator constants shared by every domain.
///
/// Each image starts as a latent vector whose first identity_dim coordinates
/// are the identity prototype plus noise and whose remaining coordinates are
/// per-image nuisance with no identity content. A fixed random orthogonal
/// mixing spreads both over all input dimensions, followed by the camera
/// offset and the nonlinear warp u + warp_strength·tanh(W u).
struct WorldConfig {
  std::size_t input_dim = 32;
  std::size_t identity_dim = 16;
  double prototype_scale = 1.0;
  double nuisance_sigma = 1.0;
  double warp_strength = 0.0;

  void validate() const {
    if (input_dim < 2) throw ConfigError("WorldConfig.input_dim must be >= 2");
    if (identity_dim < 1 || identity_dim > input_dim) {
      throw ConfigError("WorldConfig.identity_dim must lie in [1, input_dim]");
    }
    if (!(prototype_scale > 0.0) || !std::isfinite(prototype_scale)) {
      throw ConfigError("WorldConfig.prototype_scale must be > 0");
    }
    if (!(nuisance_sigma >= 0.0) || !std::isfinite(nuisance_sigma)) {
      throw ConfigError("WorldConfig.nuisance_sigma must be finite and >= 0");
    }
    if (!(warp_strength >= 0.0) || !std::isfinite(warp_strength)) {
      throw ConfigError("WorldConfig.warp_strength must be finite and >= 0");
    }
  }
};

/// Global identity id: a per-domain namespace in the high bits plus the
/// local index, so distinct domains never share identities.
inline std::int64_t global_identity(std::string_view domain_id,
                                    std::size_t local) {
  const std::int64_t ns = std::int64_t(fnv1a64(domain_id) & 0x7fffffULL) + 1;
  return (ns << 24) | std::int64_t(local);
}

inline std::int64_t identity_namespace(std::int64_t identity) {
  return identity >> 24;
}

namespace detail {

inline std::mt19937_64 domain_stream(std::uint64_t bank_seed,
                                     std::string_view domain_id,
                                     std::uint32_t purpose) {
  const std::uint64_t h = fnv1a64(domain_id);
  std::seed_seq seq{std::uint32_t(bank_seed), std::uint32_t(bank_seed >> 32),
                    std::uint32_t(h), std::uint32_t(h >> 32), purpose};
  return std::mt19937_64(seq);
}

using Matrix = Eigen::MatrixXd;

/// Orthogonal Q of the QR factorization of I + strength·G with G Gaussian,
/// sign-fixed so that strength 0 yields exactly the identity.
inline Matrix rotation(std::uint64_t seed, double strength, std::size_t dim) {
  const Eigen::Index d = Eigen::Index(dim);
  if (strength == 0.0) return Matrix::Identity(d, d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix g(d, d);
  for (Eigen::Index c = 0; c < d; ++c) {
    for (Eigen::Index r = 0; r < d; ++r) g(r, c) = n01(rng);
  }
  Matrix a = Matrix::Identity(d, d) + strength * g;
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ();
  Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < d; ++i) {
    if (r(i, i) < 0.0) q.col(i) *= -1.0;
  }
  return q;
}

/// Latent-to-input map shared by all domains of one prototype bank.
struct World {
  Matrix mixing;  // orthogonal, input_dim × input_dim
  Matrix warp_w;
  double warp_strength = 0.0;

  Eigen::VectorXd render(const Eigen::VectorXd& latent,
                         const Eigen::VectorXd& camera) const {
    Eigen::VectorXd u = mixing * latent + camera;
    if (warp_strength == 0.0) return u;
    return u + warp_strength * (warp_w * u).array().tanh().matrix();
  }
};

inline World make_world(const WorldConfig& cfg, std::uint64_t bank_seed) {
  const Eigen::Index d = Eigen::Index(cfg.input_dim);
  std::mt19937_64 rng = domain_stream(bank_seed, "__world__", 0);
  std::normal_distribution<double> n01(0.0, 1.0);
  World w;
  if (cfg.identity_dim == cfg.input_dim) {
    w.mixing = Matrix::Identity(d, d);
  } else {
    Matrix g(d, d);
    for (Eigen::Index c = 0; c < d; ++c) {
      for (Eigen::Index r = 0; r < d; ++r) g(r, c) = n01(rng);
    }
    w.mixing = Eigen::HouseholderQR<Matrix>(g).householderQ();
  }
  w.warp_strength = cfg.warp_strength;
  if (w.warp_strength > 0.0) {
    const double sd = 2.0 / std::sqrt(double(cfg.input_dim));
    w.warp_w.resize(d, d);
    for (Eigen::Index c = 0; c < d; ++c) {
      for (Eigen::Index r = 0; r < d; ++r) w.warp_w(r, c) = sd * n01(rng);
    }
  }
  return w;
}

}  // namespace detail

/// Samples every image of a domain. Pure function of (spec, world, seed).
inline std::vector<SampleRecord> generate_domain(const DomainSpec& spec,
                                                 const WorldConfig& world,
                                                 std::uint64_t prototype_bank_seed) {
  world.validate();
  spec.validate(world.input_dim);
  const std::size_t dim = world.input_dim;
  const Eigen::Index d = Eigen::Index(dim);
  const DomainShift& sh = spec.shift;

  const detail::Matrix rot = detail::rotation(sh.rotation_seed, sh.rotation_strength, dim);
  const detail::World render = detail::make_world(world, prototype_bank_seed);
  const Eigen::Index id_dim = Eigen::Index(world.identity_dim);
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(d);
  Eigen::VectorXd bias = Eigen::VectorXd::Zero(d);
  for (Eigen::Index i = 0; i < d && !sh.scale.empty(); ++i) scale(i) = sh.scale[size_t(i)];
  for (Eigen::Index i = 0; i < d && !sh.bias.empty(); ++i) bias(i) = sh.bias[size_t(i)];

  std::mt19937_64 cam_rng = detail::domain_stream(prototype_bank_seed, spec.domain_id, 1);
  std::mt19937_64 rng = detail::domain_stream(prototype_bank_seed, spec.domain_id, 2);
  std::normal_distribution<double> n01(0.0, 1.0);

  std::vector<Eigen::VectorXd> cameras(spec.n_cameras, Eigen::VectorXd::Zero(d));
  for (auto& c : cameras) {
    for (Eigen::Index i = 0; i < d; ++i) c(i) = sh.camera_sigma * n01(cam_rng);
  }
  const std::size_t n_occluded =
      std::size_t(std::llround(sh.occlusion_rate * double(dim)));

  std::vector<SampleRecord> out;
  out.reserve(spec.n_identities * spec.images_per_identity);
  std::vector<std::size_t> coords(dim);
  for (std::size_t id = 0; id < spec.n_identities; ++id) {
    Eigen::VectorXd proto(id_dim);
    for (Eigen::Index i = 0; i < id_dim; ++i) proto(i) = world.prototype_scale * n01(rng);
    const std::size_t first_cam =
        std::uniform_int_distribution<std::size_t>(0, spec.n_cameras - 1)(rng);
    const std::uint64_t scene_seed = rng();
    const detail::Matrix view =
        sh.scene_jitter > 0.0 ? detail::rotation(scene_seed, sh.scene_jitter, dim) * rot
                              : rot;
    for (std::size_t j = 0; j < spec.images_per_identity; ++j) {
      const std::size_t cam = (first_cam + j) % spec.n_cameras;
      Eigen::VectorXd latent(d);
      for (Eigen::Index i = 0; i < id_dim; ++i) {
        latent(i) = proto(i) + sh.noise_sigma * n01(rng);
      }
      for (Eigen::Index i = id_dim; i < d; ++i) {
        latent(i) = world.nuisance_sigma * n01(rng);
      }
      Eigen::VectorXd x =
          (scale.array() * (view * render.render(latent, cameras[cam])).array())
              .matrix() +
          bias;
      if (n_occluded > 0) {
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        for (std::size_t k = 0; k < n_occluded; ++k) {
          std::uniform_int_distribution<std::size_t> pick(k, dim - 1);
          std::swap(coords[k], coords[pick(rng)]);
          x(Eigen::Index(coords[k])) = 0.0;
        }
      }
      SampleRecord rec;
      rec.features.assign(x.data(), x.data() + d);
      rec.identity = global_identity(spec.domain_id, id);
      rec.camera = int(cam);
      rec.domain = spec.domain_id;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

/// Ground-truth identities of an unlabeled pool, kept for diagnostics only.
/// Training entry points take UnlabeledSet, which cannot hold these.
class SealedIdentities {
 public:
  SealedIdentities() = default;
  explicit SealedIdentities(std::vector<std::int64_t> ids) : ids_(std::move(ids)) {}

  std::span<const std::int64_t> diagnostics_view() const { return ids_; }
  std::size_t size() const { return ids_.size(); }

 private:
  std::vector<std::int64_t> ids_;
};

struct UnlabeledPool {
  std::vector<SampleRecord> records;  // identity always absent
  SealedIdentities sealed;
};

inline UnlabeledPool generate_unlabeled_pool(const DomainSpec& spec,
                                             const WorldConfig& world,
                                             std::uint64_t seed) {
  std::vector<SampleRecord> records = generate_domain(spec, world, seed);
  std::vector<std::int64_t> truth;
  truth.reserve(records.size());
  for (SampleRecord& r : records) {
    truth.push_back(*r.identity);
    r.identity.reset();
  }
  return UnlabeledPool{std::move(records), SealedIdentities(std::move(truth))};
}

/// Deterministic subset of round(fraction·N) pool records.
inline std::vector<SampleRecord> subsample_pool(std::span<const SampleRecord> pool,
                                                double fraction,
                                                std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ConfigError("unlabeled fraction must lie in [0, 1]");
  }
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::size_t(std::llround(fraction * double(pool.size()))));
  std::sort(idx.begin(), idx.end());
  std::vector<SampleRecord> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(pool[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

enum class ProtocolMode { leave_one_out, fixed_split };

/// Labeled sources, optional unlabeled pool, and unseen test domains.
struct ProtocolSpec {
  std::string name;
  std::vector<std::string> sources;
  std::optional<std::string> unlabeled_pool;
  std::vector<std::string> tests;
};

/// leave_one_out: one protocol per domain (or only the fold for held_out when
/// it is non-empty). fixed_split: held_out is a comma-separated list of test
/// domains, everything else is a source.
inline std::vector<ProtocolSpec> build_protocol(
    std::span<const DomainSpec> domains, ProtocolMode mode,
    const std::string& held_out, const std::optional<std::string>& pool) {
  std::set<std::string> names;
  std::set<std::int64_t> namespaces;
  for (const DomainSpec& d : domains) {
    if (!names.insert(d.domain_id).second) {
      throw ProtocolError("duplicate domain id '" + d.domain_id + "'");
    }
    if (!namespaces.insert(identity_namespace(global_identity(d.domain_id, 0))).second) {
      throw ProtocolError("identity namespace collision for domain '" +
                          d.domain_id + "'");
    }
  }
  if (pool && names.count(*pool)) {
    throw ProtocolError("unlabeled pool '" + *pool + "' is also a labeled domain");
  }

  auto split = [&](const std::vector<std::string>& tests) {
    ProtocolSpec p;
    for (const DomainSpec& d : domains) {
      if (std::find(tests.begin(), tests.end(), d.domain_id) == tests.end()) {
        p.sources.push_back(d.domain_id);
      }
    }
    p.tests = tests;
    p.unlabeled_pool = pool;
    std::string src;
    for (const auto& s : p.sources) src += (src.empty() ? "" : "+") + s;
    std::string tst;
    for (const auto& s : tests) tst += (tst.empty() ? "" : "+") + s;
    p.name = src + "->" + tst;
    if (p.sources.empty()) throw ProtocolError("protocol has no labeled source");
    return p;
  };

  std::vector<ProtocolSpec> out;
  if (mode == ProtocolMode::leave_one_out) {
    if (domains.size() < 2) {
      throw ProtocolError("leave-one-out needs at least two domains");
    }
    if (!held_out.empty() && !names.count(held_out)) {
      throw ProtocolError("held-out domain '" + held_out + "' not found");
    }
    for (const DomainSpec& d : domains) {
      if (held_out.empty() || d.domain_id == held_out) out.push_back(split({d.domain_id}));
    }
  } else {
    std::vector<std::string> tests;
    std::size_t start = 0;
    while (start <= held_out.size()) {
      const std::size_t comma = held_out.find(',', start);
      std::string name = held_out.substr(
          start, comma == std::string::npos ? std::string::npos : comma - start);
      if (!name.empty()) {
        if (!names.count(name)) {
          throw ProtocolError("held-out domain '" + name + "' not found");
        }
        tests.push_back(name);
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (tests.empty()) throw ProtocolError("fixed split needs at least one test domain");
    out.push_back(split(tests));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifests: one JSON object per line with "features" (inline) or "path"
// (whitespace-separated numbers), "identity" (int or null), "camera", "domain".
// ---------------------------------------------------------------------------

inline nlohmann::json record_to_json(const SampleRecord& r) {
  nlohmann::json j = {{"features", r.features},
                      {"identity", nullptr},
                      {"camera", r.camera},
                      {"domain", r.domain}};
  if (r.identity) j["identity"] = *r.identity;
  return j;
}

inline void write_manifest(const std::filesystem::path& path,
                           std::span<const SampleRecord> records) {
  const std::string tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write manifest " + tmp);
    for (const SampleRecord& r : records) out << record_to_json(r).dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<double> read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feature file " + path.string());
  std::vector<double> v;
  double x;
  while (in >> x) v.push_back(x);
  if (!in.eof()) throw IoError("non-numeric content in " + path.string());
  return v;
}

inline std::vector<SampleRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<SampleRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const auto j = nlohmann::json::parse(line);
      SampleRecord r;
      if (j.contains("features")) {
        r.features = j.at("features").get<std::vector<double>>();
      } else if (j.contains("path")) {
        std::filesystem::path p = j.at("path").get<std::string>();
        if (p.is_relative()) p = path.parent_path() / p;
        r.features = read_feature_file(p);
      } else {
        throw IoError(where + ": record needs 'features' or 'path'");
      }
      if (j.contains("identity") && !j.at("identity").is_null()) {
        r.identity = j.at("identity").get<std::int64_t>();
      }
      r.camera = j.value("camera", 0);
      r.domain = j.value("domain", std::string{});
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(where + ": " + e.what());
    }
  }
  return out;
}

/// Writes pool ground truth to its own file, away from the pool manifest.
inline void write_sealed_identities(const std::filesystem::path& path,
                                    const SealedIdentities& sealed) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::int64_t id : sealed.diagnostics_view()) out << id << '\n';
}

}  // namespace sskd
