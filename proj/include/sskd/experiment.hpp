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
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "sskd/config.hpp"
#include "sskd/data.hpp"
#include "sskd/distill.hpp"
#include "sskd/domainsim.hpp"
#include "sskd/model.hpp"
#include "sskd/retrieval.hpp"

namespace sskd {

inline constexpr const char* kReportFormat = "sskd-report";
inline constexpr const char* kSweepFormat = "sskd-sweep";
inline constexpr int kReportVersion = 1;

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

/// Seed for a named purpose, independent across tags.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = fnv1a64(tag) ^ (seed * 0x9E3779B97F4A7C15ULL);
  h ^= h >> 31;
  h *= 0xBF58476D1CE4E5B9ULL;
  return h ^ (h >> 29);
}

struct MetricBlock {
  double rank1 = 0.0;
  double rank5 = 0.0;
  double rank10 = 0.0;
  double mean_ap = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
};

inline MetricBlock metrics_of(const EvalResult& r) {
  return {r.rank_k.at(1), r.rank_k.at(5), r.rank_k.at(10), r.mean_ap, r.evaluated,
          r.skipped};
}

inline nlohmann::json to_json(const MetricBlock& m) {
  return {{"rank1", m.rank1},   {"rank5", m.rank5},         {"rank10", m.rank10},
          {"mAP", m.mean_ap},   {"evaluated", m.evaluated}, {"skipped", m.skipped}};
}

struct FoldOutcome {
  std::uint64_t seed = 0;
  std::string protocol;
  std::string test_domain;
  MetricBlock student;
  std::optional<MetricBlock> teacher;
  std::optional<EpochMetrics> final_losses;  // last stage-2 epoch
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  if (v.empty()) return out;
  for (double x : v) out.mean += x;
  out.mean /= double(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / double(v.size() - 1));
  }
  return out;
}

/// Results of one experiment: one outcome per (seed, protocol, test domain),
/// ordered by seed then protocol.
struct RunReport {
  ExperimentConfig config;
  std::vector<FoldOutcome> folds;

  /// Mean over folds of `field`, per seed in config order.
  std::vector<double> per_seed(double MetricBlock::*field, bool teacher = false) const {
    std::vector<double> out;
    for (std::uint64_t s : config.seeds) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const FoldOutcome& f : folds) {
        if (f.seed != s) continue;
        const MetricBlock* m = teacher ? (f.teacher ? &*f.teacher : nullptr) : &f.student;
        if (!m) continue;
        sum += m->*field;
        ++n;
      }
      if (n > 0) out.push_back(sum / double(n));
    }
    return out;
  }

  MeanStd summary(double MetricBlock::*field, bool teacher = false) const {
    return mean_std(per_seed(field, teacher));
  }

  double mean_rank1() const { return summary(&MetricBlock::rank1).mean; }
};

inline nlohmann::json summary_json(const RunReport& r, bool teacher = false) {
  auto ms = [](MeanStd m) { return nlohmann::json{{"mean", m.mean}, {"std", m.std}}; };
  return {{"rank1", ms(r.summary(&MetricBlock::rank1, teacher))},
          {"rank5", ms(r.summary(&MetricBlock::rank5, teacher))},
          {"rank10", ms(r.summary(&MetricBlock::rank10, teacher))},
          {"mAP", ms(r.summary(&MetricBlock::mean_ap, teacher))}};
}

/// Deterministic report document: resolved config, its SHA-256, per-fold,
/// per-seed, per-domain and summary metrics. No timestamps or timings.
inline nlohmann::json report_to_json(const RunReport& r) {
  using nlohmann::json;
  const json cfg = experiment_to_json(r.config);
  const bool distilled = r.config.method != Method::baseline;
  json folds = json::array();
  for (const FoldOutcome& f : r.folds) {
    json j = {{"seed", f.seed},
              {"protocol", f.protocol},
              {"test_domain", f.test_domain},
              {"student", to_json(f.student)}};
    if (f.teacher) j["teacher"] = to_json(*f.teacher);
    if (f.final_losses) {
      json l = {{"ce", f.final_losses->ce}, {"kd", *f.final_losses->kd},
                {"total", f.final_losses->total}};
      if (f.final_losses->kd_u) l["kd_u"] = *f.final_losses->kd_u;
      j["final_losses"] = l;
    }
    folds.push_back(j);
  }
  json per_seed = json::array();
  const auto r1 = r.per_seed(&MetricBlock::rank1);
  const auto ap = r.per_seed(&MetricBlock::mean_ap);
  for (std::size_t i = 0; i < r1.size(); ++i) {
    per_seed.push_back({{"seed", r.config.seeds[i]}, {"rank1", r1[i]}, {"mAP", ap[i]}});
  }
  std::map<std::string, std::vector<const FoldOutcome*>> by_domain;
  for (const FoldOutcome& f : r.folds) by_domain[f.test_domain].push_back(&f);
  json per_domain = json::object();
  for (const auto& [name, fs] : by_domain) {
    std::vector<double> a, b;
    for (const FoldOutcome* f : fs) {
      a.push_back(f->student.rank1);
      b.push_back(f->student.mean_ap);
    }
    const MeanStd ma = mean_std(a), mb = mean_std(b);
    per_domain[name] = {{"rank1", {{"mean", ma.mean}, {"std", ma.std}}},
                        {"mAP", {{"mean", mb.mean}, {"std", mb.std}}}};
  }
  json out = {{"format", kReportFormat},
              {"version", kReportVersion},
              {"kind", "run"},
              {"method", to_string(r.config.method)},
              {"config_sha256", sha256_hex(cfg.dump())},
              {"config", cfg},
              {"summary", summary_json(r)}};
  if (distilled) out["teacher_summary"] = summary_json(r, true);
  out["per_seed"] = per_seed;
  out["per_domain"] = per_domain;
  out["folds"] = folds;
  return out;
}

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;
  bool save_checkpoints = false;
  bool log_epochs = true;
  std::function<void(const std::string&)> progress;
};

namespace detail {

/// Materialized benchmark for one seed.
struct SeedData {
  std::map<std::string, std::vector<SampleRecord>> domains;
  std::optional<UnlabeledPool> pool;
};

inline std::vector<SampleRecord> load_domain(const DomainEntry& e, const WorldConfig& w,
                                             std::uint64_t seed) {
  if (!e.manifest) return generate_domain(e.resolved(w.input_dim), w, seed);
  std::vector<SampleRecord> recs = read_manifest(*e.manifest);
  for (SampleRecord& r : recs) {
    if (r.features.size() != w.input_dim) {
      throw DimensionError("manifest '" + *e.manifest + "' has " +
                           std::to_string(r.features.size()) +
                           "-dim features, expected " + std::to_string(w.input_dim));
    }
    r.domain = e.spec.domain_id;
  }
  return recs;
}

inline SeedData materialize(const BenchmarkConfig& b, std::uint64_t seed) {
  SeedData d;
  for (const DomainEntry& e : b.domains) {
    d.domains[e.spec.domain_id] = load_domain(e, b.world, seed);
    for (const SampleRecord& r : d.domains[e.spec.domain_id]) {
      if (!r.identity) {
        throw UsageError("labeled domain '" + e.spec.domain_id +
                         "' contains unlabeled records");
      }
    }
  }
  if (b.pool) {
    if (b.pool->manifest) {
      UnlabeledPool p;
      p.records = load_domain(*b.pool, b.world, seed);
      for (SampleRecord& r : p.records) r.identity.reset();
      d.pool = std::move(p);
    } else {
      d.pool = generate_unlabeled_pool(b.pool->resolved(b.world.input_dim), b.world, seed);
    }
  }
  return d;
}

struct TrainedModel {
  Model model;
  std::vector<EpochMetrics> log;
};

inline nlohmann::json epoch_json(const EpochMetrics& m) {
  nlohmann::json j = {{"stage", m.stage}, {"model", m.model}, {"epoch", m.epoch},
                      {"lr", m.lr},       {"ce", m.ce}};
  if (m.kd) j["kd"] = *m.kd;
  if (m.kd_u) j["kd_u"] = *m.kd_u;
  j["total"] = m.total;
  return j;
}

}  // namespace detail

/// Executes experiments. Materialized data and stage-1 models are cached
/// across every experiment run by the same Runner, so method ladders and
/// sweeps train each stage-1 model once. Work items (experiment, seed,
/// protocol) run on `jobs` threads and are reduced in a fixed order, so the
/// results do not depend on the thread count.
class Runner {
 public:
  explicit Runner(RunOptions options = {}) : options_(std::move(options)) {}

  std::vector<RunReport> run_many(const std::vector<ExperimentConfig>& configs,
                                  const std::vector<std::string>& labels = {}) {
    struct Task {
      std::size_t config;
      std::uint64_t seed;
      ProtocolSpec protocol;
    };
    std::vector<Task> tasks;
    unsigned jobs = 1;
    for (std::size_t c = 0; c < configs.size(); ++c) {
      const ExperimentConfig& cfg = configs[c];
      jobs = std::max(jobs, cfg.jobs == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                          : cfg.jobs);
      const auto protocols = build_protocol(
          detail::domain_ids(cfg.benchmark), cfg.protocol_mode, cfg.held_out,
          cfg.benchmark.pool ? std::optional<std::string>(cfg.benchmark.pool->spec.domain_id)
                             : std::nullopt);
      for (std::uint64_t seed : cfg.seeds) {
        data_for(cfg.benchmark, seed);
        for (const ProtocolSpec& p : protocols) tasks.push_back({c, seed, p});
      }
    }

    struct Slot {
      std::vector<FoldOutcome> outcomes;
      std::vector<nlohmann::json> log;
      std::exception_ptr error;
    };
    std::vector<Slot> slots(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < tasks.size(); i = next++) {
        try {
          const Task& t = tasks[i];
          const std::string label = labels.empty() ? "" : labels[t.config];
          slots[i].outcomes =
              run_task(configs[t.config], t.seed, t.protocol, label, slots[i].log);
        } catch (...) {
          slots[i].error = std::current_exception();
        }
      }
    };
    const unsigned n_threads = std::min<unsigned>(jobs, unsigned(std::max<std::size_t>(1, tasks.size())));
    if (n_threads <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (unsigned k = 0; k < n_threads; ++k) pool.emplace_back(worker);
      for (std::thread& th : pool) th.join();
    }

    std::vector<RunReport> reports(configs.size());
    for (std::size_t c = 0; c < configs.size(); ++c) reports[c].config = configs[c];
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (slots[i].error) std::rethrow_exception(slots[i].error);
      auto& dst = reports[tasks[i].config].folds;
      dst.insert(dst.end(), slots[i].outcomes.begin(), slots[i].outcomes.end());
      for (auto& line : slots[i].log) log_.push_back(std::move(line));
    }
    return reports;
  }

  RunReport run(const ExperimentConfig& cfg) { return run_many({cfg}).front(); }

  /// Per-epoch metric lines accumulated so far, in task order.
  const std::vector<nlohmann::json>& epoch_log() const { return log_; }

  const detail::SeedData& data_for(const BenchmarkConfig& b, std::uint64_t seed) {
    const std::string key = bench_key(b) + "#" + std::to_string(seed);
    std::lock_guard<std::mutex> lock(mu_);
    auto it = data_.find(key);
    if (it == data_.end()) {
      it = data_.emplace(key, std::make_shared<const detail::SeedData>(
                                  detail::materialize(b, seed)))
               .first;
    }
    return *it->second;
  }

 private:
  static std::string bench_key(const BenchmarkConfig& b) {
    ExperimentConfig tmp;
    tmp.benchmark = b;
    return experiment_to_json(tmp)["benchmark"].dump();
  }

  // Stage-1 training of one model, shared by every task with the same inputs.
  std::shared_ptr<const detail::TrainedModel> stage1(
      const ExperimentConfig& cfg, const ExtractorConfig& arch, Stage1Lane lane,
      const LabeledSet& data, std::uint64_t seed, const ProtocolSpec& protocol) {
    const std::size_t k = data.num_classes();
    const TrainConfig& tc = cfg.train;
    const nlohmann::json key_doc = {
        {"bench", bench_key(cfg.benchmark)},
        {"protocol", protocol.name},
        {"seed", seed},
        {"lane", std::uint64_t(lane)},
        {"arch", detail::extractor_to_json(arch)},
        {"input_dim", arch.input_dim},
        {"tau_c", tc.temps.tau_c},
        {"pk", {tc.batch.p_identities, tc.batch.k_per_identity}},
        {"schedule", experiment_to_json(cfg)["schedule"]},
        {"optimizer", experiment_to_json(cfg)["optimizer"]}};
    const std::string key = key_doc.dump();

    std::promise<std::shared_ptr<const detail::TrainedModel>> promise;
    std::shared_future<std::shared_ptr<const detail::TrainedModel>> fut;
    bool owner = false;
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = stage1_.find(key);
      if (it == stage1_.end()) {
        fut = promise.get_future().share();
        stage1_.emplace(key, fut);
        owner = true;
      } else {
        fut = it->second;
      }
    }
    if (!owner) return fut.get();
    try {
      const bool student = lane == Stage1Lane::student;
      auto out = std::make_shared<detail::TrainedModel>();
      out->model = build_model(arch, k, student ? std::optional<std::size_t>(k) : std::nullopt,
                               derive_seed(seed, student ? "init:student" : "init:teacher"));
      Optimizer opt(tc.optimizer);
      train_stage1_model(out->model, opt, data, tc, cfg.epochs(),
                         derive_seed(seed, "train:" + protocol.name), lane,
                         [&](const EpochMetrics& m) { out->log.push_back(m); });
      promise.set_value(out);
    } catch (...) {
      promise.set_exception(std::current_exception());
    }
    return fut.get();
  }

  std::vector<FoldOutcome> run_task(const ExperimentConfig& cfg, std::uint64_t seed,
                                    const ProtocolSpec& protocol, const std::string& label,
                                    std::vector<nlohmann::json>& log) {
    const detail::SeedData& d = data_for(cfg.benchmark, seed);
    std::vector<SampleRecord> train;
    for (const std::string& s : protocol.sources) {
      const auto& recs = d.domains.at(s);
      train.insert(train.end(), recs.begin(), recs.end());
    }
    const LabeledSet labeled = make_labeled_set(train);

    auto emit = [&](const EpochMetrics& m) {
      nlohmann::json j = {{"seed", seed}, {"protocol", protocol.name}};
      if (!label.empty()) j["point"] = label;
      j.update(detail::epoch_json(m));
      if (options_.log_epochs) log.push_back(std::move(j));
    };

    auto student1 = stage1(cfg, cfg.student, Stage1Lane::student, labeled, seed, protocol);
    for (const EpochMetrics& m : student1->log) emit(m);
    Model final_student = student1->model;
    std::optional<Model> teacher;
    std::optional<EpochMetrics> last;

    if (cfg.method != Method::baseline) {
      auto teacher1 = stage1(cfg, cfg.teacher, Stage1Lane::teacher, labeled, seed, protocol);
      for (const EpochMetrics& m : teacher1->log) emit(m);
      TrainState state{student1->model, teacher1->model, Optimizer(cfg.train.optimizer),
                       Optimizer(cfg.train.optimizer), 0, seed, 1};
      TrainConfig tc = cfg.train;
      UnlabeledSet pool;
      if (cfg.method == Method::sskd && d.pool) {
        pool = make_unlabeled_set(subsample_pool(
            d.pool->records, cfg.unlabeled_fraction, derive_seed(seed, "pool-fraction")));
      }
      // An empty pool (kd, or fraction 0) leaves only the labeled terms.
      if (pool.empty()) tc.batch.unlabeled_per_step = 0;
      state = train_stage2_sskd(std::move(state), labeled, pool, tc, cfg.epochs(),
                                derive_seed(seed, "stage2:" + protocol.name),
                                [&](const EpochMetrics& m) {
                                  emit(m);
                                  last = m;
                                });
      final_student = std::move(state.student);
      teacher = std::move(state.teacher);
    }

    if (options_.save_checkpoints && options_.out_dir) {
      std::string name = "seed-" + std::to_string(seed);
      for (const std::string& t : protocol.tests) name += "_" + t;
      std::filesystem::path dir = *options_.out_dir / "checkpoints";
      if (!label.empty()) dir /= label;
      std::filesystem::create_directories(dir);
      save_checkpoint(final_student, dir / (name + ".json"));
    }

    std::vector<FoldOutcome> out;
    const auto results = run_protocol(protocol, final_student, d.domains, cfg.split_seed,
                                      cfg.filter_same_camera);
    std::vector<std::pair<std::string, EvalResult>> teacher_results;
    if (teacher) {
      teacher_results = run_protocol(protocol, *teacher, d.domains, cfg.split_seed,
                                     cfg.filter_same_camera);
    }
    for (std::size_t i = 0; i < results.size(); ++i) {
      FoldOutcome f;
      f.seed = seed;
      f.protocol = protocol.name;
      f.test_domain = results[i].first;
      f.student = metrics_of(results[i].second);
      if (teacher) f.teacher = metrics_of(teacher_results[i].second);
      f.final_losses = last;
      if (options_.progress) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s%s seed %llu %s: rank-1 %.4f mAP %.4f",
                      label.empty() ? "" : (label + " ").c_str(), to_string(cfg.method),
                      static_cast<unsigned long long>(seed), f.test_domain.c_str(),
                      f.student.rank1, f.student.mean_ap);
        options_.progress(buf);
      }
      out.push_back(std::move(f));
    }
    return out;
  }

  RunOptions options_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const detail::SeedData>> data_;
  std::map<std::string, std::shared_future<std::shared_ptr<const detail::TrainedModel>>>
      stage1_;
  std::vector<nlohmann::json> log_;
};

inline std::string jsonl(const std::vector<nlohmann::json>& lines) {
  std::string out;
  for (const auto& l : lines) out += l.dump() + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepReport {
  SweepConfig config;
  std::vector<RunReport> points;
};

inline SweepReport run_sweep(const SweepConfig& s, Runner& runner) {
  std::vector<ExperimentConfig> cfgs;
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < s.size(); ++i) {
    cfgs.push_back(s.point(i));
    labels.push_back(std::string(to_string(s.axis)) + "=" + s.label(i));
  }
  return SweepReport{s, runner.run_many(cfgs, labels)};
}

inline std::size_t teacher_parameter_count(const ExperimentConfig& c, std::size_t classes) {
  std::size_t n = 0, in = c.teacher.input_dim;
  for (std::size_t h : c.teacher.hidden_dims) {
    n += in * h + h;
    in = h;
  }
  n += in * c.teacher.embed_dim + c.teacher.embed_dim;
  return n + c.teacher.embed_dim * classes + classes;
}

inline nlohmann::json sweep_report_to_json(const SweepReport& r) {
  using nlohmann::json;
  const json cfg = sweep_to_json(r.config);
  json points = json::array();
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    json values = cfg["values"][i];
    json per_seed = json::array();
    const auto r1 = r.points[i].per_seed(&MetricBlock::rank1);
    const auto ap = r.points[i].per_seed(&MetricBlock::mean_ap);
    for (std::size_t k = 0; k < r1.size(); ++k) {
      per_seed.push_back({{"seed", r.points[i].config.seeds[k]}, {"rank1", r1[k]}, {"mAP", ap[k]}});
    }
    json p = {{"value", values},
              {"label", r.config.label(i)},
              {"summary", summary_json(r.points[i])},
              {"teacher_summary", summary_json(r.points[i], true)},
              {"per_seed", per_seed}};
    points.push_back(p);
  }
  return {{"format", kSweepFormat},
          {"version", kReportVersion},
          {"kind", "sweep"},
          {"axis", to_string(r.config.axis)},
          {"config_sha256", sha256_hex(cfg.dump())},
          {"config", cfg},
          {"points", points}};
}

/// Plot-ready series: one row per sweep value.
inline std::string sweep_csv(const SweepReport& r) {
  const bool capacity = r.config.axis == SweepAxis::teacher_capacity;
  std::string out = std::string(to_string(r.config.axis)) +
                    (capacity ? ",teacher_width" : "") +
                    ",rank1_mean,rank1_std,mAP_mean,mAP_std,teacher_rank1_mean\n";
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    const RunReport& p = r.points[i];
    const MeanStd r1 = p.summary(&MetricBlock::rank1);
    const MeanStd ap = p.summary(&MetricBlock::mean_ap);
    const MeanStd t1 = p.summary(&MetricBlock::rank1, true);
    char buf[256];
    std::string value = r.config.label(i);
    if (capacity) value += "," + std::to_string(r.config.capacities[i].back());
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.6f,%.6f\n", r1.mean, r1.std, ap.mean,
                  ap.std, t1.mean);
    out += value + buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint evaluation and benchmark materialization
// ---------------------------------------------------------------------------

/// Evaluates a saved model on every test domain of the configured protocols
/// (restricted to `held_out` when given) for one seed's benchmark.
inline nlohmann::json evaluate_checkpoint(const ExperimentConfig& cfg, const Model& model,
                                          std::uint64_t seed,
                                          const std::string& held_out = "") {
  if (model.config.input_dim != cfg.benchmark.world.input_dim) {
    throw DimensionError("checkpoint input_dim " + std::to_string(model.config.input_dim) +
                         " does not match the benchmark's " +
                         std::to_string(cfg.benchmark.world.input_dim));
  }
  const detail::SeedData d = detail::materialize(cfg.benchmark, seed);
  const auto protocols = build_protocol(detail::domain_ids(cfg.benchmark), cfg.protocol_mode,
                                        held_out.empty() ? cfg.held_out : held_out, std::nullopt);
  nlohmann::json results = nlohmann::json::array();
  for (const ProtocolSpec& p : protocols) {
    for (const auto& [name, res] :
         run_protocol(p, model, d.domains, cfg.split_seed, cfg.filter_same_camera)) {
      results.push_back({{"protocol", p.name}, {"test_domain", name}, {"metrics", to_json(metrics_of(res))}});
    }
  }
  const nlohmann::json c = experiment_to_json(cfg);
  return {{"format", kReportFormat}, {"version", kReportVersion}, {"kind", "eval"},
          {"seed", seed},            {"config_sha256", sha256_hex(c.dump())},
          {"config", c},             {"results", results}};
}

/// Writes one manifest per labeled domain, the pool manifest and its sealed
/// identity file under `dir`.
inline std::vector<std::filesystem::path> write_benchmark(const BenchmarkConfig& b,
                                                          std::uint64_t seed,
                                                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const detail::SeedData d = detail::materialize(b, seed);
  std::vector<std::filesystem::path> written;
  for (const auto& [name, recs] : d.domains) {
    written.push_back(dir / (name + ".jsonl"));
    write_manifest(written.back(), recs);
  }
  if (d.pool && b.pool) {
    const std::string name = b.pool->spec.domain_id;
    written.push_back(dir / (name + ".jsonl"));
    write_manifest(written.back(), d.pool->records);
    written.push_back(dir / (name + ".sealed.txt"));
    write_sealed_identities(written.back(), d.pool->sealed);
  }
  return written;
}

}  // namespace sskd
