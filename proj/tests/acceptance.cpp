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
// Acceptance checks. One PASS/FAIL line per criterion; exit status 1 when
// any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "sskd/config.hpp"
#include "sskd/distill.hpp"
#include "sskd/experiment.hpp"
#include "support.hpp"

using namespace sskd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double pts(double x) { return 100.0 * x; }

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  std::string worst_op;
  for (int inst = 0; inst < 100; ++inst) {
    for (const auto& [op, err] : testing::micro_instance_errors(rng)) {
      if (err > worst) worst = err, worst_op = op;
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-4 && secs < 30.0,
          fmt("100 instances, max rel err %.2e (%s), %.1f s", worst, worst_op.c_str(), secs)};
}

Outcome loss_oracles() {
  double worst = 0.0;
  Tape t;
  for (std::size_t k : {2, 5, 10, 751}) {
    std::vector<int> labels{0, int(k) - 1};
    const double v = cross_entropy(t.constant(Tensor::zeros({2, k})), labels, 1.0).item();
    worst = std::max(worst, std::abs(v - std::log(double(k))));
  }
  const double l3 = std::log(3.0);
  worst = std::max(worst, std::abs(kd_loss(t.constant(Tensor::matrix(1, 2, {100, -100})),
                                           t.constant(Tensor::matrix(1, 2, {0, 0})), 1.0)
                                       .item() -
                                   std::log(2.0)));
  worst = std::max(worst, std::abs(kd_loss(t.constant(Tensor::matrix(1, 2, {l3, 0})),
                                           t.constant(Tensor::matrix(1, 2, {0, l3})), 1.0)
                                       .item() -
                                   0.5 * l3));
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> tau(0.5, 16);
  double min_kl = 1e300;
  for (int i = 0; i < 10000; ++i) {
    Tape tp;
    const double kl = kd_loss(tp.constant(testing::random_tensor({1, 5}, rng, -20, 20)),
                              tp.constant(testing::random_tensor({1, 5}, rng, -20, 20)),
                              tau(rng))
                          .item();
    min_kl = std::min(min_kl, kl);
  }
  return {worst < 1e-9 && min_kl >= -1e-12,
          fmt("max oracle error %.1e, min KL over 10000 pairs %.2e", worst, min_kl)};
}

Outcome temperature_identities() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> tau_d(0.1, 20);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Tape t;
    const double tau = tau_d(rng);
    Tensor a = testing::random_tensor({3, 6}, rng, -10, 10);
    Tensor b = testing::random_tensor({3, 6}, rng, -10, 10);
    const Tensor pa = softmax(t.constant(a), tau).value();
    const double kd = kd_loss(t.constant(a), t.constant(b), tau).item();
    for (double& x : a.data()) x /= tau;
    for (double& x : b.data()) x /= tau;
    const Tensor pb = softmax(t.constant(a), 1.0).value();
    for (std::size_t j = 0; j < pa.size(); ++j) worst = std::max(worst, std::abs(pa[j] - pb[j]));
    worst = std::max(worst, std::abs(kd - kd_loss(t.constant(a), t.constant(b), 1.0).item()));
  }
  int violations = 0;
  for (int i = 0; i < 100; ++i) {
    Tape t;
    const Tensor d = testing::random_tensor({8}, rng, -5, 5);
    double prev = -1.0;
    for (int tau = 1; tau <= 16; ++tau) {
      const Tensor p = softmax(t.constant(d), tau).value();
      const double h = testing::entropy(p.values());
      if (h < prev - 1e-12) ++violations;
      prev = h;
    }
  }
  return {worst < 1e-9 && violations == 0,
          fmt("max identity error %.1e, %d entropy decreases over 100 vectors", worst,
              violations)};
}

Outcome freeze_invariant() {
  const ExperimentConfig cfg = default_experiment();
  const BenchmarkConfig& b = cfg.benchmark;
  const std::uint64_t seed = cfg.seeds.front();
  const auto protocols = build_protocol(detail::domain_ids(b), cfg.protocol_mode, cfg.held_out,
                                        b.pool->spec.domain_id);
  const detail::SeedData data = detail::materialize(b, seed);
  std::vector<SampleRecord> train;
  for (const std::string& s : protocols.front().sources) {
    train.insert(train.end(), data.domains.at(s).begin(), data.domains.at(s).end());
  }
  const LabeledSet labeled = make_labeled_set(train);
  const UnlabeledSet pool = make_unlabeled_set(data.pool->records);
  const std::size_t k = labeled.num_classes();
  ExtractorConfig sc = cfg.student, tc = cfg.teacher;
  TrainState s1 = train_stage1(build_model(sc, k, k, seed), build_model(tc, k, std::nullopt, seed + 1),
                               labeled, cfg.train, cfg.epochs(), seed);
  const Model before = s1.teacher;
  const TrainState s2 = train_stage2_sskd(s1, labeled, pool, cfg.train, cfg.epochs(), seed);
  const auto pb = before.parameters(), pa = s2.teacher.parameters();
  std::size_t changed = 0, total = 0;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    changed += !bitwise_equal(*pb[i], *pa[i]);
    total += pb[i]->size();
  }
  const bool student_moved = [&] {
    const auto x = std::as_const(s1.student).parameters();
    const auto y = s2.student.parameters();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!bitwise_equal(*x[i], *y[i])) return true;
    }
    return false;
  }();
  return {changed == 0 && student_moved && s2.teacher.frozen,
          fmt("%s: %zu teacher values, %zu tensors changed, student updated: %s",
              protocols.front().name.c_str(), total, changed, student_moved ? "yes" : "no")};
}

Outcome metric_oracle() {
  std::mt19937_64 rng(99);
  int mismatches = 0;
  for (int i = 0; i < 200; ++i) {
    const auto [p, g] = testing::random_ranking_instance(rng, 8);
    mismatches += !testing::ranking_matches_oracle(p, g, i % 2 == 0);
  }
  const EmbeddingSet probe(Tensor::matrix(1, 2, {1, 0}), {7}, {0});
  const EmbeddingSet gallery(Tensor::matrix(4, 2, {1, 0.01, 1, 0.2, 1, 0.3, 1, 0.5}),
                             {7, 8, 7, 9}, {1, 1, 1, 1});
  const double ap = evaluate(probe, gallery).mean_ap;
  return {mismatches == 0 && std::abs(ap - 5.0 / 6.0) < 1e-12,
          fmt("%d/200 mismatches, hand-case AP %.12f", mismatches, ap)};
}

// Ladder, sweeps and capacity all share one runner so stage-1 models are
// trained once per (seed, fold, architecture).
struct Suite {
  Runner runner;
  ExperimentConfig base = default_experiment();
  std::optional<std::vector<RunReport>> ladder;

  explicit Suite(unsigned jobs) { base.jobs = jobs; }

  const std::vector<RunReport>& methods() {
    if (!ladder) {
      ExperimentConfig b = base, k = base, s = base;
      b.method = Method::baseline;
      k.method = Method::kd;
      ladder = runner.run_many({b, k, s}, {"baseline", "kd", "sskd"});
    }
    return *ladder;
  }
};

Outcome ordering(Suite& suite) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& r = suite.methods();
  const double base = r[0].mean_rank1(), kd = r[1].mean_rank1(), sskd = r[2].mean_rank1();
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {sskd >= kd && pts(sskd) >= pts(base) + 2.0,
          fmt("rank-1 over 5 seeds x 4 folds: baseline %.2f, kd %.2f, sskd %.2f "
              "(teacher %.2f), %.0f s",
              pts(base), pts(kd), pts(sskd), pts(r[2].summary(&MetricBlock::rank1, true).mean),
              secs)};
}

Outcome fraction_sweep(Suite& suite) {
  SweepConfig s;
  s.axis = SweepAxis::unlabeled_fraction;
  s.scalars = {0.0, 0.5, 1.0};
  s.base = suite.base;
  const SweepReport r = run_sweep(s, suite.runner);
  const double f0 = r.points[0].mean_rank1(), f5 = r.points[1].mean_rank1(),
               f1 = r.points[2].mean_rank1();
  return {f1 >= f0, fmt("rank-1 at fraction 0 / 0.5 / 1: %.2f / %.2f / %.2f", pts(f0), pts(f5),
                        pts(f1))};
}

Outcome tau_u_insensitivity(Suite& suite) {
  SweepConfig s;
  s.axis = SweepAxis::tau_kd_u;
  for (int t = 2; t <= 16; ++t) s.scalars.push_back(t);
  s.base = suite.base;
  const SweepReport r = run_sweep(s, suite.runner);
  double lo = 1e9, hi = -1e9;
  std::string series;
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    const double v = pts(r.points[i].mean_rank1());
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    series += fmt("%s%.1f", i ? " " : "", v);
  }
  return {hi - lo <= 5.0, fmt("tau_kd_u 2..16 spread %.2f points [%s]", hi - lo, series.c_str())};
}

Outcome teacher_capacity(Suite& suite) {
  SweepConfig s;
  s.axis = SweepAxis::teacher_capacity;
  s.capacities = {{64}, {256}, {1024}};
  s.base = suite.base;
  const SweepReport r = run_sweep(s, suite.runner);
  bool ok = true;
  std::string series;
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    const double v = pts(r.points[i].mean_rank1());
    if (i > 0 && v < pts(r.points[i - 1].mean_rank1()) - 1.0) ok = false;
    series += fmt("%s%s: %.2f (teacher %.2f)", i ? ", " : "", s.label(i).c_str(), v,
                  pts(r.points[i].summary(&MetricBlock::rank1, true).mean));
  }
  return {ok, "student rank-1 by teacher width " + series};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome reproducibility(const std::string& cli, const std::string& config, const fs::path& work) {
  if (cli.empty() || config.empty()) return {false, "needs --cli and --config"};
  fs::remove_all(work);
  std::vector<std::string> metrics;
  for (const char* name : {"first", "second"}) {
    const fs::path out = work / name;
    const std::string cmd = "\"" + cli + "\" run --config \"" + config + "\" --seed 1 --quiet --out \"" +
                            out.string() + "\" > \"" + (work / name).string() + ".log\" 2>&1";
    fs::create_directories(work);
    if (std::system(cmd.c_str()) != 0) return {false, std::string("run failed: ") + cmd};
    metrics.push_back(slurp(out / "report.json") + slurp(out / "metrics.jsonl"));
  }
  const bool same = !metrics[0].empty() && metrics[0] == metrics[1];
  return {same, fmt("two runs of %s (seed 1): report and metrics %s, %zu bytes",
                    fs::path(config).filename().c_str(), same ? "byte-identical" : "DIFFER",
                    metrics[0].size())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Acceptance checks");
  unsigned jobs = 1;
  std::vector<std::string> only;
  std::string cli, config, work = (fs::temp_directory_path() / "sskd_acceptance").string();
  app.add_option("--jobs", jobs, "Parallel work items for the training criteria (0 = all cores)");
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--cli", cli, "Path to the sskd executable");
  app.add_option("--config", config, "Experiment config for the reproducibility check");
  app.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);

  Suite suite(jobs);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient_suite", gradient_suite},
      {"loss_oracles", loss_oracles},
      {"temperature_identities", temperature_identities},
      {"freeze_invariant", freeze_invariant},
      {"metric_oracle", metric_oracle},
      {"ordering", [&] { return ordering(suite); }},
      {"unlabeled_fraction", [&] { return fraction_sweep(suite); }},
      {"tau_kd_u_insensitivity", [&] { return tau_u_insensitivity(suite); }},
      {"teacher_capacity", [&] { return teacher_capacity(suite); }},
      {"reproducibility", [&] { return reproducibility(cli, config, work); }},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
