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
// sskd: command-line front end (run, sweep, eval, gen, validate).
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sskd/config.hpp"
#include "sskd/experiment.hpp"

namespace fs = std::filesystem;
using namespace sskd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  bool fast = false;
  unsigned jobs = 0;
  bool quiet = false;
};

void apply_overrides(ExperimentConfig& c, const Common& o) {
  if (o.seed) c.seeds = {*o.seed};
  if (o.fast) c.train.schedule.total_epochs = 10;
  if (o.jobs > 0) c.jobs = o.jobs;
}

RunOptions options_for(const Common& o, bool checkpoints) {
  RunOptions r;
  r.out_dir = fs::path(o.out);
  r.save_checkpoints = checkpoints;
  if (!o.quiet) r.progress = [](const std::string& s) { std::cerr << s << '\n'; };
  return r;
}

int cmd_run(const Common& o) {
  ExperimentConfig cfg = load_experiment(o.config);
  apply_overrides(cfg, o);
  Runner runner(options_for(o, true));
  const RunReport report = runner.run(cfg);
  const fs::path out(o.out);
  write_file_atomic(out / "metrics.jsonl", jsonl(runner.epoch_log()));
  write_file_atomic(out / "report.json", report_to_json(report).dump(2) + "\n");
  const MeanStd r1 = report.summary(&MetricBlock::rank1);
  const MeanStd ap = report.summary(&MetricBlock::mean_ap);
  std::printf("%s: rank-1 %.2f ± %.2f  mAP %.2f ± %.2f  (%zu seeds) -> %s\n",
              to_string(cfg.method), 100 * r1.mean, 100 * r1.std, 100 * ap.mean,
              100 * ap.std, cfg.seeds.size(), (out / "report.json").string().c_str());
  return kExitOk;
}

int cmd_sweep(const Common& o) {
  SweepConfig s = load_sweep(o.config);
  apply_overrides(s.base, o);
  Runner runner(options_for(o, false));
  const SweepReport report = run_sweep(s, runner);
  const fs::path out(o.out);
  const std::string axis = to_string(s.axis);
  write_file_atomic(out / "metrics.jsonl", jsonl(runner.epoch_log()));
  write_file_atomic(out / ("sweep_" + axis + ".json"),
                    sweep_report_to_json(report).dump(2) + "\n");
  write_file_atomic(out / ("sweep_" + axis + ".csv"), sweep_csv(report));
  std::cout << sweep_csv(report);
  return kExitOk;
}

int cmd_eval(const Common& o, const std::string& checkpoint, const std::string& held_out) {
  ExperimentConfig cfg = load_experiment(o.config);
  apply_overrides(cfg, o);
  const Model model = load_checkpoint(checkpoint);
  const std::uint64_t seed = cfg.seeds.front();
  const nlohmann::json report = evaluate_checkpoint(cfg, model, seed, held_out);
  const fs::path out(o.out);
  write_file_atomic(out / "eval.json", report.dump(2) + "\n");
  for (const auto& r : report["results"]) {
    std::printf("%s: rank-1 %.2f  rank-5 %.2f  mAP %.2f\n",
                r["test_domain"].get<std::string>().c_str(),
                100 * r["metrics"]["rank1"].get<double>(),
                100 * r["metrics"]["rank5"].get<double>(),
                100 * r["metrics"]["mAP"].get<double>());
  }
  return kExitOk;
}

int cmd_gen(const Common& o) {
  ExperimentConfig cfg = load_experiment(o.config);
  apply_overrides(cfg, o);
  const std::uint64_t seed = cfg.seeds.front();
  const fs::path out(o.out);
  for (const fs::path& p : write_benchmark(cfg.benchmark, seed, out)) {
    std::cout << p.string() << '\n';
  }
  return kExitOk;
}

int cmd_validate(const std::string& path) {
  const nlohmann::json j = read_json_file(path);
  if (is_sweep_document(j)) {
    load_sweep(path);
  } else {
    load_experiment(path);
  }
  std::cout << path << ": ok\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised knowledge distillation experiments"};
  app.require_subcommand(1);
  Common o;
  std::string checkpoint, held_out;

  auto add_common = [&](CLI::App* sub, bool with_out) {
    sub->add_option("--config", o.config, "Experiment or sweep config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Use this single seed instead of the config's list");
    sub->add_flag("--fast", o.fast, "10 epochs per stage");
    sub->add_option("--jobs", o.jobs, "Parallel work items (default: from config)");
    sub->add_flag("--quiet", o.quiet, "No progress lines on stderr");
    if (with_out) sub->add_option("--out", o.out, "Output directory")->capture_default_str();
  };

  CLI::App* run = app.add_subcommand("run", "Train and evaluate one method over all protocols");
  add_common(run, true);
  CLI::App* sweep = app.add_subcommand("sweep", "Run an ablation sweep");
  add_common(sweep, true);
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the protocol test domains");
  add_common(eval, true);
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--held-out", held_out, "Restrict to this held-out domain");
  CLI::App* gen = app.add_subcommand("gen", "Write the benchmark as manifest files");
  add_common(gen, true);
  CLI::App* validate = app.add_subcommand("validate", "Check a config without running it");
  std::string validate_path;
  validate->add_option("--config", validate_path, "Config file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(o);
    if (*sweep) return cmd_sweep(o);
    if (*eval) return cmd_eval(o, checkpoint, held_out);
    if (*gen) return cmd_gen(o);
    if (*validate) return cmd_validate(validate_path);
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
