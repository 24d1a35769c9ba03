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
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "sskd/config.hpp"
#include "sskd/experiment.hpp"

using namespace sskd;
using nlohmann::json;

namespace {

std::string config_error(const json& j) {
  try {
    experiment_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

// Two small domains and a small pool: a full run takes well under a second.
json tiny() {
  auto domain = [](const char* id, int k) {
    return json{{"domain_id", id},
                {"n_identities", 8},
                {"images_per_identity", 5},
                {"n_cameras", 2},
                {"shift", {{"rotation_seed", 10 + k}, {"rotation_strength", 0.05},
                           {"noise_sigma", 0.3}}}};
  };
  return {{"benchmark",
           {{"world", {{"input_dim", 8}, {"identity_dim", 4}}},
            {"domains", {domain("a", 0), domain("b", 1)}},
            {"pool", domain("p", 2)}}},
          {"student", {{"hidden_dims", {8}}, {"embed_dim", 4}}},
          {"teacher", {{"hidden_dims", {16}}, {"embed_dim", 4}}},
          {"batch", {{"p_identities", 4}, {"k_per_identity", 2}, {"unlabeled_per_step", 6}}},
          {"schedule", {{"total_epochs", 2}, {"iters_per_epoch", 3}}},
          {"seeds", {1, 2}}};
}

}  // namespace

TEST(Config, DefaultsValidateAndRoundTrip) {
  const ExperimentConfig d = experiment_from_json(json::object());
  EXPECT_EQ(experiment_to_json(d), experiment_to_json(default_experiment()));
  EXPECT_EQ(d.train.temps.tau_kd, 16.0);
  EXPECT_EQ(d.train.temps.tau_kd_u, 6.0);
  EXPECT_EQ(d.train.batch.p_identities, 64u);
  EXPECT_EQ(d.benchmark.domains.size(), 4u);
  const ExperimentConfig again = experiment_from_json(experiment_to_json(d));
  EXPECT_EQ(experiment_to_json(again).dump(), experiment_to_json(d).dump());
  const ExperimentConfig t = experiment_from_json(tiny());
  EXPECT_EQ(experiment_to_json(experiment_from_json(experiment_to_json(t))),
            experiment_to_json(t));
}

TEST(Config, RejectsInvalidValuesWithPointers) {
  json j = tiny();
  j["temperatures"] = {{"tau_kd_u", -1}};
  const std::string e = config_error(j);
  EXPECT_NE(e.find("/temperatures/tau_kd_u"), std::string::npos) << e;
  EXPECT_NE(e.find("positive"), std::string::npos) << e;

  j = tiny();
  j["batch"]["p_identities"] = 17;
  EXPECT_NE(config_error(j).find("/batch/p_identities"), std::string::npos);

  j = tiny();
  j["student"]["hidden_dims"] = json::array();
  EXPECT_NE(config_error(j), "");

  j = tiny();
  j["schedule"]["final_lr"] = 1.0;
  EXPECT_NE(config_error(j), "");

  j = tiny();
  j["method"] = "magic";
  EXPECT_NE(config_error(j).find("/method"), std::string::npos);

  j = tiny();
  j["unlabeled_fraction"] = 1.5;
  EXPECT_NE(config_error(j), "");

  j = tiny();
  j["protocol"] = {{"mode", "fixed_split"}, {"held_out", "zulu"}};
  EXPECT_NE(config_error(j).find("/protocol"), std::string::npos);
}

TEST(Config, RejectsUnknownFields) {
  json j = tiny();
  j["batch"]["p_identites"] = 4;
  const std::string e = config_error(j);
  EXPECT_NE(e.find("p_identites"), std::string::npos) << e;
  j = tiny();
  j["colour"] = 1;
  EXPECT_NE(config_error(j), "");
}

TEST(Config, SskdNeedsPoolAndUnlabeledBatch) {
  json j = tiny();
  j["benchmark"]["pool"] = nullptr;
  EXPECT_NE(config_error(j).find("pool"), std::string::npos);
  j["method"] = "kd";
  EXPECT_EQ(config_error(j), "");
  j = tiny();
  j["batch"]["unlabeled_per_step"] = 0;
  EXPECT_NE(config_error(j).find("unlabeled_per_step"), std::string::npos);
}

TEST(Config, ParseErrorsCarryLineAndColumn) {
  const auto path = std::filesystem::temp_directory_path() / "sskd_bad_config.json";
  {
    std::ofstream(path) << "{\n  \"seeds\": [1,\n  ]\n}\n";
  }
  try {
    load_experiment(path);
    FAIL() << "expected a ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(path.string() + ":3:"), std::string::npos)
        << e.what();
  }
  std::filesystem::remove(path);
  EXPECT_THROW(load_experiment(path), IoError);
}

TEST(Sweep, ValidationAndPoints) {
  json s = {{"axis", "tau_kd_u"}, {"values", {2, 6}}, {"base", tiny()}};
  const SweepConfig ok = sweep_from_json(s);
  ASSERT_EQ(ok.size(), 2u);
  EXPECT_EQ(ok.point(1).train.temps.tau_kd_u, 6.0);
  EXPECT_EQ(ok.label(0), "2.0");

  s["values"] = {2, -1};
  EXPECT_THROW(sweep_from_json(s), ConfigError);
  s["values"] = json::array();
  EXPECT_THROW(sweep_from_json(s), ConfigError);
  s = {{"axis", "unlabeled_fraction"}, {"values", {0, 2}}, {"base", tiny()}};
  EXPECT_THROW(sweep_from_json(s), ConfigError);
  s = {{"axis", "width"}, {"values", {1}}, {"base", tiny()}};
  EXPECT_THROW(sweep_from_json(s), ConfigError);

  json base = tiny();
  base["method"] = "kd";
  s = {{"axis", "tau_kd_u"}, {"values", {2}}, {"base", base}};
  EXPECT_THROW(sweep_from_json(s), ConfigError);
  s = {{"axis", "teacher_capacity"}, {"values", {{8}, {16, 16}}}, {"base", base}};
  const SweepConfig cap = sweep_from_json(s);
  EXPECT_EQ(cap.point(1).teacher.hidden_dims, (std::vector<std::size_t>{16, 16}));
  EXPECT_EQ(cap.label(1), "16x16");
  base["method"] = "baseline";
  s["base"] = base;
  EXPECT_THROW(sweep_from_json(s), ConfigError);
  s["values"] = {{8, 0}};
  EXPECT_THROW(sweep_from_json(s), ConfigError);
}

TEST(Sweep, BaseMayBeAPathRelativeToTheSweepFile) {
  const auto dir = std::filesystem::temp_directory_path() / "sskd_sweep_cfg";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "base.json") << tiny().dump();
    std::ofstream(dir / "sweep.json")
        << json{{"axis", "unlabeled_fraction"}, {"values", {0, 1}}, {"base", "base.json"}}.dump();
  }
  EXPECT_TRUE(is_sweep_document(read_json_file(dir / "sweep.json")));
  EXPECT_FALSE(is_sweep_document(read_json_file(dir / "base.json")));
  const SweepConfig s = load_sweep(dir / "sweep.json");
  EXPECT_EQ(s.point(0).unlabeled_fraction, 0.0);
  EXPECT_EQ(s.base.seeds, (std::vector<std::uint64_t>{1, 2}));
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Running experiments.
// ---------------------------------------------------------------------------

TEST(Runner, ReportsAreDeterministic) {
  const ExperimentConfig cfg = experiment_from_json(tiny());
  Runner a, b(RunOptions{{}, false, true, {}});
  const json ra = report_to_json(a.run(cfg)), rb = report_to_json(b.run(cfg));
  EXPECT_EQ(ra.dump(), rb.dump());
  EXPECT_EQ(ra["format"], "sskd-report");
  EXPECT_EQ(ra["folds"].size(), 4u);  // 2 seeds × 2 folds
  EXPECT_EQ(ra["config_sha256"], sha256_hex(experiment_to_json(cfg).dump()));
  EXPECT_TRUE(ra.contains("teacher_summary"));
  EXPECT_FALSE(a.epoch_log().empty());
}

TEST(Runner, BaselineReportHasNoDistillationTerms) {
  json j = tiny();
  j["method"] = "baseline";
  Runner r;
  const RunReport rep = r.run(experiment_from_json(j));
  const json doc = report_to_json(rep);
  EXPECT_FALSE(doc.contains("teacher_summary"));
  for (const json& line : r.epoch_log()) {
    EXPECT_FALSE(line.contains("kd"));
    EXPECT_FALSE(line.contains("kd_u"));
  }
  for (const FoldOutcome& f : rep.folds) EXPECT_FALSE(f.teacher.has_value());
}

TEST(Runner, SingleValueSweepEqualsPlainRun) {
  json base = tiny();
  const SweepConfig s =
      sweep_from_json({{"axis", "tau_kd_u"}, {"values", {6}}, {"base", base}});
  Runner r1, r2;
  const SweepReport sw = run_sweep(s, r1);
  ASSERT_EQ(sw.points.size(), 1u);
  const RunReport plain = r2.run(experiment_from_json(base));
  EXPECT_EQ(report_to_json(sw.points[0]).dump(), report_to_json(plain).dump());
  const std::string csv = sweep_csv(sw);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "tau_kd_u,rank1_mean,rank1_std,mAP_mean,mAP_std,teacher_rank1_mean");
}

TEST(Runner, FractionZeroIsKdAndParallelRunsMatch) {
  json j = tiny();
  j["unlabeled_fraction"] = 0.0;
  json k = tiny();
  k["method"] = "kd";
  Runner r1, r2;
  const RunReport zero = r1.run(experiment_from_json(j));
  const RunReport kd = r2.run(experiment_from_json(k));
  ASSERT_EQ(zero.folds.size(), kd.folds.size());
  for (std::size_t i = 0; i < kd.folds.size(); ++i) {
    EXPECT_EQ(zero.folds[i].student.rank1, kd.folds[i].student.rank1);
    EXPECT_EQ(zero.folds[i].student.mean_ap, kd.folds[i].student.mean_ap);
  }
  j["jobs"] = 3;
  j["unlabeled_fraction"] = 1.0;
  Runner par, ser;
  json serial = j;
  serial["jobs"] = 1;
  EXPECT_EQ(report_to_json(par.run(experiment_from_json(j)))["folds"],
            report_to_json(ser.run(experiment_from_json(serial)))["folds"]);
}

TEST(Config, ShippedConfigsValidate) {
  const std::filesystem::path dir = std::filesystem::path(SSKD_SOURCE_DIR) / "configs";
  EXPECT_EQ(experiment_to_json(load_experiment(dir / "default.json")),
            experiment_to_json(default_experiment()));
  EXPECT_EQ(load_experiment(dir / "baseline.json").method, Method::baseline);
  EXPECT_EQ(load_experiment(dir / "kd.json").method, Method::kd);
  EXPECT_EQ(load_sweep(dir / "sweep_tau_kd_u.json").size(), 16u);
  EXPECT_EQ(load_sweep(dir / "sweep_unlabeled_fraction.json").size(), 5u);
  EXPECT_EQ(load_sweep(dir / "sweep_teacher_capacity.json").size(), 3u);
}
