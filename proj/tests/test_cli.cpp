// Copyright 2026 The naqr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// End-to-end runs of the naqr binary on small simulated datasets.

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <vector>

#include "naqr/io/container.hpp"
#include "naqr/io/csv.hpp"

namespace naqr {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Per process, so that ctest can run the cases in parallel.
const fs::path kRoot = fs::temp_directory_path() / ("naqr_cli_test_" + std::to_string(::getpid()));

struct CmdResult {
  int code = -1;
  std::string out;
  std::string err;
};

CmdResult naqr(const std::string& args) {
  const auto out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = std::string(NAQR_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  CmdResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = io::read_text(out);
  r.err = io::read_text(err);
  return r;
}

fs::path write_config(const std::string& name, const json& j) {
  const auto p = kRoot / name;
  io::write_text(p, j.dump(2));
  return p;
}

std::vector<std::vector<std::string>> rows_of(const fs::path& csv) {
  const auto text = io::read_text(csv);
  std::vector<std::vector<std::string>> rows;
  for (auto line : io::csv_lines(text)) {
    std::vector<std::string> r;
    for (auto f : io::split_fields(line)) r.emplace_back(f);
    rows.push_back(std::move(r));
  }
  return rows;
}

const json kArraySpec = {{"conv_channels", {4, 4, 4}}, {"head_units", {8, 8, 2}}};
const json kShortTraining = {{"cnn_site", {{"max_epochs", 2}}}, {"cnn_array", {{"max_epochs", 2}}}};

json sim_block(std::vector<double> exposures, std::size_t n_images = 300) {
  return {{"geometry", {{"preset", "sparse"}}},
          {"noise", {{"bright_photons_per_ms", 12}}},
          {"n_images", n_images},
          {"exposures_ms", exposures}};
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    const auto sim_cfg = write_config("sim.json", {{"sim", sim_block({10, 20})}, {"out", (kRoot / "sim").string()}});
    sim_run_ = new CmdResult(naqr("simulate --config " + sim_cfg.string()));
    const auto train_cfg = write_config("train.json", {{"data", {{"dir", (kRoot / "sim/exposure_20ms").string()}}},
                                                       {"out", (kRoot / "train").string()},
                                                       {"train", kShortTraining},
                                                       {"cnn_array_spec", kArraySpec}});
    train_run_ = new CmdResult(naqr("train --config " + train_cfg.string()));
  }
  static void TearDownTestSuite() {
    delete sim_run_;
    delete train_run_;
    fs::remove_all(kRoot);
  }

  static json eval_config(const std::string& out) {
    return {{"data", {{"dir", (kRoot / "sim/exposure_20ms").string()}}},
            {"out", (kRoot / out).string()},
            {"evaluate",
             {{"models",
               {{"cnn-site", (kRoot / "train/model_cnn-site.naqm").string()},
                {"cnn-array", (kRoot / "train/model_cnn-array.naqm").string()}}},
              {"latency_samples", 100}}}};
  }

  static CmdResult* sim_run_;
  static CmdResult* train_run_;
};

CmdResult* CliTest::sim_run_ = nullptr;
CmdResult* CliTest::train_run_ = nullptr;

TEST_F(CliTest, SimulateWritesEveryExposure) {
  ASSERT_EQ(sim_run_->code, 0) << sim_run_->err;
  EXPECT_TRUE(fs::exists(kRoot / "sim/sim_config.json"));
  for (const char* d : {"exposure_10ms", "exposure_20ms"}) {
    for (const char* f : {"primary.naqr", "secondary.naqr", "truth.csv"}) {
      EXPECT_TRUE(fs::exists(kRoot / "sim" / d / f)) << d << '/' << f;
    }
  }
  EXPECT_FALSE(fs::exists(kRoot / "sim/.naqr.lock"));
  EXPECT_NE(sim_run_->out.find("separation"), std::string::npos);
}

TEST_F(CliTest, SimulateRerunIsByteIdentical) {
  ASSERT_EQ(sim_run_->code, 0);
  const auto cfg = write_config("sim_again.json",
                                {{"sim", sim_block({10, 20})}, {"out", (kRoot / "sim_again").string()}});
  ASSERT_EQ(naqr("simulate --config " + cfg.string()).code, 0);
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(kRoot / "sim")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), kRoot / "sim");
    EXPECT_EQ(io::read_bytes(e.path()), io::read_bytes(kRoot / "sim_again" / rel)) << rel;
    ++compared;
  }
  EXPECT_EQ(compared, 7u);
}

TEST_F(CliTest, SeedFlagChangesTheData) {
  const auto cfg = write_config("sim_seed.json",
                                {{"sim", sim_block({10}, 20)}, {"out", (kRoot / "sim_seed").string()}});
  ASSERT_EQ(naqr("simulate --config " + cfg.string() + " --seed 99").code, 0);
  EXPECT_NE(io::read_bytes(kRoot / "sim_seed/exposure_10ms/secondary.naqr"),
            io::read_bytes(kRoot / "sim/exposure_10ms/secondary.naqr"));
}

TEST_F(CliTest, InvalidGeometryNamesTheField) {
  json sim = sim_block({10}, 10);
  sim["geometry"]["origin_x"] = 1.0;
  const auto cfg = write_config("bad_geometry.json", {{"sim", sim}, {"out", (kRoot / "bad").string()}});
  const auto r = naqr("simulate --config " + cfg.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("geometry.origin_x"), std::string::npos) << r.err;
}

TEST_F(CliTest, UnknownKeyIsValidationError) {
  const auto cfg = write_config("unknown.json", {{"bogus", 1}});
  const auto r = naqr("simulate --config " + cfg.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bogus"), std::string::npos) << r.err;
}

TEST_F(CliTest, UsageAndIoErrors) {
  EXPECT_EQ(naqr("").code, 2);
  EXPECT_EQ(naqr("frobnicate").code, 2);
  EXPECT_EQ(naqr("simulate --config " + (kRoot / "missing.json").string()).code, 3);
  io::write_text(kRoot / "broken.json", "{\"sim\": ");
  EXPECT_EQ(naqr("simulate --config " + (kRoot / "broken.json").string()).code, 2);
  const auto cfg = write_config("no_data.json", {{"data", {{"dir", (kRoot / "nowhere").string()}}},
                                                 {"labels", "simulator-truth"},
                                                 {"methods", {"gaussian"}},
                                                 {"out", (kRoot / "no_data_out").string()}});
  EXPECT_EQ(naqr("evaluate --config " + cfg.string()).code, 3);
}

TEST_F(CliTest, LockedOutputDirectoryIsRefused) {
  fs::create_directories(kRoot / "locked");
  io::write_text(kRoot / "locked/.naqr.lock", "");
  const auto cfg = write_config("locked.json", {{"sim", sim_block({10}, 10)}, {"out", (kRoot / "locked").string()}});
  const auto r = naqr("simulate --config " + cfg.string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("locked"), std::string::npos);
  EXPECT_FALSE(fs::exists(kRoot / "locked/sim_config.json"));
}

TEST_F(CliTest, TrainWritesModelsAndHistories) {
  ASSERT_EQ(train_run_->code, 0) << train_run_->err;
  for (const char* f : {"splits.csv", "labels.csv", "model_cnn-site.naqm", "model_cnn-array.naqm",
                        "history_cnn-site.csv", "history_cnn-array.csv"}) {
    EXPECT_TRUE(fs::exists(kRoot / "train" / f)) << f;
  }
  for (const char* f : {"history_cnn-site.csv", "history_cnn-array.csv"}) {
    const auto rows = rows_of(kRoot / "train" / f);
    EXPECT_EQ(rows.size(), 3u) << f;  // header + one row per epoch
  }
  const auto labels = io::load_labels(kRoot / "train/labels.csv");
  EXPECT_EQ(labels.provenance, pipeline::Provenance::dual_path);
  EXPECT_EQ(labels.n_images(), 300u);
  EXPECT_EQ(io::load_splits(kRoot / "train/splits.csv").size(), 300u);
  EXPECT_NE(train_run_->out.find("best epoch"), std::string::npos);
}

TEST_F(CliTest, TrainingIsDeterministic) {
  ASSERT_EQ(train_run_->code, 0);
  const auto cfg = write_config("train_again.json", {{"data", {{"dir", (kRoot / "sim/exposure_20ms").string()}}},
                                                     {"out", (kRoot / "train_again").string()},
                                                     {"train", kShortTraining},
                                                     {"cnn_array_spec", kArraySpec}});
  ASSERT_EQ(naqr("train --config " + cfg.string()).code, 0);
  for (const char* f : {"splits.csv", "labels.csv", "model_cnn-site.naqm", "model_cnn-array.naqm",
                        "history_cnn-site.csv", "history_cnn-array.csv"}) {
    EXPECT_EQ(io::read_bytes(kRoot / "train" / f), io::read_bytes(kRoot / "train_again" / f)) << f;
  }
}

TEST_F(CliTest, EvaluateReportShape) {
  ASSERT_EQ(train_run_->code, 0);
  const auto cfg = write_config("eval.json", eval_config("eval"));
  const auto r = naqr("evaluate --config " + cfg.string());
  ASSERT_EQ(r.code, 0) << r.err;

  const auto fid = rows_of(kRoot / "eval/fidelity.csv");
  ASSERT_FALSE(fid.empty());
  EXPECT_EQ(fid[0], (std::vector<std::string>{"method", "exposure_ms", "site", "fidelity", "infidelity",
                                               "eta_vs_gaussian"}));
  std::map<std::string, std::set<std::string>> sites;
  for (std::size_t i = 1; i < fid.size(); ++i) {
    ASSERT_EQ(fid[i].size(), 6u);
    EXPECT_TRUE(sites[fid[i][0]].insert(fid[i][2]).second) << "duplicate row " << fid[i][0] << ' ' << fid[i][2];
    EXPECT_EQ(fid[i][1], "20");
    if (fid[i][0] == "gaussian" && !fid[i][5].empty()) {
      EXPECT_EQ(std::stod(fid[i][5]), 0.0);
    }
  }
  EXPECT_EQ(fid.size(), 1u + 4u * 10u);
  for (const char* m : {"gaussian", "square", "cnn-site", "cnn-array"}) {
    ASSERT_EQ(sites[m].size(), 10u) << m;
    EXPECT_TRUE(sites[m].count("all")) << m;
  }

  for (const char* m : {"gaussian", "square", "cnn-site", "cnn-array"}) {
    const auto cf = rows_of(kRoot / (std::string("eval/crossfid_") + m + ".csv"));
    EXPECT_EQ(cf.size(), 1u + 72u) << m;
  }
  EXPECT_TRUE(fs::exists(kRoot / "eval/histograms.csv"));

  const auto latency = json::parse(io::read_text(kRoot / "eval/latency.json"));
  for (const char* m : {"gaussian", "square", "cnn-site", "cnn-array"}) {
    ASSERT_TRUE(latency.contains(m)) << m;
    EXPECT_EQ(latency[m]["samples"].get<std::size_t>(), 100u);
    EXPECT_GT(latency[m]["mean_us"].get<double>(), 0.0);
  }
  const auto report = json::parse(io::read_text(kRoot / "eval/report.json"));
  EXPECT_EQ(report["eval_split"], "test");
  EXPECT_EQ(report["n_eval_images"], 60);
  EXPECT_TRUE(report.contains("generated_at"));
  // Sparse array at a wide margin: the baselines are essentially perfect.
  EXPECT_GT(report["methods"]["gaussian"]["fidelity"].get<double>(), 0.99);
}

TEST_F(CliTest, EvaluateOutputIsDeterministicApartFromTimings) {
  ASSERT_EQ(train_run_->code, 0);
  const auto a = write_config("eval_a.json", eval_config("eval_a"));
  const auto b = write_config("eval_b.json", eval_config("eval_b"));
  ASSERT_EQ(naqr("evaluate --config " + a.string()).code, 0);
  ASSERT_EQ(naqr("evaluate --config " + b.string()).code, 0);
  for (const auto& e : fs::directory_iterator(kRoot / "eval_a")) {
    const auto name = e.path().filename().string();
    if (name == "latency.json") continue;
    if (name == "report.json") {
      auto ja = json::parse(io::read_text(e.path()));
      auto jb = json::parse(io::read_text(kRoot / "eval_b" / name));
      ja.erase("generated_at");
      jb.erase("generated_at");
      EXPECT_EQ(ja, jb);
      continue;
    }
    EXPECT_EQ(io::read_bytes(e.path()), io::read_bytes(kRoot / "eval_b" / name)) << name;
  }
}

TEST_F(CliTest, EvaluateRefusesNonTestSplitWithoutOverride) {
  ASSERT_EQ(train_run_->code, 0);
  auto j = eval_config("eval_train");
  j["evaluate"]["split"] = "train";
  const auto cfg = write_config("eval_train.json", j);
  const auto r = naqr("evaluate --config " + cfg.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--allow-nontest-eval"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(kRoot / "eval_train/fidelity.csv"));
  const auto ok = naqr("evaluate --allow-nontest-eval --config " + cfg.string());
  ASSERT_EQ(ok.code, 0) << ok.err;
  const auto report = json::parse(io::read_text(kRoot / "eval_train/report.json"));
  EXPECT_EQ(report["eval_split"], "train");
}

TEST_F(CliTest, EvaluateNeedsModelsForCnnMethods) {
  auto j = eval_config("eval_nomodel");
  j["evaluate"].erase("models");
  const auto cfg = write_config("eval_nomodel.json", j);
  EXPECT_EQ(naqr("evaluate --config " + cfg.string()).code, 2);
}

TEST_F(CliTest, SweepHasOneRowPerMethodAndExposure) {
  const auto cfg = write_config("sweep.json", {{"sim", sim_block({5, 10, 20}, 300)},
                                               {"labels", "simulator-truth"},
                                               {"methods", {"gaussian", "square", "cnn-site"}},
                                               {"train", kShortTraining},
                                               {"out", (kRoot / "sweep").string()}});
  const auto r = naqr("sweep --config " + cfg.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = rows_of(kRoot / "sweep/sweep.csv");
  ASSERT_EQ(rows.size(), 1u + 3u * 3u);
  std::set<std::pair<std::string, std::string>> keys;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_TRUE(keys.emplace(rows[i][0], rows[i][1]).second);
    if (rows[i][0] == "gaussian" && !rows[i][3].empty()) {
      EXPECT_EQ(std::stod(rows[i][3]), 0.0);
    }
  }
  const auto summary = json::parse(io::read_text(kRoot / "sweep/sweep_summary.json"));
  EXPECT_TRUE(summary["methods"].contains("square"));
  EXPECT_TRUE(summary["methods"].contains("cnn-site"));
  EXPECT_FALSE(summary["methods"].contains("gaussian"));
}

TEST_F(CliTest, SweepRecordsFailedPointsAndContinues) {
  const auto cfg = write_config("sweep_dirs.json",
                                {{"sweep", {{"dirs", {(kRoot / "nowhere").string(),
                                                      (kRoot / "sim/exposure_20ms").string()}}}},
                                 {"labels", "simulator-truth"},
                                 {"methods", {"gaussian", "square"}},
                                 {"out", (kRoot / "sweep_dirs").string()}});
  const auto r = naqr("sweep --config " + cfg.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = rows_of(kRoot / "sweep_dirs/sweep.csv");
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[1][4].rfind("failed", 0), 0u);
  EXPECT_EQ(rows[3][4], "ok");
  EXPECT_EQ(rows[3][1], "20");
}

}  // namespace
}  // namespace naqr
