// Copyright 2026 The DecomposeWHAR Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dwhar/cli.hpp"

namespace fs = std::filesystem;
using dwhar::cli::run;
using Json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json(const fs::path& p) { return Json::parse(slurp(p)); }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("dwhar_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    small_ = root_ / "small.json";
    std::ofstream(small_) << Json{{"synth.n_classes", 3},
                                  {"synth.n_subjects", 2},
                                  {"synth.windows_per_class", 4},
                                  {"synth.n_sensors", 2},
                                  {"synth.n_vars", 3},
                                  {"model.d_model", 4},
                                  {"model.heads", 2},
                                  {"model.d_state", 2},
                                  {"train.epochs", 2},
                                  {"train.batch_size", 8}}
                                 .dump();
  }

  int call(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    return run(std::move(args), out_, err_);
  }

  std::string data_dir() {
    const fs::path d = root_ / "data";
    if (!fs::exists(d / "manifest.json")) {
      EXPECT_EQ(call({"synth", "--config", small_.string(), "--out", d.string()}), 0) << err_.str();
    }
    return (d / "manifest.json").string();
  }

  fs::path root_, small_;
  std::ostringstream out_, err_;
};

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(call({}), 2);
  EXPECT_EQ(call({"train", "--bogus"}), 2);
  EXPECT_EQ(call({"train", "--split", "random"}), 2);
  EXPECT_EQ(call({"--help"}), 0);
  EXPECT_NE(out_.str().find("export-attention"), std::string::npos);
}

TEST_F(Cli, ConfigErrors) {
  const fs::path bad = root_ / "bad.json";
  std::ofstream(bad) << R"({"model.d_modle": 3})";
  EXPECT_EQ(call({"train", "--config", bad.string()}), 3);
  std::ofstream(bad, std::ios::trunc) << R"({"model.d_model": "wide"})";
  EXPECT_EQ(call({"train", "--config", bad.string()}), 3);
  std::ofstream(bad, std::ios::trunc) << R"({"model.lte_kernel": 2})";
  EXPECT_EQ(call({"bench", "--config", bad.string(), "--out", (root_ / "b").string()}), 3);
  EXPECT_EQ(call({"train", "--config", (root_ / "absent.json").string()}), 5);
}

TEST_F(Cli, DataErrors) {
  const fs::path m = root_ / "manifest.json";
  std::ofstream(m) << R"({"classes": ["a", "b"], "recordings": [{"subject_id": "s", "path": "missing.csv", "sample_rate_hz": 30, "n_sensors": 1, "n_vars": 1}]})";
  EXPECT_EQ(call({"train", "--manifest", m.string(), "--out", (root_ / "t").string()}), 5) << err_.str();
  std::ofstream(m, std::ios::trunc) << R"({"classes": ["a", "b"], "recordings": []})";
  EXPECT_EQ(call({"train", "--manifest", m.string(), "--out", (root_ / "t").string()}), 4) << err_.str();
  std::ofstream(root_ / "bad.csv") << "timestamp,label,s0_v0\n0,0,zero\n";
  std::ofstream(m, std::ios::trunc) << R"({"classes": ["a", "b"], "recordings": [{"subject_id": "s", "path": "bad.csv", "sample_rate_hz": 30, "n_sensors": 1, "n_vars": 1}]})";
  EXPECT_EQ(call({"train", "--manifest", m.string(), "--out", (root_ / "t").string()}), 4) << err_.str();
  EXPECT_NE(err_.str().find("bad.csv:2"), std::string::npos) << err_.str();
  std::ofstream(m, std::ios::trunc) << "{ not json";
  EXPECT_EQ(call({"train", "--manifest", m.string(), "--out", (root_ / "t").string()}), 4);
}

TEST_F(Cli, GradcheckPasses) {
  EXPECT_EQ(call({"gradcheck", "--out", (root_ / "g").string()}), 0) << err_.str();
  const Json g = read_json(root_ / "g" / "gradcheck.json");
  EXPECT_LT(g.at("max_rel_error").get<double>(), 1e-4);
}

TEST_F(Cli, BenchReportsBudget) {
  ASSERT_EQ(call({"bench", "--repeats", "1", "--out", (root_ / "b").string()}), 0) << err_.str();
  const Json b = read_json(root_ / "b" / "bench.json");
  EXPECT_TRUE(b.at("flops_under_600M").get<bool>());
  EXPECT_LT(b.at("flops_per_window").get<std::int64_t>(), 600'000'000);
  EXPECT_GT(b.at("param_count").get<std::int64_t>(), 0);
}

TEST_F(Cli, TrainIsBitwiseReproducible) {
  const std::string manifest = data_dir();
  const fs::path a = root_ / "a", b = root_ / "b";
  for (const auto& d : {a, b}) {
    ASSERT_EQ(call({"train", "--config", small_.string(), "--manifest", manifest, "--out", d.string(),
                    "--seed", "5"}),
              0)
        << err_.str();
  }
  EXPECT_EQ(slurp(a / "train_log.jsonl"), slurp(b / "train_log.jsonl"));
  EXPECT_EQ(slurp(a / "metrics.json"), slurp(b / "metrics.json"));
  EXPECT_EQ(slurp(a / "model.bin"), slurp(b / "model.bin"));
  const Json m = read_json(a / "metrics.json");
  EXPECT_EQ(m.at("split"), "loso");
  EXPECT_EQ(m.at("runs").size(), 2u);  // one run per held-out subject

  // The resolved config alone reproduces the run.
  const fs::path c = root_ / "c";
  Json resolved = read_json(a / "config.json");
  resolved["out"] = c.string();
  std::ofstream(root_ / "resolved.json") << resolved.dump();
  ASSERT_EQ(call({"train", "--config", (root_ / "resolved.json").string()}), 0) << err_.str();
  EXPECT_EQ(slurp(a / "metrics.json"), slurp(c / "metrics.json"));
}

TEST_F(Cli, WorkerCountDoesNotChangeResults) {
  const std::string manifest = data_dir();
  ASSERT_EQ(call({"train", "--config", small_.string(), "--manifest", manifest, "--out",
                  (root_ / "w1").string(), "--workers", "1"}),
            0);
  ASSERT_EQ(call({"train", "--config", small_.string(), "--manifest", manifest, "--out",
                  (root_ / "w3").string(), "--workers", "3"}),
            0);
  EXPECT_EQ(slurp(root_ / "w1" / "metrics.json"), slurp(root_ / "w3" / "metrics.json"));
}

TEST_F(Cli, HoldoutWithRepetitions) {
  const std::string manifest = data_dir();
  ASSERT_EQ(call({"train", "--config", small_.string(), "--manifest", manifest, "--out",
                  (root_ / "h").string(), "--split", "holdout", "--reps", "2"}),
            0)
      << err_.str();
  const Json m = read_json(root_ / "h" / "metrics.json");
  ASSERT_EQ(m.at("runs").size(), 2u);
  EXPECT_EQ(m.at("runs")[1].at("seed"), 1);
  EXPECT_TRUE(fs::exists(root_ / "h" / "timing.json"));
}

TEST_F(Cli, EvalAndExportLeaveModelUntouched) {
  const std::string manifest = data_dir();
  const fs::path t = root_ / "t";
  ASSERT_EQ(call({"train", "--config", small_.string(), "--manifest", manifest, "--out", t.string()}), 0)
      << err_.str();
  const std::string before = slurp(t / "model.bin");
  const fs::path e = root_ / "e";
  ASSERT_EQ(call({"eval", "--config", small_.string(), "--manifest", manifest, "--out", e.string(),
                  "--model", (t / "model.bin").string()}),
            0)
      << err_.str();
  EXPECT_EQ(slurp(t / "model.bin"), before);
  const Json em = read_json(e / "eval_metrics.json");
  // eval scores the first fold's held-out subject, as train's first run did
  EXPECT_EQ(em.at("accuracy"), read_json(t / "metrics.json").at("runs")[0].at("accuracy"));

  const fs::path x = root_ / "x";
  ASSERT_EQ(call({"export-attention", "--config", small_.string(), "--manifest", manifest, "--out",
                  x.string(), "--model", (t / "model.bin").string()}),
            0)
      << err_.str();
  EXPECT_TRUE(fs::exists(x / "head_0.csv"));
  EXPECT_TRUE(fs::exists(x / "head_1.csv"));
  EXPECT_TRUE(fs::exists(x / "mean.csv"));
  EXPECT_EQ(slurp(t / "model.bin"), before);

  EXPECT_EQ(call({"export-attention", "--config", small_.string(), "--manifest", manifest, "--out",
                  x.string(), "--model", (t / "model.bin").string(), "--no-csi"}),
            3);
  // architecture mismatch with the saved model
  EXPECT_EQ(call({"eval", "--config", small_.string(), "--manifest", manifest, "--out", e.string(),
                  "--model", (t / "model.bin").string(), "--no-gta"}),
            3);
}
