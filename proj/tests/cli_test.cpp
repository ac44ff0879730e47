// Copyright 2026 The HybridSeg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "hybridseg/cli.hpp"
#include "hybridseg/config.hpp"
#include "hybridseg/io.hpp"
#include "test_support.hpp"

namespace hybridseg {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hybridseg");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("hybridseg_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string path(const std::string& name) const { return (root_ / name).string(); }

  std::string small_data(int scenes = 2) {
    const auto dir = path("data");
    const auto r = cli({"gen-data", "--scenes", std::to_string(scenes), "--seed", "3", "--points", "200", "--out", dir});
    EXPECT_EQ(r.code, 0) << r.err;
    return dir;
  }

  std::string small_config(const std::string& data, std::int64_t classes = 8) {
    RunConfig cfg;
    cfg.model = testing::tiny_network(3, classes);
    cfg.train.epochs = 1;
    cfg.data.train_dir = data;
    cfg.data.cell_size = 0.2;
    cfg.output.checkpoint = path("model.htm");
    cfg.output.log = path("log.csv");
    save_run_config(path("run.json"), cfg);
    return path("run.json");
  }

  fs::path root_;
};

std::string read_text(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

TEST_F(CliTest, GenDataIsDeterministicAndRefusesOverwrite) {
  auto r = cli({"gen-data", "--scenes", "3", "--seed", "1", "--out", path("a")});
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli({"gen-data", "--scenes", "3", "--seed", "1", "--out", path("b")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto files = scene_files(path("a"));
  ASSERT_EQ(files.size(), 3u);
  for (const auto& f : files) {
    EXPECT_EQ(read_file_bytes(f), read_file_bytes(fs::path(path("b")) / f.filename()));
    EXPECT_EQ(read_point_cloud(f).size(), 2048);
  }
  const auto before = fs::last_write_time(files[0]);
  r = cli({"gen-data", "--scenes", "3", "--seed", "2", "--out", path("a")});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(fs::last_write_time(files[0]), before);
  EXPECT_EQ(read_file_bytes(files[0]), read_file_bytes(fs::path(path("b")) / files[0].filename()));
  r = cli({"gen-data", "--scenes", "3", "--seed", "2", "--out", path("a"), "--force"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(read_file_bytes(files[0]), read_file_bytes(fs::path(path("b")) / files[0].filename()));
}

TEST_F(CliTest, GenDataPointsAndTextFormat) {
  auto r = cli({"gen-data", "--scenes", "2", "--points", "333", "--text", "--out", path("t")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto files = scene_files(path("t"));
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files[0].extension(), ".txt");
  EXPECT_EQ(read_point_cloud(files[1]).size(), 333);
  EXPECT_EQ(cli({"gen-data", "--scenes", "2"}).code, 2);
  EXPECT_EQ(cli({"gen-data", "--scenes", "0", "--out", path("z")}).code, 2);
}

TEST_F(CliTest, TrainWithMissingDataFails) {
  const auto cfg = small_config(path("nowhere"));
  const auto r = cli({"train", "--config", cfg});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nowhere"), std::string::npos);
}

TEST_F(CliTest, TrainWithInvalidConfigNamesField) {
  std::ofstream(path("bad.json")) << R"({"model": {"encoder_channels": [32, 64, 128, 256, 0]}})";
  auto r = cli({"train", "--config", path("bad.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("model.encoder_channels[4]"), std::string::npos) << r.err;
  std::ofstream(path("unknown.json")) << R"({"train": {"lr": 1}})";
  r = cli({"train", "--config", path("unknown.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("train.lr"), std::string::npos) << r.err;
  EXPECT_EQ(cli({"train", "--preset", "tiny", "--strategy", "sideways"}).code, 2);
}

TEST_F(CliTest, TrainThenEvaluate) {
  const auto data = small_data();
  const auto cfg = small_config(data);
  auto r = cli({"train", "--config", cfg, "--strategy", "outer_mamba_first"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("final val mIoU"), std::string::npos);
  EXPECT_NE(r.out.find("outer_mamba_first"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("model.htm")));
  EXPECT_TRUE(fs::exists(path("model.htm.config.json")));
  EXPECT_EQ(read_text(path("log.csv")).substr(0, 8), "epoch,st");

  r = cli({"eval", "--checkpoint", path("model.htm"), "--data", data, "--dump-predictions", path("pred")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto pos = r.out.find("mIoU ");
  ASSERT_NE(pos, std::string::npos);
  const double value = std::stod(r.out.substr(pos + 5));
  EXPECT_GE(value, 0.0);
  EXPECT_LE(value, 100.0);
  EXPECT_EQ(r.out.substr(0, 10), "class,iou\n");

  // Predictions read back as ground truth agree with themselves everywhere.
  r = cli({"eval", "--checkpoint", path("model.htm"), "--data", path("pred")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("mIoU 100.00"), std::string::npos) << r.out;
  EXPECT_EQ(scene_files(path("pred")).size(), 2u);
}

TEST_F(CliTest, EvalClassMismatch) {
  const auto data = small_data(1);
  ASSERT_EQ(cli({"train", "--config", small_config(data)}).code, 0);
  // A model with fewer classes than the data uses.
  RunConfig narrow = load_run_config(path("run.json"));
  narrow.model.num_classes = 3;
  save_run_config(path("narrow.json"), narrow);
  write_checkpoint(path("narrow.htm"), init_parameters(narrow.model, 1));
  auto r = cli({"eval", "--checkpoint", path("narrow.htm"), "--data", data, "--config", path("narrow.json")});
  EXPECT_EQ(r.code, 3) << r.err;
  // A checkpoint whose head does not match its config.
  r = cli({"eval", "--checkpoint", path("model.htm"), "--data", data, "--config", path("narrow.json")});
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_EQ(cli({"train", "--config", path("narrow.json")}).code, 3);
}

TEST_F(CliTest, EvalWithoutCheckpoint) {
  const auto data = small_data(1);
  EXPECT_EQ(cli({"eval", "--checkpoint", path("none.htm"), "--data", data}).code, 2);
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream l(line);
    std::string cell;
    while (std::getline(l, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

TEST_F(CliTest, InspectSingleVoxel) {
  PointCloud one;
  one.feature_dim = 1;
  one.positions = {{0.01, 0.02, 0.03}, {0.02, 0.01, 0.04}};
  one.features = {0.0, 1.0};
  one.labels = {0, 0};
  write_point_cloud(path("one.pcs"), one);
  const auto r = cli({"inspect-serialization", "--data", path("one.pcs")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = csv_rows(r.out);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"index", "x", "y", "z", "key", "rank"}));
  EXPECT_EQ(rows[1].back(), "0");
}

TEST_F(CliTest, InspectRanksArePermutation) {
  const auto data = small_data(1);
  for (const char* curve : {"hilbert", "z_order"}) {
    const auto r = cli({"inspect-serialization", "--data", scene_files(data)[0].string(), "--curve", curve, "--out",
                        path(std::string(curve) + ".csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("mean adjacent distance"), std::string::npos);
    const auto rows = csv_rows(read_text(path(std::string(curve) + ".csv")));
    std::set<long> ranks;
    std::vector<std::pair<unsigned long long, long>> by_rank;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      ranks.insert(std::stol(rows[i][5]));
      by_rank.emplace_back(std::stoull(rows[i][4]), std::stol(rows[i][5]));
    }
    const auto v = static_cast<long>(rows.size() - 1);
    ASSERT_GT(v, 1);
    EXPECT_EQ(static_cast<long>(ranks.size()), v);
    EXPECT_EQ(*ranks.begin(), 0);
    EXPECT_EQ(*ranks.rbegin(), v - 1);
    std::sort(by_rank.begin(), by_rank.end(), [](auto a, auto b) { return a.second < b.second; });
    for (std::size_t i = 1; i < by_rank.size(); ++i) EXPECT_LE(by_rank[i - 1].first, by_rank[i].first);
  }
  EXPECT_EQ(cli({"inspect-serialization", "--data", path("missing.pcs")}).code, 2);
  EXPECT_EQ(cli({"inspect-serialization", "--data", scene_files(data)[0].string(), "--curve", "peano"}).code, 2);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"fly"}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, SceneSeedsDiffer) {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < 100; ++i) seeds.insert(scene_seed(1, i));
  EXPECT_EQ(seeds.size(), 100u);
  EXPECT_EQ(scene_seed(1, 5), scene_seed(1, 5));
}

}  // namespace
}  // namespace hybridseg
