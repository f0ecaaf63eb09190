#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "egonet/dataset_io.hpp"
#include "egonet/kitti_io.hpp"

#ifndef EGONET_CLI_PATH
#error "EGONET_CLI_PATH must name the command-line binary"
#endif

using namespace egonet;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("egonet_cli_" + std::to_string(::getpid()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  int run(const std::string& args) const {
    const std::string cmd = "EGONET_LOG=quiet " + std::string(EGONET_CLI_PATH) + " " + args + " >" +
                            (root_ / "stdout.txt").string() + " 2>" + (root_ / "stderr.txt").string();
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }
  std::string p(const std::string& name) const { return (root_ / name).string(); }

  fs::path root_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void expect_same_tree(const fs::path& a, const fs::path& b, const std::set<std::string>& skip = {}) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    if (skip.count(rel.string())) continue;
    ASSERT_TRUE(fs::exists(b / rel)) << rel;
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++n;
  }
  EXPECT_GT(n, 0u);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cols;
  std::stringstream ss(line);
  for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
  return cols;
}

std::map<std::string, double> read_metrics(const fs::path& csv) {
  std::map<std::string, double> out;
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto c = line.find(',');
    out[line.substr(0, c)] = std::stod(line.substr(c + 1));
  }
  return out;
}

}  // namespace

TEST_F(Cli, GenIsByteDeterministic) {
  ASSERT_EQ(run("gen --seed 7 --pairs 1000 --unlabeled 50 --heldout 5 --out " + p("a")), 0);
  ASSERT_EQ(run("gen --seed 7 --pairs 1000 --unlabeled 50 --heldout 5 --out " + p("b")), 0);
  expect_same_tree(p("a"), p("b"));
  EXPECT_EQ(read_manifest(p("a")).count("labeled"), 1000u);
  ASSERT_EQ(run("gen --seed 8 --pairs 1000 --out " + p("c")), 0);
  EXPECT_NE(slurp(p("a") + "/labeled-00000.jsonl.gz"), slurp(p("c") + "/labeled-00000.jsonl.gz"));
}

TEST_F(Cli, GenAugmentHundredfold) {
  ASSERT_EQ(run("gen --seed 3 --pairs 1000 --augment 100 --out " + p("d")), 0);
  const auto m = read_manifest(p("d"));
  const std::size_t n = m.count("labeled");
  EXPECT_GE(n, 99000u);
  EXPECT_LE(n, 100000u);
  EXPECT_EQ(m.shards("labeled").size(), (n + 19999) / 20000);
  EXPECT_EQ(read_shard(fs::path(p("d")) / m.shards("labeled").back()).size(), n - 20000 * (m.shards("labeled").size() - 1));
}

TEST_F(Cli, InvalidSpecLeavesNoOutput) {
  std::ofstream(p("bad.toml")) << "[gen.labeled_spec]\ndepth = [30.0, 10.0]\n";
  EXPECT_EQ(run("gen --config " + p("bad.toml") + " --out " + p("out")), 1);
  EXPECT_FALSE(fs::exists(p("out")));
  EXPECT_FALSE(fs::exists(p("out.tmp")));
  EXPECT_NE(slurp(p("stderr.txt")).find("range"), std::string::npos);
  std::ofstream(p("typo.toml")) << "[gen]\naugmnet = 3\n";
  EXPECT_EQ(run("gen --config " + p("typo.toml") + " --out " + p("out")), 1);
  EXPECT_FALSE(fs::exists(p("out")));
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("gen --out " + p("g") + " --bogus"), 1);
  EXPECT_EQ(run("gen"), 1);
  EXPECT_EQ(run("train --out " + p("t") + " --data " + p("missing")), 1);
  ASSERT_EQ(run("gen --images 2 --out " + p("g")), 0);
  EXPECT_EQ(run("gen --images 2 --out " + p("g")), 1);
  EXPECT_EQ(run("gen --images 3 --out " + p("g") + " --force"), 0);
  EXPECT_EQ(run("eval --out " + p("e") + " --data " + p("g")), 1);
}

TEST_F(Cli, TrainIsDeterministicAndResumes) {
  ASSERT_EQ(run("gen --seed 2 --images 30 --augment 2 --unlabeled 40 --heldout 6 --out " + p("data")), 0);
  const std::string common = " --seed 2 --hidden 32 --data " + p("data");
  ASSERT_EQ(run("train --epochs 3 --out " + p("t1") + common), 0);
  ASSERT_EQ(run("train --epochs 3 --out " + p("t2") + common), 0);
  expect_same_tree(p("t1"), p("t2"));

  std::istringstream csv(slurp(p("t1") + "/losses.csv"));
  std::string header, row1, row2, row3;
  std::getline(csv, header);
  std::getline(csv, row1);
  std::getline(csv, row2);
  std::getline(csv, row3);
  EXPECT_EQ(header, "epoch,L_2d,L_3d,L_cr,L_total");
  ASSERT_EQ(split_csv(row1).size(), 5u);
  EXPECT_EQ(std::stod(split_csv(row1)[3]), 0.0);
  EXPECT_GT(std::stod(split_csv(row2)[3]), 0.0);

  ASSERT_EQ(run("train --epochs 1 --out " + p("h") + common), 0);
  ASSERT_EQ(run("train --epochs 3 --resume " + p("h") + "/model.ckpt --out " + p("r") + common), 0);
  EXPECT_EQ(slurp(p("r") + "/losses.csv"), header + "\n" + row2 + "\n" + row3 + "\n");
  EXPECT_EQ(slurp(p("r") + "/model.ckpt"), slurp(p("t1") + "/model.ckpt"));
  EXPECT_EQ(run("train --epochs 3 --hidden 64 --resume " + p("h") + "/model.ckpt --out " + p("x") + " --data " + p("data")), 1);

  ASSERT_EQ(run("eval --seed 2 --noise 1 --model " + p("t1") + "/model.ckpt --data " + p("data") + " --out " + p("e1")), 0);
  ASSERT_EQ(run("eval --seed 2 --noise 1 --model " + p("t1") + "/model.ckpt --data " + p("data") + " --out " + p("e2")), 0);
  expect_same_tree(p("e1"), p("e2"));
}

TEST_F(Cli, OracleEvalRoundTripsAndScoresPerfectly) {
  ASSERT_EQ(run("gen --seed 5 --images 2 --heldout 20 --out " + p("data")), 0);
  ASSERT_EQ(run("eval --oracle-psi --data " + p("data") + " --out " + p("ev")), 0);
  const auto m = read_metrics(p("ev") + "/metrics.csv");
  EXPECT_EQ(m.at("count"), static_cast<double>(read_manifest(p("data")).count("heldout")));
  EXPECT_LT(m.at("median_yaw_error_deg"), 1e-6);
  EXPECT_EQ(m.at("pck_0.1"), 1.0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(p("ev") + "/predictions")) {
    const std::string text = slurp(e.path());
    const auto recs = parse_label_file(text);
    ASSERT_FALSE(recs.empty());
    for (const auto& r : recs) EXPECT_EQ(r.score, 1.0);
    EXPECT_EQ(write_result_file(recs), text);
    ++files;
  }
  EXPECT_GT(files, 0u);

  ASSERT_EQ(run("metrics --gt " + p("ev") + "/labels --pred " + p("ev") + "/predictions --out " + p("met")), 0);
  const auto mm = read_metrics(p("met") + "/metrics.csv");
  EXPECT_DOUBLE_EQ(mm.at("ap_2d"), 1.0);
  EXPECT_NEAR(mm.at("aos"), 1.0, 1e-6);
  EXPECT_EQ(mm.at("matched"), m.at("count"));
}

TEST_F(Cli, BevEmptyAndOpposedArrows) {
  fs::create_directories(p("gt"));
  fs::create_directories(p("pred"));
  ASSERT_EQ(run("bev --gt " + p("gt") + " --pred " + p("pred") + " --out " + p("b0")), 0);
  const std::string empty = slurp(p("b0") + "/bev.svg");
  EXPECT_NE(empty.find("<svg"), std::string::npos);
  EXPECT_NE(empty.find("</svg>"), std::string::npos);
  EXPECT_EQ(empty.find("<line"), std::string::npos);
  EXPECT_EQ(slurp(p("b0") + "/arrows.csv"), "frame,kind,x,z,dx,dz\n");

  DetectionRecord g;
  g.bbox = {100, 100, 200, 160};
  g.location = Vec3(2.0, 1.6, 20.0);
  g.rotation_y = 0.4;
  DetectionRecord pr = g;
  pr.rotation_y = 0.4 - kPi;
  pr.score = 0.9;
  std::ofstream(p("gt") + "/000001.txt") << write_result_file({g});
  std::ofstream(p("pred") + "/000001.txt") << write_result_file({pr});
  ASSERT_EQ(run("bev --gt " + p("gt") + " --pred " + p("pred") + " --out " + p("b1")), 0);
  ASSERT_EQ(run("bev --gt " + p("gt") + " --pred " + p("pred") + " --out " + p("b2")), 0);
  EXPECT_EQ(slurp(p("b1") + "/bev.svg"), slurp(p("b2") + "/bev.svg"));
  std::istringstream csv(slurp(p("b1") + "/arrows.csv"));
  std::string line;
  std::getline(csv, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(csv, line)) {
    const auto cols = split_csv(line);
    std::vector<double> v;
    for (std::size_t i = 2; i < cols.size(); ++i) v.push_back(std::stod(cols[i]));
    rows.push_back(v);
  }
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0][0], rows[1][0]);
  EXPECT_EQ(rows[0][1], rows[1][1]);
  EXPECT_NEAR(rows[0][2], -rows[1][2], 1e-3);
  EXPECT_NEAR(rows[0][3], -rows[1][3], 1e-3);
  EXPECT_NEAR(std::hypot(rows[0][2], rows[0][3]), 1.0, 1e-3);
}
