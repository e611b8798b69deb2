#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "casa/casa.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
  int code = -1;
  json out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(CASA_REFINE_BIN) + " " + args + " 2>/dev/null";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return {};
  std::string text;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) text.append(buf, n);
  const int status = ::pclose(pipe);
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  auto nl = text.find_last_of('\n', text.size() >= 2 ? text.size() - 2 : 0);
  const std::string last = nl == std::string::npos ? text : text.substr(nl + 1);
  r.out = json::parse(last, nullptr, false);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("casa_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  static std::string in(const std::string& name) { return (fs::path(CASA_EXAMPLE_DIR) / name).string(); }
  std::string out(const std::string& name) const { return (dir_ / name).string(); }

  std::string refine_args(const std::string& mask) const {
    return "refine --cross-src " + in("cross_src.npy") + " --cross-tgt " + in("cross_tgt.npy") + " --self-src " +
           in("self_src.npy") + " --self-tgt " + in("self_tgt.npy") + " --out-mask " + out(mask);
  }

  std::string prune_args(const std::string& tgt_txt, const std::string& dst) const {
    return "prune --src-img " + in("src_img.npy") + " --src-txt " + in("src_txt.npy") + " --tgt-txt " + tgt_txt +
           " --out " + out(dst);
  }

  fs::path dir_;
};

TEST_F(CliTest, RefineWritesMaskAndReport) {
  auto r = run(refine_args("mask.npy") + " --out-saliency " + out("sal.npy") + " --z-tgt " + in("z_tgt.npy") +
               " --z-src " + in("z_src.npy") + " --out-latent " + out("z.npy"));
  ASSERT_EQ(r.code, 0) << r.out.dump();
  EXPECT_EQ(r.out["command"], "refine");
  EXPECT_EQ(r.out["exit_code"], 0);
  EXPECT_TRUE(r.out["converged"].get<bool>());
  EXPECT_LE(r.out["objective_final"].get<double>(), r.out["objective_initial"].get<double>());
  auto mask = casa::read_array(out("mask.npy"));
  EXPECT_EQ(mask.shape(), (casa::Shape{16, 16}));
  for (double v : mask.to_doubles()) EXPECT_TRUE(v == 0.0 || v == 1.0);
  EXPECT_EQ(casa::read_array(out("sal.npy")).shape(), (casa::Shape{2, 16, 16}));
  EXPECT_EQ(casa::read_array(out("z.npy")).shape(), casa::read_array(in("z_tgt.npy")).shape());
}

TEST_F(CliTest, NegativeLambdaIsUsageError) {
  auto r = run(refine_args("mask.npy") + " --lambda -1");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out["error"].get<std::string>().find("lambda"), std::string::npos);
  EXPECT_FALSE(fs::exists(out("mask.npy")));
}

TEST_F(CliTest, UnknownFlagIsUsageError) {
  EXPECT_EQ(run(refine_args("mask.npy") + " --bogus 3").code, 1);
}

TEST_F(CliTest, MissingFileIsDataError) {
  auto r = run("refine --cross-src " + out("absent.npy") + " --cross-tgt " + in("cross_tgt.npy") + " --self-src " +
               in("self_src.npy") + " --self-tgt " + in("self_tgt.npy") + " --out-mask " + out("mask.npy"));
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.out["exit_code"], 2);
}

TEST_F(CliTest, NonConvergenceExitsThreeWithPartialOutput) {
  auto r = run(refine_args("mask.npy") + " --solver cg --cg-max-iter 1 --cg-tol 1e-15");
  EXPECT_EQ(r.code, 3);
  EXPECT_FALSE(r.out["converged"].get<bool>());
  EXPECT_TRUE(fs::exists(out("mask.npy")));
}

TEST_F(CliTest, CgAndDenseMasksMatch) {
  ASSERT_EQ(run(refine_args("dense.npy") + " --solver dense").code, 0);
  ASSERT_EQ(run(refine_args("cg.npy") + " --solver cg --cg-tol 1e-12").code, 0);
  EXPECT_EQ(slurp(out("dense.npy")), slurp(out("cg.npy")));
}

TEST_F(CliTest, ConfigFileAndFlagOverride) {
  {
    std::ofstream cfg(out("cfg.json"));
    cfg << R"({"lambda": 0.0, "delta": 0.5})";
  }
  auto r = run(refine_args("mask.npy") + " --config " + out("cfg.json") + " --delta 0.4");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out["config"]["lambda"], 0.0);
  EXPECT_EQ(r.out["config"]["delta"], 0.4);
}

TEST_F(CliTest, PruneWithEqualTextReturnsImageBitwise) {
  auto r = run(prune_args(in("src_txt.npy"), "e.npy"));
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(casa::read_array(out("e.npy")) == casa::read_array(in("src_img.npy")));
}

TEST_F(CliTest, PruneMatchesLibrary) {
  ASSERT_EQ(run(prune_args(in("tgt_txt.npy"), "e.npy") + " --tau-percentile 80").code, 0);
  auto img = casa::read_array(in("src_img.npy")).to_doubles();
  auto a = casa::read_array(in("src_txt.npy")).to_doubles();
  auto b = casa::read_array(in("tgt_txt.npy")).to_doubles();
  auto view = [](const std::vector<double>& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())); };
  Eigen::VectorXd expect = casa::interpolate(view(img), view(a), view(b), 80);
  auto got = casa::read_array(out("e.npy"));
  auto expect_arr = casa::DenseArray::from_doubles(got.shape(), std::span<const double>(expect.data(), expect.size()), got.dtype());
  EXPECT_TRUE(got == expect_arr);
}

TEST_F(CliTest, PruneZeroPercentileAddsFullOffset) {
  auto r = run(prune_args(in("tgt_txt.npy"), "e.npy") + " --tau-percentile 0");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out["kept"].get<long>(), r.out["dims"].get<long>());
}

TEST_F(CliTest, PruneRejectsBadPercentile) {
  EXPECT_EQ(run(prune_args(in("tgt_txt.npy"), "e.npy") + " --tau-percentile 120").code, 1);
}

TEST_F(CliTest, BenchCsvIsDeterministicAndCoversAblations) {
  const std::string common = "bench --seeds 5 --side 16 --out-csv ";
  auto a = run(common + out("a.csv"));
  auto b = run(common + out("b.csv") + " --jobs 2");
  ASSERT_EQ(a.code, 0) << a.out.dump();
  ASSERT_EQ(b.code, 0);
  const std::string csv = slurp(out("a.csv"));
  EXPECT_EQ(csv, slurp(out("b.csv")));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 5 * 4);
  for (auto name : {"full", "uniform_weights", "no_symmetrize", "no_alpha_control"})
    EXPECT_NE(csv.find(std::string(",") + name + ","), std::string::npos) << name;
  EXPECT_EQ(a.out["rows"], 20);
  EXPECT_GT(a.out["mean_iou_delta"].get<double>(), 0.0);
}

TEST_F(CliTest, BenchNeedsFiveSeeds) {
  EXPECT_EQ(run("bench --seeds 3 --out-csv " + out("a.csv")).code, 1);
}

}  // namespace
