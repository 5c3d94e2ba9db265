#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "budis/io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kData = BUDIS_TEST_DATA;

struct CliRun {
  int code;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("budis_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliRun invoke(const std::string& args) const {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string("\"") + BUDIS_CLI_PATH + "\" " + args + " >/dev/null 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, budis::io::read_text(err)};
  }

  std::string fit_args(const std::string& out, const std::string& units = "units_small.csv") const {
    return "fit --units " + (kData / units).string() + " --adjacency " + (kData / "adjacency_30.csv").string() +
           " --out " + (dir_ / out).string() + " --hidden 6 --basis 3 --seed 5";
  }

  fs::path dir_;
};

std::map<std::string, std::string> manifest(const fs::path& dir) {
  return budis::io::parse_key_values(budis::io::read_text(dir / "manifest.txt"), "manifest");
}

std::string bytes(const fs::path& p) { return budis::io::read_text(p); }

}  // namespace

TEST_F(CliTest, FitSucceedsAndRecordsSettings) {
  const auto r = invoke(fit_args("fit"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "fit" / "fit_vb.txt"));
  EXPECT_TRUE(fs::exists(dir_ / "fit" / "elm_layer.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "fit" / "vocabulary.csv"));
  const auto m = manifest(dir_ / "fit");
  EXPECT_EQ(m.at("seed"), "5");
  EXPECT_EQ(m.at("hidden"), "6");
  EXPECT_EQ(m.at("vocab-size"), "1000");
  EXPECT_EQ(m.at("sparsity"), "0.1");
  EXPECT_EQ(m.at("ig-shape"), "0.5");
  EXPECT_EQ(m.at("sigma2-beta"), "1000");
  EXPECT_EQ(m.at("fitter"), "vb");
  EXPECT_EQ(m.count("threads"), 0u);
  EXPECT_NE(r.err.find("stage="), std::string::npos);
}

TEST_F(CliTest, ZeroWeightNamesTheRow) {
  const auto r = invoke(fit_args("bad", "units_weight0.csv"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("row 3"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("weight"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "bad"));
}

TEST_F(CliTest, FitIsByteReproducible) {
  ASSERT_EQ(invoke(fit_args("a")).code, 0);
  ASSERT_EQ(invoke(fit_args("b")).code, 0);
  for (const auto& entry : fs::directory_iterator(dir_ / "a"))
    EXPECT_EQ(bytes(entry.path()), bytes(dir_ / "b" / entry.path().filename())) << entry.path().filename();
}

TEST_F(CliTest, PredictWritesAreaEstimates) {
  ASSERT_EQ(invoke(fit_args("fit")).code, 0);
  const std::string args = "predict --fit-dir " + (dir_ / "fit").string() + " --units " +
                           (kData / "units_small.csv").string() + " --population " +
                           (kData / "population_small.csv").string() + " --draws 30 --out " + (dir_ / "pred").string();
  const auto r = invoke(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = budis::io::read_csv(dir_ / "pred" / "area_estimates.csv");
  EXPECT_EQ(t.header.front(), "area");
  EXPECT_GE(t.column("estimate"), 0);
  EXPECT_GE(t.column("truth"), 0);
  EXPECT_EQ(t.rows.size(), 4u);
  for (const auto& row : t.rows) {
    const double v = budis::io::parse_double(row[static_cast<std::size_t>(t.column("estimate"))], "estimate");
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto again = invoke("predict --fit-dir " + (dir_ / "fit").string() + " --units " +
                         (kData / "units_small.csv").string() + " --population " +
                         (kData / "population_small.csv").string() + " --draws 30 --out " + (dir_ / "pred2").string());
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(bytes(dir_ / "pred" / "area_estimates.csv"), bytes(dir_ / "pred2" / "area_estimates.csv"));
}

TEST_F(CliTest, PredictRejectsMismatchedVocabulary) {
  ASSERT_EQ(invoke(fit_args("fit")).code, 0);
  // Truncating the vocabulary changes the ELM input width the fit expects.
  std::ofstream(dir_ / "fit" / "vocabulary.csv") << "rank,token,document_frequency\n1,jobs,2\n";
  const auto r = invoke("predict --fit-dir " + (dir_ / "fit").string() + " --units " +
                     (kData / "units_small.csv").string() + " --population " +
                     (kData / "population_small.csv").string() + " --out " + (dir_ / "pred").string());
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "pred"));
}

TEST_F(CliTest, ConfigFileSetsOptionsAndRejectsUnknownKeys) {
  std::ofstream(dir_ / "good.ini") << "hidden = 4\nseed = 9\n";
  const auto ok = invoke(fit_args("fit") + " --config " + (dir_ / "good.ini").string());
  ASSERT_EQ(ok.code, 0) << ok.err;
  // Command-line values win over the file.
  EXPECT_EQ(manifest(dir_ / "fit").at("hidden"), "6");

  std::ofstream(dir_ / "cfg_only.ini") << "hidden = 4\n";
  const auto only = invoke("fit --units " + (kData / "units_small.csv").string() + " --adjacency " +
                        (kData / "adjacency_30.csv").string() + " --basis 3 --out " + (dir_ / "fit2").string() +
                        " --config " + (dir_ / "cfg_only.ini").string());
  ASSERT_EQ(only.code, 0) << only.err;
  EXPECT_EQ(manifest(dir_ / "fit2").at("hidden"), "4");

  std::ofstream(dir_ / "bad.ini") << "hiden = 4\n";
  const auto bad = invoke(fit_args("fit3") + " --config " + (dir_ / "bad.ini").string());
  EXPECT_EQ(bad.code, 2);
  EXPECT_FALSE(fs::exists(dir_ / "fit3"));
}

TEST_F(CliTest, CategoricalFitAndPredict) {
  const std::string fit = "fit --units " + (kData / "units_categorical.csv").string() + " --adjacency " +
                          (kData / "adjacency_30.csv").string() + " --out " + (dir_ / "cat").string() +
                          " --hidden 4 --basis 3 --fitter gibbs --gibbs-iterations 60 --gibbs-burn-in 20";
  const auto r = invoke(fit);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(manifest(dir_ / "cat").at("response-type"), "categorical");
  const auto p = invoke("predict --fit-dir " + (dir_ / "cat").string() + " --units " +
                     (kData / "units_categorical.csv").string() + " --population " +
                     (kData / "population_categorical.csv").string() + " --draws 20 --out " + (dir_ / "catp").string());
  ASSERT_EQ(p.code, 0) << p.err;
  const auto t = budis::io::read_csv(dir_ / "catp" / "area_estimates.csv");
  EXPECT_EQ(t.header.front(), "category");
  EXPECT_EQ(t.rows.size(), 18u);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(invoke("").code, 2);
  EXPECT_EQ(invoke("fit --units /no/such/file.csv --out x").code, 2);
  EXPECT_EQ(invoke("--help").code, 0);
}
