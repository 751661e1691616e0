#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <gtest/gtest.h>

#include "cli.hpp"
#include "gxe/csv_io.hpp"

namespace fs = std::filesystem;
using gxe::cli::parse_args;
using gxe::cli::ParseResult;

namespace {

const fs::path kExample = GXE_EXAMPLE_DIR;

ParseResult parse(std::initializer_list<std::string> args) {
  std::vector<std::string> all{"gxe-reml"};
  all.insert(all.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : all) argv.push_back(a.c_str());
  return parse_args(static_cast<int>(argv.size()), argv.data());
}

struct RunOutput {
  int code = -1;
  std::string out;
  std::string err;
};

RunOutput run(std::initializer_list<std::string> args) {
  std::vector<std::string> all{"gxe-reml"};
  all.insert(all.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : all) argv.push_back(a.c_str());
  std::ostringstream out, err;
  RunOutput r;
  r.code = gxe::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("gxe_cli_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path operator/(const std::string& name) const { return path_ / name; }
  std::string str(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::string ex(const std::string& name) { return (kExample / name).string(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Everything except the timing column, which varies run to run.
std::string report_without_timing(const fs::path& path) {
  const auto table = gxe::io::read_csv(path);
  const auto skip = table.column("fit_seconds");
  std::string joined;
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c != skip) joined += row[c] + ",";
    }
    joined += "\n";
  }
  return joined;
}

}  // namespace

TEST(CliParse, FitKernelWithDistanceIsValid) {
  auto r = parse({"fit", "--structure", "kern1", "--dist", ex("env_dist.csv"), "--phenotypes", ex("phenotypes.csv"),
                  "--kinship", ex("kinship.csv"), "--out", "res"});
  ASSERT_TRUE(r.config) << r.message;
  EXPECT_EQ(r.config->subcommand, "fit");
  EXPECT_EQ(*r.config->structure, gxe::StructureKind::KernelSingleVar);
  EXPECT_EQ(r.config->dist->string(), ex("env_dist.csv"));
  EXPECT_FALSE(r.config->corr);
  EXPECT_EQ(r.config->max_iter, 100);
  EXPECT_DOUBLE_EQ(r.config->tol, 1e-6);
}

TEST(CliParse, KernelWithCorrelationIsUsageError) {
  auto r = parse({"fit", "--structure", "kern1", "--corr", ex("env_corr.csv"), "--phenotypes", ex("phenotypes.csv"),
                  "--kinship", ex("kinship.csv"), "--out", "res"});
  EXPECT_FALSE(r.config);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.message.find("--corr"), std::string::npos) << r.message;
  EXPECT_NE(r.message.find("distance"), std::string::npos) << r.message;
}

TEST(CliParse, ZeroReplicatesIsRangeError) {
  auto r = parse({"cv", "--sim-config", ex("sim.cfg"), "--models", "cor1", "--replicates", "0", "--out", "r.csv"});
  EXPECT_FALSE(r.config);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.message.find("--replicates"), std::string::npos) << r.message;
}

TEST(CliParse, UsageErrorsNameTheFlag) {
  const std::string ph = ex("phenotypes.csv"), k = ex("kinship.csv"), c = ex("env_corr.csv"), d = ex("env_dist.csv");
  struct Case {
    std::vector<std::string> args;
    std::string flag;
  };
  const std::vector<Case> cases{
      {{"fit", "--phenotypes", ph, "--kinship", k, "--structure", "main", "--out", "o", "--bogus", "1"}, "--bogus"},
      {{"fit", "--kinship", k, "--structure", "main", "--out", "o"}, "--phenotypes"},
      {{"fit", "--phenotypes", ph, "--kinship", k, "--structure", "cor1", "--out", "o"}, "--corr"},
      {{"fit", "--phenotypes", ph, "--kinship", k, "--structure", "kernP", "--out", "o"}, "--dist"},
      {{"fit", "--phenotypes", ph, "--kinship", k, "--structure", "corP", "--dist", d, "--out", "o"}, "--dist"},
      {{"fit", "--phenotypes", ph, "--kinship", k, "--structure", "main", "--corr", c, "--out", "o"}, "--corr"},
      {{"fit", "--phenotypes", ph, "--kinship", k, "--structure", "kern1", "--dist", d, "--grid", "1,2", "--out", "o"},
       "--grid"},
      {{"fit", "--phenotypes", ph, "--kinship", k, "--structure", "nope", "--out", "o"}, "--structure"},
      {{"fit", "--phenotypes", ph, "--kinship", k, "--structure", "main", "--tol", "-1", "--out", "o"}, "--tol"},
      {{"fit", "--phenotypes", ex("missing.csv"), "--kinship", k, "--structure", "main", "--out", "o"}, "missing.csv"},
      {{"cv", "--phenotypes", ph, "--sim-config", ex("sim.cfg"), "--kinship", k, "--models", "main", "--out", "o"},
       "--phenotypes"},
      {{"cv", "--phenotypes", ph, "--models", "main", "--out", "o"}, "--kinship"},
      {{"cv", "--sim-config", ex("sim.cfg"), "--models", "cor1,bad", "--out", "o"}, "--models"},
      {{"cv", "--sim-config", ex("sim.cfg"), "--models", "cor1", "--lambdas", "0,1.5", "--out", "o"}, "--lambdas"},
      {{"cv", "--sim-config", ex("sim.cfg"), "--models", "cor1", "--jobs", "0", "--out", "o"}, "--jobs"},
      {{"env-process", "--weather", ex("weather.csv"), "--variables", "rain", "--window", "600:300", "--out-corr", "c",
        "--out-dist", "d"},
       "--window"},
      {{"env-process", "--weather", ex("weather.csv"), "--variables", "rain", "--window", "0:250", "--out-corr", "c",
        "--out-dist", "d"},
       "--window"},
  };
  for (const auto& cs : cases) {
    std::vector<const char*> argv{"gxe-reml"};
    for (const auto& a : cs.args) argv.push_back(a.c_str());
    auto r = parse_args(static_cast<int>(argv.size()), argv.data());
    EXPECT_FALSE(r.config) << cs.flag;
    EXPECT_EQ(r.exit_code, 1) << cs.flag;
    EXPECT_NE(r.message.find(cs.flag), std::string::npos) << "expected '" << cs.flag << "' in: " << r.message;
  }
}

TEST(CliParse, CvDefaults) {
  auto r = parse({"cv", "--sim-config", ex("sim.cfg"), "--models", "cor1,corP,kern1", "--out", "r.csv"});
  ASSERT_TRUE(r.config) << r.message;
  const auto& c = *r.config;
  EXPECT_EQ(c.models.size(), 3u);
  EXPECT_EQ(c.design.n_checks, 5);
  EXPECT_EQ(c.design.envs_per_variety, 2);
  EXPECT_EQ(c.design.replicates, 100);
  EXPECT_EQ(c.design.seed, 42u);
  EXPECT_TRUE(c.lambdas.empty());
  EXPECT_GE(c.jobs, 1);
}

TEST(CliParse, OptionsFileFillsMissingFlagsOnly) {
  TempDir tmp;
  write_text(tmp / "opts.txt", "# fit defaults\nmax-iter = 7\ntol = 0.001\nstructure = kern1\ndist = " +
                                   ex("env_dist.csv") + "\n");
  auto r = parse({"fit", "--options", tmp.str("opts.txt"), "--max-iter", "9", "--phenotypes", ex("phenotypes.csv"),
                  "--kinship", ex("kinship.csv"), "--out", "res"});
  ASSERT_TRUE(r.config) << r.message;
  EXPECT_EQ(r.config->max_iter, 9);
  EXPECT_DOUBLE_EQ(r.config->tol, 0.001);
  EXPECT_EQ(*r.config->structure, gxe::StructureKind::KernelSingleVar);
}

TEST(CliParse, OptionsFileUnknownKeyIsUsageError) {
  TempDir tmp;
  write_text(tmp / "opts.txt", "replicates = 3\n");
  auto r = parse({"fit", "--options", tmp.str("opts.txt"), "--phenotypes", ex("phenotypes.csv"), "--kinship",
                  ex("kinship.csv"), "--structure", "main", "--out", "res"});
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.message.find("replicates"), std::string::npos) << r.message;
}

TEST(CliParse, HelpListsEveryFlag) {
  auto raw = gxe::cli::make_raw_args();
  auto app = gxe::cli::make_app(*raw);
  const auto top = parse({"--help"});
  EXPECT_EQ(top.exit_code, 0);
  for (const CLI::App* sub : app->get_subcommands([](const CLI::App*) { return true; })) {
    EXPECT_NE(top.message.find(sub->get_name()), std::string::npos) << sub->get_name();
    const auto help = parse({sub->get_name(), "--help"});
    EXPECT_EQ(help.exit_code, 0) << sub->get_name();
    EXPECT_FALSE(help.config);
    const auto options = sub->get_options();
    EXPECT_GT(options.size(), 2u);
    for (const CLI::Option* opt : options) {
      for (const auto& name : opt->get_lnames()) {
        EXPECT_NE(help.message.find("--" + name), std::string::npos) << sub->get_name() << " --" << name;
      }
    }
  }
}

TEST(CliRun, BundledExamplePipeline) {
  TempDir tmp;
  auto env = run({"env-process", "--weather", ex("weather.csv"), "--variables", "rain,radiation", "--interval", "200",
                  "--window", "0:1200", "--out-corr", tmp.str("corr.csv"), "--out-dist", tmp.str("dist.csv")});
  ASSERT_EQ(env.code, 0) << env.err;
  EXPECT_TRUE(fs::exists(tmp / "corr.csv"));
  EXPECT_TRUE(fs::exists(tmp / "dist.csv"));
  // The shipped matrices are this command's output.
  EXPECT_EQ(slurp(tmp / "corr.csv"), slurp(kExample / "env_corr.csv"));
  EXPECT_EQ(slurp(tmp / "dist.csv"), slurp(kExample / "env_dist.csv"));

  auto sim = run({"simulate", "--config", ex("sim.cfg"), "--out", tmp.str("sim")});
  ASSERT_EQ(sim.code, 0) << sim.err;
  for (const char* f : {"phenotypes.csv", "kinship.csv", "truth_params.csv", "truth_genetic_values.csv"}) {
    EXPECT_TRUE(fs::exists(tmp / "sim" / f)) << f;
  }
  EXPECT_EQ(slurp(tmp / "sim" / "phenotypes.csv"), slurp(kExample / "phenotypes.csv"));

  // Matrices written by env-process feed fit unchanged.
  for (const auto& [structure, flag, matrix] :
       std::vector<std::tuple<std::string, std::string, std::string>>{{"cor1", "--corr", "corr.csv"},
                                                                      {"corP", "--corr", "corr.csv"},
                                                                      {"kern1", "--dist", "dist.csv"},
                                                                      {"kernP", "--dist", "dist.csv"},
                                                                      {"ka", "--dist", "dist.csv"}}) {
    const std::string out = tmp.str("fit_" + structure);
    auto f = run({"fit", "--phenotypes", tmp.str("sim/phenotypes.csv"), "--kinship", tmp.str("sim/kinship.csv"),
                  "--structure", structure, flag, tmp.str(matrix), "--out", out});
    ASSERT_EQ(f.code, 0) << structure << ": " << f.err;
    for (const char* file : {"params.csv", "blups.csv", "loglik.csv", "ai.csv"}) {
      EXPECT_TRUE(fs::exists(fs::path(out) / file)) << structure << " " << file;
    }
  }
  for (const std::string structure : {"main", "diag"}) {
    auto f = run({"fit", "--phenotypes", ex("phenotypes.csv"), "--kinship", ex("kinship.csv"), "--structure", structure,
                  "--out", tmp.str("fit_" + structure)});
    ASSERT_EQ(f.code, 0) << structure << ": " << f.err;
  }

  auto p = run({"predict", "--fit", tmp.str("fit_kernP"), "--targets", ex("targets.csv"), "--out", tmp.str("pred.csv")});
  ASSERT_EQ(p.code, 0) << p.err;
  const auto pred = gxe::io::read_csv(tmp / "pred.csv");
  EXPECT_EQ(pred.header, (std::vector<std::string>{"genotype", "environment", "blup", "fitted"}));
  EXPECT_EQ(pred.rows.size(), gxe::io::read_csv(kExample / "targets.csv").rows.size());

  auto cv = run({"cv", "--sim-config", ex("sim.cfg"), "--models", "cor1,corP,kern1", "--checks", "3",
                 "--replicates", "2", "--lambdas", "0,0.75", "--jobs", "2", "--out", tmp.str("cv.csv")});
  ASSERT_EQ(cv.code, 0) << cv.err;
  const auto report = gxe::io::read_csv(tmp / "cv.csv");
  EXPECT_EQ(report.header, (std::vector<std::string>{"model", "replicate", "lambda", "mean_pearson", "mean_rmse",
                                                     "fit_seconds", "converged"}));
  EXPECT_EQ(report.rows.size(), 2u * (2 + 2 + 1));

  auto cv_real = run({"cv", "--phenotypes", ex("phenotypes.csv"), "--kinship", ex("kinship.csv"), "--models",
                      "main,diag,kernP", "--dist", ex("env_dist.csv"), "--checks", "3", "--replicates", "2", "--out",
                      tmp.str("cv_real.csv")});
  ASSERT_EQ(cv_real.code, 0) << cv_real.err;
  EXPECT_EQ(gxe::io::read_csv(tmp / "cv_real.csv").rows.size(), 6u);
}

TEST(CliRun, DeterministicForFixedSeed) {
  TempDir tmp;
  for (const char* dir : {"a", "b"}) {
    ASSERT_EQ(run({"simulate", "--config", ex("sim.cfg"), "--seed", "5", "--out", tmp.str(dir)}).code, 0);
    ASSERT_EQ(run({"cv", "--sim-config", ex("sim.cfg"), "--models", "cor1,kern1", "--checks", "3", "--replicates",
                   "3", "--seed", "9", "--jobs", dir[0] == 'a' ? "1" : "3", "--out", tmp.str(std::string(dir) + ".csv")})
                  .code,
              0);
  }
  EXPECT_EQ(slurp(tmp / "a" / "phenotypes.csv"), slurp(tmp / "b" / "phenotypes.csv"));
  EXPECT_EQ(report_without_timing(tmp / "a.csv"), report_without_timing(tmp / "b.csv"));
  // The seed flag really reaches the simulator.
  EXPECT_NE(slurp(tmp / "a" / "phenotypes.csv"), slurp(kExample / "phenotypes.csv"));
}

TEST(CliRun, NonNumericCellIsDataErrorWithRowAndColumn) {
  TempDir tmp;
  std::string text = slurp(kExample / "phenotypes.csv");
  std::istringstream lines(text);
  std::string line, edited;
  int n = 0;
  while (std::getline(lines, line)) {
    if (++n == 4) line = line.substr(0, line.rfind(',')) + ",abc";
    edited += line + "\n";
  }
  write_text(tmp / "bad.csv", edited);
  auto r = run({"fit", "--phenotypes", tmp.str("bad.csv"), "--kinship", ex("kinship.csv"), "--structure", "main",
                "--out", tmp.str("res")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bad.csv"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("row 4"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("'value'"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("abc"), std::string::npos) << r.err;
}

TEST(CliRun, NonPsdCorrelationIsDataError) {
  TempDir tmp;
  write_text(tmp / "c.csv",
             ",E1,E2,E3,E4\n"
             "E1,1,0.9,0.9,0\n"
             "E2,0.9,1,-0.9,0\n"
             "E3,0.9,-0.9,1,0\n"
             "E4,0,0,0,1\n");
  auto r = run({"fit", "--phenotypes", ex("phenotypes.csv"), "--kinship", ex("kinship.csv"), "--structure", "cor1",
                "--corr", tmp.str("c.csv"), "--out", tmp.str("res")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("c.csv"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(tmp / "res"));
}

TEST(CliRun, DataErrorsExitTwo) {
  TempDir tmp;
  // Environment labels of the matrix do not cover the phenotypes.
  write_text(tmp / "c.csv", ",E1,E2\nE1,1,0.5\nE2,0.5,1\n");
  auto r = run({"fit", "--phenotypes", ex("phenotypes.csv"), "--kinship", ex("kinship.csv"), "--structure", "cor1",
                "--corr", tmp.str("c.csv"), "--out", tmp.str("res")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("phenotypes.csv"), std::string::npos) << r.err;

  write_text(tmp / "sim.cfg", "structure = main\nenvironments = A,B\nkappa = x\n");
  auto s = run({"simulate", "--config", tmp.str("sim.cfg"), "--out", tmp.str("sim")});
  EXPECT_EQ(s.code, 2);
  EXPECT_NE(s.err.find("kappa"), std::string::npos) << s.err;

  write_text(tmp / "targets.csv", "genotype,environment\nG1,E9\n");
  ASSERT_EQ(run({"fit", "--phenotypes", ex("phenotypes.csv"), "--kinship", ex("kinship.csv"), "--structure", "main",
                 "--out", tmp.str("fit")})
                .code,
            0);
  auto p = run({"predict", "--fit", tmp.str("fit"), "--targets", tmp.str("targets.csv"), "--out", tmp.str("p.csv")});
  EXPECT_EQ(p.code, 2);
  EXPECT_NE(p.err.find("E9"), std::string::npos) << p.err;
}
