#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gxe/cv.hpp"
#include "gxe/env_features.hpp"
#include "gxe/variance_structure.hpp"

namespace CLI {
class App;
}

namespace gxe::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct RunConfig {
  std::string subcommand;

  // env-process
  std::filesystem::path weather;
  std::vector<std::string> variables;
  double interval = 100.0;
  GddWindow window;
  std::filesystem::path out_corr;
  std::filesystem::path out_dist;

  // simulate
  std::filesystem::path sim_config;

  // fit / cv inputs
  std::filesystem::path phenotypes;
  std::filesystem::path kinship;
  std::optional<StructureKind> structure;
  std::optional<std::filesystem::path> corr;
  std::optional<std::filesystem::path> dist;
  std::vector<double> grid;
  int max_iter = 100;
  double tol = 1e-6;

  // predict
  std::filesystem::path fit_dir;
  std::filesystem::path targets;

  // cv
  std::vector<StructureKind> models;
  SparseDesign design;
  std::vector<double> lambdas;
  int jobs = 1;

  std::optional<std::uint64_t> seed;  // simulate: overrides the config file; cv: design.seed
  std::filesystem::path out;
};

struct ParseResult {
  std::optional<RunConfig> config;  // empty when parsing stopped (help or error)
  int exit_code = kOk;
  std::string message;  // help text or error
};

// Option values as typed on the command line, before cross-flag validation.
struct RawArgs {
  std::string weather, variables, window, out_corr, out_dist;
  double interval = 100.0;

  std::string sim_config_file;
  std::string out;
  std::uint64_t seed = 42;

  std::string phenotypes, kinship, structure, corr, dist, grid;
  int max_iter = 100;
  double tol = 1e-6;

  std::string fit_dir, targets;

  std::string sim_config, models, lambdas;
  std::string options;
  int checks = 5;
  int envs_per_variety = 2;
  int replicates = 100;
  int jobs = 1;
};

// Option table bound to `raw`. Exposed so tests can reflect over every flag.
std::unique_ptr<CLI::App> make_app(RawArgs& raw);
std::unique_ptr<RawArgs> make_raw_args();

ParseResult parse_args(int argc, const char* const* argv);
int dispatch(const RunConfig& config, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gxe::cli
