#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "gxe/csv_io.hpp"
#include "gxe/dataset.hpp"
#include "gxe/error.hpp"
#include "gxe/reml.hpp"
#include "gxe/simulator.hpp"

namespace gxe::cli {

namespace {

constexpr const char* kOptionsFlag = "--options";
constexpr const char* kOptionsHelp = "flat 'key = value' file of option defaults; command-line flags take precedence";

class UsageError : public std::runtime_error {
 public:
  UsageError(const std::string& flag, const std::string& what) : std::runtime_error(flag + ": " + what) {}
};

int default_jobs() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

std::vector<std::string> structure_names() {
  return {"main", "diag", "cor1", "corP", "kern1", "kernP", "ka"};
}

void add_structure_inputs(CLI::App& sub, RawArgs& raw) {
  sub.add_option("--corr", raw.corr, "environment correlation matrix CSV (cor1, corP)")->check(CLI::ExistingFile);
  sub.add_option("--dist", raw.dist, "environment squared-distance matrix CSV (kern1, kernP, ka)")
      ->check(CLI::ExistingFile);
  sub.add_option("--grid", raw.grid, "comma-separated bandwidth grid for ka (default: 7 log-spaced values)");
}

void add_fit_controls(CLI::App& sub, RawArgs& raw) {
  sub.add_option("--max-iter", raw.max_iter, "maximum REML iterations")
      ->check(CLI::Range(1, 1000000))
      ->capture_default_str();
  sub.add_option("--tol", raw.tol, "convergence tolerance on the log-likelihood change")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  try {
    return io::parse_double_list(text, flag);
  } catch (const InvalidInputError& e) {
    throw UsageError(flag, e.what());
  }
}

GddWindow parse_window(const std::string& text) {
  const auto parts = io::split(text, ':');
  if (parts.size() != 2) throw UsageError("--window", "expected lo:hi, got '" + text + "'");
  GddWindow w;
  w.lo = parse_list(parts[0], "--window").at(0);
  w.hi = parse_list(parts[1], "--window").at(0);
  if (!(w.lo < w.hi)) throw UsageError("--window", "requires lo < hi, got '" + text + "'");
  return w;
}

StructureKind parse_kind(const std::string& name, const std::string& flag) {
  try {
    return parse_structure_kind(name);
  } catch (const InvalidInputError& e) {
    throw UsageError(flag, e.what());
  }
}

// --corr / --dist / --grid must match what the structure kinds consume.
void check_structure_inputs(const std::vector<StructureKind>& kinds, const RunConfig& c, bool corr_optional,
                            bool dist_optional) {
  bool want_corr = false, want_dist = false, want_grid = false;
  for (auto k : kinds) {
    want_corr = want_corr || uses_correlation(k);
    want_dist = want_dist || uses_distance(k);
    want_grid = want_grid || k == StructureKind::KernelAveraging;
  }
  const std::string what = kinds.size() == 1 ? "structure '" + std::string(structure_kind_name(kinds[0])) + "'"
                                             : std::string("the selected models");
  if (c.corr && !want_corr) {
    if (want_dist) throw UsageError("--corr", "kernel structures need a distance matrix (--dist), not a correlation matrix");
    throw UsageError("--corr", what + " does not use a correlation matrix");
  }
  if (c.dist && !want_dist) {
    if (want_corr) throw UsageError("--dist", "correlation structures need a correlation matrix (--corr), not a distance matrix");
    throw UsageError("--dist", what + " does not use a distance matrix");
  }
  if (want_corr && !c.corr && !corr_optional) throw UsageError("--corr", what + " requires a correlation matrix");
  if (want_dist && !c.dist && !dist_optional) throw UsageError("--dist", what + " requires a distance matrix");
  if (!c.grid.empty() && !want_grid) throw UsageError("--grid", "only the ka structure takes a bandwidth grid");
}

std::optional<std::filesystem::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

RunConfig build_config(const CLI::App& app, const RawArgs& raw) {
  RunConfig c;
  const CLI::App* sub = app.get_subcommands().at(0);
  c.subcommand = sub->get_name();
  c.out = raw.out;
  auto given = [sub](const char* flag) { return sub->count(flag) > 0; };

  if (c.subcommand == "env-process") {
    c.weather = raw.weather;
    c.variables = io::split(raw.variables, ',');
    for (const auto& v : c.variables) {
      if (v.empty()) throw UsageError("--variables", "empty variable name in '" + raw.variables + "'");
    }
    c.interval = raw.interval;
    c.window = parse_window(raw.window);
    const double lo_steps = c.window.lo / c.interval;
    const double hi_steps = c.window.hi / c.interval;
    if (std::abs(lo_steps - std::round(lo_steps)) > 1e-9 || std::abs(hi_steps - std::round(hi_steps)) > 1e-9) {
      throw UsageError("--window", "bounds must be multiples of --interval");
    }
    c.out_corr = raw.out_corr;
    c.out_dist = raw.out_dist;
  } else if (c.subcommand == "simulate") {
    c.sim_config = raw.sim_config_file;
    if (given("--seed")) c.seed = raw.seed;
  } else if (c.subcommand == "fit") {
    c.phenotypes = raw.phenotypes;
    c.kinship = raw.kinship;
    c.structure = parse_kind(raw.structure, "--structure");
    c.corr = opt_path(raw.corr);
    c.dist = opt_path(raw.dist);
    if (!raw.grid.empty()) c.grid = parse_list(raw.grid, "--grid");
    check_structure_inputs({*c.structure}, c, false, false);
    c.max_iter = raw.max_iter;
    c.tol = raw.tol;
  } else if (c.subcommand == "predict") {
    c.fit_dir = raw.fit_dir;
    c.targets = raw.targets;
  } else if (c.subcommand == "cv") {
    const bool real = given("--phenotypes");
    if (real == given("--sim-config")) throw UsageError("--phenotypes", "give exactly one of --phenotypes or --sim-config");
    if (real && !given("--kinship")) throw UsageError("--kinship", "required with --phenotypes");
    if (real) c.phenotypes = raw.phenotypes;
    else c.sim_config = raw.sim_config;
    c.kinship = raw.kinship;
    for (const auto& name : io::split(raw.models, ',')) c.models.push_back(parse_kind(name, "--models"));
    c.corr = opt_path(raw.corr);
    c.dist = opt_path(raw.dist);
    if (!raw.grid.empty()) c.grid = parse_list(raw.grid, "--grid");
    // In simulation mode the truth structure can stand in for --corr and --dist.
    check_structure_inputs(c.models, c, !real, !real);
    if (!raw.lambdas.empty()) {
      c.lambdas = parse_list(raw.lambdas, "--lambdas");
      for (double l : c.lambdas) {
        if (!(l >= 0.0 && l <= 1.0)) throw UsageError("--lambdas", "values must lie in [0, 1]");
      }
    }
    c.design.n_checks = raw.checks;
    c.design.envs_per_variety = raw.envs_per_variety;
    c.design.replicates = raw.replicates;
    c.design.seed = raw.seed;
    c.seed = raw.seed;
    c.jobs = raw.jobs;
    c.max_iter = raw.max_iter;
    c.tol = raw.tol;
  }
  return c;
}

// Prefix a message with the file it came from unless it already names it.
std::string with_source(const std::filesystem::path& path, const std::string& what) {
  if (what.find(path.string()) != std::string::npos) return what;
  return path.string() + ": " + what;
}

template <typename F>
auto from_file(const std::filesystem::path& path, F&& load) {
  try {
    return load();
  } catch (const DataError& e) {
    throw DataError(with_source(path, e.what()));
  } catch (const InvalidInputError& e) {
    throw DataError(with_source(path, e.what()));
  }
}

EnvCorrelationMatrix load_corr(const std::filesystem::path& path) {
  return from_file(path, [&] {
    auto m = io::read_symmetric_matrix(path);
    return validate_correlation({m.values, m.row_labels});
  });
}

EnvDistanceMatrix load_dist(const std::filesystem::path& path) {
  return from_file(path, [&] {
    auto m = io::read_symmetric_matrix(path);
    return validate_distance({m.values, m.row_labels});
  });
}

std::shared_ptr<const RelationshipMatrix> load_kinship(const std::filesystem::path& path) {
  return from_file(path, [&] { return std::make_shared<const RelationshipMatrix>(read_kinship_csv(path)); });
}

// Environment order follows the supplied matrix; otherwise first appearance in the phenotype file.
Dataset load_dataset(const RunConfig& c, const std::optional<EnvCorrelationMatrix>& corr,
                     const std::optional<EnvDistanceMatrix>& dist) {
  std::vector<std::string> labels;
  if (corr) labels = corr->labels;
  if (dist) {
    if (corr && dist->labels != corr->labels) {
      throw DataError(c.dist->string() + ": environment labels differ from " + c.corr->string());
    }
    labels = dist->labels;
  }
  auto kinship = load_kinship(c.kinship);
  return from_file(c.phenotypes, [&] { return Dataset(read_phenotypes_csv(c.phenotypes), kinship, labels); });
}

void ensure_parent(const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
}

io::LabeledMatrix labeled(const Eigen::MatrixXd& values, const std::vector<std::string>& labels) {
  return {values, labels, labels};
}

int run_env_process(const RunConfig& c, std::ostream& out) {
  EnvProcessOptions opts;
  opts.variables = c.variables;
  opts.interval = c.interval;
  opts.window = c.window;
  const auto weather = read_weather_csv(c.weather, c.variables);
  const auto features = from_file(c.weather, [&] { return build_env_features(weather, opts); });
  const auto corr = env_correlation(features);
  const auto dist = env_distance(features);
  ensure_parent(c.out_corr);
  ensure_parent(c.out_dist);
  io::write_labeled_matrix(c.out_corr, labeled(corr.values, corr.labels));
  io::write_labeled_matrix(c.out_dist, labeled(dist.values, dist.labels));
  out << "environments: " << corr.labels.size() << ", features: " << features.values.rows() << '\n';
  return kOk;
}

int run_simulate(const RunConfig& c, std::ostream& out) {
  SimConfig sim = read_sim_config(c.sim_config);
  if (c.seed) sim.seed = *c.seed;
  const SimOutput result = simulate_met(sim);
  std::filesystem::create_directories(c.out);
  write_sim_output(c.out, result);
  out << "records: " << result.dataset.n_records() << ", genotypes: " << result.dataset.n_genotypes()
      << ", environments: " << result.dataset.n_environments() << '\n';
  return kOk;
}

int run_fit(const RunConfig& c, std::ostream& out, std::ostream& err) {
  std::optional<EnvCorrelationMatrix> corr;
  std::optional<EnvDistanceMatrix> dist;
  if (c.corr) corr = load_corr(*c.corr);
  if (c.dist) dist = load_dist(*c.dist);
  const Dataset data = load_dataset(c, corr, dist);
  const auto structure = VarianceStructure::make(*c.structure, data.environment_labels(), corr, dist, c.grid);
  FitOptions opts;
  opts.max_iter = c.max_iter;
  opts.tol = c.tol;
  const FitResult result = fit(data, structure, opts);
  std::filesystem::create_directories(c.out);
  write_fit_result(c.out, result);
  if (!result.converged) err << "warning: no convergence after " << result.iterations << " iterations\n";
  out << std::setprecision(10) << "structure: " << result.structure_name << ", loglik: " << result.loglik()
      << ", iterations: " << result.iterations << ", converged: " << (result.converged ? "yes" : "no") << '\n';
  return kOk;
}

int run_predict(const RunConfig& c, std::ostream& out) {
  const FitResult result = read_fit_result(c.fit_dir);
  const auto targets = read_cells_csv(c.targets);
  const auto predictions = from_file(c.targets, [&] { return predict_cells(result, targets); });
  ensure_parent(c.out);
  write_predictions_csv(c.out, predictions);
  out << "predicted cells: " << predictions.size() << '\n';
  return kOk;
}

int run_cv_command(const RunConfig& c, std::ostream& out, std::ostream& err) {
  CvSetup setup;
  if (c.corr) setup.corr = load_corr(*c.corr);
  if (c.dist) setup.dist = load_dist(*c.dist);
  if (!c.phenotypes.empty()) {
    setup.dataset = load_dataset(c, setup.corr, setup.dist);
  } else {
    SimConfig sim = read_sim_config(c.sim_config);
    sim.seed = *c.seed;
    if (!c.kinship.empty()) {
      sim.kinship = load_kinship(c.kinship);
      sim.n_genotypes = static_cast<int>(sim.kinship->size());
    }
    const auto& truth = *sim.truth_structure;
    if (!setup.dist) {
      if (const auto* vs = dynamic_cast<const VarianceStructure*>(&truth); vs && uses_distance(vs->kind())) {
        setup.dist = EnvDistanceMatrix{vs->fixed_data(), vs->environment_labels()};
      }
    }
    for (auto k : c.models) {
      if (uses_distance(k) && !setup.dist) {
        throw UsageError("--dist", "kernel models need a distance matrix and the simulation truth has none");
      }
    }
    setup.simulation = std::move(sim);
  }
  setup.models = c.models;
  setup.grid = c.grid;
  setup.design = c.design;
  setup.lambdas = c.lambdas;
  setup.fit_options.max_iter = c.max_iter;
  setup.fit_options.tol = c.tol;
  setup.jobs = c.jobs;
  const CvReport report = run_cv(setup);
  ensure_parent(c.out);
  write_cv_report(c.out, report);
  int failed = 0;
  for (const auto& row : report.rows) {
    if (!row.error.empty()) {
      ++failed;
      err << "warning: replicate " << row.replicate << " model " << row.model << " failed: " << row.error << '\n';
    }
  }
  out << std::setprecision(4);
  for (const auto& s : report.summarize()) {
    out << s.model;
    if (s.lambda) out << " lambda=" << *s.lambda;
    out << ": replicates " << s.replicates << ", converged " << s.converged << ", mean pearson " << s.mean_pearson
        << ", mean rmse " << s.mean_rmse << '\n';
  }
  if (failed) err << "warning: " << failed << " fits failed\n";
  return kOk;
}

}  // namespace

std::unique_ptr<RawArgs> make_raw_args() {
  auto raw = std::make_unique<RawArgs>();
  raw->jobs = default_jobs();
  return raw;
}

std::unique_ptr<CLI::App> make_app(RawArgs& raw) {
  auto app = std::make_unique<CLI::App>("Genotype-by-environment REML with environment covariance structures",
                                        "gxe-reml");
  app->require_subcommand(1);
  app->fallthrough(false);

  auto* env = app->add_subcommand("env-process", "weather records to environment correlation and distance matrices");
  env->add_option(kOptionsFlag, raw.options, kOptionsHelp)->check(CLI::ExistingFile);
  env->add_option("--weather", raw.weather, "daily weather CSV (environment, day, t_min, t_max, covariates...)")
      ->required()
      ->check(CLI::ExistingFile);
  env->add_option("--variables", raw.variables, "comma-separated covariate columns to summarize")->required();
  env->add_option("--interval", raw.interval, "GDD bin width")->check(CLI::PositiveNumber)->capture_default_str();
  env->add_option("--window", raw.window, "GDD window as lo:hi")->required();
  env->add_option("--out-corr", raw.out_corr, "output correlation matrix CSV")->required();
  env->add_option("--out-dist", raw.out_dist, "output squared-distance matrix CSV")->required();

  auto* sim = app->add_subcommand("simulate", "simulate a complete multi-environment trial");
  sim->add_option(kOptionsFlag, raw.options, kOptionsHelp)->check(CLI::ExistingFile);
  sim->add_option("--config", raw.sim_config_file, "simulation 'key = value' file")
      ->required()
      ->check(CLI::ExistingFile);
  sim->add_option("--out", raw.out, "output directory")->required();
  sim->add_option("--seed", raw.seed, "random seed (overrides the config file)");

  auto* fit = app->add_subcommand("fit", "fit one variance structure by REML");
  fit->add_option(kOptionsFlag, raw.options, kOptionsHelp)->check(CLI::ExistingFile);
  fit->add_option("--phenotypes", raw.phenotypes, "phenotype CSV (genotype, environment, value)")
      ->required()
      ->check(CLI::ExistingFile);
  fit->add_option("--kinship", raw.kinship, "kinship matrix CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--structure", raw.structure, "environment covariance structure")
      ->required()
      ->check(CLI::IsMember(structure_names()));
  add_structure_inputs(*fit, raw);
  add_fit_controls(*fit, raw);
  fit->add_option("--out", raw.out, "result directory")->required();

  auto* pred = app->add_subcommand("predict", "predict genotype-environment cells from a fit");
  pred->add_option(kOptionsFlag, raw.options, kOptionsHelp)->check(CLI::ExistingFile);
  pred->add_option("--fit", raw.fit_dir, "result directory written by fit")->required()->check(CLI::ExistingDirectory);
  pred->add_option("--targets", raw.targets, "CSV of genotype,environment cells")->required()->check(CLI::ExistingFile);
  pred->add_option("--out", raw.out, "output predictions CSV")->required();

  auto* cv = app->add_subcommand("cv", "sparse-testing cross-validation");
  cv->add_option(kOptionsFlag, raw.options, kOptionsHelp)->check(CLI::ExistingFile);
  auto* ph = cv->add_option("--phenotypes", raw.phenotypes, "phenotype CSV (real-data mode)")->check(CLI::ExistingFile);
  auto* sc = cv->add_option("--sim-config", raw.sim_config, "simulation config (simulation mode)")->check(CLI::ExistingFile);
  ph->excludes(sc);
  cv->add_option("--kinship", raw.kinship, "kinship matrix CSV")->check(CLI::ExistingFile);
  cv->add_option("--models", raw.models, "comma-separated structures, e.g. cor1,corP,kern1")->required();
  add_structure_inputs(*cv, raw);
  cv->add_option("--checks", raw.checks, "check genotypes observed in every environment")
      ->check(CLI::Range(1, 1000000))
      ->capture_default_str();
  cv->add_option("--envs-per-variety", raw.envs_per_variety, "environments per non-check genotype")
      ->check(CLI::Range(1, 1000000))
      ->capture_default_str();
  cv->add_option("--replicates", raw.replicates, "number of random splits")
      ->check(CLI::Range(1, 1000000))
      ->capture_default_str();
  cv->add_option("--seed", raw.seed, "random seed for splits and simulation")->capture_default_str();
  cv->add_option("--lambdas", raw.lambdas, "comma-separated noise levels in [0, 1] for correlation models");
  cv->add_option("--jobs", raw.jobs, "parallel replicates (default: available processors)")
      ->check(CLI::Range(1, 4096));
  add_fit_controls(*cv, raw);
  cv->add_option("--out", raw.out, "report CSV")->required();
  return app;
}

namespace {

// Values from an --options file become "--key value" arguments for flags missing on the command line.
std::vector<std::string> with_options_file(const CLI::App& app, std::vector<std::string> args) {
  std::optional<std::string> file;
  const CLI::App* sub = nullptr;
  std::vector<std::string> present;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (!sub) {
      sub = app.get_subcommand_no_throw(a);
      continue;
    }
    if (a.rfind("--", 0) != 0) continue;
    const auto eq = a.find('=');
    const std::string flag = a.substr(0, eq);
    present.push_back(flag);
    if (flag == kOptionsFlag) {
      if (eq != std::string::npos) file = a.substr(eq + 1);
      else if (i + 1 < args.size()) file = args[i + 1];
    }
  }
  if (!sub || !file || !std::filesystem::is_regular_file(*file)) return args;  // CLI11 reports these
  for (const auto& [key, value] : io::read_key_value_file(*file)) {
    const std::string flag = "--" + key;
    const CLI::Option* opt = sub->get_option_no_throw(flag);
    if (!opt || flag == kOptionsFlag) {
      throw UsageError(kOptionsFlag, *file + ": key '" + key + "' is not an option of '" + sub->get_name() + "'");
    }
    if (std::find(present.begin(), present.end(), flag) != present.end()) continue;
    args.push_back(flag);
    args.push_back(value);
  }
  return args;
}

}  // namespace

ParseResult parse_args(int argc, const char* const* argv) {
  auto raw = make_raw_args();
  auto app = make_app(*raw);
  ParseResult result;
  try {
    auto args = with_options_file(*app, std::vector<std::string>(argv, argv + argc));
    std::vector<const char*> ptrs;
    for (const auto& a : args) ptrs.push_back(a.c_str());
    app->parse(static_cast<int>(ptrs.size()), ptrs.data());
    result.config = build_config(*app, *raw);
  } catch (const CLI::ParseError& e) {
    std::ostringstream out, err;
    const int code = app->exit(e, out, err);
    result.exit_code = code == 0 ? kOk : kUsage;
    result.message = code == 0 ? out.str() : err.str();
  } catch (const UsageError& e) {
    result.exit_code = kUsage;
    result.message = std::string("error: ") + e.what() + "\n";
  } catch (const DataError& e) {
    result.exit_code = kData;
    result.message = std::string("error: ") + e.what() + "\n";
  }
  return result;
}

int dispatch(const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    if (config.subcommand == "env-process") return run_env_process(config, out);
    if (config.subcommand == "simulate") return run_simulate(config, out);
    if (config.subcommand == "fit") return run_fit(config, out, err);
    if (config.subcommand == "predict") return run_predict(config, out);
    if (config.subcommand == "cv") return run_cv_command(config, out, err);
    err << "error: unknown subcommand '" << config.subcommand << "'\n";
    return kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const InvalidInputError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    // DataError, ContractViolation, filesystem and I/O failures.
    err << "error: " << e.what() << '\n';
    return kData;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  const ParseResult parsed = parse_args(argc, argv);
  if (!parsed.config) {
    (parsed.exit_code == kOk ? out : err) << parsed.message;
    return parsed.exit_code;
  }
  return dispatch(*parsed.config, out, err);
}

}  // namespace gxe::cli
