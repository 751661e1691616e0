#include "gxe/simulator.hpp"

#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "gxe/csv_io.hpp"
#include "gxe/error.hpp"
#include "gxe/log.hpp"

namespace gxe {

std::mt19937_64 make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
  std::vector<std::uint32_t> words;
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto v : stream) push(v);
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

Eigen::MatrixXi simulate_markers(int n, int m, std::uint64_t seed) {
  if (n < 2 || m < 2) throw InvalidInputError("simulate_markers: need n >= 2 and m >= 2");
  auto rng = make_rng(seed, {0x6d61726bULL});
  std::uniform_real_distribution<double> freq_dist(0.1, 0.9);
  Eigen::MatrixXi markers(n, m);
  for (int j = 0; j < m; ++j) {
    std::binomial_distribution<int> allele(2, freq_dist(rng));
    for (int i = 0; i < n; ++i) markers(i, j) = allele(rng);
  }
  return markers;
}

RelationshipMatrix kinship_from_markers(const Eigen::MatrixXi& markers, std::vector<std::string> labels) {
  const Eigen::Index n = markers.rows();
  if (labels.empty()) {
    for (Eigen::Index i = 0; i < n; ++i) labels.push_back("G" + std::to_string(i + 1));
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < markers.cols(); ++j) {
    const auto col = markers.col(j);
    if (col.minCoeff() != col.maxCoeff()) keep.push_back(j);
  }
  if (keep.empty()) throw DataError("kinship_from_markers: all markers are monomorphic");
  if (keep.size() < static_cast<std::size_t>(markers.cols())) {
    log().warn("kinship_from_markers: dropped {} monomorphic markers", markers.cols() - static_cast<Eigen::Index>(keep.size()));
  }
  Eigen::MatrixXd w(n, static_cast<Eigen::Index>(keep.size()));
  double c = 0.0;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const Eigen::VectorXd col = markers.col(keep[k]).cast<double>();
    const double f = col.mean() / 2.0;
    w.col(static_cast<Eigen::Index>(k)) = col.array() - 2.0 * f;
    c += 2.0 * f * (1.0 - f);
  }
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  k.selfadjointView<Eigen::Lower>().rankUpdate(w, 1.0 / c);
  k.triangularView<Eigen::StrictlyUpper>() = k.transpose();
  return RelationshipMatrix(std::move(k), std::move(labels));
}

Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& a, const char* what) {
  if (a.rows() != a.cols()) throw DataError(std::string(what) + ": matrix is not square");
  if (a.isZero(0.0)) return Eigen::MatrixXd::Zero(a.rows(), a.cols());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
  if (eig.info() != Eigen::Success) throw DataError(std::string(what) + ": eigen decomposition failed");
  const double max_eig = eig.eigenvalues().maxCoeff();
  const double min_eig = eig.eigenvalues().minCoeff();
  if (min_eig < -1e-8 * std::abs(max_eig)) {
    std::ostringstream msg;
    msg << what << ": not positive semidefinite (min eigenvalue " << min_eig << ")";
    throw DataError(msg.str());
  }
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

Eigen::VectorXd draw_genetic_values(const Eigen::MatrixXd& sigma_factor, const Eigen::MatrixXd& kinship_factor,
                                    std::mt19937_64& rng) {
  const Eigen::Index n = kinship_factor.rows();
  const Eigen::Index p = sigma_factor.rows();
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd z(kinship_factor.cols(), sigma_factor.cols());
  for (Eigen::Index e = 0; e < z.cols(); ++e) {
    for (Eigen::Index g = 0; g < z.rows(); ++g) z(g, e) = normal(rng);
  }
  // vec(F_K Z F_S') = (F_S (x) F_K) vec(Z)
  const Eigen::MatrixXd u = kinship_factor * z * sigma_factor.transpose();
  return Eigen::Map<const Eigen::VectorXd>(u.data(), n * p);
}

MetSimulator::MetSimulator(SimConfig config) : config_(std::move(config)) {
  if (!config_.truth_structure) throw InvalidInputError("simulation config needs a truth structure");
  if (!(config_.resid_var >= 0.0) || !std::isfinite(config_.resid_var)) {
    throw InvalidInputError("simulation resid_var must be finite and >= 0");
  }
  const Eigen::Index p = config_.truth_structure->dimension();
  if (config_.env_means.size() == 0) config_.env_means = Eigen::VectorXd::Zero(p);
  if (config_.env_means.size() != p) throw InvalidInputError("simulation env_means must have one entry per environment");
  sigma_ = config_.truth_structure->evaluate(config_.truth_kappa).sigma;
  sigma_factor_ = psd_factor(sigma_, "truth covariance Sigma");
  if (config_.kinship) {
    kinship_ = config_.kinship;
  } else {
    if (config_.n_genotypes < 2) throw InvalidInputError("simulation needs n_genotypes >= 2");
    if (config_.n_markers < config_.n_genotypes) {
      log().warn("simulation: n_markers ({}) < n_genotypes ({}); kinship will be rank deficient",
                 config_.n_markers, config_.n_genotypes);
    }
    kinship_ = std::make_shared<const RelationshipMatrix>(
        kinship_from_markers(simulate_markers(config_.n_genotypes, config_.n_markers, config_.seed)));
  }
  kinship_factor_ = psd_factor(kinship_->values(), "kinship K");
}

SimOutput MetSimulator::draw(std::uint64_t replicate) const {
  const Eigen::Index n = kinship_->size();
  const auto& envs = config_.truth_structure->environment_labels();
  const auto p = static_cast<Eigen::Index>(envs.size());
  auto genetic_rng = make_rng(config_.seed, {0x67656eULL, replicate});
  auto noise_rng = make_rng(config_.seed, {0x6e6f6973ULL, replicate});
  Eigen::VectorXd u = draw_genetic_values(sigma_factor_, kinship_factor_, genetic_rng);

  std::normal_distribution<double> noise(0.0, std::sqrt(config_.resid_var));
  std::vector<PhenotypeRecord> records;
  records.reserve(static_cast<std::size_t>(n * p));
  for (Eigen::Index e = 0; e < p; ++e) {
    for (Eigen::Index g = 0; g < n; ++g) {
      const double eps = config_.resid_var > 0.0 ? noise(noise_rng) : 0.0;
      records.push_back({kinship_->labels()[static_cast<std::size_t>(g)], envs[static_cast<std::size_t>(e)],
                         config_.env_means(e) + u(e * n + g) + eps});
    }
  }
  return SimOutput{Dataset(std::move(records), kinship_, envs), std::move(u), sigma_, config_.truth_kappa,
                   config_.truth_structure->parameter_names(), config_.resid_var};
}

SimOutput simulate_met(const SimConfig& config) { return MetSimulator(config).draw(0); }

namespace {

SimConfig parse_sim_config(const std::filesystem::path& path) {
  auto kv = io::read_key_value_file(path);
  const auto base = path.parent_path();
  auto take = [&kv](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto number = [&](const std::string& key, double fallback) {
    auto v = take(key);
    if (!v) return fallback;
    auto parsed = io::parse_double_list(*v, key);
    if (parsed.size() != 1) throw DataError(path.string() + ": " + key + " expects a single number");
    return parsed.front();
  };
  auto resolve = [&base](const std::string& rel) {
    std::filesystem::path p(rel);
    return p.is_absolute() ? p : base / p;
  };

  SimConfig config;
  config.n_genotypes = static_cast<int>(number("n_genotypes", config.n_genotypes));
  config.n_markers = static_cast<int>(number("n_markers", config.n_markers));
  config.resid_var = number("resid_var", config.resid_var);
  config.seed = static_cast<std::uint64_t>(number("seed", 1.0));
  const auto structure_name = take("structure");
  if (!structure_name) throw DataError(path.string() + ": missing key 'structure'");
  const StructureKind kind = parse_structure_kind(*structure_name);

  std::optional<EnvCorrelationMatrix> corr;
  std::optional<EnvDistanceMatrix> dist;
  std::vector<std::string> labels;
  if (auto c = take("corr")) {
    auto m = io::read_symmetric_matrix(resolve(*c));
    corr = EnvCorrelationMatrix{m.values, m.row_labels};
    labels = m.row_labels;
  }
  if (auto d = take("dist")) {
    auto m = io::read_symmetric_matrix(resolve(*d));
    dist = EnvDistanceMatrix{m.values, m.row_labels};
    labels = m.row_labels;
  }
  if (auto envs = take("environments")) labels = io::split(*envs, ',');
  if (labels.empty()) throw DataError(path.string() + ": environments unknown (give environments, corr or dist)");
  std::vector<double> grid;
  if (auto g = take("grid")) grid = io::parse_double_list(*g, "grid");
  config.truth_structure = std::make_shared<const VarianceStructure>(VarianceStructure::make(kind, labels, corr, dist, grid));

  auto kappa_text = take("kappa");
  if (!kappa_text) throw DataError(path.string() + ": missing key 'kappa'");
  const auto kappa = io::parse_double_list(*kappa_text, "kappa");
  config.truth_kappa = Eigen::Map<const Eigen::VectorXd>(kappa.data(), static_cast<Eigen::Index>(kappa.size()));
  if (auto means = take("env_means")) {
    const auto v = io::parse_double_list(*means, "env_means");
    config.env_means = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  if (!kv.empty()) throw DataError(path.string() + ": unknown key '" + kv.begin()->first + "'");
  return config;
}

}  // namespace

SimConfig read_sim_config(const std::filesystem::path& path) {
  // Bad values inside a file are data errors, not usage errors.
  try {
    return parse_sim_config(path);
  } catch (const InvalidInputError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_sim_output(const std::filesystem::path& dir, const SimOutput& output) {
  std::filesystem::create_directories(dir);
  write_phenotypes_csv(dir / "phenotypes.csv", output.dataset.records());
  const auto& k = output.dataset.kinship();
  io::write_labeled_matrix(dir / "kinship.csv", {k.values(), k.labels(), k.labels()});

  std::vector<std::vector<std::string>> truth;
  for (Eigen::Index i = 0; i < output.true_kappa.size(); ++i) {
    truth.push_back({output.parameter_names.at(static_cast<std::size_t>(i)), io::format_double(output.true_kappa(i))});
  }
  truth.push_back({"resid_var", io::format_double(output.true_resid_var)});
  io::write_csv(dir / "truth_params.csv", {"name", "value"}, truth);

  std::vector<std::vector<std::string>> values;
  const auto n = output.dataset.n_genotypes();
  const auto& genotypes = output.dataset.genotype_labels();
  const auto& envs = output.dataset.environment_labels();
  for (Eigen::Index e = 0; e < output.dataset.n_environments(); ++e) {
    for (Eigen::Index g = 0; g < n; ++g) {
      values.push_back({genotypes[static_cast<std::size_t>(g)], envs[static_cast<std::size_t>(e)],
                        io::format_double(output.true_genetic_values(e * n + g))});
    }
  }
  io::write_csv(dir / "truth_genetic_values.csv", {"genotype", "environment", "value"}, values);
}

}  // namespace gxe
