#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "gxe/dataset.hpp"
#include "gxe/variance_structure.hpp"

namespace gxe {

// All randomness uses std::mt19937_64. Streams are seeded with
// std::seed_seq{seed, stream...} so that independent streams (markers,
// genetic values, noise, replicates) never share state.
std::mt19937_64 make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream);

// n x m genotype codes in {0, 1, 2}: per-marker allele frequency drawn
// uniformly from [0.1, 0.9], then binomial(2, freq) per genotype.
Eigen::MatrixXi simulate_markers(int n, int m, std::uint64_t seed);

// VanRaden relationship matrix K = W W' / c with W = M - 2f (column
// allele frequencies f) and c = 2 sum f (1 - f). Monomorphic markers are
// dropped with a warning; DataError when none remain.
RelationshipMatrix kinship_from_markers(const Eigen::MatrixXi& markers, std::vector<std::string> labels = {});

// Symmetric square-root factor F with F F' = A, from the eigen
// decomposition (handles singular PSD matrices). DataError when
// min eigenvalue < -1e-8 * max eigenvalue.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& a, const char* what);

// u ~ N(0, Sigma (x) K) via U = F_K Z F_Sigma' with Z iid N(0,1) (n x p);
// returned stacked genotype-within-environment (cell = env * n + genotype).
Eigen::VectorXd draw_genetic_values(const Eigen::MatrixXd& sigma_factor, const Eigen::MatrixXd& kinship_factor,
                                    std::mt19937_64& rng);

struct SimConfig {
  int n_genotypes = 100;
  int n_markers = 1000;
  std::shared_ptr<const VarianceStructure> truth_structure;  // defines p and environment labels
  Eigen::VectorXd truth_kappa;
  double resid_var = 1.0;
  Eigen::VectorXd env_means;  // length p; empty means all zero
  std::uint64_t seed = 1;
  // Optional supplied kinship; markers are not simulated when present.
  std::shared_ptr<const RelationshipMatrix> kinship;
};

struct SimOutput {
  Dataset dataset;                    // complete design, every cell observed
  Eigen::VectorXd true_genetic_values;  // n*p, cell = env * n + genotype
  Eigen::MatrixXd true_sigma;
  Eigen::VectorXd true_kappa;
  std::vector<std::string> parameter_names;
  double true_resid_var = 0.0;
};

// y_cell = env_mean + u_cell + e, e ~ N(0, resid_var). resid_var = 0 is
// allowed and gives noise-free phenotypes.
SimOutput simulate_met(const SimConfig& config);

// Same as simulate_met but reuses precomputed factors; `replicate` selects
// an independent stream. Used by the CV harness to avoid refactorizing K.
class MetSimulator {
 public:
  explicit MetSimulator(SimConfig config);
  SimOutput draw(std::uint64_t replicate) const;
  const SimConfig& config() const { return config_; }
  const std::shared_ptr<const RelationshipMatrix>& kinship() const { return kinship_; }

 private:
  SimConfig config_;
  std::shared_ptr<const RelationshipMatrix> kinship_;
  Eigen::MatrixXd sigma_;
  Eigen::MatrixXd sigma_factor_;
  Eigen::MatrixXd kinship_factor_;
};

// Parses a flat key = value simulation config. Keys: n_genotypes, n_markers,
// structure (main|diag|cor1|corP|kern1|kernP|ka), environments (comma list,
// for main/diag), corr / dist (matrix CSV paths, relative to the config
// file), grid, kappa (comma list), resid_var, env_means, seed.
SimConfig read_sim_config(const std::filesystem::path& path);

// Writes phenotypes.csv, kinship.csv, truth_params.csv, truth_genetic_values.csv.
void write_sim_output(const std::filesystem::path& dir, const SimOutput& output);

}  // namespace gxe
