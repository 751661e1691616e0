#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gxe/dataset.hpp"
#include "gxe/env_features.hpp"
#include "gxe/reml.hpp"
#include "gxe/simulator.hpp"
#include "gxe/variance_structure.hpp"

namespace gxe {

// Sparse-testing design: n_checks genotypes observed everywhere, every other
// genotype in exactly envs_per_variety environments.
struct SparseDesign {
  int n_checks = 5;
  int envs_per_variety = 2;
  int replicates = 100;
  std::uint64_t seed = 42;
};

struct SparseSplit {
  Dataset train;
  std::vector<Cell> test_cells;
  std::vector<std::string> checks;
};

// Deterministic per (design.seed, replicate_index). Genotypes without any
// record are ignored. Throws InvalidInputError for an infeasible design and
// DataError when the data cannot realize it.
SparseSplit sparse_split(const Dataset& dataset, const SparseDesign& design, std::uint64_t replicate_index);

struct CellValue {
  std::string genotype;
  std::string environment;
  double value = 0.0;
};

struct Accuracy {
  double mean_pearson = 0.0;  // NaN when no environment has a defined correlation
  double mean_rmse = 0.0;
  int environments = 0;        // environments containing test cells
  int undefined_pearson = 0;   // environments excluded from the Pearson mean
};

// Per-environment Pearson correlation and RMSE over the given cells,
// averaged with equal weight across environments. Environments with fewer
// than two cells or zero variance are excluded from the Pearson mean only.
Accuracy within_env_accuracy(const std::vector<CellValue>& predicted, const std::vector<CellValue>& truth);

struct CvSetup {
  // Exactly one source: a real dataset (held-out BLUEs are the target) or a
  // simulation config (true genetic values are the target).
  std::optional<Dataset> dataset;
  std::optional<SimConfig> simulation;

  std::vector<StructureKind> models;
  // Correlation for cor1/corP. In simulation mode defaults to the
  // correlation implied by the true Sigma.
  std::optional<EnvCorrelationMatrix> corr;
  std::optional<EnvDistanceMatrix> dist;
  std::vector<double> grid;
  SparseDesign design;
  // Blend weights toward a random correlation matrix; correlation models run
  // once per lambda, other models once. Empty: no blending.
  std::vector<double> lambdas;
  FitOptions fit_options;
  int jobs = 1;
};

struct CvRow {
  std::string model;
  int replicate = 0;
  std::optional<double> lambda;
  double mean_pearson = 0.0;
  double mean_rmse = 0.0;
  double fit_seconds = 0.0;
  bool converged = false;
  int undefined_pearson = 0;
  std::string error;
};

struct CvSummary {
  std::string model;
  std::optional<double> lambda;
  int replicates = 0;
  int converged = 0;
  double mean_pearson = 0.0;
  double median_pearson = 0.0;
  double mean_rmse = 0.0;
  double median_rmse = 0.0;
  double median_seconds = 0.0;
};

struct CvReport {
  std::vector<CvRow> rows;  // ordered by replicate, then model, then lambda

  // Aggregates over converged replicates only.
  std::vector<CvSummary> summarize() const;
};

CvReport run_cv(const CvSetup& setup);

// Columns: model,replicate,lambda,mean_pearson,mean_rmse,fit_seconds,converged.
void write_cv_report(const std::filesystem::path& path, const CvReport& report);

// Correlation matrix implied by a covariance matrix.
EnvCorrelationMatrix covariance_to_correlation(const Eigen::MatrixXd& sigma, std::vector<std::string> labels);

}  // namespace gxe
