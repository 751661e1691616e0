#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gxe/env_features.hpp"

namespace gxe {

// Sigma(kappa) and one dSigma/dkappa_i per parameter, in parameter order.
struct CovarianceWithDerivatives {
  Eigen::MatrixXd sigma;
  std::vector<Eigen::MatrixXd> derivs;
};

enum class ParamType { Variance, Bandwidth };

// Plugin contract for environment-side covariance models: given the
// parameter vector, return the p x p covariance matrix and its partial
// derivatives. All parameters must be strictly positive; the REML optimizer
// works on their logarithms.
class CovarianceFunction {
 public:
  virtual ~CovarianceFunction() = default;

  virtual Eigen::Index dimension() const = 0;
  virtual Eigen::Index parameter_count() const = 0;
  virtual std::vector<std::string> parameter_names() const = 0;
  virtual std::vector<ParamType> parameter_types() const = 0;
  virtual const std::vector<std::string>& environment_labels() const = 0;
  virtual CovarianceWithDerivatives evaluate(const Eigen::VectorXd& kappa) const = 0;

  // Starting values given the phenotypic variance var(y).
  virtual Eigen::VectorXd default_parameters(double phenotypic_variance) const = 0;
};

enum class StructureKind {
  MainEffect,
  Diagonal,
  CorrSingleVar,
  CorrMultiVar,
  KernelSingleVar,
  KernelMultiVar,
  KernelAveraging,
};

// CLI names: main, diag, cor1, corP, kern1, kernP, ka.
StructureKind parse_structure_kind(std::string_view name);
std::string_view structure_kind_name(StructureKind kind);
bool uses_correlation(StructureKind kind);
bool uses_distance(StructureKind kind);

// Entrywise exp(-theta * D). theta = 0 is accepted (gives J_p).
Eigen::MatrixXd gaussian_kernel(const Eigen::MatrixXd& distance, double theta);

struct AverageKernel {
  double sigma_tilde_sq = 0.0;
  Eigen::MatrixXd c_tilde;
};

// Checks a supplied correlation matrix (symmetric, unit diagonal, entries in
// [-1, 1], min eigenvalue >= -1e-8 * max eigenvalue). Small negative
// eigenvalues inside the tolerance are clipped to zero and the result is
// rescaled to unit diagonal, with a logged warning. Throws DataError.
EnvCorrelationMatrix validate_correlation(EnvCorrelationMatrix c);

// Symmetric, zero diagonal, nonnegative entries. Throws DataError.
EnvDistanceMatrix validate_distance(EnvDistanceMatrix d);

// Mean off-diagonal entry of D.
double mean_off_diagonal(const Eigen::MatrixXd& d);

// Seven log-spaced bandwidths spanning [0.1 / dbar, 10 / dbar].
std::vector<double> default_bandwidth_grid(const EnvDistanceMatrix& d);

// The built-in covariance models. Immutable after construction.
class VarianceStructure final : public CovarianceFunction {
 public:
  static VarianceStructure main_effect(std::vector<std::string> labels);
  static VarianceStructure diagonal(std::vector<std::string> labels);
  static VarianceStructure corr_single_var(EnvCorrelationMatrix c);
  static VarianceStructure corr_multi_var(EnvCorrelationMatrix c);
  static VarianceStructure kernel_single_var(EnvDistanceMatrix d);
  static VarianceStructure kernel_multi_var(EnvDistanceMatrix d);
  // Empty grid selects default_bandwidth_grid(d).
  static VarianceStructure kernel_averaging(EnvDistanceMatrix d, std::vector<double> grid = {});

  // Builds the structure of `kind`, taking C or D from whichever is needed.
  static VarianceStructure make(StructureKind kind, const std::vector<std::string>& labels,
                                const std::optional<EnvCorrelationMatrix>& c,
                                const std::optional<EnvDistanceMatrix>& d, std::vector<double> grid = {});

  StructureKind kind() const { return kind_; }
  // C for correlation kinds (J_p for MainEffect), D for kernel kinds, empty otherwise.
  const Eigen::MatrixXd& fixed_data() const { return fixed_; }
  const std::vector<double>& bandwidth_grid() const { return grid_; }

  Eigen::Index dimension() const override { return static_cast<Eigen::Index>(labels_.size()); }
  Eigen::Index parameter_count() const override;
  std::vector<std::string> parameter_names() const override;
  std::vector<ParamType> parameter_types() const override;
  const std::vector<std::string>& environment_labels() const override { return labels_; }
  CovarianceWithDerivatives evaluate(const Eigen::VectorXd& kappa) const override;
  Eigen::VectorXd default_parameters(double phenotypic_variance) const override;

  // Kernel averaging only: sigma_tilde^2 = sum of weights and the weighted
  // average kernel. sigma_tilde^2 * c_tilde reproduces evaluate().sigma bitwise.
  AverageKernel average_kernel(const Eigen::VectorXd& kappa) const;

 private:
  VarianceStructure(StructureKind kind, std::vector<std::string> labels, Eigen::MatrixXd fixed,
                    std::vector<double> grid = {});

  void check_kappa(const Eigen::VectorXd& kappa) const;

  StructureKind kind_;
  std::vector<std::string> labels_;
  Eigen::MatrixXd fixed_;
  std::vector<double> grid_;
  std::vector<Eigen::MatrixXd> grid_kernels_;
};

}  // namespace gxe
