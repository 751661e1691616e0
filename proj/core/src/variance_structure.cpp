#include "gxe/variance_structure.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "gxe/error.hpp"
#include "gxe/log.hpp"

namespace gxe {

namespace {

constexpr double kPsdRelTol = 1e-8;

std::vector<std::string> default_labels(Eigen::Index p) {
  std::vector<std::string> labels;
  for (Eigen::Index j = 0; j < p; ++j) labels.push_back("E" + std::to_string(j + 1));
  return labels;
}

// dSigma/dsigma2_i for Sigma = s s^T o R with s_i = sqrt(sigma2_i):
// (i,i) -> R(i,i), (i,j) and (j,i) -> 0.5 * s_j / s_i * R(i,j), zero elsewhere.
Eigen::MatrixXd multi_variance_derivative(const Eigen::VectorXd& s, const Eigen::MatrixXd& r, Eigen::Index i) {
  const Eigen::Index p = s.size();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    if (j == i) {
      d(i, i) = r(i, i);
    } else {
      const double entry = 0.5 * s(j) / s(i) * r(i, j);
      d(i, j) = entry;
      d(j, i) = entry;
    }
  }
  return d;
}

Eigen::MatrixXd scale_by_outer(const Eigen::VectorXd& s, const Eigen::MatrixXd& r) {
  const Eigen::Index p = s.size();
  Eigen::MatrixXd out(p, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i) {
      const double v = (s(i) * s(j)) * r(i, j);
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

}  // namespace

StructureKind parse_structure_kind(std::string_view name) {
  if (name == "main") return StructureKind::MainEffect;
  if (name == "diag") return StructureKind::Diagonal;
  if (name == "cor1") return StructureKind::CorrSingleVar;
  if (name == "corP") return StructureKind::CorrMultiVar;
  if (name == "kern1") return StructureKind::KernelSingleVar;
  if (name == "kernP") return StructureKind::KernelMultiVar;
  if (name == "ka") return StructureKind::KernelAveraging;
  throw InvalidInputError("unknown structure '" + std::string(name) +
                          "' (expected main, diag, cor1, corP, kern1, kernP or ka)");
}

std::string_view structure_kind_name(StructureKind kind) {
  switch (kind) {
    case StructureKind::MainEffect: return "main";
    case StructureKind::Diagonal: return "diag";
    case StructureKind::CorrSingleVar: return "cor1";
    case StructureKind::CorrMultiVar: return "corP";
    case StructureKind::KernelSingleVar: return "kern1";
    case StructureKind::KernelMultiVar: return "kernP";
    case StructureKind::KernelAveraging: return "ka";
  }
  return "?";
}

bool uses_correlation(StructureKind kind) {
  return kind == StructureKind::CorrSingleVar || kind == StructureKind::CorrMultiVar;
}

bool uses_distance(StructureKind kind) {
  return kind == StructureKind::KernelSingleVar || kind == StructureKind::KernelMultiVar ||
         kind == StructureKind::KernelAveraging;
}

Eigen::MatrixXd gaussian_kernel(const Eigen::MatrixXd& distance, double theta) {
  if (!(theta >= 0.0) || !std::isfinite(theta)) {
    throw InvalidInputError("gaussian_kernel: bandwidth must be finite and nonnegative");
  }
  return (-theta * distance.array()).exp().matrix();
}

EnvCorrelationMatrix validate_correlation(EnvCorrelationMatrix c) {
  auto& m = c.values;
  const Eigen::Index p = m.rows();
  if (p < 1 || m.cols() != p) throw DataError("correlation matrix must be square and non-empty");
  if (c.labels.empty()) c.labels = default_labels(p);
  if (c.labels.size() != static_cast<std::size_t>(p)) throw DataError("correlation matrix label count mismatch");
  if (!m.allFinite()) throw DataError("correlation matrix has non-finite entries");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8) throw DataError("correlation matrix is not symmetric");
  m = 0.5 * (m + m.transpose()).eval();
  for (Eigen::Index i = 0; i < p; ++i) {
    if (std::abs(m(i, i) - 1.0) > 1e-8) {
      throw DataError("correlation matrix diagonal entry for '" + c.labels[static_cast<std::size_t>(i)] +
                      "' is not 1");
    }
  }
  m.diagonal().setOnes();
  if (m.cwiseAbs().maxCoeff() > 1.0 + 1e-8) throw DataError("correlation matrix has entries outside [-1, 1]");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  const double max_eig = eig.eigenvalues().maxCoeff();
  const double min_eig = eig.eigenvalues().minCoeff();
  if (min_eig < -kPsdRelTol * max_eig) {
    std::ostringstream msg;
    msg << "correlation matrix is not positive semidefinite (min eigenvalue " << min_eig << ", max " << max_eig
        << ")";
    throw DataError(msg.str());
  }
  if (min_eig < 0.0) {
    log().warn("correlation matrix has min eigenvalue {:.3g}; clipping negative eigenvalues to zero", min_eig);
    Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
    Eigen::MatrixXd repaired = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
    const Eigen::VectorXd inv_sd = repaired.diagonal().cwiseSqrt().cwiseInverse();
    repaired = inv_sd.asDiagonal() * repaired * inv_sd.asDiagonal();
    m = 0.5 * (repaired + repaired.transpose());
    m.diagonal().setOnes();
  }
  return c;
}

EnvDistanceMatrix validate_distance(EnvDistanceMatrix d) {
  auto& m = d.values;
  const Eigen::Index p = m.rows();
  if (p < 1 || m.cols() != p) throw DataError("distance matrix must be square and non-empty");
  if (d.labels.empty()) d.labels = default_labels(p);
  if (d.labels.size() != static_cast<std::size_t>(p)) throw DataError("distance matrix label count mismatch");
  if (!m.allFinite()) throw DataError("distance matrix has non-finite entries");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8) throw DataError("distance matrix is not symmetric");
  m = 0.5 * (m + m.transpose()).eval();
  if (m.diagonal().cwiseAbs().maxCoeff() > 1e-8) throw DataError("distance matrix diagonal is not zero");
  m.diagonal().setZero();
  if (m.minCoeff() < 0.0) throw DataError("distance matrix has negative entries");
  return d;
}

double mean_off_diagonal(const Eigen::MatrixXd& d) {
  const Eigen::Index p = d.rows();
  if (p < 2) return 0.0;
  return (d.sum() - d.trace()) / static_cast<double>(p * (p - 1));
}

std::vector<double> default_bandwidth_grid(const EnvDistanceMatrix& d) {
  const double dbar = mean_off_diagonal(d.values);
  if (!(dbar > 0.0)) throw DataError("distance matrix has no positive off-diagonal entries");
  constexpr int kPoints = 7;
  const double lo = std::log(0.1 / dbar);
  const double hi = std::log(10.0 / dbar);
  std::vector<double> grid;
  for (int m = 0; m < kPoints; ++m) grid.push_back(std::exp(lo + (hi - lo) * m / (kPoints - 1)));
  return grid;
}

VarianceStructure::VarianceStructure(StructureKind kind, std::vector<std::string> labels, Eigen::MatrixXd fixed,
                                     std::vector<double> grid)
    : kind_(kind), labels_(std::move(labels)), fixed_(std::move(fixed)), grid_(std::move(grid)) {
  if (labels_.empty()) throw InvalidInputError("variance structure needs at least one environment");
  for (const auto theta : grid_) grid_kernels_.push_back(gaussian_kernel(fixed_, theta));
}

VarianceStructure VarianceStructure::main_effect(std::vector<std::string> labels) {
  const auto p = static_cast<Eigen::Index>(labels.size());
  return {StructureKind::MainEffect, std::move(labels), Eigen::MatrixXd::Ones(p, p)};
}

VarianceStructure VarianceStructure::diagonal(std::vector<std::string> labels) {
  return {StructureKind::Diagonal, std::move(labels), Eigen::MatrixXd()};
}

VarianceStructure VarianceStructure::corr_single_var(EnvCorrelationMatrix c) {
  c = validate_correlation(std::move(c));
  return {StructureKind::CorrSingleVar, std::move(c.labels), std::move(c.values)};
}

VarianceStructure VarianceStructure::corr_multi_var(EnvCorrelationMatrix c) {
  c = validate_correlation(std::move(c));
  return {StructureKind::CorrMultiVar, std::move(c.labels), std::move(c.values)};
}

VarianceStructure VarianceStructure::kernel_single_var(EnvDistanceMatrix d) {
  d = validate_distance(std::move(d));
  return {StructureKind::KernelSingleVar, std::move(d.labels), std::move(d.values)};
}

VarianceStructure VarianceStructure::kernel_multi_var(EnvDistanceMatrix d) {
  d = validate_distance(std::move(d));
  return {StructureKind::KernelMultiVar, std::move(d.labels), std::move(d.values)};
}

VarianceStructure VarianceStructure::kernel_averaging(EnvDistanceMatrix d, std::vector<double> grid) {
  d = validate_distance(std::move(d));
  if (grid.empty()) grid = default_bandwidth_grid(d);
  for (std::size_t m = 0; m < grid.size(); ++m) {
    if (!(grid[m] > 0.0) || !std::isfinite(grid[m])) {
      throw InvalidInputError("bandwidth grid values must be finite and > 0");
    }
    if (m > 0 && !(grid[m] > grid[m - 1])) throw InvalidInputError("bandwidth grid must be strictly increasing");
  }
  return {StructureKind::KernelAveraging, std::move(d.labels), std::move(d.values), std::move(grid)};
}

VarianceStructure VarianceStructure::make(StructureKind kind, const std::vector<std::string>& labels,
                                          const std::optional<EnvCorrelationMatrix>& c,
                                          const std::optional<EnvDistanceMatrix>& d, std::vector<double> grid) {
  if (uses_correlation(kind) && !c) throw InvalidInputError("structure requires a correlation matrix");
  if (uses_distance(kind) && !d) throw InvalidInputError("structure requires a distance matrix");
  switch (kind) {
    case StructureKind::MainEffect: return main_effect(labels);
    case StructureKind::Diagonal: return diagonal(labels);
    case StructureKind::CorrSingleVar: return corr_single_var(*c);
    case StructureKind::CorrMultiVar: return corr_multi_var(*c);
    case StructureKind::KernelSingleVar: return kernel_single_var(*d);
    case StructureKind::KernelMultiVar: return kernel_multi_var(*d);
    case StructureKind::KernelAveraging: return kernel_averaging(*d, std::move(grid));
  }
  throw InvalidInputError("unknown structure kind");
}

Eigen::Index VarianceStructure::parameter_count() const {
  const Eigen::Index p = dimension();
  switch (kind_) {
    case StructureKind::MainEffect:
    case StructureKind::CorrSingleVar: return 1;
    case StructureKind::Diagonal:
    case StructureKind::CorrMultiVar: return p;
    case StructureKind::KernelSingleVar: return 2;
    case StructureKind::KernelMultiVar: return p + 1;
    case StructureKind::KernelAveraging: return static_cast<Eigen::Index>(grid_.size());
  }
  return 0;
}

std::vector<std::string> VarianceStructure::parameter_names() const {
  std::vector<std::string> names;
  auto per_env = [&] {
    for (const auto& label : labels_) names.push_back("sigma2_" + label);
  };
  switch (kind_) {
    case StructureKind::MainEffect:
    case StructureKind::CorrSingleVar: names.push_back("sigma2"); break;
    case StructureKind::Diagonal:
    case StructureKind::CorrMultiVar: per_env(); break;
    case StructureKind::KernelSingleVar:
      names.push_back("theta");
      names.push_back("sigma2");
      break;
    case StructureKind::KernelMultiVar:
      names.push_back("theta");
      per_env();
      break;
    case StructureKind::KernelAveraging:
      for (std::size_t m = 0; m < grid_.size(); ++m) names.push_back("sigma2_m" + std::to_string(m + 1));
      break;
  }
  return names;
}

std::vector<ParamType> VarianceStructure::parameter_types() const {
  std::vector<ParamType> types(static_cast<std::size_t>(parameter_count()), ParamType::Variance);
  if (kind_ == StructureKind::KernelSingleVar || kind_ == StructureKind::KernelMultiVar) {
    types.front() = ParamType::Bandwidth;
  }
  return types;
}

Eigen::VectorXd VarianceStructure::default_parameters(double phenotypic_variance) const {
  const double variance = 0.5 * phenotypic_variance;
  Eigen::VectorXd init = Eigen::VectorXd::Constant(parameter_count(), variance);
  if (kind_ == StructureKind::KernelAveraging) {
    init /= static_cast<double>(grid_.size());
  } else if (kind_ == StructureKind::KernelSingleVar || kind_ == StructureKind::KernelMultiVar) {
    const double dbar = mean_off_diagonal(fixed_);
    init(0) = dbar > 0.0 ? 1.0 / dbar : 1.0;
  }
  return init;
}

void VarianceStructure::check_kappa(const Eigen::VectorXd& kappa) const {
  if (kappa.size() != parameter_count()) {
    throw ContractViolation("structure '" + std::string(structure_kind_name(kind_)) + "' expects " +
                            std::to_string(parameter_count()) + " parameters, got " +
                            std::to_string(kappa.size()));
  }
  for (Eigen::Index i = 0; i < kappa.size(); ++i) {
    if (!(kappa(i) > 0.0) || !std::isfinite(kappa(i))) {
      throw ContractViolation("structure parameter " + std::to_string(i) + " must be finite and > 0");
    }
  }
}

AverageKernel VarianceStructure::average_kernel(const Eigen::VectorXd& kappa) const {
  if (kind_ != StructureKind::KernelAveraging) {
    throw ContractViolation("average_kernel requires a kernel-averaging structure");
  }
  if (kappa.size() != parameter_count()) throw ContractViolation("kernel-averaging weight count mismatch");
  if (!(kappa.array() >= 0.0).all() || !kappa.allFinite()) {
    throw ContractViolation("kernel-averaging weights must be finite and nonnegative");
  }
  AverageKernel out;
  out.sigma_tilde_sq = kappa.sum();
  if (!(out.sigma_tilde_sq > 0.0)) throw DataError("average_kernel: all kernel weights are zero");
  const Eigen::Index p = dimension();
  out.c_tilde = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t m = 0; m < grid_kernels_.size(); ++m) {
    out.c_tilde += (kappa(static_cast<Eigen::Index>(m)) / out.sigma_tilde_sq) * grid_kernels_[m];
  }
  // Every kernel has unit diagonal, so the weights sum to one there exactly.
  out.c_tilde.diagonal().setOnes();
  return out;
}

CovarianceWithDerivatives VarianceStructure::evaluate(const Eigen::VectorXd& kappa) const {
  check_kappa(kappa);
  const Eigen::Index p = dimension();
  CovarianceWithDerivatives out;
  switch (kind_) {
    case StructureKind::MainEffect:
    case StructureKind::CorrSingleVar:
      out.sigma = kappa(0) * fixed_;
      out.derivs.push_back(fixed_);
      break;
    case StructureKind::Diagonal:
      out.sigma = kappa.asDiagonal();
      for (Eigen::Index i = 0; i < p; ++i) {
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(p, p);
        d(i, i) = 1.0;
        out.derivs.push_back(std::move(d));
      }
      break;
    case StructureKind::CorrMultiVar: {
      const Eigen::VectorXd s = kappa.cwiseSqrt();
      out.sigma = scale_by_outer(s, fixed_);
      for (Eigen::Index i = 0; i < p; ++i) out.derivs.push_back(multi_variance_derivative(s, fixed_, i));
      break;
    }
    case StructureKind::KernelSingleVar: {
      const double theta = kappa(0);
      const double sigma2 = kappa(1);
      Eigen::MatrixXd kernel = gaussian_kernel(fixed_, theta);
      out.sigma = sigma2 * kernel;
      out.derivs.push_back(-sigma2 * fixed_.cwiseProduct(kernel));
      out.derivs.push_back(std::move(kernel));
      break;
    }
    case StructureKind::KernelMultiVar: {
      const double theta = kappa(0);
      const Eigen::VectorXd s = kappa.tail(p).cwiseSqrt();
      const Eigen::MatrixXd kernel = gaussian_kernel(fixed_, theta);
      out.sigma = scale_by_outer(s, kernel);
      out.derivs.push_back(-scale_by_outer(s, fixed_.cwiseProduct(kernel)));
      for (Eigen::Index i = 0; i < p; ++i) out.derivs.push_back(multi_variance_derivative(s, kernel, i));
      break;
    }
    case StructureKind::KernelAveraging: {
      const AverageKernel avg = average_kernel(kappa);
      out.sigma = avg.sigma_tilde_sq * avg.c_tilde;
      out.derivs = grid_kernels_;
      break;
    }
  }
  return out;
}

}  // namespace gxe
