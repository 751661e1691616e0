#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gxe/dataset.hpp"
#include "gxe/variance_structure.hpp"

namespace gxe {

// REML for y = X beta + Z u + e with Var(u) = Sigma(kappa) (x) K and
// Var(e) = resid_var * I. The log-likelihood omits additive constants:
//   l_R = -1/2 [ log|V| + log|X' V^-1 X| + y' P y ].
// Parameters are ordered [kappa..., resid_var] wherever they are stacked.
class RemlModel {
 public:
  // Both references must outlive the model.
  RemlModel(const Dataset& dataset, const CovarianceFunction& structure);

  struct Evaluation {
    double loglik = 0.0;
    Eigen::VectorXd gradient;  // dl_R / d(kappa, resid_var)
    Eigen::MatrixXd ai;        // average information, same parameter order
    Eigen::VectorXd beta;      // intercept, then offsets for environments 2..p (NaN if unobserved)
    Eigen::VectorXd py;        // P y
    Eigen::MatrixXd sigma;     // Sigma(kappa)
  };

  double loglik(const Eigen::VectorXd& kappa, double resid_var) const;
  Evaluation evaluate(const Eigen::VectorXd& kappa, double resid_var, bool with_derivatives = true) const;

  // BLUPs for all n*p cells (genotype-within-environment order) given Sigma and P y.
  Eigen::VectorXd cell_blups(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& py) const;

  const Dataset& dataset() const { return dataset_; }
  const CovarianceFunction& structure() const { return structure_; }
  const Eigen::MatrixXd& fixed_design() const { return x_; }

 private:
  struct Factorization;
  Factorization factorize(const Eigen::MatrixXd& sigma, double resid_var) const;

  const Dataset& dataset_;
  const CovarianceFunction& structure_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd kzz_;                // K(g_r, g_s)
  std::vector<Eigen::Index> env_;      // environment of each record
  std::vector<Eigen::Index> genotype_; // genotype of each record
  std::vector<Eigen::Index> env_column_;  // X column of each environment offset, -1 if none
};

double reml_loglik(const Dataset& dataset, const CovarianceFunction& structure, const Eigen::VectorXd& kappa,
                   double resid_var);

struct ScoreAndAi {
  Eigen::VectorXd gradient;
  Eigen::MatrixXd ai;
};

ScoreAndAi score_and_ai(const Dataset& dataset, const CovarianceFunction& structure, const Eigen::VectorXd& kappa,
                        double resid_var);

struct FitOptions {
  std::optional<Eigen::VectorXd> init_kappa;  // default: structure.default_parameters(var(y))
  std::optional<double> init_resid_var;       // default: 0.5 var(y)
  // Parameters held at their initial value; size k + 1 when non-empty.
  std::vector<bool> fixed;
  int max_iter = 100;
  double tol = 1e-6;
};

struct FitResult {
  std::string structure_name;
  std::vector<std::string> parameter_names;  // kappa names then "resid_var"
  Eigen::VectorXd kappa_hat;
  double resid_var_hat = 0.0;
  Eigen::VectorXd beta_hat;  // intercept, then environments 2..p; NaN where not estimable
  std::vector<double> loglik_trace;
  Eigen::MatrixXd ai_matrix;  // (k+1) x (k+1), natural parameter scale
  Eigen::VectorXd blups;      // n*p, cell = env * n + genotype
  std::vector<std::string> genotype_labels;
  std::vector<std::string> environment_labels;
  bool converged = false;
  int iterations = 0;
  std::vector<std::string> warnings;

  double loglik() const { return loglik_trace.empty() ? 0.0 : loglik_trace.back(); }
  double blup(Eigen::Index genotype, Eigen::Index environment) const;
  // Fixed-effect mean of an environment: intercept plus its offset.
  double environment_mean(Eigen::Index environment) const;
};

// Average-information REML on log-transformed parameters with step halving.
// Converged when |delta l_R| < tol and max relative parameter change < 10 tol.
// Running out of iterations yields converged = false, not an exception.
FitResult fit(const Dataset& dataset, const CovarianceFunction& structure, const FitOptions& options = {});

// Estimates and BLUPs at fixed parameter values (no optimization).
FitResult solution_at(const Dataset& dataset, const CovarianceFunction& structure, const Eigen::VectorXd& kappa,
                      double resid_var);

struct CellPrediction {
  std::string genotype;
  std::string environment;
  double blup = 0.0;
  double fitted = 0.0;
};

struct Cell {
  std::string genotype;
  std::string environment;
};

// Conditional-mean predictions. Unknown labels throw DataError.
std::vector<CellPrediction> predict_cells(const FitResult& fit, const std::vector<Cell>& targets);
std::vector<CellPrediction> predict_cells(const FitResult& fit, const Dataset& dataset,
                                          const std::vector<Cell>& targets);

// Result directory: params.csv, blups.csv, loglik.csv, ai.csv.
void write_fit_result(const std::filesystem::path& dir, const FitResult& fit);
FitResult read_fit_result(const std::filesystem::path& dir);

std::vector<Cell> read_cells_csv(const std::filesystem::path& path);
void write_predictions_csv(const std::filesystem::path& path, const std::vector<CellPrediction>& predictions);

}  // namespace gxe
