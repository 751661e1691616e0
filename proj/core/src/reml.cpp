#include "gxe/reml.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "gxe/csv_io.hpp"
#include "gxe/error.hpp"
#include "gxe/log.hpp"

namespace gxe {

namespace {

constexpr double kLogBoundary = 30.0;
constexpr double kMaxLogStep = 3.0;
constexpr int kMaxHalvings = 30;

double sample_variance(const Eigen::VectorXd& y) {
  if (y.size() < 2) return 1.0;
  const double mean = y.mean();
  return (y.array() - mean).square().sum() / static_cast<double>(y.size() - 1);
}

// Solves (A + mu I) d = b for the smallest mu in a geometric ladder that gives
// a positive-definite system and an ascent direction.
Eigen::VectorXd regularized_step(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(a.diagonal().cwiseAbs().maxCoeff(), 1e-12);
  double mu = 0.0;
  for (int attempt = 0; attempt < 30; ++attempt) {
    Eigen::MatrixXd reg = a;
    reg.diagonal().array() += mu;
    Eigen::LLT<Eigen::MatrixXd> llt(reg);
    if (llt.info() == Eigen::Success) {
      Eigen::VectorXd d = llt.solve(b);
      if (d.allFinite() && d.dot(b) > 0.0) return d;
    }
    mu = mu == 0.0 ? 1e-10 * scale : mu * 10.0;
  }
  // Gradient ascent fallback.
  const double norm = b.norm();
  return norm > 0.0 ? Eigen::VectorXd(b / norm) : Eigen::VectorXd::Zero(b.size());
}

}  // namespace

struct RemlModel::Factorization {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double logdet_v = 0.0;
  Eigen::MatrixXd vinv_x;
  Eigen::LLT<Eigen::MatrixXd> xtvx;
  double logdet_xtvx = 0.0;
  Eigen::VectorXd beta;
  Eigen::VectorXd py;
  double ypy = 0.0;

  double loglik() const { return -0.5 * (logdet_v + logdet_xtvx + ypy); }
};

RemlModel::RemlModel(const Dataset& dataset, const CovarianceFunction& structure)
    : dataset_(dataset), structure_(structure) {
  if (structure.dimension() != dataset.n_environments()) {
    throw ContractViolation("structure dimension " + std::to_string(structure.dimension()) +
                            " does not match the dataset's " + std::to_string(dataset.n_environments()) +
                            " environments");
  }
  if (structure.environment_labels() != dataset.environment_labels()) {
    throw ContractViolation("structure environment labels do not match the dataset's environment order");
  }
  const Eigen::Index big_n = dataset.n_records();
  const Eigen::Index p = dataset.n_environments();
  if (dataset.n_genotypes() < 2) throw DataError("REML requires at least two genotypes");
  if (p < 2) throw DataError("REML requires at least two environments");
  // Same coding as build_design, except that environments without records
  // get no offset column: their mean is not estimable, but their BLUPs are.
  std::vector<bool> observed(static_cast<std::size_t>(p), false);
  for (Eigen::Index r = 0; r < big_n; ++r) observed[static_cast<std::size_t>(dataset.environment_of(r))] = true;
  if (!observed.front()) {
    throw DataError("reference environment '" + dataset.environment_labels().front() + "' has no records");
  }
  env_column_.assign(static_cast<std::size_t>(p), -1);
  Eigen::Index cols = 1;
  for (Eigen::Index e = 1; e < p; ++e) {
    if (observed[static_cast<std::size_t>(e)]) {
      env_column_[static_cast<std::size_t>(e)] = cols++;
    } else {
      log().warn("environment '{}' has no records; its mean is not estimable",
                 dataset.environment_labels()[static_cast<std::size_t>(e)]);
    }
  }
  x_ = Eigen::MatrixXd::Zero(big_n, cols);
  x_.col(0).setOnes();
  for (Eigen::Index r = 0; r < big_n; ++r) {
    const Eigen::Index c = env_column_[static_cast<std::size_t>(dataset.environment_of(r))];
    if (c > 0) x_(r, c) = 1.0;
  }
  y_ = dataset.response();
  env_.resize(static_cast<std::size_t>(big_n));
  genotype_.resize(static_cast<std::size_t>(big_n));
  for (Eigen::Index r = 0; r < big_n; ++r) {
    env_[static_cast<std::size_t>(r)] = dataset.environment_of(r);
    genotype_[static_cast<std::size_t>(r)] = dataset.genotype_of(r);
  }
  const auto& k = dataset.kinship().values();
  kzz_.resize(big_n, big_n);
  for (Eigen::Index s = 0; s < big_n; ++s) {
    for (Eigen::Index r = 0; r < big_n; ++r) {
      kzz_(r, s) = k(genotype_[static_cast<std::size_t>(r)], genotype_[static_cast<std::size_t>(s)]);
    }
  }
}

RemlModel::Factorization RemlModel::factorize(const Eigen::MatrixXd& sigma, double resid_var) const {
  if (!(resid_var > 0.0) || !std::isfinite(resid_var)) {
    throw ContractViolation("residual variance must be finite and > 0");
  }
  const Eigen::Index big_n = y_.size();
  Eigen::MatrixXd v(big_n, big_n);
  for (Eigen::Index s = 0; s < big_n; ++s) {
    const Eigen::Index es = env_[static_cast<std::size_t>(s)];
    for (Eigen::Index r = s; r < big_n; ++r) {
      v(r, s) = sigma(env_[static_cast<std::size_t>(r)], es) * kzz_(r, s);
    }
    v(s, s) += resid_var;
  }

  Factorization f;
  f.llt.compute(v);
  if (f.llt.info() != Eigen::Success) {
    const Eigen::VectorXd diag = v.diagonal();
    std::ostringstream msg;
    msg << "V is not positive definite (N = " << big_n << ", diag range [" << diag.minCoeff() << ", "
        << diag.maxCoeff() << "], residual variance " << resid_var << ")";
    throw NumericalError(msg.str());
  }
  const auto& l = f.llt.matrixLLT();
  f.logdet_v = 2.0 * l.diagonal().array().log().sum();
  if (!std::isfinite(f.logdet_v)) throw NumericalError("log|V| is not finite");

  f.vinv_x = f.llt.solve(x_);
  const Eigen::MatrixXd xtvx = x_.transpose() * f.vinv_x;
  f.xtvx.compute(xtvx);
  if (f.xtvx.info() != Eigen::Success) {
    throw NumericalError("X' V^-1 X is not positive definite; fixed-effect design is rank deficient");
  }
  f.logdet_xtvx = 2.0 * f.xtvx.matrixLLT().diagonal().array().log().sum();
  const Eigen::VectorXd vinv_y = f.llt.solve(y_);
  f.beta = f.xtvx.solve(x_.transpose() * vinv_y);
  f.py = vinv_y - f.vinv_x * f.beta;
  f.ypy = y_.dot(f.py);
  return f;
}

double RemlModel::loglik(const Eigen::VectorXd& kappa, double resid_var) const {
  const auto cov = structure_.evaluate(kappa);
  return factorize(cov.sigma, resid_var).loglik();
}

RemlModel::Evaluation RemlModel::evaluate(const Eigen::VectorXd& kappa, double resid_var,
                                          bool with_derivatives) const {
  const auto cov = structure_.evaluate(kappa);
  const Factorization f = factorize(cov.sigma, resid_var);
  Evaluation out;
  out.loglik = f.loglik();
  out.beta = Eigen::VectorXd::Constant(dataset_.n_environments(), std::numeric_limits<double>::quiet_NaN());
  out.beta(0) = f.beta(0);
  for (std::size_t e = 1; e < env_column_.size(); ++e) {
    if (env_column_[e] > 0) out.beta(static_cast<Eigen::Index>(e)) = f.beta(env_column_[e]);
  }
  out.py = f.py;
  out.sigma = cov.sigma;
  if (!with_derivatives) return out;

  const Eigen::Index big_n = y_.size();
  const Eigen::Index p = dataset_.n_environments();
  const auto k = static_cast<Eigen::Index>(cov.derivs.size());

  // P = V^-1 - V^-1 X (X' V^-1 X)^-1 X' V^-1, with V^-1 = L^-T L^-1.
  Eigen::MatrixXd linv = Eigen::MatrixXd::Identity(big_n, big_n);
  f.llt.matrixL().solveInPlace(linv);
  Eigen::MatrixXd proj = Eigen::MatrixXd::Zero(big_n, big_n);
  proj.selfadjointView<Eigen::Lower>().rankUpdate(linv.transpose());
  proj.triangularView<Eigen::StrictlyUpper>() = proj.transpose();
  proj.noalias() -= f.vinv_x * f.xtvx.solve(f.vinv_x.transpose());

  // With Vdot_i = Z (dSigma_i (x) K) Z', every term reduces to p x p or N x p
  // aggregates over environment blocks:
  //   tr(P Vdot_i)          = sum(dSigma_i o W),  W(a,b) = sum_{r in a, s in b} P(r,s) K(r,s)
  //   (Vdot_i P y)_r        = sum_b dSigma_i(e_r, b) M(r, b),  M(r,b) = sum_{s in b} K(r,s) (Py)_s
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(big_n, p);
  for (Eigen::Index s = 0; s < big_n; ++s) {
    const Eigen::Index es = env_[static_cast<std::size_t>(s)];
    const double py_s = f.py(s);
    for (Eigen::Index r = 0; r < big_n; ++r) {
      const double kk = kzz_(r, s);
      w(env_[static_cast<std::size_t>(r)], es) += proj(r, s) * kk;
      m(r, es) += kk * py_s;
    }
  }
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index r = 0; r < big_n; ++r) q.row(env_[static_cast<std::size_t>(r)]) += f.py(r) * m.row(r);

  Eigen::MatrixXd vdot_py(big_n, k + 1);
  out.gradient.resize(k + 1);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& d = cov.derivs[static_cast<std::size_t>(i)];
    const double trace = d.cwiseProduct(w).sum();
    const double quad = d.cwiseProduct(q).sum();
    out.gradient(i) = -0.5 * (trace - quad);
    for (Eigen::Index r = 0; r < big_n; ++r) {
      vdot_py(r, i) = m.row(r).dot(d.row(env_[static_cast<std::size_t>(r)]));
    }
  }
  out.gradient(k) = -0.5 * (proj.trace() - f.py.squaredNorm());
  vdot_py.col(k) = f.py;

  const Eigen::MatrixXd p_vdot_py = proj * vdot_py;
  out.ai = 0.5 * vdot_py.transpose() * p_vdot_py;
  out.ai = 0.5 * (out.ai + out.ai.transpose()).eval();
  return out;
}

Eigen::VectorXd RemlModel::cell_blups(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& py) const {
  // u_hat = (Sigma (x) K) Z' P y. R(g, b) = sum_{s in b} K(g, g_s) (Py)_s.
  const Eigen::Index n = dataset_.n_genotypes();
  const Eigen::Index p = dataset_.n_environments();
  const auto& k = dataset_.kinship().values();
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n, p);
  for (Eigen::Index s = 0; s < py.size(); ++s) {
    r.col(env_[static_cast<std::size_t>(s)]) += py(s) * k.col(genotype_[static_cast<std::size_t>(s)]);
  }
  const Eigen::MatrixXd u = r * sigma.transpose();  // n x p, column = environment
  return Eigen::Map<const Eigen::VectorXd>(u.data(), n * p);
}

double reml_loglik(const Dataset& dataset, const CovarianceFunction& structure, const Eigen::VectorXd& kappa,
                   double resid_var) {
  return RemlModel(dataset, structure).loglik(kappa, resid_var);
}

ScoreAndAi score_and_ai(const Dataset& dataset, const CovarianceFunction& structure, const Eigen::VectorXd& kappa,
                        double resid_var) {
  auto eval = RemlModel(dataset, structure).evaluate(kappa, resid_var, true);
  return {std::move(eval.gradient), std::move(eval.ai)};
}

double FitResult::blup(Eigen::Index genotype, Eigen::Index environment) const {
  const auto n = static_cast<Eigen::Index>(genotype_labels.size());
  return blups(environment * n + genotype);
}

double FitResult::environment_mean(Eigen::Index environment) const {
  return beta_hat(0) + (environment > 0 ? beta_hat(environment) : 0.0);
}

namespace {

FitResult make_result(const RemlModel& model, const Eigen::VectorXd& kappa, double resid_var,
                      const RemlModel::Evaluation& eval) {
  FitResult result;
  const auto& structure = model.structure();
  if (const auto* builtin = dynamic_cast<const VarianceStructure*>(&structure)) {
    result.structure_name = std::string(structure_kind_name(builtin->kind()));
  } else {
    result.structure_name = "custom";
  }
  result.parameter_names = structure.parameter_names();
  result.parameter_names.push_back("resid_var");
  result.kappa_hat = kappa;
  result.resid_var_hat = resid_var;
  result.beta_hat = eval.beta;
  result.ai_matrix = eval.ai;
  result.blups = model.cell_blups(eval.sigma, eval.py);
  result.genotype_labels = model.dataset().genotype_labels();
  result.environment_labels = model.dataset().environment_labels();
  return result;
}

}  // namespace

FitResult solution_at(const Dataset& dataset, const CovarianceFunction& structure, const Eigen::VectorXd& kappa,
                      double resid_var) {
  const RemlModel model(dataset, structure);
  const auto eval = model.evaluate(kappa, resid_var, true);
  FitResult result = make_result(model, kappa, resid_var, eval);
  result.loglik_trace = {eval.loglik};
  result.converged = true;
  return result;
}

FitResult fit(const Dataset& dataset, const CovarianceFunction& structure, const FitOptions& options) {
  const RemlModel model(dataset, structure);
  const Eigen::Index k = structure.parameter_count();
  const double var_y = sample_variance(dataset.response());
  if (!(options.tol > 0.0)) throw InvalidInputError("fit: tol must be > 0");
  if (options.max_iter < 1) throw InvalidInputError("fit: max_iter must be >= 1");

  Eigen::VectorXd params(k + 1);
  params.head(k) = options.init_kappa ? *options.init_kappa : structure.default_parameters(var_y);
  params(k) = options.init_resid_var ? *options.init_resid_var : 0.5 * var_y;
  if (options.init_kappa && options.init_kappa->size() != k) {
    throw ContractViolation("fit: initial kappa has " + std::to_string(options.init_kappa->size()) +
                            " entries, structure expects " + std::to_string(k));
  }
  if (!(params.array() > 0.0).all() || !params.allFinite()) {
    throw ContractViolation("fit: initial parameters must be finite and > 0");
  }
  std::vector<bool> frozen = options.fixed;
  if (frozen.empty()) frozen.assign(static_cast<std::size_t>(k + 1), false);
  if (frozen.size() != static_cast<std::size_t>(k + 1)) {
    throw ContractViolation("fit: fixed mask must have one entry per parameter including resid_var");
  }
  const std::vector<std::string> names = [&] {
    auto v = structure.parameter_names();
    v.push_back("resid_var");
    return v;
  }();

  Eigen::VectorXd log_params = params.array().log();
  // User-fixed parameters keep their exact initial value rather than exp(log(value)).
  auto natural = [&](const Eigen::VectorXd& lp) {
    Eigen::VectorXd t = lp.array().exp();
    for (Eigen::Index i = 0; i <= k; ++i) {
      if (!options.fixed.empty() && options.fixed[static_cast<std::size_t>(i)]) t(i) = params(i);
    }
    return t;
  };
  auto loglik_at = [&](const Eigen::VectorXd& lp) {
    const Eigen::VectorXd t = natural(lp);
    try {
      const double value = model.loglik(t.head(k), t(k));
      return std::isfinite(value) ? value : -std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };

  std::vector<std::string> warnings;
  std::vector<double> trace;
  bool converged = false;
  int iterations = 0;
  RemlModel::Evaluation eval = model.evaluate(params.head(k), params(k), true);
  trace.push_back(eval.loglik);

  for (iterations = 1; iterations <= options.max_iter; ++iterations) {
    const Eigen::VectorXd theta = natural(log_params);
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i <= k; ++i) {
      if (!frozen[static_cast<std::size_t>(i)]) free.push_back(i);
    }
    if (free.empty()) {
      converged = true;
      break;
    }
    const auto nf = static_cast<Eigen::Index>(free.size());
    Eigen::VectorXd g(nf);
    Eigen::MatrixXd ai(nf, nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      const Eigen::Index i = free[static_cast<std::size_t>(a)];
      g(a) = theta(i) * eval.gradient(i);
      for (Eigen::Index b = 0; b < nf; ++b) {
        const Eigen::Index j = free[static_cast<std::size_t>(b)];
        ai(a, b) = theta(i) * eval.ai(i, j) * theta(j);
      }
    }
    Eigen::VectorXd step = regularized_step(ai, g);
    const double biggest = step.cwiseAbs().maxCoeff();
    if (biggest > kMaxLogStep) step *= kMaxLogStep / biggest;

    const double current = trace.back();
    double accepted_loglik = current;
    Eigen::VectorXd accepted = log_params;
    double scale = 1.0;
    for (int h = 0; h <= kMaxHalvings; ++h, scale *= 0.5) {
      Eigen::VectorXd candidate = log_params;
      for (Eigen::Index a = 0; a < nf; ++a) candidate(free[static_cast<std::size_t>(a)]) += scale * step(a);
      const double value = loglik_at(candidate);
      if (value >= current) {
        accepted = std::move(candidate);
        accepted_loglik = value;
        break;
      }
    }

    const Eigen::VectorXd new_theta = natural(accepted);
    double max_rel = 0.0;
    for (Eigen::Index i : free) max_rel = std::max(max_rel, std::abs(new_theta(i) - theta(i)) / theta(i));
    const double delta = std::abs(accepted_loglik - current);
    log_params = accepted;
    trace.push_back(accepted_loglik);
    log().debug("REML iteration {}: loglik {:.10g}, change {:.3g}", iterations, accepted_loglik, delta);

    for (Eigen::Index i : free) {
      if (std::abs(log_params(i)) > kLogBoundary) {
        frozen[static_cast<std::size_t>(i)] = true;
        const std::string msg = "parameter '" + names[static_cast<std::size_t>(i)] + "' reached the boundary (log value " +
                                std::to_string(log_params(i)) + "); held fixed";
        log().warn("{}", msg);
        warnings.push_back(msg);
      }
    }

    eval = model.evaluate(new_theta.head(k), new_theta(k), true);
    if (delta < options.tol && max_rel < 10.0 * options.tol) {
      converged = true;
      break;
    }
  }
  iterations = std::min(iterations, options.max_iter);
  if (!converged) {
    const std::string msg = "REML did not converge in " + std::to_string(options.max_iter) + " iterations";
    log().info("{}", msg);
    warnings.push_back(msg);
  }

  const Eigen::VectorXd final_theta = natural(log_params);
  FitResult result = make_result(model, final_theta.head(k), final_theta(k), eval);
  result.loglik_trace = std::move(trace);
  result.converged = converged;
  result.iterations = iterations;
  result.warnings = std::move(warnings);
  return result;
}

std::vector<CellPrediction> predict_cells(const FitResult& fit, const std::vector<Cell>& targets) {
  std::map<std::string, Eigen::Index> genotypes;
  std::map<std::string, Eigen::Index> environments;
  for (std::size_t g = 0; g < fit.genotype_labels.size(); ++g) genotypes.emplace(fit.genotype_labels[g], g);
  for (std::size_t e = 0; e < fit.environment_labels.size(); ++e) environments.emplace(fit.environment_labels[e], e);
  std::vector<CellPrediction> out;
  out.reserve(targets.size());
  for (const auto& cell : targets) {
    auto g = genotypes.find(cell.genotype);
    if (g == genotypes.end()) throw DataError("predict: unknown genotype '" + cell.genotype + "'");
    auto e = environments.find(cell.environment);
    if (e == environments.end()) throw DataError("predict: unknown environment '" + cell.environment + "'");
    const double u = fit.blup(g->second, e->second);
    out.push_back({cell.genotype, cell.environment, u, fit.environment_mean(e->second) + u});
  }
  return out;
}

std::vector<CellPrediction> predict_cells(const FitResult& fit, const Dataset& dataset,
                                          const std::vector<Cell>& targets) {
  if (fit.genotype_labels != dataset.genotype_labels() || fit.environment_labels != dataset.environment_labels()) {
    throw ContractViolation("predict: fit result does not belong to this dataset");
  }
  return predict_cells(fit, targets);
}

void write_fit_result(const std::filesystem::path& dir, const FitResult& fit) {
  std::filesystem::create_directories(dir);
  using io::format_double;
  std::vector<std::vector<std::string>> params;
  params.push_back({"structure", fit.structure_name});
  for (Eigen::Index i = 0; i < fit.kappa_hat.size(); ++i) {
    params.push_back({fit.parameter_names.at(static_cast<std::size_t>(i)), format_double(fit.kappa_hat(i))});
  }
  params.push_back({"resid_var", format_double(fit.resid_var_hat)});
  params.push_back({"beta_intercept", format_double(fit.beta_hat(0))});
  for (Eigen::Index e = 1; e < fit.beta_hat.size(); ++e) {
    params.push_back({"beta_env_" + fit.environment_labels.at(static_cast<std::size_t>(e)), format_double(fit.beta_hat(e))});
  }
  params.push_back({"loglik", format_double(fit.loglik())});
  params.push_back({"converged", fit.converged ? "1" : "0"});
  params.push_back({"iterations", std::to_string(fit.iterations)});
  io::write_csv(dir / "params.csv", {"name", "value"}, params);

  std::vector<std::vector<std::string>> blups;
  const auto n = fit.genotype_labels.size();
  for (std::size_t e = 0; e < fit.environment_labels.size(); ++e) {
    for (std::size_t g = 0; g < n; ++g) {
      const double u = fit.blup(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(e));
      blups.push_back({fit.genotype_labels[g], fit.environment_labels[e], format_double(u),
                       format_double(fit.environment_mean(static_cast<Eigen::Index>(e)) + u)});
    }
  }
  io::write_csv(dir / "blups.csv", {"genotype", "environment", "blup", "fitted"}, blups);

  std::vector<std::vector<std::string>> trace;
  for (std::size_t i = 0; i < fit.loglik_trace.size(); ++i) {
    trace.push_back({std::to_string(i), format_double(fit.loglik_trace[i])});
  }
  io::write_csv(dir / "loglik.csv", {"iteration", "loglik"}, trace);

  io::write_labeled_matrix(dir / "ai.csv", {fit.ai_matrix, fit.parameter_names, fit.parameter_names});
}

FitResult read_fit_result(const std::filesystem::path& dir) {
  FitResult fit;
  const auto params = io::read_csv(dir / "params.csv");
  const auto name_col = params.column("name");
  const auto value_col = params.column("value");
  std::map<std::string, double> beta_env;
  std::vector<double> kappa;
  bool seen_resid = false;
  for (std::size_t r = 0; r < params.rows.size(); ++r) {
    const auto& name = params.rows[r][name_col];
    if (name == "structure") {
      fit.structure_name = params.rows[r][value_col];
    } else if (name == "resid_var") {
      fit.resid_var_hat = params.number(r, value_col);
      seen_resid = true;
    } else if (name == "beta_intercept") {
      beta_env[""] = params.number(r, value_col);
    } else if (name.rfind("beta_env_", 0) == 0) {
      beta_env[name.substr(9)] = params.rows[r][value_col] == "NA" ? std::numeric_limits<double>::quiet_NaN()
                                                                   : params.number(r, value_col);
    } else if (name == "converged") {
      fit.converged = params.number(r, value_col) != 0.0;
    } else if (name == "iterations") {
      fit.iterations = static_cast<int>(params.number(r, value_col));
    } else if (name == "loglik") {
      fit.loglik_trace = {params.number(r, value_col)};
    } else if (!seen_resid) {
      fit.parameter_names.push_back(name);
      kappa.push_back(params.number(r, value_col));
    }
  }
  fit.parameter_names.push_back("resid_var");
  fit.kappa_hat = Eigen::Map<Eigen::VectorXd>(kappa.data(), static_cast<Eigen::Index>(kappa.size()));

  const auto blups = io::read_csv(dir / "blups.csv");
  const auto g_col = blups.column("genotype");
  const auto e_col = blups.column("environment");
  const auto u_col = blups.column("blup");
  std::map<std::string, std::size_t> g_index;
  std::map<std::string, std::size_t> e_index;
  for (const auto& row : blups.rows) {
    if (g_index.emplace(row[g_col], fit.genotype_labels.size()).second) fit.genotype_labels.push_back(row[g_col]);
    if (e_index.emplace(row[e_col], fit.environment_labels.size()).second) fit.environment_labels.push_back(row[e_col]);
  }
  const auto n = fit.genotype_labels.size();
  const auto p = fit.environment_labels.size();
  if (blups.rows.size() != n * p) throw DataError((dir / "blups.csv").string() + ": expected one row per cell");
  fit.blups = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n * p), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t r = 0; r < blups.rows.size(); ++r) {
    const auto cell = e_index.at(blups.rows[r][e_col]) * n + g_index.at(blups.rows[r][g_col]);
    fit.blups(static_cast<Eigen::Index>(cell)) = blups.number(r, u_col);
  }
  if (!fit.blups.allFinite()) throw DataError((dir / "blups.csv").string() + ": duplicate or missing cells");

  fit.beta_hat = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  if (!beta_env.count("")) throw DataError((dir / "params.csv").string() + ": missing beta_intercept");
  fit.beta_hat(0) = beta_env.at("");
  for (std::size_t e = 1; e < p; ++e) {
    auto it = beta_env.find(fit.environment_labels[e]);
    if (it == beta_env.end()) {
      throw DataError((dir / "params.csv").string() + ": missing beta_env_" + fit.environment_labels[e]);
    }
    fit.beta_hat(static_cast<Eigen::Index>(e)) = it->second;
  }
  if (std::filesystem::exists(dir / "ai.csv")) fit.ai_matrix = io::read_labeled_matrix(dir / "ai.csv").values;
  return fit;
}

std::vector<Cell> read_cells_csv(const std::filesystem::path& path) {
  const auto table = io::read_csv(path);
  const auto g = table.column("genotype");
  const auto e = table.column("environment");
  std::vector<Cell> cells;
  for (const auto& row : table.rows) cells.push_back({row[g], row[e]});
  return cells;
}

void write_predictions_csv(const std::filesystem::path& path, const std::vector<CellPrediction>& predictions) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& p : predictions) {
    rows.push_back({p.genotype, p.environment, io::format_double(p.blup), io::format_double(p.fitted)});
  }
  io::write_csv(path, {"genotype", "environment", "blup", "fitted"}, rows);
}

}  // namespace gxe
