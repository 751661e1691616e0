#include "gxe/env_features.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "gxe/csv_io.hpp"
#include "gxe/error.hpp"

namespace gxe {

namespace {

constexpr double kGddBase = 50.0;
constexpr double kGddCap = 86.0;
constexpr double kStandardizedTol = 1e-10;

void require_standardized(const EnvFeatureMatrix& features) {
  const auto& x = features.values;
  if (x.rows() == 0 || x.cols() < 2) {
    throw ContractViolation("environment features must have at least one row and two environments");
  }
  if (features.environment_labels.size() != static_cast<std::size_t>(x.cols())) {
    throw ContractViolation("environment feature labels do not match matrix columns");
  }
  for (Eigen::Index k = 0; k < x.rows(); ++k) {
    const double mean = x.row(k).mean();
    const double var = x.row(k).squaredNorm() / static_cast<double>(x.cols()) - mean * mean;
    if (std::abs(mean) > kStandardizedTol || std::abs(var - 1.0) > kStandardizedTol) {
      throw ContractViolation("environment feature row " + std::to_string(k) +
                              " is not standardized (mean 0, population sd 1)");
    }
  }
}

std::string bin_label(double lo, double hi) {
  std::ostringstream out;
  out << '[' << lo << ',' << hi << ')';
  return out.str();
}

}  // namespace

double gdd_daily(double t_min, double t_max) {
  if (!std::isfinite(t_min) || !std::isfinite(t_max)) {
    throw InvalidInputError("gdd_daily: temperatures must be finite");
  }
  const double lo = t_min < kGddBase ? kGddBase : t_min;
  const double hi = t_max > kGddCap ? kGddCap : t_max;
  return (lo + hi) / 2.0 - kGddBase;
}

std::vector<double> gdd_accumulate(std::span<const std::pair<double, double>> days) {
  if (days.empty()) throw InvalidInputError("gdd_accumulate: empty day sequence");
  std::vector<double> total;
  total.reserve(days.size());
  double running = 0.0;
  for (const auto& [t_min, t_max] : days) {
    running += gdd_daily(t_min, t_max);
    total.push_back(running);
  }
  return total;
}

std::vector<double> piecewise_intercepts(std::span<const std::pair<double, double>> points, double interval,
                                         GddWindow window) {
  if (!(interval > 0.0)) throw InvalidInputError("piecewise_intercepts: interval must be > 0");
  if (!(window.lo < window.hi)) throw InvalidInputError("piecewise_intercepts: window requires lo < hi");
  const double lo_bins = window.lo / interval;
  const double hi_bins = window.hi / interval;
  if (std::abs(lo_bins - std::round(lo_bins)) > 1e-9 || std::abs(hi_bins - std::round(hi_bins)) > 1e-9) {
    throw InvalidInputError("piecewise_intercepts: window bounds must be multiples of the interval");
  }
  const auto n_bins = static_cast<std::size_t>(std::llround(hi_bins - lo_bins));
  std::vector<double> sums(n_bins, 0.0);
  std::vector<std::size_t> counts(n_bins, 0);
  for (const auto& [gdd, value] : points) {
    if (gdd < window.lo || gdd >= window.hi) continue;
    auto bin = static_cast<std::size_t>(std::floor((gdd - window.lo) / interval));
    bin = std::min(bin, n_bins - 1);
    sums[bin] += value;
    ++counts[bin];
  }
  std::vector<double> means(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (counts[b] == 0) {
      const double lo = window.lo + static_cast<double>(b) * interval;
      throw DataError("piecewise_intercepts: empty GDD bin " + bin_label(lo, lo + interval));
    }
    means[b] = sums[b] / static_cast<double>(counts[b]);
  }
  return means;
}

EnvFeatureMatrix standardize_rows(const Eigen::MatrixXd& raw, std::vector<std::string> variable_labels,
                                  std::vector<std::string> environment_labels) {
  if (raw.cols() < 2) throw InvalidInputError("standardize_rows: need at least two environments");
  if (variable_labels.empty()) {
    for (Eigen::Index k = 0; k < raw.rows(); ++k) variable_labels.push_back("v" + std::to_string(k + 1));
  }
  if (environment_labels.empty()) {
    for (Eigen::Index j = 0; j < raw.cols(); ++j) environment_labels.push_back("E" + std::to_string(j + 1));
  }
  if (variable_labels.size() != static_cast<std::size_t>(raw.rows()) ||
      environment_labels.size() != static_cast<std::size_t>(raw.cols())) {
    throw InvalidInputError("standardize_rows: label counts do not match matrix shape");
  }
  EnvFeatureMatrix out{raw, std::move(variable_labels), std::move(environment_labels)};
  const auto p = static_cast<double>(raw.cols());
  for (Eigen::Index k = 0; k < raw.rows(); ++k) {
    auto row = out.values.row(k);
    row.array() -= row.mean();
    const double sd = std::sqrt(row.squaredNorm() / p);
    const double scale = std::max(1.0, raw.row(k).cwiseAbs().maxCoeff());
    if (!(sd > 1e-12 * scale)) {
      throw DataError("standardize_rows: variable '" + out.variable_labels[static_cast<std::size_t>(k)] +
                      "' has zero variance across environments");
    }
    row /= sd;
  }
  return out;
}

EnvCorrelationMatrix env_correlation(const EnvFeatureMatrix& features) {
  require_standardized(features);
  const auto& x = features.values;
  Eigen::MatrixXd c = (x.transpose() * x) / static_cast<double>(x.rows());
  // Row standardization fixes only the mean of diag(X'X/q) at 1, so rescale
  // to a proper correlation matrix.
  const Eigen::VectorXd diag = c.diagonal();
  for (Eigen::Index i = 0; i < diag.size(); ++i) {
    if (!(diag(i) > 0.0)) {
      throw DataError("environment '" + features.environment_labels.at(static_cast<std::size_t>(i)) +
                      "' has all features at the cross-environment mean; correlation undefined");
    }
  }
  const Eigen::VectorXd inv_sd = diag.cwiseSqrt().cwiseInverse();
  c = (inv_sd.asDiagonal() * c * inv_sd.asDiagonal()).eval();
  c = 0.5 * (c + c.transpose()).eval();
  c = c.cwiseMax(-1.0).cwiseMin(1.0);
  c.diagonal().setOnes();
  return {std::move(c), features.environment_labels};
}

EnvDistanceMatrix env_distance(const EnvFeatureMatrix& features) {
  require_standardized(features);
  const auto& x = features.values;
  const Eigen::Index p = x.cols();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = i + 1; j < p; ++j) {
      d(i, j) = d(j, i) = (x.col(i) - x.col(j)).squaredNorm();
    }
  }
  return {std::move(d), features.environment_labels};
}

EnvCorrelationMatrix blend_correlation(const EnvCorrelationMatrix& truth, const EnvCorrelationMatrix& noise,
                                       double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw InvalidInputError("blend_correlation: lambda must lie in [0, 1]");
  }
  if (truth.values.rows() != noise.values.rows() || truth.values.cols() != noise.values.cols()) {
    throw InvalidInputError("blend_correlation: matrix dimensions differ");
  }
  if (!truth.labels.empty() && !noise.labels.empty() && truth.labels != noise.labels) {
    throw InvalidInputError("blend_correlation: environment labels differ");
  }
  if (lambda == 0.0) return truth;
  if (lambda == 1.0) return {noise.values, truth.labels.empty() ? noise.labels : truth.labels};
  Eigen::MatrixXd blended = (1.0 - lambda) * truth.values + lambda * noise.values;
  blended.diagonal().setOnes();
  return {std::move(blended), truth.labels};
}

EnvCorrelationMatrix random_correlation(int p, std::uint64_t seed, std::vector<std::string> labels) {
  if (p < 2) throw InvalidInputError("random_correlation: p must be at least 2");
  if (labels.empty()) {
    for (int j = 0; j < p; ++j) labels.push_back("E" + std::to_string(j + 1));
  }
  if (labels.size() != static_cast<std::size_t>(p)) {
    throw InvalidInputError("random_correlation: label count does not match p");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(p, p);
  // Filled row-major so the draw order is independent of Eigen's storage.
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) a(i, j) = normal(rng);
  }
  Eigen::MatrixXd r = a * a.transpose();
  const Eigen::VectorXd inv_sd = r.diagonal().cwiseSqrt().cwiseInverse();
  r = inv_sd.asDiagonal() * r * inv_sd.asDiagonal();
  r = 0.5 * (r + r.transpose()).eval();
  r.diagonal().setOnes();
  return {std::move(r), std::move(labels)};
}

std::vector<DailyWeatherRecord> read_weather_csv(const std::filesystem::path& path,
                                                 const std::vector<std::string>& variables) {
  const io::CsvTable table = io::read_csv(path);
  const auto env_col = table.column("environment");
  const auto day_col = table.column("day");
  const auto tmin_col = table.column("t_min");
  const auto tmax_col = table.column("t_max");
  std::vector<std::size_t> var_cols;
  for (const auto& name : variables) var_cols.push_back(table.column(name));

  std::vector<DailyWeatherRecord> records;
  records.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    DailyWeatherRecord rec;
    rec.environment_id = table.rows[r][env_col];
    if (rec.environment_id.empty()) {
      throw DataError(path.string() + ": row " + std::to_string(r + 2) + ": empty environment id");
    }
    const double day = table.number(r, day_col);
    if (day < 1.0 || day != std::floor(day)) {
      throw DataError(path.string() + ": row " + std::to_string(r + 2) + ", column 'day': must be an integer >= 1");
    }
    rec.day_index = static_cast<int>(day);
    rec.t_min = table.number(r, tmin_col);
    rec.t_max = table.number(r, tmax_col);
    if (rec.t_min > rec.t_max) {
      throw DataError(path.string() + ": row " + std::to_string(r + 2) + ": t_min exceeds t_max");
    }
    for (std::size_t v = 0; v < variables.size(); ++v) rec.covariates[variables[v]] = table.number(r, var_cols[v]);
    records.push_back(std::move(rec));
  }
  return records;
}

EnvFeatureMatrix build_env_features(const std::vector<DailyWeatherRecord>& weather,
                                    const EnvProcessOptions& options) {
  if (options.variables.empty()) throw InvalidInputError("env-process: at least one variable is required");
  std::vector<std::string> env_order;
  std::map<std::string, std::vector<const DailyWeatherRecord*>> by_env;
  for (const auto& rec : weather) {
    auto [it, inserted] = by_env.try_emplace(rec.environment_id);
    if (inserted) env_order.push_back(rec.environment_id);
    it->second.push_back(&rec);
  }
  if (env_order.size() < 2) throw DataError("env-process: weather data covers fewer than two environments");

  std::vector<std::vector<double>> columns;  // one per environment, stacked (variable, bin)
  std::size_t n_bins = 0;
  for (const auto& env : env_order) {
    const auto& days = by_env.at(env);
    std::vector<std::pair<double, double>> temps;
    temps.reserve(days.size());
    for (std::size_t k = 0; k < days.size(); ++k) {
      if (k > 0 && days[k]->day_index <= days[k - 1]->day_index) {
        throw DataError("env-process: environment '" + env + "': day index not strictly increasing at day " +
                        std::to_string(days[k]->day_index));
      }
      temps.emplace_back(days[k]->t_min, days[k]->t_max);
    }
    const auto cumulative = gdd_accumulate(temps);
    std::vector<double> column;
    for (const auto& var : options.variables) {
      std::vector<std::pair<double, double>> points;
      points.reserve(days.size());
      for (std::size_t k = 0; k < days.size(); ++k) points.emplace_back(cumulative[k], days[k]->covariates.at(var));
      std::vector<double> bins;
      try {
        bins = piecewise_intercepts(points, options.interval, options.window);
      } catch (const DataError& e) {
        throw DataError("env-process: environment '" + env + "', variable '" + var + "': " + e.what());
      }
      n_bins = bins.size();
      column.insert(column.end(), bins.begin(), bins.end());
    }
    columns.push_back(std::move(column));
  }

  const auto q = static_cast<Eigen::Index>(columns.front().size());
  const auto p = static_cast<Eigen::Index>(env_order.size());
  Eigen::MatrixXd raw(q, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index k = 0; k < q; ++k) raw(k, j) = columns[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
  }
  std::vector<std::string> row_labels;
  for (const auto& var : options.variables) {
    for (std::size_t b = 0; b < n_bins; ++b) {
      const double lo = options.window.lo + static_cast<double>(b) * options.interval;
      row_labels.push_back(var + bin_label(lo, lo + options.interval));
    }
  }
  return standardize_rows(raw, std::move(row_labels), std::move(env_order));
}

}  // namespace gxe
