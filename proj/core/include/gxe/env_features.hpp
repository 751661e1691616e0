#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace gxe {

// One day of weather for one trial. Temperatures in degrees Fahrenheit.
struct DailyWeatherRecord {
  std::string environment_id;
  int day_index = 1;
  double t_min = 0.0;
  double t_max = 0.0;
  std::map<std::string, double> covariates;
};

// q x p: rows are standardized intercepts, columns are environments.
struct EnvFeatureMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> variable_labels;
  std::vector<std::string> environment_labels;
};

struct EnvCorrelationMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> labels;
};

struct EnvDistanceMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> labels;
};

struct GddWindow {
  double lo = 0.0;
  double hi = 0.0;
};

// Daily growing degree days for corn: t_min is floored at 50, t_max capped
// at 86, result is their midpoint minus 50. Negative values are returned
// as-is (no flooring at zero).
double gdd_daily(double t_min, double t_max);

// Running sum of gdd_daily.
std::vector<double> gdd_accumulate(std::span<const std::pair<double, double>> days);

// Piecewise-constant fit of value on accumulated GDD: one mean per bin
// [lo + k*interval, lo + (k+1)*interval) inside the window. Points outside
// the window are discarded; an empty bin throws DataError.
std::vector<double> piecewise_intercepts(std::span<const std::pair<double, double>> points,
                                         double interval, GddWindow window);

// Centers each row and divides by its population standard deviation.
EnvFeatureMatrix standardize_rows(const Eigen::MatrixXd& raw, std::vector<std::string> variable_labels,
                                  std::vector<std::string> environment_labels);

// X^T X / q rescaled to unit diagonal. The rescaling is a no-op when every
// column of X has squared norm q.
EnvCorrelationMatrix env_correlation(const EnvFeatureMatrix& features);

// D(i,j) = sum_k (X(k,i) - X(k,j))^2.
EnvDistanceMatrix env_distance(const EnvFeatureMatrix& features);

// (1 - lambda) * truth + lambda * noise.
EnvCorrelationMatrix blend_correlation(const EnvCorrelationMatrix& truth, const EnvCorrelationMatrix& noise,
                                       double lambda);

// Seeded random correlation matrix: A (p x p, iid N(0,1) from a
// std::mt19937_64 seeded with `seed`), R = A A^T rescaled to unit diagonal.
EnvCorrelationMatrix random_correlation(int p, std::uint64_t seed, std::vector<std::string> labels = {});

// Weather CSV: environment,day,t_min,t_max,<covariates...>. Only the
// requested covariate columns are kept.
std::vector<DailyWeatherRecord> read_weather_csv(const std::filesystem::path& path,
                                                 const std::vector<std::string>& variables);

struct EnvProcessOptions {
  std::vector<std::string> variables;
  double interval = 100.0;
  GddWindow window;
};

// Whole weather pipeline: per environment accumulate GDD, bin each variable,
// then stack (variable, bin) rows and standardize across environments.
// Environments keep their order of first appearance.
EnvFeatureMatrix build_env_features(const std::vector<DailyWeatherRecord>& weather,
                                    const EnvProcessOptions& options);

}  // namespace gxe
