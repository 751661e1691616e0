#include "gxe/cv.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "gxe/csv_io.hpp"
#include "gxe/error.hpp"
#include "gxe/log.hpp"

namespace gxe {

namespace {

constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;
constexpr std::uint64_t kNoiseCorrStream = 0x6e636f7272ULL;

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

double mean(const std::vector<double>& values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

struct ModelRun {
  StructureKind kind;
  std::optional<double> lambda;
};

}  // namespace

SparseSplit sparse_split(const Dataset& dataset, const SparseDesign& design, std::uint64_t replicate_index) {
  const Eigen::Index p = dataset.n_environments();
  if (design.n_checks < 1) throw InvalidInputError("sparse design: n_checks must be >= 1");
  if (design.envs_per_variety < 1 || design.envs_per_variety >= p) {
    throw InvalidInputError("sparse design: envs_per_variety must satisfy 1 <= k < p (p = " + std::to_string(p) + ")");
  }
  const Eigen::Index n = dataset.n_genotypes();
  std::vector<std::vector<Eigen::Index>> records_of(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < dataset.n_records(); ++r) {
    records_of[static_cast<std::size_t>(dataset.genotype_of(r))].push_back(r);
  }
  std::vector<Eigen::Index> complete;
  std::vector<Eigen::Index> present;
  for (Eigen::Index g = 0; g < n; ++g) {
    const auto count = static_cast<Eigen::Index>(records_of[static_cast<std::size_t>(g)].size());
    if (count > 0) present.push_back(g);
    if (count == p) complete.push_back(g);
  }
  if (static_cast<Eigen::Index>(complete.size()) < design.n_checks) {
    throw DataError("sparse design: only " + std::to_string(complete.size()) +
                    " genotypes are observed in every environment, need " + std::to_string(design.n_checks) +
                    " checks");
  }

  auto rng = make_rng(design.seed, {kSplitStream, replicate_index});
  std::shuffle(complete.begin(), complete.end(), rng);
  const std::set<Eigen::Index> checks(complete.begin(), complete.begin() + design.n_checks);

  std::vector<bool> in_train(static_cast<std::size_t>(dataset.n_records()), false);
  for (Eigen::Index g : present) {
    auto recs = records_of[static_cast<std::size_t>(g)];
    if (checks.count(g)) {
      for (auto r : recs) in_train[static_cast<std::size_t>(r)] = true;
      continue;
    }
    if (static_cast<int>(recs.size()) < design.envs_per_variety) {
      throw DataError("sparse design: genotype '" + dataset.genotype_labels()[static_cast<std::size_t>(g)] +
                      "' has only " + std::to_string(recs.size()) + " records, need " +
                      std::to_string(design.envs_per_variety));
    }
    std::shuffle(recs.begin(), recs.end(), rng);
    for (int k = 0; k < design.envs_per_variety; ++k) in_train[static_cast<std::size_t>(recs[static_cast<std::size_t>(k)])] = true;
  }

  std::vector<PhenotypeRecord> train;
  std::vector<Cell> test;
  for (Eigen::Index r = 0; r < dataset.n_records(); ++r) {
    const auto& rec = dataset.records()[static_cast<std::size_t>(r)];
    if (in_train[static_cast<std::size_t>(r)]) {
      train.push_back(rec);
    } else {
      test.push_back({rec.genotype, rec.environment});
    }
  }
  std::vector<std::string> check_labels;
  for (auto g : checks) check_labels.push_back(dataset.genotype_labels()[static_cast<std::size_t>(g)]);
  return SparseSplit{dataset.with_records(std::move(train)), std::move(test), std::move(check_labels)};
}

Accuracy within_env_accuracy(const std::vector<CellValue>& predicted, const std::vector<CellValue>& truth) {
  std::map<std::pair<std::string, std::string>, double> truth_by_cell;
  for (const auto& t : truth) truth_by_cell[{t.genotype, t.environment}] = t.value;
  std::map<std::string, std::vector<std::pair<double, double>>> by_env;  // (predicted, truth)
  for (const auto& pr : predicted) {
    auto it = truth_by_cell.find({pr.genotype, pr.environment});
    if (it == truth_by_cell.end()) {
      throw DataError("accuracy: no true value for cell (" + pr.genotype + ", " + pr.environment + ")");
    }
    by_env[pr.environment].emplace_back(pr.value, it->second);
  }
  Accuracy acc;
  std::vector<double> pearsons;
  std::vector<double> rmses;
  for (const auto& [env, pairs] : by_env) {
    const auto m = static_cast<double>(pairs.size());
    double sq = 0.0;
    double mp = 0.0;
    double mt = 0.0;
    for (const auto& [a, b] : pairs) {
      sq += (a - b) * (a - b);
      mp += a;
      mt += b;
    }
    rmses.push_back(std::sqrt(sq / m));
    mp /= m;
    mt /= m;
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (const auto& [a, b] : pairs) {
      sab += (a - mp) * (b - mt);
      saa += (a - mp) * (a - mp);
      sbb += (b - mt) * (b - mt);
    }
    if (pairs.size() < 2 || !(saa > 0.0) || !(sbb > 0.0)) {
      ++acc.undefined_pearson;
      continue;
    }
    pearsons.push_back(std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0));
  }
  acc.environments = static_cast<int>(by_env.size());
  acc.mean_rmse = mean(rmses);
  acc.mean_pearson = mean(pearsons);
  if (acc.undefined_pearson > 0) {
    log().info("accuracy: {} environment(s) with undefined Pearson correlation excluded", acc.undefined_pearson);
  }
  return acc;
}

EnvCorrelationMatrix covariance_to_correlation(const Eigen::MatrixXd& sigma, std::vector<std::string> labels) {
  const Eigen::VectorXd d = sigma.diagonal();
  if (!(d.array() > 0.0).all()) throw DataError("covariance matrix has a nonpositive variance");
  const Eigen::VectorXd inv_sd = d.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd c = inv_sd.asDiagonal() * sigma * inv_sd.asDiagonal();
  c = 0.5 * (c + c.transpose()).eval();
  c.diagonal().setOnes();
  return {std::move(c), std::move(labels)};
}

CvReport run_cv(const CvSetup& setup) {
  if (setup.dataset.has_value() == setup.simulation.has_value()) {
    throw InvalidInputError("cv: give exactly one of a dataset or a simulation config");
  }
  if (setup.models.empty()) throw InvalidInputError("cv: no models given");
  if (setup.design.replicates < 1) throw InvalidInputError("cv: replicates must be >= 1");
  for (double lambda : setup.lambdas) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidInputError("cv: lambda values must lie in [0, 1]");
  }

  std::optional<MetSimulator> simulator;
  std::vector<std::string> env_labels;
  std::optional<EnvCorrelationMatrix> base_corr = setup.corr;
  if (setup.simulation) {
    simulator.emplace(*setup.simulation);
    env_labels = setup.simulation->truth_structure->environment_labels();
    if (!base_corr) {
      const auto sigma = setup.simulation->truth_structure->evaluate(setup.simulation->truth_kappa).sigma;
      base_corr = covariance_to_correlation(sigma, env_labels);
    }
  } else {
    env_labels = setup.dataset->environment_labels();
  }
  const auto p = static_cast<int>(env_labels.size());

  std::vector<ModelRun> runs;
  for (auto kind : setup.models) {
    if (uses_correlation(kind) && !base_corr) throw InvalidInputError("cv: correlation models need a correlation matrix");
    if (uses_distance(kind) && !setup.dist) throw InvalidInputError("cv: kernel models need a distance matrix");
    if (uses_correlation(kind) && !setup.lambdas.empty()) {
      for (double lambda : setup.lambdas) runs.push_back({kind, lambda});
    } else {
      runs.push_back({kind, std::nullopt});
    }
  }
  if (base_corr && base_corr->labels != env_labels) throw DataError("cv: correlation matrix labels do not match environments");
  if (setup.dist && setup.dist->labels != env_labels) throw DataError("cv: distance matrix labels do not match environments");

  // Structures that do not change between replicates.
  std::map<StructureKind, std::shared_ptr<const VarianceStructure>> fixed_structures;
  for (const auto& run : runs) {
    if (run.lambda || fixed_structures.count(run.kind)) continue;
    fixed_structures[run.kind] = std::make_shared<const VarianceStructure>(
        VarianceStructure::make(run.kind, env_labels, base_corr, setup.dist, setup.grid));
  }

  auto run_replicate = [&](int rep) {
    std::vector<CvRow> rows;
    const auto rep_index = static_cast<std::uint64_t>(rep);
    std::optional<SimOutput> sim;
    if (simulator) sim.emplace(simulator->draw(rep_index));
    const Dataset& data = sim ? sim->dataset : *setup.dataset;
    const SparseSplit split = sparse_split(data, setup.design, rep_index);

    std::vector<CellValue> truth;
    truth.reserve(split.test_cells.size());
    if (sim) {
      const auto n = data.n_genotypes();
      for (const auto& cell : split.test_cells) {
        const auto g = *data.kinship().index_of(cell.genotype);
        const auto e = *data.environment_index(cell.environment);
        truth.push_back({cell.genotype, cell.environment, sim->true_genetic_values(e * n + g)});
      }
    } else {
      std::map<std::pair<std::string, std::string>, double> observed;
      for (const auto& rec : data.records()) observed[{rec.genotype, rec.environment}] = rec.value;
      for (const auto& cell : split.test_cells) {
        truth.push_back({cell.genotype, cell.environment, observed.at({cell.genotype, cell.environment})});
      }
    }

    std::optional<EnvCorrelationMatrix> noise_corr;
    if (!setup.lambdas.empty() && base_corr) {
      auto rng = make_rng(setup.design.seed, {kNoiseCorrStream, rep_index});
      noise_corr = random_correlation(p, rng(), env_labels);
    }

    for (const auto& run : runs) {
      CvRow row;
      row.model = std::string(structure_kind_name(run.kind));
      row.replicate = rep;
      row.lambda = run.lambda;
      row.mean_pearson = std::numeric_limits<double>::quiet_NaN();
      row.mean_rmse = std::numeric_limits<double>::quiet_NaN();
      try {
        std::shared_ptr<const VarianceStructure> structure;
        if (run.lambda) {
          structure = std::make_shared<const VarianceStructure>(VarianceStructure::make(
              run.kind, env_labels, blend_correlation(*base_corr, *noise_corr, *run.lambda), setup.dist, setup.grid));
        } else {
          structure = fixed_structures.at(run.kind);
        }
        const auto start = std::chrono::steady_clock::now();
        const FitResult result = fit(split.train, *structure, setup.fit_options);
        const auto stop = std::chrono::steady_clock::now();
        row.fit_seconds = std::chrono::duration<double>(stop - start).count();
        row.converged = result.converged;
        const auto predictions = predict_cells(result, split.test_cells);
        std::vector<CellValue> predicted;
        predicted.reserve(predictions.size());
        for (const auto& pr : predictions) predicted.push_back({pr.genotype, pr.environment, sim ? pr.blup : pr.fitted});
        const Accuracy acc = within_env_accuracy(predicted, truth);
        row.mean_pearson = acc.mean_pearson;
        row.mean_rmse = acc.mean_rmse;
        row.undefined_pearson = acc.undefined_pearson;
      } catch (const std::exception& e) {
        row.converged = false;
        row.error = e.what();
        log().warn("cv replicate {} model {}: {}", rep, row.model, e.what());
      }
      rows.push_back(std::move(row));
    }
    return rows;
  };

  const int reps = setup.design.replicates;
  std::vector<std::vector<CvRow>> per_rep(static_cast<std::size_t>(reps));
  const int jobs = std::clamp(setup.jobs, 1, reps);
  if (jobs == 1) {
    for (int rep = 0; rep < reps; ++rep) per_rep[static_cast<std::size_t>(rep)] = run_replicate(rep);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    for (int j = 0; j < jobs; ++j) {
      workers.emplace_back([&] {
        for (int rep = next++; rep < reps; rep = next++) {
          try {
            per_rep[static_cast<std::size_t>(rep)] = run_replicate(rep);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& w : workers) w.join();
    if (failure) std::rethrow_exception(failure);
  }

  CvReport report;
  for (auto& rows : per_rep) {
    for (auto& row : rows) report.rows.push_back(std::move(row));
  }
  return report;
}

std::vector<CvSummary> CvReport::summarize() const {
  std::vector<CvSummary> out;
  auto find = [&out](const std::string& model, const std::optional<double>& lambda) -> CvSummary& {
    for (auto& s : out) {
      if (s.model == model && s.lambda == lambda) return s;
    }
    out.push_back(CvSummary{model, lambda});
    return out.back();
  };
  std::map<std::size_t, std::vector<double>> pearson;
  std::map<std::size_t, std::vector<double>> rmse;
  std::map<std::size_t, std::vector<double>> seconds;
  for (const auto& row : rows) {
    CvSummary& s = find(row.model, row.lambda);
    const auto idx = static_cast<std::size_t>(&s - out.data());
    ++s.replicates;
    if (!row.converged) continue;
    ++s.converged;
    if (std::isfinite(row.mean_pearson)) pearson[idx].push_back(row.mean_pearson);
    if (std::isfinite(row.mean_rmse)) rmse[idx].push_back(row.mean_rmse);
    seconds[idx].push_back(row.fit_seconds);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].mean_pearson = mean(pearson[i]);
    out[i].median_pearson = median(pearson[i]);
    out[i].mean_rmse = mean(rmse[i]);
    out[i].median_rmse = median(rmse[i]);
    out[i].median_seconds = median(seconds[i]);
  }
  return out;
}

void write_cv_report(const std::filesystem::path& path, const CvReport& report) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(report.rows.size());
  for (const auto& row : report.rows) {
    rows.push_back({row.model, std::to_string(row.replicate), row.lambda ? io::format_double(*row.lambda) : "NA",
                    std::isfinite(row.mean_pearson) ? io::format_double(row.mean_pearson) : "NA",
                    std::isfinite(row.mean_rmse) ? io::format_double(row.mean_rmse) : "NA",
                    io::format_double(row.fit_seconds), row.converged ? "1" : "0"});
  }
  io::write_csv(path, {"model", "replicate", "lambda", "mean_pearson", "mean_rmse", "fit_seconds", "converged"}, rows);
}

}  // namespace gxe
