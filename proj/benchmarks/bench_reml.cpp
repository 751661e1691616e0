#include <map>
#include <memory>
#include <random>
#include <tuple>

#include <benchmark/benchmark.h>

#include "gxe/cv.hpp"
#include "gxe/reml.hpp"
#include "gxe/simulator.hpp"
#include "gxe/variance_structure.hpp"

namespace {

using namespace gxe;

std::vector<std::string> env_labels(int p) {
  std::vector<std::string> out;
  for (int i = 0; i < p; ++i) out.push_back("E" + std::to_string(i + 1));
  return out;
}

// Environments at random points in a 3 x 3 square.
EnvDistanceMatrix distance(int p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 3.0);
  Eigen::MatrixXd pts(p, 2);
  for (int i = 0; i < p; ++i) pts.row(i) << unif(rng), unif(rng);
  Eigen::MatrixXd d(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) d(i, j) = (pts.row(i) - pts.row(j)).squaredNorm();
  }
  return {d, env_labels(p)};
}

struct Problem {
  EnvDistanceMatrix dist;
  Dataset train;
};

// Sparse-testing training set: n genotypes, p environments, checks in all, others in k.
const Problem& problem(int n, int p, int checks, int k) {
  static std::map<std::tuple<int, int, int, int>, std::unique_ptr<Problem>> cache;
  auto& slot = cache[{n, p, checks, k}];
  if (!slot) {
    const auto dist = distance(p, 17);
    SimConfig cfg;
    cfg.n_genotypes = n;
    cfg.n_markers = 1000;
    cfg.truth_structure = std::make_shared<const VarianceStructure>(VarianceStructure::kernel_multi_var(dist));
    cfg.truth_kappa = Eigen::VectorXd::LinSpaced(p + 1, 0.5, 1.5);
    cfg.truth_kappa(0) = 0.5 / mean_off_diagonal(dist.values);
    cfg.resid_var = 1.0;
    cfg.seed = 23;
    const auto full = simulate_met(cfg).dataset;
    slot = std::make_unique<Problem>(Problem{dist, sparse_split(full, {checks, k, 1, 29}, 0).train});
  }
  return *slot;
}

const Problem& small() { return problem(100, 5, 5, 2); }
const Problem& drops() { return problem(246, 15, 6, 3); }

void BM_Loglik(benchmark::State& state, const Problem& (*get)(), StructureKind kind) {
  const auto& pr = get();
  const auto s = VarianceStructure::make(kind, pr.dist.labels, std::nullopt, pr.dist);
  const auto kappa = s.default_parameters(1.0);
  for (auto _ : state) benchmark::DoNotOptimize(reml_loglik(pr.train, s, kappa, 0.5));
  state.counters["records"] = static_cast<double>(pr.train.n_records());
}

void BM_ScoreAndAi(benchmark::State& state, const Problem& (*get)(), StructureKind kind) {
  const auto& pr = get();
  const auto s = VarianceStructure::make(kind, pr.dist.labels, std::nullopt, pr.dist);
  const auto kappa = s.default_parameters(1.0);
  for (auto _ : state) benchmark::DoNotOptimize(score_and_ai(pr.train, s, kappa, 0.5));
  state.counters["params"] = static_cast<double>(s.parameter_count() + 1);
}

void BM_Fit(benchmark::State& state, const Problem& (*get)(), StructureKind kind) {
  const auto& pr = get();
  const auto s = VarianceStructure::make(kind, pr.dist.labels, std::nullopt, pr.dist);
  int iterations = 0;
  for (auto _ : state) {
    const auto f = fit(pr.train, s);
    iterations = f.iterations;
    benchmark::DoNotOptimize(f.loglik());
  }
  state.counters["reml_iters"] = iterations;
}

}  // namespace

BENCHMARK_CAPTURE(BM_Loglik, small_kern1, small, StructureKind::KernelSingleVar)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Loglik, drops_kernP, drops, StructureKind::KernelMultiVar)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_ScoreAndAi, small_kern1, small, StructureKind::KernelSingleVar)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_ScoreAndAi, drops_kern1, drops, StructureKind::KernelSingleVar)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_ScoreAndAi, drops_kernP, drops, StructureKind::KernelMultiVar)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_ScoreAndAi, drops_ka, drops, StructureKind::KernelAveraging)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Fit, drops_kern1, drops, StructureKind::KernelSingleVar)->Unit(benchmark::kSecond)->Iterations(1);
BENCHMARK_CAPTURE(BM_Fit, drops_kernP, drops, StructureKind::KernelMultiVar)->Unit(benchmark::kSecond)->Iterations(1);

BENCHMARK_MAIN();
