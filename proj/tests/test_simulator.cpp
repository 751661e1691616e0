#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gxe/csv_io.hpp"
#include "gxe/error.hpp"
#include "gxe/simulator.hpp"
#include "test_support.hpp"

namespace gxe {
namespace {

using testing::labels;

TEST(SimulateMarkers, DeterministicAndInRange) {
  const auto a = simulate_markers(20, 50, 7);
  EXPECT_EQ(a, simulate_markers(20, 50, 7));
  EXPECT_NE(a, simulate_markers(20, 50, 8));
  EXPECT_GE(a.minCoeff(), 0);
  EXPECT_LE(a.maxCoeff(), 2);
}

TEST(SimulateMarkers, SampleFrequenciesStayInsideWideBand) {
  // Allele frequency in [0.1, 0.9] and 200 alleles per marker: leaving
  // [0.05, 0.95] needs a 3.3-sd binomial excursion, so well under 1% of markers.
  const auto m = simulate_markers(100, 10000, 3);
  int outside = 0;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double f = m.col(j).cast<double>().sum() / 200.0;
    if (f < 0.05 || f > 0.95) ++outside;
  }
  EXPECT_LE(outside, 100);
}

TEST(Kinship, SymmetricAndDuplicateRowsMatch) {
  Eigen::MatrixXi m = simulate_markers(10, 300, 4);
  m.row(7) = m.row(2);
  const auto k = kinship_from_markers(m);
  EXPECT_LT((k.values() - k.values().transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(k.values().row(7), k.values().row(2));
  EXPECT_EQ(k.values().col(7), k.values().col(2));
  EXPECT_EQ(k.labels().front(), "G1");
}

TEST(Kinship, MatchesVanRadenFormula) {
  const auto m = simulate_markers(6, 40, 5);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (m.col(j).minCoeff() != m.col(j).maxCoeff()) keep.push_back(j);
  }
  Eigen::MatrixXd x(m.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = m.col(keep[j]).cast<double>();
  const Eigen::RowVectorXd f = x.colwise().mean() / 2.0;
  Eigen::MatrixXd w = x;
  w.rowwise() -= 2.0 * f;
  const double c = 2.0 * (f.array() * (1.0 - f.array())).sum();
  const Eigen::MatrixXd expected = w * w.transpose() / c;
  EXPECT_LT((kinship_from_markers(m).values() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Kinship, MeanDiagonalNearOne) {
  const auto k = kinship_from_markers(simulate_markers(200, 5000, 6));
  EXPECT_NEAR(k.values().diagonal().mean(), 1.0, 0.1);
}

TEST(Kinship, MonomorphicMarkers) {
  Eigen::MatrixXi m = simulate_markers(5, 20, 8);
  m.col(3).setConstant(2);
  m.col(4).setZero();
  EXPECT_NO_THROW(kinship_from_markers(m));
  EXPECT_THROW(kinship_from_markers(Eigen::MatrixXi::Ones(5, 4)), DataError);
}

TEST(PsdFactor, ReproducesMatrix) {
  std::mt19937_64 rng(9);
  const auto c = testing::random_corr(5, rng);
  const auto f = psd_factor(c.values, "C");
  EXPECT_LT((f * f.transpose() - c.values).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(psd_factor(Eigen::MatrixXd::Zero(3, 3), "zero"), Eigen::MatrixXd::Zero(3, 3));
  Eigen::MatrixXd bad(2, 2);
  bad << 1, 2, 2, 1;
  EXPECT_THROW(psd_factor(bad, "bad"), DataError);
}

TEST(DrawGeneticValues, ZeroSigmaGivesZero) {
  auto rng = make_rng(1, {2});
  const auto u = draw_genetic_values(psd_factor(Eigen::MatrixXd::Zero(3, 3), "S"), Eigen::MatrixXd::Identity(4, 4), rng);
  EXPECT_EQ(u, Eigen::VectorXd::Zero(12));
}

TEST(SimulateMet, GeneticValueCovarianceIsKroneckerProduct) {
  // n = 5, p = 2, 2000 replicates through the simulator's own draw path.
  SimConfig cfg;
  cfg.n_genotypes = 5;
  cfg.n_markers = 500;
  Eigen::Matrix2d c;
  c << 1.0, 0.8, 0.8, 1.0;
  cfg.truth_structure = std::make_shared<const VarianceStructure>(VarianceStructure::corr_multi_var({c, labels("E", 2)}));
  cfg.truth_kappa = Eigen::Vector2d(2.0, 1.0);
  cfg.resid_var = 1.0;
  cfg.seed = 13;
  // Closely related genotypes keep Sigma (x) K low in effective rank, which is
  // what makes a 5% bound at 2000 replicates meaningful (checked below).
  Eigen::MatrixXd k = Eigen::MatrixXd::Constant(5, 5, 0.9);
  k.diagonal().setOnes();
  cfg.kinship = std::make_shared<const RelationshipMatrix>(k, labels("G", 5));
  const MetSimulator sim(cfg);
  const Eigen::MatrixXd sigma = cfg.truth_structure->evaluate(cfg.truth_kappa).sigma;
  const Eigen::MatrixXd target = testing::kron(sigma, sim.kinship()->values());
  const int reps = 2000;
  // E||S - T||_F^2 = ((tr T)^2 + ||T||_F^2) / reps for a zero-mean Gaussian.
  const double expected_rel = std::sqrt((target.trace() * target.trace() + target.squaredNorm()) / reps) / target.norm();
  ASSERT_LT(expected_rel, 0.04) << "configuration too high-rank for a meaningful 5% check";
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(10, 10);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(10);
  for (int r = 0; r < reps; ++r) {
    const auto u = sim.draw(static_cast<std::uint64_t>(r)).true_genetic_values;
    acc += u * u.transpose();
    mean += u;
  }
  acc /= reps;
  mean /= reps;
  EXPECT_LT((acc - target).norm() / target.norm(), 0.05);
  // E[u] = 0 per cell within 4 sd / sqrt(reps).
  for (Eigen::Index i = 0; i < 10; ++i) EXPECT_LT(std::abs(mean(i)), 4.0 * std::sqrt(target(i, i) / reps)) << i;
}

SimConfig small_config(double resid) {
  SimConfig cfg;
  cfg.n_genotypes = 8;
  cfg.n_markers = 100;
  cfg.truth_structure = std::make_shared<const VarianceStructure>(VarianceStructure::diagonal(labels("E", 3)));
  cfg.truth_kappa = Eigen::Vector3d(1.0, 2.0, 0.5);
  cfg.resid_var = resid;
  cfg.env_means = Eigen::Vector3d(10.0, 20.0, 30.0);
  cfg.seed = 99;
  return cfg;
}

TEST(SimulateMet, NoiseFreeEqualsMeansPlusGeneticValues) {
  const auto out = simulate_met(small_config(0.0));
  const auto& d = out.dataset;
  ASSERT_EQ(d.n_records(), 24);
  for (Eigen::Index r = 0; r < d.n_records(); ++r) {
    const double mean = 10.0 * (d.environment_of(r) + 1);
    // Exact up to the rounding of adding and removing the mean.
    EXPECT_NEAR(d.records()[static_cast<std::size_t>(r)].value - mean, out.true_genetic_values(d.cell_of(r)), 1e-12);
  }
  EXPECT_EQ(out.true_sigma, Eigen::MatrixXd(Eigen::Vector3d(1.0, 2.0, 0.5).asDiagonal()));
}

TEST(SimulateMet, NoiseFreeZeroMeansIsBitwiseGeneticValues) {
  auto cfg = small_config(0.0);
  cfg.env_means = Eigen::VectorXd();
  const auto out = simulate_met(cfg);
  for (Eigen::Index r = 0; r < out.dataset.n_records(); ++r) {
    EXPECT_EQ(out.dataset.records()[static_cast<std::size_t>(r)].value, out.true_genetic_values(out.dataset.cell_of(r)));
  }
}

TEST(SimulateMet, Deterministic) {
  const auto a = simulate_met(small_config(0.3));
  const auto b = simulate_met(small_config(0.3));
  EXPECT_EQ(a.true_genetic_values, b.true_genetic_values);
  EXPECT_EQ(a.dataset.response(), b.dataset.response());
  EXPECT_EQ(a.dataset.kinship().values(), b.dataset.kinship().values());
  auto other = small_config(0.3);
  other.seed = 100;
  EXPECT_NE(simulate_met(other).dataset.response(), a.dataset.response());
}

TEST(MetSimulator, ReplicatesAreIndependentStreams) {
  const MetSimulator sim(small_config(0.3));
  const auto a = sim.draw(1);
  const auto b = sim.draw(2);
  EXPECT_NE(a.true_genetic_values, b.true_genetic_values);
  EXPECT_EQ(a.true_genetic_values, sim.draw(1).true_genetic_values);
  EXPECT_EQ(sim.draw(0).dataset.response(), simulate_met(small_config(0.3)).dataset.response());
}

TEST(SimulateMet, HeritabilityDecreasesWithNoise) {
  const auto out = simulate_met(small_config(0.0));
  const double genetic = out.true_sigma.trace() * out.dataset.kinship().values().trace();
  const double cells = static_cast<double>(out.dataset.n_records());
  double previous = 1.0;
  for (double resid : {0.1, 0.5, 1.0, 4.0}) {
    const double h = genetic / (genetic + cells * resid);
    EXPECT_LT(h, previous);
    previous = h;
  }
}

TEST(SimulateMet, ConfigErrors) {
  auto cfg = small_config(-1.0);
  EXPECT_THROW(simulate_met(cfg), InvalidInputError);
  cfg = small_config(1.0);
  cfg.env_means = Eigen::Vector2d(1, 2);
  EXPECT_THROW(simulate_met(cfg), InvalidInputError);
  cfg = small_config(1.0);
  cfg.truth_kappa = Eigen::Vector3d(1, -1, 1);
  EXPECT_THROW(simulate_met(cfg), ContractViolation);
}

TEST(SimulateMet, SuppliedKinshipIsUsed) {
  std::mt19937_64 rng(12);
  auto cfg = small_config(0.5);
  cfg.kinship = testing::random_kinship(6, rng);
  const auto out = simulate_met(cfg);
  EXPECT_EQ(out.dataset.n_genotypes(), 6);
  EXPECT_EQ(out.dataset.kinship_ptr(), cfg.kinship);
}

TEST(SimConfigFile, ParsesAndWritesOutputs) {
  const auto dir = std::filesystem::temp_directory_path() / "gxe_simcfg";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  io::write_labeled_matrix(dir / "dist.csv", {(Eigen::Matrix3d() << 0, 1, 4, 1, 0, 2, 4, 2, 0).finished(),
                                              {"A", "B", "C"}, {"A", "B", "C"}});
  std::ofstream(dir / "sim.cfg") << "# test config\nn_genotypes = 12\nn_markers = 200\nstructure = kern1\n"
                                    "dist = dist.csv\nkappa = 0.3, 1.5\nresid_var = 0.5\nenv_means = 1,2,3\nseed = 5\n";
  const auto cfg = read_sim_config(dir / "sim.cfg");
  EXPECT_EQ(cfg.n_genotypes, 12);
  EXPECT_EQ(cfg.truth_structure->kind(), StructureKind::KernelSingleVar);
  EXPECT_EQ(cfg.truth_structure->environment_labels(), (std::vector<std::string>{"A", "B", "C"}));
  EXPECT_EQ(cfg.truth_kappa, Eigen::Vector2d(0.3, 1.5));
  EXPECT_EQ(cfg.seed, 5u);

  const auto out = simulate_met(cfg);
  write_sim_output(dir / "out", out);
  for (const char* f : {"phenotypes.csv", "kinship.csv", "truth_params.csv", "truth_genetic_values.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / f)) << f;
  }
  const auto back = read_phenotypes_csv(dir / "out" / "phenotypes.csv");
  ASSERT_EQ(back.size(), 36u);
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(back[i].value, out.dataset.records()[i].value);
  const auto kin = read_kinship_csv(dir / "out" / "kinship.csv");
  EXPECT_EQ(kin.values(), out.dataset.kinship().values());

  std::ofstream(dir / "bad.cfg") << "structure = diag\nenvironments = A,B\nkappa = 1,1\ncolour = blue\n";
  EXPECT_THROW(read_sim_config(dir / "bad.cfg"), DataError);
  std::ofstream(dir / "nokappa.cfg") << "structure = diag\nenvironments = A,B\n";
  EXPECT_THROW(read_sim_config(dir / "nokappa.cfg"), DataError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace gxe
