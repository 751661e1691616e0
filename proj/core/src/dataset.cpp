#include "gxe/dataset.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "gxe/csv_io.hpp"
#include "gxe/error.hpp"

namespace gxe {

RelationshipMatrix::RelationshipMatrix(Eigen::MatrixXd values, std::vector<std::string> labels)
    : values_(std::move(values)), labels_(std::move(labels)) {
  const Eigen::Index n = values_.rows();
  if (n < 1 || values_.cols() != n) throw DataError("kinship matrix must be square and non-empty");
  if (labels_.size() != static_cast<std::size_t>(n)) throw DataError("kinship label count does not match matrix size");
  if (!values_.allFinite()) throw DataError("kinship matrix has non-finite entries");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!index_.emplace(labels_[static_cast<std::size_t>(i)], i).second) {
      throw DataError("kinship matrix has duplicate genotype label '" + labels_[static_cast<std::size_t>(i)] + "'");
    }
  }
  const double scale = std::max(1.0, values_.cwiseAbs().maxCoeff());
  if ((values_ - values_.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw DataError("kinship matrix is not symmetric");
  }
  values_ = 0.5 * (values_ + values_.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(values_, Eigen::EigenvaluesOnly);
  const double max_eig = eig.eigenvalues().maxCoeff();
  const double min_eig = eig.eigenvalues().minCoeff();
  if (min_eig < -1e-8 * std::abs(max_eig)) {
    std::ostringstream msg;
    msg << "kinship matrix is not positive semidefinite (min eigenvalue " << min_eig << ", max " << max_eig << ")";
    throw DataError(msg.str());
  }
}

std::optional<Eigen::Index> RelationshipMatrix::index_of(const std::string& label) const {
  if (auto it = index_.find(label); it != index_.end()) return it->second;
  return std::nullopt;
}

Dataset::Dataset(std::vector<PhenotypeRecord> records, std::shared_ptr<const RelationshipMatrix> kinship,
                 std::vector<std::string> environment_labels)
    : records_(std::move(records)), kinship_(std::move(kinship)), env_labels_(std::move(environment_labels)) {
  if (!kinship_) throw ContractViolation("dataset requires a kinship matrix");
  const bool infer_envs = env_labels_.empty();
  for (std::size_t e = 0; e < env_labels_.size(); ++e) {
    if (!env_index_map_.emplace(env_labels_[e], static_cast<Eigen::Index>(e)).second) {
      throw DataError("duplicate environment label '" + env_labels_[e] + "'");
    }
  }
  std::set<std::pair<Eigen::Index, Eigen::Index>> seen;
  genotype_index_.reserve(records_.size());
  env_index_.reserve(records_.size());
  for (std::size_t r = 0; r < records_.size(); ++r) {
    const auto& rec = records_[r];
    auto g = kinship_->index_of(rec.genotype);
    if (!g) throw DataError("record " + std::to_string(r + 1) + ": genotype '" + rec.genotype + "' not in kinship");
    auto it = env_index_map_.find(rec.environment);
    if (it == env_index_map_.end()) {
      if (!infer_envs) {
        throw DataError("record " + std::to_string(r + 1) + ": unknown environment '" + rec.environment + "'");
      }
      it = env_index_map_.emplace(rec.environment, static_cast<Eigen::Index>(env_labels_.size())).first;
      env_labels_.push_back(rec.environment);
    }
    if (!std::isfinite(rec.value)) {
      throw DataError("record " + std::to_string(r + 1) + ": non-finite phenotype value");
    }
    if (!seen.emplace(*g, it->second).second) {
      throw DataError("duplicate record for genotype '" + rec.genotype + "' in environment '" + rec.environment + "'");
    }
    genotype_index_.push_back(*g);
    env_index_.push_back(it->second);
  }
}

Dataset Dataset::with_records(std::vector<PhenotypeRecord> records) const {
  return Dataset(std::move(records), kinship_, env_labels_);
}

std::optional<Eigen::Index> Dataset::environment_index(const std::string& label) const {
  if (auto it = env_index_map_.find(label); it != env_index_map_.end()) return it->second;
  return std::nullopt;
}

Eigen::VectorXd Dataset::response() const {
  Eigen::VectorXd y(n_records());
  for (Eigen::Index r = 0; r < n_records(); ++r) y(r) = records_[static_cast<std::size_t>(r)].value;
  return y;
}

DesignMatrices build_design(const Dataset& dataset) {
  const Eigen::Index n = dataset.n_genotypes();
  const Eigen::Index p = dataset.n_environments();
  const Eigen::Index big_n = dataset.n_records();
  if (n < 2) throw DataError("design requires at least two genotypes");
  if (p < 2) throw DataError("design requires at least two environments");
  std::vector<Eigen::Index> per_env(static_cast<std::size_t>(p), 0);
  for (Eigen::Index r = 0; r < big_n; ++r) ++per_env[static_cast<std::size_t>(dataset.environment_of(r))];
  for (Eigen::Index e = 0; e < p; ++e) {
    if (per_env[static_cast<std::size_t>(e)] == 0) {
      throw DataError("environment '" + dataset.environment_labels()[static_cast<std::size_t>(e)] + "' has no records");
    }
  }

  DesignMatrices design;
  design.x = Eigen::MatrixXd::Zero(big_n, p);
  design.x.col(0).setOnes();
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(big_n));
  for (Eigen::Index r = 0; r < big_n; ++r) {
    const Eigen::Index e = dataset.environment_of(r);
    if (e > 0) design.x(r, e) = 1.0;
    triplets.emplace_back(r, dataset.cell_of(r), 1.0);
  }
  design.z.resize(big_n, n * p);
  design.z.setFromTriplets(triplets.begin(), triplets.end());
  return design;
}

std::vector<PhenotypeRecord> read_phenotypes_csv(const std::filesystem::path& path) {
  const io::CsvTable table = io::read_csv(path);
  const auto g = table.column("genotype");
  const auto e = table.column("environment");
  const auto v = table.column("value");
  std::vector<PhenotypeRecord> records;
  records.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    records.push_back({table.rows[r][g], table.rows[r][e], table.number(r, v)});
  }
  return records;
}

void write_phenotypes_csv(const std::filesystem::path& path, const std::vector<PhenotypeRecord>& records) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(records.size());
  for (const auto& rec : records) rows.push_back({rec.genotype, rec.environment, io::format_double(rec.value)});
  io::write_csv(path, {"genotype", "environment", "value"}, rows);
}

RelationshipMatrix read_kinship_csv(const std::filesystem::path& path) {
  auto m = io::read_symmetric_matrix(path);
  try {
    return RelationshipMatrix(std::move(m.values), std::move(m.row_labels));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace gxe
