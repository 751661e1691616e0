#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace gxe {

// One BLUE: the value of a genotype in an environment.
struct PhenotypeRecord {
  std::string genotype;
  std::string environment;
  double value = 0.0;
};

// Genomic relationship matrix K on correlation scale. Validated once on
// construction: square, labels unique, symmetric, and
// min eigenvalue >= -1e-8 * max eigenvalue.
class RelationshipMatrix {
 public:
  RelationshipMatrix(Eigen::MatrixXd values, std::vector<std::string> labels);

  const Eigen::MatrixXd& values() const { return values_; }
  const std::vector<std::string>& labels() const { return labels_; }
  Eigen::Index size() const { return values_.rows(); }
  std::optional<Eigen::Index> index_of(const std::string& label) const;

 private:
  Eigen::MatrixXd values_;
  std::vector<std::string> labels_;
  std::unordered_map<std::string, Eigen::Index> index_;
};

// Phenotype records indexed against a fixed genotype set (the kinship
// labels) and a fixed environment list. Cells are numbered
// genotype-within-environment: cell = env * n + genotype.
class Dataset {
 public:
  // Empty environment_labels: environments in order of first appearance.
  Dataset(std::vector<PhenotypeRecord> records, std::shared_ptr<const RelationshipMatrix> kinship,
          std::vector<std::string> environment_labels = {});

  // Same genotypes, environments and kinship; different records.
  Dataset with_records(std::vector<PhenotypeRecord> records) const;

  const std::vector<PhenotypeRecord>& records() const { return records_; }
  const std::vector<std::string>& genotype_labels() const { return kinship_->labels(); }
  const std::vector<std::string>& environment_labels() const { return env_labels_; }
  const RelationshipMatrix& kinship() const { return *kinship_; }
  const std::shared_ptr<const RelationshipMatrix>& kinship_ptr() const { return kinship_; }

  Eigen::Index n_genotypes() const { return kinship_->size(); }
  Eigen::Index n_environments() const { return static_cast<Eigen::Index>(env_labels_.size()); }
  Eigen::Index n_records() const { return static_cast<Eigen::Index>(records_.size()); }

  Eigen::Index genotype_of(Eigen::Index record) const { return genotype_index_[static_cast<std::size_t>(record)]; }
  Eigen::Index environment_of(Eigen::Index record) const { return env_index_[static_cast<std::size_t>(record)]; }
  Eigen::Index cell_of(Eigen::Index record) const {
    return environment_of(record) * n_genotypes() + genotype_of(record);
  }

  std::optional<Eigen::Index> environment_index(const std::string& label) const;
  Eigen::VectorXd response() const;

 private:
  std::vector<PhenotypeRecord> records_;
  std::shared_ptr<const RelationshipMatrix> kinship_;
  std::vector<std::string> env_labels_;
  std::unordered_map<std::string, Eigen::Index> env_index_map_;
  std::vector<Eigen::Index> genotype_index_;
  std::vector<Eigen::Index> env_index_;
};

struct DesignMatrices {
  // N x p: intercept plus indicators for environments 2..p.
  Eigen::MatrixXd x;
  // N x (n p): one unit entry per row selecting the record's cell.
  Eigen::SparseMatrix<double> z;
};

// Throws DataError when fewer than two genotypes or environments exist or
// an environment has no records.
DesignMatrices build_design(const Dataset& dataset);

// Phenotype CSV with header genotype,environment,value.
std::vector<PhenotypeRecord> read_phenotypes_csv(const std::filesystem::path& path);
void write_phenotypes_csv(const std::filesystem::path& path, const std::vector<PhenotypeRecord>& records);

RelationshipMatrix read_kinship_csv(const std::filesystem::path& path);

}  // namespace gxe
