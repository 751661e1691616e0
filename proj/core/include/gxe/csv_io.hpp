#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace gxe::io {

// Plain CSV table: header plus string cells, one vector per data row.
struct CsvTable {
  std::filesystem::path source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a named header column; DataError when absent.
  std::size_t column(std::string_view name) const;
  // Parses cell (row, col) as a finite double; DataError names file, row and column.
  double number(std::size_t row, std::size_t col) const;
};

CsvTable read_csv(const std::filesystem::path& path);

// Square or rectangular matrix with a label header row and a label column.
struct LabeledMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
};

LabeledMatrix read_labeled_matrix(const std::filesystem::path& path);

// Reads a square matrix, checks that row and column labels agree and that
// max |M - M^T| <= 1e-8, then returns (M + M^T) / 2.
LabeledMatrix read_symmetric_matrix(const std::filesystem::path& path);

void write_labeled_matrix(const std::filesystem::path& path, const LabeledMatrix& matrix);

// 17 significant digits so that values survive a write/read cycle. NaN is written as NA.
std::string format_double(double value);

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// Flat "key = value" text; '#' starts a comment. Duplicate keys are an error.
std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path);

std::vector<std::string> split(std::string_view text, char delimiter);
std::string trim(std::string_view text);
std::vector<double> parse_double_list(std::string_view text, std::string_view what);

}  // namespace gxe::io
