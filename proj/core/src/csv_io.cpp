#include "gxe/csv_io.hpp"

#include <charconv>
#include <optional>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "gxe/error.hpp"

namespace gxe::io {

namespace {

std::optional<double> to_double(std::string_view text) {
  const std::string trimmed = trim(text);
  if (trimmed.empty()) return std::nullopt;
  double value = 0.0;
  const char* first = trimmed.data();
  const char* last = trimmed.data() + trimmed.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cell.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(trim(cell));
      cell.clear();
    } else {
      cell.push_back(ch);
    }
  }
  cells.push_back(trim(cell));
  return cells;
}

}  // namespace

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view text, char delimiter) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(delimiter, start);
    parts.push_back(trim(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::vector<double> parse_double_list(std::string_view text, std::string_view what) {
  std::vector<double> values;
  for (const auto& part : split(text, ',')) {
    auto parsed = to_double(part);
    if (!parsed) {
      throw InvalidInputError(std::string(what) + ": '" + part + "' is not a finite number");
    }
    values.push_back(*parsed);
  }
  return values;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw DataError(source.string() + ": missing required column '" + std::string(name) + "'");
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const std::string& cell = rows.at(row).at(col);
  auto parsed = to_double(cell);
  if (!parsed) {
    // Row numbers are 1-based file lines (header is line 1).
    throw DataError(source.string() + ": row " + std::to_string(row + 2) + ", column '" +
                    (col < header.size() ? header[col] : std::to_string(col + 1)) +
                    "': '" + cell + "' is not a finite number");
  }
  return *parsed;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open file");
  CsvTable table;
  table.source = path;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (!have_header) {
      table.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != table.header.size()) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " cells, header has " +
                      std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(cells));
  }
  if (!have_header) throw DataError(path.string() + ": empty file, header required");
  return table;
}

LabeledMatrix read_labeled_matrix(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  if (table.header.size() < 2) throw DataError(path.string() + ": matrix needs at least one labeled column");
  LabeledMatrix m;
  m.col_labels.assign(table.header.begin() + 1, table.header.end());
  const auto rows = table.rows.size();
  const auto cols = m.col_labels.size();
  m.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    m.row_labels.push_back(table.rows[r][0]);
    for (std::size_t c = 0; c < cols; ++c) {
      m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = table.number(r, c + 1);
    }
  }
  return m;
}

LabeledMatrix read_symmetric_matrix(const std::filesystem::path& path) {
  LabeledMatrix m = read_labeled_matrix(path);
  if (m.values.rows() != m.values.cols()) {
    throw DataError(path.string() + ": expected a square matrix, got " + std::to_string(m.values.rows()) +
                    "x" + std::to_string(m.values.cols()));
  }
  if (m.row_labels != m.col_labels) {
    throw DataError(path.string() + ": row labels do not match column labels");
  }
  const double asym = (m.values - m.values.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8) {
    std::ostringstream msg;
    msg << path.string() << ": matrix is not symmetric (max |M - M^T| = " << asym << ")";
    throw DataError(msg.str());
  }
  m.values = 0.5 * (m.values + m.values.transpose());
  return m;
}

std::string format_double(double value) {
  if (std::isnan(value)) return "NA";
  std::ostringstream out;
  out << std::setprecision(17) << value;
  return out.str();
}

void write_labeled_matrix(const std::filesystem::path& path, const LabeledMatrix& matrix) {
  std::vector<std::string> header{""};
  header.insert(header.end(), matrix.col_labels.begin(), matrix.col_labels.end());
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index r = 0; r < matrix.values.rows(); ++r) {
    std::vector<std::string> row{matrix.row_labels.at(static_cast<std::size_t>(r))};
    for (Eigen::Index c = 0; c < matrix.values.cols(); ++c) row.push_back(format_double(matrix.values(r, c)));
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  auto emit = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << ',';
      if (cells[i].find_first_of(",\"") != std::string::npos) {
        out << '"';
        for (char ch : cells[i]) {
          if (ch == '"') out << '"';
          out << ch;
        }
        out << '"';
      } else {
        out << cells[i];
      }
    }
    out << '\n';
  };
  emit(header);
  for (const auto& row : rows) emit(row);
  if (!out) throw DataError(path.string() + ": write failed");
}

std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open file");
  std::map<std::string, std::string> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw DataError(path.string() + ": line " + std::to_string(line_no) + ": empty key");
    if (!values.emplace(key, value).second) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return values;
}

}  // namespace gxe::io
