#include "osds/targets/targets.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace osds::targets {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_cell(const std::string& cell, std::size_t row, std::size_t col) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw std::invalid_argument("csv: non-numeric cell '" + cell + "' at row " +
                                std::to_string(row) + ", column " + std::to_string(col));
  }
  return v;
}

}  // namespace

LogisticRegressionData load_csv(const std::string& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("csv: missing header in '" + path + "'");
  const std::size_t width = split_line(line).size();
  if (width < 2) throw std::invalid_argument("csv: need at least one feature and a label column");

  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split_line(line);
    if (cells.size() != width) {
      throw std::invalid_argument("csv: ragged row " + std::to_string(row) + " has " +
                                  std::to_string(cells.size()) + " cells, expected " +
                                  std::to_string(width));
    }
    std::vector<double> values(width - 1);
    for (std::size_t c = 0; c + 1 < width; ++c) values[c] = parse_cell(cells[c], row, c + 1);
    const double label = parse_cell(cells.back(), row, width);
    if (label != 0.0 && label != 1.0) {
      throw std::invalid_argument("csv: non-binary label '" + cells.back() + "' at row " +
                                  std::to_string(row));
    }
    rows.push_back(std::move(values));
    labels.push_back(label);
  }

  LogisticRegressionData data;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(width - 1);
  data.features.resize(n, p);
  data.labels.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) data.features(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    data.labels(i) = labels[static_cast<std::size_t>(i)];
  }
  if (options.standardize && n > 0) {
    for (Eigen::Index j = 0; j < p; ++j) {
      auto col = data.features.col(j);
      const double mu = col.mean();
      col.array() -= mu;
      const double sd = std::sqrt(col.squaredNorm() / static_cast<double>(n));
      if (sd > 0.0) col /= sd;
    }
  }
  data.prior_scale = options.prior_scale;
  data.intercept = options.intercept;
  data.validate();
  return data;
}

}  // namespace osds::targets
