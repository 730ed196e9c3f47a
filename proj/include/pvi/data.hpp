#pragma once

#include "pvi/common.hpp"

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace pvi {

//! Borrowed view of one datum.
struct DatumView {
  const Vec* y = nullptr;   // outcome vector (dimension >= 1)
  const Vec* x = nullptr;   // covariates, or null
  int trials = 0;           // binomial cell size, 0 when unused

  double scalar_y() const { return (*y)[0]; }
};

//! Aligned columns of outcomes, optional covariates and optional trial counts.
struct Dataset {
  std::vector<Vec> outcomes;
  std::vector<Vec> covariates;
  std::vector<int> trial_counts;

  int size() const { return static_cast<int>(outcomes.size()); }
  bool has_covariates() const { return !covariates.empty(); }
  bool has_trials() const { return !trial_counts.empty(); }

  DatumView operator[](int i) const {
    DatumView d;
    d.y = &outcomes[i];
    if (has_covariates()) d.x = &covariates[i];
    if (has_trials()) d.trials = trial_counts[i];
    return d;
  }

  void validate() const {
    expect(size() >= 1, "dataset: empty");
    expect(!has_covariates() || covariates.size() == outcomes.size(),
           "dataset: covariate column misaligned");
    expect(!has_trials() || trial_counts.size() == outcomes.size(),
           "dataset: trial column misaligned");
    for (int i = 0; i < size(); ++i) {
      expect(outcomes[i].size() >= 1 && all_finite(outcomes[i]), "dataset: bad outcome row");
      if (has_trials()) {
        const double yv = outcomes[i][0];
        expect(yv >= 0.0 && yv <= trial_counts[i], "dataset: count outside [0, N]");
      }
    }
  }

  Dataset subset(const std::vector<int>& idx) const {
    Dataset out;
    for (int i : idx) {
      out.outcomes.push_back(outcomes[i]);
      if (has_covariates()) out.covariates.push_back(covariates[i]);
      if (has_trials()) out.trial_counts.push_back(trial_counts[i]);
    }
    return out;
  }
};

namespace detail {
inline std::string format_double(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf, n);
}
}  // namespace detail

//! Writes header `y[,N][,x1..xd]`, one datum per row. Scalar outcomes only.
inline void write_dataset_csv(const Dataset& data, const std::string& path) {
  data.validate();
  expect(data.outcomes[0].size() == 1, "csv: only scalar outcomes serialize");
  std::ofstream out(path);
  expect(out.good(), "csv: cannot open " + path + " for writing");
  out << "y";
  if (data.has_trials()) out << ",N";
  const int d = data.has_covariates() ? static_cast<int>(data.covariates[0].size()) : 0;
  for (int j = 1; j <= d; ++j) out << ",x" << j;
  out << "\n";
  for (int i = 0; i < data.size(); ++i) {
    out << detail::format_double(data.outcomes[i][0]);
    if (data.has_trials()) out << "," << data.trial_counts[i];
    for (int j = 0; j < d; ++j) out << "," << detail::format_double(data.covariates[i][j]);
    out << "\n";
  }
  expect(out.good(), "csv: write failed for " + path);
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  expect(in.good(), "csv: cannot open " + path);
  std::string line;
  expect(static_cast<bool>(std::getline(in, line)), "csv: missing header");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  expect(!header.empty() && header[0] == "y", "csv: first column must be y");
  int col = 1;
  const bool has_n = col < static_cast<int>(header.size()) && header[col] == "N";
  if (has_n) ++col;
  const int d = static_cast<int>(header.size()) - col;
  for (int j = 0; j < d; ++j)
    expect(header[col + j] == "x" + std::to_string(j + 1), "csv: covariate columns must be x1..xd");

  Dataset data;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    expect(static_cast<int>(vals.size()) == static_cast<int>(header.size()),
           "csv: wrong column count at line " + std::to_string(lineno));
    data.outcomes.push_back(Vec::Constant(1, vals[0]));
    int k = 1;
    if (has_n) data.trial_counts.push_back(static_cast<int>(vals[k++]));
    if (d > 0) {
      Vec x(d);
      for (int j = 0; j < d; ++j) x[j] = vals[k + j];
      data.covariates.push_back(std::move(x));
    }
  }
  data.validate();
  return data;
}

}  // namespace pvi
