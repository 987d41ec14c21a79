#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace crm {

/// Logged bandit feedback: one row per decision of the logging policy.
/// `propensities` holds the logging density at the logged action (not a
/// log-density); `costs` follow the minimized-cost sign convention, so the
/// reward of a row is -cost.
struct LoggedDataset {
  Eigen::MatrixXd contexts;      // n x d
  Eigen::VectorXd actions;       // n
  Eigen::VectorXd propensities;  // n, strictly positive
  Eigen::VectorXd costs;         // n

  Eigen::Index n() const { return actions.size(); }
  Eigen::Index dim() const { return contexts.cols(); }

  /// Throws ValidationError if the container invariants do not hold.
  void validate() const;
};

struct DataSplit {
  LoggedDataset train, valid, test;
  std::uint64_t seed = 0;
};

/// Reads the fixed-header CSV (`x0..x{d-1},action,propensity,cost`).
/// Transparently decompresses when the path ends in `.gz`.
LoggedDataset load_csv(const std::string& path);

/// Writes the same format at full precision; `.gz` suffix compresses.
void save_csv(const LoggedDataset& ds, const std::string& path);

/// Seeded shuffle followed by a three-way partition. Fraction must be
/// positive and sum to 1; each part gets at least one row or the call throws.
DataSplit split(const LoggedDataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed);

LoggedDataset take_rows(const LoggedDataset& ds, const std::vector<Eigen::Index>& rows);

}  // namespace crm
