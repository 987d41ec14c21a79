#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "crm/estimators.hpp"

namespace crm {

struct LbfgsConfig {
  int max_iters = 200;
  double grad_tol = 1e-6;
  int memory = 10;
  int max_linesearch = 60;
};

struct LbfgsResult {
  Eigen::VectorXd theta;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string status;
};

using ValueGradFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

/// Limited-memory quasi-Newton with Armijo backtracking. Accepted steps are
/// monotone non-increasing in the objective; trial points with non-finite
/// values simply shorten the step. Deterministic given its inputs.
LbfgsResult minimize(const ValueGradFn& fn, Eigen::VectorXd theta0, const LbfgsConfig& cfg);

struct ProxConfig {
  double kappa = 0.1;
  int outer_iters = 10;
  LbfgsConfig inner;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  Eigen::VectorXd theta;
  std::vector<double> objective_trace;  // L(theta_k) without the proximal term
  std::vector<LbfgsResult> inner;
  double wall_time_s = 0.0;
};

/// Proximal point outer loop around the inner solver: each step minimizes
/// L(theta) + kappa/2 |theta - theta_prev|^2 warm-started at theta_prev;
/// the final step runs with kappa = 0.
TrainResult proximal_train(const PolicyModel& init, const LoggedDataset& ds, const CrmObjective& obj,
                           const ProxConfig& cfg, Exec exec = Exec::par);

TrainResult proximal_train(const CrmProblem& problem, const Eigen::VectorXd& theta0,
                           const ProxConfig& cfg);

}  // namespace crm
