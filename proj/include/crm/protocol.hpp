#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "crm/dataset.hpp"
#include "crm/estimators.hpp"
#include "crm/training.hpp"

namespace crm {

/// Outcome of the offline evaluation protocol for one candidate policy:
/// effective-sample-size gate on the validation (and test) split, then a
/// one-sided bootstrap percentile test of the SNIPS cost against the
/// logging risk.
struct ProtocolReport {
  double snips_estimate = 0.0;
  double ips_estimate = 0.0;
  double ess_ratio = 0.0;        // min of the two splits
  double ess_ratio_valid = 0.0;
  double ess_ratio_test = 0.0;
  double mean_weight = 0.0;      // test split
  bool valid = false;
  bool reject_h0 = false;        // never true when valid is false
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double upper_one_sided = 0.0;  // (1-delta) percentile used by the test
  double logging_risk = 0.0;
  double delta = 0.05;
  double nu = 0.01;
  int n_boot = 100;
  int boot_skipped = 0;
};

struct BootstrapResult {
  std::vector<double> estimates;  // sorted, skipped resamples excluded
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double upper_one_sided = 0.0;
  int skipped = 0;
  bool degenerate = false;  // more than half the resamples had no weight mass
};

/// Resample rows with replacement and recompute the weighted estimate.
/// kind snips divides by the resampled weight mass; ips divides by n.
BootstrapResult bootstrap_weighted(const Eigen::VectorXd& weights, const Eigen::VectorXd& costs,
                                   Estimator kind, int n_boot, double delta, std::uint64_t seed);

BootstrapResult bootstrap_snips(const PolicyModel& pm, const LoggedDataset& ds, int n_boot,
                                double delta, std::uint64_t seed);

ProtocolReport evaluate_protocol(const PolicyModel& pm, const LoggedDataset& ds_valid,
                                 const LoggedDataset& ds_test, double logging_risk_estimate,
                                 double nu = 0.01, double delta = 0.05, int n_boot = 100,
                                 std::uint64_t seed = 0, Estimator kind = Estimator::snips);

/// ---- fold-discarding cross-validation --------------------------------

struct CvCandidate {
  std::string name;
  TrainSpec spec;
};

struct CvFold {
  int fold = 0;
  double snips = 0.0;
  double ess_ratio = 0.0;
  bool kept = false;
};

struct CvCandidateResult {
  std::string name;
  double score = 0.0;  // mean SNIPS over surviving folds
  int folds_kept = 0;
  bool eligible = false;
  std::vector<CvFold> folds;
};

struct CvResult {
  int best_index = -1;
  std::vector<CvCandidateResult> candidates;
};

/// Trains each candidate on k-1 folds, estimates SNIPS on the held-out
/// fold, discards folds whose ESS ratio fails the threshold, and averages
/// the survivors. Ties break toward smaller M, then smaller lambda_var.
CvResult cross_validate(const std::vector<CvCandidate>& candidates, const LoggedDataset& ds,
                        int k_folds, double nu, std::uint64_t seed, Exec exec = Exec::par);

/// ---- protocol validation experiment ----------------------------------

struct ProtocolValidationConfig {
  double logging_mean = 2.0;
  double logging_sd = 0.5;
  double optimal_mean = 2.0;  // pi* co-located with the reward peak
  double optimal_sd = 0.3;
  double reward_peak = 2.0;   // mean of the hidden potential
  double potential_sd = 0.3;
  double rho_left = 2.0;
  double rho_right = 1.0;
  double param_noise = 0.5;   // N(0, noise^2) on (mean, log-sd)
  int n_policies = 2000;
  int n_logged = 4000;        // per replicate, split 50/50 valid/test
  int n_replicates = 20;
  double nu = 0.01;
  double delta = 0.05;
  int n_boot = 100;
  std::uint64_t seed = 1;
};

struct Confusion {
  int tp = 0, fp = 0, fn = 0, tn = 0;
};

struct PolicyRecord {
  double mean = 0.0, sd = 0.0;  // candidate parameters
  double true_risk = 0.0;
  bool truth_better = false;
  double ess_ratio = 0.0;
  bool snips_reject = false;  // gate-free test outcome; the nu gate is
  bool ips_reject = false;    // applied when tabulating
};

struct SweepPoint {
  double nu = 0.0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  int tp = 0, fp = 0, fn = 0;
};

struct ValidationSummary {
  std::string setup;  // "i" or "ii"
  double logging_risk = 0.0;
  Confusion snips;
  Confusion ips;
  std::vector<PolicyRecord> records;
  std::vector<SweepPoint> sweep;  // SNIPS protocol, nu swept
};

/// Setup (i) perturbs the logging policy's parameters, setup (ii) the
/// optimal policy's. Ground truth by quadrature; offline decisions by the
/// nu-gated bootstrap test under both SNIPS and IPS.
ValidationSummary validate_protocol_experiment(const std::string& setup,
                                               const ProtocolValidationConfig& cfg,
                                               Exec exec = Exec::par);

/// ---- what-if importance-sampling diagnostics -------------------------

struct WhatifConfig {
  double logging_log_mean = 1.0;  // lognormal log-space location
  double logging_log_sd = 0.5;
  double target_sd = 0.5;
  int dims = 3;                   // estimand is E[max over dims]
  Eigen::Index n = 2000;
  int grid_points = 25;           // centered on the logging mode, +-3 sd
  int n_boot = 100;
  double delta = 0.05;
  std::uint64_t seed = 0;
};

struct WhatifPoint {
  double mu = 0.0;
  double ess_ratio = 0.0;
  double mean_weight = 0.0;
  double weight_se = 0.0;
  double estimate = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double ci_width = 0.0;
};

std::vector<WhatifPoint> whatif_diagnostics(const WhatifConfig& cfg, Exec exec = Exec::par);
std::vector<WhatifPoint> whatif_diagnostics(const Eigen::VectorXd& mu_grid, const WhatifConfig& cfg,
                                            Exec exec = Exec::par);

/// Default grid: logging mode +- 3 logging standard deviations.
Eigen::VectorXd whatif_default_grid(const WhatifConfig& cfg);

}  // namespace crm
