#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>

#include "crm/dataset.hpp"
#include "crm/parallel.hpp"
#include "crm/policy.hpp"

namespace crm {

/// Triangular reward peaked at a = p: rises with slope 1/rho_left, drops
/// with slope 1/rho_right, clamped at zero.
double reward_piecewise(double a, double p, double rho_left, double rho_right);

/// Zero inside the 10% tolerance band around the therapeutic dose, linear
/// outside: max(|a - t*| - 0.1 t*, 0).
double warfarin_cost(double a, double t_star);

enum class PotentialKind { noisymoons, noisycircles, anisotropic };

PotentialKind potential_kind_from_string(const std::string& s);
std::string to_string(PotentialKind k);

/// Synthetic environment: 2-D clustered contexts with a hidden per-row
/// potential; reward peaks where the action hits the potential. The
/// logging policy is a context-independent lognormal centered on the
/// population mean potential.
struct PotentialEnv {
  PotentialKind kind = PotentialKind::noisymoons;
  Eigen::VectorXd group_means;  // 2 groups (moons/circles) or 3 (anisotropic)
  double potential_std = 0.3;
  double rho_left = 2.0;
  double rho_right = 1.0;
  double logging_sd = 0.5;
  std::uint64_t seed = 0;

  double logging_mean() const { return group_means.mean(); }
  double logging_log_density(double a) const;
  double cost(double action, double potential) const {
    return -reward_piecewise(action, potential, rho_left, rho_right);
  }
};

PotentialEnv make_potential_env(PotentialKind kind, std::uint64_t seed);

/// Logged data plus the hidden per-row state (potential or therapeutic
/// dose) that online evaluation needs.
struct SyntheticDraws {
  LoggedDataset data;
  Eigen::VectorXd hidden;
};

SyntheticDraws generate_potential_env(const PotentialEnv& env, Eigen::Index n, Exec exec = Exec::par);

/// Semi-synthetic dosage setup: BMI-driven normal logging policy around the
/// therapeutic-dose moments.
struct WarfarinSim {
  double mu_t = 35.0;
  double sigma_t = 10.0;
  double theta_mix = 0.5;  // in [0, 1); 1 would make logging deterministic
  std::uint64_t seed = 0;

  double cost(double action, double t_star) const { return warfarin_cost(action, t_star); }
};

SyntheticDraws warfarin_logging(const WarfarinSim& sim, Eigen::Index n, Exec exec = Exec::par);

struct OnlineRisk {
  double risk = 0.0;
  double std_error = 0.0;
};

using HiddenCostFn = std::function<double(double action, double hidden)>;

/// Monte Carlo risk on a fixed set of (context, hidden) draws,
/// `samples_per_context` policy samples each. Deterministic given seed.
OnlineRisk online_risk_on(const PolicyModel& pm, const Eigen::MatrixXd& contexts,
                          const Eigen::VectorXd& hidden, const HiddenCostFn& cost,
                          int samples_per_context, std::uint64_t seed, Exec exec = Exec::par);

/// Fresh-draw variant: n_contexts new environment rows.
OnlineRisk online_risk(const PolicyModel& pm, const PotentialEnv& env, Eigen::Index n_contexts,
                       int samples_per_context, std::uint64_t seed, Exec exec = Exec::par);
OnlineRisk online_risk(const PolicyModel& pm, const WarfarinSim& sim, Eigen::Index n_contexts,
                       int samples_per_context, std::uint64_t seed, Exec exec = Exec::par);

/// Two potential clusters with noisy rewards; when requested, one injected
/// low-propensity high-reward row that unclipped IPS overfits.
SyntheticDraws clipping_toy(Eigen::Index n, bool outlier, std::uint64_t seed);

}  // namespace crm
