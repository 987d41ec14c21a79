#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>

#include "crm/dataset.hpp"
#include "crm/parallel.hpp"
#include "crm/policy.hpp"

namespace crm {

enum class Estimator { ips, cips, scips, snips, dm, sdm };

std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& s);

/// Ridge regression cost model over a joint embedding.
struct CostPredictor {
  std::shared_ptr<const JointEmbedding> embedding;
  Eigen::VectorXd beta;
  double ridge = 0.0;

  double predict(const Eigen::Ref<const Eigen::VectorXd>& x, double a) const;
  double predict_da(const Eigen::Ref<const Eigen::VectorXd>& x, double a) const;
};

/// Estimator choice plus the regularization knobs of the CRM objective.
struct CrmObjective {
  Estimator estimator = Estimator::scips;
  double M = 10.0;          // clipping threshold (cips / scips), >= 1
  double lambda_var = 0.0;  // empirical-variance penalty weight
  double lambda_ent = 0.0;  // entropy bonus weight
  double c_reg = 0.0;       // l2 on mean-model parameters
  std::shared_ptr<const CostPredictor> predictor;  // dm / sdm only

  void validate() const;
};

struct WeightStats {
  Eigen::VectorXd weights;
  double mean_weight = 0.0;
  double ess = 0.0;        // (sum w)^2 / sum w^2
  double ess_ratio = 0.0;  // ess / n
};

WeightStats weight_stats(const Eigen::VectorXd& weights);

/// w_i = pi(a_i|x_i) / propensity_i. Throws if any weight is non-finite.
WeightStats importance_weights(const PolicyModel& pm, const LoggedDataset& ds, Exec exec = Exec::par);

/// Root of alpha*log(alpha) = M (M >= 1), |residual| <= 1e-12.
double solve_alpha(double M);

struct SoftClip {
  double value;
  double deriv;
};

/// Logarithmic soft clip: w below M passes through, above M grows like
/// alpha*log(w + alpha - M). C^1 at w = M by the choice of alpha.
SoftClip soft_clip(double w, double M, double alpha_m);
SoftClip soft_clip(double w, double M);

/// Value of the named estimator (cost scale, no penalties).
double estimate(const PolicyModel& pm, const LoggedDataset& ds, const CrmObjective& obj,
                Exec exec = Exec::par);

/// Unbiased sample variance of the per-row estimator terms.
double variance_penalty(const PolicyModel& pm, const LoggedDataset& ds, const CrmObjective& obj,
                        Exec exec = Exec::par);

struct ValueGrad {
  double value = 0.0;
  Eigen::VectorXd grad;
};

/// estimate + lambda_var * variance + c_reg * |mean params|^2
/// - lambda_ent * mean entropy, with the exact gradient over theta.
ValueGrad objective_value_grad(const PolicyModel& pm, const LoggedDataset& ds,
                               const CrmObjective& obj, Exec exec = Exec::par);

/// Reusable evaluator bound to (family, mean model, dataset, objective);
/// theta varies across calls. This is what the optimizer drives.
class CrmProblem {
 public:
  CrmProblem(Family family, MeanModel mean, const LoggedDataset& ds, CrmObjective obj,
             Exec exec = Exec::par);

  Eigen::Index dim() const { return mean_.param_count() + 1; }
  const MeanModel& mean_model() const { return mean_; }
  Family family() const { return family_; }
  const CrmObjective& objective() const { return obj_; }

  /// Objective value; grad (if non-null) receives d value / d theta.
  double eval(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const;

  /// Estimator value only (no penalties).
  double estimate_only(const Eigen::VectorXd& theta) const;

 private:
  void mean_batch(const Eigen::VectorXd& mean_params, Eigen::VectorXd& mu_raw,
                  Eigen::MatrixXd* softargmin) const;
  void fold_mean_grad(const Eigen::VectorXd& mean_params, const Eigen::VectorXd& coeff,
                      const Eigen::MatrixXd& softargmin, const Eigen::VectorXd& mu_raw,
                      Eigen::Ref<Eigen::VectorXd> grad) const;

  Family family_;
  MeanModel mean_;
  CrmObjective obj_;
  Exec exec_;
  Eigen::Index n_;
  Eigen::VectorXd actions_, costs_, log_prop_;
  Eigen::MatrixXd feats_;   // constant/linear/poly design matrix
  Eigen::MatrixXd psi_x_;   // ccp/greedy context features
  Eigen::VectorXd greedy_mu_;
};

/// Ridge fit of costs on psi(x, a) via jittered normal equations.
CostPredictor fit_cost_predictor(const LoggedDataset& ds,
                                 std::shared_ptr<const JointEmbedding> embedding, double ridge,
                                 Exec exec = Exec::par);

/// Greedy policy over the anchor grid of the fitted cost model; sigma_dm > 0
/// gives the stochastic direct method.
PolicyModel dm_policy(const CostPredictor& cp, const Eigen::VectorXd& anchors, double sigma_dm);

}  // namespace crm
