#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>

#include "crm/embedding.hpp"
#include "crm/rng.hpp"

namespace crm {

enum class Family { normal, lognormal };
enum class MeanKind { constant, linear, poly, ccp, greedy };

double softplus(double z);
double softplus_inv(double y);
double sigmoid(double z);

double normal_log_pdf(double a, double mu, double sigma);

/// Log-space parameters of the lognormal with mean mu and std sigma:
/// s = sqrt(log(sigma^2/mu^2 + 1)), m = log(mu) - s^2/2.
struct LognormalMap {
  double m, s;
};
LognormalMap lognormal_moment_map(double mu, double sigma);
double lognormal_log_pdf(double a, double mu, double sigma);
double lognormal_entropy(double mu, double sigma);

/// Moment map plus its partial derivatives (used to differentiate through
/// reparametrized lognormal samples).
struct LognormalMapDerivs {
  double m, s, dm_dmu, ds_dmu, dm_dsig, ds_dsig;
};
LognormalMapDerivs lognormal_map_derivs(double mu, double sigma);

/// Context-dependent mean. Parameters live in an external flat vector so
/// the whole policy can be optimized as one unconstrained theta.
///   constant: [b]               linear: [beta(d), b]
///   poly:     [vec(B)(d*d), b]  ccp:    [beta_ccp(p)]
///   greedy:   []  (argmin over anchors of a fixed cost predictor)
struct MeanModel {
  MeanKind kind = MeanKind::constant;
  Eigen::Index d = 0;
  std::shared_ptr<const JointEmbedding> embedding;  // ccp / greedy
  double gamma = 1.0;                               // ccp soft-argmin temperature
  Eigen::VectorXd anchors;                          // ccp / greedy support
  Eigen::VectorXd greedy_beta;                      // greedy cost-predictor weights
  Eigen::MatrixXd anchor_embeddings;                // cached psi_A rows for `anchors`

  Eigen::Index param_count() const;

  double value(const Eigen::Ref<const Eigen::VectorXd>& params,
               const Eigen::Ref<const Eigen::VectorXd>& x) const;

  /// d mean / d params at x. Empty for greedy.
  Eigen::VectorXd jacobian(const Eigen::Ref<const Eigen::VectorXd>& params,
                           const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

MeanModel make_constant_mean();
MeanModel make_linear_mean(Eigen::Index d);
MeanModel make_poly_mean(Eigen::Index d);
MeanModel make_ccp_mean(std::shared_ptr<const JointEmbedding> embedding, double gamma,
                        const Eigen::VectorXd& anchors);
MeanModel make_greedy_mean(std::shared_ptr<const JointEmbedding> embedding,
                           const Eigen::VectorXd& beta, const Eigen::VectorXd& anchors);

/// Per-row derivatives of the log density and entropy with respect to the
/// raw mean-model output and sigma_raw. The lognormal chain includes the
/// moment map and (when enabled) the softplus positivity map.
struct FamilyChain {
  double log_density = 0.0;
  double dld_dmuraw = 0.0;
  double dld_dsraw = 0.0;
  double entropy = 0.0;
  double dent_dmuraw = 0.0;
  double dent_dsraw = 0.0;
};

FamilyChain family_chain(Family family, bool use_softplus, double sigma_raw, double mu_raw, double a);

/// Stochastic policy: family + mean model + flat parameters
/// theta = [mean params..., sigma_raw], sigma = exp(sigma_raw).
struct PolicyModel {
  Family family = Family::normal;
  MeanModel mean;
  Eigen::VectorXd theta;

  Eigen::Index param_count() const { return mean.param_count() + 1; }
  double sigma_raw() const { return theta[theta.size() - 1]; }
  double sigma() const { return std::exp(sigma_raw()); }
  Eigen::VectorXd mean_params() const { return theta.head(mean.param_count()); }

  /// Raw mean-model output (the CCP convex combination, pre-positivity-map).
  double mean_raw(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  /// Mean of the action distribution at x (softplus-mapped where needed).
  double mean_at(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  /// Whether the lognormal positivity map applies: yes unless the mean is a
  /// convex combination of strictly positive anchors (ccp/greedy), which
  /// cannot go negative.
  bool uses_softplus() const;

  FamilyChain chain(double mu_raw, double a) const;

  double log_density(const Eigen::Ref<const Eigen::VectorXd>& x, double a) const;
  /// Gradient of log_density over theta; throws if log_density is -inf.
  Eigen::VectorXd score(const Eigen::Ref<const Eigen::VectorXd>& x, double a) const;
  double sample(const Eigen::Ref<const Eigen::VectorXd>& x, Rng& rng) const;
  double entropy(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

PolicyModel make_policy(Family family, MeanModel mean, const Eigen::VectorXd& theta);

struct LoggingDescription {
  double mean = 0.0;
  double sd = 1.0;
};

/// Moments of the logged actions; the cheap stand-in when the logging
/// policy itself is unknown.
LoggingDescription estimate_logging(const Eigen::VectorXd& actions);

/// Policy whose action distribution matches the logging moments, with
/// N(0, noise^2) perturbation on the parameters (noise 0 gives the exact
/// moment match). Importance weights of the result against the logging
/// policy stay near one, so the first optimization steps see a healthy
/// effective sample size.
PolicyModel init_near_logging(const LoggingDescription& logging, Family family, MeanModel mean,
                              std::uint64_t seed, double noise = 0.01);

std::string to_string(Family f);
std::string to_string(MeanKind k);
Family family_from_string(const std::string& s);
MeanKind mean_kind_from_string(const std::string& s);

}  // namespace crm
