#include "crm/policy.hpp"

#include <cmath>
#include <limits>

#include "crm/errors.hpp"

namespace crm {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}  // namespace

double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }

double softplus_inv(double y) {
  if (!(y > 0.0)) throw ValidationError("softplus_inv needs a positive argument");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double normal_log_pdf(double a, double mu, double sigma) {
  const double z = (a - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * kLog2Pi;
}

LognormalMap lognormal_moment_map(double mu, double sigma) {
  if (!(mu > 0.0)) throw ValidationError("lognormal moment map needs mu > 0");
  const double s2 = std::log1p((sigma * sigma) / (mu * mu));
  return {std::log(mu) - 0.5 * s2, std::sqrt(s2)};
}

double lognormal_log_pdf(double a, double mu, double sigma) {
  if (!(a > 0.0)) return kNegInf;
  const auto [m, s] = lognormal_moment_map(mu, sigma);
  const double z = (std::log(a) - m) / s;
  return -0.5 * z * z - std::log(a * s) - 0.5 * kLog2Pi;
}

double lognormal_entropy(double mu, double sigma) {
  const auto [m, s] = lognormal_moment_map(mu, sigma);
  return m + 0.5 * std::log(2.0 * M_PI * M_E * s * s);
}

LognormalMapDerivs lognormal_map_derivs(double mu, double sigma) {
  if (!(mu > 0.0)) throw ValidationError("lognormal moment map needs mu > 0");
  LognormalMapDerivs d;
  const double s2 = std::log1p((sigma * sigma) / (mu * mu));
  d.s = std::sqrt(s2);
  d.m = std::log(mu) - 0.5 * s2;
  const double denom = mu * mu + sigma * sigma;
  const double ds2_dmu = -2.0 * sigma * sigma / (mu * denom);
  const double ds2_dsig = 2.0 * sigma / denom;
  d.ds_dmu = 0.5 * ds2_dmu / d.s;
  d.ds_dsig = 0.5 * ds2_dsig / d.s;
  d.dm_dmu = 1.0 / mu - 0.5 * ds2_dmu;
  d.dm_dsig = -0.5 * ds2_dsig;
  return d;
}

Eigen::Index MeanModel::param_count() const {
  switch (kind) {
    case MeanKind::constant: return 1;
    case MeanKind::linear: return d + 1;
    case MeanKind::poly: return d * d + 1;
    case MeanKind::ccp: return embedding->dim();
    case MeanKind::greedy: return 0;
  }
  return 0;
}

namespace {

/// eta(x, a_j) for all anchors: psi_X(x)^T B psi_A(a_j), B = reshape(beta).
Eigen::VectorXd ccp_scores(const MeanModel& mm, const Eigen::Ref<const Eigen::VectorXd>& beta,
                           const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::VectorXd px = mm.embedding->context_map(x);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> B(
      beta.data(), px.size(), mm.embedding->action.m());
  return mm.anchor_embeddings * (B.transpose() * px);  // one score per anchor
}

/// Softmax of -gamma * eta with max subtraction.
Eigen::VectorXd soft_argmin_weights(const Eigen::VectorXd& eta, double gamma) {
  Eigen::VectorXd z = -gamma * eta;
  const double zmax = z.maxCoeff();
  Eigen::VectorXd p = (z.array() - zmax).exp();
  p /= p.sum();
  return p;
}

}  // namespace

double MeanModel::value(const Eigen::Ref<const Eigen::VectorXd>& params,
                        const Eigen::Ref<const Eigen::VectorXd>& x) const {
  switch (kind) {
    case MeanKind::constant: return params[0];
    case MeanKind::linear: return x.dot(params.head(d)) + params[d];
    case MeanKind::poly: {
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> B(
          params.data(), d, d);
      return x.dot(B * x) + params[d * d];
    }
    case MeanKind::ccp: {
      const Eigen::VectorXd p = soft_argmin_weights(ccp_scores(*this, params, x), gamma);
      return p.dot(anchors);
    }
    case MeanKind::greedy: {
      const Eigen::VectorXd eta = ccp_scores(*this, greedy_beta, x);
      Eigen::Index best = 0;
      for (Eigen::Index j = 1; j < eta.size(); ++j)
        if (eta[j] < eta[best]) best = j;  // ties keep the smaller action
      return anchors[best];
    }
  }
  throw ValidationError("unknown mean kind");
}

Eigen::VectorXd MeanModel::jacobian(const Eigen::Ref<const Eigen::VectorXd>& params,
                                    const Eigen::Ref<const Eigen::VectorXd>& x) const {
  switch (kind) {
    case MeanKind::constant: return Eigen::VectorXd::Ones(1);
    case MeanKind::linear: {
      Eigen::VectorXd j(d + 1);
      j.head(d) = x;
      j[d] = 1.0;
      return j;
    }
    case MeanKind::poly: {
      Eigen::VectorXd j(d * d + 1);
      Eigen::Index k = 0;
      for (Eigen::Index r = 0; r < d; ++r)
        for (Eigen::Index c = 0; c < d; ++c) j[k++] = x[r] * x[c];
      j[d * d] = 1.0;
      return j;
    }
    case MeanKind::ccp: {
      const Eigen::VectorXd eta = ccp_scores(*this, params, x);
      const Eigen::VectorXd p = soft_argmin_weights(eta, gamma);
      const double mu = p.dot(anchors);
      // d mu / d eta_j = -gamma p_j (a_j - mu); d eta_j / d beta = px (x) psiA_j
      const Eigen::VectorXd g = (-gamma) * p.array() * (anchors.array() - mu);
      const Eigen::VectorXd px = embedding->context_map(x);
      const Eigen::VectorXd pa_combo = anchor_embeddings.transpose() * g.matrix();
      Eigen::VectorXd out(px.size() * pa_combo.size());
      for (Eigen::Index i = 0; i < px.size(); ++i)
        out.segment(i * pa_combo.size(), pa_combo.size()) = px[i] * pa_combo;
      return out;
    }
    case MeanKind::greedy: return Eigen::VectorXd(0);
  }
  throw ValidationError("unknown mean kind");
}

MeanModel make_constant_mean() {
  MeanModel mm;
  mm.kind = MeanKind::constant;
  return mm;
}

MeanModel make_linear_mean(Eigen::Index d) {
  MeanModel mm;
  mm.kind = MeanKind::linear;
  mm.d = d;
  return mm;
}

MeanModel make_poly_mean(Eigen::Index d) {
  if (d > 16) throw ValidationError("poly mean restricted to d <= 16");
  MeanModel mm;
  mm.kind = MeanKind::poly;
  mm.d = d;
  return mm;
}

MeanModel make_ccp_mean(std::shared_ptr<const JointEmbedding> embedding, double gamma,
                        const Eigen::VectorXd& anchors) {
  if (!(gamma > 0.0)) throw ValidationError("ccp temperature must be positive");
  MeanModel mm;
  mm.kind = MeanKind::ccp;
  mm.d = embedding->context_map.d_in;
  mm.embedding = std::move(embedding);
  mm.gamma = gamma;
  mm.anchors = anchors;
  mm.anchor_embeddings = mm.embedding->action.embed_all(anchors);
  return mm;
}

MeanModel make_greedy_mean(std::shared_ptr<const JointEmbedding> embedding,
                           const Eigen::VectorXd& beta, const Eigen::VectorXd& anchors) {
  MeanModel mm;
  mm.kind = MeanKind::greedy;
  mm.d = embedding->context_map.d_in;
  mm.embedding = std::move(embedding);
  mm.anchors = anchors;
  mm.greedy_beta = beta;
  mm.anchor_embeddings = mm.embedding->action.embed_all(anchors);
  return mm;
}

bool PolicyModel::uses_softplus() const {
  if (family == Family::normal) return false;
  if ((mean.kind == MeanKind::ccp || mean.kind == MeanKind::greedy) && mean.anchors.size() > 0 &&
      mean.anchors.minCoeff() > 0.0)
    return false;
  return true;
}

double PolicyModel::mean_raw(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return mean.value(mean_params(), x);
}

double PolicyModel::mean_at(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const double mu = mean_raw(x);
  return uses_softplus() ? softplus(mu) : mu;
}

FamilyChain PolicyModel::chain(double mu_raw, double a) const {
  return family_chain(family, uses_softplus(), sigma_raw(), mu_raw, a);
}

FamilyChain family_chain(Family family, bool use_softplus, double sigma_raw, double mu_raw, double a) {
  FamilyChain out;
  const double sr = sigma_raw;
  const double sig = std::exp(sr);
  if (family == Family::normal) {
    const double z = (a - mu_raw) / sig;
    out.log_density = -0.5 * z * z - sr - 0.5 * kLog2Pi;
    out.dld_dmuraw = z / sig;
    out.dld_dsraw = z * z - 1.0;
    out.entropy = 0.5 * std::log(2.0 * M_PI * M_E) + sr;
    out.dent_dmuraw = 0.0;
    out.dent_dsraw = 1.0;
    return out;
  }
  const bool sp = use_softplus;
  const double mu = sp ? softplus(mu_raw) : mu_raw;
  const double dmu = sp ? sigmoid(mu_raw) : 1.0;
  if (!(mu > 0.0)) {
    out.log_density = kNegInf;
    out.entropy = kNegInf;
    return out;
  }
  const double s2 = std::log1p((sig * sig) / (mu * mu));
  const double s = std::sqrt(s2);
  const double m = std::log(mu) - 0.5 * s2;
  // entropy is defined even where the density is not evaluated
  out.entropy = m + 0.5 * std::log(2.0 * M_PI * M_E) + std::log(s);
  const double denom = mu * mu + sig * sig;
  const double ds2_dmu = -2.0 * sig * sig / (mu * denom);
  const double ds2_dsig = 2.0 * sig / denom;
  const double ds_dmu = 0.5 * ds2_dmu / s;
  const double ds_dsig = 0.5 * ds2_dsig / s;
  const double dm_dmu = 1.0 / mu - 0.5 * ds2_dmu;
  const double dm_dsig = -0.5 * ds2_dsig;
  out.dent_dmuraw = (dm_dmu + ds_dmu / s) * dmu;
  out.dent_dsraw = (dm_dsig + ds_dsig / s) * sig;
  if (!(a > 0.0)) {
    out.log_density = kNegInf;
    return out;
  }
  const double z = (std::log(a) - m) / s;
  out.log_density = -0.5 * z * z - std::log(a * s) - 0.5 * kLog2Pi;
  const double dld_dm = z / s;
  const double dld_ds = (z * z - 1.0) / s;
  out.dld_dmuraw = (dld_dm * dm_dmu + dld_ds * ds_dmu) * dmu;
  out.dld_dsraw = (dld_dm * dm_dsig + dld_ds * ds_dsig) * sig;
  return out;
}

double PolicyModel::log_density(const Eigen::Ref<const Eigen::VectorXd>& x, double a) const {
  return chain(mean_raw(x), a).log_density;
}

Eigen::VectorXd PolicyModel::score(const Eigen::Ref<const Eigen::VectorXd>& x, double a) const {
  const double mu_raw = mean_raw(x);
  const FamilyChain c = chain(mu_raw, a);
  if (!std::isfinite(c.log_density))
    throw ValidationError("score undefined: log density is -inf at the given (x, a)");
  Eigen::VectorXd out(param_count());
  const Eigen::Index k = mean.param_count();
  if (k > 0) out.head(k) = c.dld_dmuraw * mean.jacobian(mean_params(), x);
  out[k] = c.dld_dsraw;
  return out;
}

double PolicyModel::sample(const Eigen::Ref<const Eigen::VectorXd>& x, Rng& rng) const {
  const double mu = mean_at(x);
  const double sig = sigma();
  if (family == Family::normal) return mu + sig * rng.normal();
  const auto [m, s] = lognormal_moment_map(mu, sig);
  return std::exp(m + s * rng.normal());
}

double PolicyModel::entropy(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return chain(mean_raw(x), 1.0).entropy;
}

PolicyModel make_policy(Family family, MeanModel mean, const Eigen::VectorXd& theta) {
  PolicyModel pm;
  pm.family = family;
  pm.mean = std::move(mean);
  pm.theta = theta;
  if (pm.theta.size() != pm.param_count())
    throw ValidationError("theta length does not match the mean model");
  return pm;
}

LoggingDescription estimate_logging(const Eigen::VectorXd& actions) {
  const double mean = actions.mean();
  const double var =
      (actions.array() - mean).square().sum() / static_cast<double>(std::max<Eigen::Index>(actions.size() - 1, 1));
  return {mean, std::sqrt(var)};
}

PolicyModel init_near_logging(const LoggingDescription& logging, Family family, MeanModel mean,
                              std::uint64_t seed, double noise) {
  Rng rng(seed);
  const Eigen::Index k = mean.param_count();
  Eigen::VectorXd theta(k + 1);
  for (Eigen::Index i = 0; i < k; ++i) theta[i] = noise * rng.normal();
  const bool sp = family == Family::lognormal &&
                  !((mean.kind == MeanKind::ccp || mean.kind == MeanKind::greedy) &&
                    mean.anchors.size() > 0 && mean.anchors.minCoeff() > 0.0);
  const double target = sp ? softplus_inv(logging.mean) : logging.mean;
  if (mean.kind == MeanKind::constant) {
    theta[0] = target + noise * rng.normal();
  } else if (mean.kind == MeanKind::linear) {
    theta[mean.d] = target + noise * rng.normal();
  } else if (mean.kind == MeanKind::poly) {
    theta[mean.d * mean.d] = target + noise * rng.normal();
  }
  // ccp: near-zero beta already gives the anchor average; greedy has no knobs
  theta[k] = std::log(logging.sd);
  return make_policy(family, std::move(mean), theta);
}

std::string to_string(Family f) { return f == Family::normal ? "normal" : "lognormal"; }

std::string to_string(MeanKind k) {
  switch (k) {
    case MeanKind::constant: return "constant";
    case MeanKind::linear: return "linear";
    case MeanKind::poly: return "poly";
    case MeanKind::ccp: return "ccp";
    case MeanKind::greedy: return "greedy";
  }
  return "?";
}

Family family_from_string(const std::string& s) {
  if (s == "normal") return Family::normal;
  if (s == "lognormal") return Family::lognormal;
  throw ValidationError("unknown family: " + s);
}

MeanKind mean_kind_from_string(const std::string& s) {
  if (s == "constant") return MeanKind::constant;
  if (s == "linear") return MeanKind::linear;
  if (s == "poly") return MeanKind::poly;
  if (s == "ccp") return MeanKind::ccp;
  if (s == "greedy") return MeanKind::greedy;
  throw ValidationError("unknown mean kind: " + s);
}

}  // namespace crm
