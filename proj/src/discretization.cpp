#include "crm/discretization.hpp"

#include <cmath>

#include "crm/errors.hpp"
#include "crm/optimizer.hpp"

namespace crm {

Eigen::Index DiscretePolicy::bucket_of(double a) const {
  const Eigen::Index m = buckets();
  for (Eigen::Index b = 1; b < m; ++b)
    if (a < edges[b]) return b - 1;
  return m - 1;
}

Eigen::VectorXd DiscretePolicy::probabilities(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  Eigen::VectorXd f(x.size() + 1);
  f.head(x.size()) = x;
  f[x.size()] = 1.0;
  Eigen::VectorXd u = logits.transpose() * f;
  const double umax = u.maxCoeff();
  Eigen::VectorXd p = (u.array() - umax).exp();
  p /= p.sum();
  return p;
}

double DiscretePolicy::sample_action(const Eigen::Ref<const Eigen::VectorXd>& x, Rng& rng) const {
  const Eigen::VectorXd p = probabilities(x);
  double u = rng.uniform01();
  for (Eigen::Index b = 0; b < p.size(); ++b) {
    u -= p[b];
    if (u <= 0.0) return centers[b];
  }
  return centers[p.size() - 1];
}

DiscretePolicy train_discrete_ips(const LoggedDataset& ds, const DiscreteTrainConfig& cfg,
                                  Exec exec) {
  const Eigen::Index m = cfg.buckets;
  if (m < 2) throw ValidationError("need at least two buckets");
  const Eigen::Index n = ds.n();
  const Eigen::Index d = ds.dim();

  DiscretePolicy pol;
  pol.edges.resize(m + 1);
  const double lo = ds.actions.minCoeff(), hi = ds.actions.maxCoeff();
  for (Eigen::Index b = 0; b <= m; ++b)
    pol.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(m);
  pol.centers.resize(m);
  for (Eigen::Index b = 0; b < m; ++b) pol.centers[b] = 0.5 * (pol.edges[b] + pol.edges[b + 1]);

  Eigen::VectorXi bucket(n);
  Eigen::VectorXd freq = Eigen::VectorXd::Zero(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    bucket[i] = static_cast<int>(pol.bucket_of(ds.actions[i]));
    freq[bucket[i]] += 1.0;
  }
  freq /= static_cast<double>(n);
  pol.log_freq = freq.array().max(1e-8).log();

  Eigen::MatrixXd feats(n, d + 1);
  feats.leftCols(d) = ds.contexts;
  feats.col(d).setOnes();

  const Eigen::Index k = d + 1;
  Rng rng(cfg.seed);
  Eigen::VectorXd theta(k * m);
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = 0.01 * rng.normal();

  const double nd = static_cast<double>(n);
  ValueGradFn fn = [&](const Eigen::VectorXd& th, Eigen::VectorXd& grad) {
    Eigen::Map<const Eigen::MatrixXd> L(th.data(), k, m);
    Eigen::MatrixXd logits = feats * L;  // n x m
    Eigen::VectorXd coef(n);
    double value = blocked_sum(
        n,
        [&](Eigen::Index i) {
          Eigen::VectorXd u = logits.row(i).transpose();
          const double umax = u.maxCoeff();
          Eigen::VectorXd p = (u.array() - umax).exp();
          p /= p.sum();
          const double pb = p[bucket[i]];
          const double w = pb * std::exp(-pol.log_freq[bucket[i]]);
          coef[i] = w > cfg.clip ? 0.0 : ds.costs[i] * w;  // clipped rows freeze
          return ds.costs[i] * std::min(w, cfg.clip);
        },
        exec);
    value /= nd;
    // d value / d logits = coef/n * (onehot - p)
    Eigen::MatrixXd glogits(n, m);
    parallel_for(
        n,
        [&](Eigen::Index i) {
          Eigen::VectorXd u = logits.row(i).transpose();
          const double umax = u.maxCoeff();
          Eigen::VectorXd p = (u.array() - umax).exp();
          p /= p.sum();
          glogits.row(i) = (-coef[i] / nd) * p.transpose();
          glogits(i, bucket[i]) += coef[i] / nd;
        },
        exec);
    const Eigen::MatrixXd g = feats.transpose() * glogits;  // k x m
    grad = Eigen::Map<const Eigen::VectorXd>(g.data(), k * m);
    return value;
  };

  LbfgsConfig inner;
  inner.max_iters = cfg.max_iters;
  inner.grad_tol = cfg.grad_tol;
  const LbfgsResult res = minimize(fn, theta, inner);
  pol.logits = Eigen::Map<const Eigen::MatrixXd>(res.theta.data(), k, m);
  return pol;
}

}  // namespace crm
