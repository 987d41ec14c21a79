#include "crm/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "crm/errors.hpp"
#include "crm/rng.hpp"

namespace crm {

Eigen::VectorXd ContextMap::operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != d_in) throw ValidationError("context dimension mismatch");
  if (kind == ContextMapKind::linear) return x;
  Eigen::VectorXd out(d_out());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d_in; ++i)
    for (Eigen::Index j = 0; j < d_in; ++j) out[k++] = x[i] * x[j];
  out.tail(d_in) = x;
  return out;
}

Eigen::MatrixXd ContextMap::apply(const Eigen::MatrixXd& X, Exec exec) const {
  if (X.cols() != d_in) throw ValidationError("context dimension mismatch");
  Eigen::MatrixXd out(X.rows(), d_out());
  parallel_for(
      X.rows(), [&](Eigen::Index i) { out.row(i) = (*this)(X.row(i).transpose()).transpose(); }, exec);
  return out;
}

namespace {

double quantile_type7(std::vector<double> sorted, double q) {
  const std::size_t n = sorted.size();
  const double h = (static_cast<double>(n) - 1.0) * q;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, n - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Eigen::VectorXd kmeans_1d(const Eigen::VectorXd& actions, Eigen::Index m, std::uint64_t seed) {
  const Eigen::Index n = actions.size();
  Rng rng(seed);
  // k-means++ style init on distinct values
  std::vector<double> centers;
  centers.push_back(actions[static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)))]);
  while (static_cast<Eigen::Index>(centers.size()) < m) {
    std::vector<double> d2(static_cast<std::size_t>(n));
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (actions[i] - c) * (actions[i] - c));
      d2[static_cast<std::size_t>(i)] = best;
      total += best;
    }
    if (total <= 0.0) throw ValidationError("k-means: fewer distinct actions than anchors");
    double target = rng.uniform01() * total;
    Eigen::Index pick = n - 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      target -= d2[static_cast<std::size_t>(i)];
      if (target <= 0.0) {
        pick = i;
        break;
      }
    }
    centers.push_back(actions[pick]);
  }
  Eigen::VectorXd c = Eigen::Map<Eigen::VectorXd>(centers.data(), m);
  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < m; ++k) {
        const double d = std::abs(actions[i] - c[k]);
        if (d < bd) {
          bd = d;
          best = k;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd cnt = Eigen::VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum[assign[static_cast<std::size_t>(i)]] += actions[i];
      cnt[assign[static_cast<std::size_t>(i)]] += 1.0;
    }
    for (Eigen::Index k = 0; k < m; ++k)
      if (cnt[k] > 0) c[k] = sum[k] / cnt[k];
    if (!changed && iter > 0) break;
  }
  std::sort(c.data(), c.data() + c.size());
  return c;
}

}  // namespace

Eigen::VectorXd select_anchors(const Eigen::VectorXd& actions, Eigen::Index m, AnchorStrategy strategy,
                               std::uint64_t seed) {
  if (m < 1) throw ValidationError("need at least one anchor");
  if (actions.size() == 0) throw ValidationError("no actions to select anchors from");
  std::set<double> distinct(actions.data(), actions.data() + actions.size());
  if (static_cast<Eigen::Index>(distinct.size()) < m)
    throw ValidationError("more anchors requested than distinct actions");

  switch (strategy) {
    case AnchorStrategy::grid: {
      const double lo = actions.minCoeff(), hi = actions.maxCoeff();
      Eigen::VectorXd out(m);
      if (m == 1) {
        out[0] = 0.5 * (lo + hi);
        return out;
      }
      for (Eigen::Index i = 0; i < m; ++i)
        out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(m - 1);
      return out;
    }
    case AnchorStrategy::quantile: {
      std::vector<double> sorted(actions.data(), actions.data() + actions.size());
      std::sort(sorted.begin(), sorted.end());
      Eigen::VectorXd out(m);
      for (Eigen::Index i = 0; i < m; ++i)
        out[i] = quantile_type7(sorted, (2.0 * static_cast<double>(i) + 1.0) / (2.0 * static_cast<double>(m)));
      for (Eigen::Index i = 1; i < m; ++i)
        if (out[i] <= out[i - 1]) throw ValidationError("quantile anchors collide; reduce m");
      return out;
    }
    case AnchorStrategy::kmeans:
      return kmeans_1d(actions, m, seed);
  }
  throw ValidationError("unknown anchor strategy");
}

Eigen::MatrixXd select_anchors_kmeans(const Eigen::MatrixXd& actions, Eigen::Index m, std::uint64_t seed) {
  const Eigen::Index n = actions.rows(), da = actions.cols();
  if (m < 1 || n < m) throw ValidationError("bad anchor count for k-means");
  Rng rng(seed);
  Eigen::MatrixXd c(m, da);
  c.row(0) = actions.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n))));
  for (Eigen::Index k = 1; k < m; ++k) {
    Eigen::VectorXd d2(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < k; ++j)
        best = std::min(best, (actions.row(i) - c.row(j)).squaredNorm());
      d2[i] = best;
    }
    const double total = d2.sum();
    if (total <= 0.0) throw ValidationError("k-means: fewer distinct actions than anchors");
    double target = rng.uniform01() * total;
    Eigen::Index pick = n - 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      target -= d2[i];
      if (target <= 0.0) {
        pick = i;
        break;
      }
    }
    c.row(k) = actions.row(pick);
  }
  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < m; ++k) {
        const double d = (actions.row(i) - c.row(k)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = k;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(m, da);
    Eigen::VectorXd cnt = Eigen::VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum.row(assign[static_cast<std::size_t>(i)]) += actions.row(i);
      cnt[assign[static_cast<std::size_t>(i)]] += 1.0;
    }
    for (Eigen::Index k = 0; k < m; ++k)
      if (cnt[k] > 0) c.row(k) = sum.row(k) / cnt[k];
    if (!changed && iter > 0) break;
  }
  return c;
}

double median_heuristic_bandwidth(const Eigen::VectorXd& actions, std::uint64_t seed) {
  const Eigen::Index n = actions.size();
  if (n < 2) throw ValidationError("need at least two actions for the median heuristic");
  // subsample to keep the pair count manageable
  const Eigen::Index cap = 512;
  Eigen::VectorXd sub;
  if (n <= cap) {
    sub = actions;
  } else {
    Rng rng(seed);
    sub.resize(cap);
    for (Eigen::Index i = 0; i < cap; ++i)
      sub[i] = actions[static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)))];
  }
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(sub.size()) * (sub.size() - 1) / 2);
  for (Eigen::Index i = 0; i < sub.size(); ++i)
    for (Eigen::Index j = i + 1; j < sub.size(); ++j) {
      const double d = std::abs(sub[i] - sub[j]);
      if (d > 0) dist.push_back(d);
    }
  if (dist.empty()) throw ValidationError("all actions identical; bandwidth undefined");
  std::nth_element(dist.begin(), dist.begin() + dist.size() / 2, dist.end());
  const double med = dist[dist.size() / 2];
  return 1.0 / (med * med);
}

Eigen::VectorXd NystromEmbedding::kernel_column(double a) const {
  Eigen::VectorXd k(m());
  for (Eigen::Index i = 0; i < m(); ++i) {
    const double d = a - anchors[i];
    k[i] = std::exp(-0.5 * bandwidth * d * d);
  }
  return k;
}

Eigen::VectorXd NystromEmbedding::embed(double a) const { return whitener * kernel_column(a); }

Eigen::VectorXd NystromEmbedding::embed_grad(double a) const {
  Eigen::VectorXd dk(m());
  for (Eigen::Index i = 0; i < m(); ++i) {
    const double d = a - anchors[i];
    dk[i] = -bandwidth * d * std::exp(-0.5 * bandwidth * d * d);
  }
  return whitener * dk;
}

Eigen::MatrixXd NystromEmbedding::embed_all(const Eigen::VectorXd& actions, Exec exec) const {
  Eigen::MatrixXd out(actions.size(), m());
  parallel_for(
      actions.size(), [&](Eigen::Index i) { out.row(i) = embed(actions[i]).transpose(); }, exec);
  return out;
}

NystromEmbedding fit_nystrom(const Eigen::VectorXd& anchors, double bandwidth) {
  if (!(bandwidth > 0.0)) throw ValidationError("bandwidth must be positive");
  const Eigen::Index m = anchors.size();
  if (m < 1) throw ValidationError("need at least one anchor");
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j)
      if (anchors[i] == anchors[j])
        throw ValidationError("duplicate anchors at indices " + std::to_string(i) + "," + std::to_string(j));

  Eigen::MatrixXd gram(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const double d = anchors[i] - anchors[j];
      gram(i, j) = std::exp(-0.5 * bandwidth * d * d);
    }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw ValidationError("eigendecomposition of the anchor Gram failed");
  Eigen::VectorXd lam = eig.eigenvalues();
  const double lam_max = lam.maxCoeff();
  if (!(lam_max > 0.0)) {
    std::string detail;
    for (Eigen::Index i = 0; i < m && i < 4; ++i)
      for (Eigen::Index j = i + 1; j < m && j < 4; ++j)
        detail += " (" + std::to_string(i) + "," + std::to_string(j) + ")";
    throw ValidationError("anchor Gram numerically singular; offending pairs:" + detail);
  }
  const double floor = 1e-10 * lam_max;
  Eigen::VectorXd inv_sqrt(m);
  for (Eigen::Index i = 0; i < m; ++i) inv_sqrt[i] = 1.0 / std::sqrt(std::max(lam[i], floor));

  NystromEmbedding ne;
  ne.anchors = anchors;
  ne.bandwidth = bandwidth;
  ne.whitener = eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
  return ne;
}

Eigen::VectorXd JointEmbedding::embed(const Eigen::Ref<const Eigen::VectorXd>& x, double a) const {
  const Eigen::VectorXd px = context_map(x);
  const Eigen::VectorXd pa = action.embed(a);
  Eigen::VectorXd out(px.size() * pa.size());
  for (Eigen::Index i = 0; i < px.size(); ++i) out.segment(i * pa.size(), pa.size()) = px[i] * pa;
  return out;
}

}  // namespace crm
