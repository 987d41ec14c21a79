#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>

#include "crm/parallel.hpp"

namespace crm {

enum class ContextMapKind { linear, quadratic };

/// Context feature map: identity, or the quadratic lift (xx^T, x).
struct ContextMap {
  ContextMapKind kind = ContextMapKind::linear;
  Eigen::Index d_in = 0;

  Eigen::Index d_out() const {
    return kind == ContextMapKind::linear ? d_in : d_in * d_in + d_in;
  }

  Eigen::VectorXd operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  /// Row-wise application; rows of X are contexts.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& X, Exec exec = Exec::serial) const;
};

enum class AnchorStrategy { grid, quantile, kmeans };

/// Picks m distinct representative actions. grid spans [min,max] evenly,
/// quantile places anchors at the midpoint quantiles Q((2i-1)/(2m)), and
/// kmeans runs seeded Lloyd iterations.
Eigen::VectorXd select_anchors(const Eigen::VectorXd& actions, Eigen::Index m, AnchorStrategy strategy,
                               std::uint64_t seed = 0);

/// K-means anchors for vector-valued actions (rows of `actions`).
Eigen::MatrixXd select_anchors_kmeans(const Eigen::MatrixXd& actions, Eigen::Index m, std::uint64_t seed = 0);

/// 1 / median(pairwise distance)^2 over a subsample of the actions.
double median_heuristic_bandwidth(const Eigen::VectorXd& actions, std::uint64_t seed = 0);

/// Finite-dimensional embedding psi_A(a) = K_AA^{-1/2} K_A(a) for the
/// Gaussian kernel k(a,a') = exp(-bandwidth/2 (a-a')^2).
struct NystromEmbedding {
  Eigen::VectorXd anchors;
  double bandwidth = 1.0;
  Eigen::MatrixXd whitener;  // symmetric K_AA^{-1/2}

  Eigen::Index m() const { return anchors.size(); }

  Eigen::VectorXd kernel_column(double a) const;
  Eigen::VectorXd embed(double a) const;
  /// d psi_A / d a.
  Eigen::VectorXd embed_grad(double a) const;

  /// One row per action.
  Eigen::MatrixXd embed_all(const Eigen::VectorXd& actions, Exec exec = Exec::serial) const;
};

/// Eigendecomposition-based fit; eigenvalues below 1e-10 * lambda_max are
/// clamped to that floor. Throws on duplicate anchors.
NystromEmbedding fit_nystrom(const Eigen::VectorXd& anchors, double bandwidth);

/// psi(x, a) = psi_X(x) (x) psi_A(a), flattened row-major:
/// psi[i*m + j] = psi_X(x)[i] * psi_A(a)[j].
struct JointEmbedding {
  ContextMap context_map;
  NystromEmbedding action;

  Eigen::Index dim() const { return context_map.d_out() * action.m(); }

  Eigen::VectorXd embed(const Eigen::Ref<const Eigen::VectorXd>& x, double a) const;
};

}  // namespace crm
