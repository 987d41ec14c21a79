#pragma once

#include <Eigen/Dense>

namespace crm {

/// Gauss-Hermite rule adapted to N(0,1) expectations: evaluates
/// E[f(Z)] ~= sum_k weights[k] * f(nodes[k]) with weights summing to one.
struct GaussHermite {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

/// Golub-Welsch on the probabilists' Hermite recurrence.
GaussHermite gauss_hermite(int n);

}  // namespace crm
