#include "crm/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "crm/errors.hpp"

namespace crm {

GaussHermite gauss_hermite(int n) {
  if (n < 1) throw ValidationError("quadrature order must be >= 1");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double off = std::sqrt(static_cast<double>(k));
    jacobi(k, k - 1) = off;
    jacobi(k - 1, k) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  GaussHermite out;
  out.nodes = eig.eigenvalues();
  out.weights.resize(n);
  for (int k = 0; k < n; ++k) {
    const double v0 = eig.eigenvectors()(0, k);
    out.weights[k] = v0 * v0;  // total mass 1 for the N(0,1) measure
  }
  return out;
}

}  // namespace crm
