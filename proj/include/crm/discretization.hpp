#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "crm/dataset.hpp"
#include "crm/parallel.hpp"
#include "crm/rng.hpp"

namespace crm {

/// Naive discretization baseline: equal-width buckets over the logged
/// action range, a softmax policy with linear-in-context logits per bucket,
/// trained by clipped IPS against empirical bucket frequencies. Online, it
/// plays bucket centers.
struct DiscretePolicy {
  Eigen::VectorXd edges;    // m+1 bucket boundaries
  Eigen::VectorXd centers;  // m bucket midpoints
  Eigen::MatrixXd logits;   // (d+1) x m, last row is the bias
  Eigen::VectorXd log_freq; // empirical logging bucket log-frequencies

  Eigen::Index buckets() const { return centers.size(); }
  Eigen::Index bucket_of(double a) const;
  Eigen::VectorXd probabilities(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  double sample_action(const Eigen::Ref<const Eigen::VectorXd>& x, Rng& rng) const;
};

struct DiscreteTrainConfig {
  Eigen::Index buckets = 5;
  double clip = 20.0;        // hard clip on the discrete importance weights
  int max_iters = 300;
  double grad_tol = 1e-7;
  std::uint64_t seed = 0;
};

DiscretePolicy train_discrete_ips(const LoggedDataset& ds, const DiscreteTrainConfig& cfg,
                                  Exec exec = Exec::par);

}  // namespace crm
