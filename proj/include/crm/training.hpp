#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "crm/dataset.hpp"
#include "crm/estimators.hpp"
#include "crm/optimizer.hpp"

namespace crm {

/// Everything needed to build an initial policy on a training set.
struct ModelConfig {
  Family family = Family::normal;
  MeanKind mean_kind = MeanKind::constant;
  // ccp settings
  Eigen::Index m_anchors = 10;
  AnchorStrategy anchor_strategy = AnchorStrategy::grid;
  double gamma = 10.0;
  ContextMapKind context_map = ContextMapKind::linear;
  double bandwidth = 0.0;  // 0 = median heuristic on the training actions
};

struct TrainSpec {
  ModelConfig model;
  CrmObjective objective;
  ProxConfig prox;
};

/// Anchors, bandwidth and joint embedding from the training actions.
std::shared_ptr<const JointEmbedding> build_embedding(const ModelConfig& cfg,
                                                      const LoggedDataset& train);

/// Initial policy near the logging moments (estimated from the logged
/// actions), with the mean model requested by the config.
PolicyModel build_initial_policy(const ModelConfig& cfg, const LoggedDataset& train,
                                 std::uint64_t seed);

struct TrainedPolicy {
  PolicyModel policy;
  TrainResult result;
};

TrainedPolicy train_policy(const TrainSpec& spec, const LoggedDataset& train, std::uint64_t seed,
                           Exec exec = Exec::par);

}  // namespace crm
