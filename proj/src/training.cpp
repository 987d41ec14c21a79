#include "crm/training.hpp"

#include "crm/errors.hpp"

namespace crm {

std::shared_ptr<const JointEmbedding> build_embedding(const ModelConfig& cfg,
                                                      const LoggedDataset& train) {
  const Eigen::VectorXd anchors =
      select_anchors(train.actions, cfg.m_anchors, cfg.anchor_strategy, 0);
  const double bw =
      cfg.bandwidth > 0.0 ? cfg.bandwidth : median_heuristic_bandwidth(train.actions);
  auto je = std::make_shared<JointEmbedding>();
  je->context_map = ContextMap{cfg.context_map, train.dim()};
  je->action = fit_nystrom(anchors, bw);
  return je;
}

PolicyModel build_initial_policy(const ModelConfig& cfg, const LoggedDataset& train,
                                 std::uint64_t seed) {
  MeanModel mean;
  switch (cfg.mean_kind) {
    case MeanKind::constant:
      mean = make_constant_mean();
      break;
    case MeanKind::linear:
      mean = make_linear_mean(train.dim());
      break;
    case MeanKind::poly:
      mean = make_poly_mean(train.dim());
      break;
    case MeanKind::ccp: {
      auto je = build_embedding(cfg, train);
      mean = make_ccp_mean(je, cfg.gamma, je->action.anchors);
      break;
    }
    case MeanKind::greedy:
      throw ValidationError("greedy policies come from dm_policy, not training");
  }
  return init_near_logging(estimate_logging(train.actions), cfg.family, std::move(mean), seed);
}

TrainedPolicy train_policy(const TrainSpec& spec, const LoggedDataset& train, std::uint64_t seed,
                           Exec exec) {
  PolicyModel init = build_initial_policy(spec.model, train, seed);
  TrainedPolicy out;
  out.result = proximal_train(init, train, spec.objective, spec.prox, exec);
  out.policy = init;
  out.policy.theta = out.result.theta;
  return out;
}

}  // namespace crm
