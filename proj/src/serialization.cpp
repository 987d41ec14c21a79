#include "crm/serialization.hpp"

#include <fstream>

#include "crm/errors.hpp"

namespace crm {

namespace {

Json vec_to_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Eigen::VectorXd vec_from_json(const Json& j) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = j[static_cast<std::size_t>(i)].get<double>();
  return out;
}

Json mat_to_json(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(row);
  }
  return out;
}

Eigen::MatrixXd mat_from_json(const Json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      out(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  return out;
}

Json embedding_to_json(const JointEmbedding& je) {
  Json j;
  j["context_map"] = je.context_map.kind == ContextMapKind::linear ? "linear" : "quadratic";
  j["d_in"] = je.context_map.d_in;
  j["anchors"] = vec_to_json(je.action.anchors);
  j["bandwidth"] = je.action.bandwidth;
  j["whitener"] = mat_to_json(je.action.whitener);
  return j;
}

std::shared_ptr<const JointEmbedding> embedding_from_json(const Json& j) {
  auto je = std::make_shared<JointEmbedding>();
  je->context_map.kind =
      j.at("context_map").get<std::string>() == "linear" ? ContextMapKind::linear : ContextMapKind::quadratic;
  je->context_map.d_in = j.at("d_in").get<Eigen::Index>();
  je->action.anchors = vec_from_json(j.at("anchors"));
  je->action.bandwidth = j.at("bandwidth").get<double>();
  je->action.whitener = mat_from_json(j.at("whitener"));
  return je;
}

}  // namespace

Json to_json(const PolicyModel& pm) {
  Json j;
  j["family"] = to_string(pm.family);
  j["mean_kind"] = to_string(pm.mean.kind);
  j["params"] = vec_to_json(pm.theta.head(pm.mean.param_count()));
  j["sigma_raw"] = pm.sigma_raw();
  if (pm.mean.kind == MeanKind::ccp || pm.mean.kind == MeanKind::greedy) {
    j["gamma"] = pm.mean.gamma;
    j["anchors"] = vec_to_json(pm.mean.anchors);
    j["embedding"] = embedding_to_json(*pm.mean.embedding);
    if (pm.mean.kind == MeanKind::greedy) j["greedy_beta"] = vec_to_json(pm.mean.greedy_beta);
  } else if (pm.mean.kind != MeanKind::constant) {
    j["d"] = pm.mean.d;
  }
  return j;
}

PolicyModel policy_from_json(const Json& j) {
  const Family family = family_from_string(j.at("family").get<std::string>());
  const MeanKind kind = mean_kind_from_string(j.at("mean_kind").get<std::string>());
  MeanModel mean;
  switch (kind) {
    case MeanKind::constant:
      mean = make_constant_mean();
      break;
    case MeanKind::linear:
      mean = make_linear_mean(j.at("d").get<Eigen::Index>());
      break;
    case MeanKind::poly:
      mean = make_poly_mean(j.at("d").get<Eigen::Index>());
      break;
    case MeanKind::ccp:
      mean = make_ccp_mean(embedding_from_json(j.at("embedding")), j.at("gamma").get<double>(),
                           vec_from_json(j.at("anchors")));
      break;
    case MeanKind::greedy:
      mean = make_greedy_mean(embedding_from_json(j.at("embedding")),
                              vec_from_json(j.at("greedy_beta")), vec_from_json(j.at("anchors")));
      break;
  }
  const Eigen::VectorXd params = vec_from_json(j.at("params"));
  Eigen::VectorXd theta(params.size() + 1);
  theta.head(params.size()) = params;
  theta[params.size()] = j.at("sigma_raw").get<double>();
  return make_policy(family, std::move(mean), theta);
}

Json to_json(const CrmObjective& obj) {
  Json j;
  j["estimator"] = to_string(obj.estimator);
  j["M"] = obj.M;
  j["lambda_var"] = obj.lambda_var;
  j["lambda_ent"] = obj.lambda_ent;
  j["C_reg"] = obj.c_reg;
  return j;
}

CrmObjective objective_from_json(const Json& j) {
  CrmObjective obj;
  if (j.contains("estimator")) obj.estimator = estimator_from_string(j.at("estimator").get<std::string>());
  if (j.contains("M")) obj.M = j.at("M").get<double>();
  if (j.contains("lambda_var")) obj.lambda_var = j.at("lambda_var").get<double>();
  if (j.contains("lambda_ent")) obj.lambda_ent = j.at("lambda_ent").get<double>();
  if (j.contains("C_reg")) obj.c_reg = j.at("C_reg").get<double>();
  obj.validate();
  return obj;
}

Json to_json(const TrainResult& tr) {
  Json j;
  j["objective_trace"] = tr.objective_trace;
  j["wall_time_s"] = tr.wall_time_s;
  Json inner = Json::array();
  for (const auto& r : tr.inner) {
    inner.push_back({{"iterations", r.iterations},
                     {"converged", r.converged},
                     {"status", r.status},
                     {"value", r.value},
                     {"grad_norm", r.grad_norm}});
  }
  j["inner"] = inner;
  return j;
}

Json to_json(const ProtocolReport& rep) {
  Json j;
  j["snips_estimate"] = rep.snips_estimate;
  j["ips_estimate"] = rep.ips_estimate;
  j["snips_reward"] = -rep.snips_estimate;  // both sign conventions stated
  j["ess_ratio"] = rep.ess_ratio;
  j["ess_ratio_valid"] = rep.ess_ratio_valid;
  j["ess_ratio_test"] = rep.ess_ratio_test;
  j["mean_weight"] = rep.mean_weight;
  j["valid"] = rep.valid;
  j["reject_h0"] = rep.reject_h0;
  j["ci"] = {rep.ci_lower, rep.ci_upper};
  j["upper_one_sided"] = rep.upper_one_sided;
  j["logging_risk"] = rep.logging_risk;
  j["delta"] = rep.delta;
  j["nu"] = rep.nu;
  j["n_boot"] = rep.n_boot;
  j["boot_skipped"] = rep.boot_skipped;
  return j;
}

Json to_json(const ValidationSummary& summary) {
  Json j;
  j["setup"] = summary.setup;
  j["logging_risk"] = summary.logging_risk;
  auto conf = [](const Confusion& c) {
    return Json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
  };
  j["snips"] = conf(summary.snips);
  j["ips"] = conf(summary.ips);
  Json sweep = Json::array();
  for (const auto& pt : summary.sweep)
    sweep.push_back({{"nu", pt.nu},
                     {"precision", pt.precision},
                     {"recall", pt.recall},
                     {"f1", pt.f1},
                     {"tp", pt.tp},
                     {"fp", pt.fp},
                     {"fn", pt.fn}});
  j["sweep"] = sweep;
  return j;
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig cfg;
  if (j.contains("family")) cfg.family = family_from_string(j.at("family").get<std::string>());
  if (j.contains("mean")) cfg.mean_kind = mean_kind_from_string(j.at("mean").get<std::string>());
  if (j.contains("m_anchors")) cfg.m_anchors = j.at("m_anchors").get<Eigen::Index>();
  if (j.contains("anchor_strategy")) {
    const std::string s = j.at("anchor_strategy").get<std::string>();
    if (s == "grid") cfg.anchor_strategy = AnchorStrategy::grid;
    else if (s == "quantile") cfg.anchor_strategy = AnchorStrategy::quantile;
    else if (s == "kmeans") cfg.anchor_strategy = AnchorStrategy::kmeans;
    else throw ValidationError("unknown anchor strategy: " + s);
  }
  if (j.contains("gamma")) cfg.gamma = j.at("gamma").get<double>();
  if (j.contains("context_map"))
    cfg.context_map = j.at("context_map").get<std::string>() == "quadratic" ? ContextMapKind::quadratic
                                                                            : ContextMapKind::linear;
  if (j.contains("bandwidth")) cfg.bandwidth = j.at("bandwidth").get<double>();
  return cfg;
}

Json to_json(const ModelConfig& cfg) {
  Json j;
  j["family"] = to_string(cfg.family);
  j["mean"] = to_string(cfg.mean_kind);
  j["m_anchors"] = cfg.m_anchors;
  switch (cfg.anchor_strategy) {
    case AnchorStrategy::grid: j["anchor_strategy"] = "grid"; break;
    case AnchorStrategy::quantile: j["anchor_strategy"] = "quantile"; break;
    case AnchorStrategy::kmeans: j["anchor_strategy"] = "kmeans"; break;
  }
  j["gamma"] = cfg.gamma;
  j["context_map"] = cfg.context_map == ContextMapKind::quadratic ? "quadratic" : "linear";
  j["bandwidth"] = cfg.bandwidth;
  return j;
}

ProxConfig prox_config_from_json(const Json& j) {
  ProxConfig cfg;
  if (j.contains("kappa")) cfg.kappa = j.at("kappa").get<double>();
  if (j.contains("outer_iters")) cfg.outer_iters = j.at("outer_iters").get<int>();
  if (j.contains("inner_max_iters")) cfg.inner.max_iters = j.at("inner_max_iters").get<int>();
  if (j.contains("inner_grad_tol")) cfg.inner.grad_tol = j.at("inner_grad_tol").get<double>();
  if (j.contains("inner_memory")) cfg.inner.memory = j.at("inner_memory").get<int>();
  cfg.validate();
  return cfg;
}

Json to_json(const ProxConfig& cfg) {
  Json j;
  j["kappa"] = cfg.kappa;
  j["outer_iters"] = cfg.outer_iters;
  j["inner_max_iters"] = cfg.inner.max_iters;
  j["inner_grad_tol"] = cfg.inner.grad_tol;
  j["inner_memory"] = cfg.inner.memory;
  return j;
}

void save_json(const Json& j, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot open " + path + " for writing");
  f << j.dump(2) << "\n";
}

Json load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open " + path);
  Json j;
  f >> j;
  return j;
}

}  // namespace crm
