#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "crm/dataset.hpp"
#include "crm/envs.hpp"
#include "crm/errors.hpp"
#include "crm/protocol.hpp"
#include "crm/serialization.hpp"
#include "crm/training.hpp"

namespace fs = std::filesystem;
using crm::Json;

namespace {

std::uint64_t resolve_seed(std::int64_t flag_seed) {
  if (flag_seed >= 0) return static_cast<std::uint64_t>(flag_seed);
  if (const char* env = std::getenv("CRM_SEED")) return std::strtoull(env, nullptr, 10);
  return 42;
}

void write_manifest(const fs::path& dir, const std::string& command, const Json& config) {
  Json manifest;
  manifest["command"] = command;
  manifest["config"] = config;
  crm::save_json(manifest, (dir / "manifest.json").string());
}

fs::path ensure_dir(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

int cmd_generate(const std::string& env_name, long n, std::int64_t seed_flag,
                 const std::string& out, const std::string& config_path) {
  const std::uint64_t seed = resolve_seed(seed_flag);
  Json cfg = config_path.empty() ? Json::object() : crm::load_json(config_path);
  crm::SyntheticDraws draws;
  Json echo;
  echo["env"] = env_name;
  echo["n"] = n;
  echo["seed"] = seed;
  if (env_name == "warfarin-sim") {
    crm::WarfarinSim sim;
    if (cfg.contains("mu_t")) sim.mu_t = cfg["mu_t"].get<double>();
    if (cfg.contains("sigma_t")) sim.sigma_t = cfg["sigma_t"].get<double>();
    if (cfg.contains("theta_mix")) sim.theta_mix = cfg["theta_mix"].get<double>();
    sim.seed = seed;
    draws = crm::warfarin_logging(sim, n);
    echo["mu_t"] = sim.mu_t;
    echo["sigma_t"] = sim.sigma_t;
    echo["theta_mix"] = sim.theta_mix;
  } else if (env_name == "clipping-toy") {
    const bool outlier = cfg.value("outlier", true);
    draws = crm::clipping_toy(n, outlier, seed);
    echo["outlier"] = outlier;
  } else {
    crm::PotentialEnv env = crm::make_potential_env(crm::potential_kind_from_string(env_name), seed);
    if (cfg.contains("potential_std")) env.potential_std = cfg["potential_std"].get<double>();
    if (cfg.contains("rho_left")) env.rho_left = cfg["rho_left"].get<double>();
    if (cfg.contains("rho_right")) env.rho_right = cfg["rho_right"].get<double>();
    if (cfg.contains("logging_sd")) env.logging_sd = cfg["logging_sd"].get<double>();
    if (cfg.contains("group_means")) {
      const auto& gm = cfg["group_means"];
      env.group_means.resize(static_cast<Eigen::Index>(gm.size()));
      for (Eigen::Index i = 0; i < env.group_means.size(); ++i)
        env.group_means[i] = gm[static_cast<std::size_t>(i)].get<double>();
    }
    draws = crm::generate_potential_env(env, n);
    echo["potential_std"] = env.potential_std;
    echo["rho_left"] = env.rho_left;
    echo["rho_right"] = env.rho_right;
    echo["logging_sd"] = env.logging_sd;
  }
  crm::save_csv(draws.data, out);
  const fs::path out_path(out);
  write_manifest(out_path.has_parent_path() ? out_path.parent_path() : fs::path("."), "generate",
                 echo);
  std::cout << "wrote " << draws.data.n() << " rows to " << out << "\n";
  return 0;
}

struct TrainFlags {
  std::string data, family = "normal", mean = "constant", estimator = "scips";
  std::string config, out = "run";
  std::string anchor_strategy = "grid", context_map = "linear";
  double M = 10.0, lambda_var = 0.0, lambda_ent = 1e-3, c_reg = 1e-4;
  double prox_kappa = 0.1, gamma = 10.0, bandwidth = 0.0;
  long m_anchors = 10;
  int outer_iters = 10;
  std::int64_t seed = -1;
};

int cmd_train(const TrainFlags& f) {
  const std::uint64_t seed = resolve_seed(f.seed);
  const crm::LoggedDataset ds = crm::load_csv(f.data);

  crm::TrainSpec spec;
  if (!f.config.empty()) {
    const Json cfg = crm::load_json(f.config);
    if (cfg.contains("model")) spec.model = crm::model_config_from_json(cfg["model"]);
    if (cfg.contains("objective")) spec.objective = crm::objective_from_json(cfg["objective"]);
    if (cfg.contains("optimizer")) spec.prox = crm::prox_config_from_json(cfg["optimizer"]);
  }
  spec.model.family = crm::family_from_string(f.family);
  spec.model.mean_kind = crm::mean_kind_from_string(f.mean);
  spec.model.m_anchors = f.m_anchors;
  spec.model.gamma = f.gamma;
  spec.model.bandwidth = f.bandwidth;
  if (f.anchor_strategy == "grid") spec.model.anchor_strategy = crm::AnchorStrategy::grid;
  else if (f.anchor_strategy == "quantile") spec.model.anchor_strategy = crm::AnchorStrategy::quantile;
  else if (f.anchor_strategy == "kmeans") spec.model.anchor_strategy = crm::AnchorStrategy::kmeans;
  else throw crm::ValidationError("unknown anchor strategy: " + f.anchor_strategy);
  spec.model.context_map =
      f.context_map == "quadratic" ? crm::ContextMapKind::quadratic : crm::ContextMapKind::linear;
  spec.objective.estimator = crm::estimator_from_string(f.estimator);
  spec.objective.M = f.M;
  spec.objective.lambda_var = f.lambda_var;
  spec.objective.lambda_ent = f.lambda_ent;
  spec.objective.c_reg = f.c_reg;
  spec.prox.kappa = f.prox_kappa;
  spec.prox.outer_iters = f.outer_iters;
  spec.prox.seed = seed;

  const crm::TrainedPolicy trained = crm::train_policy(spec, ds, seed);

  const fs::path dir = ensure_dir(f.out);
  crm::save_json(crm::to_json(trained.policy), (dir / "policy.json").string());
  crm::save_json(crm::to_json(trained.result), (dir / "train_result.json").string());
  Json echo;
  echo["data"] = f.data;
  echo["seed"] = seed;
  echo["model"] = crm::to_json(spec.model);
  echo["objective"] = crm::to_json(spec.objective);
  echo["optimizer"] = crm::to_json(spec.prox);
  write_manifest(dir, "train", echo);
  std::cout << "final objective " << trained.result.objective_trace.back() << " after "
            << trained.result.objective_trace.size() << " outer iterations ("
            << trained.result.wall_time_s << "s)\n";
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path,
                 const std::string& split_spec, double nu, double delta, int n_boot,
                 std::int64_t seed_flag, const std::string& report_path) {
  const std::uint64_t seed = resolve_seed(seed_flag);
  const crm::PolicyModel pm = crm::policy_from_json(crm::load_json(model_path));
  const crm::LoggedDataset ds = crm::load_csv(data_path);

  std::array<double, 3> fractions{0.5, 0.25, 0.25};
  if (!split_spec.empty()) {
    if (std::sscanf(split_spec.c_str(), "%lf,%lf,%lf", &fractions[0], &fractions[1], &fractions[2]) != 3)
      throw crm::ValidationError("--split expects three comma-separated fractions");
  }
  const crm::DataSplit split = crm::split(ds, fractions, seed);
  // the test rows were produced by the logging policy itself, so the plain
  // mean cost estimates the logging risk
  const double logging_risk = split.test.costs.mean();
  const crm::ProtocolReport rep =
      crm::evaluate_protocol(pm, split.valid, split.test, logging_risk, nu, delta, n_boot, seed);
  crm::save_json(crm::to_json(rep), report_path);
  const fs::path rp(report_path);
  Json echo;
  echo["model"] = model_path;
  echo["data"] = data_path;
  echo["nu"] = nu;
  echo["delta"] = delta;
  echo["n_boot"] = n_boot;
  echo["seed"] = seed;
  echo["split"] = {fractions[0], fractions[1], fractions[2]};
  write_manifest(rp.has_parent_path() ? rp.parent_path() : fs::path("."), "evaluate", echo);
  std::cout << "snips " << rep.snips_estimate << " ess " << rep.ess_ratio << " valid "
            << rep.valid << " reject_h0 " << rep.reject_h0 << "\n";
  return rep.valid ? 0 : 2;
}

int cmd_select(const std::string& grid_path, const std::string& data_path, int folds, double nu,
               std::int64_t seed_flag, const std::string& out) {
  const std::uint64_t seed = resolve_seed(seed_flag);
  const crm::LoggedDataset ds = crm::load_csv(data_path);
  const Json grid = crm::load_json(grid_path);
  std::vector<crm::CvCandidate> candidates;
  for (const auto& item : grid) {
    crm::CvCandidate c;
    c.name = item.value("name", "candidate" + std::to_string(candidates.size()));
    if (item.contains("model")) c.spec.model = crm::model_config_from_json(item["model"]);
    if (item.contains("objective")) c.spec.objective = crm::objective_from_json(item["objective"]);
    if (item.contains("optimizer")) c.spec.prox = crm::prox_config_from_json(item["optimizer"]);
    candidates.push_back(std::move(c));
  }
  const crm::CvResult res = crm::cross_validate(candidates, ds, folds, nu, seed);

  const fs::path dir = ensure_dir(out);
  Json j;
  j["best"] = res.best_index;
  j["best_name"] = res.candidates[static_cast<std::size_t>(res.best_index)].name;
  Json table = Json::array();
  std::string csv = "candidate,fold,snips,ess_ratio,kept\n";
  for (const auto& cand : res.candidates) {
    table.push_back({{"name", cand.name},
                     {"score", cand.score},
                     {"folds_kept", cand.folds_kept},
                     {"eligible", cand.eligible}});
    for (const auto& f : cand.folds)
      csv += cand.name + "," + std::to_string(f.fold) + "," + std::to_string(f.snips) + "," +
             std::to_string(f.ess_ratio) + "," + (f.kept ? "1" : "0") + "\n";
  }
  j["candidates"] = table;
  crm::save_json(j, (dir / "selection.json").string());
  std::ofstream(dir / "cv_folds.csv") << csv;
  Json echo;
  echo["grid"] = grid_path;
  echo["data"] = data_path;
  echo["folds"] = folds;
  echo["nu"] = nu;
  echo["seed"] = seed;
  write_manifest(dir, "select", echo);
  std::cout << "best: " << j["best_name"] << " (score "
            << res.candidates[static_cast<std::size_t>(res.best_index)].score << ")\n";
  return 0;
}

int cmd_validate_protocol(const std::string& setup, int n_policies, int n_logged,
                          std::int64_t seed_flag, const std::string& out,
                          const std::string& config_path) {
  crm::ProtocolValidationConfig cfg;
  if (!config_path.empty()) {
    const Json j = crm::load_json(config_path);
    if (j.contains("logging_mean")) cfg.logging_mean = j["logging_mean"].get<double>();
    if (j.contains("logging_sd")) cfg.logging_sd = j["logging_sd"].get<double>();
    if (j.contains("optimal_mean")) cfg.optimal_mean = j["optimal_mean"].get<double>();
    if (j.contains("optimal_sd")) cfg.optimal_sd = j["optimal_sd"].get<double>();
    if (j.contains("reward_peak")) cfg.reward_peak = j["reward_peak"].get<double>();
    if (j.contains("potential_sd")) cfg.potential_sd = j["potential_sd"].get<double>();
    if (j.contains("param_noise")) cfg.param_noise = j["param_noise"].get<double>();
    if (j.contains("n_replicates")) cfg.n_replicates = j["n_replicates"].get<int>();
    if (j.contains("nu")) cfg.nu = j["nu"].get<double>();
    if (j.contains("delta")) cfg.delta = j["delta"].get<double>();
    if (j.contains("n_boot")) cfg.n_boot = j["n_boot"].get<int>();
  }
  if (n_policies > 0) cfg.n_policies = n_policies;
  if (n_logged > 0) cfg.n_logged = n_logged;
  cfg.seed = resolve_seed(seed_flag);

  const crm::ValidationSummary summary = crm::validate_protocol_experiment(setup, cfg);

  const fs::path dir = ensure_dir(out);
  crm::save_json(crm::to_json(summary), (dir / ("summary_" + setup + ".json")).string());
  std::string csv = "mean,sd,true_risk,truth_better,ess_ratio,snips_reject,ips_reject\n";
  for (const auto& r : summary.records)
    csv += std::to_string(r.mean) + "," + std::to_string(r.sd) + "," + std::to_string(r.true_risk) +
           "," + (r.truth_better ? "1" : "0") + "," + std::to_string(r.ess_ratio) + "," +
           (r.snips_reject ? "1" : "0") + "," + (r.ips_reject ? "1" : "0") + "\n";
  std::ofstream(dir / ("policies_" + setup + ".csv")) << csv;
  std::string sweep_csv = "nu,precision,recall,f1,tp,fp,fn\n";
  for (const auto& pt : summary.sweep)
    sweep_csv += std::to_string(pt.nu) + "," + std::to_string(pt.precision) + "," +
                 std::to_string(pt.recall) + "," + std::to_string(pt.f1) + "," +
                 std::to_string(pt.tp) + "," + std::to_string(pt.fp) + "," + std::to_string(pt.fn) +
                 "\n";
  std::ofstream(dir / ("ess_sweep_" + setup + ".csv")) << sweep_csv;

  Json echo;
  echo["setup"] = setup;
  echo["n_policies"] = cfg.n_policies;
  echo["n_logged"] = cfg.n_logged;
  echo["n_replicates"] = cfg.n_replicates;
  echo["param_noise"] = cfg.param_noise;
  echo["potential_sd"] = cfg.potential_sd;
  echo["seed"] = cfg.seed;
  write_manifest(dir, "validate-protocol", echo);
  std::cout << "setup (" << setup << "): SNIPS tp=" << summary.snips.tp << " fp=" << summary.snips.fp
            << " fn=" << summary.snips.fn << " tn=" << summary.snips.tn
            << " | IPS tp=" << summary.ips.tp << " fp=" << summary.ips.fp
            << " fn=" << summary.ips.fn << " tn=" << summary.ips.tn << "\n";
  return 0;
}

int cmd_whatif(const std::string& grid_spec, long n, std::int64_t seed_flag,
               const std::string& out) {
  crm::WhatifConfig cfg;
  if (n > 0) cfg.n = n;
  cfg.seed = resolve_seed(seed_flag);
  std::vector<crm::WhatifPoint> points;
  if (grid_spec.empty()) {
    points = crm::whatif_diagnostics(cfg);
  } else {
    std::vector<double> mus;
    std::stringstream ss(grid_spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) mus.push_back(std::stod(tok));
    Eigen::VectorXd grid = Eigen::Map<Eigen::VectorXd>(mus.data(), static_cast<Eigen::Index>(mus.size()));
    points = crm::whatif_diagnostics(grid, cfg);
  }
  const fs::path dir = ensure_dir(out);
  std::string csv = "mu,ess_ratio,mean_weight,weight_se,estimate,ci_lower,ci_upper,ci_width\n";
  Json arr = Json::array();
  for (const auto& p : points) {
    csv += std::to_string(p.mu) + "," + std::to_string(p.ess_ratio) + "," +
           std::to_string(p.mean_weight) + "," + std::to_string(p.weight_se) + "," +
           std::to_string(p.estimate) + "," + std::to_string(p.ci_lower) + "," +
           std::to_string(p.ci_upper) + "," + std::to_string(p.ci_width) + "\n";
    arr.push_back({{"mu", p.mu},
                   {"ess_ratio", p.ess_ratio},
                   {"mean_weight", p.mean_weight},
                   {"weight_se", p.weight_se},
                   {"estimate", p.estimate},
                   {"ci", {p.ci_lower, p.ci_upper}}});
  }
  std::ofstream(dir / "whatif.csv") << csv;
  crm::save_json(arr, (dir / "whatif.json").string());
  Json echo;
  echo["n"] = cfg.n;
  echo["seed"] = cfg.seed;
  echo["grid"] = grid_spec.empty() ? "default" : grid_spec;
  write_manifest(dir, "whatif", echo);
  std::cout << "wrote " << points.size() << " grid points to " << (dir / "whatif.csv") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"counterfactual risk minimization for continuous-action logged bandits"};
  app.require_subcommand(1);
  int jobs = 0;
  app.add_option("--jobs", jobs, "OpenMP thread cap (0 = library default)");

  // generate
  auto* gen = app.add_subcommand("generate", "sample a synthetic logged dataset");
  std::string gen_env = "noisymoons", gen_out = "data.csv", gen_config;
  long gen_n = 10000;
  std::int64_t gen_seed = -1;
  gen->add_option("--env", gen_env, "noisymoons|noisycircles|anisotropic|warfarin-sim|clipping-toy");
  gen->add_option("--n", gen_n, "rows");
  gen->add_option("--seed", gen_seed, "seed (falls back to CRM_SEED, then 42)");
  gen->add_option("--out", gen_out, "output csv (.gz compresses)");
  gen->add_option("--config", gen_config, "env config json");

  // train
  auto* tr = app.add_subcommand("train", "fit a policy by counterfactual risk minimization");
  TrainFlags tf;
  tr->add_option("--data", tf.data, "logged dataset csv")->required();
  tr->add_option("--family", tf.family, "normal|lognormal");
  tr->add_option("--mean", tf.mean, "constant|linear|poly|ccp");
  tr->add_option("--estimator", tf.estimator, "ips|cips|scips|snips");
  tr->add_option("--config", tf.config, "train config json (model/objective/optimizer)");
  tr->add_option("--out", tf.out, "output directory");
  tr->add_option("--M", tf.M, "clipping threshold");
  tr->add_option("--lambda-var", tf.lambda_var, "variance penalty weight");
  tr->add_option("--lambda-ent", tf.lambda_ent, "entropy bonus weight");
  tr->add_option("--c-reg", tf.c_reg, "l2 weight on mean params");
  tr->add_option("--prox-kappa", tf.prox_kappa, "proximal strength");
  tr->add_option("--outer-iters", tf.outer_iters, "proximal outer iterations");
  tr->add_option("--gamma", tf.gamma, "ccp soft-argmin temperature");
  tr->add_option("--anchors", tf.m_anchors, "number of anchor points");
  tr->add_option("--anchor-strategy", tf.anchor_strategy, "grid|quantile|kmeans");
  tr->add_option("--ctx-map", tf.context_map, "linear|quadratic");
  tr->add_option("--bandwidth", tf.bandwidth, "action kernel bandwidth (0 = median heuristic)");
  tr->add_option("--seed", tf.seed, "seed");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "offline evaluation protocol on held-out data");
  std::string ev_model, ev_data, ev_report = "report.json", ev_split;
  double ev_nu = 0.01, ev_delta = 0.05;
  int ev_boot = 100;
  std::int64_t ev_seed = -1;
  ev->add_option("--model", ev_model, "policy json")->required();
  ev->add_option("--data", ev_data, "logged dataset csv")->required();
  ev->add_option("--split", ev_split, "train,valid,test fractions (default 0.5,0.25,0.25)");
  ev->add_option("--nu", ev_nu, "ESS-ratio threshold");
  ev->add_option("--delta", ev_delta, "test level (confidence 1-delta)");
  ev->add_option("--n-boot", ev_boot, "bootstrap resamples");
  ev->add_option("--seed", ev_seed, "seed");
  ev->add_option("--report", ev_report, "output report json");

  // select
  auto* sel = app.add_subcommand("select", "fold-discarding cross-validated model selection");
  std::string sel_grid, sel_data, sel_out = "selection";
  int sel_folds = 5;
  double sel_nu = 0.01;
  std::int64_t sel_seed = -1;
  sel->add_option("--grid", sel_grid, "candidate grid json")->required();
  sel->add_option("--data", sel_data, "logged dataset csv")->required();
  sel->add_option("--folds", sel_folds, "fold count");
  sel->add_option("--nu", sel_nu, "ESS-ratio threshold");
  sel->add_option("--seed", sel_seed, "seed");
  sel->add_option("--out", sel_out, "output directory");

  // validate-protocol
  auto* vp = app.add_subcommand("validate-protocol", "synthetic false-positive/negative study");
  std::string vp_setup = "ii", vp_out = "protocol_validation", vp_config;
  int vp_n_policies = 0, vp_n_logged = 0;
  std::int64_t vp_seed = -1;
  vp->add_option("--setup", vp_setup, "i|ii");
  vp->add_option("--n-policies", vp_n_policies, "candidate count (default 2000)");
  vp->add_option("--n-logged", vp_n_logged, "logged rows per replicate (default 4000)");
  vp->add_option("--seed", vp_seed, "seed");
  vp->add_option("--out", vp_out, "output directory");
  vp->add_option("--config", vp_config, "experiment config json");

  // whatif
  auto* wi = app.add_subcommand("whatif", "importance-sampling diagnostics over a mean grid");
  std::string wi_grid, wi_out = "whatif";
  long wi_n = 0;
  std::int64_t wi_seed = -1;
  wi->add_option("--grid", wi_grid, "comma-separated target means (default: mode +- 3 sd)");
  wi->add_option("--n", wi_n, "logged sample size (default 2000)");
  wi->add_option("--seed", wi_seed, "seed");
  wi->add_option("--out", wi_out, "output directory");

  CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
  if (jobs > 0) omp_set_num_threads(jobs);
#endif

  try {
    if (*gen) return cmd_generate(gen_env, gen_n, gen_seed, gen_out, gen_config);
    if (*tr) return cmd_train(tf);
    if (*ev) return cmd_evaluate(ev_model, ev_data, ev_split, ev_nu, ev_delta, ev_boot, ev_seed, ev_report);
    if (*sel) return cmd_select(sel_grid, sel_data, sel_folds, sel_nu, sel_seed, sel_out);
    if (*vp) return cmd_validate_protocol(vp_setup, vp_n_policies, vp_n_logged, vp_seed, vp_out, vp_config);
    if (*wi) return cmd_whatif(wi_grid, wi_n, wi_seed, wi_out);
  } catch (const crm::DiagnosticError& e) {
    std::cerr << "diagnostic failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
