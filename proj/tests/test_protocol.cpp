#include <doctest.h>

#include <cmath>

#include "crm/envs.hpp"
#include "crm/errors.hpp"
#include "crm/protocol.hpp"
#include "crm/rng.hpp"

using namespace crm;

namespace {

struct LoggedFixture {
  LoggedDataset ds;
  PolicyModel logging;
};

LoggedFixture normal_logged(Eigen::Index n, double mu, double sigma, std::uint64_t seed) {
  LoggedFixture out;
  MeanModel mean = make_constant_mean();
  Eigen::VectorXd theta(2);
  theta << mu, std::log(sigma);
  out.logging = make_policy(Family::normal, mean, theta);
  out.ds.contexts.resize(n, 1);
  out.ds.actions.resize(n);
  out.ds.propensities.resize(n);
  out.ds.costs.resize(n);
  Rng rng(seed);
  Eigen::VectorXd x(1);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.ds.contexts(i, 0) = rng.normal();
    x << out.ds.contexts(i, 0);
    const double a = out.logging.sample(x, rng);
    out.ds.actions[i] = a;
    out.ds.propensities[i] = std::exp(out.logging.log_density(x, a));
    out.ds.costs[i] = -reward_piecewise(a, 1.2, 2.0, 1.0) - 0.2 * rng.normal();
  }
  return out;
}

}  // namespace

TEST_CASE("bootstrap of constant costs is a point mass") {
  Eigen::VectorXd w(40), y(40);
  Rng rng(3);
  for (Eigen::Index i = 0; i < 40; ++i) {
    w[i] = 0.2 + rng.uniform01();
    y[i] = -0.7;
  }
  const BootstrapResult res = bootstrap_weighted(w, y, Estimator::snips, 100, 0.05, 5);
  CHECK(res.ci_lower == doctest::Approx(-0.7).epsilon(1e-12));
  CHECK(res.ci_upper == doctest::Approx(-0.7).epsilon(1e-12));
}

TEST_CASE("bootstrap is deterministic given the seed") {
  const LoggedFixture fix = normal_logged(200, 1.0, 0.5, 9);
  MeanModel mean = make_constant_mean();
  Eigen::VectorXd theta(2);
  theta << 1.2, std::log(0.6);
  const PolicyModel pm = make_policy(Family::normal, mean, theta);
  const BootstrapResult a = bootstrap_snips(pm, fix.ds, 100, 0.05, 7);
  const BootstrapResult b = bootstrap_snips(pm, fix.ds, 100, 0.05, 7);
  CHECK(a.estimates == b.estimates);
  CHECK(a.ci_lower == b.ci_lower);
  CHECK(a.upper_one_sided == b.upper_one_sided);
}

TEST_CASE("bootstrap interval covers the point estimate") {
  Rng seeds(11);
  int covered = 0;
  const int trials = 40;
  for (int t = 0; t < trials; ++t) {
    const LoggedFixture fix = normal_logged(300, 1.0, 0.5, 100 + t);
    MeanModel mean = make_constant_mean();
    Eigen::VectorXd theta(2);
    theta << 1.0 + 0.2 * seeds.normal(), std::log(0.5 + 0.2 * seeds.uniform01());
    const PolicyModel pm = make_policy(Family::normal, mean, theta);
    const WeightStats ws = importance_weights(pm, fix.ds);
    const double point = ws.weights.dot(fix.ds.costs) / ws.weights.sum();
    const BootstrapResult res = bootstrap_weighted(ws.weights, fix.ds.costs, Estimator::snips, 100,
                                                   0.05, 1000 + t);
    if (point >= res.ci_lower && point <= res.ci_upper) ++covered;
  }
  CHECK(covered >= trials * 95 / 100);
}

TEST_CASE("interval width shrinks like root n") {
  MeanModel mean = make_constant_mean();
  Eigen::VectorXd theta(2);
  theta << 1.1, std::log(0.55);
  const PolicyModel pm = make_policy(Family::normal, mean, theta);
  auto width_at = [&](Eigen::Index n) {
    double acc = 0.0;
    const int reps = 10;
    for (int r = 0; r < reps; ++r) {
      const LoggedFixture fix = normal_logged(n, 1.0, 0.5, 500 + r);
      const BootstrapResult res = bootstrap_snips(pm, fix.ds, 100, 0.05, 50 + r);
      acc += res.ci_upper - res.ci_lower;
    }
    return acc / reps;
  };
  const double w_small = width_at(250);
  const double w_big = width_at(4000);
  const double slope = std::log(w_big / w_small) / std::log(4000.0 / 250.0);
  CHECK(slope == doctest::Approx(-0.5).epsilon(0.3));
}

TEST_CASE("protocol keeps the null for the logging policy itself") {
  const LoggedFixture fix = normal_logged(2000, 1.0, 0.5, 17);
  LoggedDataset valid, test;
  std::vector<Eigen::Index> lo(1000), hi(1000);
  for (Eigen::Index i = 0; i < 1000; ++i) {
    lo[static_cast<std::size_t>(i)] = i;
    hi[static_cast<std::size_t>(i)] = 1000 + i;
  }
  valid = take_rows(fix.ds, lo);
  test = take_rows(fix.ds, hi);
  const double logging_risk = test.costs.mean();
  const ProtocolReport rep = evaluate_protocol(fix.logging, valid, test, logging_risk);
  CHECK(rep.ess_ratio == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(rep.snips_estimate == doctest::Approx(test.costs.mean()).epsilon(1e-10));
  CHECK(rep.valid);
  CHECK_FALSE(rep.reject_h0);  // no strict improvement over itself
}

TEST_CASE("one dominant weight invalidates the estimate") {
  const LoggedFixture fix = normal_logged(2000, 1.0, 0.5, 23);
  LoggedDataset valid, test;
  std::vector<Eigen::Index> lo(1000), hi(1000);
  for (Eigen::Index i = 0; i < 1000; ++i) {
    lo[static_cast<std::size_t>(i)] = i;
    hi[static_cast<std::size_t>(i)] = 1000 + i;
  }
  valid = take_rows(fix.ds, lo);
  test = take_rows(fix.ds, hi);
  // a pinpoint policy far in the tail puts essentially all weight on one row
  MeanModel mean = make_constant_mean();
  Eigen::VectorXd theta(2);
  theta << 3.2, std::log(0.01);
  const PolicyModel pm = make_policy(Family::normal, mean, theta);
  const ProtocolReport rep = evaluate_protocol(pm, valid, test, test.costs.mean());
  CHECK(rep.ess_ratio <= 0.01);
  CHECK_FALSE(rep.valid);
  CHECK_FALSE(rep.reject_h0);  // invalid reports never reject
}

TEST_CASE("protocol decisions are shift-invariant with a shifted reference") {
  const LoggedFixture fix = normal_logged(2000, 1.0, 0.5, 29);
  LoggedDataset valid, test;
  std::vector<Eigen::Index> lo(1000), hi(1000);
  for (Eigen::Index i = 0; i < 1000; ++i) {
    lo[static_cast<std::size_t>(i)] = i;
    hi[static_cast<std::size_t>(i)] = 1000 + i;
  }
  valid = take_rows(fix.ds, lo);
  test = take_rows(fix.ds, hi);
  MeanModel mean = make_constant_mean();
  Eigen::VectorXd theta(2);
  theta << 1.15, std::log(0.5);
  const PolicyModel pm = make_policy(Family::normal, mean, theta);

  const ProtocolReport base = evaluate_protocol(pm, valid, test, test.costs.mean(), 0.01, 0.05, 100, 3);
  LoggedDataset shifted_valid = valid, shifted_test = test;
  shifted_valid.costs.array() += 2.0;
  shifted_test.costs.array() += 2.0;
  const ProtocolReport shifted =
      evaluate_protocol(pm, shifted_valid, shifted_test, shifted_test.costs.mean(), 0.01, 0.05, 100, 3);
  CHECK(base.reject_h0 == shifted.reject_h0);
  CHECK(shifted.snips_estimate == doctest::Approx(base.snips_estimate + 2.0).epsilon(1e-10));
}

TEST_CASE("cross validation averages surviving folds") {
  const PotentialEnv env = make_potential_env(PotentialKind::noisymoons, 37);
  const SyntheticDraws draws = generate_potential_env(env, 1500);
  CvCandidate cand;
  cand.name = "linear-scips";
  cand.spec.model.mean_kind = MeanKind::linear;
  cand.spec.objective.estimator = Estimator::scips;
  cand.spec.objective.M = 12.9;
  cand.spec.objective.lambda_ent = 1e-3;  // keep sigma from collapsing
  cand.spec.prox.outer_iters = 2;
  cand.spec.prox.inner.max_iters = 60;
  const CvResult res = cross_validate({cand}, draws.data, 4, 0.01, 5);
  CHECK(res.best_index == 0);
  const CvCandidateResult& rec = res.candidates[0];
  CHECK(rec.eligible);
  CHECK(rec.folds_kept == 4);
  double acc = 0.0;
  for (const auto& f : rec.folds) acc += f.snips;
  CHECK(rec.score == doctest::Approx(acc / 4.0).epsilon(1e-12));
}

TEST_CASE("fold assignment is deterministic") {
  const PotentialEnv env = make_potential_env(PotentialKind::noisymoons, 38);
  const SyntheticDraws draws = generate_potential_env(env, 900);
  CvCandidate cand;
  cand.name = "constant";
  cand.spec.model.mean_kind = MeanKind::constant;
  cand.spec.objective.estimator = Estimator::scips;
  cand.spec.prox.outer_iters = 1;
  cand.spec.prox.inner.max_iters = 40;
  const CvResult a = cross_validate({cand}, draws.data, 3, 0.01, 11);
  const CvResult b = cross_validate({cand}, draws.data, 3, 0.01, 11);
  for (int f = 0; f < 3; ++f) {
    CHECK(a.candidates[0].folds[static_cast<std::size_t>(f)].snips ==
          b.candidates[0].folds[static_cast<std::size_t>(f)].snips);
  }
}

TEST_CASE("a candidate with no usable folds is ineligible") {
  // lognormal policies put zero density on negative logged actions, so every
  // fold's weight mass vanishes and gets discarded
  LoggedDataset ds;
  const Eigen::Index n = 300;
  ds.contexts = Eigen::MatrixXd::Zero(n, 1);
  ds.actions.resize(n);
  ds.propensities.resize(n);
  ds.costs.resize(n);
  Rng rng(3);
  for (Eigen::Index i = 0; i < n; ++i) {
    ds.actions[i] = -1.0 - rng.uniform01();  // all negative
    ds.propensities[i] = 0.5;
    ds.costs[i] = -rng.uniform01();
  }
  CvCandidate cand;
  cand.name = "lognormal-doomed";
  cand.spec.model.family = Family::lognormal;
  cand.spec.model.mean_kind = MeanKind::constant;
  cand.spec.objective.estimator = Estimator::ips;
  cand.spec.prox.outer_iters = 1;
  cand.spec.prox.inner.max_iters = 5;
  CHECK_THROWS_AS(cross_validate({cand}, ds, 3, 0.01, 7), DiagnosticError);
}

TEST_CASE("ties break toward the smaller clipping threshold") {
  const PotentialEnv env = make_potential_env(PotentialKind::noisymoons, 39);
  const SyntheticDraws draws = generate_potential_env(env, 800);
  // both thresholds sit far above every weight, so training and scores tie
  CvCandidate a, b;
  a.name = "M-large";
  a.spec.model.mean_kind = MeanKind::constant;
  a.spec.objective.estimator = Estimator::cips;
  a.spec.objective.M = 500.0;
  a.spec.objective.lambda_ent = 1e-2;
  a.spec.prox.outer_iters = 1;
  a.spec.prox.inner.max_iters = 30;
  b = a;
  b.name = "M-small";
  b.spec.objective.M = 400.0;
  const CvResult res = cross_validate({a, b}, draws.data, 3, 0.01, 13);
  CHECK(res.candidates[0].score == doctest::Approx(res.candidates[1].score).epsilon(1e-12));
  CHECK(res.best_index == 1);
}

TEST_CASE("whatif diagnostics peak at the logging mode") {
  WhatifConfig cfg;
  cfg.seed = 2;
  const Eigen::VectorXd grid = whatif_default_grid(cfg);
  const std::vector<WhatifPoint> pts = whatif_diagnostics(grid, cfg);
  REQUIRE(pts.size() == static_cast<std::size_t>(grid.size()));

  const double mode = std::exp(cfg.logging_log_mean - cfg.logging_log_sd * cfg.logging_log_sd);
  std::size_t argmax = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (pts[i].ess_ratio > pts[argmax].ess_ratio) argmax = i;
  CHECK(pts[argmax].mu == doctest::Approx(mode).epsilon(1e-9));

  // mean weight within 3 standard errors of 1 wherever the ESS holds up
  for (const auto& p : pts)
    if (p.ess_ratio > 0.1) CHECK(std::abs(p.mean_weight - 1.0) <= 3.0 * p.weight_se);

  // interval at the mode no wider than at the extremes
  CHECK(pts[argmax].ci_width <= pts.front().ci_width);
  CHECK(pts[argmax].ci_width <= pts.back().ci_width);
}

TEST_CASE("protocol validation runs end to end at a small scale") {
  ProtocolValidationConfig cfg;
  cfg.n_policies = 60;
  cfg.n_replicates = 3;
  cfg.n_logged = 800;
  cfg.seed = 4;
  const ValidationSummary sum = validate_protocol_experiment("ii", cfg);
  const int snips_total = sum.snips.tp + sum.snips.fp + sum.snips.fn + sum.snips.tn;
  const int ips_total = sum.ips.tp + sum.ips.fp + sum.ips.fn + sum.ips.tn;
  CHECK(snips_total == 60);
  CHECK(ips_total == 60);
  CHECK(sum.records.size() == 60);
  CHECK(sum.sweep.size() >= 5);
  // a sizable share of the perturbations beats the logging policy
  int better = 0;
  for (const auto& r : sum.records) better += r.truth_better ? 1 : 0;
  CHECK(better >= 15);
  CHECK_THROWS_AS(validate_protocol_experiment("iii", cfg), ValidationError);
}

TEST_CASE("zero perturbation noise in setup (i) never rejects") {
  ProtocolValidationConfig cfg;
  cfg.n_policies = 40;
  cfg.n_replicates = 2;
  cfg.n_logged = 1000;
  cfg.param_noise = 0.0;
  cfg.seed = 1;
  const ValidationSummary sum = validate_protocol_experiment("i", cfg);
  // every candidate equals the logging policy: no improvement exists
  CHECK(sum.snips.fp == 0);
  CHECK(sum.ips.fp == 0);
  for (const auto& r : sum.records) {
    const bool rejected_self = r.truth_better && r.snips_reject;
    CHECK_FALSE(rejected_self);
  }
}
