#include <doctest.h>

#include <cmath>

#include "crm/envs.hpp"
#include "crm/errors.hpp"
#include "crm/rng.hpp"

using namespace crm;

TEST_CASE("piecewise reward peaks at the potential") {
  CHECK(reward_piecewise(1.5, 1.5, 2.0, 1.0) == doctest::Approx(1.0));
  CHECK(reward_piecewise(0.5, 1.5, 2.0, 1.0) == doctest::Approx(0.5));   // one rho_left/2 below
  CHECK(reward_piecewise(2.5, 1.5, 2.0, 1.0) == doctest::Approx(0.0));   // rho_right past the peak
  CHECK(reward_piecewise(-10.0, 1.5, 2.0, 1.0) == doctest::Approx(0.0)); // clamped
  CHECK(reward_piecewise(1.5 + 1e-12, 1.5, 2.0, 1.0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("piecewise reward is continuous and unimodal") {
  const double p = 1.3, rl = 2.0, rr = 1.0;
  double prev = reward_piecewise(p - 5.0, p, rl, rr);
  for (double a = p - 5.0 + 0.01; a <= p; a += 0.01) {
    const double r = reward_piecewise(a, p, rl, rr);
    CHECK(r >= prev - 1e-12);  // nondecreasing left of the peak
    prev = r;
  }
  prev = 1.0;
  for (double a = p; a <= p + 3.0; a += 0.01) {
    const double r = reward_piecewise(a, p, rl, rr);
    CHECK(r <= prev + 1e-12);  // nonincreasing right of the peak
    prev = r;
  }
  // value 1 only at the peak
  CHECK(reward_piecewise(p + 1e-6, p, rl, rr) < 1.0);
  CHECK(reward_piecewise(p - 1e-6, p, rl, rr) < 1.0);
}

TEST_CASE("warfarin cost has a 10% tolerance band") {
  CHECK(warfarin_cost(30.0, 30.0) == doctest::Approx(0.0));
  CHECK(warfarin_cost(33.0, 30.0) == doctest::Approx(0.0));  // |3| - 3 = 0
  CHECK(warfarin_cost(35.0, 30.0) == doctest::Approx(2.0));
}

TEST_CASE("potential env draws match the requested structure") {
  const PotentialEnv env = make_potential_env(PotentialKind::noisymoons, 4);
  const SyntheticDraws draws = generate_potential_env(env, 100000);
  CHECK(draws.data.dim() == 2);

  // costs follow the reward construction: cost(p, p) would be -1
  CHECK(env.cost(draws.hidden[17], draws.hidden[17]) == doctest::Approx(-1.0));
  CHECK(env.cost(draws.hidden[17] + env.rho_right, draws.hidden[17]) == doctest::Approx(0.0));

  // propensities equal an independent density evaluation
  const auto map = lognormal_moment_map(env.logging_mean(), env.logging_sd);
  for (Eigen::Index i = 0; i < 200; ++i) {
    const double a = draws.data.actions[i];
    const double z = (std::log(a) - map.m) / map.s;
    const double density = std::exp(-0.5 * z * z) / (a * map.s * std::sqrt(2.0 * M_PI));
    CHECK(draws.data.propensities[i] == doctest::Approx(density).epsilon(1e-12));
  }

  // empirical potential mean per group within 3 sigma_p / sqrt(n)
  // (group recoverable only through the potential here: split by nearest mean)
  double lo_sum = 0.0, hi_sum = 0.0;
  Eigen::Index lo_n = 0, hi_n = 0;
  for (Eigen::Index i = 0; i < draws.hidden.size(); ++i) {
    if (std::abs(draws.hidden[i] - 1.0) < std::abs(draws.hidden[i] - 2.0)) {
      lo_sum += draws.hidden[i];
      ++lo_n;
    } else {
      hi_sum += draws.hidden[i];
      ++hi_n;
    }
  }
  // group assignment by nearest mean misclassifies ~0.1% at sigma_p = 0.3;
  // allow a slightly wider band than 3 se
  CHECK(lo_sum / lo_n == doctest::Approx(1.0).epsilon(0.02));
  CHECK(hi_sum / hi_n == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("all potential kinds generate and anisotropic has three groups") {
  for (PotentialKind kind :
       {PotentialKind::noisymoons, PotentialKind::noisycircles, PotentialKind::anisotropic}) {
    const PotentialEnv env = make_potential_env(kind, 9);
    const SyntheticDraws draws = generate_potential_env(env, 500);
    CHECK(draws.data.n() == 500);
    draws.data.validate();
  }
  CHECK(make_potential_env(PotentialKind::anisotropic, 0).group_means.size() == 3);
  CHECK_THROWS_AS(potential_kind_from_string("nope"), ValidationError);
}

TEST_CASE("generation is deterministic and row-order independent") {
  const PotentialEnv env = make_potential_env(PotentialKind::noisycircles, 21);
  const SyntheticDraws a = generate_potential_env(env, 1000, Exec::serial);
  const SyntheticDraws b = generate_potential_env(env, 1000, Exec::par);
  CHECK(a.data.actions == b.data.actions);
  CHECK(a.data.contexts == b.data.contexts);
  CHECK(a.hidden == b.hidden);
  // prefix property: the first rows of a longer draw match the shorter one
  const SyntheticDraws c = generate_potential_env(env, 1500);
  CHECK(c.data.actions.head(1000) == a.data.actions);
}

TEST_CASE("warfarin logging matches its analytic moments") {
  WarfarinSim sim;
  sim.seed = 31;
  const SyntheticDraws draws = warfarin_logging(sim, 100000);
  CHECK((draws.data.costs.array() >= 0.0).all());

  // Var(a) = sigma_t^2 (theta Var(z) + (1-theta))
  const double mean_a = draws.data.actions.mean();
  const double var_a =
      (draws.data.actions.array() - mean_a).square().sum() / (draws.data.actions.size() - 1.0);
  CHECK(mean_a == doctest::Approx(sim.mu_t).epsilon(0.01));
  CHECK(var_a == doctest::Approx(sim.sigma_t * sim.sigma_t).epsilon(0.03));

  // propensity at the conditional mean action equals the scaled normal mode
  const double resid_sd = sim.sigma_t * std::sqrt(1.0 - sim.theta_mix);
  for (Eigen::Index i = 0; i < 100; ++i) {
    const double z = draws.data.contexts(i, 0);
    const double center = sim.mu_t + sim.sigma_t * std::sqrt(sim.theta_mix) * z;
    const double mode_density = 1.0 / (resid_sd * std::sqrt(2.0 * M_PI));
    const double eps = (draws.data.actions[i] - center) / resid_sd;
    CHECK(draws.data.propensities[i] ==
          doctest::Approx(mode_density * std::exp(-0.5 * eps * eps)).epsilon(1e-10));
  }
}

TEST_CASE("theta mixing zero decouples actions from context") {
  WarfarinSim sim;
  sim.theta_mix = 0.0;
  sim.seed = 5;
  const SyntheticDraws draws = warfarin_logging(sim, 50000);
  // correlation between z and a should vanish
  const double mz = draws.data.contexts.col(0).mean();
  const double ma = draws.data.actions.mean();
  double cov = 0.0, vz = 0.0, va = 0.0;
  for (Eigen::Index i = 0; i < draws.data.n(); ++i) {
    const double dz = draws.data.contexts(i, 0) - mz;
    const double da = draws.data.actions[i] - ma;
    cov += dz * da;
    vz += dz * dz;
    va += da * da;
  }
  CHECK(std::abs(cov / std::sqrt(vz * va)) < 0.02);
}

TEST_CASE("deterministic logging is rejected") {
  WarfarinSim sim;
  sim.theta_mix = 1.0;
  CHECK_THROWS_AS(warfarin_logging(sim, 100), ValidationError);
}

TEST_CASE("clipping toy injects exactly one low-propensity outlier") {
  const SyntheticDraws with = clipping_toy(200, true, 7);
  Eigen::Index below = 0;
  for (Eigen::Index i = 0; i < with.data.n(); ++i)
    if (with.data.propensities[i] <= 1e-3) ++below;
  CHECK(below == 1);

  const SyntheticDraws without = clipping_toy(200, false, 7);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < without.data.n(); ++i)
    worst = std::max(worst, std::abs(without.data.costs[i]));
  CHECK(worst <= 1.0 + 4.0);  // reward range plus 4 noise sd

  const SyntheticDraws again = clipping_toy(200, true, 7);
  CHECK(again.data.actions == with.data.actions);
  CHECK_THROWS_AS(clipping_toy(5, false, 1), ValidationError);
}

TEST_CASE("online risk of a pinpoint policy at the peak is minus one") {
  const PotentialEnv env = make_potential_env(PotentialKind::noisymoons, 3);
  const SyntheticDraws draws = generate_potential_env(env, 1);
  MeanModel mean = make_constant_mean();
  Eigen::VectorXd theta(2);
  theta << draws.hidden[0], std::log(1e-9);
  const PolicyModel pm = make_policy(Family::normal, mean, theta);
  const OnlineRisk risk = online_risk_on(
      pm, draws.data.contexts, draws.hidden,
      [&](double a, double p) { return env.cost(a, p); }, 100, 5);
  CHECK(risk.risk == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("online risk is deterministic given the seed") {
  const PotentialEnv env = make_potential_env(PotentialKind::noisymoons, 41);
  MeanModel mean = make_constant_mean();
  Eigen::VectorXd theta(2);
  theta << 1.4, std::log(0.4);
  const PolicyModel pm = make_policy(Family::normal, mean, theta);
  const OnlineRisk a = online_risk(pm, env, 2000, 100, 9);
  const OnlineRisk b = online_risk(pm, env, 2000, 100, 9);
  CHECK(a.risk == b.risk);
  CHECK(a.std_error == b.std_error);
}

TEST_CASE("online risk agrees with quadrature on a fixed context") {
  const PotentialEnv env = make_potential_env(PotentialKind::noisymoons, 1);
  SyntheticDraws one = generate_potential_env(env, 1);
  const double p = one.hidden[0];
  MeanModel mean = make_constant_mean();
  Eigen::VectorXd theta(2);
  const double mu = 1.4, sigma = 0.5;
  theta << mu, std::log(sigma);
  const PolicyModel pm = make_policy(Family::normal, mean, theta);

  // Simpson oracle for E[cost] under N(mu, sigma^2)
  const int nq = 20000;
  const double lo = mu - 10 * sigma, hi = mu + 10 * sigma, h = (hi - lo) / nq;
  double oracle = 0.0;
  for (int i = 0; i <= nq; ++i) {
    const double a = lo + h * i;
    const double w = (i == 0 || i == nq) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    const double pdf = std::exp(-0.5 * (a - mu) * (a - mu) / (sigma * sigma)) /
                       (sigma * std::sqrt(2.0 * M_PI));
    oracle += w * env.cost(a, p) * pdf;
  }
  oracle *= h / 3.0;

  // many samples on the single fixed context
  Eigen::MatrixXd ctx = one.data.contexts;
  Eigen::VectorXd hidden = one.hidden;
  const OnlineRisk mc = online_risk_on(
      pm, ctx, hidden, [&](double a, double pp) { return env.cost(a, pp); }, 100000, 13);
  // std_error degenerates with one context; use a direct 3-sigma band instead
  CHECK(std::abs(mc.risk - oracle) < 3.0 * 0.35 / std::sqrt(100000.0));
}

TEST_CASE("monte carlo variance shrinks like one over the sample count") {
  const PotentialEnv env = make_potential_env(PotentialKind::noisymoons, 73);
  MeanModel mean = make_constant_mean();
  Eigen::VectorXd theta(2);
  theta << 1.5, std::log(0.5);
  const PolicyModel pm = make_policy(Family::normal, mean, theta);
  // variance of the estimator across seeds, at two sample scales
  auto estimator_variance = [&](Eigen::Index n_ctx, int reps) {
    double sum = 0.0, sum2 = 0.0;
    for (int r = 0; r < reps; ++r) {
      const double v = online_risk(pm, env, n_ctx, 100, 1000 + r).risk;
      sum += v;
      sum2 += v * v;
    }
    const double m = sum / reps;
    return sum2 / reps - m * m;
  };
  const double v_small = estimator_variance(200, 40);
  const double v_big = estimator_variance(3200, 40);
  const double slope = std::log(v_big / v_small) / std::log(3200.0 / 200.0);
  CHECK(slope == doctest::Approx(-1.0).epsilon(0.2));
}
