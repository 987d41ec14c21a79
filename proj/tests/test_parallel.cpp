#include <doctest.h>

#include <cmath>

#include "crm/envs.hpp"
#include "crm/estimators.hpp"
#include "crm/parallel.hpp"
#include "crm/rng.hpp"
#include "crm_ref.hpp"

using namespace crm;

TEST_CASE("blocked_sum matches bitwise across execution policies") {
  Rng rng(3);
  std::vector<double> v(10001);
  for (auto& x : v) x = rng.normal() * std::exp(3.0 * rng.uniform01());
  const double serial = blocked_sum(static_cast<std::ptrdiff_t>(v.size()),
                                    [&](std::ptrdiff_t i) { return v[static_cast<std::size_t>(i)]; },
                                    Exec::serial);
  const double par = blocked_sum(static_cast<std::ptrdiff_t>(v.size()),
                                 [&](std::ptrdiff_t i) { return v[static_cast<std::size_t>(i)]; },
                                 Exec::par);
  CHECK(serial == par);  // bit-identical by construction

  double naive = 0.0;
  for (double x : v) naive += x;
  CHECK(serial == doctest::Approx(naive).epsilon(1e-12));
}

TEST_CASE("blocked_vec_sum matches the naive accumulation") {
  Rng rng(4);
  const std::ptrdiff_t n = 7777, dim = 5;
  std::vector<double> data(static_cast<std::size_t>(n * dim));
  for (auto& x : data) x = rng.normal();
  std::vector<double> serial(dim), par(dim), naive(dim, 0.0);
  auto f = [&](std::ptrdiff_t i, double* acc) {
    for (std::ptrdiff_t d = 0; d < dim; ++d) acc[d] += data[static_cast<std::size_t>(i * dim + d)];
  };
  blocked_vec_sum(n, dim, serial.data(), f, Exec::serial);
  blocked_vec_sum(n, dim, par.data(), f, Exec::par);
  for (std::ptrdiff_t i = 0; i < n; ++i)
    for (std::ptrdiff_t d = 0; d < dim; ++d) naive[d] += data[static_cast<std::size_t>(i * dim + d)];
  for (std::ptrdiff_t d = 0; d < dim; ++d) {
    CHECK(serial[d] == par[d]);
    CHECK(serial[d] == doctest::Approx(naive[d]).epsilon(1e-12));
  }
}

TEST_CASE("production kernels agree with the serial reference") {
  const PotentialEnv env = make_potential_env(PotentialKind::noisymoons, 77);
  const SyntheticDraws draws = generate_potential_env(env, 4000);
  const LoggedDataset& ds = draws.data;

  MeanModel mean = make_linear_mean(ds.dim());
  Eigen::VectorXd theta(mean.param_count() + 1);
  theta << 0.1, -0.2, 1.4, std::log(0.6);
  const PolicyModel pm = make_policy(Family::normal, mean, theta);

  const Eigen::VectorXd wref = ref::importance_weights(pm, ds.contexts, ds.actions, ds.propensities);
  for (Exec exec : {Exec::serial, Exec::par}) {
    const WeightStats ws = importance_weights(pm, ds, exec);
    for (Eigen::Index i = 0; i < ds.n(); ++i)
      CHECK(ws.weights[i] == doctest::Approx(wref[i]).epsilon(1e-12));
    CHECK(ws.ess == doctest::Approx(ref::ess(wref)).epsilon(1e-10));
  }

  CrmObjective ips_obj;
  ips_obj.estimator = Estimator::ips;
  CrmObjective snips_obj;
  snips_obj.estimator = Estimator::snips;
  for (Exec exec : {Exec::serial, Exec::par}) {
    CHECK(estimate(pm, ds, ips_obj, exec) == doctest::Approx(ref::ips(wref, ds.costs)).epsilon(1e-12));
    CHECK(estimate(pm, ds, snips_obj, exec) ==
          doctest::Approx(ref::snips(wref, ds.costs)).epsilon(1e-12));
  }
}

TEST_CASE("objective evaluation is bit-identical across execution policies") {
  const PotentialEnv env = make_potential_env(PotentialKind::noisycircles, 5);
  const SyntheticDraws draws = generate_potential_env(env, 3000);

  auto je = std::make_shared<JointEmbedding>();
  je->context_map = ContextMap{ContextMapKind::quadratic, 2};
  je->action = fit_nystrom(select_anchors(draws.data.actions, 5, AnchorStrategy::grid), 2.0);
  MeanModel mean = make_ccp_mean(je, 10.0, je->action.anchors);
  Rng rng(8);
  Eigen::VectorXd theta(mean.param_count() + 1);
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = 0.05 * rng.normal();

  CrmObjective obj;
  obj.estimator = Estimator::scips;
  obj.M = 7.7;
  obj.lambda_var = 0.01;
  obj.lambda_ent = 1e-3;
  obj.c_reg = 1e-4;

  CrmProblem serial_prob(Family::normal, mean, draws.data, obj, Exec::serial);
  CrmProblem par_prob(Family::normal, mean, draws.data, obj, Exec::par);
  Eigen::VectorXd gs(serial_prob.dim()), gp(par_prob.dim());
  const double vs = serial_prob.eval(theta, &gs);
  const double vp = par_prob.eval(theta, &gp);
  CHECK(vs == vp);
  for (Eigen::Index i = 0; i < gs.size(); ++i) CHECK(gs[i] == gp[i]);
}
