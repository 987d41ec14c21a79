#include "crm/envs.hpp"

#include <cmath>

#include "crm/errors.hpp"

namespace crm {

double reward_piecewise(double a, double p, double rho_left, double rho_right) {
  if (!(rho_left > 0.0) || !(rho_right > 0.0)) throw ValidationError("reward widths must be positive");
  const double v = a <= p ? 1.0 - (p - a) / rho_left : 1.0 - (a - p) / rho_right;
  return v > 0.0 ? v : 0.0;
}

double warfarin_cost(double a, double t_star) {
  if (!(t_star > 0.0)) throw ValidationError("therapeutic dose must be positive");
  const double slack = std::abs(a - t_star) - 0.1 * t_star;
  return slack > 0.0 ? slack : 0.0;
}

PotentialKind potential_kind_from_string(const std::string& s) {
  if (s == "noisymoons") return PotentialKind::noisymoons;
  if (s == "noisycircles") return PotentialKind::noisycircles;
  if (s == "anisotropic") return PotentialKind::anisotropic;
  throw ValidationError("unknown environment kind: " + s);
}

std::string to_string(PotentialKind k) {
  switch (k) {
    case PotentialKind::noisymoons: return "noisymoons";
    case PotentialKind::noisycircles: return "noisycircles";
    case PotentialKind::anisotropic: return "anisotropic";
  }
  return "?";
}

double PotentialEnv::logging_log_density(double a) const {
  return lognormal_log_pdf(a, logging_mean(), logging_sd);
}

PotentialEnv make_potential_env(PotentialKind kind, std::uint64_t seed) {
  PotentialEnv env;
  env.kind = kind;
  env.seed = seed;
  if (kind == PotentialKind::anisotropic) {
    env.group_means.resize(3);
    env.group_means << 1.0, 2.0, 3.0;
  } else {
    env.group_means.resize(2);
    env.group_means << 1.0, 2.0;
  }
  return env;
}

namespace {
constexpr double kPi = 3.14159265358979323846;

struct ContextDraw {
  double x0, x1;
  int group;
};

ContextDraw draw_context(PotentialKind kind, Rng& rng) {
  switch (kind) {
    case PotentialKind::noisymoons: {
      const int g = static_cast<int>(rng.index(2));
      const double t = rng.uniform(0.0, kPi);
      double x = g == 0 ? std::cos(t) : 1.0 - std::cos(t);
      double y = g == 0 ? std::sin(t) : 0.5 - std::sin(t);
      x += 0.1 * rng.normal();
      y += 0.1 * rng.normal();
      return {x, y, g};
    }
    case PotentialKind::noisycircles: {
      const int g = static_cast<int>(rng.index(2));
      const double t = rng.uniform(0.0, 2.0 * kPi);
      const double r = g == 0 ? 1.0 : 0.5;
      return {r * std::cos(t) + 0.1 * rng.normal(), r * std::sin(t) + 0.1 * rng.normal(), g};
    }
    case PotentialKind::anisotropic: {
      const int g = static_cast<int>(rng.index(3));
      static const double cx[3] = {-4.0, 0.0, 4.0};
      static const double cy[3] = {-3.0, 1.0, 3.5};
      const double u = cx[g] + rng.normal();
      const double v = cy[g] + rng.normal();
      // shear keeps the blobs anisotropic
      return {0.6 * u - 0.6 * v, -0.4 * u + 0.8 * v, g};
    }
  }
  throw ValidationError("unknown environment kind");
}

}  // namespace

SyntheticDraws generate_potential_env(const PotentialEnv& env, Eigen::Index n, Exec exec) {
  if (n < 1) throw ValidationError("need at least one row");
  if (env.group_means.size() != (env.kind == PotentialKind::anisotropic ? 3 : 2))
    throw ValidationError("group mean count does not match the environment kind");

  const auto map = lognormal_moment_map(env.logging_mean(), env.logging_sd);
  SyntheticDraws out;
  out.data.contexts.resize(n, 2);
  out.data.actions.resize(n);
  out.data.propensities.resize(n);
  out.data.costs.resize(n);
  out.hidden.resize(n);
  parallel_for(
      n,
      [&](Eigen::Index i) {
        Rng rng = Rng::for_row(env.seed, static_cast<std::uint64_t>(i));
        const ContextDraw c = draw_context(env.kind, rng);
        out.data.contexts(i, 0) = c.x0;
        out.data.contexts(i, 1) = c.x1;
        const double p = env.group_means[c.group] + env.potential_std * rng.normal();
        out.hidden[i] = p;
        const double a = std::exp(map.m + map.s * rng.normal());
        out.data.actions[i] = a;
        out.data.propensities[i] = std::exp(env.logging_log_density(a));
        out.data.costs[i] = env.cost(a, p);
      },
      exec);
  return out;
}

SyntheticDraws warfarin_logging(const WarfarinSim& sim, Eigen::Index n, Exec exec) {
  if (n < 1) throw ValidationError("need at least one row");
  if (!(sim.sigma_t > 0.0)) throw ValidationError("sigma_t must be positive");
  if (sim.theta_mix < 0.0 || sim.theta_mix > 1.0) throw ValidationError("theta_mix must be in [0,1]");
  if (sim.theta_mix == 1.0)
    throw ValidationError("theta_mix = 1 makes the logging policy deterministic; propensities undefined");

  const double resid_sd = sim.sigma_t * std::sqrt(1.0 - sim.theta_mix);
  const double bmi_coef = sim.sigma_t * std::sqrt(sim.theta_mix);
  SyntheticDraws out;
  out.data.contexts.resize(n, 1);
  out.data.actions.resize(n);
  out.data.propensities.resize(n);
  out.data.costs.resize(n);
  out.hidden.resize(n);
  parallel_for(
      n,
      [&](Eigen::Index i) {
        Rng rng = Rng::for_row(sim.seed, static_cast<std::uint64_t>(i));
        const double z_bmi = rng.normal();
        out.data.contexts(i, 0) = z_bmi;
        // true dose shares the BMI signal but has its own residual
        const double t_star =
            std::max(sim.mu_t + sim.sigma_t * (std::sqrt(sim.theta_mix) * z_bmi +
                                               std::sqrt(1.0 - sim.theta_mix) * rng.normal()),
                     1.0);
        out.hidden[i] = t_star;
        const double eps = rng.normal();
        const double a = sim.mu_t + bmi_coef * z_bmi + resid_sd * eps;
        out.data.actions[i] = a;
        out.data.propensities[i] = std::exp(normal_log_pdf(a, sim.mu_t + bmi_coef * z_bmi, resid_sd));
        out.data.costs[i] = sim.cost(a, t_star);
      },
      exec);
  return out;
}

OnlineRisk online_risk_on(const PolicyModel& pm, const Eigen::MatrixXd& contexts,
                          const Eigen::VectorXd& hidden, const HiddenCostFn& cost,
                          int samples_per_context, std::uint64_t seed, Exec exec) {
  const Eigen::Index n = contexts.rows();
  if (n < 1 || samples_per_context < 1) throw ValidationError("online risk needs rows and samples");
  Eigen::VectorXd row_mean(n);
  parallel_for(
      n,
      [&](Eigen::Index i) {
        Rng rng = Rng::for_row(seed ^ 0x9E3779B97F4A7C15ULL, static_cast<std::uint64_t>(i));
        double acc = 0.0;
        for (int s = 0; s < samples_per_context; ++s) {
          const double a = pm.sample(contexts.row(i).transpose(), rng);
          acc += cost(a, hidden[i]);
        }
        row_mean[i] = acc / samples_per_context;
      },
      exec);
  OnlineRisk out;
  out.risk = blocked_sum(n, [&](Eigen::Index i) { return row_mean[i]; }, exec) / static_cast<double>(n);
  const double var =
      blocked_sum(
          n, [&](Eigen::Index i) { const double c = row_mean[i] - out.risk; return c * c; }, exec) /
      std::max<double>(static_cast<double>(n - 1), 1.0);
  out.std_error = std::sqrt(var / static_cast<double>(n));
  return out;
}

OnlineRisk online_risk(const PolicyModel& pm, const PotentialEnv& env, Eigen::Index n_contexts,
                       int samples_per_context, std::uint64_t seed, Exec exec) {
  PotentialEnv fresh = env;
  fresh.seed = seed;
  const SyntheticDraws draws = generate_potential_env(fresh, n_contexts, exec);
  return online_risk_on(
      pm, draws.data.contexts, draws.hidden,
      [&env](double a, double p) { return env.cost(a, p); }, samples_per_context, seed, exec);
}

OnlineRisk online_risk(const PolicyModel& pm, const WarfarinSim& sim, Eigen::Index n_contexts,
                       int samples_per_context, std::uint64_t seed, Exec exec) {
  WarfarinSim fresh = sim;
  fresh.seed = seed;
  const SyntheticDraws draws = warfarin_logging(fresh, n_contexts, exec);
  return online_risk_on(
      pm, draws.data.contexts, draws.hidden,
      [&sim](double a, double t) { return sim.cost(a, t); }, samples_per_context, seed, exec);
}

SyntheticDraws clipping_toy(Eigen::Index n, bool outlier, std::uint64_t seed) {
  if (n < 10) throw ValidationError("clipping toy needs n >= 10");
  const double logging_mean = 1.2, logging_sd = 0.5;
  const auto map = lognormal_moment_map(logging_mean, logging_sd);
  SyntheticDraws out;
  out.data.contexts.resize(n, 2);
  out.data.actions.resize(n);
  out.data.propensities.resize(n);
  out.data.costs.resize(n);
  out.hidden.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Rng rng = Rng::for_row(seed, static_cast<std::uint64_t>(i));
    const bool high = rng.index(2) == 1;
    const double cx = high ? 2.0 : 0.0, cy = high ? 2.0 : 0.0;
    out.data.contexts(i, 0) = cx + 0.3 * rng.normal();
    out.data.contexts(i, 1) = cy + 0.3 * rng.normal();
    const double p = (high ? 2.5 : 0.8) + 0.1 * rng.normal();
    out.hidden[i] = p;
    const double a = std::exp(map.m + map.s * rng.normal());
    out.data.actions[i] = a;
    out.data.propensities[i] = std::exp(lognormal_log_pdf(a, logging_mean, logging_sd));
    const double reward = reward_piecewise(a, p, 2.0, 1.0) + rng.normal();
    out.data.costs[i] = -reward;
  }
  if (outlier) {
    // one high-potential row inside the low cluster, logged at an action the
    // logging policy almost never picks
    const Eigen::Index i = 0;
    out.data.contexts(i, 0) = 0.6;
    out.data.contexts(i, 1) = 0.0;
    out.hidden[i] = 4.5;
    out.data.actions[i] = 4.5;
    out.data.propensities[i] = std::exp(lognormal_log_pdf(4.5, logging_mean, logging_sd));
    out.data.costs[i] = -3.0;
  }
  return out;
}

}  // namespace crm
