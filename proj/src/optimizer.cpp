#include "crm/optimizer.hpp"

#include <chrono>
#include <cmath>
#include <deque>

#include "crm/errors.hpp"

namespace crm {

void ProxConfig::validate() const {
  if (kappa < 0.0) throw ValidationError("kappa must be nonnegative");
  if (outer_iters < 1) throw ValidationError("need at least one outer iteration");
}

LbfgsResult minimize(const ValueGradFn& fn, Eigen::VectorXd theta0, const LbfgsConfig& cfg) {
  const Eigen::Index n = theta0.size();
  Eigen::VectorXd theta = std::move(theta0);
  Eigen::VectorXd grad(n);
  double value = fn(theta, grad);
  if (!std::isfinite(value) || !grad.allFinite()) {
    std::string where = "[";
    for (Eigen::Index i = 0; i < n; ++i) where += (i ? "," : "") + std::to_string(theta[i]);
    throw ValidationError("objective non-finite at theta0 " + where + "]");
  }

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  LbfgsResult res;
  res.status = "max_iterations";

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    const double gnorm = grad.norm();
    if (gnorm <= cfg.grad_tol) {
      res.status = "gradient_tolerance";
      res.converged = true;
      res.iterations = iter;
      res.theta = theta;
      res.value = value;
      res.grad_norm = gnorm;
      return res;
    }

    // two-loop recursion
    Eigen::VectorXd q = grad;
    const std::size_t hist = s_hist.size();
    std::vector<double> alpha(hist);
    for (std::size_t h = hist; h-- > 0;) {
      alpha[h] = rho_hist[h] * s_hist[h].dot(q);
      q -= alpha[h] * y_hist[h];
    }
    if (hist > 0) {
      const double ys = y_hist.back().dot(s_hist.back());
      const double yy = y_hist.back().squaredNorm();
      if (yy > 0) q *= ys / yy;
    }
    for (std::size_t h = 0; h < hist; ++h) {
      const double beta = rho_hist[h] * y_hist[h].dot(q);
      q += (alpha[h] - beta) * s_hist[h];
    }
    Eigen::VectorXd dir = -q;
    double descent = dir.dot(grad);
    if (!(descent < 0.0)) {  // fall back to steepest descent
      dir = -grad;
      descent = -gnorm * gnorm;
    }

    // Armijo backtracking
    double step = iter == 0 ? std::min(1.0, 1.0 / std::max(gnorm, 1e-12)) : 1.0;
    const double c1 = 1e-4;
    Eigen::VectorXd trial(n), trial_grad(n);
    double trial_value = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < cfg.max_linesearch; ++ls) {
      trial = theta + step * dir;
      trial_value = fn(trial, trial_grad);
      if (std::isfinite(trial_value) && trial_grad.allFinite() &&
          trial_value <= value + c1 * step * descent) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      res.status = "line_search_failed";
      res.iterations = iter;
      res.theta = theta;
      res.value = value;
      res.grad_norm = gnorm;
      return res;
    }

    Eigen::VectorXd s = trial - theta;
    Eigen::VectorXd y = trial_grad - grad;
    const double ys = y.dot(s);
    if (ys > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / ys);
      if (static_cast<int>(s_hist.size()) > cfg.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    theta = std::move(trial);
    value = trial_value;
    grad = std::move(trial_grad);
    res.iterations = iter + 1;
  }

  res.theta = theta;
  res.value = value;
  res.grad_norm = grad.norm();
  return res;
}

TrainResult proximal_train(const CrmProblem& problem, const Eigen::VectorXd& theta0,
                           const ProxConfig& cfg) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();

  TrainResult out;
  Eigen::VectorXd theta = theta0;
  {
    Eigen::VectorXd g(problem.dim());
    const double v0 = problem.eval(theta, &g);
    if (!std::isfinite(v0)) throw ValidationError("objective non-finite at the initial policy");
  }

  for (int k = 0; k < cfg.outer_iters; ++k) {
    const double kappa = (k == cfg.outer_iters - 1) ? 0.0 : cfg.kappa;
    const Eigen::VectorXd center = theta;
    ValueGradFn fn = [&](const Eigen::VectorXd& th, Eigen::VectorXd& grad) {
      double v = problem.eval(th, &grad);
      if (kappa > 0.0 && std::isfinite(v)) {
        const Eigen::VectorXd diff = th - center;
        v += 0.5 * kappa * diff.squaredNorm();
        grad += kappa * diff;
      }
      return v;
    };
    LbfgsResult inner = minimize(fn, theta, cfg.inner);
    theta = inner.theta;
    out.objective_trace.push_back(problem.eval(theta, nullptr));
    out.inner.push_back(std::move(inner));
  }

  out.theta = theta;
  out.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

TrainResult proximal_train(const PolicyModel& init, const LoggedDataset& ds, const CrmObjective& obj,
                           const ProxConfig& cfg, Exec exec) {
  CrmProblem problem(init.family, init.mean, ds, obj, exec);
  return proximal_train(problem, init.theta, cfg);
}

}  // namespace crm
