#include "crm/estimators.hpp"

#include <cmath>
#include <iostream>
#include <limits>

#include "crm/errors.hpp"
#include "crm/quadrature.hpp"

namespace crm {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kE = 2.718281828459045235360287471353;
const GaussHermite& sdm_rule() {
  static const GaussHermite rule = gauss_hermite(32);
  return rule;
}
}  // namespace

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::ips: return "ips";
    case Estimator::cips: return "cips";
    case Estimator::scips: return "scips";
    case Estimator::snips: return "snips";
    case Estimator::dm: return "dm";
    case Estimator::sdm: return "sdm";
  }
  return "?";
}

Estimator estimator_from_string(const std::string& s) {
  if (s == "ips") return Estimator::ips;
  if (s == "cips") return Estimator::cips;
  if (s == "scips") return Estimator::scips;
  if (s == "snips") return Estimator::snips;
  if (s == "dm") return Estimator::dm;
  if (s == "sdm") return Estimator::sdm;
  throw ValidationError("unknown estimator: " + s);
}

void CrmObjective::validate() const {
  if (estimator == Estimator::cips || estimator == Estimator::scips) {
    if (!(M >= 1.0)) throw ValidationError("clipping threshold M must be >= 1");
  }
  if (lambda_var < 0 || lambda_ent < 0 || c_reg < 0)
    throw ValidationError("regularization weights must be nonnegative");
  if ((estimator == Estimator::dm || estimator == Estimator::sdm) && !predictor)
    throw ValidationError("dm/sdm objective needs a fitted cost predictor");
}

double CostPredictor::predict(const Eigen::Ref<const Eigen::VectorXd>& x, double a) const {
  return beta.dot(embedding->embed(x, a));
}

double CostPredictor::predict_da(const Eigen::Ref<const Eigen::VectorXd>& x, double a) const {
  const Eigen::VectorXd px = embedding->context_map(x);
  const Eigen::VectorXd dpa = embedding->action.embed_grad(a);
  double out = 0.0;
  const Eigen::Index m = dpa.size();
  for (Eigen::Index i = 0; i < px.size(); ++i) out += px[i] * beta.segment(i * m, m).dot(dpa);
  return out;
}

WeightStats weight_stats(const Eigen::VectorXd& weights) {
  WeightStats ws;
  ws.weights = weights;
  const double sum = weights.sum();
  const double sum2 = weights.squaredNorm();
  ws.mean_weight = sum / static_cast<double>(weights.size());
  ws.ess = sum2 > 0.0 ? sum * sum / sum2 : 0.0;
  ws.ess_ratio = ws.ess / static_cast<double>(weights.size());
  return ws;
}

WeightStats importance_weights(const PolicyModel& pm, const LoggedDataset& ds, Exec exec) {
  const Eigen::Index n = ds.n();
  Eigen::VectorXd w(n);
  parallel_for(
      n,
      [&](Eigen::Index i) {
        const double ld = pm.log_density(ds.contexts.row(i).transpose(), ds.actions[i]);
        w[i] = std::exp(ld - std::log(ds.propensities[i]));
      },
      exec);
  for (Eigen::Index i = 0; i < n; ++i)
    if (!std::isfinite(w[i]))
      throw ValidationError("non-finite importance weight at row " + std::to_string(i));
  return weight_stats(w);
}

double solve_alpha(double M) {
  if (!(M >= 1.0)) throw ValidationError("soft clip requires M >= 1");
  double lo = 1.0, hi = std::max(M, kE) + 2.0;
  double x = std::max(M, kE);
  for (int iter = 0; iter < 200; ++iter) {
    const double f = x * std::log(x) - M;
    if (std::abs(f) <= 1e-13) return x;
    if (f > 0.0) hi = std::min(hi, x);
    else lo = std::max(lo, x);
    const double step = f / (std::log(x) + 1.0);
    double next = x - step;
    if (!(next > lo) || !(next < hi)) next = 0.5 * (lo + hi);
    if (next == x) break;
    x = next;
  }
  return x;
}

SoftClip soft_clip(double w, double M, double alpha_m) {
  if (w <= M) return {w, 1.0};
  const double shifted = w + alpha_m - M;
  return {alpha_m * std::log(shifted), alpha_m / shifted};
}

SoftClip soft_clip(double w, double M) { return soft_clip(w, M, solve_alpha(M)); }

CrmProblem::CrmProblem(Family family, MeanModel mean, const LoggedDataset& ds, CrmObjective obj,
                       Exec exec)
    : family_(family), mean_(std::move(mean)), obj_(std::move(obj)), exec_(exec), n_(ds.n()) {
  obj_.validate();
  ds.validate();
  actions_ = ds.actions;
  costs_ = ds.costs;
  log_prop_ = ds.propensities.array().log();
  switch (mean_.kind) {
    case MeanKind::constant:
      feats_ = Eigen::MatrixXd::Ones(n_, 1);
      break;
    case MeanKind::linear:
      feats_.resize(n_, mean_.d + 1);
      feats_.leftCols(mean_.d) = ds.contexts;
      feats_.col(mean_.d).setOnes();
      break;
    case MeanKind::poly: {
      const Eigen::Index d = mean_.d;
      feats_.resize(n_, d * d + 1);
      for (Eigen::Index i = 0; i < n_; ++i) {
        Eigen::Index k = 0;
        for (Eigen::Index r = 0; r < d; ++r)
          for (Eigen::Index c = 0; c < d; ++c) feats_(i, k++) = ds.contexts(i, r) * ds.contexts(i, c);
        feats_(i, d * d) = 1.0;
      }
      break;
    }
    case MeanKind::ccp:
      psi_x_ = mean_.embedding->context_map.apply(ds.contexts, exec_);
      break;
    case MeanKind::greedy: {
      psi_x_ = mean_.embedding->context_map.apply(ds.contexts, exec_);
      greedy_mu_.resize(n_);
      const Eigen::VectorXd no_params(0);
      parallel_for(
          n_,
          [&](Eigen::Index i) { greedy_mu_[i] = mean_.value(no_params, ds.contexts.row(i).transpose()); },
          exec_);
      break;
    }
  }
  if ((obj_.estimator == Estimator::dm || obj_.estimator == Estimator::sdm) && psi_x_.size() == 0)
    psi_x_ = obj_.predictor->embedding->context_map.apply(ds.contexts, exec_);
}

void CrmProblem::mean_batch(const Eigen::VectorXd& mean_params, Eigen::VectorXd& mu_raw,
                            Eigen::MatrixXd* softargmin) const {
  switch (mean_.kind) {
    case MeanKind::constant:
    case MeanKind::linear:
    case MeanKind::poly:
      mu_raw = feats_ * mean_params;
      return;
    case MeanKind::ccp: {
      const Eigen::Index dx = mean_.embedding->context_map.d_out();
      const Eigen::Index me = mean_.embedding->action.m();
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> B(
          mean_params.data(), dx, me);
      Eigen::MatrixXd eta = psi_x_ * B * mean_.anchor_embeddings.transpose();  // n x m_anchor
      Eigen::MatrixXd& P = *softargmin;
      P.resize(n_, eta.cols());
      mu_raw.resize(n_);
      const double gamma = mean_.gamma;
      const Eigen::VectorXd& anchors = mean_.anchors;
      parallel_for(
          n_,
          [&](Eigen::Index i) {
            Eigen::VectorXd z = -gamma * eta.row(i).transpose();
            const double zmax = z.maxCoeff();
            Eigen::VectorXd p = (z.array() - zmax).exp();
            p /= p.sum();
            P.row(i) = p.transpose();
            mu_raw[i] = p.dot(anchors);
          },
          exec_);
      return;
    }
    case MeanKind::greedy:
      mu_raw = greedy_mu_;
      return;
  }
}

void CrmProblem::fold_mean_grad(const Eigen::VectorXd& mean_params, const Eigen::VectorXd& coeff,
                                const Eigen::MatrixXd& softargmin, const Eigen::VectorXd& mu_raw,
                                Eigen::Ref<Eigen::VectorXd> grad) const {
  (void)mean_params;
  switch (mean_.kind) {
    case MeanKind::constant:
    case MeanKind::linear:
    case MeanKind::poly:
      grad = feats_.transpose() * coeff;
      return;
    case MeanKind::ccp: {
      const Eigen::Index m = mean_.anchors.size();
      Eigen::MatrixXd g(n_, m);
      const double gamma = mean_.gamma;
      parallel_for(
          n_,
          [&](Eigen::Index i) {
            g.row(i) = (-gamma * coeff[i]) *
                       (softargmin.row(i).array() * (mean_.anchors.transpose().array() - mu_raw[i]))
                           .matrix();
          },
          exec_);
      const Eigen::MatrixXd grad_b = psi_x_.transpose() * (g * mean_.anchor_embeddings);
      const Eigen::Index me = mean_.embedding->action.m();
      // row-major flatten to match the joint-embedding layout
      for (Eigen::Index r = 0; r < grad_b.rows(); ++r) grad.segment(r * me, me) = grad_b.row(r);
      return;
    }
    case MeanKind::greedy:
      return;  // no mean parameters
  }
}

double CrmProblem::eval(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
  if (theta.size() != dim()) throw ValidationError("theta length mismatch");
  const Eigen::Index k = mean_.param_count();
  const Eigen::VectorXd mp = theta.head(k);
  const double sraw = theta[k];
  const bool sp = family_ == Family::lognormal &&
                  !((mean_.kind == MeanKind::ccp || mean_.kind == MeanKind::greedy) &&
                    mean_.anchors.size() > 0 && mean_.anchors.minCoeff() > 0.0);

  Eigen::VectorXd mu_raw;
  Eigen::MatrixXd softargmin;
  mean_batch(mp, mu_raw, &softargmin);

  Eigen::VectorXd ld(n_), dldmu(n_), dldsr(n_), ent(n_), dentmu(n_), dentsr(n_);
  parallel_for(
      n_,
      [&](Eigen::Index i) {
        const FamilyChain c = family_chain(family_, sp, sraw, mu_raw[i], actions_[i]);
        ld[i] = c.log_density;
        dldmu[i] = c.dld_dmuraw;
        dldsr[i] = c.dld_dsraw;
        ent[i] = c.entropy;
        dentmu[i] = c.dent_dmuraw;
        dentsr[i] = c.dent_dsraw;
      },
      exec_);
  if (!ent.allFinite()) return kInf;

  const double nd = static_cast<double>(n_);
  const Estimator est = obj_.estimator;
  const bool ld_route = !(est == Estimator::dm || est == Estimator::sdm);

  double value_est = 0.0;
  Eigen::VectorXd var_terms(n_);   // per-row terms whose sample variance is penalized
  Eigen::VectorXd dvar_dld(n_);    // d var_terms / d ld (ld route)
  Eigen::VectorXd c_est_ld(n_);    // d value_est / d ld (ld route)
  Eigen::VectorXd dterm_dmu(0), dterm_dsr(0);  // dm/sdm route

  if (ld_route) {
    Eigen::VectorXd w(n_);
    parallel_for(
        n_, [&](Eigen::Index i) { w[i] = std::exp(ld[i] - log_prop_[i]); }, exec_);
    if (!w.allFinite()) return kInf;  // overflow: let the line search back off

    switch (est) {
      case Estimator::ips:
        parallel_for(
            n_,
            [&](Eigen::Index i) {
              var_terms[i] = costs_[i] * w[i];
              dvar_dld[i] = costs_[i] * w[i];
              c_est_ld[i] = dvar_dld[i] / nd;
            },
            exec_);
        value_est = blocked_sum(n_, [&](Eigen::Index i) { return var_terms[i]; }, exec_) / nd;
        break;
      case Estimator::cips: {
        const double M = obj_.M;
        parallel_for(
            n_,
            [&](Eigen::Index i) {
              var_terms[i] = costs_[i] * std::min(w[i], M);
              dvar_dld[i] = w[i] <= M ? costs_[i] * w[i] : 0.0;  // clipped rows: zero subgradient
              c_est_ld[i] = dvar_dld[i] / nd;
            },
            exec_);
        value_est = blocked_sum(n_, [&](Eigen::Index i) { return var_terms[i]; }, exec_) / nd;
        break;
      }
      case Estimator::scips: {
        const double M = obj_.M;
        const double alpha_m = solve_alpha(M);
        parallel_for(
            n_,
            [&](Eigen::Index i) {
              const SoftClip z = soft_clip(w[i], M, alpha_m);
              var_terms[i] = costs_[i] * z.value;
              dvar_dld[i] = costs_[i] * z.deriv * w[i];
              c_est_ld[i] = dvar_dld[i] / nd;
            },
            exec_);
        value_est = blocked_sum(n_, [&](Eigen::Index i) { return var_terms[i]; }, exec_) / nd;
        break;
      }
      case Estimator::snips: {
        const double wsum = blocked_sum(n_, [&](Eigen::Index i) { return w[i]; }, exec_);
        if (!(wsum > 0.0)) return kInf;
        const double ysum = blocked_sum(n_, [&](Eigen::Index i) { return costs_[i] * w[i]; }, exec_);
        value_est = ysum / wsum;
        const double v = value_est;
        parallel_for(
            n_,
            [&](Eigen::Index i) {
              var_terms[i] = costs_[i] * w[i];
              dvar_dld[i] = costs_[i] * w[i];
              c_est_ld[i] = (costs_[i] - v) * w[i] / wsum;  // quotient rule
            },
            exec_);
        break;
      }
      default:
        break;
    }
  } else {
    const CostPredictor& cp = *obj_.predictor;
    dterm_dmu.resize(n_);
    dterm_dsr.resize(n_);
    const double sig = std::exp(sraw);
    const GaussHermite& rule = sdm_rule();
    bool bad = false;
    parallel_for(
        n_,
        [&](Eigen::Index i) {
          const double mu = sp ? softplus(mu_raw[i]) : mu_raw[i];
          const double dmu = sp ? sigmoid(mu_raw[i]) : 1.0;
          const auto px = psi_x_.row(i);
          const Eigen::Index m = cp.embedding->action.m();
          auto eta_and_slope = [&](double a, double& eta, double& deta) {
            const Eigen::VectorXd pa = cp.embedding->action.embed(a);
            const Eigen::VectorXd dpa = cp.embedding->action.embed_grad(a);
            eta = deta = 0.0;
            for (Eigen::Index r = 0; r < px.size(); ++r) {
              eta += px[r] * cp.beta.segment(r * m, m).dot(pa);
              deta += px[r] * cp.beta.segment(r * m, m).dot(dpa);
            }
          };
          if (est == Estimator::dm) {
            double eta, deta;
            eta_and_slope(mu, eta, deta);
            var_terms[i] = eta;
            dterm_dmu[i] = deta * dmu;
            dterm_dsr[i] = 0.0;
          } else if (family_ == Family::normal) {
            double t = 0.0, gmu = 0.0, gsr = 0.0;
            for (Eigen::Index q = 0; q < rule.nodes.size(); ++q) {
              const double a = mu + sig * rule.nodes[q];
              double eta, deta;
              eta_and_slope(a, eta, deta);
              t += rule.weights[q] * eta;
              gmu += rule.weights[q] * deta;
              gsr += rule.weights[q] * deta * sig * rule.nodes[q];
            }
            var_terms[i] = t;
            dterm_dmu[i] = gmu * dmu;
            dterm_dsr[i] = gsr;
          } else {
            if (!(mu > 0.0)) {
              bad = true;
              return;
            }
            const LognormalMapDerivs lm = lognormal_map_derivs(mu, sig);
            double t = 0.0, gmu = 0.0, gsr = 0.0;
            for (Eigen::Index q = 0; q < rule.nodes.size(); ++q) {
              const double a = std::exp(lm.m + lm.s * rule.nodes[q]);
              double eta, deta;
              eta_and_slope(a, eta, deta);
              t += rule.weights[q] * eta;
              gmu += rule.weights[q] * deta * a * (lm.dm_dmu + rule.nodes[q] * lm.ds_dmu);
              gsr += rule.weights[q] * deta * a * (lm.dm_dsig + rule.nodes[q] * lm.ds_dsig) * sig;
            }
            var_terms[i] = t;
            dterm_dmu[i] = gmu * dmu;
            dterm_dsr[i] = gsr;
          }
        },
        exec_);
    if (bad) return kInf;
    value_est = blocked_sum(n_, [&](Eigen::Index i) { return var_terms[i]; }, exec_) / nd;
  }

  double value = value_est;

  double term_mean = 0.0;
  const bool with_var = obj_.lambda_var > 0.0 && n_ >= 2;
  if (with_var) {
    term_mean = blocked_sum(n_, [&](Eigen::Index i) { return var_terms[i]; }, exec_) / nd;
    const double variance =
        blocked_sum(
            n_, [&](Eigen::Index i) { const double c = var_terms[i] - term_mean; return c * c; },
            exec_) /
        (nd - 1.0);
    value += obj_.lambda_var * variance;
  }
  if (obj_.lambda_ent > 0.0)
    value -= obj_.lambda_ent * blocked_sum(n_, [&](Eigen::Index i) { return ent[i]; }, exec_) / nd;
  if (obj_.c_reg > 0.0) value += obj_.c_reg * mp.squaredNorm();
  if (!std::isfinite(value)) return kInf;

  if (grad) {
    grad->resize(dim());
    Eigen::VectorXd cmu(n_), csr(n_);
    parallel_for(
        n_,
        [&](Eigen::Index i) {
          double cm, cs;
          if (ld_route) {
            double c_ld = c_est_ld[i];
            if (with_var)
              c_ld += obj_.lambda_var * 2.0 * (var_terms[i] - term_mean) / (nd - 1.0) * dvar_dld[i];
            cm = c_ld * dldmu[i];
            cs = c_ld * dldsr[i];
          } else {
            double c_t = 1.0 / nd;
            if (with_var) c_t += obj_.lambda_var * 2.0 * (var_terms[i] - term_mean) / (nd - 1.0);
            cm = c_t * dterm_dmu[i];
            cs = c_t * dterm_dsr[i];
          }
          if (obj_.lambda_ent > 0.0) {
            cm -= obj_.lambda_ent / nd * dentmu[i];
            cs -= obj_.lambda_ent / nd * dentsr[i];
          }
          cmu[i] = cm;
          csr[i] = cs;
        },
        exec_);
    if (k > 0) {
      fold_mean_grad(mp, cmu, softargmin, mu_raw, grad->head(k));
      if (obj_.c_reg > 0.0) grad->head(k) += 2.0 * obj_.c_reg * mp;
    }
    (*grad)[k] = blocked_sum(n_, [&](Eigen::Index i) { return csr[i]; }, exec_);
    if (!grad->allFinite()) return kInf;
  }
  return value;
}

double CrmProblem::estimate_only(const Eigen::VectorXd& theta) const {
  CrmProblem bare(*this);
  bare.obj_.lambda_var = 0.0;
  bare.obj_.lambda_ent = 0.0;
  bare.obj_.c_reg = 0.0;
  return bare.eval(theta, nullptr);
}

double estimate(const PolicyModel& pm, const LoggedDataset& ds, const CrmObjective& obj, Exec exec) {
  CrmObjective bare = obj;
  bare.lambda_var = 0.0;
  bare.lambda_ent = 0.0;
  bare.c_reg = 0.0;
  CrmProblem prob(pm.family, pm.mean, ds, bare, exec);
  const double v = prob.eval(pm.theta, nullptr);
  if (std::isinf(v)) {
    if (obj.estimator == Estimator::snips)
      throw DiagnosticError("SNIPS invalid: importance weights sum to zero");
    throw ValidationError("estimator value is not finite");
  }
  return v;
}

double variance_penalty(const PolicyModel& pm, const LoggedDataset& ds, const CrmObjective& obj,
                        Exec exec) {
  if (ds.n() < 2) throw ValidationError("variance penalty needs n >= 2");
  const WeightStats ws = importance_weights(pm, ds, exec);
  const Eigen::Index n = ds.n();
  Eigen::VectorXd terms(n);
  switch (obj.estimator) {
    case Estimator::cips:
      for (Eigen::Index i = 0; i < n; ++i) terms[i] = ds.costs[i] * std::min(ws.weights[i], obj.M);
      break;
    case Estimator::scips: {
      const double alpha_m = solve_alpha(obj.M);
      for (Eigen::Index i = 0; i < n; ++i)
        terms[i] = ds.costs[i] * soft_clip(ws.weights[i], obj.M, alpha_m).value;
      break;
    }
    default:
      for (Eigen::Index i = 0; i < n; ++i) terms[i] = ds.costs[i] * ws.weights[i];
      break;
  }
  const double mean = terms.mean();
  return (terms.array() - mean).square().sum() / static_cast<double>(n - 1);
}

ValueGrad objective_value_grad(const PolicyModel& pm, const LoggedDataset& ds,
                               const CrmObjective& obj, Exec exec) {
  CrmProblem prob(pm.family, pm.mean, ds, obj, exec);
  ValueGrad out;
  out.grad.resize(prob.dim());
  out.value = prob.eval(pm.theta, &out.grad);
  if (std::isinf(out.value)) {
    if (obj.estimator == Estimator::snips)
      throw DiagnosticError("SNIPS invalid: importance weights sum to zero");
    throw ValidationError("objective value is not finite");
  }
  return out;
}

CostPredictor fit_cost_predictor(const LoggedDataset& ds,
                                 std::shared_ptr<const JointEmbedding> embedding, double ridge,
                                 Exec exec) {
  if (!(ridge >= 0.0)) throw ValidationError("ridge weight must be nonnegative");
  const Eigen::Index n = ds.n();
  const Eigen::Index p = embedding->dim();
  if (n < p)
    std::cerr << "[crm] warning: fitting a cost predictor with n=" << n << " rows and p=" << p
              << " features\n";
  const Eigen::MatrixXd psi_x = embedding->context_map.apply(ds.contexts, exec);
  const Eigen::MatrixXd psi_a = embedding->action.embed_all(ds.actions, exec);
  const Eigen::Index dx = psi_x.cols(), m = psi_a.cols();
  Eigen::MatrixXd phi(n, p);
  parallel_for(
      n,
      [&](Eigen::Index i) {
        for (Eigen::Index r = 0; r < dx; ++r) phi.row(i).segment(r * m, m) = psi_x(i, r) * psi_a.row(i);
      },
      exec);
  Eigen::MatrixXd gram = phi.transpose() * phi;
  const double jitter = 1e-10 * gram.trace() / static_cast<double>(p);
  gram.diagonal().array() += ridge + jitter;
  const Eigen::VectorXd rhs = phi.transpose() * ds.costs;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success) throw ValidationError("cost predictor normal matrix is singular");
  CostPredictor cp;
  cp.embedding = std::move(embedding);
  cp.beta = ldlt.solve(rhs);
  cp.ridge = ridge;
  if (!cp.beta.allFinite()) throw ValidationError("cost predictor solve produced non-finite weights");
  return cp;
}

PolicyModel dm_policy(const CostPredictor& cp, const Eigen::VectorXd& anchors, double sigma_dm) {
  if (anchors.size() < 1) throw ValidationError("dm policy needs at least one anchor");
  if (!(sigma_dm > 0.0)) throw ValidationError("sigma_dm must be positive");
  Eigen::VectorXd sorted = anchors;
  std::sort(sorted.data(), sorted.data() + sorted.size());
  MeanModel mm = make_greedy_mean(cp.embedding, cp.beta, sorted);
  Eigen::VectorXd theta(1);
  theta[0] = std::log(sigma_dm);
  return make_policy(Family::normal, std::move(mm), theta);
}

}  // namespace crm
