#include "crm/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "crm/envs.hpp"
#include "crm/errors.hpp"
#include "crm/quadrature.hpp"
#include "crm/rng.hpp"

namespace crm {

namespace {

double percentile_sorted(const std::vector<double>& sorted, double q) {
  const std::size_t n = sorted.size();
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  const double h = (static_cast<double>(n) - 1.0) * q;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, n - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

BootstrapResult bootstrap_weighted(const Eigen::VectorXd& weights, const Eigen::VectorXd& costs,
                                   Estimator kind, int n_boot, double delta, std::uint64_t seed) {
  const Eigen::Index n = weights.size();
  if (n < 1 || n_boot < 1) throw ValidationError("bootstrap needs rows and resamples");
  if (n < 30)
    std::cerr << "[crm] warning: bootstrapping " << n << " rows; intervals will be crude\n";
  BootstrapResult out;
  out.estimates.reserve(static_cast<std::size_t>(n_boot));
  Rng rng(seed);
  for (int b = 0; b < n_boot; ++b) {
    double wsum = 0.0, ysum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index r = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
      wsum += weights[r];
      ysum += costs[r] * weights[r];
    }
    if (kind == Estimator::snips) {
      if (!(wsum > 0.0)) {
        ++out.skipped;
        continue;
      }
      out.estimates.push_back(ysum / wsum);
    } else {
      out.estimates.push_back(ysum / static_cast<double>(n));
    }
  }
  if (out.estimates.size() < static_cast<std::size_t>(n_boot) / 2 || out.estimates.empty()) {
    out.degenerate = true;
    return out;
  }
  std::sort(out.estimates.begin(), out.estimates.end());
  out.ci_lower = percentile_sorted(out.estimates, delta / 2.0);
  out.ci_upper = percentile_sorted(out.estimates, 1.0 - delta / 2.0);
  out.upper_one_sided = percentile_sorted(out.estimates, 1.0 - delta);
  return out;
}

BootstrapResult bootstrap_snips(const PolicyModel& pm, const LoggedDataset& ds, int n_boot,
                                double delta, std::uint64_t seed) {
  const WeightStats ws = importance_weights(pm, ds);
  return bootstrap_weighted(ws.weights, ds.costs, Estimator::snips, n_boot, delta, seed);
}

namespace {

ProtocolReport protocol_from_weights(const WeightStats& wv, const WeightStats& wt,
                                     const Eigen::VectorXd& test_costs, double logging_risk,
                                     double nu, double delta, int n_boot, std::uint64_t seed,
                                     Estimator kind) {
  ProtocolReport rep;
  rep.nu = nu;
  rep.delta = delta;
  rep.n_boot = n_boot;
  rep.logging_risk = logging_risk;
  rep.ess_ratio_valid = wv.ess_ratio;
  rep.ess_ratio_test = wt.ess_ratio;
  rep.ess_ratio = std::min(wv.ess_ratio, wt.ess_ratio);
  rep.mean_weight = wt.mean_weight;

  const double wsum = wt.weights.sum();
  rep.ips_estimate = wt.weights.dot(test_costs) / static_cast<double>(wt.weights.size());
  const bool snips_defined = wsum > 0.0;
  rep.snips_estimate = snips_defined ? wt.weights.dot(test_costs) / wsum
                                     : std::numeric_limits<double>::quiet_NaN();

  // the estimate must clear the ESS gate on both splits before any test
  if (rep.ess_ratio <= nu || !snips_defined) {
    rep.valid = false;
    rep.reject_h0 = false;
    return rep;
  }
  const BootstrapResult boot =
      bootstrap_weighted(wt.weights, test_costs, kind, n_boot, delta, seed);
  rep.boot_skipped = boot.skipped;
  if (boot.degenerate) {
    rep.valid = false;
    rep.reject_h0 = false;
    return rep;
  }
  rep.valid = true;
  rep.ci_lower = boot.ci_lower;
  rep.ci_upper = boot.ci_upper;
  rep.upper_one_sided = boot.upper_one_sided;
  rep.reject_h0 = boot.upper_one_sided < logging_risk;
  return rep;
}

}  // namespace

ProtocolReport evaluate_protocol(const PolicyModel& pm, const LoggedDataset& ds_valid,
                                 const LoggedDataset& ds_test, double logging_risk_estimate,
                                 double nu, double delta, int n_boot, std::uint64_t seed,
                                 Estimator kind) {
  const WeightStats wv = importance_weights(pm, ds_valid);
  const WeightStats wt = importance_weights(pm, ds_test);
  return protocol_from_weights(wv, wt, ds_test.costs, logging_risk_estimate, nu, delta, n_boot,
                               seed, kind);
}

CvResult cross_validate(const std::vector<CvCandidate>& candidates, const LoggedDataset& ds,
                        int k_folds, double nu, std::uint64_t seed, Exec exec) {
  if (k_folds < 2) throw ValidationError("cross validation needs at least 2 folds");
  if (candidates.empty()) throw ValidationError("no candidates");
  const Eigen::Index n = ds.n();
  if (n < k_folds) throw ValidationError("fewer rows than folds");

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng(seed);
  shuffle(perm, rng);

  std::vector<std::vector<Eigen::Index>> folds(static_cast<std::size_t>(k_folds));
  for (Eigen::Index i = 0; i < n; ++i)
    folds[static_cast<std::size_t>(i % k_folds)].push_back(perm[static_cast<std::size_t>(i)]);

  CvResult out;
  out.candidates.resize(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    CvCandidateResult& rec = out.candidates[c];
    rec.name = candidates[c].name;
    double acc = 0.0;
    for (int f = 0; f < k_folds; ++f) {
      std::vector<Eigen::Index> train_rows;
      for (int g = 0; g < k_folds; ++g)
        if (g != f) train_rows.insert(train_rows.end(), folds[static_cast<std::size_t>(g)].begin(),
                                      folds[static_cast<std::size_t>(g)].end());
      const LoggedDataset train = take_rows(ds, train_rows);
      const LoggedDataset held = take_rows(ds, folds[static_cast<std::size_t>(f)]);
      CvFold fold;
      fold.fold = f;
      try {
        // one init seed per fold, shared across candidates: scores stay
        // paired, and identical specs tie exactly
        const TrainedPolicy tp =
            train_policy(candidates[c].spec, train, seed ^ (0x9E37ULL * (f + 1)), exec);
        const WeightStats ws = importance_weights(tp.policy, held, exec);
        fold.ess_ratio = ws.ess_ratio;
        const double wsum = ws.weights.sum();
        if (ws.ess_ratio > nu && wsum > 0.0) {
          fold.snips = ws.weights.dot(held.costs) / wsum;
          fold.kept = true;
          acc += fold.snips;
        }
      } catch (const std::exception&) {
        fold.kept = false;  // training blew up; the fold is discarded
      }
      rec.folds.push_back(fold);
      if (fold.kept) ++rec.folds_kept;
    }
    rec.eligible = rec.folds_kept > 0;
    rec.score = rec.eligible ? acc / rec.folds_kept : std::numeric_limits<double>::infinity();
  }

  auto better = [&](int a, int b) {
    const auto& ra = out.candidates[static_cast<std::size_t>(a)];
    const auto& rb = out.candidates[static_cast<std::size_t>(b)];
    if (ra.score != rb.score) return ra.score < rb.score;
    const auto& oa = candidates[static_cast<std::size_t>(a)].spec.objective;
    const auto& ob = candidates[static_cast<std::size_t>(b)].spec.objective;
    if (oa.M != ob.M) return oa.M < ob.M;  // conservative tie-breaks
    return oa.lambda_var < ob.lambda_var;
  };
  int best = -1;
  for (int c = 0; c < static_cast<int>(candidates.size()); ++c) {
    if (!out.candidates[static_cast<std::size_t>(c)].eligible) continue;
    if (best < 0 || better(c, best)) best = c;
  }
  if (best < 0)
    throw DiagnosticError(
        "every candidate failed the ESS gate on every fold; initialize policies closer to the "
        "logging policy");
  out.best_index = best;
  return out;
}

// ---- protocol validation experiment ------------------------------------

namespace {

/// Expected reward at an action, integrating the hidden potential.
class SmoothedReward {
 public:
  SmoothedReward(const ProtocolValidationConfig& cfg)
      : lo_(-12.0), hi_(30.0), step_(1e-3) {
    const GaussHermite gh = gauss_hermite(61);
    const Eigen::Index n = static_cast<Eigen::Index>((hi_ - lo_) / step_) + 2;
    table_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = lo_ + step_ * static_cast<double>(i);
      double acc = 0.0;
      for (Eigen::Index q = 0; q < gh.nodes.size(); ++q) {
        const double p = cfg.reward_peak + cfg.potential_sd * gh.nodes[q];
        acc += gh.weights[q] * reward_piecewise(a, p, cfg.rho_left, cfg.rho_right);
      }
      table_[i] = acc;
    }
  }

  double operator()(double a) const {
    if (a <= lo_ || a >= hi_) return 0.0;
    const double t = (a - lo_) / step_;
    const Eigen::Index i = static_cast<Eigen::Index>(t);
    const double frac = t - static_cast<double>(i);
    return table_[i] * (1.0 - frac) + table_[i + 1] * frac;
  }

 private:
  double lo_, hi_, step_;
  Eigen::VectorXd table_;
};

/// Risk of a lognormal(mean, sd in moment form) policy under the smoothed
/// reward, by z-substitution Simpson quadrature.
double risk_lognormal(const SmoothedReward& rbar, double mean, double sd) {
  const auto map = lognormal_moment_map(mean, sd);
  const int n = 4000;
  const double zlo = -8.0, zhi = 8.0, h = (zhi - zlo) / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double z = zlo + h * i;
    const double a = std::exp(map.m + map.s * z);
    const double f = -rbar(a) * std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    acc += w * f;
  }
  return acc * h / 3.0;
}

double risk_normal(const SmoothedReward& rbar, double mu, double sigma) {
  const int n = 4000;
  const double zlo = -8.0, zhi = 8.0, h = (zhi - zlo) / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double z = zlo + h * i;
    const double f = -rbar(mu + sigma * z) * std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    acc += w * f;
  }
  return acc * h / 3.0;
}

SweepPoint sweep_point(const std::vector<PolicyRecord>& records, double nu) {
  SweepPoint pt;
  pt.nu = nu;
  for (const auto& r : records) {
    const bool decide = r.snips_reject && r.ess_ratio > nu;
    if (decide && r.truth_better) ++pt.tp;
    if (decide && !r.truth_better) ++pt.fp;
    if (!decide && r.truth_better) ++pt.fn;
  }
  pt.precision = pt.tp + pt.fp > 0 ? static_cast<double>(pt.tp) / (pt.tp + pt.fp) : 1.0;
  pt.recall = pt.tp + pt.fn > 0 ? static_cast<double>(pt.tp) / (pt.tp + pt.fn) : 0.0;
  pt.f1 = pt.precision + pt.recall > 0.0
              ? 2.0 * pt.precision * pt.recall / (pt.precision + pt.recall)
              : 0.0;
  return pt;
}

}  // namespace

ValidationSummary validate_protocol_experiment(const std::string& setup,
                                               const ProtocolValidationConfig& cfg, Exec exec) {
  if (setup != "i" && setup != "ii") throw ValidationError("setup must be 'i' or 'ii'");
  const SmoothedReward rbar(cfg);

  ValidationSummary out;
  out.setup = setup;
  out.logging_risk = risk_lognormal(rbar, cfg.logging_mean, cfg.logging_sd);

  const int per = cfg.n_policies / cfg.n_replicates;
  if (per < 1) throw ValidationError("more replicates than policies");
  out.records.resize(static_cast<std::size_t>(cfg.n_policies));

  const auto log_map = lognormal_moment_map(cfg.logging_mean, cfg.logging_sd);

  for (int d = 0; d < cfg.n_replicates; ++d) {
    // one logged dataset per replicate
    const Eigen::Index n = cfg.n_logged;
    Eigen::VectorXd actions(n), log_prop(n), costs(n);
    {
      Rng rng(cfg.seed * 0x51ED270B + static_cast<std::uint64_t>(d) * 0x9E3779B9ULL + 17);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double a = std::exp(log_map.m + log_map.s * rng.normal());
        actions[i] = a;
        log_prop[i] = lognormal_log_pdf(a, cfg.logging_mean, cfg.logging_sd);
        const double p = cfg.reward_peak + cfg.potential_sd * rng.normal();
        costs[i] = -reward_piecewise(a, p, cfg.rho_left, cfg.rho_right);
      }
    }
    const Eigen::Index half = n / 2;

    parallel_for(
        per,
        [&](Eigen::Index j) {
          const int idx = d * per + static_cast<int>(j);
          Rng rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(idx) * 2ULL + 1ULL);
          PolicyRecord rec;
          Eigen::VectorXd wv(half), wt(n - half);
          if (setup == "i") {
            rec.mean = std::max(cfg.logging_mean + cfg.param_noise * rng.normal(), 0.05);
            rec.sd = std::exp(std::log(cfg.logging_sd) + cfg.param_noise * rng.normal());
            rec.true_risk = risk_lognormal(rbar, rec.mean, rec.sd);
            for (Eigen::Index i = 0; i < n; ++i) {
              const double ld = lognormal_log_pdf(actions[i], rec.mean, rec.sd);
              const double w = std::exp(ld - log_prop[i]);
              (i < half ? wv[i] : wt[i - half]) = w;
            }
          } else {
            rec.mean = cfg.optimal_mean + cfg.param_noise * rng.normal();
            rec.sd = std::exp(std::log(cfg.optimal_sd) + cfg.param_noise * rng.normal());
            rec.true_risk = risk_normal(rbar, rec.mean, rec.sd);
            for (Eigen::Index i = 0; i < n; ++i) {
              const double ld = normal_log_pdf(actions[i], rec.mean, rec.sd);
              const double w = std::exp(ld - log_prop[i]);
              (i < half ? wv[i] : wt[i - half]) = w;
            }
          }
          rec.truth_better = rec.true_risk <= out.logging_risk;

          const WeightStats sv = weight_stats(wv);
          const WeightStats st = weight_stats(wt);
          rec.ess_ratio = std::min(sv.ess_ratio, st.ess_ratio);

          // decisions are stored gate-free; the ESS threshold is applied when
          // tabulating, so one run serves both the table and the nu sweep
          const Eigen::VectorXd test_costs = costs.segment(half, n - half);
          const ProtocolReport snips_rep =
              protocol_from_weights(sv, st, test_costs, out.logging_risk, 0.0, cfg.delta,
                                    cfg.n_boot, rng.next_u64(), Estimator::snips);
          const ProtocolReport ips_rep =
              protocol_from_weights(sv, st, test_costs, out.logging_risk, 0.0, cfg.delta,
                                    cfg.n_boot, rng.next_u64(), Estimator::ips);
          rec.snips_reject = snips_rep.reject_h0;
          rec.ips_reject = ips_rep.reject_h0;
          out.records[static_cast<std::size_t>(idx)] = rec;
        },
        exec);
  }

  for (const auto& r : out.records) {
    const bool ds = r.snips_reject && r.ess_ratio > cfg.nu;
    const bool di = r.ips_reject && r.ess_ratio > cfg.nu;
    if (ds && r.truth_better) ++out.snips.tp;
    if (ds && !r.truth_better) ++out.snips.fp;
    if (!ds && r.truth_better) ++out.snips.fn;
    if (!ds && !r.truth_better) ++out.snips.tn;
    if (di && r.truth_better) ++out.ips.tp;
    if (di && !r.truth_better) ++out.ips.fp;
    if (!di && r.truth_better) ++out.ips.fn;
    if (!di && !r.truth_better) ++out.ips.tn;
  }

  for (double nu : {0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5})
    out.sweep.push_back(sweep_point(out.records, nu));
  return out;
}

// ---- what-if diagnostics ------------------------------------------------

Eigen::VectorXd whatif_default_grid(const WhatifConfig& cfg) {
  const double mode = std::exp(cfg.logging_log_mean - cfg.logging_log_sd * cfg.logging_log_sd);
  const double var = (std::exp(cfg.logging_log_sd * cfg.logging_log_sd) - 1.0) *
                     std::exp(2.0 * cfg.logging_log_mean + cfg.logging_log_sd * cfg.logging_log_sd);
  const double sd = std::sqrt(var);
  const int half = (cfg.grid_points - 1) / 2;
  Eigen::VectorXd grid(2 * half + 1);
  for (int k = -half; k <= half; ++k)
    grid[k + half] = mode + 3.0 * sd * static_cast<double>(k) / static_cast<double>(half);
  return grid;
}

std::vector<WhatifPoint> whatif_diagnostics(const Eigen::VectorXd& mu_grid, const WhatifConfig& cfg,
                                            Exec exec) {
  if (mu_grid.size() == 0) throw ValidationError("empty what-if grid");
  const Eigen::Index n = cfg.n;
  const int d = cfg.dims;

  // logged draws: n i.i.d. vectors from the componentwise lognormal
  Eigen::MatrixXd x(n, d);
  Eigen::VectorXd log_prop(n), fx(n);
  parallel_for(
      n,
      [&](Eigen::Index i) {
        Rng rng = Rng::for_row(cfg.seed, static_cast<std::uint64_t>(i));
        double lp = 0.0, mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < d; ++j) {
          const double a = std::exp(cfg.logging_log_mean + cfg.logging_log_sd * rng.normal());
          x(i, j) = a;
          const double z = (std::log(a) - cfg.logging_log_mean) / cfg.logging_log_sd;
          lp += -0.5 * z * z - std::log(a * cfg.logging_log_sd) - 0.5 * std::log(2.0 * M_PI);
          mx = std::max(mx, a);
        }
        log_prop[i] = lp;
        fx[i] = mx;
      },
      exec);

  std::vector<WhatifPoint> out(static_cast<std::size_t>(mu_grid.size()));
  parallel_for(
      mu_grid.size(),
      [&](Eigen::Index g) {
        const double mu = mu_grid[g];
        Eigen::VectorXd w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
          double lt = 0.0;
          for (int j = 0; j < d; ++j) {
            const double z = (x(i, j) - mu) / cfg.target_sd;
            lt += -0.5 * z * z - std::log(cfg.target_sd) - 0.5 * std::log(2.0 * M_PI);
          }
          w[i] = std::exp(lt - log_prop[i]);
        }
        WhatifPoint pt;
        pt.mu = mu;
        const WeightStats ws = weight_stats(w);
        pt.ess_ratio = ws.ess_ratio;
        pt.mean_weight = ws.mean_weight;
        const double var =
            (w.array() - ws.mean_weight).square().sum() / std::max<double>(1.0, double(n - 1));
        pt.weight_se = std::sqrt(var / static_cast<double>(n));
        const double wsum = w.sum();
        pt.estimate = wsum > 0.0 ? w.dot(fx) / wsum : std::numeric_limits<double>::quiet_NaN();
        const BootstrapResult boot = bootstrap_weighted(
            w, fx, Estimator::snips, cfg.n_boot, cfg.delta,
            cfg.seed * 0xABCDULL + static_cast<std::uint64_t>(g) * 131ULL + 7ULL);
        if (!boot.degenerate) {
          pt.ci_lower = boot.ci_lower;
          pt.ci_upper = boot.ci_upper;
          pt.ci_width = boot.ci_upper - boot.ci_lower;
        } else {
          pt.ci_width = std::numeric_limits<double>::infinity();
        }
        out[static_cast<std::size_t>(g)] = pt;
      },
      exec);
  return out;
}

std::vector<WhatifPoint> whatif_diagnostics(const WhatifConfig& cfg, Exec exec) {
  return whatif_diagnostics(whatif_default_grid(cfg), cfg, exec);
}

}  // namespace crm
