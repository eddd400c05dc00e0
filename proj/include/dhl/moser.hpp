#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dhl/field_utils.hpp"
#include "dhl/funcineq.hpp"
#include "dhl/heat.hpp"

namespace dhl {

/// One space-time box (t_lo, t_hi] x B(x, radius), resolved to grid sites.
struct ParabolicCylinder {
  std::string kind;
  double t_lo = 0.0;
  double t_hi = 0.0;
  Ball ball;
};

/// The cylinder family of the Harnack machinery, all anchored at top time s:
///   Q       = (s - tau r^2, s) x B(x, r)
///   Q_delta = (s - d tau r^2, s) x B(x, d r)
///   Q'      = (s - tau r^2, s - (1-d) tau r^2) x B(x, d r)
///   Q_-     = (s - (3+d) tau r^2/4, s - (3-d) tau r^2/4) x dB
///   Q_+     = (s - (1+d) tau r^2/4, s) x dB
///   K^+     = (s - k tau r^2, s) x B(x, d r)
///   K^-     = (s - tau r^2, s - k tau r^2) x B(x, d r)
struct CylinderSet {
  ParabolicCylinder Q, Q_delta, Q_prime, Q_minus, Q_plus, K_plus, K_minus;
};

inline CylinderSet cylinders(const TorusGrid& g, Index x, double s, double r,
                             double tau, double delta, double kappa) {
  if (!(r >= 4.0 * g.h)) throw std::invalid_argument("cylinders: r < 4h");
  if (!(tau > 0.0)) throw std::invalid_argument("cylinders: tau <= 0");
  if (!(delta >= 0.5 && delta < 1.0))
    throw std::invalid_argument("cylinders: delta outside [1/2, 1)");
  if (!(kappa > 0.0 && kappa < 1.0))
    throw std::invalid_argument("cylinders: kappa outside (0, 1)");
  const double T = tau * r * r;
  const Ball full = make_ball(g, x, r);
  const Ball frac = make_ball(g, x, delta * r);

  CylinderSet c;
  c.Q = {"Q", s - T, s, full};
  c.Q_delta = {"Q_delta", s - delta * T, s, frac};
  c.Q_prime = {"Q_prime", s - T, s - (1.0 - delta) * T, frac};
  c.Q_minus = {"Q_minus", s - 0.25 * (3.0 + delta) * T, s - 0.25 * (3.0 - delta) * T, frac};
  c.Q_plus = {"Q_plus", s - 0.25 * (1.0 + delta) * T, s, frac};
  c.K_plus = {"K_plus", s - kappa * T, s, frac};
  c.K_minus = {"K_minus", s - T, s - kappa * T, frac};
  return c;
}

/// A caloric function stored frame by frame: frame k holds u(t0 + k dt).
/// Global torus solutions are caloric on every sub-cylinder, so audits may
/// restrict them freely.
struct CaloricSolution {
  TorusGrid grid;
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<Vec> frames;
  SolveStats stats;

  double t_end() const { return t0 + dt * (static_cast<double>(frames.size()) - 1.0); }
};

/// Frame index window covering [t_lo, t_hi] (closed, snapped to the grid).
inline std::pair<int, int> frame_range(const CaloricSolution& sol, double t_lo,
                                       double t_hi) {
  const double eps = 1e-9 * std::max(1.0, std::abs(t_hi));
  if (t_lo < sol.t0 - eps)
    throw std::invalid_argument("cylinder bottom precedes the available solution");
  if (t_hi > sol.t_end() + eps)
    throw std::invalid_argument("cylinder top exceeds the available solution");
  int k_lo = static_cast<int>(std::ceil((t_lo - sol.t0) / sol.dt - 1e-9));
  int k_hi = static_cast<int>(std::floor((t_hi - sol.t0) / sol.dt + 1e-9));
  k_lo = std::max(k_lo, 0);
  k_hi = std::min(k_hi, static_cast<int>(sol.frames.size()) - 1);
  if (k_hi < k_lo) throw std::invalid_argument("cylinder resolves to no time steps");
  return {k_lo, k_hi};
}

/// Evolves strictly positive data u0 = exp(smoothed gaussian field) on the
/// full torus, storing every step. Aborts if the positivity guard has to
/// rewind more than 10 steps.
inline CaloricSolution make_caloric(const FormMatrix& f, double horizon,
                                    std::uint64_t seed, double dt = 0.0,
                                    const EvolveOptions& base = {}) {
  if (!(horizon > 0.0)) throw std::invalid_argument("make_caloric: horizon <= 0");
  Vec g = gaussian_white(f.grid, seed);
  smooth121(f.grid, g, 2);
  Vec u0 = g.array().exp();

  CaloricSolution sol;
  sol.grid = f.grid;
  sol.t0 = 0.0;
  sol.dt = dt > 0.0 ? dt : std::min(f.grid.h * f.grid.h, horizon / 256.0);
  const int n = static_cast<int>(std::ceil(horizon / sol.dt - 1e-9));
  sol.frames.reserve(n + 1);
  sol.frames.push_back(u0);

  detail::HeatStepper st(f.E, f.m, sol.dt, base.tol, base.max_iterations);
  SolveStats stats;
  stats.tol = base.tol;
  Vec u = u0;
  for (int k = 0; k < n; ++k) {
    detail::advance_cn(st, u, 1, /*guard=*/true, stats);
    if (stats.ie_redo > 10)
      throw SolverError("make_caloric: positivity guard tripped more than 10 times",
                        stats.max_rel_residual);
    sol.frames.push_back(u);
  }
  sol.stats = stats;
  return sol;
}

/// Kernel column evolved from time t_start onward, stored frame by frame;
/// caloric and strictly positive once the kernel has spread.
inline CaloricSolution caloric_from_kernel(const FormMatrix& f, Index o,
                                           double t_start, double horizon,
                                           double dt = 0.0,
                                           const EvolveOptions& base = {}) {
  if (!(t_start > 0.0)) throw std::invalid_argument("caloric_from_kernel: t_start <= 0");
  EvolveOptions opts = base;
  opts.rannacher = true;
  HeatState head = evolve(f, delta_density(f, o), t_start, opts);

  CaloricSolution sol;
  sol.grid = f.grid;
  sol.t0 = t_start;
  sol.dt = dt > 0.0 ? dt : std::min(f.grid.h * f.grid.h, horizon / 256.0);
  const int n = static_cast<int>(std::ceil(horizon / sol.dt - 1e-9));
  sol.frames.reserve(n + 1);
  sol.frames.push_back(head.values);

  detail::HeatStepper st(f.E, f.m, sol.dt, base.tol, base.max_iterations);
  SolveStats stats = head.stats;
  Vec u = head.values;
  for (int k = 0; k < n; ++k) {
    detail::advance_cn(st, u, 1, /*guard=*/true, stats);
    sol.frames.push_back(u);
  }
  sol.stats = stats;
  return sol;
}

inline double cylinder_sup(const CaloricSolution& sol, const ParabolicCylinder& c) {
  auto [k0, k1] = frame_range(sol, c.t_lo, c.t_hi);
  double mx = -kInf;
  for (int k = k0; k <= k1; ++k)
    for (Index i : c.ball.sites) mx = std::max(mx, sol.frames[k][i]);
  return mx;
}

inline double cylinder_inf(const CaloricSolution& sol, const ParabolicCylinder& c) {
  auto [k0, k1] = frame_range(sol, c.t_lo, c.t_hi);
  double mn = kInf;
  for (int k = k0; k <= k1; ++k)
    for (Index i : c.ball.sites) mn = std::min(mn, sol.frames[k][i]);
  return mn;
}

/// Lambda-weighted space-time mean norm over a cylinder:
///   ||u||_{alpha, Q, Lambda} = ((1/(#frames |B|)) sum_k sum_B |u|^a L h^d)^{1/a}.
inline double cylinder_norm(const CaloricSolution& sol, const ParabolicCylinder& c,
                            const FormMatrix& f, double alpha, bool weighted = true,
                            bool invert = false) {
  auto [k0, k1] = frame_range(sol, c.t_lo, c.t_hi);
  const double hd = std::pow(sol.grid.h, sol.grid.dim);
  double acc = 0.0;
  for (int k = k0; k <= k1; ++k)
    for (Index i : c.ball.sites) {
      double v = sol.frames[k][i];
      if (invert) v = 1.0 / v;
      acc += std::pow(std::abs(v), alpha) * (weighted ? f.Lambda[i] : 1.0) * hd;
    }
  const double denom = static_cast<double>(k1 - k0 + 1) * c.ball.discrete_volume(sol.grid);
  return std::pow(acc / denom, 1.0 / alpha);
}

struct HarnackAudit {
  double sup_minus = 0.0;
  double inf_plus = 0.0;
  double ratio = 0.0;
  bool numerical_flag = false;  // ratio < 1 - 1e-9, below audit tolerance
};

/// sup over Q_- against inf over Q_+ for one positive caloric function.
inline HarnackAudit harnack_ratio(const CaloricSolution& sol, const CylinderSet& c) {
  if (cylinder_inf(sol, c.Q) <= 0.0)
    throw std::invalid_argument("harnack_ratio: non-positive values in Q");
  HarnackAudit a;
  a.sup_minus = cylinder_sup(sol, c.Q_minus);
  a.inf_plus = cylinder_inf(sol, c.Q_plus);
  a.ratio = a.sup_minus / a.inf_plus;
  a.numerical_flag = a.ratio < 1.0 - 1e-9;
  return a;
}

enum class MeanValueDirection { sub_sup_bound, super_neg_power, super_small_alpha };

/// One gap evaluation of a mean-value inequality. `ratio` excludes the
/// gap-dependent factor of the bound, so ratio * gap^gap_exponent must stay
/// bounded along a gap sweep if the bound's gap dependence holds.
struct MeanValueReport {
  MeanValueDirection direction = MeanValueDirection::sub_sup_bound;
  double sigma = 1.0, sigma_prime = 0.5;
  double gap = 0.5;
  double lhs = 0.0;
  double rhs_structural = 0.0;  // constant-free, gap-free
  double ratio = 0.0;
  double gap_exponent = 0.0;    // the bound's exponent of (sigma - sigma')^{-1}
};

inline MeanValueReport mean_value_audit(const CaloricSolution& sol,
                                        const FormMatrix& f, Index x, double s,
                                        double r, double tau,
                                        MeanValueDirection dir, double sigma,
                                        double sigma_prime, double alpha,
                                        double alpha0, double C_S_B_Lambda,
                                        double nu) {
  if (!(0.5 <= sigma_prime && sigma_prime < sigma && sigma <= 1.0))
    throw std::invalid_argument("mean_value_audit: need 1/2 <= sigma' < sigma <= 1");
  const double T = tau * r * r;
  const double g = sigma - sigma_prime;

  auto top_anchored = [&](double f_) {
    ParabolicCylinder c;
    c.kind = "Q_sigma";
    c.t_lo = s - f_ * T;
    c.t_hi = s;
    c.ball = make_ball(sol.grid, x, f_ * r);
    return c;
  };
  auto bottom_anchored = [&](double f_) {
    ParabolicCylinder c;
    c.kind = "Q_prime_sigma";
    c.t_lo = s - T;
    c.t_hi = s - (1.0 - f_) * T;
    c.ball = make_ball(sol.grid, x, f_ * r);
    return c;
  };

  MeanValueReport rep;
  rep.direction = dir;
  rep.sigma = sigma;
  rep.sigma_prime = sigma_prime;
  rep.gap = g;

  auto check_resolved = [&](const ParabolicCylinder& c) {
    auto [k0, k1] = frame_range(sol, c.t_lo, c.t_hi);
    if (k1 - k0 + 1 < 2 || c.ball.sites.size() < 2)
      throw std::invalid_argument("mean_value_audit: degenerate cylinder");
  };

  switch (dir) {
    case MeanValueDirection::sub_sup_bound: {
      const ParabolicCylinder inner = top_anchored(sigma_prime);
      const ParabolicCylinder outer = top_anchored(sigma);
      check_resolved(inner);
      check_resolved(outer);
      rep.lhs = cylinder_sup(sol, inner);
      rep.rhs_structural = std::pow(C_S_B_Lambda, 1.0 / (2.0 * nu - 2.0)) *
                           std::sqrt(tau) *
                           std::pow(1.0 + 1.0 / tau, nu / (2.0 * nu - 2.0)) *
                           cylinder_norm(sol, outer, f, 2.0);
      rep.gap_exponent = 2.0 * nu / (2.0 * nu - 2.0);
      break;
    }
    case MeanValueDirection::super_neg_power: {
      const ParabolicCylinder inner = top_anchored(sigma_prime);
      const ParabolicCylinder outer = top_anchored(sigma);
      check_resolved(inner);
      check_resolved(outer);
      auto [k0, k1] = frame_range(sol, inner.t_lo, inner.t_hi);
      double mx = 0.0;
      for (int k = k0; k <= k1; ++k)
        for (Index i : inner.ball.sites)
          mx = std::max(mx, std::pow(sol.frames[k][i], -alpha));
      rep.lhs = mx;
      rep.rhs_structural =
          std::pow(C_S_B_Lambda, 1.0 / (nu - 1.0)) * tau *
          std::pow(1.0 + 1.0 / tau, nu / (nu - 1.0)) *
          std::pow(cylinder_norm(sol, outer, f, alpha, true, /*invert=*/true), alpha);
      rep.gap_exponent = 2.0 * nu / (nu - 1.0);
      break;
    }
    case MeanValueDirection::super_small_alpha: {
      if (!(alpha0 > 0.0 && alpha0 < nu && alpha > 0.0 && alpha < alpha0 / nu))
        throw std::invalid_argument("mean_value_audit: need 0 < alpha < alpha0/nu < 1");
      const ParabolicCylinder inner = bottom_anchored(sigma_prime);
      const ParabolicCylinder outer = bottom_anchored(sigma);
      check_resolved(inner);
      check_resolved(outer);
      rep.lhs = cylinder_norm(sol, inner, f, alpha0);
      const double outer_exp = (1.0 + nu) * (1.0 / alpha - 1.0 / alpha0);
      rep.rhs_structural =
          std::pow(tau * std::pow(1.0 + 1.0 / tau, nu / (nu - 1.0)) *
                       std::pow(std::max(1.0, C_S_B_Lambda), nu / (nu - 1.0)),
                   outer_exp) *
          cylinder_norm(sol, outer, f, alpha);
      rep.gap_exponent = 2.0 * nu / (nu - 1.0) * outer_exp;
      break;
    }
  }
  rep.ratio = rep.lhs / rep.rhs_structural;
  return rep;
}

/// Log-level-set decay audit. k(u,kappa) is the eta^2 Lambda-weighted
/// spatial average of -log u at time s' = s - kappa tau r^2 with the
/// canonical radial cutoff; the audit measures the weighted space-time
/// volume of {log u < -l - k} on K^+ and {log u > l - k} on K^-.
struct LogLevelReport {
  double k = 0.0;
  std::vector<double> levels;
  std::vector<double> measure_plus;        // gamma^Lambda of sublevel sets on K^+
  std::vector<double> measure_minus;       // gamma^Lambda of superlevel sets on K^-
  std::vector<double> normalized_plus;     // measure * l / (m(B) M |B|^{2/d} (C_P v tau^2))
  std::vector<double> normalized_minus;
  double max_normalized = 0.0;
};

inline LogLevelReport log_level_audit(const CaloricSolution& sol,
                                      const FormMatrix& f, Index x, double s,
                                      double r, double tau, double delta,
                                      double kappa,
                                      const std::vector<double>& levels,
                                      double M_B_Lambda, double C_P_B_Lambda) {
  for (std::size_t i = 0; i + 1 < levels.size(); ++i)
    if (!(levels[i] < levels[i + 1]) || !(levels[i] > 0.0))
      throw std::invalid_argument("log_level_audit: levels must be positive ascending");
  const CylinderSet cyl = cylinders(sol.grid, x, s, r, tau, delta, kappa);
  if (cylinder_inf(sol, cyl.Q) <= 0.0)
    throw std::invalid_argument("log_level_audit: non-positive values in Q");

  const Ball B = cyl.Q.ball;
  const Vec eta = radial_cutoff(sol.grid, x, r);
  const double s_prime = s - kappa * tau * r * r;
  const int frame_sp = static_cast<int>(std::llround((s_prime - sol.t0) / sol.dt));
  if (frame_sp < 0 || frame_sp >= static_cast<int>(sol.frames.size()))
    throw std::invalid_argument("log_level_audit: s' outside the solution window");

  double num = 0.0, den = 0.0;
  for (Index i : B.sites) {
    const double w = eta[i] * eta[i] * f.Lambda[i];
    num += w * (-std::log(sol.frames[frame_sp][i]));
    den += w;
  }
  LogLevelReport rep;
  rep.k = num / den;
  rep.levels = levels;

  const double hd = std::pow(sol.grid.h, sol.grid.dim);
  double mLB = 0.0;
  for (Index i : B.sites) mLB += f.m[i];
  const double vol_an_2d = std::pow(B.analytic_volume(sol.grid.dim), 2.0 / sol.grid.dim);
  const double budget = mLB * M_B_Lambda * vol_an_2d * std::max(C_P_B_Lambda, tau * tau);

  auto measure_set = [&](const ParabolicCylinder& c, double lvl, bool sublevel) {
    auto [k0, k1] = frame_range(sol, c.t_lo, c.t_hi);
    double acc = 0.0;
    for (int k = k0; k <= k1; ++k)
      for (Index i : c.ball.sites) {
        const double lg = std::log(sol.frames[k][i]);
        const bool in_set = sublevel ? (lg < -lvl - rep.k) : (lg > lvl - rep.k);
        if (in_set) acc += sol.dt * f.Lambda[i] * hd;
      }
    return acc;
  };

  for (double lvl : levels) {
    const double mp = measure_set(cyl.K_plus, lvl, true);
    const double mm = measure_set(cyl.K_minus, lvl, false);
    rep.measure_plus.push_back(mp);
    rep.measure_minus.push_back(mm);
    rep.normalized_plus.push_back(mp * lvl / budget);
    rep.normalized_minus.push_back(mm * lvl / budget);
    rep.max_normalized = std::max({rep.max_normalized, rep.normalized_plus.back(),
                                   rep.normalized_minus.back()});
  }
  return rep;
}

/// Oscillation of u over the dyadic cylinders Q_k = (t0 - r_k^2, t0) x
/// B(x, r_k), r_k = 2^{-k} r0 (tau = 1, delta = 1/2 family of the Hoelder
/// argument). Stops when r_k would drop below 4h.
struct OscillationReport {
  std::vector<double> radii;
  std::vector<double> osc;
  std::vector<double> contraction;  // osc_{k+1} / osc_k
};

inline OscillationReport oscillation_decay(const CaloricSolution& sol, Index x,
                                           double t0, int k_max,
                                           double r0 = 0.0) {
  if (k_max < 1) throw std::invalid_argument("oscillation_decay: fewer than 2 levels");
  OscillationReport rep;
  const double base = r0 > 0.0 ? r0 : std::sqrt(t0);
  for (int k = 0; k <= k_max; ++k) {
    const double rk = std::ldexp(base, -k);
    if (rk < 4.0 * sol.grid.h) break;
    ParabolicCylinder c;
    c.kind = "Q_k";
    c.t_lo = t0 - rk * rk;
    c.t_hi = t0;
    c.ball = make_ball(sol.grid, x, rk);
    rep.radii.push_back(rk);
    rep.osc.push_back(cylinder_sup(sol, c) - cylinder_inf(sol, c));
  }
  if (rep.osc.size() < 2)
    throw std::invalid_argument("oscillation_decay: fewer than 2 resolvable levels");
  for (std::size_t k = 0; k + 1 < rep.osc.size(); ++k)
    rep.contraction.push_back(rep.osc[k] > 0.0 ? rep.osc[k + 1] / rep.osc[k] : 0.0);
  return rep;
}

/// sup_{z,y in B(x,r)} eps^{-d} |p_{t/eps^2}(o, z/eps) - p_{t/eps^2}(o, y/eps)|
/// evaluated on a kernel column already computed at micro time t/eps^2.
/// `x`, `r`, `t` are macroscopic; the ball B(x/eps, r/eps) lives on the
/// microscopic lattice.
inline double rescaled_oscillation(const KernelColumn& col, const TorusGrid& g,
                                   Index x_micro, double r_macro, double eps) {
  const Ball b = make_ball(g, x_micro, r_macro / eps);
  double mx = -kInf, mn = kInf;
  for (Index i : b.sites) {
    mx = std::max(mx, col.values[i]);
    mn = std::min(mn, col.values[i]);
  }
  return std::pow(eps, -g.dim) * (mx - mn);
}

}  // namespace dhl
