#pragma once

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dhl/form.hpp"

namespace dhl {

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double residual)
      : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

struct EvolveOptions {
  double dt = 0.0;      // 0 = auto: min(h^2, t/64)
  double tol = 1e-10;   // CG relative tolerance
  int max_iterations = 20000;
  bool rannacher = false;  // 4 implicit-Euler half-steps before CN; needed
                           // for rough (delta) initial data
};

struct SolveStats {
  int steps = 0;
  int ie_redo = 0;              // positivity-guard rewinds
  int rannacher_halfsteps = 0;
  double max_rel_residual = 0.0;
  double tol = 1e-10;
};

struct HeatState {
  double t = 0.0;
  Vec values;
  double dt = 0.0;
  SolveStats stats;
};

namespace detail {

// One time-step engine for M du/dt = -E u at a fixed dt. CN and implicit
// Euler share the assembled matrices; CG is Jacobi-preconditioned.
class HeatStepper {
 public:
  HeatStepper(const SpMat& E, const Vec& m, double dt, double tol, int maxit)
      : E_(E), m_(m), dt_(dt) {
    SpMat M(m.size(), m.size());
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(m.size());
    for (Index i = 0; i < m.size(); ++i) t.emplace_back(i, i, m[i]);
    M.setFromTriplets(t.begin(), t.end());
    A_cn_ = M + (0.5 * dt) * E;
    A_ie_ = M + dt * E;
    A_cn_.makeCompressed();
    A_ie_.makeCompressed();
    cg_cn_.setTolerance(tol);
    cg_cn_.setMaxIterations(maxit);
    cg_cn_.compute(A_cn_);
    cg_ie_.setTolerance(tol);
    cg_ie_.setMaxIterations(maxit);
    cg_ie_.compute(A_ie_);
  }

  double dt() const { return dt_; }

  Vec step_cn(const Vec& u, SolveStats& stats) const {
    Vec rhs = m_.cwiseProduct(u) - (0.5 * dt_) * (E_ * u);
    return solve(cg_cn_, rhs, u, stats);
  }

  Vec step_ie(const Vec& u, SolveStats& stats) const {
    Vec rhs = m_.cwiseProduct(u);
    return solve(cg_ie_, rhs, u, stats);
  }

 private:
  using CG = Eigen::ConjugateGradient<SpMat, Eigen::Lower | Eigen::Upper,
                                      Eigen::DiagonalPreconditioner<double>>;

  static Vec solve(const CG& cg, const Vec& rhs, const Vec& guess,
                   SolveStats& stats) {
    Vec x = cg.solveWithGuess(rhs, guess);
    stats.max_rel_residual = std::max(stats.max_rel_residual, cg.error());
    if (cg.info() != Eigen::Success)
      throw SolverError("heat step: CG did not converge", cg.error());
    return x;
  }

  const SpMat& E_;
  const Vec& m_;
  double dt_;
  SpMat A_cn_, A_ie_;
  CG cg_cn_, cg_ie_;
};

// Advances u by `steps` CN steps of stepper's dt with the positivity guard:
// a step whose result dips below -1e-12 * max(u) is redone with implicit
// Euler (the M-matrix stencil makes that step positivity-preserving).
inline void advance_cn(const HeatStepper& st, Vec& u, int steps, bool guard,
                       SolveStats& stats) {
  for (int k = 0; k < steps; ++k) {
    const double floor_level = guard ? -1e-12 * u.cwiseAbs().maxCoeff() : 0.0;
    Vec next = st.step_cn(u, stats);
    if (guard && next.minCoeff() < floor_level) {
      next = st.step_ie(u, stats);
      ++stats.ie_redo;
    }
    u = std::move(next);
    ++stats.steps;
  }
}

}  // namespace detail

/// Evolves u0 to time t by Crank-Nicolson (unconditionally stable, second
/// order). The positivity guard is active when the initial data is
/// nonnegative. Commutes with constant shifts and conserves sum(u m) on the
/// torus up to the solver tolerance.
inline HeatState evolve(const FormMatrix& f, const Vec& u0, double t,
                        const EvolveOptions& opts = {}) {
  if (!(t >= 0.0)) throw std::invalid_argument("evolve: t < 0");
  HeatState out;
  out.stats.tol = opts.tol;
  if (t == 0.0) {
    out.t = 0.0;
    out.values = u0;
    return out;
  }
  const double dt0 = opts.dt > 0.0 ? opts.dt
                                   : std::min(f.grid.h * f.grid.h, t / 64.0);
  int n = static_cast<int>(std::ceil(t / dt0 - 1e-9));
  n = std::max(n, 1);
  const double dt = t / n;
  out.dt = dt;

  Vec u = u0;
  const bool guard = u0.minCoeff() >= 0.0;
  int cn_steps = n;
  if (opts.rannacher && n >= 2) {
    detail::HeatStepper half(f.E, f.m, 0.5 * dt, opts.tol, opts.max_iterations);
    for (int k = 0; k < 4; ++k) {
      u = half.step_ie(u, out.stats);
      ++out.stats.rannacher_halfsteps;
    }
    cn_steps = n - 2;
  }
  if (cn_steps > 0) {
    detail::HeatStepper st(f.E, f.m, dt, opts.tol, opts.max_iterations);
    detail::advance_cn(st, u, cn_steps, guard, out.stats);
  }
  out.t = t;
  out.values = std::move(u);
  return out;
}

/// Evolves u0 and captures snapshots at the requested (ascending, positive)
/// times. Stepping uses one fixed dt; a shortened step lands exactly on
/// each target.
inline std::vector<Vec> evolve_snapshots(const FormMatrix& f, const Vec& u0,
                                         const std::vector<double>& times,
                                         const EvolveOptions& opts = {},
                                         SolveStats* stats_out = nullptr) {
  if (times.empty()) return {};
  for (std::size_t k = 0; k + 1 < times.size(); ++k)
    if (!(times[k] < times[k + 1]))
      throw std::invalid_argument("evolve_snapshots: times must ascend");
  if (!(times.front() > 0.0))
    throw std::invalid_argument("evolve_snapshots: times must be positive");

  const double t_max = times.back();
  const double dt0 = opts.dt > 0.0
                         ? opts.dt
                         : std::min(f.grid.h * f.grid.h, t_max / 64.0);
  SolveStats stats;
  stats.tol = opts.tol;
  std::vector<Vec> out;
  out.reserve(times.size());

  Vec u = u0;
  const bool guard = u0.minCoeff() >= 0.0;
  double cur = 0.0;
  bool startup_done = !opts.rannacher;
  detail::HeatStepper main(f.E, f.m, dt0, opts.tol, opts.max_iterations);

  for (double target : times) {
    if (!startup_done) {
      // Rannacher startup: two dt0-steps' worth of implicit Euler halves
      const double span = std::min(2.0 * dt0, target - cur);
      detail::HeatStepper half(f.E, f.m, 0.25 * span, opts.tol, opts.max_iterations);
      for (int k = 0; k < 4; ++k) {
        u = half.step_ie(u, stats);
        ++stats.rannacher_halfsteps;
      }
      cur += span;
      startup_done = true;
    }
    double remaining = target - cur;
    const int full = static_cast<int>(std::floor(remaining / dt0 + 1e-9));
    detail::advance_cn(main, u, full, guard, stats);
    cur += full * dt0;
    remaining = target - cur;
    if (remaining > 1e-12 * dt0) {
      detail::HeatStepper st(f.E, f.m, remaining, opts.tol, opts.max_iterations);
      detail::advance_cn(st, u, 1, guard, stats);
      cur = target;
    }
    out.push_back(u);
  }
  if (stats_out) *stats_out = stats;
  return out;
}

/// One column p_t(o, .) of the heat kernel, as a density with respect to
/// the speed measure m_i = Lambda_i h^d. Conservative on the torus:
/// sum_j p_t(o,j) m_j = 1.
struct KernelColumn {
  Index origin = 0;
  double t = 0.0;
  Vec values;
  SolveStats stats;
};

inline Vec delta_density(const FormMatrix& f, Index o) {
  Vec u = Vec::Zero(f.grid.sites());
  u[o] = 1.0 / f.m[o];
  return u;
}

inline KernelColumn kernel_column(const FormMatrix& f, Index o, double t,
                                  EvolveOptions opts = {}) {
  if (!(t > 0.0)) throw std::invalid_argument("kernel_column: t <= 0");
  opts.rannacher = true;
  HeatState st = evolve(f, delta_density(f, o), t, opts);
  KernelColumn col;
  col.origin = o;
  col.t = t;
  col.values = std::move(st.values);
  col.stats = st.stats;
  return col;
}

inline std::vector<KernelColumn> kernel_snapshots(const FormMatrix& f, Index o,
                                                  const std::vector<double>& times,
                                                  EvolveOptions opts = {}) {
  opts.rannacher = true;
  SolveStats stats;
  auto vals = evolve_snapshots(f, delta_density(f, o), times, opts, &stats);
  std::vector<KernelColumn> cols(vals.size());
  for (std::size_t k = 0; k < vals.size(); ++k) {
    cols[k].origin = o;
    cols[k].t = times[k];
    cols[k].values = std::move(vals[k]);
    cols[k].stats = stats;
  }
  return cols;
}

/// Audits the semigroup property: max_j |p_{t+s}(o,j) - (P_s p_t(o,.))(j)|.
/// Both paths share one step size, so the residual isolates solver drift
/// and scheme bookkeeping rather than time-discretization error.
inline double chapman_kolmogorov_residual(const FormMatrix& f, Index o,
                                          double t, double s,
                                          const EvolveOptions& base = {}) {
  if (!(t >= 0.0) || !(s >= 0.0))
    throw std::invalid_argument("chapman_kolmogorov: negative time");
  if (t == 0.0 || s == 0.0) return 0.0;
  const double dt0 = std::min(f.grid.h * f.grid.h, std::min(t, s) / 64.0);

  EvolveOptions opts = base;
  opts.dt = dt0;
  opts.rannacher = true;
  SolveStats st;
  auto path_a = evolve_snapshots(f, delta_density(f, o), {t, t + s}, opts, &st);

  EvolveOptions tail = base;
  tail.dt = dt0;
  tail.rannacher = false;
  SolveStats st2;
  auto path_b = evolve_snapshots(f, path_a[0], {s}, tail, &st2);

  return (path_a[1] - path_b[0]).cwiseAbs().maxCoeff();
}

struct DiagonalProfile {
  std::vector<double> times;
  std::vector<double> sup_diag;            // sup over probes of p_t(x,x)
  std::vector<Index> probes;
  Eigen::MatrixXd per_probe;               // probes x times
};

/// sup_x p_t(x,x) over a deterministic probe set (all sites for N <= 32, a
/// 64-site stratified sample otherwise), per requested time.
inline DiagonalProfile diagonal_profile(const FormMatrix& f,
                                        const std::vector<double>& times,
                                        const EvolveOptions& opts = {}) {
  for (std::size_t k = 0; k + 1 < times.size(); ++k)
    if (!(times[k] < times[k + 1]) || !(times[k] > 0.0))
      throw std::invalid_argument("diagonal_profile: times must be positive ascending");
  DiagonalProfile prof;
  prof.times = times;
  const Index total = f.grid.sites();
  if (f.grid.n <= 32) {
    for (Index i = 0; i < total; ++i) prof.probes.push_back(i);
  } else {
    const Index stride = total / 64;
    for (Index k = 0; k < 64; ++k) prof.probes.push_back(k * stride);
  }
  prof.per_probe.resize(static_cast<Index>(prof.probes.size()),
                        static_cast<Index>(times.size()));
  for (std::size_t pi = 0; pi < prof.probes.size(); ++pi) {
    const Index x = prof.probes[pi];
    auto cols = kernel_snapshots(f, x, times, opts);
    for (std::size_t ti = 0; ti < times.size(); ++ti)
      prof.per_probe(static_cast<Index>(pi), static_cast<Index>(ti)) =
          cols[ti].values[x];
  }
  prof.sup_diag.resize(times.size());
  for (std::size_t ti = 0; ti < times.size(); ++ti)
    prof.sup_diag[ti] = prof.per_probe.col(static_cast<Index>(ti)).maxCoeff();
  return prof;
}

}  // namespace dhl
