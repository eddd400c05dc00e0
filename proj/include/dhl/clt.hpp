#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dhl/env.hpp"
#include "dhl/form.hpp"
#include "dhl/heat.hpp"

namespace dhl {

/// Limiting covariance and normalization of the local CLT.
struct CltTarget {
  Eigen::MatrixXd Sigma;
  double a_Lambda = 1.0;
  std::string method;  // "second_moment" or "corrector"
};

/// Gaussian kernel k_t^Sigma(x) = exp(-x Sigma^{-1} x / 2t) / sqrt((2 pi t)^d det Sigma).
inline double gaussian_kernel(const Eigen::MatrixXd& Sigma, double t,
                              const Eigen::VectorXd& x) {
  if (!(t > 0.0)) throw std::invalid_argument("gaussian_kernel: t <= 0");
  const int d = static_cast<int>(Sigma.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(Sigma);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("gaussian_kernel: Sigma not positive definite");
  const double quad = x.dot(llt.solve(x));
  double det = 1.0;
  for (int i = 0; i < d; ++i) det *= llt.matrixL()(i, i);
  det *= det;
  const double norm = std::sqrt(std::pow(2.0 * 3.14159265358979323846 * t, d) * det);
  return std::exp(-0.5 * quad / t) / norm;
}

/// Upper bound on the diffusivity used by torus-size guards:
/// 2 lambda_max(mean a) / mean(Lambda), a Voigt-type estimate.
inline double sigma_prior_max(const FieldSample& s) {
  const int d = s.spec.dimension;
  Eigen::MatrixXd mean_a = Eigen::MatrixXd::Zero(d, d);
  double mean_L = 0.0;
  const Index n = static_cast<Index>(s.lambda.size());
  for (Index c = 0; c < n; ++c) {
    for (int r = 0; r < d; ++r)
      for (int cc = 0; cc < d; ++cc) mean_a(r, cc) += s.a(c, r, cc);
    mean_L += s.Lambda[c];
  }
  mean_a /= static_cast<double>(n);
  mean_L /= static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mean_a);
  return 2.0 * es.eigenvalues().maxCoeff() / mean_L;
}

inline void check_torus_guard(const TorusGrid& g, double t_micro, double prior) {
  if (6.0 * std::sqrt(t_micro * prior) > 0.5 * g.side_length())
    throw std::invalid_argument("torus too small for the diffusive scale at t=" +
                                std::to_string(t_micro));
}

/// Second-moment estimator: Sigma(t) = (1/t) sum_j (x_j - o)(x_j - o)^T p_t(o,j) m_j
/// with torus-minimal displacements.
inline CltTarget sigma_second_moment(const FieldSample& s, const FormMatrix& f,
                                     Index o, double t,
                                     const EvolveOptions& opts = {}) {
  check_torus_guard(f.grid, t, sigma_prior_max(s));
  const KernelColumn col = kernel_column(f, o, t, opts);
  const int d = f.grid.dim;
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(d, d);
  double disp[kMaxDim];
  for (Index j = 0; j < f.grid.sites(); ++j) {
    f.grid.displacement(j, o, disp);
    const double w = col.values[j] * f.m[j];
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) S(a, b) += disp[a] * disp[b] * w;
  }
  CltTarget target;
  target.Sigma = S / t;
  target.a_Lambda = f.Lambda.mean();
  target.method = "second_moment";
  return target;
}

/// Periodic corrector fields and the homogenized matrix. chi_e solves
/// E(l_e + chi_e, v) = 0 for all v, with l_e the linear map x.e whose
/// gradient is h across every e-face (the torus jump is absorbed into the
/// face differences); a_hom[e,f] = E(l_e + chi_e, l_f + chi_f) / |torus|.
struct CorrectorField {
  std::vector<Vec> chi;
  Eigen::MatrixXd a_hom;
  std::vector<double> residuals;
};

namespace detail {

// Jacobi-preconditioned CG on the singular consistent system E x = b,
// projected onto mean-zero vectors. Deterministic fixed-order reductions.
inline Vec pcg_zero_mean(const SpMat& E, const Vec& b, double tol, int maxit,
                         double* residual_out) {
  const Index n = b.size();
  auto project = [n](Vec& v) { v.array() -= v.mean(); };
  Vec dinv(n);
  for (Index i = 0; i < n; ++i) dinv[i] = 1.0 / E.coeff(i, i);

  Vec x = Vec::Zero(n);
  Vec r = b;
  project(r);
  const double bnorm = r.norm();
  if (bnorm == 0.0) {
    if (residual_out) *residual_out = 0.0;
    return x;
  }
  Vec z = dinv.cwiseProduct(r);
  project(z);
  Vec p = z;
  double rz = r.dot(z);
  double res = 1.0;
  for (int it = 0; it < maxit; ++it) {
    Vec Ap = E * p;
    const double alpha = rz / p.dot(Ap);
    x += alpha * p;
    r -= alpha * Ap;
    project(r);
    res = r.norm() / bnorm;
    if (res < tol) break;
    z = dinv.cwiseProduct(r);
    project(z);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  if (residual_out) *residual_out = res;
  if (!(res < tol))
    throw SolverError("corrector solve: CG did not converge", res);
  return x;
}

}  // namespace detail

inline CorrectorField solve_corrector(const FieldSample& s, const FormMatrix& f,
                                      double tol = 1e-10) {
  const TorusGrid& g = f.grid;
  const int d = g.dim;
  const Index n = g.sites();
  CorrectorField out;
  out.chi.resize(d);
  out.residuals.resize(d, 0.0);

  for (int e = 0; e < d; ++e) {
    Vec b = Vec::Zero(n);
    for (Index i = 0; i < n; ++i) {
      const double c_plus = -f.E.coeff(i, g.neighbor(i, e, +1));
      const double c_minus = -f.E.coeff(i, g.neighbor(i, e, -1));
      b[i] = g.h * (c_plus - c_minus);
    }
    Vec chi = b.isZero(0.0) ? Vec(Vec::Zero(n))
                            : detail::pcg_zero_mean(f.E, b, tol, 20 * static_cast<int>(n),
                                                    &out.residuals[e]);
    // normalize to zero m-weighted mean
    chi.array() -= chi.dot(f.m) / f.m.sum();
    out.chi[e] = std::move(chi);
  }

  out.a_hom = Eigen::MatrixXd::Zero(d, d);
  const double vol = static_cast<double>(n) * std::pow(g.h, d);
  for (Index i = 0; i < n; ++i) {
    for (int axis = 0; axis < d; ++axis) {
      const Index j = g.neighbor(i, axis, +1);
      const double cond = -f.E.coeff(i, j);
      for (int e = 0; e < d; ++e) {
        const double ge = (axis == e ? g.h : 0.0) + (out.chi[e][j] - out.chi[e][i]);
        for (int ff = 0; ff <= e; ++ff) {
          const double gf = (axis == ff ? g.h : 0.0) + (out.chi[ff][j] - out.chi[ff][i]);
          out.a_hom(e, ff) += cond * ge * gf;
        }
      }
    }
  }
  out.a_hom /= vol;
  for (int e = 0; e < d; ++e)
    for (int ff = e + 1; ff < d; ++ff) out.a_hom(e, ff) = out.a_hom(ff, e);
  return out;
}

/// Sigma = 2 a_hom / a_Lambda. Cross-validation against the second-moment
/// estimator is mandatory before a sweep trusts this target (see
/// cross_validate_sigma).
inline CltTarget sigma_from_corrector(const CorrectorField& corr, double a_Lambda) {
  CltTarget t;
  t.Sigma = 2.0 * corr.a_hom / a_Lambda;
  t.a_Lambda = a_Lambda;
  t.method = "corrector";
  return t;
}

/// Relative operator-norm distance between the two Sigma estimates.
inline double sigma_disagreement(const CltTarget& a, const CltTarget& b) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.Sigma - b.Sigma);
  const double diff = es.eigenvalues().cwiseAbs().maxCoeff();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a.Sigma);
  return diff / ea.eigenvalues().cwiseAbs().maxCoeff();
}

/// Pool-adjacent-violators fit of a nonincreasing sequence (unit weights).
inline std::vector<double> isotonic_nonincreasing(const std::vector<double>& y) {
  const int n = static_cast<int>(y.size());
  std::vector<double> level(n), weight(n);
  std::vector<int> size(n);
  int blocks = 0;
  for (int i = 0; i < n; ++i) {
    level[blocks] = y[i];
    weight[blocks] = 1.0;
    size[blocks] = 1;
    ++blocks;
    while (blocks > 1 && level[blocks - 2] < level[blocks - 1]) {
      const double w = weight[blocks - 2] + weight[blocks - 1];
      level[blocks - 2] =
          (level[blocks - 2] * weight[blocks - 2] + level[blocks - 1] * weight[blocks - 1]) / w;
      weight[blocks - 2] = w;
      size[blocks - 2] += size[blocks - 1];
      --blocks;
    }
  }
  std::vector<double> fit;
  fit.reserve(n);
  for (int b = 0; b < blocks; ++b)
    for (int k = 0; k < size[b]; ++k) fit.push_back(level[b]);
  return fit;
}

struct CltPoint {
  double eps, t;
  double x[kMaxDim];
  double rescaled_density;
  double gaussian_value;
  double error;
};

struct CltSweepResult {
  Index origin = 0;
  double radius = 0.0;
  std::vector<double> epsilons;
  std::vector<double> times;
  std::vector<double> sup_error;            // per epsilon; NaN when skipped
  std::vector<std::string> skip_reason;     // empty when the rung ran
  std::vector<std::array<double, 4>> J_max; // max |J_1..J_4| per epsilon
  std::vector<double> J_exactness;          // max |J - sum J_i| per epsilon
  std::vector<double> mass_residual;        // |sum p m - 1| per epsilon
  std::vector<double> isotonic_fit;
  double isotonic_residual = 0.0;
  std::vector<CltPoint> points;             // long-format rows (finest detail)
};

/// The local-CLT convergence experiment: evaluates the rescaled kernel
/// against a_Lambda^{-1} k_t^Sigma over B(o, r) x I for each epsilon of the
/// ladder (one microscopic environment, shrinking observation scale).
inline CltSweepResult clt_sweep(const FieldSample& sample, const FormMatrix& f,
                                Index o, const std::vector<double>& epsilons,
                                const std::vector<double>& times_macro, double r,
                                const CltTarget& target,
                                const EvolveOptions& opts = {},
                                bool collect_points = false) {
  for (std::size_t i = 0; i + 1 < epsilons.size(); ++i)
    if (!(epsilons[i] > epsilons[i + 1]))
      throw std::invalid_argument("clt_sweep: epsilons must descend");
  CltSweepResult res;
  res.origin = o;
  res.radius = r;
  res.epsilons = epsilons;
  res.times = times_macro;

  const double prior = sigma_prior_max(sample);
  const TorusGrid& g = f.grid;
  const int d = g.dim;

  for (double eps : epsilons) {
    const double t_micro_max = times_macro.back() / (eps * eps);
    try {
      check_torus_guard(g, t_micro_max, prior);
    } catch (const std::invalid_argument& ex) {
      res.sup_error.push_back(std::numeric_limits<double>::quiet_NaN());
      res.skip_reason.emplace_back(ex.what());
      res.J_max.push_back({0, 0, 0, 0});
      res.J_exactness.push_back(0.0);
      res.mass_residual.push_back(0.0);
      continue;
    }

    std::vector<double> t_micro;
    for (double t : times_macro) t_micro.push_back(t / (eps * eps));
    auto cols = kernel_snapshots(f, o, t_micro, opts);

    const Ball obs = make_ball(g, o, r / eps);
    const double epsd = std::pow(eps, d);
    const double hd = std::pow(g.h, d);

    double sup_err = 0.0;
    double mass_res = 0.0;
    std::array<double, 4> jmax = {0, 0, 0, 0};
    double jexact = 0.0;

    for (std::size_t ti = 0; ti < times_macro.size(); ++ti) {
      const double t = times_macro[ti];
      const Vec& p = cols[ti].values;
      mass_res = std::max(mass_res, std::abs(p.dot(f.m) - 1.0));

      double disp[kMaxDim];
      Eigen::VectorXd xm(d);
      for (Index j : obs.sites) {
        g.displacement(j, o, disp);
        for (int a = 0; a < d; ++a) xm[a] = eps * disp[a];
        const double resc = p[j] / epsd;
        const double gauss = gaussian_kernel(target.Sigma, t, xm) / target.a_Lambda;
        const double err = std::abs(resc - gauss);
        sup_err = std::max(sup_err, err);
        if (collect_points && eps == epsilons.back()) {
          CltPoint pt{};
          pt.eps = eps;
          pt.t = t;
          for (int a = 0; a < d; ++a) pt.x[a] = xm[a];
          pt.rescaled_density = resc;
          pt.gaussian_value = gauss;
          pt.error = err;
          res.points.push_back(pt);
        }
      }

      // J decomposition on a partition of B(o, r) by balls of radius r0 = r/2
      const double r0 = 0.5 * r;
      std::vector<Eigen::VectorXd> centers;
      centers.push_back(Eigen::VectorXd::Zero(d));
      for (int a = 0; a < d; ++a) {
        Eigen::VectorXd c = Eigen::VectorXd::Zero(d);
        c[a] = r0;
        centers.push_back(c);
        centers.push_back(-c);
      }
      for (const auto& c : centers) {
        // micro site nearest to o + c/eps
        Coord cc = g.coords(o);
        for (int a = 0; a < d; ++a)
          cc[a] += static_cast<Index>(std::llround(c[a] / (eps * g.h)));
        const Index jc = g.index(cc);
        g.displacement(jc, o, disp);
        Eigen::VectorXd c_snap(d);
        for (int a = 0; a < d; ++a) c_snap[a] = eps * disp[a];

        double sum_pL = 0.0, sum_L = 0.0, vol = 0.0, sum_k = 0.0;
        const Ball part = make_ball(g, jc, r0 / eps);
        for (Index j : part.sites) {
          g.displacement(j, o, disp);
          for (int a = 0; a < d; ++a) xm[a] = eps * disp[a];
          sum_pL += p[j] * f.Lambda[j] * hd;
          sum_L += f.Lambda[j] * hd;
          vol += epsd * hd;
          sum_k += gaussian_kernel(target.Sigma, t, xm) * epsd * hd;
        }
        const double p_c = p[jc];
        const double k_c = gaussian_kernel(target.Sigma, t, c_snap);
        const double J = sum_pL - sum_k;
        double J1 = 0.0;
        for (Index j : part.sites) J1 += (p[j] - p_c) * f.Lambda[j] * hd;
        const double J2 = sum_L * (p_c - epsd * k_c / target.a_Lambda);
        const double J3 = k_c * (epsd * sum_L / target.a_Lambda - vol);
        double J4 = 0.0;
        for (Index j : part.sites) {
          g.displacement(j, o, disp);
          for (int a = 0; a < d; ++a) xm[a] = eps * disp[a];
          J4 += (k_c - gaussian_kernel(target.Sigma, t, xm)) * epsd * hd;
        }
        jmax[0] = std::max(jmax[0], std::abs(J1));
        jmax[1] = std::max(jmax[1], std::abs(J2));
        jmax[2] = std::max(jmax[2], std::abs(J3));
        jmax[3] = std::max(jmax[3], std::abs(J4));
        jexact = std::max(jexact, std::abs(J - (J1 + J2 + J3 + J4)));
      }
    }

    res.sup_error.push_back(sup_err);
    res.skip_reason.emplace_back("");
    res.J_max.push_back(jmax);
    res.J_exactness.push_back(jexact);
    res.mass_residual.push_back(mass_res);
  }

  // isotonic (nonincreasing along the descending-epsilon ladder) fit over
  // the rungs that ran
  std::vector<double> ran;
  for (double e : res.sup_error)
    if (std::isfinite(e)) ran.push_back(e);
  if (!ran.empty()) {
    auto fit = isotonic_nonincreasing(ran);
    res.isotonic_fit = fit;
    for (std::size_t i = 0; i < ran.size(); ++i)
      res.isotonic_residual = std::max(res.isotonic_residual, std::abs(fit[i] - ran[i]));
  }
  return res;
}

}  // namespace dhl
