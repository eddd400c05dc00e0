#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "dhl/env.hpp"
#include "dhl/grid.hpp"

namespace dhl {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;

/// Discrete weighted Dirichlet form. E is the sparse energy matrix
/// (E(u,v) = u^T E v, symmetric PSD, zero row sums); m holds the speed
/// weights m_i = Lambda_i h^d, so the generator is L = -M^{-1} E, which is
/// self-adjoint in the m-inner product.
struct FormMatrix {
  TorusGrid grid;
  SpMat E;
  Vec m;
  Vec Lambda;  // kept for weighted ball norms
  double discarded_offdiag_frobenius = 0.0;

  double energy(const Vec& u) const { return u.dot(E * u); }
};

/// Face conductances come from the arithmetic average of the two adjacent
/// cells' a projected on the face normal: c_f = h^{d-2} (a_kk(i)+a_kk(j))/2.
/// By default the off-diagonal entries of a are discarded (their Frobenius
/// norm is recorded); the resulting stencil is an M-matrix, which implicit
/// Euler needs for positivity. With cross_terms_d2 the d=2 mixed term
/// enters through signed diagonal-link conductances (a 9-point stencil):
/// 2 a_12 du/dx1 du/dx2 = a_12 [(d_{+}u)^2 - (d_{-}u)^2] along the two
/// lattice diagonals. Signed conductances can break the M-matrix property,
/// so this mode is for energy experiments, not Harnack audits.
inline FormMatrix assemble_form(const FieldSample& sample,
                                bool cross_terms_d2 = false) {
  const TorusGrid g = sample.grid();
  const Index n = g.sites();
  const int d = g.dim;
  if (static_cast<Index>(sample.lambda.size()) != n)
    throw std::invalid_argument("assemble_form: sample/grid size mismatch");
  if (cross_terms_d2 && d != 2)
    throw std::invalid_argument("assemble_form: cross terms only supported for d=2");

  FormMatrix f;
  f.grid = g;
  f.m.resize(n);
  f.Lambda.resize(n);
  const double hd = std::pow(g.h, d);
  for (Index i = 0; i < n; ++i) {
    f.Lambda[i] = sample.Lambda[i];
    f.m[i] = sample.Lambda[i] * hd;
  }

  const double scale = std::pow(g.h, d - 2);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(n) * (2 * d + 1));
  auto add_link = [&](Index i, Index j, double cond) {
    trip.emplace_back(i, i, cond);
    trip.emplace_back(j, j, cond);
    trip.emplace_back(i, j, -cond);
    trip.emplace_back(j, i, -cond);
  };
  for (Index i = 0; i < n; ++i) {
    for (int axis = 0; axis < d; ++axis) {
      const Index j = g.neighbor(i, axis, +1);
      add_link(i, j, scale * 0.5 * (sample.a(i, axis, axis) + sample.a(j, axis, axis)));
    }
    if (cross_terms_d2) {
      // one (+1,+1) and one (+1,-1) link per cell, each weighted by the
      // average a_12 of its endpoints; the difference of the two diagonal
      // energies reproduces the mixed term at the Riemann-sum level
      const Index jp = g.neighbor(g.neighbor(i, 0, +1), 1, +1);
      const Index jm = g.neighbor(g.neighbor(i, 0, +1), 1, -1);
      add_link(i, jp, scale * 0.25 * (sample.a(i, 1, 0) + sample.a(jp, 1, 0)));
      add_link(i, jm, -scale * 0.25 * (sample.a(i, 1, 0) + sample.a(jm, 1, 0)));
    }
  }
  f.E.resize(n, n);
  f.E.setFromTriplets(trip.begin(), trip.end());
  f.E.makeCompressed();

  double fro2 = 0.0;
  if (!cross_terms_d2) {
    for (Index c = 0; c < n; ++c)
      for (int r = 1; r < d; ++r)
        for (int cc = 0; cc < r; ++cc) {
          const double v = sample.a(c, r, cc);
          fro2 += 2.0 * v * v * hd;
        }
  }
  f.discarded_offdiag_frobenius = std::sqrt(fro2);
  return f;
}

enum class BallWeight { unweighted, Lambda };

/// Volume-normalized power mean over a ball:
///   ||u||_{r,B}        = ((1/|B|) sum_B |u|^r h^d)^{1/r}
///   ||u||_{r,B,Lambda} = ((1/|B|) sum_B |u|^r Lambda h^d)^{1/r}
/// Normalization uses the discrete volume (site count x h^d); r = inf gives
/// the max over the ball.
inline double ball_norm(const Vec& u, const Ball& ball, const FormMatrix& f,
                        double r, BallWeight w = BallWeight::unweighted) {
  if (ball.sites.empty()) throw std::invalid_argument("ball_norm: empty ball");
  if (!(r >= 1.0)) throw std::invalid_argument("ball_norm: r must be >= 1 or inf");
  if (!std::isfinite(r)) {
    double mx = 0.0;
    for (Index i : ball.sites) mx = std::max(mx, std::abs(u[i]));
    return mx;
  }
  const double hd = std::pow(f.grid.h, f.grid.dim);
  double acc = 0.0;
  for (Index i : ball.sites) {
    const double wi = (w == BallWeight::Lambda) ? f.Lambda[i] : 1.0;
    acc += std::pow(std::abs(u[i]), r) * wi * hd;
  }
  const double vol = ball.discrete_volume(f.grid);
  return std::pow(acc / vol, 1.0 / r);
}

/// Energy restricted to the ball: sum over faces with both endpoints inside.
inline double ball_energy(const Vec& u, const Ball& ball, const FormMatrix& f) {
  const TorusGrid& g = f.grid;
  std::unordered_map<Index, char> inside;
  inside.reserve(ball.sites.size() * 2);
  for (Index i : ball.sites) inside[i] = 1;
  const double scale = 1.0;  // conductances already carry h^{d-2}
  double acc = 0.0;
  for (Index i : ball.sites) {
    for (int axis = 0; axis < g.dim; ++axis) {
      const Index j = g.neighbor(i, axis, +1);
      if (!inside.count(j)) continue;
      const double cond = -f.E.coeff(i, j);
      const double du = u[i] - u[j];
      acc += scale * cond * du * du;
    }
  }
  return acc;
}

/// Weighted mean (u)_B^theta = sum_B u theta / sum_B theta with theta given
/// per site (pass ones for the plain mean).
inline double weighted_mean(const Vec& u, const Ball& ball, const Vec& theta) {
  double num = 0.0, den = 0.0;
  for (Index i : ball.sites) {
    num += u[i] * theta[i];
    den += theta[i];
  }
  if (den <= 0.0) throw std::invalid_argument("weighted_mean: zero total weight");
  return num / den;
}

/// Zero-Dirichlet restriction of the form to a ball: rows/columns outside
/// are removed, the diagonal keeps the full conductance sum, so the
/// restricted form is the energy of functions extended by zero.
struct BallRestriction {
  Ball ball;
  SpMat E;
  Vec m;
  Vec Lambda;
  TorusGrid grid;                 // grid of the parent torus
  std::vector<Index> sites;      // local -> global
  std::unordered_map<Index, Index> local;  // global -> local

  Vec restrict(const Vec& full) const {
    Vec v(static_cast<Index>(sites.size()));
    for (std::size_t k = 0; k < sites.size(); ++k) v[static_cast<Index>(k)] = full[sites[k]];
    return v;
  }
  Vec extend(const Vec& inner) const {
    Vec v = Vec::Zero(grid.sites());
    for (std::size_t k = 0; k < sites.size(); ++k) v[sites[k]] = inner[static_cast<Index>(k)];
    return v;
  }
};

inline BallRestriction restrict_dirichlet(const FormMatrix& f, Index center,
                                          double radius) {
  if (!(radius >= 2.0 * f.grid.h))
    throw std::invalid_argument("restrict_dirichlet: radius < 2h");
  BallRestriction r;
  r.grid = f.grid;
  r.ball = make_ball(f.grid, center, radius);
  if (static_cast<Index>(r.ball.sites.size()) == f.grid.sites())
    throw std::invalid_argument("restrict_dirichlet: ball covers the whole torus");
  r.sites = r.ball.sites;
  for (std::size_t k = 0; k < r.sites.size(); ++k)
    r.local[r.sites[k]] = static_cast<Index>(k);

  const Index nb = static_cast<Index>(r.sites.size());
  r.m.resize(nb);
  r.Lambda.resize(nb);
  for (Index k = 0; k < nb; ++k) {
    r.m[k] = f.m[r.sites[k]];
    r.Lambda[k] = f.Lambda[r.sites[k]];
  }
  std::vector<Eigen::Triplet<double>> trip;
  for (Index k = 0; k < nb; ++k) {
    const Index gi = r.sites[k];
    for (SpMat::InnerIterator it(f.E, gi); it; ++it) {
      auto found = r.local.find(it.row());
      if (it.row() == gi) {
        trip.emplace_back(k, k, it.value());
      } else if (found != r.local.end()) {
        trip.emplace_back(found->second, k, it.value());
      }
    }
  }
  r.E.resize(nb, nb);
  r.E.setFromTriplets(trip.begin(), trip.end());
  r.E.makeCompressed();
  return r;
}

/// Cutoff-weighted energy E_eta(u,u): edge sum weighted by the average of
/// eta^2 at the endpoints. eta == 1 recovers E(u,u), eta == 0 gives 0.
inline double cutoff_energy(const FormMatrix& f, const Vec& u, const Vec& eta) {
  const TorusGrid& g = f.grid;
  for (Index i = 0; i < eta.size(); ++i)
    if (eta[i] < -1e-14 || eta[i] > 1.0 + 1e-14)
      throw std::invalid_argument("cutoff_energy: eta out of [0,1]");
  double acc = 0.0;
  for (Index i = 0; i < g.sites(); ++i) {
    for (int axis = 0; axis < g.dim; ++axis) {
      const Index j = g.neighbor(i, axis, +1);
      const double cond = -f.E.coeff(i, j);
      const double w = 0.5 * (eta[i] * eta[i] + eta[j] * eta[j]);
      if (w == 0.0) continue;
      const double du = u[i] - u[j];
      acc += cond * w * du * du;
    }
  }
  return acc;
}

/// Canonical radial cutoff eta(z) = (1 - |x-z|/r)_+ on the ball B(x,r).
inline Vec radial_cutoff(const TorusGrid& g, Index center, double radius) {
  Vec eta = Vec::Zero(g.sites());
  const Ball b = make_ball(g, center, radius);
  for (Index i : b.sites) {
    const double t = 1.0 - g.distance(i, center) / radius;
    eta[i] = std::max(0.0, t);
  }
  return eta;
}

/// Discrete sup of |grad eta|: max face difference over h.
inline double cutoff_grad_sup(const FormMatrix& f, const Vec& eta) {
  const TorusGrid& g = f.grid;
  double mx = 0.0;
  for (Index i = 0; i < g.sites(); ++i)
    for (int axis = 0; axis < g.dim; ++axis) {
      const Index j = g.neighbor(i, axis, +1);
      mx = std::max(mx, std::abs(eta[i] - eta[j]) / g.h);
    }
  return mx;
}

/// Coordinate text export (row col value per line) for external checks.
inline void export_coordinate_text(const SpMat& E, std::ostream& os) {
  for (int k = 0; k < E.outerSize(); ++k)
    for (SpMat::InnerIterator it(E, k); it; ++it)
      os << it.row() << " " << it.col() << " " << it.value() << "\n";
}

}  // namespace dhl
