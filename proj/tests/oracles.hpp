#pragma once

// Test-side oracles, independent of the library's computation paths:
// dense matrix-exponential kernels, naive-loop norms, closed-form moments,
// quadrature, and a two-sample Kolmogorov-Smirnov distance.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dhl/form.hpp"

namespace oracle {

// Dense heat kernel p_t(i,j) (density w.r.t. m) via symmetric eigendecomp of
// S = M^{-1/2} E M^{-1/2}: P(t) = M^{-1/2} exp(-tS) M^{-1/2}.
struct DenseKernel {
  Eigen::MatrixXd vecs;       // eigenvectors of S
  Eigen::VectorXd vals;       // eigenvalues of S
  Eigen::VectorXd m_invsqrt;

  DenseKernel(const dhl::SpMat& Esp, const Eigen::VectorXd& m) {
    const Eigen::MatrixXd E = Eigen::MatrixXd(Esp);
    m_invsqrt = m.cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd S =
        m_invsqrt.asDiagonal() * E * m_invsqrt.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    vecs = es.eigenvectors();
    vals = es.eigenvalues();
  }

  explicit DenseKernel(const dhl::FormMatrix& f) : DenseKernel(f.E, f.m) {}

  Eigen::MatrixXd kernel(double t) const {
    Eigen::VectorXd decay = (-t * vals.array()).exp();
    Eigen::MatrixXd core = vecs * decay.asDiagonal() * vecs.transpose();
    return m_invsqrt.asDiagonal() * core * m_invsqrt.asDiagonal();
  }

  // evolve a function u0 exactly: u(t) = kernel(t) * (m .* u0)
  Eigen::VectorXd evolve(const Eigen::VectorXd& u0, const Eigen::VectorXd& m,
                         double t) const {
    return kernel(t) * m.cwiseProduct(u0);
  }
};

// Straight-loop power mean over a site set, long double accumulation.
inline double naive_ball_norm(const Eigen::VectorXd& u,
                              const std::vector<dhl::Index>& sites, double hd,
                              double vol, double r,
                              const Eigen::VectorXd* weight) {
  long double acc = 0.0L;
  for (auto i : sites) {
    const long double w = weight ? (*weight)[i] : 1.0L;
    acc += std::pow((long double)std::abs(u[i]), (long double)r) * w * hd;
  }
  return static_cast<double>(std::pow(acc / vol, 1.0L / r));
}

// E[X^k] for X Pareto with tail index alpha and scale 1 (finite iff k < alpha).
inline double pareto_moment(double alpha, double k) { return alpha / (alpha - k); }

// Two-sample Kolmogorov-Smirnov distance.
inline double ks_distance(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double dmax = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j])
      ++i;
    else
      ++j;
    const double fa = static_cast<double>(i) / a.size();
    const double fb = static_cast<double>(j) / b.size();
    dmax = std::max(dmax, std::abs(fa - fb));
  }
  return dmax;
}

// Torus-periodized gaussian kernel sum_{k in Z^d} k_t^Sigma(x + L k), d = 2.
inline double periodized_gaussian_2d(const Eigen::MatrixXd& Sigma, double t,
                                     const Eigen::VectorXd& x, double L,
                                     int images = 3) {
  double acc = 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt(Sigma);
  double det = 1.0;
  for (int i = 0; i < 2; ++i) det *= llt.matrixL()(i, i);
  det *= det;
  const double norm = std::sqrt(std::pow(2.0 * M_PI * t, 2) * det);
  for (int kx = -images; kx <= images; ++kx)
    for (int ky = -images; ky <= images; ++ky) {
      Eigen::VectorXd y(2);
      y << x[0] + L * kx, x[1] + L * ky;
      acc += std::exp(-0.5 * y.dot(llt.solve(y)) / t) / norm;
    }
  return acc;
}

// Tensor Simpson quadrature of f over [-a,a]^2 with n panels per axis (n even).
template <typename F>
double simpson_2d(F f, double a, int n) {
  const double hstep = 2.0 * a / n;
  auto w1 = [n](int i) { return (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0); };
  double acc = 0.0;
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j)
      acc += w1(i) * w1(j) * f(-a + i * hstep, -a + j * hstep);
  return acc * hstep * hstep / 9.0;
}

}  // namespace oracle
