#pragma once

#include <Eigen/Dense>

#include "dhl/grid.hpp"
#include "dhl/rng.hpp"

namespace dhl {

/// Gaussian white noise per site, drawn from per-site hashed streams so the
/// result is independent of traversal order.
inline Eigen::VectorXd gaussian_white(const TorusGrid& g, std::uint64_t seed) {
  Eigen::VectorXd v(g.sites());
  for (Index i = 0; i < g.sites(); ++i) {
    Rng r(seed, static_cast<std::uint64_t>(i));
    v[i] = r.normal();
  }
  return v;
}

/// [1,2,1]/4 convolution along every axis, `passes` times; the standard
/// cheap bump of width ~3h used for audit trial functions.
inline void smooth121(const TorusGrid& g, Eigen::VectorXd& v, int passes = 1) {
  Eigen::VectorXd tmp(v.size());
  for (int pass = 0; pass < passes; ++pass) {
    for (int axis = 0; axis < g.dim; ++axis) {
      for (Index i = 0; i < g.sites(); ++i) {
        const Index l = g.neighbor(i, axis, -1);
        const Index r = g.neighbor(i, axis, +1);
        tmp[i] = 0.25 * v[l] + 0.5 * v[i] + 0.25 * v[r];
      }
      v.swap(tmp);
    }
  }
}

}  // namespace dhl
