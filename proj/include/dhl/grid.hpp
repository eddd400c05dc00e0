#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace dhl {

using Index = std::int64_t;

/// Maximum spatial dimension supported by the grid machinery.
inline constexpr int kMaxDim = 4;

using Coord = std::array<Index, kMaxDim>;

/// Volume of the unit ball in R^d.
inline double unit_ball_volume(int d) {
  return std::pow(3.14159265358979323846, 0.5 * d) /
         std::tgamma(0.5 * d + 1.0);
}

/// Periodic lattice of N^d cell centers with spacing h. Sites are flat
/// indices in row-major order; all distances are torus distances.
struct TorusGrid {
  int dim = 2;
  Index n = 0;       // cells per side
  double h = 1.0;    // cell size

  TorusGrid() = default;
  TorusGrid(int dim_, Index n_, double h_) : dim(dim_), n(n_), h(h_) {
    if (dim < 2 || dim > kMaxDim) throw std::invalid_argument("grid: dim out of range");
    if (n < 2) throw std::invalid_argument("grid: n < 2");
    if (!(h > 0.0)) throw std::invalid_argument("grid: h <= 0");
  }

  Index sites() const {
    Index s = 1;
    for (int a = 0; a < dim; ++a) s *= n;
    return s;
  }

  double side_length() const { return static_cast<double>(n) * h; }

  Coord coords(Index site) const {
    Coord c{};
    for (int a = dim - 1; a >= 0; --a) {
      c[a] = site % n;
      site /= n;
    }
    return c;
  }

  Index index(const Coord& c) const {
    Index site = 0;
    for (int a = 0; a < dim; ++a) {
      Index w = c[a] % n;
      if (w < 0) w += n;
      site = site * n + w;
    }
    return site;
  }

  /// Neighbor of `site` one step along `axis` in direction `dir` (+1/-1).
  Index neighbor(Index site, int axis, int dir) const {
    Coord c = coords(site);
    c[axis] += dir;
    return index(c);
  }

  /// Per-axis displacement from b to a, wrapped into (-L/2, L/2].
  void displacement(Index a, Index b, double* out) const {
    const Coord ca = coords(a);
    const Coord cb = coords(b);
    const double L = side_length();
    for (int ax = 0; ax < dim; ++ax) {
      double d = static_cast<double>(ca[ax] - cb[ax]) * h;
      while (d > 0.5 * L) d -= L;
      while (d <= -0.5 * L) d += L;
      out[ax] = d;
    }
  }

  double distance(Index a, Index b) const {
    double d[kMaxDim];
    displacement(a, b, d);
    double s = 0.0;
    for (int ax = 0; ax < dim; ++ax) s += d[ax] * d[ax];
    return std::sqrt(s);
  }
};

/// Discrete Euclidean ball in the torus metric: all sites within `radius`
/// of the center site. Sites are sorted, so iteration order is reproducible.
struct Ball {
  Index center = 0;
  double radius = 0.0;
  std::vector<Index> sites;

  double discrete_volume(const TorusGrid& g) const {
    return static_cast<double>(sites.size()) * std::pow(g.h, g.dim);
  }
  double analytic_volume(int dim) const {
    return unit_ball_volume(dim) * std::pow(radius, dim);
  }
};

inline Ball make_ball(const TorusGrid& g, Index center, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("ball: radius <= 0");
  Ball b;
  b.center = center;
  b.radius = radius;
  const Index reach = static_cast<Index>(std::floor(radius / g.h + 1e-12));
  const Coord cc = g.coords(center);
  const bool whole_axis = (2 * reach + 1 >= g.n);

  // enumerate a bounding box (or the whole axis when the box wraps onto
  // itself) and keep sites within the torus distance
  std::vector<Index> offs;
  if (whole_axis) {
    for (Index k = 0; k < g.n; ++k) offs.push_back(k);
  } else {
    for (Index k = -reach; k <= reach; ++k) offs.push_back(k);
  }
  const std::size_t m = offs.size();
  std::size_t total = 1;
  for (int a = 0; a < g.dim; ++a) total *= m;

  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    Coord c{};
    for (int a = g.dim - 1; a >= 0; --a) {
      c[a] = whole_axis ? offs[rem % m] : cc[a] + offs[rem % m];
      rem /= m;
    }
    const Index site = g.index(c);
    if (g.distance(site, center) <= radius + 1e-12) b.sites.push_back(site);
  }
  std::sort(b.sites.begin(), b.sites.end());
  b.sites.erase(std::unique(b.sites.begin(), b.sites.end()), b.sites.end());
  if (b.sites.empty()) throw std::invalid_argument("ball: no sites inside radius");
  return b;
}

}  // namespace dhl
