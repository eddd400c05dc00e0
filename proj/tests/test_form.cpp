#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <sstream>

#include "dhl/field_utils.hpp"
#include "dhl/form.hpp"
#include "oracles.hpp"

using namespace dhl;

namespace {

FieldSample constant_sample(Index n, double h = 1.0) {
  EnvironmentSpec spec;
  spec.model = EnvModel::constant;
  spec.cells_per_side = n;
  spec.cell_size = h;
  return generate_environment(spec);
}

FieldSample pareto_sample(Index n, std::uint64_t seed) {
  EnvironmentSpec spec;
  spec.model = EnvModel::iid_cell_pareto;
  spec.cells_per_side = n;
  spec.seed = seed;
  spec.anisotropy = 4.0;
  return generate_environment(spec);
}

}  // namespace

TEST_CASE("single-site indicator has graph-Laplacian energy") {
  auto s = constant_sample(8);
  auto f = assemble_form(s);
  Vec u = Vec::Zero(f.grid.sites());
  u[13] = 1.0;
  REQUIRE(f.energy(u) == Catch::Approx(4.0).epsilon(1e-14));  // 2d neighbors, unit conductance
}

TEST_CASE("constants have zero energy and the form has zero row sums") {
  auto s = pareto_sample(8, 2);
  auto f = assemble_form(s);
  Vec ones = Vec::Ones(f.grid.sites());
  REQUIRE(std::abs(f.energy(ones)) < 1e-12);
  Vec rows = f.E * ones;
  REQUIRE(rows.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sawtooth energy converges to |xi|^2 times volume") {
  double prev_err = 1e9;
  for (Index n : {16, 32, 64}) {
    auto s = constant_sample(n);
    auto f = assemble_form(s);
    const TorusGrid g = f.grid;
    // periodic sawtooth: slope +1 then -1 along axis 0
    Vec u(g.sites());
    for (Index i = 0; i < g.sites(); ++i) {
      const auto c = g.coords(i);
      const double x = static_cast<double>(c[0]);
      u[i] = x < n / 2 ? x : static_cast<double>(n) - x;
    }
    const double vol = std::pow(g.side_length(), g.dim);
    const double err = std::abs(f.energy(u) / vol - 1.0);
    REQUIRE(err < 5.0 / n);
    REQUIRE(err <= prev_err + 1e-12);
    prev_err = err;
  }
}

TEST_CASE("generator is self-adjoint in the m-inner product") {
  auto s = pareto_sample(16, 4);
  auto f = assemble_form(s);
  Vec u = gaussian_white(f.grid, 1);
  Vec v = gaussian_white(f.grid, 2);
  // <Lu, v>_m = -u^T E v = <u, Lv>_m by symmetry of E
  const double a = (f.E * u).dot(v);
  const double b = (f.E * v).dot(u);
  REQUIRE(std::abs(a - b) <= 1e-12 * std::max(std::abs(a), 1.0));
}

TEST_CASE("scaling a by c scales the energy by exactly c") {
  auto s = pareto_sample(8, 6);
  auto f1 = assemble_form(s);
  for (auto& v : s.a_lower) v *= 3.0;
  auto f3 = assemble_form(s);
  Vec u = gaussian_white(f1.grid, 3);
  REQUIRE(f3.energy(u) == Catch::Approx(3.0 * f1.energy(u)).epsilon(1e-13));
}

TEST_CASE("zero energy implies constant (connectivity)") {
  auto s = pareto_sample(8, 8);
  auto f = assemble_form(s);
  // smallest eigenvalue of the dense pencil (E, I) is simple at 0 with
  // constant eigenvector; second eigenvalue strictly positive
  Eigen::MatrixXd E = Eigen::MatrixXd(f.E);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(E);
  REQUIRE(es.eigenvalues()[0] < 1e-10);
  REQUIRE(es.eigenvalues()[1] > 1e-8);
}

TEST_CASE("ball norms match the naive-loop oracle") {
  auto s = pareto_sample(16, 5);
  auto f = assemble_form(s);
  const Ball b = make_ball(f.grid, 17, 4.5);
  Vec u = gaussian_white(f.grid, 77);
  const double hd = 1.0;
  const double vol = b.discrete_volume(f.grid);
  for (double r : {1.0, 2.0, 3.5}) {
    REQUIRE(ball_norm(u, b, f, r) ==
            Catch::Approx(oracle::naive_ball_norm(u, b.sites, hd, vol, r, nullptr))
                .epsilon(1e-12));
    REQUIRE(ball_norm(u, b, f, r, BallWeight::Lambda) ==
            Catch::Approx(oracle::naive_ball_norm(u, b.sites, hd, vol, r, &f.Lambda))
                .epsilon(1e-12));
  }
}

TEST_CASE("ball norm normalization and weighting") {
  auto s = pareto_sample(16, 9);
  auto f = assemble_form(s);
  const Ball b = make_ball(f.grid, 100, 5.0);
  Vec c = Vec::Constant(f.grid.sites(), 2.5);
  REQUIRE(ball_norm(c, b, f, 1.0) == Catch::Approx(2.5).epsilon(1e-14));
  REQUIRE(ball_norm(c, b, f, 3.0) == Catch::Approx(2.5).epsilon(1e-14));
  REQUIRE(ball_norm(c, b, f, kInf) == Catch::Approx(2.5).epsilon(1e-14));
  // u == 1 with Lambda weight reduces to the Lambda ball average
  Vec ones = Vec::Ones(f.grid.sites());
  double mean_L = 0.0;
  for (Index i : b.sites) mean_L += f.Lambda[i];
  mean_L /= static_cast<double>(b.sites.size());
  REQUIRE(ball_norm(ones, b, f, 1.0, BallWeight::Lambda) ==
          Catch::Approx(mean_L).epsilon(1e-13));
}

TEST_CASE("dirichlet restriction agrees with the full form on interior data") {
  auto s = pareto_sample(16, 12);
  auto f = assemble_form(s);
  auto r = restrict_dirichlet(f, 34, 5.0);
  // function supported strictly inside the ball
  Vec u = Vec::Zero(f.grid.sites());
  for (Index i : r.ball.sites)
    if (f.grid.distance(i, r.ball.center) < 3.0) u[i] = std::sin(0.37 * i);
  Vec ui = r.restrict(u);
  REQUIRE(ui.dot(r.E * ui) == Catch::Approx(f.energy(u)).epsilon(1e-12));

  // indicator of one interior site
  Vec e = Vec::Zero(f.grid.sites());
  e[r.ball.center] = 1.0;
  Vec ei = r.restrict(e);
  REQUIRE(ei.dot(r.E * ei) == Catch::Approx(f.energy(e)).epsilon(1e-12));
}

TEST_CASE("restricted generator is strictly positive definite") {
  auto s = constant_sample(16);
  auto f = assemble_form(s);
  auto r = restrict_dirichlet(f, 0, 4.0);  // radius N h / 4
  Eigen::MatrixXd E = Eigen::MatrixXd(r.E);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(E);
  REQUIRE(es.eigenvalues()[0] > 1e-8);  // killed boundary removes the kernel
}

TEST_CASE("restriction rejects degenerate requests") {
  auto s = constant_sample(8);
  auto f = assemble_form(s);
  REQUIRE_THROWS(restrict_dirichlet(f, 0, 1.0));    // radius < 2h
  REQUIRE_THROWS(restrict_dirichlet(f, 0, 100.0));  // covers the torus
}

TEST_CASE("cutoff energy endpoints") {
  auto s = pareto_sample(8, 14);
  auto f = assemble_form(s);
  Vec u = gaussian_white(f.grid, 21);
  Vec ones = Vec::Ones(f.grid.sites());
  Vec zeros = Vec::Zero(f.grid.sites());
  REQUIRE(cutoff_energy(f, u, ones) == Catch::Approx(f.energy(u)).epsilon(1e-12));
  REQUIRE(cutoff_energy(f, u, zeros) == 0.0);
  Vec bad = ones;
  bad[3] = 1.5;
  REQUIRE_THROWS(cutoff_energy(f, u, bad));
}

TEST_CASE("product rule bound holds for random pairs") {
  auto s = pareto_sample(16, 16);
  auto f = assemble_form(s);
  const Index center = 120;
  const Ball b = make_ball(f.grid, center, 6.0);
  const Vec eta = radial_cutoff(f.grid, center, 6.0);
  const double grad = cutoff_grad_sup(f, eta);
  const double hd = 1.0;
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Vec u = gaussian_white(f.grid, 1000 + trial);
    smooth121(f.grid, u, 2);
    Vec etau = eta.cwiseProduct(u);
    double l2L = 0.0;  // unnormalized ||1_B u||^2_{2,Lambda}
    for (Index i : b.sites) l2L += u[i] * u[i] * f.Lambda[i] * hd;
    const double lhs = f.energy(etau);
    const double rhs = 2.0 * cutoff_energy(f, u, eta) + 2.0 * grad * grad * l2L;
    REQUIRE(lhs <= rhs * (1.0 + 1e-12));
    ++checked;
  }
  REQUIRE(checked == 100);
}

TEST_CASE("radial cutoff gradient matches the Lipschitz constant") {
  auto s = constant_sample(32);
  auto f = assemble_form(s);
  const double r = 8.0;
  const Vec eta = radial_cutoff(f.grid, 0, r);
  const double grad = cutoff_grad_sup(f, eta);
  // analytic Lipschitz constant 1/r, resolved within one grid cell
  REQUIRE(grad >= 1.0 / r - 1e-9);
  REQUIRE(grad <= 1.0 / (r - f.grid.h) + 1e-9);
}

TEST_CASE("cross-term stencil converges to the full anisotropic energy") {
  // constant full matrix a: energy of a smooth plane wave must approach
  // (k.a k) |sin'|^2-average; the diagonal-projection form misses the
  // mixed part, the 9-point form recovers it
  double prev_err = 1e9;
  for (Index n : {32, 64, 128}) {
    auto s = constant_sample(n);
    for (Index c = 0; c < s.grid().sites(); ++c) s.a_lower[c * 3 + 1] = 0.4;
    s.lambda.assign(s.lambda.size(), 0.6);
    s.Lambda.assign(s.Lambda.size(), 1.4);
    auto f = assemble_form(s, /*cross_terms_d2=*/true);
    REQUIRE(f.discarded_offdiag_frobenius == 0.0);
    const TorusGrid g = f.grid;
    const double k1 = 2.0 * M_PI / g.side_length();
    const double k2 = 2.0 * k1;
    Vec u(g.sites());
    for (Index i = 0; i < g.sites(); ++i) {
      const auto co = g.coords(i);
      u[i] = std::sin(k1 * co[0] * g.h + k2 * co[1] * g.h);
    }
    const double vol = std::pow(g.side_length(), 2);
    const double kak = k1 * k1 + 2.0 * 0.4 * k1 * k2 + k2 * k2;
    const double err = std::abs(f.energy(u) / (0.5 * vol * kak) - 1.0);
    REQUIRE(err < 0.02);
    REQUIRE(err < prev_err + 1e-12);
    prev_err = err;

    Vec ones = Vec::Ones(g.sites());
    REQUIRE(std::abs(f.energy(ones)) < 1e-10);  // zero row sums survive
  }
}

TEST_CASE("cross terms are rejected outside d=2") {
  EnvironmentSpec spec;
  spec.model = EnvModel::constant;
  spec.dimension = 3;
  spec.cells_per_side = 4;
  auto s = generate_environment(spec);
  REQUIRE_THROWS(assemble_form(s, true));
}

TEST_CASE("coordinate export emits symmetric triplets") {
  auto s = constant_sample(4);
  auto f = assemble_form(s);
  std::ostringstream os;
  export_coordinate_text(f.E, os);
  REQUIRE(os.str().find(' ') != std::string::npos);
  // parse back and verify symmetry
  std::istringstream is(os.str());
  std::map<std::pair<long, long>, double> entries;
  long rr, cc;
  double v;
  while (is >> rr >> cc >> v) entries[{rr, cc}] = v;
  for (auto& [key, val] : entries)
    REQUIRE(entries.at({key.second, key.first}) == Catch::Approx(val));
}
