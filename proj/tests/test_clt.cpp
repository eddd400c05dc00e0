#include <catch2/catch_amalgamated.hpp>

#include "dhl/clt.hpp"
#include "oracles.hpp"

using namespace dhl;

namespace {

FieldSample make_env(EnvModel model, Index n, std::uint64_t seed = 1,
                     double h = 1.0, double anisotropy = 2.0) {
  EnvironmentSpec spec;
  spec.model = model;
  spec.cells_per_side = n;
  spec.cell_size = h;
  spec.seed = seed;
  spec.anisotropy = model == EnvModel::constant ? 1.0 : anisotropy;
  return generate_environment(spec);
}

}  // namespace

TEST_CASE("gaussian kernel closed-form values") {
  Eigen::MatrixXd I2 = Eigen::MatrixXd::Identity(2, 2);
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
  REQUIRE(gaussian_kernel(I2, 1.0, zero) == Catch::Approx(1.0 / (2.0 * M_PI)).epsilon(1e-12));
  REQUIRE(gaussian_kernel(4.0 * I2, 1.0, zero) ==
          Catch::Approx(1.0 / (8.0 * M_PI)).epsilon(1e-12));
  Eigen::MatrixXd singular = Eigen::MatrixXd::Zero(2, 2);
  REQUIRE_THROWS(gaussian_kernel(singular, 1.0, zero));
}

TEST_CASE("gaussian kernel integrates to one") {
  Eigen::MatrixXd Sigma(2, 2);
  Sigma << 2.0, 0.3, 0.3, 1.5;
  const double t = 0.8;
  const double sd = std::sqrt(2.3 * t);
  auto f = [&](double x, double y) {
    Eigen::VectorXd v(2);
    v << x, y;
    return gaussian_kernel(Sigma, t, v);
  };
  REQUIRE(oracle::simpson_2d(f, 6.0 * sd, 400) == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("corrector vanishes on the constant environment") {
  auto s = make_env(EnvModel::constant, 32);
  auto f = assemble_form(s);
  auto corr = solve_corrector(s, f);
  for (int e = 0; e < 2; ++e) REQUIRE(corr.chi[e].cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE((corr.a_hom - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("layered medium homogenizes to the harmonic mean") {
  auto s = make_env(EnvModel::layered, 64);
  auto f = assemble_form(s);
  auto corr = solve_corrector(s, f);
  // closed form: harmonic mean of a_11 across the layering, arithmetic in x2
  double harm = 0.0, arith = 0.0;
  const Index n = f.grid.sites();
  for (Index c = 0; c < n; ++c) {
    harm += 1.0 / s.a(c, 0, 0);
    arith += s.a(c, 1, 1);
  }
  harm = static_cast<double>(n) / harm;
  arith /= static_cast<double>(n);
  REQUIRE(corr.a_hom(0, 0) == Catch::Approx(harm).epsilon(0.01));
  REQUIRE(corr.a_hom(1, 1) == Catch::Approx(arith).epsilon(1e-10));
  REQUIRE(std::abs(corr.a_hom(0, 1)) < 1e-10);
}

TEST_CASE("homogenized matrix sits between the Voigt and Reuss bounds") {
  auto s = make_env(EnvModel::iid_cell_pareto, 32, 19, 1.0, 4.0);
  auto f = assemble_form(s);
  auto corr = solve_corrector(s, f);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr.a_hom);
  double harm_lambda = 0.0, arith_Lambda = 0.0;
  const Index n = f.grid.sites();
  for (Index c = 0; c < n; ++c) {
    harm_lambda += 1.0 / s.lambda[c];
    arith_Lambda += s.Lambda[c];
  }
  harm_lambda = static_cast<double>(n) / harm_lambda;
  arith_Lambda /= static_cast<double>(n);
  REQUIRE(es.eigenvalues().minCoeff() >= harm_lambda * (1.0 - 1e-10));
  REQUIRE(es.eigenvalues().maxCoeff() <= arith_Lambda * (1.0 + 1e-10));
  REQUIRE(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("second-moment estimator recovers 2I on the constant environment") {
  auto s = make_env(EnvModel::constant, 128);
  auto f = assemble_form(s);
  const Index o = f.grid.index({64, 64, 0, 0});
  for (double t : {0.5, 2.0}) {
    auto target = sigma_second_moment(s, f, o, t);
    REQUIRE(target.Sigma(0, 0) == Catch::Approx(2.0).epsilon(0.02));
    REQUIRE(target.Sigma(1, 1) == Catch::Approx(2.0).epsilon(0.02));
    REQUIRE(std::abs(target.Sigma(0, 1)) < 0.02);
    REQUIRE(target.a_Lambda == 1.0);
  }
}

TEST_CASE("second-moment estimator is stable between t and 2t") {
  auto s = make_env(EnvModel::lognormal, 64, 23);
  auto f = assemble_form(s);
  const Index o = f.grid.index({32, 32, 0, 0});
  auto t1 = sigma_second_moment(s, f, o, 8.0);
  auto t2 = sigma_second_moment(s, f, o, 16.0);
  REQUIRE(sigma_disagreement(t1, t2) < 0.05);
}

TEST_CASE("layered environment has negligible off-diagonal Sigma") {
  auto s = make_env(EnvModel::layered, 64);
  auto f = assemble_form(s);
  const Index o = f.grid.index({32, 32, 0, 0});
  auto target = sigma_second_moment(s, f, o, 8.0);
  REQUIRE(std::abs(target.Sigma(0, 1)) < 0.02 * target.Sigma.trace());
}

TEST_CASE("corrector Sigma matches the trivial case and scales exactly in Lambda") {
  auto s = make_env(EnvModel::constant, 32);
  auto f = assemble_form(s);
  auto corr = solve_corrector(s, f);
  auto target = sigma_from_corrector(corr, moment_report(s, 4.0, 4.0).mean_Lambda);
  REQUIRE((target.Sigma - 2.0 * Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <
          1e-10);

  // multiplying Lambda by c divides Sigma by c: a_hom is Lambda-free and
  // a_Lambda scales linearly
  auto scaled = s;
  for (auto& v : scaled.Lambda) v *= 5.0;
  auto fs = assemble_form(scaled);
  auto corr2 = solve_corrector(scaled, fs);
  auto target2 = sigma_from_corrector(corr2, moment_report(scaled, 4.0, 4.0).mean_Lambda);
  REQUIRE((target2.Sigma * 5.0 - target.Sigma).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("the two Sigma estimators agree on the lognormal environment") {
  auto s = make_env(EnvModel::lognormal, 128, 7);
  auto f = assemble_form(s);
  const double a_Lambda = moment_report(s, 4.0, 4.0).mean_Lambda;
  auto corr = sigma_from_corrector(solve_corrector(s, f), a_Lambda);
  const Index o = f.grid.index({64, 64, 0, 0});
  auto mom = sigma_second_moment(s, f, o, 24.0);
  REQUIRE(sigma_disagreement(corr, mom) < 0.10);
}

TEST_CASE("isotonic fit pools adjacent violators") {
  auto fit = isotonic_nonincreasing({1.0, 2.0, 0.5});
  REQUIRE(fit[0] == Catch::Approx(1.5));
  REQUIRE(fit[1] == Catch::Approx(1.5));
  REQUIRE(fit[2] == Catch::Approx(0.5));
  auto mono = isotonic_nonincreasing({4.0, 3.0, 2.0, 1.0});
  REQUIRE(mono == std::vector<double>{4.0, 3.0, 2.0, 1.0});
}

TEST_CASE("clt sweep on the constant environment converges to the gaussian") {
  auto s = make_env(EnvModel::constant, 128);
  auto f = assemble_form(s);
  const Index o = f.grid.index({64, 64, 0, 0});
  CltTarget target;
  target.Sigma = 2.0 * Eigen::MatrixXd::Identity(2, 2);
  target.a_Lambda = 1.0;
  target.method = "exact";
  auto res = clt_sweep(s, f, o, {1.0, 0.5, 0.25}, {0.5, 1.25, 2.0}, 2.0, target);
  for (const auto& reason : res.skip_reason) REQUIRE(reason.empty());
  for (double m : res.mass_residual) REQUIRE(m < 1e-8);
  for (double j : res.J_exactness) REQUIRE(j < 1e-10);
  REQUIRE(res.sup_error.back() < res.sup_error.front());
  REQUIRE(res.isotonic_residual < 0.05 * res.sup_error.front());
}

TEST_CASE("clt sweep skips rungs that violate the torus guard") {
  auto s = make_env(EnvModel::constant, 16);
  auto f = assemble_form(s);
  CltTarget target;
  target.Sigma = 2.0 * Eigen::MatrixXd::Identity(2, 2);
  target.a_Lambda = 1.0;
  auto res = clt_sweep(s, f, 0, {1.0, 0.125}, {0.25, 0.5}, 1.0, target);
  REQUIRE(res.skip_reason[0].empty());
  REQUIRE_FALSE(res.skip_reason[1].empty());
  REQUIRE(std::isnan(res.sup_error[1]));
}
