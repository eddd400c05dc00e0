#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "dhl/env.hpp"
#include "oracles.hpp"

using namespace dhl;

TEST_CASE("constant environment is the identity medium") {
  EnvironmentSpec spec;
  spec.model = EnvModel::constant;
  spec.dimension = 2;
  spec.cells_per_side = 8;
  auto s = generate_environment(spec);
  for (Index c = 0; c < 64; ++c) {
    REQUIRE(s.lambda[c] == 1.0);
    REQUIRE(s.Lambda[c] == 1.0);
    REQUIRE(s.a(c, 0, 0) == 1.0);
    REQUIRE(s.a(c, 1, 1) == 1.0);
    REQUIRE(s.a(c, 0, 1) == 0.0);
  }
}

TEST_CASE("spec validation rejects bad parameters") {
  EnvironmentSpec spec;
  spec.dimension = 1;
  spec.cells_per_side = 3;
  spec.cell_size = -1.0;
  REQUIRE_THROWS_AS(generate_environment(spec), ValidationError);
  try {
    generate_environment(spec);
  } catch (const ValidationError& e) {
    REQUIRE(e.problems().size() >= 3);  // all problems reported, not just the first
  }
}

TEST_CASE("generation is a pure function of spec and seed") {
  EnvironmentSpec spec;
  spec.model = EnvModel::iid_cell_pareto;
  spec.cells_per_side = 16;
  spec.seed = 42;
  auto a = generate_environment(spec);
  auto b = generate_environment(spec);
  REQUIRE(a.lambda == b.lambda);
  REQUIRE(a.Lambda == b.Lambda);
  REQUIRE(a.a_lower == b.a_lower);
  spec.seed = 43;
  auto c = generate_environment(spec);
  REQUIRE(a.lambda != c.lambda);
}

TEST_CASE("field sample satisfies the ellipticity sandwich") {
  EnvironmentSpec spec;
  spec.model = EnvModel::iid_cell_pareto;
  spec.cells_per_side = 32;
  spec.anisotropy = 4.0;
  spec.seed = 7;
  auto s = generate_environment(spec);
  Rng dir_rng(99);
  for (Index c = 0; c < s.grid().sites(); ++c) {
    REQUIRE(s.lambda[c] > 0.0);
    REQUIRE(s.lambda[c] <= s.Lambda[c]);
    // random directions: lambda |xi|^2 <= xi.a xi <= Lambda |xi|^2
    for (int k = 0; k < 3; ++k) {
      double xi[2] = {dir_rng.normal(), dir_rng.normal()};
      const double n2 = xi[0] * xi[0] + xi[1] * xi[1];
      const double quad = s.a(c, 0, 0) * xi[0] * xi[0] +
                          2.0 * s.a(c, 1, 0) * xi[0] * xi[1] +
                          s.a(c, 1, 1) * xi[1] * xi[1];
      REQUIRE(quad >= s.lambda[c] * n2 * (1.0 - 1e-12));
      REQUIRE(quad <= s.Lambda[c] * n2 * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("pareto moments match the closed form within sampling error") {
  EnvironmentSpec spec;
  spec.model = EnvModel::iid_cell_pareto;
  spec.cells_per_side = 256;
  spec.tail_lambda_inv = 6.0;
  spec.tail_Lambda = 6.0;
  spec.seed = 1;
  auto s = generate_environment(spec);
  auto rep = moment_report(s, 4.0, 4.0);
  REQUIRE(rep.condition_ok);  // 1/4 + 1/4 < 1 = 2/d
  // E[Lambda^4] = 6/(6-4) = 3 for the raw Pareto; the lambda-coupling only
  // touches cells with Lambda < lambda <= 1, which is a null event here
  const double expect = oracle::pareto_moment(6.0, 4.0);
  REQUIRE(rep.mean_Lambda_p < 3.0 * expect);
  REQUIRE(rep.mean_Lambda_p > expect / 3.0);
  const double expect_l = oracle::pareto_moment(6.0, 4.0);
  REQUIRE(rep.mean_lambda_inv_q < 3.0 * expect_l);
  REQUIRE(rep.mean_lambda_inv_q > expect_l / 3.0);
}

TEST_CASE("empirical moments converge as N doubles") {
  EnvironmentSpec spec;
  spec.model = EnvModel::iid_cell_pareto;
  spec.tail_lambda_inv = 6.0;
  spec.tail_Lambda = 6.0;
  spec.seed = 5;
  spec.cells_per_side = 128;
  auto r128 = moment_report(generate_environment(spec), 4.0, 4.0);
  spec.cells_per_side = 256;
  auto r256 = moment_report(generate_environment(spec), 4.0, 4.0);
  const double expect = oracle::pareto_moment(6.0, 4.0);
  REQUIRE(std::abs(r256.mean_lambda_inv_q - expect) <
          std::abs(r128.mean_lambda_inv_q - expect) + 0.5 * expect);
}

TEST_CASE("trap counterexample moments diverge with N for admissible (p,q)") {
  EnvironmentSpec spec;
  spec.model = EnvModel::trap_counterexample;
  for (auto pq : {std::pair{3.0, 3.0}, std::pair{4.0, 8.0}}) {
    spec.cells_per_side = 64;
    auto r64 = moment_report(generate_environment(spec), pq.first, pq.second);
    spec.cells_per_side = 128;
    auto r128 = moment_report(generate_environment(spec), pq.first, pq.second);
    spec.cells_per_side = 256;
    auto r256 = moment_report(generate_environment(spec), pq.first, pq.second);
    REQUIRE(r128.mean_Lambda_p > 1.5 * r64.mean_Lambda_p);
    REQUIRE(r256.mean_Lambda_p > 1.5 * r128.mean_Lambda_p);
    REQUIRE(r128.mean_lambda_inv_q > 1.5 * r64.mean_lambda_inv_q);
  }
}

TEST_CASE("moment report on the constant environment") {
  EnvironmentSpec spec;
  spec.cells_per_side = 8;
  auto s = generate_environment(spec);
  auto r = moment_report(s, 2.0, 2.0);
  REQUIRE(r.mean_Lambda_p == 1.0);
  REQUIRE(r.mean_lambda_inv_q == 1.0);
  // 1/2 + 1/2 = 1 = 2/d sits on the boundary; the condition is strict
  REQUIRE_FALSE(r.condition_ok);
  REQUIRE(moment_report(s, 4.0, 4.0).condition_ok);
  auto rinf = moment_report(s, kInf, kInf);
  REQUIRE(rinf.mean_Lambda_p == 1.0);
  REQUIRE(rinf.mean_lambda_inv_q == 1.0);
  REQUIRE(rinf.condition_value == 0.0);
}

TEST_CASE("boundary case 1/p + 1/q = 2/d is not admissible") {
  EnvironmentSpec spec;
  spec.cells_per_side = 8;
  auto s = generate_environment(spec);
  auto r = moment_report(s, 2.0, 2.0);  // d = 2: 1/2 + 1/2 = 1 = 2/d
  REQUIRE(r.condition_value == 1.0);
  REQUIRE(r.condition_ok == false);
  REQUIRE(moment_report(s, 3.0, 3.0).condition_ok);  // 2/3 < 1
}

TEST_CASE("stationarity proxy: sub-box KS distance below 0.05") {
  EnvironmentSpec spec;
  spec.model = EnvModel::iid_cell_pareto;
  spec.cells_per_side = 256;
  spec.seed = 11;
  auto s = generate_environment(spec);
  const TorusGrid g = s.grid();
  std::vector<double> all(s.lambda.begin(), s.lambda.end());
  // 64x64 sub-box at an arbitrary offset
  std::vector<double> sub;
  for (Index i = 40; i < 104; ++i)
    for (Index j = 17; j < 81; ++j) sub.push_back(s.lambda[g.index({i, j, 0, 0})]);
  REQUIRE(oracle::ks_distance(all, sub) < 0.05);
}

TEST_CASE("anisotropy coupling never decreases cellwise Lambda/lambda") {
  EnvironmentSpec spec;
  spec.model = EnvModel::iid_cell_pareto;
  spec.cells_per_side = 32;
  spec.seed = 3;
  spec.anisotropy = 1.0;
  auto lo = generate_environment(spec);
  spec.anisotropy = 8.0;
  auto hi = generate_environment(spec);
  for (Index c = 0; c < lo.grid().sites(); ++c) {
    REQUIRE(hi.Lambda[c] / hi.lambda[c] >= lo.Lambda[c] / lo.lambda[c] - 1e-12);
  }
}

TEST_CASE("binary round-trip preserves the sample bit for bit") {
  EnvironmentSpec spec;
  spec.model = EnvModel::lognormal;
  spec.cells_per_side = 16;
  spec.seed = 9;
  spec.anisotropy = 2.0;
  auto s = generate_environment(spec);
  const std::string path =
      (std::filesystem::temp_directory_path() / "dhl_test_sample.bin").string();
  save_sample(s, path);
  auto t = load_sample(path);
  REQUIRE(t.spec.model == s.spec.model);
  REQUIRE(t.spec.anisotropy == s.spec.anisotropy);
  REQUIRE(t.lambda == s.lambda);
  REQUIRE(t.Lambda == s.Lambda);
  REQUIRE(t.a_lower == s.a_lower);
  std::remove(path.c_str());
  std::remove((path + ".json").c_str());
}
