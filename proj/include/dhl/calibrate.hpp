#pragma once

#include <json.hpp>

#include "dhl/moser.hpp"
#include "dhl/runner.hpp"

namespace dhl {

/// Regenerates the frozen calibration data: the dimensional factors c(d)
/// per inequality (measured on the constant environment and padded by a
/// fixed margin), the log-level-set envelope (measured on a lognormal
/// batch), and the Hoelder envelope (c, theta) fitted on the constant
/// environment. The output is the checked-in data/calibration_d2.json.
inline nlohmann::json calibrate_d2(std::uint64_t seed = 2025, int trials = 200) {
  nlohmann::json out;
  out["version"] = "d2-v1";
  out["d"] = 2;
  out["calibrated_at"] = {{"exponents_p", 4.0}, {"exponents_q", 4.0},
                          {"grid", 64}, {"ball_radius", 12.0},
                          {"trials", trials}, {"seed", seed},
                          {"margin", 2.0}};

  // c(d) per inequality from the constant environment, margin 2x
  {
    EnvironmentSpec spec;
    spec.model = EnvModel::constant;
    spec.cells_per_side = 64;
    auto sample = generate_environment(spec);
    auto form = assemble_form(sample);
    auto exps = exponents(4.0, 4.0, 2);
    const Ball ball = make_ball(form.grid, detail::center_site(form.grid), 12.0);

    Calibration wide;  // audit needs some factor; the value is irrelevant here
    for (auto w : all_inequalities()) wide.inequality_factor[to_string(w)] = 1.0;
    wide.version = "bootstrap";

    nlohmann::json factors;
    for (auto w : all_inequalities()) {
      auto rep = audit_inequality(w, sample, form, ball, exps, trials, seed, wide);
      factors[to_string(w)] = 2.0 * rep.empirical_best / rep.constant_product;
    }
    out["inequality_factor"] = factors;
  }

  // log-level envelope from a lognormal kernel-column batch, margin 1.5x.
  // Kernel columns are the caloric family with genuinely wide log range;
  // smooth exp-field solutions never reach level 1.
  {
    EnvironmentSpec spec;
    spec.model = EnvModel::lognormal;
    spec.cells_per_side = 64;
    spec.seed = 7;
    spec.anisotropy = 2.0;
    auto sample = generate_environment(spec);
    auto form = assemble_form(sample);
    auto exps = exponents(4.0, 4.0, 2);
    const Index x = detail::center_site(form.grid);
    const double r = 8.0, tau = 1.0, top = tau * r * r;
    auto consts = constants_from_sample(sample, form, make_ball(form.grid, x, r), exps);
    const Ball origin_ring = make_ball(form.grid, x, 4.0);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const Index o = origin_ring.sites[(i * 7) % origin_ring.sites.size()];
      auto sol = caloric_from_kernel(form, o, 4.0, top);
      auto rep = log_level_audit(sol, form, x, 4.0 + top, r, tau, 0.5, 0.5,
                                 {1.0, 2.0, 4.0, 8.0}, consts.M_B_Lambda,
                                 consts.C_P_B_Lambda);
      worst = std::max(worst, rep.max_normalized);
    }
    out["log_level_envelope"] = 3.0 * worst;
    out["log_level_measured"] = worst;
  }

  // Hoelder envelope on the constant environment: v(r) ~ c (r/sqrt t)^theta t^{-d/2}
  {
    EnvironmentSpec spec;
    spec.model = EnvModel::constant;
    spec.cells_per_side = 256;
    spec.cell_size = 0.5;
    auto sample = generate_environment(spec);
    auto form = assemble_form(sample);
    const Index o = detail::center_site(form.grid);
    const double t = 4.0, eps = 0.25;
    auto col = kernel_column(form, o, t / (eps * eps));
    std::vector<double> rs = {0.5, 1.0, 2.0}, lv, lr;
    for (double r : rs) {
      lv.push_back(std::log(rescaled_oscillation(col, form.grid, o, r, eps)));
      lr.push_back(std::log(r / std::sqrt(t)));
    }
    // least squares line through (lr, lv)
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < rs.size(); ++i) {
      mx += lr[i];
      my += lv[i];
    }
    mx /= rs.size();
    my /= rs.size();
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < rs.size(); ++i) {
      sxx += (lr[i] - mx) * (lr[i] - mx);
      sxy += (lr[i] - mx) * (lv[i] - my);
    }
    const double theta = sxy / sxx;
    const double logc = my - theta * mx + 1.0 * std::log(t);  // + (d/2) log t
    out["holder_theta"] = theta;
    out["holder_c"] = 1.2 * std::exp(logc);
  }
  return out;
}

}  // namespace dhl
