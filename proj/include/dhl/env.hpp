#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dhl/grid.hpp"
#include "dhl/rng.hpp"

namespace dhl {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Thrown when a spec or config fails validation; carries every problem found.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::vector<std::string>& problems)
      : std::runtime_error(join(problems)), problems_(problems) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "validation failed:";
    for (const auto& msg : p) s += "\n  - " + msg;
    return s;
  }
  std::vector<std::string> problems_;
};

enum class EnvModel : std::uint32_t {
  constant = 0,
  iid_cell_pareto = 1,
  lognormal = 2,
  trap_counterexample = 3,
  layered = 4,
};

inline const char* to_string(EnvModel m) {
  switch (m) {
    case EnvModel::constant: return "constant";
    case EnvModel::iid_cell_pareto: return "iid-cell-pareto";
    case EnvModel::lognormal: return "lognormal";
    case EnvModel::trap_counterexample: return "trap-counterexample";
    case EnvModel::layered: return "layered";
  }
  return "?";
}

inline EnvModel env_model_from_string(const std::string& s) {
  if (s == "constant") return EnvModel::constant;
  if (s == "iid-cell-pareto") return EnvModel::iid_cell_pareto;
  if (s == "lognormal") return EnvModel::lognormal;
  if (s == "trap-counterexample") return EnvModel::trap_counterexample;
  if (s == "layered") return EnvModel::layered;
  throw std::invalid_argument("unknown environment model: " + s);
}

/// Parameters of a synthetic coefficient field. The field is piecewise
/// constant on the cells of an N^d torus lattice; cells are i.i.d. for the
/// pareto model, short-range correlated for lognormal, and deterministic
/// radial for the trap counterexample.
struct EnvironmentSpec {
  int dimension = 2;
  Index cells_per_side = 64;
  double cell_size = 1.0;
  EnvModel model = EnvModel::constant;
  double tail_lambda_inv = 6.0;  // Pareto tail index of lambda^{-1}
  double tail_Lambda = 6.0;      // Pareto tail index of Lambda
  double anisotropy = 1.0;       // per-cell eigenvalue spread of a
  std::uint64_t seed = 0;

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    if (dimension < 2) errs.push_back("dimension must be >= 2");
    if (dimension > kMaxDim) errs.push_back("dimension must be <= 4");
    if (cells_per_side < 4) errs.push_back("cells_per_side must be >= 4");
    if ((cells_per_side & (cells_per_side - 1)) != 0)
      errs.push_back("cells_per_side must be a power of two");
    if (!(cell_size > 0.0)) errs.push_back("cell_size must be > 0");
    if (!(tail_lambda_inv > 0.0)) errs.push_back("tail_lambda_inv must be > 0");
    if (!(tail_Lambda > 0.0)) errs.push_back("tail_Lambda must be > 0");
    if (!(anisotropy >= 1.0)) errs.push_back("anisotropy must be >= 1");
    return errs;
  }

  TorusGrid grid() const { return TorusGrid(dimension, cells_per_side, cell_size); }
};

inline void to_json(nlohmann::json& j, const EnvironmentSpec& s) {
  j = nlohmann::json{{"dimension", s.dimension},
                     {"cells_per_side", s.cells_per_side},
                     {"cell_size", s.cell_size},
                     {"model", to_string(s.model)},
                     {"tail_lambda_inv", s.tail_lambda_inv},
                     {"tail_Lambda", s.tail_Lambda},
                     {"anisotropy", s.anisotropy},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, EnvironmentSpec& s) {
  s.dimension = j.value("dimension", 2);
  s.cells_per_side = j.value("cells_per_side", Index{64});
  s.cell_size = j.value("cell_size", 1.0);
  s.model = env_model_from_string(j.value("model", std::string("constant")));
  s.tail_lambda_inv = j.value("tail_lambda_inv", 6.0);
  s.tail_Lambda = j.value("tail_Lambda", 6.0);
  s.anisotropy = j.value("anisotropy", 1.0);
  s.seed = j.value("seed", std::uint64_t{0});
}

/// One realization of (a, lambda, Lambda) on the torus. `a_lower` stores the
/// lower triangle of the symmetric matrix a per cell, row-major.
struct FieldSample {
  EnvironmentSpec spec;
  std::vector<double> lambda;
  std::vector<double> Lambda;
  std::vector<double> a_lower;

  int tri_size() const { return spec.dimension * (spec.dimension + 1) / 2; }

  double a(Index cell, int r, int c) const {
    if (r < c) std::swap(r, c);
    return a_lower[cell * tri_size() + r * (r + 1) / 2 + c];
  }

  TorusGrid grid() const { return spec.grid(); }
};

struct MomentReport {
  double p = 1.0;
  double q = 1.0;
  double mean_Lambda_p = 0.0;      // mean of Lambda^p (ess sup for p = inf)
  double mean_lambda_inv_q = 0.0;  // mean of lambda^{-q} (ess sup for q = inf)
  double condition_value = 0.0;    // 1/p + 1/q
  bool condition_ok = false;
  double mean_Lambda = 0.0;        // the a_Lambda estimate
};

inline void to_json(nlohmann::json& j, const MomentReport& r) {
  j = nlohmann::json{{"p", r.p},
                     {"q", r.q},
                     {"mean_Lambda_p", r.mean_Lambda_p},
                     {"mean_lambda_inv_q", r.mean_lambda_inv_q},
                     {"condition_value", r.condition_value},
                     {"condition_ok", r.condition_ok},
                     {"mean_Lambda", r.mean_Lambda}};
}

namespace detail {

// Fills `mat` (d x d, row-major) with a Haar-ish random rotation obtained by
// Gram-Schmidt on gaussian columns. d <= kMaxDim.
inline void random_rotation(Rng& rng, int d, double* mat) {
  double col[kMaxDim][kMaxDim];
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < d; ++i) col[j][i] = rng.normal();
    for (int k = 0; k < j; ++k) {
      double dot = 0.0;
      for (int i = 0; i < d; ++i) dot += col[j][i] * col[k][i];
      for (int i = 0; i < d; ++i) col[j][i] -= dot * col[k][i];
    }
    double nrm = 0.0;
    for (int i = 0; i < d; ++i) nrm += col[j][i] * col[j][i];
    nrm = std::sqrt(nrm);
    if (nrm < 1e-12) {  // degenerate draw, fall back to a unit vector
      for (int i = 0; i < d; ++i) col[j][i] = (i == j) ? 1.0 : 0.0;
      nrm = 1.0;
    }
    for (int i = 0; i < d; ++i) col[j][i] /= nrm;
  }
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) mat[i * d + j] = col[j][i];
}

// a = R diag(evals) R^T, stored as lower triangle.
inline void assemble_spd(int d, const double* rot, const double* evals,
                         double* lower) {
  int idx = 0;
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c <= r; ++c) {
      double v = 0.0;
      for (int k = 0; k < d; ++k) v += rot[r * d + k] * evals[k] * rot[c * d + k];
      lower[idx++] = v;
    }
  }
}

// Circular AR(1) pass along every axis; leaves a correlated gaussian field
// with unit variance per pass (phi chosen for correlation length ~2h).
inline void smooth_ar1_torus(const TorusGrid& g, std::vector<double>& field) {
  const double phi = std::exp(-0.5);
  const double s = std::sqrt(1.0 - phi * phi);
  std::vector<double> out(field.size());
  for (int axis = 0; axis < g.dim; ++axis) {
    for (Index site = 0; site < g.sites(); ++site) {
      Coord c = g.coords(site);
      if (c[axis] != 0) continue;  // walk each line once, from its head
      double z = 0.0;
      // two warm-up laps make the circular recursion independent of the
      // starting point
      for (int lap = 0; lap < 3; ++lap) {
        Index cur = site;
        for (Index k = 0; k < g.n; ++k) {
          z = phi * z + s * field[cur];
          if (lap == 2) out[cur] = z;
          cur = g.neighbor(cur, axis, +1);
        }
      }
    }
    field = out;
  }
}

}  // namespace detail

/// Generates the coefficient field for `spec`. Pure function of the spec:
/// the same spec and seed produce bit-identical samples, independent of
/// call order, because every cell draws from its own hashed stream.
inline FieldSample generate_environment(const EnvironmentSpec& spec) {
  {
    auto errs = spec.validate();
    if (!errs.empty()) throw ValidationError(errs);
  }
  const TorusGrid g = spec.grid();
  const Index n_cells = g.sites();
  const int d = spec.dimension;

  FieldSample s;
  s.spec = spec;
  s.lambda.assign(n_cells, 1.0);
  s.Lambda.assign(n_cells, 1.0);
  s.a_lower.assign(n_cells * s.tri_size(), 0.0);

  auto set_identity = [&](Index cell, double scale) {
    int idx = 0;
    for (int r = 0; r < d; ++r)
      for (int c = 0; c <= r; ++c) s.a_lower[cell * s.tri_size() + idx++] = (r == c) ? scale : 0.0;
  };

  switch (spec.model) {
    case EnvModel::constant: {
      for (Index cell = 0; cell < n_cells; ++cell) set_identity(cell, 1.0);
      break;
    }
    case EnvModel::iid_cell_pareto: {
      for (Index cell = 0; cell < n_cells; ++cell) {
        Rng rng(spec.seed, static_cast<std::uint64_t>(cell));
        const double u1 = rng.uniform();
        const double u2 = rng.uniform();
        // lambda^{-1} = (1-u)^{-1/alpha}  =>  E[lambda^{-q}] < inf iff q < alpha
        const double lam = std::pow(1.0 - u1, 1.0 / spec.tail_lambda_inv);
        double Lam = std::pow(1.0 - u2, -1.0 / spec.tail_Lambda);
        if (Lam < lam) Lam = lam;
        s.lambda[cell] = lam;
        s.Lambda[cell] = Lam;

        double rot[kMaxDim * kMaxDim];
        detail::random_rotation(rng, d, rot);
        const double spread = std::min(spec.anisotropy, Lam / lam);
        double evals[kMaxDim];
        for (int k = 0; k < d; ++k) evals[k] = lam * rng.uniform(1.0, spread);
        detail::assemble_spd(d, rot, evals, &s.a_lower[cell * s.tri_size()]);
      }
      break;
    }
    case EnvModel::lognormal: {
      const double sigma_ln = 0.5;
      std::vector<double> gfield(n_cells);
      for (Index cell = 0; cell < n_cells; ++cell) {
        Rng rng(spec.seed, static_cast<std::uint64_t>(cell));
        gfield[cell] = rng.normal();
      }
      detail::smooth_ar1_torus(g, gfield);
      const double kappa_a = std::max(spec.anisotropy, 1.0);
      for (Index cell = 0; cell < n_cells; ++cell) {
        Rng rng(spec.seed ^ 0xD1F2E3C4B5A69788ULL, static_cast<std::uint64_t>(cell));
        const double base = std::exp(sigma_ln * gfield[cell]);
        s.lambda[cell] = base;
        s.Lambda[cell] = base * kappa_a;
        double rot[kMaxDim * kMaxDim];
        detail::random_rotation(rng, d, rot);
        double evals[kMaxDim];
        for (int k = 0; k < d; ++k) evals[k] = base * rng.uniform(1.0, kappa_a);
        detail::assemble_spd(d, rot, evals, &s.a_lower[cell * s.tri_size()]);
      }
      break;
    }
    case EnvModel::trap_counterexample: {
      // concentric annuli of dyadic radius 2^k around the torus center:
      // conductance 2^{-beta k}, speed weight 2^{+beta k}
      const double beta = 1.0;
      Coord cc{};
      for (int a = 0; a < d; ++a) cc[a] = g.n / 2;
      const Index center = g.index(cc);
      for (Index cell = 0; cell < n_cells; ++cell) {
        const double rho = g.distance(cell, center) / g.h;
        const int k = rho <= 1.0 ? 0 : static_cast<int>(std::floor(std::log2(rho)));
        const double lam = std::pow(2.0, -beta * k);
        const double Lam = std::pow(2.0, beta * k);
        s.lambda[cell] = lam;
        s.Lambda[cell] = Lam;
        set_identity(cell, lam);
      }
      break;
    }
    case EnvModel::layered: {
      // a_11 varies smoothly in x_1 only (wavelength 8 cells), other
      // directions stay identity; short layers let kernels at desk-scale
      // times average across many periods
      const double wavelength = 8.0 * g.h;
      for (Index cell = 0; cell < n_cells; ++cell) {
        const Coord c = g.coords(cell);
        const double x1 = static_cast<double>(c[0]) * g.h;
        const double prof =
            1.0 + 0.3 * std::sin(2.0 * 3.14159265358979323846 * x1 / wavelength);
        set_identity(cell, 1.0);
        s.a_lower[cell * s.tri_size() + 0] = prof;  // entry (0,0)
        s.lambda[cell] = std::min(1.0, prof);
        s.Lambda[cell] = std::max(1.0, prof);
      }
      break;
    }
  }
  return s;
}

/// Ball averages of Lambda^p and lambda^{-q} over the full torus, plus the
/// moment condition flag 1/p + 1/q < 2/d. p or q may be +inf, meaning the
/// essential supremum.
inline MomentReport moment_report(const FieldSample& s, double p, double q) {
  if (!(p >= 1.0) || !(q >= 1.0))
    throw std::invalid_argument("moment_report: p, q must be >= 1 (inf allowed)");
  MomentReport r;
  r.p = p;
  r.q = q;
  const Index n = static_cast<Index>(s.lambda.size());

  double acc_L = 0.0, acc_l = 0.0, acc_mean = 0.0;
  double sup_L = 0.0, sup_l = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double Lam = s.Lambda[i];
    const double lam_inv = 1.0 / s.lambda[i];
    acc_mean += Lam;
    sup_L = std::max(sup_L, Lam);
    sup_l = std::max(sup_l, lam_inv);
    if (std::isfinite(p)) acc_L += std::pow(Lam, p);
    if (std::isfinite(q)) acc_l += std::pow(lam_inv, q);
  }
  r.mean_Lambda = acc_mean / static_cast<double>(n);
  r.mean_Lambda_p = std::isfinite(p) ? acc_L / static_cast<double>(n) : sup_L;
  r.mean_lambda_inv_q = std::isfinite(q) ? acc_l / static_cast<double>(n) : sup_l;

  const double inv_p = std::isfinite(p) ? 1.0 / p : 0.0;
  const double inv_q = std::isfinite(q) ? 1.0 / q : 0.0;
  r.condition_value = inv_p + inv_q;

  const bool finite_moments =
      std::isfinite(r.mean_Lambda_p) && std::isfinite(r.mean_lambda_inv_q);
  if (!std::isfinite(r.mean_Lambda_p)) r.mean_Lambda_p = kInf;
  if (!std::isfinite(r.mean_lambda_inv_q)) r.mean_lambda_inv_q = kInf;
  r.condition_ok = finite_moments && r.condition_value < 2.0 / s.spec.dimension;
  return r;
}

// ----------------------------------------------------------------------------
// Serialization: binary sample file (magic "DHL1") plus a JSON sidecar that
// records the full spec. All floats are little-endian 64-bit.

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "sample files are little-endian; big-endian hosts unsupported");

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace detail

inline void save_sample(const FieldSample& s, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write("DHL1", 4);
  detail::write_pod(os, static_cast<std::uint32_t>(s.spec.dimension));
  detail::write_pod(os, static_cast<std::uint64_t>(s.spec.cells_per_side));
  detail::write_pod(os, s.spec.cell_size);
  detail::write_pod(os, static_cast<std::uint32_t>(s.spec.model));
  detail::write_pod(os, s.spec.seed);
  os.write(reinterpret_cast<const char*>(s.lambda.data()),
           static_cast<std::streamsize>(s.lambda.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(s.Lambda.data()),
           static_cast<std::streamsize>(s.Lambda.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(s.a_lower.data()),
           static_cast<std::streamsize>(s.a_lower.size() * sizeof(double)));
  if (!os) throw std::runtime_error("write failed: " + path);

  nlohmann::json side = s.spec;
  std::ofstream js(path + ".json");
  js << side.dump(2) << "\n";
}

inline FieldSample load_sample(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for read: " + path);
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, "DHL1", 4) != 0)
    throw std::runtime_error("bad magic in " + path);

  std::uint32_t dim = 0, model = 0;
  std::uint64_t n = 0, seed = 0;
  double h = 0.0;
  detail::read_pod(is, dim);
  detail::read_pod(is, n);
  detail::read_pod(is, h);
  detail::read_pod(is, model);
  detail::read_pod(is, seed);

  FieldSample s;
  s.spec.dimension = static_cast<int>(dim);
  s.spec.cells_per_side = static_cast<Index>(n);
  s.spec.cell_size = h;
  s.spec.model = static_cast<EnvModel>(model);
  s.spec.seed = seed;

  // the sidecar restores fields not present in the binary header
  {
    std::ifstream js(path + ".json");
    if (js) {
      nlohmann::json side;
      js >> side;
      EnvironmentSpec full = side.get<EnvironmentSpec>();
      if (full.dimension != s.spec.dimension || full.cells_per_side != s.spec.cells_per_side ||
          full.model != s.spec.model || full.seed != s.spec.seed)
        throw std::runtime_error("sidecar disagrees with binary header: " + path);
      s.spec = full;
    }
  }

  Index cells = 1;
  for (std::uint32_t a = 0; a < dim; ++a) cells *= static_cast<Index>(n);
  s.lambda.resize(cells);
  s.Lambda.resize(cells);
  s.a_lower.resize(cells * s.tri_size());
  is.read(reinterpret_cast<char*>(s.lambda.data()),
          static_cast<std::streamsize>(s.lambda.size() * sizeof(double)));
  is.read(reinterpret_cast<char*>(s.Lambda.data()),
          static_cast<std::streamsize>(s.Lambda.size() * sizeof(double)));
  is.read(reinterpret_cast<char*>(s.a_lower.data()),
          static_cast<std::streamsize>(s.a_lower.size() * sizeof(double)));
  if (!is) throw std::runtime_error("truncated sample file: " + path);
  return s;
}

}  // namespace dhl
