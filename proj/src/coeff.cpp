#include "rehom/coeff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "rehom/errors.hpp"
#include "rehom/io_util.hpp"

namespace rehom::coeff {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

double get_param(const Params& p, const std::string& key, double def) {
  auto it = p.find(key);
  return it == p.end() ? def : it->second;
}

void reject_unknown(const Params& p, std::initializer_list<const char*> known,
                    const std::string& family) {
  for (const auto& [key, value] : p) {
    (void)value;
    bool ok = false;
    for (const char* k : known)
      if (key == k) ok = true;
    if (!ok) throw ConfigError("unknown parameter '" + key + "' for family '" + family + "'");
  }
}

std::string render_tag(const std::string& family, const Params& p) {
  std::ostringstream os;
  os << family << "(";
  bool first = true;
  for (const auto& [key, value] : p) {  // std::map iterates in key order
    if (!first) os << ",";
    os << key << "=" << io::fmt_double(value);
    first = false;
  }
  os << ")";
  return os.str();
}

void require_coercive(double alpha, const std::string& family) {
  if (!(alpha > 0.0))
    throw ConfigError("family '" + family + "': analytic minimum eigenvalue <= 0 (alpha = " +
                      io::fmt_double(alpha) + ")");
}

}  // namespace

SymMatrix2 CoefficientField::eval(double y1, double y2, double z1, double z2) const {
  double a[4];
  raw(y1, y2, z1, z2, a);
  return SymMatrix2{a[0], 0.5 * (a[1] + a[2]), a[3]};
}

CoefficientField make_builtin(const std::string& family, const Params& params) {
  CoefficientField f;
  if (family == "constant") {
    reject_unknown(params, {"nu", "a11", "a12", "a22"}, family);
    double a11, a12, a22;
    if (params.count("a11") || params.count("a12") || params.count("a22")) {
      a11 = get_param(params, "a11", 1.0);
      a12 = get_param(params, "a12", 0.0);
      a22 = get_param(params, "a22", 1.0);
      if (params.count("nu")) throw ConfigError("constant: give either nu or a11/a12/a22");
    } else {
      const double nu = get_param(params, "nu", 1.0);
      a11 = a22 = nu;
      a12 = 0.0;
    }
    const double tr = 0.5 * (a11 + a22);
    const double dev = std::sqrt(0.25 * (a11 - a22) * (a11 - a22) + a12 * a12);
    f.alpha = tr - dev;
    f.sup_bound = std::max({std::abs(a11), std::abs(a12), std::abs(a22)});
    require_coercive(f.alpha, family);
    f.raw = [a11, a12, a22](double, double, double, double, double out[4]) {
      out[0] = a11;
      out[1] = a12;
      out[2] = a12;
      out[3] = a22;
    };
  } else if (family == "y-only" || family == "z-only") {
    reject_unknown(params, {"base", "amp"}, family);
    const double base = get_param(params, "base", 2.0);
    const double amp = get_param(params, "amp", 1.0);
    f.alpha = base - std::abs(amp);
    f.sup_bound = base + std::abs(amp);
    require_coercive(f.alpha, family);
    if (family == "y-only") {
      f.raw = [base, amp](double y1, double, double, double, double out[4]) {
        const double s = base + amp * std::sin(kTwoPi * y1);
        out[0] = s;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = s;
      };
    } else {
      f.raw = [base, amp](double, double, double z1, double, double out[4]) {
        const double s = base + amp * std::cos(kTwoPi * z1);
        out[0] = s;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = s;
      };
    }
  } else if (family == "separable" || family == "layered") {
    reject_unknown(params, {"base1", "amp1", "base2", "amp2"}, family);
    const double b1 = get_param(params, "base1", 2.0);
    const double a1 = get_param(params, "amp1", 1.0);
    const double b2 = get_param(params, "base2", 2.0);
    const double a2 = get_param(params, "amp2", 1.0);
    const double m1 = b1 - std::abs(a1), m2 = b2 - std::abs(a2);
    if (!(m1 > 0.0) || !(m2 > 0.0)) require_coercive(-1.0, family);
    f.alpha = m1 * m2;
    f.sup_bound = (b1 + std::abs(a1)) * (b2 + std::abs(a2));
    const bool sin_y = family == "separable";
    f.raw = [b1, a1, b2, a2, sin_y](double y1, double, double z1, double, double out[4]) {
      const double c1 = b1 + a1 * (sin_y ? std::sin(kTwoPi * y1) : std::cos(kTwoPi * y1));
      const double c2 = b2 + a2 * std::cos(kTwoPi * z1);
      const double s = c1 * c2;
      out[0] = s;
      out[1] = 0.0;
      out[2] = 0.0;
      out[3] = s;
    };
  } else if (family == "anisotropic") {
    reject_unknown(params, {"d1", "p1", "d2", "p2", "q"}, family);
    const double d1 = get_param(params, "d1", 3.0);
    const double p1 = get_param(params, "p1", 1.0);
    const double d2 = get_param(params, "d2", 2.5);
    const double p2 = get_param(params, "p2", 0.75);
    const double q = get_param(params, "q", 0.5);
    // lambda_min(y,z) >= min(a11, a22) - |a12| pointwise. The diagonal
    // entries carry mixed z1 z2 oscillations so that every unit forcing
    // direction excites a nontrivial corrector pair.
    f.alpha = std::min(d1 - std::abs(p1), d2 - std::abs(p2)) - std::abs(q);
    f.sup_bound = std::max({d1 + std::abs(p1), d2 + std::abs(p2), std::abs(q)});
    require_coercive(f.alpha, family);
    f.raw = [d1, p1, d2, p2, q](double y1, double y2, double z1, double z2, double out[4]) {
      out[0] = d1 + p1 * std::cos(kTwoPi * y1) * std::cos(kTwoPi * z1) * std::cos(kTwoPi * z2);
      out[3] = d2 + p2 * std::sin(kTwoPi * y2) * std::sin(kTwoPi * z1) * std::cos(kTwoPi * z2);
      const double off = q * std::sin(kTwoPi * y1) * std::cos(kTwoPi * z1);
      out[1] = off;
      out[2] = off;
    };
  } else {
    throw ConfigError("unknown coefficient family '" + family + "'");
  }
  f.family_tag = render_tag(family, params);
  return f;
}

ValidationReport validate(const CoefficientField& field, int n_check, std::uint64_t seed) {
  if (n_check < 4) throw ConfigError("validate: n_check must be >= 4");
  ValidationReport rep;
  rep.tol = 1e-10 * std::max(1.0, field.alpha);
  rep.min_rayleigh = std::numeric_limits<double>::infinity();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);

  const double h = 1.0 / n_check;
  double a[4], ashift[4];
  for (int p1 = 0; p1 < n_check; ++p1) {
    const double y1 = -0.5 + p1 * h;
    for (int p2 = 0; p2 < n_check; ++p2) {
      const double y2 = -0.5 + p2 * h;
      for (int q1 = 0; q1 < n_check; ++q1) {
        const double z1 = -0.5 + q1 * h;
        for (int q2 = 0; q2 < n_check; ++q2) {
          const double z2 = -0.5 + q2 * h;
          field.raw(y1, y2, z1, z2, a);
          rep.max_symmetry_defect = std::max(rep.max_symmetry_defect, std::abs(a[1] - a[2]));
          for (double e : a) rep.max_abs_entry = std::max(rep.max_abs_entry, std::abs(e));
          // Rayleigh quotients: canonical axes plus random directions.
          const double diag[3] = {a[0], a[3], 0.5 * (a[0] + a[3] + a[1] + a[2])};
          for (double r : diag) rep.min_rayleigh = std::min(rep.min_rayleigh, r);
          for (int d = 0; d < 4; ++d) {
            const double t = angle(rng);
            const double x1 = std::cos(t), x2 = std::sin(t);
            const double r = a[0] * x1 * x1 + (a[1] + a[2]) * x1 * x2 + a[3] * x2 * x2;
            rep.min_rayleigh = std::min(rep.min_rayleigh, r);
          }
          // Periodicity defects across all four cell shifts.
          const double shifts[4][4] = {{y1 + 1.0, y2, z1, z2},
                                       {y1, y2 + 1.0, z1, z2},
                                       {y1, y2, z1 + 1.0, z2},
                                       {y1, y2, z1, z2 + 1.0}};
          for (const auto& s : shifts) {
            field.raw(s[0], s[1], s[2], s[3], ashift);
            for (int e = 0; e < 4; ++e)
              rep.max_periodicity_defect =
                  std::max(rep.max_periodicity_defect, std::abs(ashift[e] - a[e]));
          }
        }
      }
    }
  }
  rep.pass = rep.min_rayleigh >= field.alpha - rep.tol && rep.max_symmetry_defect <= rep.tol &&
             rep.max_periodicity_defect <= rep.tol;
  return rep;
}

CellSampling sample(const CoefficientField& field, int n_y, int n_z, std::uint64_t node_cap) {
  if (n_y < 4 || n_z < 4 || n_y % 2 != 0 || n_z % 2 != 0)
    throw ConfigError("sample: n_y, n_z must be even and >= 4");
  const std::uint64_t nodes =
      static_cast<std::uint64_t>(n_y) * n_y * static_cast<std::uint64_t>(n_z) * n_z;
  if (nodes > node_cap)
    throw ResourceError("sample: " + std::to_string(nodes) + " nodes exceed cap " +
                        std::to_string(node_cap));
  CellSampling s;
  s.n_y = n_y;
  s.n_z = n_z;
  s.field_tag = field.family_tag;
  s.alpha = field.alpha;
  s.values.resize(nodes);
  const double hy = 1.0 / n_y, hz = 1.0 / n_z;
  std::size_t idx = 0;
  for (int p1 = 0; p1 < n_y; ++p1) {
    for (int p2 = 0; p2 < n_y; ++p2) {
      const double y1 = -0.5 + p1 * hy, y2 = -0.5 + p2 * hy;
      for (int q1 = 0; q1 < n_z; ++q1) {
        for (int q2 = 0; q2 < n_z; ++q2) {
          s.values[idx++] = field.eval(y1, y2, -0.5 + q1 * hz, -0.5 + q2 * hz);
        }
      }
    }
  }
  return s;
}

}  // namespace rehom::coeff
