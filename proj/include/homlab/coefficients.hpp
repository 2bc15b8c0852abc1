#ifndef HOMLAB_COEFFICIENTS_HPP
#define HOMLAB_COEFFICIENTS_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "homlab/errors.hpp"

namespace homlab {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Periodic coefficient matrix A(y), periodic potential W(y), source f(x)
/// and the ellipticity constant kappa. Immutable after construction.
struct CoefficientModel {
  std::function<Mat2(const Vec2&)> a_eval;
  std::function<double(const Vec2&)> w_eval;
  std::function<double(const Vec2&)> f_eval;
  double kappa = 1.0;
  std::string preset_name;

  Mat2 a(const Vec2& y) const { return a_eval(y); }
  double w(const Vec2& y) const { return w_eval(y); }
  double f(const Vec2& x) const { return f_eval(x); }
};

struct PresetNames {
  std::string a = "smooth-iso";
  std::string w = "sine1";
  std::string f = "sine-sine";
};

namespace detail {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

inline void unknown_key(const std::string& key, const std::string& value) {
  throw ConfigError("unknown " + key + " '" + value + "'");
}

}  // namespace detail

/// Instantiates one of the named coefficient presets.
inline CoefficientModel make_preset(const std::string& a_name, const std::string& w_name,
                                    const std::string& f_name) {
  using detail::two_pi;
  CoefficientModel m;
  if (a_name == "identity") {
    m.a_eval = [](const Vec2&) -> Mat2 { return Mat2::Identity(); };
    m.kappa = 0.999;
  } else if (a_name == "layered") {
    m.a_eval = [](const Vec2& y) -> Mat2 {
      return (2.0 + std::sin(two_pi * y[0])) * Mat2::Identity();
    };
    m.kappa = 1.0 / 3.0;
  } else if (a_name == "smooth-iso") {
    m.a_eval = [](const Vec2& y) -> Mat2 {
      return (2.0 + std::sin(two_pi * y[0]) * std::sin(two_pi * y[1])) * Mat2::Identity();
    };
    m.kappa = 1.0 / 3.0;
  } else {
    detail::unknown_key("A_preset", a_name);
  }

  if (w_name == "zero") {
    m.w_eval = [](const Vec2&) { return 0.0; };
  } else if (w_name == "sine1") {
    m.w_eval = [](const Vec2& y) { return std::sin(two_pi * y[0]); };
  } else if (w_name == "sine-mix") {
    m.w_eval = [](const Vec2& y) { return std::sin(two_pi * y[0]) + std::cos(two_pi * y[1]); };
  } else {
    detail::unknown_key("W_preset", w_name);
  }

  if (f_name == "one") {
    m.f_eval = [](const Vec2&) { return 1.0; };
  } else if (f_name == "sine-sine") {
    m.f_eval = [](const Vec2& x) {
      return std::sin(std::numbers::pi * x[0]) * std::sin(std::numbers::pi * x[1]);
    };
  } else {
    detail::unknown_key("f_preset", f_name);
  }

  m.preset_name = a_name + "/" + w_name + "/" + f_name;
  return m;
}

inline CoefficientModel make_preset(const PresetNames& names) {
  return make_preset(names.a, names.w, names.f);
}

struct ValidationReport {
  double max_symmetry_defect = 0.0;
  double min_rayleigh = 0.0;
  double max_rayleigh = 0.0;
  double max_periodicity_defect = 0.0;
  double abs_mean_w = 0.0;
  bool passed = false;
  std::vector<std::string> failures;
};

/// Samples the model on a lattice_n x lattice_n lattice of the unit cell and
/// checks symmetry, ellipticity, periodicity and the zero mean of W.
inline ValidationReport validate(const CoefficientModel& model, int lattice_n) {
  if (lattice_n < 8) throw ConfigError("validate: lattice_n must be >= 8");
  const double s = 1.0 / std::sqrt(2.0);
  const std::vector<Vec2> directions = {Vec2(1, 0), Vec2(0, 1), Vec2(s, s), Vec2(s, -s)};
  const std::vector<Vec2> shifts = {Vec2(1, 0), Vec2(0, 1), Vec2(1, 1), Vec2(-1, 2), Vec2(3, -2)};

  ValidationReport r;
  r.min_rayleigh = std::numeric_limits<double>::infinity();
  r.max_rayleigh = -std::numeric_limits<double>::infinity();
  double w_sum = 0.0;
  const double h = 1.0 / lattice_n;
  for (int j = 0; j < lattice_n; ++j) {
    for (int i = 0; i < lattice_n; ++i) {
      const Vec2 y(i * h, j * h);
      const Mat2 a = model.a(y);
      const double w = model.w(y);
      w_sum += w;
      r.max_symmetry_defect = std::max(r.max_symmetry_defect, std::abs(a(0, 1) - a(1, 0)));
      for (const Vec2& xi : directions) {
        const double q = xi.dot(a * xi);
        r.min_rayleigh = std::min(r.min_rayleigh, q);
        r.max_rayleigh = std::max(r.max_rayleigh, q);
      }
      for (const Vec2& z : shifts) {
        const double da = (model.a(y + z) - a).cwiseAbs().maxCoeff();
        const double dw = std::abs(model.w(y + z) - w);
        r.max_periodicity_defect = std::max({r.max_periodicity_defect, da, dw});
      }
    }
  }
  r.abs_mean_w = std::abs(w_sum * h * h);

  constexpr double slack = 1e-14;
  if (r.max_symmetry_defect > 1e-14) r.failures.push_back("A is not symmetric");
  if (r.min_rayleigh < model.kappa - slack) r.failures.push_back("ellipticity lower bound violated");
  if (r.max_rayleigh > 1.0 / model.kappa + slack)
    r.failures.push_back("ellipticity upper bound violated");
  if (r.max_periodicity_defect > 1e-12) r.failures.push_back("coefficients are not 1-periodic");
  if (r.abs_mean_w > 1e-12) r.failures.push_back("W is not mean-zero");
  r.passed = r.failures.empty();
  return r;
}

}  // namespace homlab

#endif  // HOMLAB_COEFFICIENTS_HPP
