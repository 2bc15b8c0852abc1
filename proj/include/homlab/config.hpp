#ifndef HOMLAB_CONFIG_HPP
#define HOMLAB_CONFIG_HPP

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "homlab/coefficients.hpp"
#include "homlab/errors.hpp"

namespace homlab {

/// Settings of one experiment, read from a `key = value` file.
struct ExperimentConfig {
  PresetNames presets;
  int cell_grid_n = 128;
  int domain_grid_n = 256;
  std::vector<double> epsilons = {0.25, 0.125, 0.0625};
  int k_eigen = 5;
  double cg_tol = 1e-10;
  int cg_max_iter = 0;  // 0: 50 * cells per side
  double eig_tol = 1e-10;
  unsigned seed = 1;
  std::string output_dir = "homlab_out";
  bool emit_svg = false;
  /// Richardson-extrapolate eigenvalues from grids n and 2n.
  bool spectral_refine = true;
  /// Allow a non-coercive L_eps (solved directly); excluded from acceptance.
  bool allow_noncoercive = false;
  /// Concurrent epsilon instances; 0 picks min(hardware threads, 4).
  int workers = 0;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Accepts decimals and fractions such as 1/16.
inline double parse_number(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  try {
    const auto slash = t.find('/');
    std::size_t used = 0;
    if (slash != std::string::npos) {
      const std::string num = trim(t.substr(0, slash)), den = trim(t.substr(slash + 1));
      std::size_t u1 = 0, u2 = 0;
      const double a = std::stod(num, &u1), b = std::stod(den, &u2);
      if (u1 != num.size() || u2 != den.size() || b == 0.0) throw std::invalid_argument(t);
      return a / b;
    }
    const double v = std::stod(t, &used);
    if (used != t.size()) throw std::invalid_argument(t);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse number '" + t + "'");
  }
}

inline int parse_int(const std::string& key, const std::string& text) {
  const double v = parse_number(key, text);
  if (v != std::floor(v)) throw ConfigError("config key '" + key + "': expected an integer");
  return static_cast<int>(v);
}

inline bool parse_bool(const std::string& key, std::string text) {
  text = trim(text);
  std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return std::tolower(c); });
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + text + "'");
}

}  // namespace detail

/// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
inline ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key == "A_preset") {
      c.presets.a = value;
    } else if (key == "W_preset") {
      c.presets.w = value;
    } else if (key == "f_preset") {
      c.presets.f = value;
    } else if (key == "cell_grid_n") {
      c.cell_grid_n = detail::parse_int(key, value);
    } else if (key == "domain_grid_n") {
      c.domain_grid_n = detail::parse_int(key, value);
    } else if (key == "epsilons") {
      c.epsilons.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!detail::trim(item).empty()) c.epsilons.push_back(detail::parse_number(key, item));
    } else if (key == "k_eigen") {
      c.k_eigen = detail::parse_int(key, value);
    } else if (key == "cg_tol") {
      c.cg_tol = detail::parse_number(key, value);
    } else if (key == "cg_max_iter") {
      c.cg_max_iter = detail::parse_int(key, value);
    } else if (key == "eig_tol") {
      c.eig_tol = detail::parse_number(key, value);
    } else if (key == "seed") {
      c.seed = static_cast<unsigned>(detail::parse_int(key, value));
    } else if (key == "output_dir") {
      c.output_dir = value;
    } else if (key == "emit_svg") {
      c.emit_svg = detail::parse_bool(key, value);
    } else if (key == "spectral_refine") {
      c.spectral_refine = detail::parse_bool(key, value);
    } else if (key == "allow_noncoercive") {
      c.allow_noncoercive = detail::parse_bool(key, value);
    } else if (key == "workers") {
      c.workers = detail::parse_int(key, value);
    } else {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }

  // Preset names are checked here so that a bad key fails before any solve.
  (void)make_preset(c.presets);
  if (c.cell_grid_n < 16) throw ConfigError("cell_grid_n must be >= 16");
  if (c.domain_grid_n < 2) throw ConfigError("domain_grid_n must be >= 2");
  if (c.epsilons.empty()) throw ConfigError("epsilons must not be empty");
  for (double e : c.epsilons)
    if (!(e > 0.0 && e <= 1.0)) throw ConfigError("epsilons must lie in (0, 1]");
  if (c.k_eigen < 1 || c.k_eigen > 64) throw ConfigError("k_eigen must lie in [1, 64]");
  if (!(c.cg_tol > 0.0) || !(c.eig_tol > 0.0)) throw ConfigError("tolerances must be positive");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in);
}

}  // namespace homlab

#endif  // HOMLAB_CONFIG_HPP
