#ifndef HOMLAB_PIPELINE_HPP
#define HOMLAB_PIPELINE_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "homlab/analysis.hpp"
#include "homlab/cell_problems.hpp"
#include "homlab/config.hpp"
#include "homlab/domain_solvers.hpp"
#include "homlab/spectral.hpp"

namespace homlab::pipeline {

/// Process exit codes, one per pipeline stage.
enum class Stage : int { config = 2, cell = 10, solve = 20, eigs = 30, gaps = 40, rates = 50, flux = 60, report = 70 };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::config: return "config";
    case Stage::cell: return "cell";
    case Stage::solve: return "solve";
    case Stage::eigs: return "eigs";
    case Stage::gaps: return "gaps";
    case Stage::rates: return "rates";
    case Stage::flux: return "flux";
    case Stage::report: return "report";
  }
  return "?";
}

class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& what)
      : Error(std::string("[") + stage_name(stage) + "] " + what), stage_(stage) {}
  Stage stage() const noexcept { return stage_; }
  int exit_code() const noexcept { return static_cast<int>(stage_); }

 private:
  Stage stage_;
};

/// Runs fn, rethrowing any library error tagged with the stage.
template <class Fn>
auto in_stage(Stage stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

// ---------------------------------------------------------------------------
// Formatting and files

/// Shortest round-trip representation; identical inputs give identical text.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Compact form for console messages.
inline std::string brief(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string eps_label(double eps) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", eps);
  return buf;
}

/// Writes to `path.partial`, then renames onto `path`. A failure leaves the
/// `.partial` file behind.
inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string() + " (run the producing subcommand first)");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Header plus rows joined with ',' and LF line endings.
inline std::string csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::stringstream ss(text);
  std::string line;
  bool header = true;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Experiment state

/// Eigenvalues of the four operators at one epsilon.
struct SpectrumSet {
  double epsilon = 0.0;
  std::map<OperatorTag, std::vector<double>> values;  // extrapolated when spectral_refine is on
  std::optional<Spectrum> eps_grid_spectrum;          // eigenpairs of L_eps on the configured grid
};

struct EpsInstance {
  double epsilon = 0.0;
  nlohmann::json solution;  // contents of solution_E.json
  std::string fields_csv;   // nodal dump, filled on request
  SpectrumSet spectra;
  std::vector<FluxRecord> flux;
  double jacobian_min = 0.0;
};

/// Everything needed to reproduce one configured experiment.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)), model_(make_preset(cfg_.presets)) {}

  const ExperimentConfig& config() const { return cfg_; }
  const CoefficientModel& model() const { return model_; }
  std::filesystem::path out(const std::string& name) const { return std::filesystem::path(cfg_.output_dir) / name; }

  Grid domain_grid() const { return Grid::dirichlet(cfg_.domain_grid_n); }
  Grid fine_grid() const { return Grid::dirichlet(2 * cfg_.domain_grid_n); }

  CgOptions domain_cg(const Grid& g) const {
    CgOptions o = default_domain_cg(g);
    o.tol = cfg_.cg_tol;
    if (cfg_.cg_max_iter > 0) o.max_iter = cfg_.cg_max_iter;
    return o;
  }
  EigOptions eig_options() const {
    EigOptions o;
    o.tol = cfg_.eig_tol;
    return o;
  }

  const PeriodicCellSolution& cell() {
    std::call_once(cell_once_, [&] {
      cell_ = in_stage(Stage::cell, [&] {
        const ValidationReport v = validate(model_, 128);
        if (!v.passed) throw ConfigError("coefficient model failed validation: " + v.failures.front());
        CgOptions o = default_cell_cg();
        if (cfg_.cg_max_iter > 0) o.max_iter = cfg_.cg_max_iter;
        return solve_cell(model_, Grid::periodic(cfg_.cell_grid_n), o);
      });
    });
    return *cell_;
  }

  /// Checks the resolution rule for every configured epsilon.
  void check_resolution() const {
    in_stage(Stage::config, [&] {
      for (double eps : cfg_.epsilons) EpsProblem(eps, model_, domain_grid());
      return 0;
    });
  }

  // -------------------------------------------------------------------------

  nlohmann::json cell_json() {
    const PeriodicCellSolution& c = cell();
    nlohmann::json j;
    j["preset"] = model_.preset_name;
    j["grid"] = {{"n", c.grid.n()}, {"h", c.grid.h()}};
    j["a_hat"] = {c.a_hat(0, 0), c.a_hat(0, 1), c.a_hat(1, 0), c.a_hat(1, 1)};
    j["m_w_chi_w"] = c.m_w_chi_w;
    j["chi_w_energy"] = c.chi_w_energy;
    j["identity_checks"] = {{"potential_energy_relative_residual", c.identity_26_residual},
                            {"corrector_potential_defect", {c.identity_34[0], c.identity_34[1]}},
                            {"flux_corrector_mean_max", c.b_mean_max},
                            {"flux_corrector_weak_divergence", c.b_weak_divergence},
                            {"aux_rhs_mean", {c.aux.rhs_means[0], c.aux.rhs_means[1], c.aux.rhs_means[2]}}};
    return j;
  }

  std::string cell_fields_csv() {
    const PeriodicCellSolution& c = cell();
    std::vector<std::vector<std::string>> rows;
    for (int k = 0; k < static_cast<int>(c.grid.node_count()); ++k) {
      const Vec2 y = c.grid.node_coord(k);
      rows.push_back({fmt(y[0]), fmt(y[1]), fmt(c.chi[0].values[k]), fmt(c.chi[1].values[k]), fmt(c.chi_w.values[k])});
    }
    return csv({"y1", "y2", "chi1", "chi2", "chi_w"}, rows);
  }

  /// Homogenized solution on the domain grid (shared by every epsilon).
  const GridFunction& u0() {
    std::call_once(u0_once_, [&] {
      const PeriodicCellSolution& c = cell();
      u0_ = in_stage(Stage::solve, [&] {
        return solve_homogenized(c.a_hat, c.m_w_chi_w, domain_grid(), model_.f_eval, lambda0_prime_1_grid());
      });
    });
    return *u0_;
  }

  /// lambda'_{0,1} on the configured grid.
  double lambda0_prime_1_grid() {
    std::call_once(l0p_once_, [&] {
      const PeriodicCellSolution& c = cell();
      l0p_ = in_stage(Stage::solve, [&] {
        return hom_spectrum(c.a_hat, 0.0, false, domain_grid(), 1, cfg_.seed, eig_options()).values.front();
      });
    });
    return l0p_;
  }

  /// Solution, correctors, expansion and Jacobian diagnostics at one epsilon.
  void solve_instance(EpsInstance& inst, bool dump_fields) {
    const auto t0 = std::chrono::steady_clock::now();
    const PeriodicCellSolution& c = cell();
    const GridFunction& hom = u0();
    in_stage(Stage::solve, [&] {
      const Grid g = domain_grid();
      const EpsProblem problem(inst.epsilon, model_, g);
      SolveOptions so;
      so.cg = domain_cg(g);
      so.allow_noncoercive = cfg_.allow_noncoercive;
      so.seed = cfg_.seed;

      CoercivityReport coercive;
      coercive.epsilon = inst.epsilon;
      coercive.m_w_chi_w = c.m_w_chi_w;
      coercive.lambda0_prime_1 = lambda0_prime_1_grid();
      coercive.lambda_eps_1 =
          eps_spectrum(problem, true, 1, cfg_.seed, eig_options()).values.front();
      coercive.coercive = coercive.lambda_eps_1 > 0.0;
      if (!coercive.coercive && !cfg_.allow_noncoercive)
        throw CoercivityError("L_eps is not coercive at epsilon " + eps_label(inst.epsilon) +
                                  "; set allow_noncoercive = true to explore it",
                              coercive.lambda_eps_1);

      const GridFunction u_eps = solve_eps(problem, model_.f_eval, so);
      const DirichletCorrectors dc = solve_dirichlet_correctors(problem, so.cg);
      const GridFunction chi_w = sample_on_domain(c.chi_w, g, inst.epsilon);
      const CorrectorExpansion e = build_expansion(u_eps, hom, dc, chi_w, inst.epsilon);
      inst.jacobian_min = jacobian_check(dc, inst.epsilon);
      const double f_l2 = l2_norm(GridFunction::interpolate(g, model_.f_eval));

      double chi_dev = 0.0, chi_bdry = 0.0;
      {
        // Maximum-principle surrogate: |Phi_1 - x_1 - eps chi_1(x/eps)|.
        const GridFunction chi1 = sample_on_domain(c.chi[0], g, inst.epsilon);
        for (int k = 0; k < static_cast<int>(g.node_count()); ++k) {
          const double ec = inst.epsilon * chi1.values[k];
          chi_dev = std::max(chi_dev, std::abs(dc.deviation[0].values[k] - ec));
          if (g.on_boundary(k)) chi_bdry = std::max(chi_bdry, std::abs(ec));
        }
      }

      nlohmann::json j;
      j["epsilon"] = inst.epsilon;
      j["grid"] = {{"n", g.n()}, {"h", g.h()}};
      j["f_l2"] = f_l2;
      j["u_eps"] = {{"l2", l2_norm(u_eps)}, {"h1", h1_norm(u_eps)}};
      j["u_0"] = {{"l2", l2_norm(hom)}, {"h1", h1_norm(hom)}};
      j["difference"] = {{"l2", e.uncorrected_l2}, {"h1", e.uncorrected_h1}};
      j["expansion"] = {{"w_h1", e.w_h1}, {"w_l2", e.w_l2}, {"boundary_trace", e.boundary_trace}};
      j["correctors"] = {{"phi1_supnorm", dc.deviation[0].values.cwiseAbs().maxCoeff()},
                         {"phi2_supnorm", dc.deviation[1].values.cwiseAbs().maxCoeff()},
                         {"phi1_minus_periodic_supnorm", chi_dev},
                         {"periodic_boundary_supnorm", chi_bdry},
                         {"jacobian_min", inst.jacobian_min}};
      j["coercivity"] = {{"lambda_eps_1", coercive.lambda_eps_1},
                         {"lambda0_prime_1", coercive.lambda0_prime_1},
                         {"m_w_chi_w", coercive.m_w_chi_w},
                         {"limit", coercive.limit()},
                         {"coercive", coercive.coercive}};
      j["timing_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      inst.solution = std::move(j);

      if (dump_fields) {
        std::vector<std::vector<std::string>> rows;
        for (int k = 0; k < static_cast<int>(g.node_count()); ++k) {
          const Vec2 x = g.node_coord(k);
          rows.push_back({fmt(x[0]), fmt(x[1]), fmt(u_eps.values[k]), fmt(hom.values[k]), fmt(dc.phi[0].values[k]),
                          fmt(dc.phi[1].values[k])});
        }
        inst.fields_csv = csv({"x1", "x2", "u_eps", "u_0", "phi1", "phi2"}, rows);
      }
      return 0;
    });
  }

  /// Homogenized spectra (epsilon-independent), computed once.
  const std::map<OperatorTag, std::vector<double>>& hom_spectra(int k) {
    std::lock_guard lock(hom_mutex_);
    auto it = hom_cache_.find(k);
    if (it != hom_cache_.end()) return it->second;
    const PeriodicCellSolution& c = cell();
    auto values = in_stage(Stage::eigs, [&] {
      std::map<OperatorTag, std::vector<double>> v;
      for (bool pot : {true, false}) {
        const OperatorTag tag = pot ? OperatorTag::hom : OperatorTag::hom_prime;
        v[tag] = hom_spectrum(c.a_hat, c.m_w_chi_w, pot, domain_grid(), k, cfg_.seed, eig_options()).values;
        if (cfg_.spectral_refine)
          v[tag] = richardson(v[tag],
                              hom_spectrum(c.a_hat, c.m_w_chi_w, pot, fine_grid(), k, cfg_.seed, eig_options()).values);
      }
      return v;
    });
    return hom_cache_.emplace(k, std::move(values)).first->second;
  }

  /// All four spectra at one epsilon; keeps the L_eps eigenpairs for the flux table.
  SpectrumSet spectra(double epsilon, int k) {
    SpectrumSet s;
    s.epsilon = epsilon;
    s.values = hom_spectra(k);
    in_stage(Stage::eigs, [&] {
      const EpsProblem coarse(epsilon, model_, domain_grid());
      for (bool pot : {true, false}) {
        const OperatorTag tag = pot ? OperatorTag::eps : OperatorTag::eps_prime;
        Spectrum sp = eps_spectrum(coarse, pot, k, cfg_.seed, eig_options());
        std::vector<double> v = sp.values;
        if (cfg_.spectral_refine) {
          const EpsProblem fine(epsilon, model_, fine_grid());
          v = richardson(v, eps_spectrum(fine, pot, k, cfg_.seed, eig_options()).values);
        }
        s.values[tag] = std::move(v);
        if (pot) s.eps_grid_spectrum = std::move(sp);
      }
      return 0;
    });
    return s;
  }

  static std::string spectrum_csv(const SpectrumSet& s) {
    std::vector<std::vector<std::string>> rows;
    for (OperatorTag tag : {OperatorTag::eps, OperatorTag::eps_prime, OperatorTag::hom, OperatorTag::hom_prime}) {
      const auto it = s.values.find(tag);
      if (it == s.values.end()) continue;
      for (std::size_t k = 0; k < it->second.size(); ++k)
        rows.push_back({to_string(tag), std::to_string(k + 1), fmt(it->second[k])});
    }
    return csv({"tag", "k", "lambda"}, rows);
  }

  static SpectrumSet read_spectrum_csv(const std::string& text, double epsilon) {
    SpectrumSet s;
    s.epsilon = epsilon;
    for (const auto& row : parse_csv(text)) {
      if (row.size() != 3) throw Error("malformed spectrum row");
      s.values[parse_operator_tag(row[0])].push_back(std::stod(row[2]));
    }
    return s;
  }

  // -------------------------------------------------------------------------
  // Derived tables

  static std::vector<GapRow> gaps(const std::vector<SpectrumSet>& sets, int k_max) {
    std::vector<GapRow> rows;
    for (const SpectrumSet& s : sets) {
      const auto& le = s.values.at(OperatorTag::eps);
      const auto& l0 = s.values.at(OperatorTag::hom);
      const int k = std::min({k_max, static_cast<int>(le.size()), static_cast<int>(l0.size())});
      for (const GapRow& r : gap_table(s.epsilon, le, l0, k)) rows.push_back(r);
    }
    return rows;
  }

  static std::string gaps_csv(const std::vector<GapRow>& rows) {
    std::vector<std::vector<std::string>> out;
    for (const GapRow& r : rows)
      out.push_back({fmt(r.epsilon), std::to_string(r.k), fmt(r.lambda_eps), fmt(r.lambda_0), fmt(r.gap),
                     fmt(r.normalized_const)});
    return csv({"epsilon", "k", "lambda_eps", "lambda_0", "gap", "normalized_const"}, out);
  }

  /// Rate fits over the sweep; quantities with too few positive points are
  /// reported in `skipped` instead.
  static std::vector<RateReport> rates(const std::vector<nlohmann::json>& solutions,
                                       const std::vector<SpectrumSet>& sets, int k_max, double m_w_chi_w,
                                       std::vector<std::string>* skipped = nullptr) {
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    std::vector<std::string> order = {"h1_expansion", "h1_uncorrected", "l2_gap"};
    for (int k = 1; k <= k_max; ++k) order.push_back("eig_gap_k" + std::to_string(k));
    order.insert(order.end(), {"thm21_d7", "thm21_d8", "phi_supnorm"});

    for (const nlohmann::json& j : solutions) {
      const double eps = j.at("epsilon").get<double>();
      const double f_l2 = j.at("f_l2").get<double>();
      series["h1_expansion"].emplace_back(eps, j.at("expansion").at("w_h1").get<double>() / f_l2);
      series["h1_uncorrected"].emplace_back(eps, j.at("difference").at("h1").get<double>() / f_l2);
      series["l2_gap"].emplace_back(eps, j.at("difference").at("l2").get<double>());
      series["phi_supnorm"].emplace_back(eps, j.at("correctors").at("phi1_supnorm").get<double>());
    }
    for (const GapRow& r : gaps(sets, k_max))
      series["eig_gap_k" + std::to_string(r.k)].emplace_back(r.epsilon, r.gap);
    for (const SpectrumSet& s : sets) {
      const FirstEigRecord rec =
          first_eig_record(s.epsilon, s.values.at(OperatorTag::eps).at(0), s.values.at(OperatorTag::eps_prime).at(0),
                           s.values.at(OperatorTag::hom_prime).at(0), m_w_chi_w);
      series["thm21_d7"].emplace_back(s.epsilon, rec.d7);
      series["thm21_d8"].emplace_back(s.epsilon, rec.d8);
    }

    std::vector<RateReport> out;
    for (const std::string& name : order) {
      const auto it = series.find(name);
      if (it == series.end()) continue;
      try {
        out.push_back(rate_fit(it->second, name));
      } catch (const InsufficientDataError& e) {
        if (skipped) skipped->push_back(e.what());
      }
    }
    return out;
  }

  static std::string rates_csv(const std::vector<RateReport>& reports) {
    std::vector<std::vector<std::string>> rows;
    for (const RateReport& r : reports) rows.push_back({r.quantity, fmt(r.slope), fmt(r.intercept), fmt(r.r2)});
    return csv({"quantity", "slope", "intercept", "r2"}, rows);
  }

  static std::string flux_csv(const std::vector<FluxRecord>& rows) {
    std::vector<std::vector<std::string>> out;
    for (const FluxRecord& r : rows)
      out.push_back({fmt(r.epsilon), std::to_string(r.k), fmt(r.lambda), fmt(r.flux), fmt(r.ratio_upper),
                     fmt(r.ratio_lower)});
    return csv({"epsilon", "k", "lambda", "flux", "ratio_upper", "ratio_lower"}, out);
  }

  /// Log-log plot of every fitted series.
  static std::string rates_svg(const std::vector<RateReport>& reports) {
    const double width = 640, height = 480, margin = 60;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const RateReport& r : reports)
      for (const auto& [e, v] : r.points) {
        if (!(e > 0 && v > 0)) continue;
        xmin = std::min(xmin, std::log10(e));
        xmax = std::max(xmax, std::log10(e));
        ymin = std::min(ymin, std::log10(v));
        ymax = std::max(ymax, std::log10(v));
      }
    if (xmin >= xmax) xmax = xmin + 1;
    if (ymin >= ymax) ymax = ymin + 1;
    auto px = [&](double e) { return margin + (std::log10(e) - xmin) / (xmax - xmin) * (width - 2 * margin); };
    auto py = [&](double v) { return height - margin - (std::log10(v) - ymin) / (ymax - ymin) * (height - 2 * margin); };
    static const char* colours[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
                                    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#000000", "#aa5500"};
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << width / 2 << "\" y=\"" << height - 15 << "\" text-anchor=\"middle\">log10 epsilon</text>\n";
    s << "<text x=\"15\" y=\"" << height / 2 << "\" transform=\"rotate(-90 15 " << height / 2
      << ")\" text-anchor=\"middle\">log10 value</text>\n";
    int idx = 0;
    for (const RateReport& r : reports) {
      const char* colour = colours[idx % 12];
      std::string pts;
      for (const auto& [e, v] : r.points)
        if (e > 0 && v > 0) pts += fmt(px(e)) + "," + fmt(py(v)) + " ";
      s << "<polyline fill=\"none\" stroke=\"" << colour << "\" points=\"" << pts << "\"/>\n";
      s << "<text x=\"" << width - margin + 5 << "\" y=\"" << margin + 14 * idx << "\" font-size=\"10\" fill=\""
        << colour << "\">" << r.quantity << " (" << brief(r.slope) << ")</text>\n";
      ++idx;
    }
    s << "</svg>\n";
    return s.str();
  }

  int worker_count() const {
    int w = cfg_.workers;
    if (w <= 0) w = std::clamp(static_cast<int>(std::thread::hardware_concurrency()), 1, 4);
    return std::max(1, std::min<int>(w, static_cast<int>(cfg_.epsilons.size())));
  }

  /// Runs fn(index) for every configured epsilon on a bounded pool; results
  /// are indexed by epsilon position, so output order never depends on timing.
  template <class Fn>
  void for_each_epsilon(Fn&& fn) {
    const int n = static_cast<int>(cfg_.epsilons.size());
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    auto work = [&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < worker_count(); ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

 private:
  ExperimentConfig cfg_;
  CoefficientModel model_;
  std::once_flag cell_once_, u0_once_, l0p_once_;
  std::optional<PeriodicCellSolution> cell_;
  std::optional<GridFunction> u0_;
  double l0p_ = 0.0;
  std::mutex hom_mutex_;
  std::map<int, std::map<OperatorTag, std::vector<double>>> hom_cache_;
};

// ---------------------------------------------------------------------------
// Subcommands. Each returns 0 or throws StageError.

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) { write_file(p, j.dump(2) + "\n"); }

inline int cmd_cell(Experiment& ex, bool dump_fields, std::ostream& log) {
  const nlohmann::json j = ex.cell_json();
  in_stage(Stage::cell, [&] {
    write_json(ex.out("cell_solution.json"), j);
    if (dump_fields) write_file(ex.out("cell_fields.csv"), ex.cell_fields_csv());
    return 0;
  });
  log << "cell: a_hat = [" << brief(j["a_hat"][0]) << ", " << brief(j["a_hat"][1]) << "; " << brief(j["a_hat"][2])
      << ", " << brief(j["a_hat"][3]) << "], M(W chi_w) = " << brief(j["m_w_chi_w"]) << "\n";
  return 0;
}

inline int cmd_solve(Experiment& ex, double epsilon, bool dump_fields, std::ostream& log) {
  in_stage(Stage::config, [&] { return EpsProblem(epsilon, ex.model(), ex.domain_grid()).epsilon(); });
  EpsInstance inst;
  inst.epsilon = epsilon;
  ex.solve_instance(inst, dump_fields);
  in_stage(Stage::solve, [&] {
    write_json(ex.out("solution_" + eps_label(epsilon) + ".json"), inst.solution);
    if (dump_fields) write_file(ex.out("solution_" + eps_label(epsilon) + "_fields.csv"), inst.fields_csv);
    return 0;
  });
  log << "solve eps=" << eps_label(epsilon) << ": |w|_H1 = " << brief(inst.solution["expansion"]["w_h1"])
      << ", |u_eps - u_0|_L2 = " << brief(inst.solution["difference"]["l2"]) << "\n";
  return 0;
}

inline int cmd_eigs(Experiment& ex, double epsilon, int k, std::ostream& log) {
  in_stage(Stage::config, [&] { return EpsProblem(epsilon, ex.model(), ex.domain_grid()).epsilon(); });
  const SpectrumSet s = ex.spectra(epsilon, k);
  in_stage(Stage::eigs, [&] {
    write_file(ex.out("spectrum_" + eps_label(epsilon) + ".csv"), Experiment::spectrum_csv(s));
    return 0;
  });
  log << "eigs eps=" << eps_label(epsilon) << ": lambda_1 = " << brief(s.values.at(OperatorTag::eps).at(0)) << "\n";
  return 0;
}

inline std::vector<SpectrumSet> load_spectra(const Experiment& ex) {
  std::vector<SpectrumSet> sets;
  for (double eps : ex.config().epsilons)
    sets.push_back(Experiment::read_spectrum_csv(read_file(ex.out("spectrum_" + eps_label(eps) + ".csv")), eps));
  return sets;
}

inline int cmd_gaps(Experiment& ex, std::ostream& log) {
  in_stage(Stage::gaps, [&] {
    const auto rows = Experiment::gaps(load_spectra(ex), ex.config().k_eigen);
    write_file(ex.out("gaps.csv"), Experiment::gaps_csv(rows));
    log << "gaps: " << rows.size() << " rows\n";
    return 0;
  });
  return 0;
}

inline void write_rates(Experiment& ex, const std::vector<nlohmann::json>& solutions,
                        const std::vector<SpectrumSet>& sets, double m_w_chi_w, std::ostream& log) {
  std::vector<std::string> skipped;
  const auto reports = Experiment::rates(solutions, sets, ex.config().k_eigen, m_w_chi_w, &skipped);
  write_file(ex.out("rates.csv"), Experiment::rates_csv(reports));
  if (ex.config().emit_svg) write_file(ex.out("rates.svg"), Experiment::rates_svg(reports));
  for (const RateReport& r : reports)
    log << "rate " << r.quantity << ": slope " << brief(r.slope) << " (R^2 " << brief(r.r2) << ")" << (r.note.empty() ? "" : "; " + r.note) << "\n";
  for (const std::string& s : skipped) log << "rate skipped: " << s << "\n";
}

inline int cmd_rates(Experiment& ex, std::ostream& log) {
  in_stage(Stage::rates, [&] {
    std::vector<nlohmann::json> solutions;
    for (double eps : ex.config().epsilons)
      solutions.push_back(nlohmann::json::parse(read_file(ex.out("solution_" + eps_label(eps) + ".json"))));
    const nlohmann::json cell = nlohmann::json::parse(read_file(ex.out("cell_solution.json")));
    write_rates(ex, solutions, load_spectra(ex), cell.at("m_w_chi_w").get<double>(), log);
    return 0;
  });
  return 0;
}

inline void write_flux(Experiment& ex, const std::vector<FluxRecord>& rows, std::ostream& log) {
  write_file(ex.out("flux.csv"), Experiment::flux_csv(rows));
  log << "flux: " << rows.size() << " rows; note: " << square_domain_caveat << "\n";
}

inline int cmd_flux(Experiment& ex, std::ostream& log) {
  std::vector<std::vector<FluxRecord>> per_eps(ex.config().epsilons.size());
  ex.for_each_epsilon([&](int i) {
    const double eps = ex.config().epsilons[static_cast<std::size_t>(i)];
    const Spectrum s = in_stage(Stage::flux, [&] {
      return eps_spectrum(EpsProblem(eps, ex.model(), ex.domain_grid()), true, ex.config().k_eigen, ex.config().seed,
                          ex.eig_options());
    });
    per_eps[static_cast<std::size_t>(i)] = in_stage(Stage::flux, [&] { return flux_table(s, ex.config().k_eigen); });
  });
  std::vector<FluxRecord> rows;
  for (const auto& v : per_eps) rows.insert(rows.end(), v.begin(), v.end());
  in_stage(Stage::flux, [&] {
    write_flux(ex, rows, log);
    return 0;
  });
  return 0;
}

/// Full pipeline: cell, per-epsilon solves and spectra, then gaps, rates and flux.
inline int cmd_run(Experiment& ex, bool dump_fields, std::ostream& log) {
  ex.check_resolution();
  cmd_cell(ex, dump_fields, log);
  const int k = ex.config().k_eigen;
  ex.hom_spectra(k);

  std::vector<EpsInstance> inst(ex.config().epsilons.size());
  ex.for_each_epsilon([&](int i) {
    EpsInstance& in = inst[static_cast<std::size_t>(i)];
    in.epsilon = ex.config().epsilons[static_cast<std::size_t>(i)];
    ex.solve_instance(in, dump_fields);
    in.spectra = ex.spectra(in.epsilon, k);
    in.flux = in_stage(Stage::flux, [&] { return flux_table(*in.spectra.eps_grid_spectrum, k); });
  });

  std::vector<nlohmann::json> solutions;
  std::vector<SpectrumSet> sets;
  std::vector<FluxRecord> flux;
  for (const EpsInstance& in : inst) {
    const std::string label = eps_label(in.epsilon);
    in_stage(Stage::solve, [&] {
      write_json(ex.out("solution_" + label + ".json"), in.solution);
      if (dump_fields) write_file(ex.out("solution_" + label + "_fields.csv"), in.fields_csv);
      return 0;
    });
    in_stage(Stage::eigs, [&] {
      write_file(ex.out("spectrum_" + label + ".csv"), Experiment::spectrum_csv(in.spectra));
      return 0;
    });
    solutions.push_back(in.solution);
    sets.push_back(in.spectra);
    flux.insert(flux.end(), in.flux.begin(), in.flux.end());
  }
  in_stage(Stage::gaps, [&] {
    write_file(ex.out("gaps.csv"), Experiment::gaps_csv(Experiment::gaps(sets, k)));
    return 0;
  });
  in_stage(Stage::rates, [&] {
    write_rates(ex, solutions, sets, ex.cell().m_w_chi_w, log);
    return 0;
  });
  in_stage(Stage::flux, [&] {
    write_flux(ex, flux, log);
    return 0;
  });
  return 0;
}

/// Loads the config and runs the full pipeline; returns the process exit code.
inline int run_experiment(const std::string& config_path, std::ostream& log = std::cout,
                          std::ostream& err = std::cerr) {
  try {
    Experiment ex(in_stage(Stage::config, [&] { return load_config(config_path); }));
    return cmd_run(ex, false, log);
  } catch (const StageError& e) {
    err << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "[report] " << e.what() << "\n";
    return static_cast<int>(Stage::report);
  }
}

}  // namespace homlab::pipeline

#endif  // HOMLAB_PIPELINE_HPP
