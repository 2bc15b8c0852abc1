// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "homlab/pipeline.hpp"
#include "test_models.hpp"

using namespace homlab;
using std::numbers::pi;

namespace {

// Frozen calibration floors (n = 256, epsilon in {1/4, 1/8, 1/16}).
constexpr double kFluxLowerFloor = 1.5;
// Measured Jacobian minima: layered 0.560, smooth-iso 0.632, identity 1.
constexpr double kJacobianFloor = 0.5;

const std::vector<double> kSweep = {0.25, 0.125, 0.0625};

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

std::string num(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Cell solution, per-epsilon solves and refined spectra on the default sweep.
struct Sweep {
  explicit Sweep(const std::string& a, const std::string& w, const std::string& f, int k) {
    ExperimentConfig cfg;
    cfg.presets = {a, w, f};
    cfg.epsilons = kSweep;
    cfg.k_eigen = k;
    cfg.workers = 0;
    ex = std::make_unique<pipeline::Experiment>(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    inst.resize(kSweep.size());
    ex->for_each_epsilon([&](int i) {
      inst[i].epsilon = kSweep[i];
      ex->solve_instance(inst[i], false);
    });
    solve_seconds = seconds_since(t0);
    ex->for_each_epsilon([&](int i) {
      inst[i].spectra = ex->spectra(kSweep[i], k);
      inst[i].flux = flux_table(*inst[i].spectra.eps_grid_spectrum, k);
    });
  }
  std::unique_ptr<pipeline::Experiment> ex;
  std::vector<pipeline::EpsInstance> inst;
  double solve_seconds = 0.0;

  std::vector<std::pair<double, double>> series(const std::function<double(const pipeline::EpsInstance&)>& f) const {
    std::vector<std::pair<double, double>> out;
    for (const auto& i : inst) out.emplace_back(i.epsilon, f(i));
    return out;
  }
};

Sweep& default_sweep() {
  static Sweep s("smooth-iso", "sine1", "sine-sine", 5);
  return s;
}

// ---------------------------------------------------------------------------

Outcome c1() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const PeriodicCellSolution c = solve_cell(make_preset("layered", "zero", "one"), Grid::periodic(128));
  const double t = seconds_since(t0);
  o.require(std::abs(c.a_hat(0, 0) - std::sqrt(3.0)) <= 1e-3, "a11 = " + num(c.a_hat(0, 0), 9));
  o.require(std::abs(c.a_hat(1, 1) - 2.0) <= 1e-3, "a22 = " + num(c.a_hat(1, 1), 9));
  o.require(std::abs(c.a_hat(0, 1)) <= 1e-10, "a12 = " + num(c.a_hat(0, 1), 3));
  o.require(t < 5.0, "runtime " + num(t, 3) + " s");
  return o;
}

Outcome c2() {
  Outcome o;
  const PeriodicCellSolution c = solve_cell(make_preset("identity", "sine1", "one"), Grid::periodic(128));
  o.require(std::abs(c.m_w_chi_w + 1.0 / (8 * pi * pi)) <= 1e-5, "M = " + num(c.m_w_chi_w, 9));
  double worst = 0.0;
  for (const char* a : {"identity", "layered", "smooth-iso"})
    for (const char* w : {"zero", "sine1", "sine-mix"})
      worst = std::max(worst, solve_cell(make_preset(a, w, "one"), Grid::periodic(128)).identity_26_residual);
  o.require(worst <= 1e-8, "max energy-identity residual " + num(worst, 3));
  return o;
}

Outcome c3() {
  Outcome o;
  const CoefficientModel m = fixtures::asymmetric_model();
  double d64 = 0.0, d128 = 0.0;
  for (int n : {64, 128}) {
    const Grid g = Grid::periodic(n);
    const auto d = identity_34_defect(m, solve_chi(m, g), solve_chi_w(m, g));
    (n == 64 ? d64 : d128) = std::max(d[0], d[1]);
  }
  o.require(d128 <= 1.0 / 128, "defect(128) = " + num(d128, 3) + " <= h");
  o.require(d64 / d128 >= 2.0 * (1 - 1e-9), "shrink factor " + num(d64 / d128, 3));
  double preset = 0.0;
  for (const char* a : {"identity", "layered", "smooth-iso"})
    for (const char* w : {"sine1", "sine-mix"}) {
      const PeriodicCellSolution c = solve_cell(make_preset(a, w, "one"), Grid::periodic(128));
      preset = std::max({preset, c.identity_34[0], c.identity_34[1]});
    }
  o.require(preset <= 1.0 / 128, "presets max defect " + num(preset, 3));
  return o;
}

Outcome c4() {
  Outcome o;
  const Grid g = Grid::dirichlet(256);
  const DirichletCorrectors id = solve_dirichlet_correctors(EpsProblem(0.25, make_preset("identity", "zero", "one"), g));
  const double dev = std::max(id.deviation[0].values.cwiseAbs().maxCoeff(), id.deviation[1].values.cwiseAbs().maxCoeff());
  o.require(dev <= 1e-12, "identity |Phi - x| = " + num(dev, 3));
  std::vector<std::pair<double, double>> pts;
  for (double e : kSweep)
    pts.emplace_back(e, solve_dirichlet_correctors(EpsProblem(e, make_preset("layered", "zero", "one"), g))
                            .deviation[0]
                            .values.cwiseAbs()
                            .maxCoeff());
  const RateReport r = rate_fit(pts, "phi_supnorm");
  o.require(r.slope >= 0.8 && r.slope <= 1.2, "layered slope " + num(r.slope));
  return o;
}

Outcome c5() {
  Outcome o;
  Sweep& s = default_sweep();
  const RateReport r = rate_fit(s.series([](const auto& i) {
    return i.solution["expansion"]["w_h1"].template get<double>() / i.solution["f_l2"].template get<double>();
  }));
  o.require(r.slope >= 0.8 && r.slope <= 1.2, "slope " + num(r.slope));
  for (const auto& i : s.inst) {
    const double w = i.solution["expansion"]["w_h1"], u = i.solution["difference"]["h1"];
    o.require(w < u, "eps " + num(i.epsilon) + ": " + num(w, 3) + " < " + num(u, 3));
  }
  o.require(s.solve_seconds <= 300.0, "sweep " + num(s.solve_seconds, 3) + " s");
  return o;
}

Outcome c6() {
  Outcome o;
  const RateReport r =
      rate_fit(default_sweep().series([](const auto& i) { return i.solution["difference"]["l2"].template get<double>(); }));
  o.require(r.slope >= 0.8, "slope " + num(r.slope));
  return o;
}

Outcome c7() {
  Outcome o;
  Sweep& s = default_sweep();
  const double m = s.ex->cell().m_w_chi_w;
  const RateReport r = rate_fit(s.series([&](const auto& i) {
    const auto& v = i.spectra.values;
    return first_eig_record(i.epsilon, v.at(OperatorTag::eps)[0], v.at(OperatorTag::eps_prime)[0],
                            v.at(OperatorTag::hom_prime)[0], m)
        .d8;
  }));
  o.require(r.slope >= 0.8, "d8 slope " + num(r.slope));

  ExperimentConfig cfg;
  cfg.presets = {"identity", "sine1", "one"};
  pipeline::Experiment ex(cfg);
  const auto spec = ex.spectra(0.0625, 1);
  const double target = 2 * pi * pi - 1.0 / (8 * pi * pi);
  const double l1 = spec.values.at(OperatorTag::eps)[0];
  o.require(std::abs(l1 - target) <= 0.02 * target, "identity eps=1/16: lambda_1 = " + num(l1, 7) + " vs " + num(target, 7));
  return o;
}

Outcome c8() {
  Outcome o;
  Sweep& s = default_sweep();
  std::vector<pipeline::SpectrumSet> sets;
  for (const auto& i : s.inst) sets.push_back(i.spectra);
  const auto rows = pipeline::Experiment::gaps(sets, 5);
  for (int k = 1; k <= 5; ++k) {
    std::vector<std::pair<double, double>> pts;
    double lo = 1e300, hi = 0.0;
    for (const GapRow& r : rows)
      if (r.k == k) {
        pts.emplace_back(r.epsilon, r.gap);
        lo = std::min(lo, r.normalized_const);
        hi = std::max(hi, r.normalized_const);
      }
    const RateReport rr = rate_fit(pts);
    o.require(rr.slope >= 0.8, "k=" + std::to_string(k) + " slope " + num(rr.slope, 3));
    o.require(hi / lo <= 5.0, "k=" + std::to_string(k) + " spread " + num(hi / lo, 3));
  }
  return o;
}

Outcome c9() {
  Outcome o;
  const Spectrum s = hom_spectrum(Mat2::Identity(), 0.0, false, Grid::dirichlet(64), 5, 1);
  const double pq[] = {2, 5, 5, 8, 10};
  for (int k = 0; k < 5; ++k) {
    const double ex = pq[k] * pi * pi;
    o.require(std::abs(s.values[k] - ex) <= 0.01 * ex, "lambda_" + std::to_string(k + 1) + " = " + num(s.values[k], 6));
  }
  const SparseOperator m = assemble_mass(s.grid);
  const Eigen::MatrixXd gram = s.vectors.transpose() * (m.matrix * s.vectors);
  const double orth = (gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff();
  o.require(orth <= 1e-8, "orthonormality " + num(orth, 3));
  o.require(*std::max_element(s.residuals.begin(), s.residuals.end()) <= 1e-8, "residuals");
  return o;
}

Outcome c10() {
  Outcome o;
  const Spectrum s = hom_spectrum(Mat2::Identity(), 0.0, false, Grid::dirichlet(128), 1, 1);
  const double ratio = flux_table(s, 1)[0].ratio_lower;
  o.require(std::abs(ratio - 4.0) <= 0.08, "identity flux/lambda " + num(ratio, 5));

  double lo = 1e300, up_lo = 1e300, up_hi = 0.0;
  int rows = 0;
  for (const auto& i : default_sweep().inst)
    for (const FluxRecord& r : i.flux) {
      if (r.flux < 0.0 || !std::isfinite(r.ratio_upper)) o.require(false, "invalid row");
      if (r.eps2_lambda() >= 1.0) continue;
      ++rows;
      lo = std::min(lo, r.ratio_lower);
      up_lo = std::min(up_lo, r.ratio_upper);
      up_hi = std::max(up_hi, r.ratio_upper);
    }
  o.require(rows > 0, std::to_string(rows) + " rows with eps^2 lambda < 1");
  o.require(lo >= kFluxLowerFloor, "min ratio_lower " + num(lo) + " >= " + num(kFluxLowerFloor));
  o.require(up_hi / up_lo <= 10.0, "ratio_upper spread " + num(up_hi / up_lo, 3));
  return o;
}

Outcome c11() {
  Outcome o;
  const Grid g = Grid::dirichlet(256);
  for (const char* a : {"identity", "layered", "smooth-iso"}) {
    double worst = 1e300;
    for (double e : kSweep)
      worst = std::min(worst, jacobian_check(solve_dirichlet_correctors(EpsProblem(e, make_preset(a, "zero", "one"), g)), e));
    o.require(worst > 0.0 && worst >= kJacobianFloor, std::string(a) + " min det " + num(worst));
  }
  return o;
}

Outcome c12() {
  Outcome o;
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "homlab_acceptance_determinism";
  fs::remove_all(root);
  std::vector<std::string> outputs;
  for (int run = 0; run < 2; ++run) {
    ExperimentConfig cfg;
    cfg.presets = {"layered", "sine1", "sine-sine"};
    cfg.cell_grid_n = 64;
    cfg.domain_grid_n = 128;
    cfg.epsilons = {0.5, 0.25, 0.125};
    cfg.k_eigen = 3;
    cfg.seed = 3;
    cfg.output_dir = (root / std::to_string(run)).string();
    pipeline::Experiment ex(cfg);
    std::ostringstream log;
    pipeline::cmd_run(ex, true, log);
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::directory_iterator(cfg.output_dir))
      if (entry.path().extension() == ".csv") files[entry.path().filename().string()] = pipeline::read_file(entry.path());
    std::string all;
    for (const auto& [name, body] : files) all += name + "\n" + body;
    outputs.push_back(all);
  }
  o.require(!outputs[0].empty() && outputs[0] == outputs[1],
            "two runs byte-identical over " + std::to_string(outputs[0].size()) + " bytes");
  return o;
}

}  // namespace

int main() {
  std::setvbuf(stdout, nullptr, _IONBF, 0);
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria = {
      {"1 effective-tensor oracle", c1},      {"2 effective-potential oracle", c2},
      {"3 corrector-potential identity", c3}, {"4 Dirichlet correctors", c4},
      {"5 expansion H1 rate", c5},            {"6 L2 rate", c6},
      {"7 first eigenvalue asymptotics", c7}, {"8 eigenvalue gap rates", c8},
      {"9 eigensolver sanity", c9},           {"10 boundary flux trends", c10},
      {"11 boundary-layer Jacobian", c11},    {"12 determinism", c12}};
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failed;
    std::printf("%s criterion %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", name, seconds_since(t0), o.detail.c_str());
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
