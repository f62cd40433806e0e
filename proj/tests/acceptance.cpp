// Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "gfkpp/gfkpp.hpp"

using namespace gfkpp;

namespace {

const std::filesystem::path kConfigs = GFKPP_CONFIG_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<Outcome()> run;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// 1. kernel invariants on the star
Outcome kernel_invariants() {
  constexpr double kSym = 1e-10, kMass = 1e-10, kCK = 1e-8;
  const auto dg = discretize(fixtures::star(), 8.0);
  const auto gen = walk_rates(dg, conductances(dg, {1.0, 1.0, 1.0}));
  double sym = 0, mass = 0, lo = 1, ck = 0;
  for (double t : {0.1, 0.5, 1.0}) {
    const auto k = kernel(gen, t);
    sym = std::max(sym, k.max_asymmetry());
    mass = std::max(mass, k.max_mass_error(gen));
    lo = std::min(lo, k.min_entry());
  }
  // p(s+t) = p(s) diag(m) p(t)
  Eigen::VectorXd m(static_cast<Eigen::Index>(dg.size()));
  for (std::size_t x = 0; x < dg.size(); ++x) m[static_cast<Eigen::Index>(x)] = dg.measure(x);
  for (auto [s, t] : {std::pair{0.1, 0.5}, std::pair{0.5, 0.5}, std::pair{0.1, 1.0}}) {
    const Eigen::MatrixXd comp = kernel(gen, s).p * m.asDiagonal() * kernel(gen, t).p;
    ck = std::max(ck, (comp - kernel(gen, s + t).p).cwiseAbs().maxCoeff());
  }
  return {sym <= kSym && mass <= kMass && lo >= 0.0 && ck <= kCK,
          "asymmetry=" + num(sym) + " mass_error=" + num(mass) + " min_entry=" + num(lo) + " ck_error=" + num(ck)};
}

// 2. local CLT trend on an edge of length 4
Outcome local_clt() {
  constexpr double kMinRatio = 1.5;
  const auto g = fixtures::segment(4.0);
  const auto oracle = discretize(g, 128.0);
  const double e8 = local_clt_error(discretize(g, 8.0), oracle, 0.5, {1.0});
  const double e16 = local_clt_error(discretize(g, 16.0), oracle, 0.5, {1.0});
  const double ratio = e8 / e16;
  return {ratio >= kMinRatio, "err8=" + num(e8) + " err16=" + num(e16) + " ratio=" + num(ratio)};
}

// 3. fitted heat-kernel constants at L = 16 and 32 on the star
Outcome kernel_uniformity() {
  constexpr double kFactor = 2.0;
  const auto g = fixtures::star();
  const auto diag = kernel_diagnostics({discretize(g, 16.0), discretize(g, 32.0)}, {0.1, 0.5, 1.0}, {1.0, 1.0, 1.0});
  const auto& a = diag.fits[0];
  const auto& b = diag.fits[1];
  const double r1 = std::max(a.C1, b.C1) / std::min(a.C1, b.C1);
  const double r5 = std::max(a.C5, b.C5) / std::min(a.C5, b.C5);
  const bool finite = a.C1 > 0 && b.C1 > 0 && a.C5 > 0 && b.C5 > 0;
  return {finite && r1 <= kFactor && r5 <= kFactor, "C1=" + num(a.C1) + "/" + num(b.C1) + " C5=" + num(a.C5) + "/" +
                                                          num(b.C5) + " ratios=" + num(r1) + "," + num(r5)};
}

// Three demes with M = 2, interior and vertex bias on.
struct Tiny {
  MetricGraph g = fixtures::segment(1.0);
  DiscretizedGraph dg = discretize(g, 4.0);
  MicroParams micro = micro_from_macro(MacroParams::uniform(g, 1.0, 3.0, 8.0, 2.0), dg);
};

// 4. lumpability
Outcome lumpability() {
  constexpr double kTol = 1e-12;
  const Tiny t;
  if (t.dg.size() != 3 || t.micro.capacity[0] != 2) return {false, "unexpected instance"};
  const double err = lumpability_error(t.dg, t.micro);
  return {err <= kTol, "states=64 max_entry_gap=" + num(err)};
}

// 5. exact and Monte Carlo duality
Outcome duality() {
  constexpr double kExact = 1e-8, kSigmas = 4.0;
  const Tiny t;
  const std::vector<double> u0{0.9, 0.4, 0.1};
  const std::vector<std::size_t> probes{0, 1, 2};
  const auto ex = duality_exact(t.dg, t.micro, u0, probes, 0.5);
  const auto mc = duality_gap_mc(t.dg, t.micro, u0, probes, 0.5, 10000, 2024);
  const double zl = std::abs(mc.lhs - ex.lhs) / mc.lhs_stderr;
  const double zr = std::abs(mc.rhs - ex.rhs) / mc.rhs_stderr;
  return {ex.gap() <= kExact && zl <= kSigmas && zr <= kSigmas,
          "exact lhs=" + num(ex.lhs) + " rhs=" + num(ex.rhs) + " gap=" + num(ex.gap()) + "; mc lhs=" + num(mc.lhs) +
              " (" + num(zl) + " se) rhs=" + num(mc.rhs) + " (" + num(zr) + " se)"};
}

// 6. pure-voter mean identity on a 12-deme path
Outcome voter_mean() {
  constexpr double kSigmas = 4.0;
  const auto g = fixtures::segment(1.0);
  const auto dg = discretize(g, 13.0);
  MicroOptions opt;
  opt.capacity = {16};
  const auto micro = micro_from_macro(MacroParams::uniform(g, 1.0, 0.0, 3.25), dg, opt);
  for (double b : micro.bias)
    if (b != 0.0) return {false, "bias not zero"};
  std::vector<double> u0(dg.size());
  for (std::size_t x = 0; x < dg.size(); ++x) u0[x] = x < 4 ? 1.0 : (x < 8 ? 0.5 : 0.0);
  const double T = 0.5;
  const auto m = ensemble(dg, micro, EnsembleConfig{u0, T, {T}, 10000, 77, false, 0});
  const auto exact = semigroup_apply(voter_dual_generator(dg, micro), T, u0);
  double worst = 0.0;
  for (std::size_t x = 0; x < dg.size(); ++x) worst = std::max(worst, std::abs(m.mean[0][x] - exact[x]) / m.stderr_[0][x]);
  return {dg.size() == 12 && worst <= kSigmas, "demes=" + std::to_string(dg.size()) + " max_z=" + num(worst)};
}

// 7. noise-free SDE against the semigroup
Outcome sde_reduction() {
  constexpr double kSup = 1e-2, kLo = 1.6, kHi = 2.4;
  const auto g = fixtures::star();
  const auto dg = discretize(g, 8.0);
  const auto model = SdeModel::build(dg, MacroParams::uniform(g, 1.0, 0.0, 0.0));
  const auto u0 = sample_profile(dg, [](std::size_t e, double s) { return e == 0 ? 1.0 - 0.5 * s : 0.2 * s; });
  const double T = 0.5;
  const auto exact = semigroup_apply(model.gen, T, u0);
  auto err = [&](double dt) {
    const WhiteNoiseLattice lat(g, {8, 8, 8}, dt, 0);
    const auto u = run_sde(dg, model, u0, T, lat, {T}).values[0];
    double w = 0;
    for (std::size_t x = 0; x < u.size(); ++x) w = std::max(w, std::abs(u[x] - exact[x]));
    return w;
  };
  const double e1 = err(1e-4), e2 = err(5e-5);
  const double ratio = e1 / e2;
  return {e1 <= kSup && ratio >= kLo && ratio <= kHi, "err=" + num(e1) + " err_half=" + num(e2) + " ratio=" + num(ratio)};
}

// Star with unit coefficients and a hub that grows.
MacroParams star_macro(const MetricGraph& g) {
  auto m = MacroParams::uniform(g, 1.0, 1.0, 1.0, 0.0);
  m.vertex_growth[g.vertex_index("v0")] = 1.0;
  return m;
}

double radial(std::size_t, double s) { return 0.8 - 0.6 * s; }

// 8. SDE self-coupling trend
Outcome self_coupling() {
  constexpr double kMinRatio = 1.3;
  const auto g = fixtures::star();
  const auto macro = star_macro(g);
  const double T = 0.5;
  const double dt = T / 10240;  // guard at L = 32 is 0.1/2048
  CouplingConfig cfg{radial, T, dt, uniform_grid(0.0, T, 10), 100, 31, 0};
  const auto a = coupling_error(discretize(g, 8.0), discretize(g, 16.0), macro, cfg);
  cfg.seed = 32;
  const auto b = coupling_error(discretize(g, 16.0), discretize(g, 32.0), macro, cfg);
  const double ratio = a.value / b.value;
  return {a.value > b.value && ratio >= kMinRatio, "e(8,16)=" + num(a.value) + "+-" + num(a.stderr_) + " e(16,32)=" +
                                                       num(b.value) + "+-" + num(b.stderr_) + " ratio=" + num(ratio)};
}

// 9. scaling round trip and validator
Outcome round_trip() {
  constexpr double kUlps = 4.0;
  const auto g = fixtures::star();
  MacroParams macro{{1.0, 2.0, 0.5}, {1.0, 0.5, 2.0}, {1.0, 0.5, 0.25}, {1.0, 0.5, 0.5, 0.5}};
  bool exact = true, zero = true;
  for (double L : {8.0, 16.0, 32.0}) {
    const auto dg = discretize(g, L);
    const auto micro = micro_from_macro(macro, dg);
    const auto back = macro_from_micro(micro, dg);
    exact = exact && back.alpha == macro.alpha && back.beta == macro.beta && back.gamma == macro.gamma &&
            back.vertex_growth == macro.vertex_growth;
    for (const auto& c : validate_conditions(dg, micro, macro).checks) zero = zero && c.passed && c.residual == 0.0;
  }
  // randomized coefficients, non-integral M: beta and beta^ within a few ulps
  RandomStream rng(9, 0);
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const auto dg = discretize(g, 8.0 + 8.0 * static_cast<double>(rng.below(3)));
    const MacroParams m = MacroParams::uniform(g, 0.2 + 3 * rng.uniform(), 5 * rng.uniform(), 0.1 + 2 * rng.uniform(),
                                               5 * rng.uniform());
    const auto back = macro_from_micro(micro_from_macro(m, dg), dg);
    for (std::size_t e = 0; e < 3; ++e) worst = std::max(worst, std::abs(back.beta[e] - m.beta[e]) / (m.beta[e] * 0x1p-52));
    for (std::size_t v = 0; v < 4; ++v)
      if (m.vertex_growth[v] > 0)
        worst = std::max(worst, std::abs(back.vertex_growth[v] - m.vertex_growth[v]) / (m.vertex_growth[v] * 0x1p-52));
  }
  return {exact && zero && worst <= kUlps, std::string("integral configs exact=") + (exact ? "yes" : "no") +
                                               " residuals_zero=" + (zero ? "yes" : "no") + " random_max_ulps=" + num(worst)};
}

// 10. BVM vs SDE ensemble means across the ladder
Outcome shared_limit() {
  constexpr double kSigmas = 2.0;
  auto c = load_experiment(kConfigs / "converge_star.json");
  c.kernel_times.clear();
  const auto rep = run_experiment(c, 20240601);
  std::ostringstream os;
  for (const auto& l : rep.levels)
    os << "L=" << l.resolution << ":" << num(l.distance) << "+-" << num(l.distance_stderr) << " (" << num(l.bvm_seconds + l.sde_seconds)
       << "s) ";
  bool ok = rep.levels.size() == 3 && rep.distances_nonincreasing(kSigmas);
  for (const auto& l : rep.levels) ok = ok && l.distance >= 0.0;
  return {ok, os.str()};
}

// 11. deterministic KPP front speed
Outcome front() {
  constexpr double kRel = 0.15;
  const auto c = load_experiment(kConfigs / "front_kpp.json");
  const auto dg = level(c, 16.0);
  const auto model = SdeModel::build(dg, c.macro);
  const WhiteNoiseLattice lat(c.graph, {16.0}, choose_dt(c, model), 0);
  const auto tr = run_sde(dg, model, sample_profile(dg, c.profile()), c.t_end, lat, c.sample_grid());
  const auto f = front_speed(dg, tr, 0.5);
  const double rel = std::abs(f.speed - 2.0) / 2.0;
  return {c.macro.gamma[0] == 0.0 && rel <= kRel, "speed=" + num(f.speed) + " rel_error=" + num(rel) + " T=" + num(c.t_end)};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "kernel invariants", 5, kernel_invariants},
      {2, "local CLT trend", 30, local_clt},
      {3, "heat-kernel uniformity", 60, kernel_uniformity},
      {4, "lumpability oracle", 1, lumpability},
      {5, "exact duality", 60, duality},
      {6, "pure-voter mean identity", 60, voter_mean},
      {7, "SDE deterministic reduction", 30, sde_reduction},
      {8, "SDE self-coupling", 300, self_coupling},
      {9, "scaling round trip", 1, round_trip},
      {10, "BVM-SDE shared limit", 600, shared_limit},
      {11, "deterministic front speed", 120, front},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.limit_seconds;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::printf("criterion %2d %-28s %s  %s  [%.2fs / %.0fs%s]\n", c.id, c.name, pass ? "PASS" : "FAIL", o.detail.c_str(), secs,
                c.limit_seconds, in_time ? "" : " over budget");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
