#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "gfkpp/sde.hpp"

using namespace gfkpp;
using Catch::Approx;

namespace {

std::vector<double> res(const DiscretizedGraph& dg) { return {dg.resolutions().begin(), dg.resolutions().end()}; }

double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("cell layout and nesting") {
  const auto g = fixtures::star();
  const auto c = CellLayout::of(g, {8, 8, 8});
  CHECK(c.size() == 48);
  CHECK(c.width(1) == 1.0 / 16);
  CHECK_THROWS_AS(CellLayout::of(g, {8.2, 8, 8}), PreconditionError);
  const auto dg = discretize(g, 8.0);
  CHECK_THROWS_AS(IncrementMap(CellLayout::of(g, {12, 12, 12}), dg), PreconditionError);
  CHECK_NOTHROW(IncrementMap(CellLayout::of(g, {24, 24, 24}), dg));
}

TEST_CASE("brownian increments have variance dt") {
  const auto g = fixtures::star();
  const auto fine = discretize(g, 16.0);
  const auto coarse = discretize(g, 8.0);
  const double dt = 1e-3;
  const WhiteNoiseLattice lat(g, res(fine), dt, 99);

  // exact scale: the summed cell variances times scale^2 equal dt
  for (const auto* dg : {&fine, &coarse}) {
    const IncrementMap map(lat.layout(), *dg);
    for (std::size_t x = 0; x < dg->size(); ++x) {
      const double L = dg->resolution(dg->deme(x).edge);
      const double len = dg->attachment(x) ? 1.0 / (2 * L) + dg->vertex_gap(x) : 1.0 / L;
      CHECK(map.scale(x) * map.scale(x) * len == Approx(1.0).epsilon(1e-12));
    }
  }

  const std::size_t steps = 100000;
  std::vector<double> s(coarse.size(), 0.0), ss(coarse.size(), 0.0);
  double cov = 0.0, cov2 = 0.0;
  const std::size_t a = 2, b = 3;  // neighbors on one edge, disjoint intervals
  std::vector<double> masses, inc;
  const IncrementMap map(lat.layout(), coarse);
  for (std::size_t k = 0; k < steps; ++k) {
    lat.masses(k, masses);
    map.apply(masses, inc);
    for (std::size_t x = 0; x < inc.size(); ++x) {
      s[x] += inc[x];
      ss[x] += inc[x] * inc[x];
    }
    const double p = inc[a] * inc[b] / dt;
    cov += p;
    cov2 += p * p;
  }
  const double n = static_cast<double>(steps);
  for (std::size_t x = 0; x < coarse.size(); ++x) {
    // Var of a sample variance of normals: 2 dt^2 / n
    CHECK(std::abs(ss[x] / n - dt) <= 4.0 * dt * std::sqrt(2.0 / n));
  }
  const double cm = cov / n;
  CHECK(std::abs(cm) <= 4.0 * std::sqrt((cov2 / n - cm * cm) / n));
}

TEST_CASE("coarse increments aggregate fine ones") {
  const auto g = fixtures::segment(1.0);
  const auto fine = discretize(g, 16.0);
  const auto coarse = discretize(g, 8.0);
  const WhiteNoiseLattice lat(g, res(fine), 1e-2, 1);
  std::vector<double> m;
  lat.masses(3, m);
  const auto dc = brownian_increments(lat, coarse, 3);
  // interior coarse deme k covers fine cells [4k+2, 4k+6)
  const std::size_t k = 3;
  double sum = 0.0;
  for (std::size_t c = 4 * k + 2; c < 4 * k + 6; ++c) sum += m[c];
  CHECK(dc[k] == Approx(sum * std::sqrt(8.0)).epsilon(1e-13));
  // same masses read at a different step differ
  CHECK(brownian_increments(lat, coarse, 4)[k] != dc[k]);
}

TEST_CASE("aggregation is associative") {
  const auto g = fixtures::star();
  const WhiteNoiseLattice lat(g, {32, 32, 32}, 1e-3, 5);
  std::vector<double> m;
  lat.masses(0, m);
  const auto mid = CellLayout::of(g, {16, 16, 16});
  const auto to = CellLayout::of(g, {4, 4, 4});
  const auto direct = aggregate_cells(lat.layout(), m, to);
  const auto twice = aggregate_cells(mid, aggregate_cells(lat.layout(), m, mid), to);
  REQUIRE(direct.size() == twice.size());
  for (std::size_t i = 0; i < direct.size(); ++i) CHECK(std::abs(direct[i] - twice[i]) <= 1e-13);
  CHECK_THROWS_AS(aggregate_cells(lat.layout(), m, CellLayout::of(g, {12, 12, 12})), PreconditionError);
}

TEST_CASE("sde step fixed points and guard") {
  const auto g = fixtures::star();
  const auto dg = discretize(g, 8.0);
  const auto model = SdeModel::build(dg, MacroParams::uniform(g, 1.0, 2.0, 1.0, 1.0));
  CHECK(model.dt_limit == Approx(0.1 / model.gen.max_exit_rate()));
  std::vector<double> dB(dg.size(), 0.3), scratch;
  for (double u : {0.0, 1.0}) {
    SDEState s{std::vector<double>(dg.size(), u), 0.0, 0, model.dt_limit};
    sde_step(model, s, dB, scratch);
    for (double v : s.U) CHECK(v == u);
    CHECK(s.step == 1);
  }
  SDEState bad{std::vector<double>(dg.size(), 0.5), 0.0, 0, 2 * model.dt_limit};
  CHECK_THROWS_AS(sde_step(model, bad, dB, scratch), PreconditionError);
  SDEState huge{std::vector<double>(dg.size(), 0.5), 0.0, 0, model.dt_limit};
  std::vector<double> inf(dg.size(), std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(sde_step(model, huge, inf, scratch), NumericalError);

  // large noise is projected back into [0, 1]
  SDEState s{std::vector<double>(dg.size(), 0.5), 0.0, 0, model.dt_limit};
  std::vector<double> kick(dg.size());
  for (std::size_t x = 0; x < kick.size(); ++x) kick[x] = x % 2 ? 50.0 : -50.0;
  sde_step(model, s, kick, scratch);
  for (double v : s.U) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("vertex growth scaling") {
  const auto g = fixtures::star();
  const auto dg = discretize(g, 8.0);
  const auto macro = MacroParams::uniform(g, 1.0, 0.5, 1.0, 2.0);
  const auto matched = SdeModel::build(dg, macro);
  const auto literal = SdeModel::build(dg, macro, {}, VertexGrowthScaling::Literal);
  for (std::size_t x : dg.vertex_demes(0)) {
    CHECK(matched.growth[x] == Approx(0.5 + 8.0 * 2.0 / 12.0));
    CHECK(literal.growth[x] == Approx(0.5 + 8.0 * 2.0));
    CHECK(matched.noise[x] == Approx(1.0 / (3.0 / 16.0)));
  }
  CHECK(matched.growth[dg.first_deme(0) + 3] == 0.5);
  CHECK(matched.noise[dg.first_deme(0) + 3] == 8.0);
}

TEST_CASE("noise-free scheme is explicit Euler") {
  const auto g = fixtures::star();
  const auto dg = discretize(g, 8.0);
  const auto model = SdeModel::build(dg, MacroParams::uniform(g, 1.0, 0.0, 0.0));
  std::vector<double> u(dg.size());
  for (std::size_t x = 0; x < u.size(); ++x) u[x] = 0.5 + 0.4 * std::sin(static_cast<double>(x));
  SDEState s{u, 0.0, 0, model.dt_limit};
  std::vector<double> dB(dg.size(), 1.0), scratch;
  const auto lap = model.gen.apply(u);
  sde_step(model, s, dB, scratch);
  for (std::size_t x = 0; x < u.size(); ++x) CHECK(s.U[x] == Approx(u[x] + model.dt_limit * lap[x]).epsilon(1e-14));
}

TEST_CASE("noise-free scheme tracks the semigroup") {
  const auto g = fixtures::star();
  const auto dg = discretize(g, 8.0);
  const auto model = SdeModel::build(dg, MacroParams::uniform(g, 1.0, 0.0, 0.0));
  const auto u0 = sample_profile(dg, [](std::size_t e, double s) { return e == 0 ? 1.0 - 0.5 * s : 0.2 * s; });
  const double T = 0.5, dt = 1e-4, q = model.gen.max_exit_rate();
  const auto exact = semigroup_apply(model.gen, T, u0);
  auto err = [&](double h) {
    const WhiteNoiseLattice lat(g, res(dg), h, 0);
    return sup_diff(run_sde(dg, model, u0, T, lat, {T}).values[0], exact);
  };
  const double e1 = err(dt), e2 = err(dt / 2);
  CHECK(e1 <= 5.0 * dt * T * q * q);
  CHECK(e1 <= 1e-2);
  CHECK(e1 / e2 == Approx(2.0).epsilon(0.2));
}

TEST_CASE("run_sde determinism and constants") {
  const auto g = fixtures::star();
  const auto dg = discretize(g, 8.0);
  const auto model = SdeModel::build(dg, MacroParams::uniform(g, 1.0, 1.0, 1.0, 1.0));
  const double dt = 1e-4, T = 0.1;
  const auto grid = uniform_grid(0.0, T, 4);
  const WhiteNoiseLattice lat(g, res(dg), dt, 42);
  const std::vector<double> half(dg.size(), 0.5);
  const auto a = run_sde(dg, model, half, T, lat, grid);
  const auto b = run_sde(dg, model, half, T, lat, grid);
  CHECK(a.values == b.values);
  CHECK(a.events == 1000);
  CHECK(a.values[0] == half);
  const auto one = run_sde(dg, model, std::vector<double>(dg.size(), 1.0), T, lat, grid);
  for (const auto& row : one.values)
    for (double v : row) CHECK(v == 1.0);
  CHECK_THROWS_AS(run_sde(dg, model, half, 0.10005, lat, grid), PreconditionError);
  CHECK_THROWS_AS(run_sde(dg, model, half, T, lat, {0.00005}), PreconditionError);
  const WhiteNoiseLattice coarse_dt(g, res(dg), 0.01, 42);
  CHECK_THROWS_AS(run_sde(dg, model, half, T, coarse_dt, grid), PreconditionError);
}

TEST_CASE("logistic drift raises the mean at the center") {
  const auto g = fixtures::segment(1.0);
  const auto dg = discretize(g, 8.0);
  const auto model = SdeModel::build(dg, MacroParams::uniform(g, 1.0, 4.0, 1.0));
  const auto u0 = sample_profile(dg, [](std::size_t, double s) { return s < 0.5 ? 1.0 : 0.0; });
  const double T = 0.4, dt = 5e-4;
  SdeEnsembleConfig cfg{u0, T, dt, uniform_grid(0.0, T, 4), 200, 8, {}, 0};
  const auto m = sde_ensemble(dg, model, cfg);
  const std::size_t center = dg.size() / 2;
  for (std::size_t i = 1; i < m.times.size(); ++i) {
    INFO("time " << m.times[i]);
    CHECK(m.mean[i][center] > m.mean[i - 1][center] - 2.0 * m.stderr_[i][center]);
  }
  CHECK(m.mean.back()[center] > m.mean.front()[center]);
}

TEST_CASE("coupling error") {
  const auto g = fixtures::star();
  const auto dg8 = discretize(g, 8.0);
  const auto dg16 = discretize(g, 16.0);
  auto init = [](std::size_t e, double s) { return e == 0 ? 0.8 : 0.3 + 0.2 * s; };
  CouplingConfig cfg{init, 0.1, 1e-4, uniform_grid(0.0, 0.1, 4), 8, 3, 0};
  const auto noisy = MacroParams::uniform(g, 1.0, 1.0, 1.0, 1.0);
  CHECK(coupling_error(dg8, dg8, noisy, cfg).value == 0.0);
  CHECK(coupling_error(dg8, dg16, noisy, cfg).value > 0.0);

  // no noise: replicate independent, equal to the squared ODE discrepancy
  const auto quiet = MacroParams::uniform(g, 1.0, 1.0, 0.0, 1.0);
  const auto c = coupling_error(dg8, dg16, quiet, cfg);
  CHECK(c.stderr_ == Approx(0.0).margin(1e-15));
  const auto m8 = SdeModel::build(dg8, quiet), m16 = SdeModel::build(dg16, quiet);
  const WhiteNoiseLattice l8(g, res(dg8), 1e-4, 0), l16(g, res(dg16), 1e-4, 0);
  const auto r8 = run_sde(dg8, m8, sample_profile(dg8, init), 0.1, l8, cfg.grid);
  const auto r16 = run_sde(dg16, m16, sample_profile(dg16, init), 0.1, l16, cfg.grid);
  double worst = 0.0;
  for (std::size_t i = 0; i < cfg.grid.size(); ++i)
    for (std::size_t x = 0; x < dg8.size(); ++x) {
      const double d = r8.values[i][x] - r16.values[i][*dg16.deme_at(dg8.point(x), 1e-9)];
      worst = std::max(worst, d * d);
    }
  CHECK(c.value == Approx(worst).epsilon(1e-12));

  const auto dg12 = discretize(g, 12.0);
  CHECK_THROWS_AS(coupling_error(dg8, dg12, noisy, cfg), PreconditionError);
}
