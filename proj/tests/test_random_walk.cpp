#include <catch_amalgamated.hpp>

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "gfkpp/random_walk.hpp"

using namespace gfkpp;
using Catch::Approx;

namespace {

WalkGenerator uniform_walk(const DiscretizedGraph& dg, double alpha = 1.0) {
  return walk_rates(dg, conductances(dg, std::vector<double>(dg.graph().edge_count(), alpha)));
}

}  // namespace

TEST_CASE("walk rates") {
  const auto seg = discretize(fixtures::segment(), 10.0);
  const auto gen = uniform_walk(seg);
  // interior rate alpha L^2, reversible against m_n
  CHECK(gen.rate(gen.begin(4)) == Approx(100.0));
  const auto star = discretize(fixtures::star(), 8.0);
  const auto c = conductances(star, {1.0, 2.0, 3.0});
  const auto g = walk_rates(star, c);
  for (std::size_t x = 0; x < star.size(); ++x) {
    for (std::size_t i = g.begin(x); i < g.end(x); ++i) {
      const std::size_t y = g.target(i);
      double back = 0;
      for (std::size_t j = g.begin(y); j < g.end(y); ++j)
        if (g.target(j) == x) back = g.rate(j);
      CHECK(std::abs(g.measure(x) * g.rate(i) - g.measure(y) * back) <= 1e-14 * g.measure(x) * g.rate(i));
      CHECK(g.rate(i) == Approx(2.0 * c[i] * 8.0));
    }
  }
  auto bad = c;
  bad[0] *= 1.5;
  CHECK_THROWS_AS(walk_rates(star, bad), PreconditionError);

  const auto two = discretize(fixtures::segment(), 3.0);
  const auto g2 = uniform_walk(two);
  CHECK(g2.rate(g2.begin(0)) == g2.rate(g2.begin(1)));
}

TEST_CASE("generator_apply") {
  const double L = 16;
  const auto dg = discretize(fixtures::segment(2.0), L);
  for (double alpha : {1.0, 2.5}) {
    const auto gen = uniform_walk(dg, alpha);
    const auto affine = sample_profile(dg, [](std::size_t, double s) { return 3.0 * s - 1.0; });
    const auto quad = sample_profile(dg, [](std::size_t, double s) { return s * s; });
    const auto la = gen.apply(affine);
    const auto lq = gen.apply(quad);
    for (std::size_t x = 1; x + 1 < dg.size(); ++x) {
      CHECK(std::abs(la[x]) < 1e-9);
      CHECK(lq[x] == Approx(2.0 * alpha).epsilon(1e-10));
    }
  }
  const auto star = discretize(fixtures::star(), 8.0);
  const auto gs = walk_rates(star, conductances(star, {1.0, 2.0, 0.5}));
  for (double v : gs.apply(std::vector<double>(star.size(), 0.7))) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("kernel invariants and limits") {
  const auto dg = discretize(fixtures::star(), 8.0);
  const auto gen = uniform_walk(dg);
  const auto k0 = kernel(gen, 0.0);
  for (std::size_t x = 0; x < dg.size(); ++x)
    for (std::size_t y = 0; y < dg.size(); ++y) CHECK(k0.p(x, y) == (x == y ? 1.0 / dg.measure(x) : 0.0));

  const auto k = kernel(gen, 0.3);
  CHECK(k.max_asymmetry() <= 1e-10);
  CHECK(k.max_mass_error(gen) <= 1e-10);
  CHECK(k.min_entry() >= 0.0);

  const auto big = kernel(gen, 20.0);
  for (std::size_t x = 0; x < dg.size(); ++x)
    for (std::size_t y = 0; y < dg.size(); ++y) CHECK(big.p(x, y) == Approx(1.0 / dg.total_mass()).epsilon(1e-8));
  CHECK_THROWS_AS(kernel(gen, -1.0), PreconditionError);
}

TEST_CASE("uniformization agrees with the dense exponential") {
  const auto g = MetricGraph::build({"a", "b", "c"}, {{"e1", "a", "b", 1.0}, {"e2", "b", "c", 0.75}});
  const auto dg = discretize(g, std::vector<double>{4.0, 8.0});
  REQUIRE(dg.size() == 8);
  const auto gen = walk_rates(dg, conductances(dg, {1.0, 3.0}));
  const Eigen::MatrixXd q = gen.dense();
  for (double t : {0.01, 0.2, 1.3}) {
    const Eigen::MatrixXd e = (t * q).exp();
    const auto k = kernel(gen, t);
    for (std::size_t x = 0; x < dg.size(); ++x)
      for (std::size_t y = 0; y < dg.size(); ++y) CHECK(std::abs(k.p(x, y) * dg.measure(y) - e(x, y)) <= 1e-10);
    std::vector<double> f(dg.size());
    for (std::size_t x = 0; x < f.size(); ++x) f[x] = std::sin(double(x));
    const auto pf = semigroup_apply(gen, t, f);
    const Eigen::VectorXd ef = e * Eigen::Map<const Eigen::VectorXd>(f.data(), f.size());
    for (std::size_t x = 0; x < f.size(); ++x) CHECK(std::abs(pf[x] - ef[x]) <= 1e-9);
  }
}

TEST_CASE("semigroup properties and Chapman-Kolmogorov") {
  const auto dg = discretize(fixtures::segment(1.25), 8.0);
  const auto gen = uniform_walk(dg);
  for (double v : semigroup_apply(gen, 0.4, std::vector<double>(dg.size(), 1.0))) CHECK(v == Approx(1.0));
  std::vector<double> f(dg.size());
  for (std::size_t x = 0; x < f.size(); ++x) f[x] = (x % 3) - 1.0;
  CHECK(semigroup_apply(gen, 0.0, f) == f);
  for (double v : semigroup_apply(gen, 0.05, f)) CHECK(std::abs(v) <= 1.0 + 1e-12);

  const auto ks = kernel(gen, 0.1), kt = kernel(gen, 0.25), kst = kernel(gen, 0.35);
  Eigen::MatrixXd composed = ks.p * Eigen::VectorXd::Map(std::vector<double>(dg.size(), 1.0 / 8).data(), dg.size()).asDiagonal() * kt.p;
  CHECK((composed - kst.p).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("poisson window") {
  const auto w = poisson_window(0.0);
  CHECK(w.first == 0);
  CHECK(w.weights.size() == 1);
  for (double mean : {0.3, 5.0, 1234.5, 1e5}) {
    const auto pw = poisson_window(mean);
    double s = 0;
    for (double v : pw.weights) s += v;
    CHECK(s == Approx(1.0));
    const std::size_t mode = static_cast<std::size_t>(mean);
    CHECK(pw.first <= mode);
    CHECK(pw.last() >= mode);
    const double lw = -mean + mode * std::log(mean) - std::lgamma(mode + 1.0);
    CHECK(pw.weights[mode - pw.first] == Approx(std::exp(lw)).epsilon(1e-9));
  }
}

TEST_CASE("kernel diagnostics") {
  std::vector<DiscretizedGraph> levels{discretize(fixtures::segment(), 16.0), discretize(fixtures::segment(), 32.0)};
  const auto diag = kernel_diagnostics(levels, {0.1, 0.5, 1.0}, {1.0});
  REQUIRE(diag.fits.size() == 2);
  const auto& a = diag.fits[0];
  const auto& b = diag.fits[1];
  CHECK(a.C1 / b.C1 < 2.0);
  CHECK(b.C1 / a.C1 < 2.0);
  CHECK(a.C5 > 0.0);
  CHECK(b.C5 > 0.0);
  // the upper bound holds on every diagonal point
  const auto gen = uniform_walk(levels[0]);
  const auto k = kernel(gen, 0.5);
  for (std::size_t x = 0; x < levels[0].size(); ++x) CHECK(a.C1 >= k.p(x, x) * std::sqrt(0.5));
  std::ostringstream csv;
  diag.write_csv(csv);
  CHECK(csv.str().rfind("resolution,t,constant,value\n", 0) == 0);
  INFO(diag.summary());
  CHECK(diag.summary().find("L=16") != std::string::npos);
  CHECK_THROWS_AS(kernel_diagnostics({levels[0]}, {0.1}, {1.0}), PreconditionError);
}

TEST_CASE("local CLT error") {
  const auto g = fixtures::segment(4.0);
  const auto c8 = discretize(g, 8.0);
  CHECK(local_clt_error(c8, c8, 0.5, {1.0}) == 0.0);
  CHECK_THROWS_AS(local_clt_error(c8, discretize(g, 12.0), 0.5, {1.0}), PreconditionError);
  CHECK_THROWS_AS(local_clt_error(c8, discretize(g, 16.0), 0.5, {1.0}), PreconditionError);  // only 2x
  const auto fine = discretize(g, 64.0);
  const double e8 = local_clt_error(c8, fine, 0.5, {1.0});
  const double e16 = local_clt_error(discretize(g, 16.0), fine, 0.5, {1.0});
  CHECK(e16 < e8);
}
