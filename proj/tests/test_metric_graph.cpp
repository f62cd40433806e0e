#include <catch_amalgamated.hpp>

#include <cmath>

#include "fixtures.hpp"
#include "gfkpp/metric_graph.hpp"

using namespace gfkpp;
using Catch::Approx;

TEST_CASE("build_graph validates its input") {
  const auto seg = fixtures::segment();
  CHECK(seg.degree(seg.vertex_index("a")) == 1);
  CHECK(seg.degree(seg.vertex_index("b")) == 1);
  const auto st = fixtures::star();
  CHECK(st.degree(st.vertex_index("v0")) == 3);

  CHECK_THROWS_AS(MetricGraph::build({"a", "b"}, {{"e", "a", "b", -1.0}}), PreconditionError);
  CHECK_THROWS_AS(MetricGraph::build({"a", "b"}, {{"e", "a", "b", 0.0}}), PreconditionError);
  CHECK_THROWS_AS(MetricGraph::build({"a"}, {{"e", "a", "zz", 1.0}}), PreconditionError);
  CHECK_THROWS_AS(MetricGraph::build({"a", "b"}, {{"e", "a", "b", 1.0}, {"e", "b", "a", 1.0}}), PreconditionError);
  CHECK_THROWS_AS(MetricGraph::build({"a", "a"}, {{"e", "a", "a", 1.0}}), PreconditionError);
  CHECK_THROWS_AS(MetricGraph::build({"a", "b", "c"}, {{"e", "a", "b", 1.0}}), PreconditionError);
}

TEST_CASE("self-loops contribute two ends") {
  const auto g = MetricGraph::build({"v"}, {{"loop", "v", "v", 1.0}});
  CHECK(g.degree(0) == 2);
  CHECK_THROWS_AS(discretize(g, 2.0), PreconditionError);  // two demes on a loop
  const auto dg = discretize(g, 4.0);
  CHECK(dg.size() == 3);
  CHECK(dg.vertex_demes(0).size() == 2);
  // first and last deme meet across the vertex at distance 1/4 + 1/4
  CHECK(deme_distance(dg, 0, 2) == Approx(0.5));
}

TEST_CASE("discretize places demes at k/L") {
  const auto seg = fixtures::segment();
  const auto dg = discretize(seg, 8.0);
  REQUIRE(dg.size() == 7);
  for (std::size_t x = 0; x < 7; ++x) CHECK(dg.deme(x).coord == Approx((x + 1) / 8.0));
  CHECK(dg.vertex_gap(0) == Approx(1.0 / 8));
  CHECK(dg.vertex_gap(6) == Approx(1.0 / 8));

  const auto dg3 = discretize(seg, 3.0);
  REQUIRE(dg3.size() == 2);
  CHECK(dg3.vertex_gap(0) == Approx(1.0 / 3));
  CHECK(dg3.vertex_gap(1) == Approx(1.0 / 3));

  CHECK_THROWS_AS(discretize(seg, 2.5), PreconditionError);
  CHECK_THROWS_AS(discretize(seg, 2.0), PreconditionError);
  CHECK_THROWS_AS(discretize(fixtures::segment(1.3), 4.0), PreconditionError);
}

TEST_CASE("neighbor structure on the star") {
  const auto dg = discretize(fixtures::star(), 4.0);
  REQUIRE(dg.size() == 9);
  const auto hub = dg.vertex_demes(0);
  REQUIRE(hub.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) continue;
      bool found = false;
      for (const auto& n : dg.neighbors(hub[i]))
        if (n.deme == hub[j] && n.kind == NeighborKind::AcrossVertex) found = true;
      CHECK(found);
    }
  }
  // symmetric and irreflexive
  for (std::size_t x = 0; x < dg.size(); ++x) {
    const auto nbrs = dg.neighbors(x);
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
      const std::size_t y = nbrs[k].deme;
      CHECK(y != x);
      CHECK(dg.neighbors(y)[dg.reverse_slot(x, k)].deme == x);
    }
  }
  // leaf-adjacent demes see only their same-edge neighbor
  const std::size_t leaf = dg.vertex_demes(1)[0];
  CHECK(dg.neighbors(leaf).size() == 1);
}

TEST_CASE("deme_distance") {
  const auto dg = discretize(fixtures::star(), 8.0);
  CHECK(deme_distance(dg, 0, 1) == Approx(1.0 / 8));
  const auto hub = dg.vertex_demes(0);
  CHECK(deme_distance(dg, hub[0], hub[1]) == Approx(1.0 / 4));
  CHECK(deme_distance(dg, 3, 3) == 0.0);
}

TEST_CASE("gap bounds and total mass") {
  const auto g = MetricGraph::build({"a", "b", "c"}, {{"e1", "a", "b", 1.5}, {"e2", "b", "c", 2.0}, {"e3", "c", "a", 0.75}});
  const auto dg = discretize(g, std::vector<double>{4.0, 6.0, 8.0});
  double expected = 0.0;
  for (std::size_t e = 0; e < 3; ++e) expected += g.edge(e).length - 1.0 / dg.resolution(e);
  CHECK(dg.total_mass() == Approx(expected).epsilon(1e-14));
  for (std::size_t x = 0; x < dg.size(); ++x) {
    if (!dg.vertex_adjacent(x)) continue;
    const double L = dg.edge_resolution_of(x);
    CHECK(dg.vertex_gap(x) >= 1.0 / L - 1e-12);
    CHECK(dg.vertex_gap(x) < 2.0 / L);
  }
}

TEST_CASE("interpolate and graph_norm") {
  const auto dg = discretize(fixtures::star(), 4.0);
  std::vector<double> ones(dg.size(), 1.0);
  const auto f1 = interpolate(dg, ones);
  CHECK(f1.at(dg, {0, 0.0}) == 1.0);
  CHECK(f1.at(dg, {1, 0.6}) == Approx(1.0));
  CHECK(graph_norm(f1) == 1.0);

  std::vector<double> v(dg.size(), 0.0);
  const auto hub = dg.vertex_demes(0);
  v[hub[0]] = 0.0;
  v[hub[1]] = 0.5;
  v[hub[2]] = 1.0;
  const auto f = interpolate(dg, v);
  CHECK(f.vertex(0) == Approx(0.5));
  for (std::size_t x = 0; x < dg.size(); ++x) CHECK(f.at(dg, dg.point(x)) == Approx(v[x]));

  std::vector<double> w(dg.size(), 0.0);
  w[1] = 1.0;
  CHECK(interpolate(dg, w).at(dg, {0, 0.375}) == Approx(0.5));

  CHECK_THROWS_AS(interpolate(dg, std::vector<double>(dg.size(), 1.5)), PreconditionError);

  std::vector<double> shifted = v;
  shifted[4] += 0.3;
  CHECK(graph_norm(f, interpolate(dg, shifted)) == Approx(0.3));
  CHECK(graph_norm(f, f) == 0.0);
  CHECK(graph_norm(interpolate(dg, std::vector<double>(dg.size(), 0.25))) == 0.25);
}
