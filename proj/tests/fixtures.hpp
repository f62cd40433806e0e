#pragma once

#include <string>
#include <vector>

#include "gfkpp/metric_graph.hpp"

namespace fixtures {

inline gfkpp::MetricGraph star(int arms = 3, double length = 1.0) {
  std::vector<std::string> vs{"v0"};
  std::vector<gfkpp::EdgeSpec> es;
  for (int i = 1; i <= arms; ++i) {
    vs.push_back("v" + std::to_string(i));
    es.push_back({"e" + std::to_string(i), "v0", "v" + std::to_string(i), length});
  }
  return gfkpp::MetricGraph::build(vs, es);
}

inline gfkpp::MetricGraph segment(double length = 1.0) {
  return gfkpp::MetricGraph::build({"a", "b"}, {{"e", "a", "b", length}});
}

}  // namespace fixtures
