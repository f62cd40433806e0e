#pragma once

// Finite metric graphs, their deme discretizations, and piecewise-linear
// density fields on them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gfkpp/error.hpp"

namespace gfkpp {

inline constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

enum class EdgeSide : std::uint8_t { Initial, Terminal };

/// One end of an edge; a self-loop contributes two ends to its vertex.
struct EdgeEnd {
  std::size_t edge = npos;
  EdgeSide side = EdgeSide::Initial;
  friend bool operator==(const EdgeEnd&, const EdgeEnd&) = default;
};

struct EdgeSpec {
  std::string id;
  std::string from;
  std::string to;
  double length = 0.0;
};

struct Edge {
  std::string id;
  std::size_t from = npos;
  std::size_t to = npos;
  double length = 0.0;

  std::size_t endpoint(EdgeSide side) const { return side == EdgeSide::Initial ? from : to; }
};

/// A point of the graph given by an edge and the arclength from its initial vertex.
struct GraphPoint {
  std::size_t edge = npos;
  double coord = 0.0;
};

class MetricGraph {
 public:
  MetricGraph() = default;

  static MetricGraph build(std::vector<std::string> vertex_ids, const std::vector<EdgeSpec>& edges) {
    MetricGraph g;
    g.vertex_ids_ = std::move(vertex_ids);
    for (std::size_t v = 0; v < g.vertex_ids_.size(); ++v) {
      const auto [it, inserted] = g.vertex_lookup_.emplace(g.vertex_ids_[v], v);
      detail::require(inserted, "duplicate vertex id '" + g.vertex_ids_[v] + "'");
    }
    detail::require(!edges.empty(), "graph has no edges");
    g.incidence_.resize(g.vertex_ids_.size());
    for (const auto& spec : edges) {
      detail::require(std::isfinite(spec.length) && spec.length > 0.0,
                      "edge '" + spec.id + "' has nonpositive length");
      const auto from = g.vertex_lookup_.find(spec.from);
      const auto to = g.vertex_lookup_.find(spec.to);
      detail::require(from != g.vertex_lookup_.end(),
                      "edge '" + spec.id + "' references undeclared vertex '" + spec.from + "'");
      detail::require(to != g.vertex_lookup_.end(),
                      "edge '" + spec.id + "' references undeclared vertex '" + spec.to + "'");
      const std::size_t e = g.edges_.size();
      const auto [it, inserted] = g.edge_lookup_.emplace(spec.id, e);
      detail::require(inserted, "duplicate edge id '" + spec.id + "'");
      g.edges_.push_back(Edge{spec.id, from->second, to->second, spec.length});
      g.incidence_[from->second].push_back(EdgeEnd{e, EdgeSide::Initial});
      g.incidence_[to->second].push_back(EdgeEnd{e, EdgeSide::Terminal});
    }
    for (std::size_t v = 0; v < g.vertex_ids_.size(); ++v) {
      detail::require(!g.incidence_[v].empty(), "vertex '" + g.vertex_ids_[v] + "' has no incident edge");
    }
    g.compute_vertex_distances();
    return g;
  }

  std::size_t vertex_count() const { return vertex_ids_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  const Edge& edge(std::size_t e) const { return edges_[e]; }
  std::span<const Edge> edges() const { return edges_; }
  const std::string& vertex_id(std::size_t v) const { return vertex_ids_[v]; }

  /// Edge ends meeting v, in declaration order. This order indexes E(v) everywhere.
  std::span<const EdgeEnd> incidence(std::size_t v) const { return incidence_[v]; }
  std::size_t degree(std::size_t v) const { return incidence_[v].size(); }

  std::size_t vertex_index(std::string_view id) const {
    const auto it = vertex_lookup_.find(std::string(id));
    detail::require(it != vertex_lookup_.end(), "unknown vertex id '" + std::string(id) + "'");
    return it->second;
  }
  std::size_t edge_index(std::string_view id) const {
    const auto it = edge_lookup_.find(std::string(id));
    detail::require(it != edge_lookup_.end(), "unknown edge id '" + std::string(id) + "'");
    return it->second;
  }

  double vertex_distance(std::size_t a, std::size_t b) const { return vertex_dist_[a * vertex_count() + b]; }

  double total_length() const {
    double sum = 0.0;
    for (const auto& e : edges_) sum += e.length;
    return sum;
  }

  /// Shortest-path distance between two points of the graph.
  double distance(const GraphPoint& p, const GraphPoint& q) const {
    const Edge& ep = edges_[p.edge];
    const Edge& eq = edges_[q.edge];
    double best = std::numeric_limits<double>::infinity();
    if (p.edge == q.edge) best = std::abs(p.coord - q.coord);
    const double p_to[2] = {p.coord, ep.length - p.coord};
    const double q_to[2] = {q.coord, eq.length - q.coord};
    const std::size_t p_vertex[2] = {ep.from, ep.to};
    const std::size_t q_vertex[2] = {eq.from, eq.to};
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        best = std::min(best, p_to[i] + vertex_distance(p_vertex[i], q_vertex[j]) + q_to[j]);
      }
    }
    return best;
  }

 private:
  void compute_vertex_distances() {
    const std::size_t n = vertex_count();
    vertex_dist_.assign(n * n, std::numeric_limits<double>::infinity());
    for (std::size_t v = 0; v < n; ++v) vertex_dist_[v * n + v] = 0.0;
    for (const auto& e : edges_) {
      double& d1 = vertex_dist_[e.from * n + e.to];
      double& d2 = vertex_dist_[e.to * n + e.from];
      d1 = std::min(d1, e.length);
      d2 = std::min(d2, e.length);
    }
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          vertex_dist_[i * n + j] = std::min(vertex_dist_[i * n + j], vertex_dist_[i * n + k] + vertex_dist_[k * n + j]);
  }

  std::vector<std::string> vertex_ids_;
  std::vector<Edge> edges_;
  std::vector<std::vector<EdgeEnd>> incidence_;
  std::unordered_map<std::string, std::size_t> vertex_lookup_;
  std::unordered_map<std::string, std::size_t> edge_lookup_;
  std::vector<double> vertex_dist_;
};

struct Deme {
  std::size_t edge = npos;
  std::size_t index = 0;  ///< position along the edge, 0-based from the initial vertex
  double coord = 0.0;     ///< arclength from the initial vertex
};

enum class NeighborKind : std::uint8_t { SameEdge, AcrossVertex };

struct Neighbor {
  std::size_t deme = npos;
  NeighborKind kind = NeighborKind::SameEdge;
  std::size_t vertex = npos;  ///< shared vertex for AcrossVertex pairs
};

/// A deme adjacent to a vertex, reached through the given edge end.
struct Attachment {
  std::size_t vertex = npos;
  EdgeEnd end;
  std::size_t slot = npos;  ///< position of `end` within incidence(vertex)
};

class DiscretizedGraph {
 public:
  DiscretizedGraph() = default;

  /// Builds a discretization from explicit deme coordinates. Same-edge spacing
  /// must be 1/L^e; the end gaps are not constrained here.
  static DiscretizedGraph from_coordinates(MetricGraph graph, std::vector<double> resolution,
                                           const std::vector<std::vector<double>>& coords) {
    detail::require(resolution.size() == graph.edge_count(), "one resolution per edge required");
    detail::require(coords.size() == graph.edge_count(), "one coordinate list per edge required");
    DiscretizedGraph dg;
    dg.graph_ = std::move(graph);
    dg.resolution_ = std::move(resolution);
    const std::size_t nedges = dg.graph_.edge_count();
    dg.first_deme_.resize(nedges + 1, 0);
    for (std::size_t e = 0; e < nedges; ++e) {
      const Edge& edge = dg.graph_.edge(e);
      const double L = dg.resolution_[e];
      detail::require(std::isfinite(L) && L > 0.0, "edge '" + edge.id + "' has nonpositive resolution");
      const auto& c = coords[e];
      const std::size_t min_demes = edge.from == edge.to ? 3 : 2;
      detail::require(c.size() >= min_demes, "edge '" + edge.id + "' carries too few demes");
      dg.first_deme_[e] = dg.demes_.size();
      for (std::size_t k = 0; k < c.size(); ++k) {
        detail::require(c[k] > 0.0 && c[k] < edge.length, "deme coordinate outside the open edge '" + edge.id + "'");
        if (k > 0) {
          detail::require(std::abs(c[k] - c[k - 1] - 1.0 / L) <= 1e-9 / L,
                          "same-edge demes on '" + edge.id + "' are not 1/L apart");
        }
        dg.demes_.push_back(Deme{e, k, c[k]});
      }
    }
    dg.first_deme_[nedges] = dg.demes_.size();
    dg.build_structure();
    return dg;
  }

  const MetricGraph& graph() const { return graph_; }
  std::size_t size() const { return demes_.size(); }
  std::span<const Deme> demes() const { return demes_; }
  const Deme& deme(std::size_t x) const { return demes_[x]; }

  double resolution(std::size_t e) const { return resolution_[e]; }
  std::span<const double> resolutions() const { return resolution_; }
  double spacing(std::size_t e) const { return 1.0 / resolution_[e]; }
  std::size_t first_deme(std::size_t e) const { return first_deme_[e]; }
  std::size_t deme_count(std::size_t e) const { return first_deme_[e + 1] - first_deme_[e]; }
  double edge_resolution_of(std::size_t x) const { return resolution_[demes_[x].edge]; }

  /// Representative scale: 1 / min_e L^e.
  double epsilon() const { return 1.0 / *std::min_element(resolution_.begin(), resolution_.end()); }

  /// m_n(x) = 1/L^e for x on e.
  double measure(std::size_t x) const { return 1.0 / resolution_[demes_[x].edge]; }
  double total_mass() const {
    double sum = 0.0;
    for (std::size_t x = 0; x < size(); ++x) sum += measure(x);
    return sum;
  }

  std::span<const Neighbor> neighbors(std::size_t x) const {
    return {neighbors_.data() + offsets_[x], offsets_[x + 1] - offsets_[x]};
  }
  /// Flat index of the k-th neighbor entry of x; rate tables are laid out this way.
  std::size_t entry(std::size_t x, std::size_t k) const { return offsets_[x] + k; }
  std::size_t entry_count() const { return neighbors_.size(); }
  std::span<const std::size_t> offsets() const { return offsets_; }
  /// Position of x within the neighbor list of neighbors(x)[k].deme.
  std::size_t reverse_slot(std::size_t x, std::size_t k) const { return reverse_[offsets_[x] + k]; }

  /// Demes adjacent to v, one per edge end in incidence(v) order.
  std::span<const std::size_t> vertex_demes(std::size_t v) const { return vertex_demes_[v]; }
  const std::optional<Attachment>& attachment(std::size_t x) const { return attachment_[x]; }
  bool vertex_adjacent(std::size_t x) const { return attachment_[x].has_value(); }

  /// d(x, v) for a vertex-adjacent deme.
  double vertex_gap(std::size_t x) const {
    const auto& a = attachment_[x];
    detail::require(a.has_value(), "deme is not adjacent to a vertex");
    const Deme& d = demes_[x];
    return a->end.side == EdgeSide::Initial ? d.coord : graph_.edge(d.edge).length - d.coord;
  }

  GraphPoint point(std::size_t x) const { return {demes_[x].edge, demes_[x].coord}; }

  /// Deme located at p within `tol`, if any.
  std::optional<std::size_t> deme_at(const GraphPoint& p, double tol = 1e-9) const {
    const std::size_t x = nearest_deme(p);
    if (std::abs(demes_[x].coord - p.coord) <= tol) return x;
    return std::nullopt;
  }

  /// Closest deme to p on the same edge.
  std::size_t nearest_deme(const GraphPoint& p) const {
    const std::size_t begin = first_deme_[p.edge];
    const std::size_t n = deme_count(p.edge);
    const double L = resolution_[p.edge];
    const double first = demes_[begin].coord;
    const double k = std::round((p.coord - first) * L);
    const auto idx = static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(n - 1)));
    return begin + idx;
  }

 private:
  void build_structure() {
    const std::size_t n = demes_.size();
    attachment_.assign(n, std::nullopt);
    vertex_demes_.assign(graph_.vertex_count(), {});
    for (std::size_t v = 0; v < graph_.vertex_count(); ++v) {
      const auto ends = graph_.incidence(v);
      for (std::size_t slot = 0; slot < ends.size(); ++slot) {
        const EdgeEnd end = ends[slot];
        const std::size_t x = end.side == EdgeSide::Initial ? first_deme_[end.edge] : first_deme_[end.edge + 1] - 1;
        vertex_demes_[v].push_back(x);
        attachment_[x] = Attachment{v, end, slot};
      }
    }
    std::vector<std::vector<Neighbor>> lists(n);
    for (std::size_t e = 0; e < graph_.edge_count(); ++e) {
      for (std::size_t x = first_deme_[e]; x + 1 < first_deme_[e + 1]; ++x) {
        lists[x].push_back(Neighbor{x + 1, NeighborKind::SameEdge, npos});
        lists[x + 1].push_back(Neighbor{x, NeighborKind::SameEdge, npos});
      }
    }
    for (std::size_t v = 0; v < graph_.vertex_count(); ++v) {
      const auto& ds = vertex_demes_[v];
      for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t j = 0; j < ds.size(); ++j) {
          if (i != j) lists[ds[i]].push_back(Neighbor{ds[j], NeighborKind::AcrossVertex, v});
        }
      }
    }
    offsets_.assign(n + 1, 0);
    neighbors_.clear();
    for (std::size_t x = 0; x < n; ++x) {
      std::sort(lists[x].begin(), lists[x].end(), [](const Neighbor& a, const Neighbor& b) { return a.deme < b.deme; });
      offsets_[x] = neighbors_.size();
      neighbors_.insert(neighbors_.end(), lists[x].begin(), lists[x].end());
    }
    offsets_[n] = neighbors_.size();
    reverse_.assign(neighbors_.size(), npos);
    for (std::size_t x = 0; x < n; ++x) {
      for (std::size_t k = offsets_[x]; k < offsets_[x + 1]; ++k) {
        const std::size_t y = neighbors_[k].deme;
        for (std::size_t j = offsets_[y]; j < offsets_[y + 1]; ++j) {
          if (neighbors_[j].deme == x) reverse_[k] = j - offsets_[y];
        }
      }
    }
  }

  MetricGraph graph_;
  std::vector<double> resolution_;
  std::vector<Deme> demes_;
  std::vector<std::size_t> first_deme_;
  std::vector<std::size_t> offsets_;
  std::vector<Neighbor> neighbors_;
  std::vector<std::size_t> reverse_;
  std::vector<std::vector<std::size_t>> vertex_demes_;
  std::vector<std::optional<Attachment>> attachment_;
};

/// Places K_e = length * L^e - 1 demes at k / L^e, k = 1..K_e, on every edge.
inline DiscretizedGraph discretize(const MetricGraph& graph, std::vector<double> resolution) {
  detail::require(resolution.size() == graph.edge_count(), "one resolution per edge required");
  std::vector<std::vector<double>> coords(graph.edge_count());
  for (std::size_t e = 0; e < graph.edge_count(); ++e) {
    const Edge& edge = graph.edge(e);
    const double L = resolution[e];
    detail::require(std::isfinite(L) && L > 0.0, "edge '" + edge.id + "' has nonpositive resolution");
    const double cells = edge.length * L;
    const double rounded = std::round(cells);
    detail::require(std::abs(cells - rounded) <= 1e-9 * std::max(1.0, cells),
                    "length * L is not an integer on edge '" + edge.id + "'");
    detail::require(rounded >= 3.0, "length * L < 3 on edge '" + edge.id + "'");
    const auto demes = static_cast<std::size_t>(rounded) - 1;
    coords[e].resize(demes);
    for (std::size_t k = 0; k < demes; ++k) coords[e][k] = static_cast<double>(k + 1) / L;
  }
  return DiscretizedGraph::from_coordinates(graph, std::move(resolution), coords);
}

inline DiscretizedGraph discretize(const MetricGraph& graph, double resolution) {
  return discretize(graph, std::vector<double>(graph.edge_count(), resolution));
}

/// Graph distance between two demes.
inline double deme_distance(const DiscretizedGraph& dg, std::size_t x, std::size_t y) {
  if (x == y) return 0.0;
  return dg.graph().distance(dg.point(x), dg.point(y));
}

/// Piecewise-linear field: values at demes and vertices, linear in between.
class DensityField {
 public:
  DensityField() = default;
  DensityField(std::vector<double> deme_values, std::vector<double> vertex_values)
      : deme_(std::move(deme_values)), vertex_(std::move(vertex_values)) {}

  double deme(std::size_t x) const { return deme_[x]; }
  double vertex(std::size_t v) const { return vertex_[v]; }
  std::span<const double> deme_values() const { return deme_; }
  std::span<const double> vertex_values() const { return vertex_; }

  double at(const DiscretizedGraph& dg, const GraphPoint& p) const {
    const Edge& edge = dg.graph().edge(p.edge);
    detail::require(p.coord >= 0.0 && p.coord <= edge.length, "point outside its edge");
    const std::size_t begin = dg.first_deme(p.edge);
    const std::size_t last = begin + dg.deme_count(p.edge) - 1;
    const double c0 = dg.deme(begin).coord;
    const double c1 = dg.deme(last).coord;
    if (p.coord <= c0) return lerp(0.0, vertex_[edge.from], c0, deme_[begin], p.coord);
    if (p.coord >= c1) return lerp(c1, deme_[last], edge.length, vertex_[edge.to], p.coord);
    const double L = dg.resolution(p.edge);
    auto k = static_cast<std::size_t>(std::floor((p.coord - c0) * L));
    k = std::min(k, last - begin - 1);
    const std::size_t x = begin + k;
    return lerp(dg.deme(x).coord, deme_[x], dg.deme(x + 1).coord, deme_[x + 1], p.coord);
  }

 private:
  static double lerp(double x0, double y0, double x1, double y1, double x) {
    if (x1 <= x0) return y0;
    const double w = (x - x0) / (x1 - x0);
    return (1.0 - w) * y0 + w * y1;
  }

  std::vector<double> deme_;
  std::vector<double> vertex_;
};

/// Vertex values are the plain mean over adjacent demes.
inline DensityField interpolate(const DiscretizedGraph& dg, std::span<const double> values) {
  detail::require(values.size() == dg.size(), "one value per deme required");
  for (double v : values) {
    detail::require(v >= 0.0 && v <= 1.0, "density value outside [0, 1]");
  }
  std::vector<double> vertex(dg.graph().vertex_count(), 0.0);
  for (std::size_t v = 0; v < vertex.size(); ++v) {
    const auto ds = dg.vertex_demes(v);
    double sum = 0.0;
    for (std::size_t x : ds) sum += values[x];
    vertex[v] = sum / static_cast<double>(ds.size());
  }
  return DensityField(std::vector<double>(values.begin(), values.end()), std::move(vertex));
}

/// Sup norm over the graph. For piecewise-linear fields the sup is attained
/// at demes or vertices.
inline double graph_norm(const DensityField& f) {
  double best = 0.0;
  for (double v : f.deme_values()) best = std::max(best, std::abs(v));
  for (double v : f.vertex_values()) best = std::max(best, std::abs(v));
  return best;
}

inline double graph_norm(const DensityField& f, const DensityField& g) {
  detail::require(f.deme_values().size() == g.deme_values().size() &&
                      f.vertex_values().size() == g.vertex_values().size(),
                  "fields live on different discretizations");
  double best = 0.0;
  for (std::size_t i = 0; i < f.deme_values().size(); ++i)
    best = std::max(best, std::abs(f.deme(i) - g.deme(i)));
  for (std::size_t i = 0; i < f.vertex_values().size(); ++i)
    best = std::max(best, std::abs(f.vertex(i) - g.vertex(i)));
  return best;
}

/// Samples a profile u0(edge, coord) at the demes.
template <class Profile>
std::vector<double> sample_profile(const DiscretizedGraph& dg, Profile&& profile) {
  std::vector<double> out(dg.size());
  for (std::size_t x = 0; x < dg.size(); ++x) out[x] = profile(dg.deme(x).edge, dg.deme(x).coord);
  return out;
}

}  // namespace gfkpp
