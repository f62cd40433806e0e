#pragma once

// Macroscopic SPDE coefficients, microscopic particle rates, and the maps
// between them.

#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gfkpp/error.hpp"
#include "gfkpp/metric_graph.hpp"

namespace gfkpp {

/// Symmetric mean used for conductances across a vertex.
struct ThetaMean {
  enum class Kind { Geometric, Power };
  Kind kind = Kind::Geometric;
  double exponent = 1.0;

  static ThetaMean geometric() { return {}; }
  static ThetaMean power(double p) { return {Kind::Power, p}; }
};

inline double theta(double a, double b, ThetaMean mean = {}) {
  detail::require(a > 0.0 && b > 0.0, "theta requires positive arguments");
  if (a == b) return a;
  switch (mean.kind) {
    case ThetaMean::Kind::Geometric:
      return std::sqrt(a * b);
    case ThetaMean::Kind::Power: {
      const double p = mean.exponent;
      detail::require(p != 0.0 && std::isfinite(p), "power mean exponent must be finite and nonzero");
      const double value = std::pow(0.5 * (std::pow(a, p) + std::pow(b, p)), 1.0 / p);
      return std::clamp(value, std::min(a, b), std::max(a, b));
    }
  }
  return a;
}

/// Piecewise-constant SPDE coefficients; the density l is fixed to 1.
struct MacroParams {
  std::vector<double> alpha;          ///< diffusion, per edge
  std::vector<double> beta;           ///< growth, per edge
  std::vector<double> gamma;          ///< noise variance, per edge
  std::vector<double> vertex_growth;  ///< boundary growth beta-hat, per vertex

  static MacroParams uniform(const MetricGraph& g, double alpha, double beta, double gamma, double vertex_growth = 0.0) {
    return {std::vector<double>(g.edge_count(), alpha), std::vector<double>(g.edge_count(), beta),
            std::vector<double>(g.edge_count(), gamma), std::vector<double>(g.vertex_count(), vertex_growth)};
  }

  void check(const MetricGraph& g) const {
    detail::require(alpha.size() == g.edge_count() && beta.size() == g.edge_count() && gamma.size() == g.edge_count(),
                    "macro parameters need one value per edge");
    detail::require(vertex_growth.size() == g.vertex_count(), "macro parameters need one boundary growth per vertex");
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      detail::require(std::isfinite(alpha[e]) && alpha[e] > 0.0, "alpha must be positive on edge '" + g.edge(e).id + "'");
      detail::require(std::isfinite(beta[e]) && beta[e] >= 0.0, "beta must be nonnegative on edge '" + g.edge(e).id + "'");
      detail::require(std::isfinite(gamma[e]) && gamma[e] >= 0.0, "gamma must be nonnegative on edge '" + g.edge(e).id + "'");
    }
    for (std::size_t v = 0; v < g.vertex_count(); ++v) {
      detail::require(std::isfinite(vertex_growth[v]) && vertex_growth[v] >= 0.0,
                      "boundary growth must be nonnegative at vertex '" + g.vertex_id(v) + "'");
    }
  }
};

/// Particle-level rates. Per-pair tables follow DiscretizedGraph::entry(x, k):
/// entry (x, k) describes a site in deme x interacting with a site in deme
/// y = neighbors(x)[k].deme.
struct MicroParams {
  std::vector<double> resolution;  ///< L^e
  std::vector<int> capacity;       ///< M^e
  std::vector<int> deme_capacity;  ///< M of the edge carrying each deme
  std::vector<double> conductance; ///< C_{xy}, symmetric
  std::vector<double> voter;       ///< a: rate at which a site of x copies a given site of y
  std::vector<double> bias;        ///< b: rate at which a site of x copies a given type-1 site of y
  std::vector<double> interior_bias;              ///< B_e
  std::vector<std::vector<double>> vertex_bias;   ///< per vertex, |E(v)|^2 row-major [target end][source end]
  double epsilon = 0.0;                            ///< 1 / min_e L^e

  double voter_rate(const DiscretizedGraph& dg, std::size_t x, std::size_t k) const { return voter[dg.entry(x, k)]; }
  double bias_rate(const DiscretizedGraph& dg, std::size_t x, std::size_t k) const { return bias[dg.entry(x, k)]; }
  std::size_t site_count() const {
    std::size_t n = 0;
    for (int m : deme_capacity) n += static_cast<std::size_t>(m);
    return n;
  }
};

/// Zero-slack conductances: L^e alpha_e / 2 along an edge, and
/// Theta(alpha_e, alpha_f) / (2 (d(x,v) + d(v,y))) across a vertex.
inline std::vector<double> conductances(const DiscretizedGraph& dg, const std::vector<double>& alpha,
                                        ThetaMean mean = {}) {
  detail::require(alpha.size() == dg.graph().edge_count(), "one alpha per edge required");
  std::vector<double> c(dg.entry_count());
  for (std::size_t x = 0; x < dg.size(); ++x) {
    const auto nbrs = dg.neighbors(x);
    const std::size_t ex = dg.deme(x).edge;
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
      const std::size_t y = nbrs[k].deme;
      const std::size_t ey = dg.deme(y).edge;
      if (nbrs[k].kind == NeighborKind::SameEdge) {
        c[dg.entry(x, k)] = dg.resolution(ex) * alpha[ex] / 2.0;
      } else {
        const double gap = dg.vertex_gap(x) + dg.vertex_gap(y);
        c[dg.entry(x, k)] = theta(alpha[ex], alpha[ey], mean) / (2.0 * gap);
      }
    }
  }
  return c;
}

struct MicroOptions {
  ThetaMean theta;
  /// Site counts for edges with gamma = 0 (required there), optional override elsewhere.
  std::vector<std::optional<int>> capacity;
};

namespace detail {

inline std::size_t edge_end_slot(const DiscretizedGraph& dg, std::size_t x) {
  return dg.attachment(x)->slot;
}

/// Fills per-pair bias rates from B_e and the vertex tables.
///
/// A source deme y not adjacent to a vertex contributes B at its edge. For a
/// vertex-adjacent source y (end j at v), a target across v (end i) copies at
/// vertex_bias[v](i, j); the same-edge target x^e_2 copies at B_e plus
/// vertex_bias[v](j, j).
inline std::vector<double> assemble_bias(const DiscretizedGraph& dg, const std::vector<double>& interior,
                                         const std::vector<std::vector<double>>& vertex_bias) {
  std::vector<double> b(dg.entry_count(), 0.0);
  for (std::size_t x = 0; x < dg.size(); ++x) {
    const auto nbrs = dg.neighbors(x);
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
      const std::size_t y = nbrs[k].deme;
      const std::size_t ey = dg.deme(y).edge;
      const auto& ay = dg.attachment(y);
      double rate = 0.0;
      if (!ay) {
        rate = interior[ey];
      } else {
        const std::size_t v = ay->vertex;
        const std::size_t deg = dg.graph().degree(v);
        const std::size_t j = ay->slot;
        if (nbrs[k].kind == NeighborKind::AcrossVertex) {
          const std::size_t i = edge_end_slot(dg, x);
          rate = vertex_bias[v][i * deg + j];
        } else {
          rate = interior[ey] + vertex_bias[v][j * deg + j];
        }
      }
      b[dg.entry(x, k)] = rate;
    }
  }
  return b;
}

}  // namespace detail

inline MicroParams micro_from_macro(const MacroParams& macro, const DiscretizedGraph& dg, const MicroOptions& options = {}) {
  const MetricGraph& g = dg.graph();
  macro.check(g);
  detail::require(options.capacity.empty() || options.capacity.size() == g.edge_count(),
                  "capacity overrides need one entry per edge");
  MicroParams micro;
  micro.resolution.assign(dg.resolutions().begin(), dg.resolutions().end());
  micro.capacity.resize(g.edge_count());
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    const std::optional<int> given = options.capacity.empty() ? std::nullopt : options.capacity[e];
    if (given) {
      detail::require(*given >= 1, "capacity override must be positive on edge '" + g.edge(e).id + "'");
      micro.capacity[e] = *given;
    } else {
      detail::require(macro.gamma[e] > 0.0, "edge '" + g.edge(e).id + "' has gamma = 0 and no capacity given");
      const double m = std::round(4.0 * dg.resolution(e) * macro.alpha[e] / macro.gamma[e]);
      detail::require(m >= 1.0 && m < 2.0e9, "rounded capacity is out of range on edge '" + g.edge(e).id + "'");
      micro.capacity[e] = static_cast<int>(m);
    }
  }
  micro.deme_capacity.resize(dg.size());
  for (std::size_t x = 0; x < dg.size(); ++x) micro.deme_capacity[x] = micro.capacity[dg.deme(x).edge];

  micro.conductance = conductances(dg, macro.alpha, options.theta);
  micro.voter.resize(dg.entry_count());
  for (std::size_t x = 0; x < dg.size(); ++x) {
    const auto nbrs = dg.neighbors(x);
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
      const std::size_t ey = dg.deme(nbrs[k].deme).edge;
      const std::size_t i = dg.entry(x, k);
      micro.voter[i] = 2.0 * micro.conductance[i] * dg.resolution(ey) / micro.capacity[ey];
    }
  }

  micro.interior_bias.resize(g.edge_count());
  for (std::size_t e = 0; e < g.edge_count(); ++e) micro.interior_bias[e] = macro.beta[e] / (2.0 * micro.capacity[e]);

  micro.vertex_bias.resize(g.vertex_count());
  for (std::size_t v = 0; v < g.vertex_count(); ++v) {
    const auto ends = g.incidence(v);
    const std::size_t deg = ends.size();
    auto& table = micro.vertex_bias[v];
    table.assign(deg * deg, 0.0);
    const double share = macro.vertex_growth[v] / (4.0 * static_cast<double>(deg * deg));
    for (std::size_t i = 0; i < deg; ++i) {
      for (std::size_t j = 0; j < deg; ++j) {
        table[i * deg + j] = share * dg.resolution(ends[i].edge) / micro.capacity[ends[j].edge];
      }
    }
  }
  micro.bias = detail::assemble_bias(dg, micro.interior_bias, micro.vertex_bias);
  micro.epsilon = dg.epsilon();
  return micro;
}

/// Finite-resolution plug-in of the micro-to-macro limits.
inline MacroParams macro_from_micro(const MicroParams& micro, const DiscretizedGraph& dg) {
  const MetricGraph& g = dg.graph();
  MacroParams macro;
  macro.alpha.resize(g.edge_count());
  macro.beta.resize(g.edge_count());
  macro.gamma.resize(g.edge_count());
  macro.vertex_growth.resize(g.vertex_count());
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    const std::size_t x = dg.first_deme(e);
    double on_edge = 0.0;
    const auto nbrs = dg.neighbors(x);
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
      if (nbrs[k].kind == NeighborKind::SameEdge) on_edge = micro.conductance[dg.entry(x, k)];
    }
    const double L = dg.resolution(e);
    macro.alpha[e] = 2.0 * on_edge / L;
    macro.gamma[e] = 4.0 * macro.alpha[e] * L / micro.capacity[e];
    macro.beta[e] = static_cast<double>(2.0L * micro.interior_bias[e] * micro.capacity[e]);
  }
  for (std::size_t v = 0; v < g.vertex_count(); ++v) {
    const auto ends = g.incidence(v);
    const std::size_t deg = ends.size();
    // extended-precision accumulation keeps the round trip at the last bit
    long double sum = 0.0L;
    for (std::size_t i = 0; i < deg; ++i) {
      for (std::size_t j = 0; j < deg; ++j) {
        sum += static_cast<long double>(micro.vertex_bias[v][i * deg + j]) * micro.capacity[ends[j].edge] /
               dg.resolution(ends[i].edge);
      }
    }
    macro.vertex_growth[v] = static_cast<double>(4.0L * sum);
  }
  return macro;
}

struct ConditionCheck {
  std::string name;
  bool passed = false;
  double residual = 0.0;
  std::string detail;
};

struct ValidationReport {
  std::vector<ConditionCheck> checks;

  bool all_passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return true;
  }
  const ConditionCheck& operator[](std::string_view name) const {
    for (const auto& c : checks)
      if (c.name == name) return c;
    throw PreconditionError("no condition named " + std::string(name));
  }
};

/// Residual threshold below which a condition counts as satisfied.
inline constexpr double kConditionTolerance = 1e-9;
/// On gamma = 0 edges, L/M must not exceed this for the noise to be negligible.
inline constexpr double kDeterministicEdgeRatio = 0.05;

/// Checks micro rates against a macro target, reporting one residual per condition.
inline ValidationReport validate_conditions(const DiscretizedGraph& dg, const MicroParams& micro, const MacroParams& macro,
                                            ThetaMean mean = {}) {
  const MetricGraph& g = dg.graph();
  macro.check(g);
  ValidationReport report;
  auto relative = [](double value, double ref) { return std::abs(value - ref) / std::max(1.0, std::abs(ref)); };

  {  // (a) vertex gaps 1/L <= d(x,v) < 2/L
    double worst = 0.0;
    std::ostringstream why;
    for (std::size_t x = 0; x < dg.size(); ++x) {
      if (!dg.vertex_adjacent(x)) continue;
      const double L = dg.edge_resolution_of(x);
      const double gap = dg.vertex_gap(x) * L;  // in units of 1/L
      double violation = 0.0;
      if (gap < 1.0 - 1e-12) violation = 1.0 - gap;
      if (gap >= 2.0 - 1e-12) violation = std::max(violation, gap - 2.0 + 1e-12);
      if (violation > worst) {
        worst = violation;
        why.str("");
        why << "deme " << x << " has d(x,v) = " << gap << "/L";
      }
    }
    report.checks.push_back({"a", worst == 0.0, worst, why.str()});
  }
  {  // (b) 4 L / M = gamma / alpha
    double worst = 0.0;
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      const double L = dg.resolution(e);
      const double M = micro.capacity[e];
      double r = 0.0;
      if (macro.gamma[e] > 0.0) {
        r = std::abs(4.0 * L / M - macro.gamma[e] / macro.alpha[e]);
      } else {
        r = std::max(0.0, L / M - kDeterministicEdgeRatio);
      }
      worst = std::max(worst, r);
    }
    report.checks.push_back({"b", worst <= kConditionTolerance, worst, ""});
  }
  {  // (c) conductance slack and the voter-rate identity
    double worst = 0.0;
    for (std::size_t x = 0; x < dg.size(); ++x) {
      const auto nbrs = dg.neighbors(x);
      const std::size_t ex = dg.deme(x).edge;
      for (std::size_t k = 0; k < nbrs.size(); ++k) {
        const std::size_t y = nbrs[k].deme;
        const std::size_t ey = dg.deme(y).edge;
        const std::size_t i = dg.entry(x, k);
        const double target = theta(macro.alpha[ex], macro.alpha[ey], mean) / (2.0 * deme_distance(dg, x, y));
        worst = std::max(worst, std::abs(micro.conductance[i] - target) * dg.resolution(ex));
        const double voter = 2.0 * micro.conductance[i] * dg.resolution(ey) / micro.capacity[ey];
        worst = std::max(worst, relative(micro.voter[i], voter));
        const double back = micro.conductance[dg.entry(y, dg.reverse_slot(x, k))];
        worst = std::max(worst, relative(micro.conductance[i], back));
      }
    }
    report.checks.push_back({"c", worst <= kConditionTolerance, worst, ""});
  }
  {  // (d) 2 B M = beta, and interior sources use B
    double worst = 0.0;
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      worst = std::max(worst, std::abs(static_cast<double>(2.0L * micro.interior_bias[e] * micro.capacity[e]) - macro.beta[e]));
    }
    for (std::size_t x = 0; x < dg.size(); ++x) {
      const auto nbrs = dg.neighbors(x);
      for (std::size_t k = 0; k < nbrs.size(); ++k) {
        const std::size_t y = nbrs[k].deme;
        if (dg.vertex_adjacent(y)) continue;
        worst = std::max(worst, relative(micro.bias[dg.entry(x, k)], micro.interior_bias[dg.deme(y).edge]));
      }
    }
    report.checks.push_back({"d", worst <= kConditionTolerance, worst, ""});
  }
  {  // (e) 4 sum_e sum_f Bhat_{e,f} M^f / L^e = beta-hat(v)
    const MacroParams plug = macro_from_micro(micro, dg);
    double worst = 0.0;
    for (std::size_t v = 0; v < g.vertex_count(); ++v) {
      worst = std::max(worst, std::abs(plug.vertex_growth[v] - macro.vertex_growth[v]));
    }
    report.checks.push_back({"e", worst <= kConditionTolerance, worst, ""});
  }
  return report;
}

}  // namespace gfkpp
