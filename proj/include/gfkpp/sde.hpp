#pragma once

// Interacting-SDE scheme on the demes with Euler-Maruyama stepping, driven by
// Brownian motions aggregated from a space-time white-noise lattice.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "gfkpp/error.hpp"
#include "gfkpp/metric_graph.hpp"
#include "gfkpp/parallel.hpp"
#include "gfkpp/random_walk.hpp"
#include "gfkpp/rng.hpp"
#include "gfkpp/scaling.hpp"
#include "gfkpp/trajectory.hpp"

namespace gfkpp {

/// Cells of width 1/(2 L) per edge, ordered by edge then arclength.
struct CellLayout {
  std::vector<double> resolution;   ///< L of the cell level, per edge
  std::vector<std::size_t> offset;  ///< first cell of each edge; offset.back() = total

  static CellLayout of(const MetricGraph& g, std::vector<double> resolution) {
    detail::require(resolution.size() == g.edge_count(), "cell layout: one resolution per edge required");
    CellLayout c;
    c.offset.assign(1, 0);
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      const double cells = 2.0 * g.edge(e).length * resolution[e];
      const double r = std::round(cells);
      detail::require(r >= 1.0 && std::abs(cells - r) <= 1e-9 * std::max(1.0, cells),
                      "cell layout: 2 * length * L must be an integer on edge '" + g.edge(e).id + "'");
      c.offset.push_back(c.offset.back() + static_cast<std::size_t>(r));
    }
    c.resolution = std::move(resolution);
    return c;
  }
  std::size_t size() const { return offset.back(); }
  std::size_t cells(std::size_t e) const { return offset[e + 1] - offset[e]; }
  double width(std::size_t e) const { return 1.0 / (2.0 * resolution[e]); }
};

namespace detail {

inline std::size_t nesting_ratio(double fine, double coarse) {
  const double r = fine / coarse;
  const double rounded = std::round(r);
  require(rounded >= 1.0 && std::abs(r - rounded) <= 1e-9 * rounded, "intervals are not nested in the finer level");
  return static_cast<std::size_t>(rounded);
}

}  // namespace detail

/// Space-time white noise on the finest cells: per step and cell an
/// independent N(0, dt * width) mass, a pure function of (seed, step, cell).
class WhiteNoiseLattice {
 public:
  WhiteNoiseLattice(const MetricGraph& g, std::vector<double> finest_resolution, double dt, std::uint64_t seed)
      : layout_(CellLayout::of(g, std::move(finest_resolution))), dt_(dt), seed_(seed), field_(seed) {
    detail::require(std::isfinite(dt) && dt > 0.0, "white-noise lattice: dt must be positive");
    cell_sd_.resize(layout_.size());
    for (std::size_t e = 0; e + 1 < layout_.offset.size(); ++e)
      for (std::size_t c = layout_.offset[e]; c < layout_.offset[e + 1]; ++c) cell_sd_[c] = std::sqrt(dt * layout_.width(e));
  }

  const CellLayout& layout() const { return layout_; }
  double dt() const { return dt_; }
  std::uint64_t seed() const { return seed_; }

  /// Masses W([step dt, (step+1) dt) x cell) for every finest cell.
  void masses(std::uint64_t step, std::vector<double>& out) const {
    out.resize(layout_.size());
    field_.fill(step, out);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] *= cell_sd_[c];
  }

 private:
  CellLayout layout_;
  double dt_;
  std::uint64_t seed_;
  NormalField field_;
  std::vector<double> cell_sd_;
};

/// Sums cell masses into the cells of a coarser level.
inline std::vector<double> aggregate_cells(const CellLayout& from, std::span<const double> masses, const CellLayout& to) {
  detail::require(masses.size() == from.size(), "aggregate_cells: one mass per cell required");
  detail::require(from.resolution.size() == to.resolution.size(), "aggregate_cells: layouts of different graphs");
  std::vector<double> out(to.size(), 0.0);
  for (std::size_t e = 0; e < to.resolution.size(); ++e) {
    const std::size_t r = detail::nesting_ratio(from.resolution[e], to.resolution[e]);
    detail::require(from.cells(e) == r * to.cells(e), "aggregate_cells: layouts of different graphs");
    for (std::size_t c = 0; c < to.cells(e); ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < r; ++j) s += masses[from.offset[e] + c * r + j];
      out[to.offset[e] + c] = s;
    }
  }
  return out;
}

/// Maps cell masses to per-deme Brownian increments. Interior deme k covers
/// the cells of [x - 1/(2L), x + 1/(2L)); the vertex-adjacent demes take the
/// remaining interval of length 1/(2L) + d(x, v).
class IncrementMap {
 public:
  IncrementMap() = default;
  IncrementMap(const CellLayout& cells, const DiscretizedGraph& dg) {
    const std::size_t n = dg.size();
    first_.resize(n);
    last_.resize(n);
    scale_.resize(n);
    for (std::size_t e = 0; e < dg.graph().edge_count(); ++e) {
      const std::size_t r = detail::nesting_ratio(cells.resolution[e], dg.resolution(e));
      const std::size_t K = dg.deme_count(e);
      detail::require(cells.cells(e) == 2 * (K + 1) * r, "increments: discretization does not match the lattice");
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t x = dg.first_deme(e) + k;
        const std::size_t lo = k == 0 ? 0 : (2 * k + 1) * r;
        const std::size_t hi = k + 1 == K ? 2 * (K + 1) * r : (2 * k + 3) * r;
        first_[x] = cells.offset[e] + lo;
        last_[x] = cells.offset[e] + hi;
        scale_[x] = 1.0 / std::sqrt(static_cast<double>(hi - lo) * cells.width(e));
      }
    }
  }

  void apply(std::span<const double> masses, std::vector<double>& out) const {
    out.resize(first_.size());
    for (std::size_t x = 0; x < first_.size(); ++x) {
      double s = 0.0;
      for (std::size_t c = first_[x]; c < last_[x]; ++c) s += masses[c];
      out[x] = scale_[x] * s;
    }
  }
  double scale(std::size_t x) const { return scale_[x]; }

 private:
  std::vector<std::size_t> first_, last_;
  std::vector<double> scale_;
};

/// Brownian increments of every deme of `dg` over step `step`.
inline std::vector<double> brownian_increments(const WhiteNoiseLattice& lattice, const DiscretizedGraph& dg,
                                               std::uint64_t step) {
  std::vector<double> masses, out;
  lattice.masses(step, masses);
  IncrementMap(lattice.layout(), dg).apply(masses, out);
  return out;
}

/// How the vertex growth enters the drift of a vertex-adjacent deme.
enum class VertexGrowthScaling {
  /// L beta^(v) / (4 |E(v)|): each vertex injects beta^(v) u(1-u) / 4 in total,
  /// the same as the particle model built by micro_from_macro.
  Matched,
  /// L beta^(v): each vertex-adjacent deme gets the full coefficient.
  Literal,
};

/// Per-deme coefficients of the scheme.
struct SdeModel {
  WalkGenerator gen;
  std::vector<double> growth;  ///< beta_e + vertex term
  std::vector<double> noise;   ///< gamma_e times the squared noise scale
  double dt_limit = 0.0;       ///< 0.1 / max exit rate

  static SdeModel build(const DiscretizedGraph& dg, const MacroParams& macro, ThetaMean mean = {},
                        VertexGrowthScaling scaling = VertexGrowthScaling::Matched) {
    macro.check(dg.graph());
    SdeModel m;
    m.gen = walk_rates(dg, conductances(dg, macro.alpha, mean));
    m.growth.resize(dg.size());
    m.noise.resize(dg.size());
    for (std::size_t x = 0; x < dg.size(); ++x) {
      const std::size_t e = dg.deme(x).edge;
      const double L = dg.resolution(e);
      m.growth[x] = macro.beta[e];
      m.noise[x] = macro.gamma[e] * L;
      if (const auto& a = dg.attachment(x)) {
        const double deg = static_cast<double>(dg.graph().degree(a->vertex));
        const double kappa = scaling == VertexGrowthScaling::Matched ? 1.0 / (4.0 * deg) : 1.0;
        m.growth[x] += L * macro.vertex_growth[a->vertex] * kappa;
        m.noise[x] = macro.gamma[e] / (1.0 / (2.0 * L) + dg.vertex_gap(x));
      }
    }
    const double q = m.gen.max_exit_rate();
    m.dt_limit = q > 0 ? 0.1 / q : std::numeric_limits<double>::infinity();
    return m;
  }
};

struct SDEState {
  std::vector<double> U;
  double time = 0.0;
  std::uint64_t step = 0;
  double dt = 0.0;
};

/// One Euler-Maruyama step followed by projection onto [0, 1].
inline void sde_step(const SdeModel& model, SDEState& s, std::span<const double> dB, std::vector<double>& scratch) {
  detail::require(s.dt > 0.0 && s.dt <= model.dt_limit * (1 + 1e-12), "sde_step: dt exceeds 0.1 / max exit rate");
  detail::require(dB.size() == s.U.size() && s.U.size() == model.gen.size(), "sde_step: size mismatch");
  const auto& g = model.gen;
  scratch.resize(s.U.size());
  for (std::size_t x = 0; x < s.U.size(); ++x) {
    const double u = s.U[x];
    double lap = 0.0;
    for (std::size_t i = g.begin(x); i < g.end(x); ++i) lap += g.rate(i) * (s.U[g.target(i)] - u);
    const double uu = u * (1.0 - u);
    const double next = u + (lap + model.growth[x] * uu) * s.dt + std::sqrt(model.noise[x] * std::max(uu, 0.0)) * dB[x];
    if (!std::isfinite(next)) throw NumericalError("sde_step: state became nonfinite");
    scratch[x] = std::clamp(next, 0.0, 1.0);
  }
  s.U.swap(scratch);
  s.time = static_cast<double>(++s.step) * s.dt;
}

inline std::size_t step_count(double T, double dt) {
  detail::require(std::isfinite(T) && T > 0.0, "T must be positive");
  detail::require(std::isfinite(dt) && dt > 0.0, "dt must be positive");
  const double n = T / dt;
  const double r = std::round(n);
  detail::require(r >= 1.0 && std::abs(n - r) <= 1e-6 * r, "T must be an integer multiple of dt");
  return static_cast<std::size_t>(r);
}

/// Grid times rounded to step indices.
inline std::vector<std::size_t> grid_steps(const std::vector<double>& grid, double dt, std::size_t steps) {
  std::vector<std::size_t> out;
  for (double t : grid) {
    const double k = std::round(t / dt);
    detail::require(std::abs(t / dt - k) <= 1e-6 * std::max(1.0, k), "sample times must be multiples of dt");
    detail::require(k >= 0.0 && k <= static_cast<double>(steps), "sample time outside the horizon");
    out.push_back(static_cast<std::size_t>(k));
  }
  return out;
}

/// Runs the scheme from U0 at time 0 to T with the lattice's dt.
inline Trajectory run_sde(const DiscretizedGraph& dg, const SdeModel& model, std::span<const double> U0, double T,
                          const WhiteNoiseLattice& lattice, const std::vector<double>& grid) {
  check_grid(grid, 0.0, T);
  detail::require(U0.size() == dg.size(), "run_sde: one initial value per deme required");
  for (double u : U0) detail::require(u >= 0.0 && u <= 1.0, "run_sde: initial value outside [0, 1]");
  const double dt = lattice.dt();
  detail::require(dt <= model.dt_limit * (1 + 1e-12), "run_sde: dt exceeds 0.1 / max exit rate");
  const std::size_t steps = step_count(T, dt);
  const auto at = grid_steps(grid, dt, steps);
  const IncrementMap map(lattice.layout(), dg);
  SDEState s{std::vector<double>(U0.begin(), U0.end()), 0.0, 0, dt};
  Trajectory traj;
  traj.times = grid;
  std::vector<double> masses, dB, scratch;
  std::size_t next = 0;
  for (std::size_t k = 0;; ++k) {
    while (next < at.size() && at[next] == k) {
      traj.values.push_back(s.U);
      ++next;
    }
    if (k == steps) break;
    lattice.masses(k, masses);
    map.apply(masses, dB);
    sde_step(model, s, dB, scratch);
  }
  traj.events = steps;
  return traj;
}

struct SdeEnsembleConfig {
  std::vector<double> U0;
  double T = 0.0;
  double dt = 0.0;
  std::vector<double> grid;
  std::size_t replicates = 1;
  std::uint64_t seed = 0;
  /// Lattice resolution per edge; defaults to the discretization's own.
  std::vector<double> lattice_resolution;
  unsigned threads = 0;
};

/// Replicate r runs on the lattice seeded by derive_seed(seed, r).
inline std::vector<Trajectory> sde_ensemble_runs(const DiscretizedGraph& dg, const SdeModel& model,
                                                 const SdeEnsembleConfig& cfg) {
  detail::require(cfg.replicates >= 1, "ensemble: at least one replicate required");
  std::vector<double> res = cfg.lattice_resolution;
  if (res.empty()) res.assign(dg.resolutions().begin(), dg.resolutions().end());
  std::vector<Trajectory> out(cfg.replicates);
  parallel_for(
      cfg.replicates,
      [&](std::size_t r) {
        const WhiteNoiseLattice lattice(dg.graph(), res, cfg.dt, derive_seed(cfg.seed, r));
        out[r] = run_sde(dg, model, cfg.U0, cfg.T, lattice, cfg.grid);
      },
      cfg.threads);
  return out;
}

inline MomentTable sde_ensemble(const DiscretizedGraph& dg, const SdeModel& model, const SdeEnsembleConfig& cfg) {
  return moments(sde_ensemble_runs(dg, model, cfg));
}

struct CouplingResult {
  double value = 0.0;   ///< sup over sampled (t, x) of the replicate mean of (U^c - U^f)^2
  double stderr_ = 0.0; ///< standard error of that mean at the maximizing point
  double time = 0.0;
  std::size_t deme = 0;
};

struct CouplingConfig {
  std::function<double(std::size_t, double)> initial;  ///< U0(edge, coord)
  double T = 0.0;
  double dt = 0.0;
  std::vector<double> grid;
  std::size_t replicates = 100;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

/// Runs both levels on one shared lattice at the finer resolution and
/// estimates sup_t sup_x E|U^coarse_x - U^fine_x'|^2, x' the fine deme at x.
inline CouplingResult coupling_error(const DiscretizedGraph& coarse, const DiscretizedGraph& fine, const MacroParams& macro,
                                     const CouplingConfig& cfg, ThetaMean mean = {},
                                     VertexGrowthScaling scaling = VertexGrowthScaling::Matched) {
  detail::require(cfg.replicates >= 1, "coupling_error: at least one replicate required");
  check_grid(cfg.grid, 0.0, cfg.T);
  std::vector<std::size_t> map(coarse.size());
  for (std::size_t x = 0; x < coarse.size(); ++x) {
    const auto hit = fine.deme_at(coarse.point(x), 1e-9);
    detail::require(hit.has_value(), "coupling_error: resolutions are not nested");
    map[x] = *hit;
  }
  const SdeModel mc = SdeModel::build(coarse, macro, mean, scaling);
  const SdeModel mf = SdeModel::build(fine, macro, mean, scaling);
  const std::vector<double> res(fine.resolutions().begin(), fine.resolutions().end());
  const CellLayout layout = CellLayout::of(fine.graph(), res);
  const IncrementMap map_c(layout, coarse), map_f(layout, fine);
  const auto u0c = sample_profile(coarse, cfg.initial);
  const auto u0f = sample_profile(fine, cfg.initial);
  const std::size_t steps = step_count(cfg.T, cfg.dt);
  const auto at = grid_steps(cfg.grid, cfg.dt, steps);
  detail::require(cfg.dt <= std::min(mc.dt_limit, mf.dt_limit) * (1 + 1e-12), "coupling_error: dt exceeds the guard");

  // sq[r][g][x]
  std::vector<std::vector<std::vector<double>>> sq(cfg.replicates);
  parallel_for(
      cfg.replicates,
      [&](std::size_t r) {
        const WhiteNoiseLattice lattice(fine.graph(), res, cfg.dt, derive_seed(cfg.seed, r));
        SDEState sc{u0c, 0.0, 0, cfg.dt}, sf{u0f, 0.0, 0, cfg.dt};
        std::vector<double> masses, dbc, dbf, scratch;
        auto& out = sq[r];
        std::size_t next = 0;
        for (std::size_t k = 0;; ++k) {
          while (next < at.size() && at[next] == k) {
            std::vector<double> row(coarse.size());
            for (std::size_t x = 0; x < coarse.size(); ++x) {
              const double d = sc.U[x] - sf.U[map[x]];
              row[x] = d * d;
            }
            out.push_back(std::move(row));
            ++next;
          }
          if (k == steps) break;
          lattice.masses(k, masses);
          map_c.apply(masses, dbc);
          map_f.apply(masses, dbf);
          sde_step(mc, sc, dbc, scratch);
          sde_step(mf, sf, dbf, scratch);
        }
      },
      cfg.threads);

  CouplingResult best;
  const double n = static_cast<double>(cfg.replicates);
  for (std::size_t g = 0; g < at.size(); ++g) {
    for (std::size_t x = 0; x < coarse.size(); ++x) {
      double s = 0.0;
      for (std::size_t r = 0; r < cfg.replicates; ++r) s += sq[r][g][x];
      const double m = s / n;
      if (m > best.value || (g == 0 && x == 0)) {
        best.value = m;
        double ss = 0.0;
        for (std::size_t r = 0; r < cfg.replicates; ++r) ss += (sq[r][g][x] - m) * (sq[r][g][x] - m);
        const double var = cfg.replicates > 1 ? ss / (n - 1) : 0.0;
        best.stderr_ = std::sqrt(var / n);
        best.time = cfg.grid[g];
        best.deme = x;
      }
    }
  }
  return best;
}

}  // namespace gfkpp
