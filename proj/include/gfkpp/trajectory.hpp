#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "gfkpp/error.hpp"
#include "gfkpp/metric_graph.hpp"

namespace gfkpp {

/// Deme densities sampled on a time grid.
struct Trajectory {
  std::vector<double> times;
  std::vector<std::vector<double>> values;  ///< values[i][x] at times[i]
  std::uint64_t events = 0;                 ///< jump count (BVM) or step count (SDE)

  DensityField field(const DiscretizedGraph& dg, std::size_t i) const { return interpolate(dg, values.at(i)); }
};

/// Per (time, deme) mean, variance and standard error over replicates.
struct MomentTable {
  std::vector<double> times;
  std::vector<std::vector<double>> mean, var, stderr_;
  std::size_t replicates = 0;
};

inline MomentTable moments(const std::vector<Trajectory>& runs) {
  detail::require(!runs.empty(), "moments: at least one replicate required");
  MomentTable m;
  m.times = runs.front().times;
  m.replicates = runs.size();
  const std::size_t nt = m.times.size();
  const std::size_t nx = nt ? runs.front().values.front().size() : 0;
  m.mean.assign(nt, std::vector<double>(nx, 0.0));
  m.var = m.mean;
  m.stderr_ = m.mean;
  for (const auto& r : runs) {
    detail::require(r.times == m.times, "moments: replicates sampled on different grids");
  }
  const double n = static_cast<double>(runs.size());
  for (std::size_t t = 0; t < nt; ++t) {
    for (std::size_t x = 0; x < nx; ++x) {
      double s = 0.0;
      for (const auto& r : runs) s += r.values[t][x];
      const double mu = s / n;
      double ss = 0.0;
      for (const auto& r : runs) ss += (r.values[t][x] - mu) * (r.values[t][x] - mu);
      m.mean[t][x] = mu;
      m.var[t][x] = runs.size() > 1 ? ss / (n - 1.0) : 0.0;
      m.stderr_[t][x] = std::sqrt(m.var[t][x] / n);
    }
  }
  return m;
}

/// Validates a sample grid against a horizon [t0, t0 + T].
inline void check_grid(const std::vector<double>& grid, double t0, double T) {
  detail::require(std::isfinite(T) && T > 0.0, "horizon T must be positive");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    detail::require(grid[i] >= t0 && grid[i] <= t0 + T * (1 + 1e-12), "sample time outside the horizon");
    if (i > 0) detail::require(grid[i] > grid[i - 1], "sample times must be strictly increasing");
  }
}

/// n + 1 equally spaced times on [t0, t0 + T].
inline std::vector<double> uniform_grid(double t0, double T, std::size_t n) {
  std::vector<double> g(n + 1);
  for (std::size_t i = 0; i <= n; ++i) g[i] = t0 + T * static_cast<double>(i) / static_cast<double>(n);
  return g;
}

}  // namespace gfkpp
