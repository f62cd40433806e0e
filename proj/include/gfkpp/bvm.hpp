#pragma once

// Biased voter model simulated through its per-deme type-1 counts.
//
// Sites inside a deme are never neighbors of each other, so they are
// exchangeable and the count vector k is itself a Markov chain:
//   up(x)   = (M_x - k_x) * sum_y k_y (a_{x<-y} + b_{x<-y})
//   down(x) = k_x * sum_y (M_y - k_y) a_{x<-y}

#include <cmath>
#include <cstddef>
#include <cstdint>
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

struct BVMState {
  std::vector<int> count;
  std::vector<int> capacity;
  double time = 0.0;
  std::uint64_t events = 0;
  RandomStream rng;

  std::vector<double> density() const {
    std::vector<double> u(count.size());
    for (std::size_t x = 0; x < u.size(); ++x) u[x] = static_cast<double>(count[x]) / capacity[x];
    return u;
  }
};

/// k_x = round(u0(x) M_x).
inline BVMState init_state(const DiscretizedGraph& dg, const MicroParams& micro, std::span<const double> u0,
                           std::uint64_t seed) {
  detail::require(u0.size() == dg.size(), "init_state: one initial value per deme required");
  BVMState s;
  s.capacity = micro.deme_capacity;
  s.count.resize(dg.size());
  for (std::size_t x = 0; x < dg.size(); ++x) {
    detail::require(u0[x] >= 0.0 && u0[x] <= 1.0, "init_state: initial density outside [0, 1]");
    s.count[x] = static_cast<int>(std::lround(u0[x] * s.capacity[x]));
  }
  s.rng = RandomStream(seed, 0);
  return s;
}

/// Independent Bernoulli(u0(x)) sites; k_x is then Binomial(M_x, u0(x)).
inline BVMState init_state_bernoulli(const DiscretizedGraph& dg, const MicroParams& micro, std::span<const double> u0,
                                     std::uint64_t seed) {
  detail::require(u0.size() == dg.size(), "init_state: one initial value per deme required");
  BVMState s;
  s.capacity = micro.deme_capacity;
  s.count.assign(dg.size(), 0);
  s.rng = RandomStream(seed, 0);
  for (std::size_t x = 0; x < dg.size(); ++x) {
    detail::require(u0[x] >= 0.0 && u0[x] <= 1.0, "init_state: initial density outside [0, 1]");
    for (int i = 0; i < s.capacity[x]; ++i) s.count[x] += s.rng.bernoulli(u0[x]) ? 1 : 0;
  }
  return s;
}

struct DemeRates {
  double up = 0.0;
  double down = 0.0;
};

inline DemeRates deme_rates(const DiscretizedGraph& dg, const MicroParams& micro, std::span<const int> k,
                            std::span<const int> cap, std::size_t x) {
  double grow = 0.0, shrink = 0.0;
  const auto nbrs = dg.neighbors(x);
  const std::size_t base = dg.entry(x, 0);
  for (std::size_t j = 0; j < nbrs.size(); ++j) {
    const std::size_t y = nbrs[j].deme;
    grow += k[y] * (micro.voter[base + j] + micro.bias[base + j]);
    shrink += (cap[y] - k[y]) * micro.voter[base + j];
  }
  return {(cap[x] - k[x]) * grow, k[x] * shrink};
}

inline std::vector<DemeRates> lumped_rates(const DiscretizedGraph& dg, const MicroParams& micro, const BVMState& s) {
  std::vector<DemeRates> r(dg.size());
  for (std::size_t x = 0; x < dg.size(); ++x) r[x] = deme_rates(dg, micro, s.count, s.capacity, x);
  return r;
}

namespace detail {

/// Complete binary tree of partial sums over deme event rates. Parents are
/// recomputed from their children on update, so no rounding drift builds up.
class RateTree {
 public:
  explicit RateTree(std::size_t n) : leaves_(1) {
    while (leaves_ < n) leaves_ *= 2;
    node_.assign(2 * leaves_, 0.0);
  }
  void set(std::size_t i, double w) {
    std::size_t p = leaves_ + i;
    node_[p] = w;
    for (p /= 2; p >= 1; p /= 2) node_[p] = node_[2 * p] + node_[2 * p + 1];
  }
  double total() const { return node_[1]; }
  double leaf(std::size_t i) const { return node_[leaves_ + i]; }
  /// Leaf i with prefix(i) <= u < prefix(i+1); u is reduced to the offset within that leaf.
  std::size_t find(double& u) const {
    std::size_t p = 1;
    while (p < leaves_) {
      const double left = node_[2 * p];
      if (u < left) {
        p = 2 * p;
      } else {
        u -= left;
        p = 2 * p + 1;
      }
    }
    return p - leaves_;
  }

 private:
  std::size_t leaves_;
  std::vector<double> node_;
};

}  // namespace detail

/// Exact Gillespie simulation of the count chain up to state.time + T,
/// recording deme densities at the absolute times in `grid`.
inline Trajectory run(const DiscretizedGraph& dg, const MicroParams& micro, BVMState& state, double T,
                      const std::vector<double>& grid) {
  check_grid(grid, state.time, T);
  detail::require(state.count.size() == dg.size() && state.capacity.size() == dg.size(), "run: state does not match graph");
  const std::size_t n = dg.size();
  std::vector<DemeRates> rates(n);
  detail::RateTree tree(n);
  auto refresh = [&](std::size_t x) {
    rates[x] = deme_rates(dg, micro, state.count, state.capacity, x);
    tree.set(x, rates[x].up + rates[x].down);
  };
  for (std::size_t x = 0; x < n; ++x) refresh(x);

  Trajectory traj;
  traj.times = grid;
  traj.values.reserve(grid.size());
  std::size_t next = 0;
  const double t_end = state.time + T;
  const std::uint64_t start_events = state.events;
  auto record_before = [&](double t) {
    while (next < grid.size() && grid[next] < t) {
      traj.values.push_back(state.density());
      ++next;
    }
  };

  for (;;) {
    const double total = tree.total();
    if (!std::isfinite(total)) throw NumericalError("run: event rate sum is not finite");
    const double t_next = total > 0.0 ? state.time + state.rng.exponential(total) : t_end;
    if (t_next >= t_end || total <= 0.0) {
      state.time = t_end;
      record_before(std::numeric_limits<double>::infinity());
      break;
    }
    record_before(t_next);
    state.time = t_next;
    double u = state.rng.uniform() * total;
    std::size_t x = tree.find(u);
    // Guard against landing on a zero-weight leaf through rounding at the edge of the sum.
    if (rates[x].up + rates[x].down <= 0.0) {
      for (x = 0; x < n && rates[x].up + rates[x].down <= 0.0; ++x) {
      }
      u = 0.0;
    }
    bool up = u < rates[x].up;
    if (up && state.count[x] == state.capacity[x]) up = false;
    if (!up && state.count[x] == 0) up = true;
    if (up) {
      ++state.count[x];
    } else {
      --state.count[x];
    }
    ++state.events;
    refresh(x);
    for (const auto& nb : dg.neighbors(x)) refresh(nb.deme);
  }
  traj.events = state.events - start_events;
  return traj;
}

struct EnsembleConfig {
  std::vector<double> u0;
  double T = 0.0;
  std::vector<double> grid;
  std::size_t replicates = 1;
  std::uint64_t seed = 0;
  bool bernoulli_init = false;
  unsigned threads = 0;
};

/// Independent replicates; replicate r uses the stream derived from (seed, r).
inline std::vector<Trajectory> ensemble_runs(const DiscretizedGraph& dg, const MicroParams& micro, const EnsembleConfig& cfg) {
  detail::require(cfg.replicates >= 1, "ensemble: at least one replicate required");
  std::vector<Trajectory> out(cfg.replicates);
  parallel_for(
      cfg.replicates,
      [&](std::size_t r) {
        const std::uint64_t s = derive_seed(cfg.seed, r);
        BVMState st = cfg.bernoulli_init ? init_state_bernoulli(dg, micro, cfg.u0, s) : init_state(dg, micro, cfg.u0, s);
        out[r] = run(dg, micro, st, cfg.T, cfg.grid);
      },
      cfg.threads);
  return out;
}

inline MomentTable ensemble(const DiscretizedGraph& dg, const MicroParams& micro, const EnsembleConfig& cfg) {
  return moments(ensemble_runs(dg, micro, cfg));
}

/// Generator of the one-particle dual walk, q(x -> y) = M_y a_{x<-y}. For the
/// pure voter model E[u_t] = exp(t Q_dual) u_0.
inline WalkGenerator voter_dual_generator(const DiscretizedGraph& dg, const MicroParams& micro) {
  std::vector<std::size_t> offsets(dg.offsets().begin(), dg.offsets().end());
  std::vector<std::size_t> targets(dg.entry_count());
  std::vector<double> rates(dg.entry_count());
  std::vector<double> measure(dg.size());
  for (std::size_t x = 0; x < dg.size(); ++x) {
    measure[x] = dg.measure(x);
    const auto nbrs = dg.neighbors(x);
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
      const std::size_t i = dg.entry(x, k);
      targets[i] = nbrs[k].deme;
      rates[i] = micro.deme_capacity[nbrs[k].deme] * micro.voter[i];
    }
  }
  return WalkGenerator(std::move(offsets), std::move(targets), std::move(rates), std::move(measure));
}

}  // namespace gfkpp
