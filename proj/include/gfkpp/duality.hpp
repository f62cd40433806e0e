#pragma once

// Branching-coalescing dual of the biased voter model, the site-level
// generator used as an exact oracle, and the two duality checks.
//
// Arrow reversal: a voter arrow lets a site z in deme x copy a site w in
// deme y at rate a_{x<-y}, so a dual particle at z jumps to w at that rate.
// A bias arrow (rate b_{x<-y}) sets z to 1 if w is 1, so the particle at z
// keeps its place and adds a particle at w.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gfkpp/bvm.hpp"
#include "gfkpp/error.hpp"
#include "gfkpp/metric_graph.hpp"
#include "gfkpp/parallel.hpp"
#include "gfkpp/rng.hpp"
#include "gfkpp/scaling.hpp"

namespace gfkpp {

/// Site ids: deme x owns sites [first(x), first(x) + M_x).
struct SiteIndex {
  std::vector<std::size_t> first;
  std::vector<std::size_t> deme_of;

  explicit SiteIndex(const MicroParams& micro) {
    first.resize(micro.deme_capacity.size() + 1, 0);
    for (std::size_t x = 0; x < micro.deme_capacity.size(); ++x) {
      first[x + 1] = first[x] + static_cast<std::size_t>(micro.deme_capacity[x]);
      for (int i = 0; i < micro.deme_capacity[x]; ++i) deme_of.push_back(x);
    }
  }
  std::size_t size() const { return deme_of.size(); }
  std::size_t site(std::size_t deme, std::size_t slot) const { return first[deme] + slot; }
};

inline constexpr std::size_t kMaxSiteStates = std::size_t{1} << 16;
inline constexpr std::size_t kDenseExpmStates = 1024;
inline constexpr std::size_t kMaxDualParticles = 1'000'000;

/// Generator of the site chain on {0,1}^sites; bit s of a state is site s.
inline Eigen::SparseMatrix<double, Eigen::RowMajor> site_generator(const DiscretizedGraph& dg, const MicroParams& micro) {
  const SiteIndex idx(micro);
  const std::size_t ns = idx.size();
  detail::require(ns <= 16, "site_generator: state space above 2^16");
  const std::size_t states = std::size_t{1} << ns;
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t s = 0; s < states; ++s) {
    double out = 0.0;
    for (std::size_t z = 0; z < ns; ++z) {
      const std::size_t x = idx.deme_of[z];
      const bool one = (s >> z) & 1u;
      double rate = 0.0;
      const auto nbrs = dg.neighbors(x);
      for (std::size_t k = 0; k < nbrs.size(); ++k) {
        const std::size_t y = nbrs[k].deme;
        const std::size_t e = dg.entry(x, k);
        for (std::size_t w = idx.first[y]; w < idx.first[y + 1]; ++w) {
          const bool wone = (s >> w) & 1u;
          if (!one && wone) rate += micro.voter[e] + micro.bias[e];
          if (one && !wone) rate += micro.voter[e];
        }
      }
      if (rate > 0.0) {
        trip.emplace_back(static_cast<int>(s), static_cast<int>(s ^ (std::size_t{1} << z)), rate);
        out += rate;
      }
    }
    trip.emplace_back(static_cast<int>(s), static_cast<int>(s), -out);
  }
  Eigen::SparseMatrix<double, Eigen::RowMajor> q(static_cast<int>(states), static_cast<int>(states));
  q.setFromTriplets(trip.begin(), trip.end());
  return q;
}

/// Count vector of a site state.
inline std::vector<int> site_counts(const SiteIndex& idx, std::size_t state) {
  std::vector<int> k(idx.first.size() - 1, 0);
  for (std::size_t z = 0; z < idx.size(); ++z)
    if ((state >> z) & 1u) ++k[idx.deme_of[z]];
  return k;
}

/// Largest entrywise gap between the site generator summed over each count
/// class and the lumped count-chain generator, over every site state.
inline double lumpability_error(const DiscretizedGraph& dg, const MicroParams& micro) {
  const SiteIndex idx(micro);
  const auto q = site_generator(dg, micro);
  double worst = 0.0;
  for (int s = 0; s < q.outerSize(); ++s) {
    const auto k = site_counts(idx, static_cast<std::size_t>(s));
    std::map<std::vector<int>, double> projected;
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(q, s); it; ++it)
      projected[site_counts(idx, static_cast<std::size_t>(it.col()))] += it.value();
    std::map<std::vector<int>, double> lumped;
    double out = 0.0;
    for (std::size_t x = 0; x < dg.size(); ++x) {
      const DemeRates r = deme_rates(dg, micro, k, micro.deme_capacity, x);
      auto kk = k;
      if (r.up > 0.0) {
        ++kk[x];
        lumped[kk] += r.up;
        --kk[x];
      }
      if (r.down > 0.0) {
        --kk[x];
        lumped[kk] += r.down;
      }
      out += r.up + r.down;
    }
    lumped[k] -= out;
    for (const auto& [key, v] : projected) {
      const auto it = lumped.find(key);
      worst = std::max(worst, std::abs(v - (it == lumped.end() ? 0.0 : it->second)));
    }
    for (const auto& [key, v] : lumped)
      if (!projected.count(key)) worst = std::max(worst, std::abs(v));
  }
  return worst;
}

namespace detail {

/// exp(TQ) v for a generator given as a sparse matrix, by uniformization.
inline Eigen::VectorXd sparse_expm_action(const Eigen::SparseMatrix<double, Eigen::RowMajor>& q, double T, Eigen::VectorXd v) {
  double rate = 0.0;
  for (int i = 0; i < q.rows(); ++i) rate = std::max(rate, -q.coeff(i, i));
  if (T == 0.0 || rate == 0.0) return v;
  Eigen::SparseMatrix<double, Eigen::RowMajor> p = q / rate;
  for (int i = 0; i < p.rows(); ++i) p.coeffRef(i, i) += 1.0;
  const PoissonWindow pw = poisson_window(rate * T, 1e-14);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(v.size());
  for (std::size_t k = 0; k <= pw.last(); ++k) {
    if (k >= pw.first) acc += pw.weights[k - pw.first] * v;
    if (k == pw.last()) break;
    v = p * v;
  }
  return acc;
}

inline Eigen::VectorXd expm_action(const Eigen::SparseMatrix<double, Eigen::RowMajor>& q, double T, const Eigen::VectorXd& v) {
  if (T == 0.0) return v;
  if (q.rows() <= static_cast<int>(kDenseExpmStates)) {
    const Eigen::MatrixXd dense = Eigen::MatrixXd(q) * T;
    return dense.exp() * v;
  }
  return sparse_expm_action(q, T, v);
}

inline std::vector<std::size_t> probe_sites(const DiscretizedGraph& dg, const SiteIndex& idx, std::span<const std::size_t> probes) {
  std::unordered_set<std::size_t> seen;
  std::vector<std::size_t> sites;
  for (std::size_t x : probes) {
    require(x < dg.size(), "probe deme is not on the graph");
    require(seen.insert(x).second, "probe demes must be distinct");
    sites.push_back(idx.site(x, 0));
  }
  return sites;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dual particle system

struct DualParticle {
  std::size_t deme = 0;
  std::size_t slot = 0;
};

struct DualState {
  std::vector<DualParticle> particles;
  double time = 0.0;
  std::uint64_t events = 0;
  std::size_t max_particles = 0;
};

/// Exact event-driven run of the dual up to time T.
inline DualState run_dual(const DiscretizedGraph& dg, const MicroParams& micro, const std::vector<DualParticle>& initial,
                          double T, RandomStream& rng) {
  detail::require(T >= 0.0, "run_dual: T must be nonnegative");
  const SiteIndex idx(micro);
  // Per deme: total jump and branch rate summed over all target sites.
  std::vector<double> jump(dg.size(), 0.0), branch(dg.size(), 0.0);
  for (std::size_t x = 0; x < dg.size(); ++x) {
    const auto nbrs = dg.neighbors(x);
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
      const double m = micro.deme_capacity[nbrs[k].deme];
      jump[x] += m * micro.voter[dg.entry(x, k)];
      branch[x] += m * micro.bias[dg.entry(x, k)];
    }
  }
  DualState s;
  std::unordered_map<std::size_t, std::size_t> where;  // site -> particle index
  for (const auto& p : initial) {
    detail::require(p.deme < dg.size() && static_cast<int>(p.slot) < micro.deme_capacity[p.deme], "run_dual: site off the graph");
    // a repeated site coalesces at once
    if (where.emplace(idx.site(p.deme, p.slot), s.particles.size()).second) s.particles.push_back(p);
  }
  s.max_particles = s.particles.size();
  double total = 0.0;
  for (const auto& p : s.particles) total += jump[p.deme] + branch[p.deme];
  std::size_t since_resum = 0;
  for (;;) {
    if (s.particles.empty() || total <= 0.0) break;
    const double t = s.time + rng.exponential(total);
    if (t >= T) break;
    s.time = t;
    // choose particle, then kind, then neighbor deme, then slot
    double u = rng.uniform() * total;
    std::size_t i = 0;
    for (; i + 1 < s.particles.size(); ++i) {
      const double r = jump[s.particles[i].deme] + branch[s.particles[i].deme];
      if (u < r) break;
      u -= r;
    }
    const DualParticle here = s.particles[i];
    const std::size_t x = here.deme;
    const bool is_branch = u >= jump[x];
    double v = is_branch ? (u - jump[x]) : u;
    v = std::min(v, (is_branch ? branch[x] : jump[x]) * (1.0 - 1e-16));
    const auto nbrs = dg.neighbors(x);
    std::size_t k = 0;
    for (; k + 1 < nbrs.size(); ++k) {
      const std::size_t e = dg.entry(x, k);
      const double r = micro.deme_capacity[nbrs[k].deme] * (is_branch ? micro.bias[e] : micro.voter[e]);
      if (v < r) break;
      v -= r;
    }
    const std::size_t y = nbrs[k].deme;
    const DualParticle dest{y, static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(micro.deme_capacity[y])))};
    const std::size_t dest_site = idx.site(dest.deme, dest.slot);
    const bool occupied = where.count(dest_site) > 0;
    ++s.events;
    if (is_branch) {
      if (!occupied) {
        where.emplace(dest_site, s.particles.size());
        s.particles.push_back(dest);
        total += jump[y] + branch[y];
        if (s.particles.size() > kMaxDualParticles)
          throw NumericalError("run_dual: more than 10^6 dual particles at t = " + std::to_string(s.time) +
                               " after " + std::to_string(s.events) + " events");
        s.max_particles = std::max(s.max_particles, s.particles.size());
      }
    } else {
      where.erase(idx.site(here.deme, here.slot));
      total -= jump[x] + branch[x];
      if (occupied) {
        // coalescence: drop particle i by swapping in the last one
        const std::size_t last = s.particles.size() - 1;
        if (i != last) {
          s.particles[i] = s.particles[last];
          where[idx.site(s.particles[i].deme, s.particles[i].slot)] = i;
        }
        s.particles.pop_back();
      } else {
        s.particles[i] = dest;
        where.emplace(dest_site, i);
        total += jump[y] + branch[y];
      }
    }
    if (++since_resum == 4096) {
      since_resum = 0;
      total = 0.0;
      for (const auto& p : s.particles) total += jump[p.deme] + branch[p.deme];
    }
  }
  s.time = T;
  return s;
}

struct DualityReport {
  double lhs = 0.0, rhs = 0.0;
  double lhs_stderr = 0.0, rhs_stderr = 0.0;
  double stderr_ = 0.0;  ///< pooled sqrt(lhs_stderr^2 + rhs_stderr^2)
  std::size_t replicates = 0;
};

/// Monte Carlo estimates of E prod_i (1 - u_T(x_i)) from particle runs started
/// with independent Bernoulli(u0) sites, and of E prod_w (1 - u0(x(w))) over
/// dual particles started at slot 0 of each probe deme.
inline DualityReport duality_gap_mc(const DiscretizedGraph& dg, const MicroParams& micro, std::span<const double> u0,
                                    std::span<const std::size_t> probes, double T, std::size_t replicates,
                                    std::uint64_t seed, unsigned threads = 0) {
  detail::require(replicates >= 100, "duality_gap_mc: at least 100 replicates required");
  detail::require(T > 0.0, "duality_gap_mc: T must be positive");
  detail::require(u0.size() == dg.size(), "duality_gap_mc: one initial value per deme required");
  const SiteIndex idx(micro);
  detail::probe_sites(dg, idx, probes);
  std::vector<DualParticle> start;
  for (std::size_t x : probes) start.push_back({x, 0});
  std::vector<double> lhs(replicates), rhs(replicates);
  const std::vector<double> grid{T};
  parallel_for(
      replicates,
      [&](std::size_t r) {
        BVMState st = init_state_bernoulli(dg, micro, u0, derive_seed(seed, 2 * r));
        run(dg, micro, st, T, grid);
        double l = 1.0;
        for (std::size_t x : probes) l *= 1.0 - static_cast<double>(st.count[x]) / st.capacity[x];
        lhs[r] = l;
        RandomStream rng(derive_seed(seed, 2 * r + 1), 0);
        const DualState d = run_dual(dg, micro, start, T, rng);
        double q = 1.0;
        for (const auto& p : d.particles) q *= 1.0 - u0[p.deme];
        rhs[r] = q;
      },
      threads);
  auto mean_se = [](const std::vector<double>& v) {
    double s = 0, ss = 0;
    for (double x : v) s += x;
    const double m = s / static_cast<double>(v.size());
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()))};
  };
  DualityReport rep;
  std::tie(rep.lhs, rep.lhs_stderr) = mean_se(lhs);
  std::tie(rep.rhs, rep.rhs_stderr) = mean_se(rhs);
  rep.stderr_ = std::hypot(rep.lhs_stderr, rep.rhs_stderr);
  rep.replicates = replicates;
  return rep;
}

struct ExactDuality {
  double lhs = 0.0, rhs = 0.0;
  double gap() const { return std::abs(lhs - rhs); }
  std::size_t site_states = 0;
  std::size_t dual_states = 0;
};

/// Both sides of the duality from the exact generators: the site chain with
/// product-Bernoulli(u0) start, and the dual chain on sets of occupied sites.
inline ExactDuality duality_exact(const DiscretizedGraph& dg, const MicroParams& micro, std::span<const double> u0,
                                  std::span<const std::size_t> probes, double T) {
  detail::require(T >= 0.0, "duality_gap_exact: T must be nonnegative");
  detail::require(u0.size() == dg.size(), "duality_gap_exact: one initial value per deme required");
  const SiteIndex idx(micro);
  detail::require(idx.size() <= 16, "duality_gap_exact: state-space cap 2^16 exceeded");
  const auto sites = detail::probe_sites(dg, idx, probes);
  const std::size_t ns = idx.size();
  const std::size_t states = std::size_t{1} << ns;

  ExactDuality out;
  out.site_states = states;
  {
    const auto q = site_generator(dg, micro);
    Eigen::VectorXd f(static_cast<Eigen::Index>(states));
    Eigen::VectorXd pi0(static_cast<Eigen::Index>(states));
    for (std::size_t s = 0; s < states; ++s) {
      const auto k = site_counts(idx, s);
      double val = 1.0;
      for (std::size_t x : probes) val *= 1.0 - static_cast<double>(k[x]) / micro.deme_capacity[x];
      f[static_cast<Eigen::Index>(s)] = val;
      double p = 1.0;
      for (std::size_t z = 0; z < ns; ++z) p *= ((s >> z) & 1u) ? u0[idx.deme_of[z]] : 1.0 - u0[idx.deme_of[z]];
      pi0[static_cast<Eigen::Index>(s)] = p;
    }
    out.lhs = pi0.dot(detail::expm_action(q, T, f));
  }
  {
    // Dual states are subsets of sites reachable from the probe set.
    std::size_t start = 0;
    for (std::size_t z : sites) start |= std::size_t{1} << z;
    std::unordered_map<std::size_t, int> id{{start, 0}};
    std::vector<std::size_t> order{start};
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t head = 0; head < order.size(); ++head) {
      const std::size_t A = order[head];
      const int from = id[A];
      std::map<std::size_t, double> moves;
      for (std::size_t z = 0; z < ns; ++z) {
        if (!((A >> z) & 1u)) continue;
        const std::size_t x = idx.deme_of[z];
        const auto nbrs = dg.neighbors(x);
        for (std::size_t k = 0; k < nbrs.size(); ++k) {
          const std::size_t y = nbrs[k].deme;
          const std::size_t e = dg.entry(x, k);
          for (std::size_t w = idx.first[y]; w < idx.first[y + 1]; ++w) {
            const std::size_t bit = std::size_t{1} << w;
            if (micro.voter[e] > 0.0) moves[(A & ~(std::size_t{1} << z)) | bit] += micro.voter[e];
            if (micro.bias[e] > 0.0) moves[A | bit] += micro.bias[e];
          }
        }
      }
      double exit = 0.0;
      for (const auto& [B, rate] : moves) {
        if (B == A) continue;
        auto [it, fresh] = id.emplace(B, static_cast<int>(order.size()));
        if (fresh) order.push_back(B);
        detail::require(order.size() <= kMaxSiteStates, "duality_gap_exact: dual state-space cap exceeded");
        trip.emplace_back(from, it->second, rate);
        exit += rate;
      }
      trip.emplace_back(from, from, -exit);
    }
    const auto n = static_cast<int>(order.size());
    Eigen::SparseMatrix<double, Eigen::RowMajor> q(n, n);
    q.setFromTriplets(trip.begin(), trip.end());
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) {
      double val = 1.0;
      for (std::size_t z = 0; z < ns; ++z)
        if ((order[static_cast<std::size_t>(i)] >> z) & 1u) val *= 1.0 - u0[idx.deme_of[z]];
      g[i] = val;
    }
    out.rhs = detail::expm_action(q, T, g)[0];
    out.dual_states = order.size();
  }
  return out;
}

inline double duality_gap_exact(const DiscretizedGraph& dg, const MicroParams& micro, std::span<const double> u0,
                                std::span<const std::size_t> probes, double T) {
  return duality_exact(dg, micro, u0, probes, T).gap();
}

}  // namespace gfkpp
