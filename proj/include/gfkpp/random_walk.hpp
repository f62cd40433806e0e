#pragma once

// Continuous-time conductance walk on the demes: generator, uniformized
// transition kernel, semigroup, and empirical heat-kernel diagnostics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "gfkpp/error.hpp"
#include "gfkpp/metric_graph.hpp"
#include "gfkpp/scaling.hpp"

namespace gfkpp {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Generator of the walk in CSR form, sharing the neighbor layout of the
/// discretization it was built from.
class WalkGenerator {
 public:
  WalkGenerator() = default;
  WalkGenerator(std::vector<std::size_t> offsets, std::vector<std::size_t> targets, std::vector<double> rates,
                std::vector<double> measure)
      : offsets_(std::move(offsets)), targets_(std::move(targets)), rates_(std::move(rates)), measure_(std::move(measure)) {
    exit_.assign(size(), 0.0);
    for (std::size_t x = 0; x < size(); ++x)
      for (std::size_t i = offsets_[x]; i < offsets_[x + 1]; ++i) exit_[x] += rates_[i];
  }

  std::size_t size() const { return measure_.size(); }
  double measure(std::size_t x) const { return measure_[x]; }
  double exit_rate(std::size_t x) const { return exit_[x]; }
  double max_exit_rate() const { return exit_.empty() ? 0.0 : *std::max_element(exit_.begin(), exit_.end()); }

  std::size_t begin(std::size_t x) const { return offsets_[x]; }
  std::size_t end(std::size_t x) const { return offsets_[x + 1]; }
  std::size_t target(std::size_t i) const { return targets_[i]; }
  double rate(std::size_t i) const { return rates_[i]; }

  /// (L_n F)(x) = sum_y lambda(x,y) (F(y) - F(x)).
  std::vector<double> apply(std::span<const double> f) const {
    detail::require(f.size() == size(), "generator_apply: one value per deme required");
    std::vector<double> out(size(), 0.0);
    for (std::size_t x = 0; x < size(); ++x) {
      double acc = 0.0;
      for (std::size_t i = offsets_[x]; i < offsets_[x + 1]; ++i) acc += rates_[i] * (f[targets_[i]] - f[x]);
      out[x] = acc;
    }
    return out;
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(size(), size());
    for (std::size_t x = 0; x < size(); ++x) {
      for (std::size_t i = offsets_[x]; i < offsets_[x + 1]; ++i) q(x, targets_[i]) += rates_[i];
      q(x, x) -= exit_[x];
    }
    return q;
  }

 private:
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> targets_;
  std::vector<double> rates_;
  std::vector<double> measure_;
  std::vector<double> exit_;
};

/// lambda(x,y) = 2 C_xy / m_n(x), so that L_n = alpha_e Delta_L on interior demes.
inline WalkGenerator walk_rates(const DiscretizedGraph& dg, std::span<const double> conductance) {
  detail::require(conductance.size() == dg.entry_count(), "walk_rates: one conductance per neighbor entry required");
  std::vector<std::size_t> offsets(dg.offsets().begin(), dg.offsets().end());
  std::vector<std::size_t> targets(dg.entry_count());
  std::vector<double> rates(dg.entry_count());
  std::vector<double> measure(dg.size());
  for (std::size_t x = 0; x < dg.size(); ++x) {
    measure[x] = dg.measure(x);
    const auto nbrs = dg.neighbors(x);
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
      const std::size_t i = dg.entry(x, k);
      const double c = conductance[i];
      const double back = conductance[dg.entry(nbrs[k].deme, dg.reverse_slot(x, k))];
      detail::require(std::isfinite(c) && c >= 0.0, "walk_rates: conductances must be finite and nonnegative");
      detail::require(std::abs(c - back) <= 1e-12 * std::max(std::abs(c), std::abs(back)),
                      "walk_rates: conductances are not symmetric");
      targets[i] = nbrs[k].deme;
      rates[i] = 2.0 * c / measure[x];
    }
  }
  return WalkGenerator(std::move(offsets), std::move(targets), std::move(rates), std::move(measure));
}

inline WalkGenerator walk_rates(const DiscretizedGraph& dg, const MicroParams& micro) {
  return walk_rates(dg, micro.conductance);
}

/// Poisson(mean) weights truncated so that each discarded tail is below tol/2.
struct PoissonWindow {
  std::size_t first = 0;
  std::vector<double> weights;  ///< weights[i] is the weight of index first + i
  std::size_t last() const { return first + weights.size() - 1; }
};

inline PoissonWindow poisson_window(double mean, double tol = 1e-12) {
  detail::require(std::isfinite(mean) && mean >= 0.0, "poisson_window: mean must be finite and nonnegative");
  if (mean == 0.0) return {0, {1.0}};
  // Weights relative to the mode, extended until they are negligible.
  const auto mode = static_cast<std::size_t>(std::floor(mean));
  constexpr double tiny = 1e-30;
  std::vector<double> left{1.0};
  for (std::size_t k = mode; k > 0 && left.back() > tiny; --k) left.push_back(left.back() * static_cast<double>(k) / mean);
  std::vector<double> right;
  double w = 1.0;
  for (std::size_t k = mode + 1; w > tiny; ++k) {
    w *= mean / static_cast<double>(k);
    right.push_back(w);
  }
  PoissonWindow pw;
  pw.first = mode + 1 - left.size();
  pw.weights.assign(left.rbegin(), left.rend());
  pw.weights.insert(pw.weights.end(), right.begin(), right.end());
  double total = 0.0;
  for (double v : pw.weights) total += v;
  for (double& v : pw.weights) v /= total;
  std::size_t lo = 0, hi = pw.weights.size();
  double cut = 0.0;
  while (lo + 1 < hi && cut + pw.weights[lo] < tol / 2) cut += pw.weights[lo++];
  cut = 0.0;
  while (hi > lo + 1 && cut + pw.weights[hi - 1] < tol / 2) cut += pw.weights[--hi];
  pw.weights = std::vector<double>(pw.weights.begin() + static_cast<std::ptrdiff_t>(lo),
                                   pw.weights.begin() + static_cast<std::ptrdiff_t>(hi));
  pw.first += lo;
  total = 0.0;
  for (double v : pw.weights) total += v;
  for (double& v : pw.weights) v /= total;
  return pw;
}

namespace detail {

/// W <- P W with P = I + Q/q, one row of W per deme.
inline void uniformized_step(const WalkGenerator& gen, double q, const RowMatrix& in, RowMatrix& out) {
  for (std::size_t x = 0; x < gen.size(); ++x) {
    auto row = out.row(static_cast<Eigen::Index>(x));
    row = (1.0 - gen.exit_rate(x) / q) * in.row(static_cast<Eigen::Index>(x));
    for (std::size_t i = gen.begin(x); i < gen.end(x); ++i) {
      row += (gen.rate(i) / q) * in.row(static_cast<Eigen::Index>(gen.target(i)));
    }
  }
}

/// exp(tQ) W by uniformization.
inline RowMatrix expm_action(const WalkGenerator& gen, double t, RowMatrix w, double tol = 1e-12) {
  require(std::isfinite(t) && t >= 0.0, "time must be finite and nonnegative");
  const double q = gen.max_exit_rate();
  if (t == 0.0 || q == 0.0) return w;
  const PoissonWindow pw = poisson_window(q * t, tol);
  RowMatrix acc = RowMatrix::Zero(w.rows(), w.cols());
  RowMatrix next(w.rows(), w.cols());
  for (std::size_t k = 0; k <= pw.last(); ++k) {
    if (k >= pw.first) acc += pw.weights[k - pw.first] * w;
    if (k == pw.last()) break;
    uniformized_step(gen, q, w, next);
    w.swap(next);
  }
  return acc;
}

}  // namespace detail

/// p^n(t, x, y) = [exp(tQ)]_{xy} / m_n(y).
struct KernelMatrix {
  double t = 0.0;
  Eigen::MatrixXd p;

  double max_asymmetry() const { return (p - p.transpose()).cwiseAbs().maxCoeff(); }
  double min_entry() const { return p.minCoeff(); }
  double max_mass_error(const WalkGenerator& gen) const {
    double worst = 0.0;
    for (Eigen::Index x = 0; x < p.rows(); ++x) {
      double mass = 0.0;
      for (Eigen::Index y = 0; y < p.cols(); ++y) mass += p(x, y) * gen.measure(static_cast<std::size_t>(y));
      worst = std::max(worst, std::abs(mass - 1.0));
    }
    return worst;
  }
};

inline constexpr std::size_t kMaxKernelDemes = 5000;

/// Columns y in `sources` of p^n(t, ., y); column j holds p^n(t, x, sources[j]).
inline Eigen::MatrixXd kernel_columns(const WalkGenerator& gen, double t, std::span<const std::size_t> sources) {
  detail::require(t >= 0.0, "kernel: t must be nonnegative");
  const std::size_t n = gen.size();
  RowMatrix w = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(sources.size()));
  for (std::size_t j = 0; j < sources.size(); ++j) {
    detail::require(sources[j] < n, "kernel: source deme out of range");
    w(static_cast<Eigen::Index>(sources[j]), static_cast<Eigen::Index>(j)) = 1.0;
  }
  Eigen::MatrixXd out = detail::expm_action(gen, t, std::move(w));
  for (std::size_t j = 0; j < sources.size(); ++j) out.col(static_cast<Eigen::Index>(j)) /= gen.measure(sources[j]);
  return out;
}

inline KernelMatrix kernel(const WalkGenerator& gen, double t) {
  detail::require(t >= 0.0, "kernel: t must be nonnegative");
  detail::require(gen.size() <= kMaxKernelDemes,
                  "kernel: more than 5000 demes; estimate transition probabilities by Monte Carlo paths instead");
  std::vector<std::size_t> all(gen.size());
  for (std::size_t x = 0; x < all.size(); ++x) all[x] = x;
  return {t, kernel_columns(gen, t, all)};
}

/// P_t f(x) = sum_y f(y) p^n(t,x,y) m_n(y).
inline std::vector<double> semigroup_apply(const WalkGenerator& gen, double t, std::span<const double> f) {
  detail::require(t >= 0.0, "semigroup_apply: t must be nonnegative");
  detail::require(f.size() == gen.size(), "semigroup_apply: one value per deme required");
  RowMatrix w(static_cast<Eigen::Index>(f.size()), 1);
  for (std::size_t x = 0; x < f.size(); ++x) w(static_cast<Eigen::Index>(x), 0) = f[x];
  const RowMatrix r = detail::expm_action(gen, t, std::move(w));
  return std::vector<double>(r.data(), r.data() + r.size());
}

// ---------------------------------------------------------------------------
// Heat-kernel diagnostics

struct KernelFit {
  double resolution = 0.0;  ///< 1 / epsilon_n
  double epsilon = 0.0;
  double C1 = 0.0, C2 = 0.0;  ///< upper Gaussian bound, t >= epsilon
  double C3 = 0.0, C4 = 0.0;  ///< sub-Gaussian bound, t <= epsilon
  double C5 = 0.0, C6 = 0.0;  ///< lower Gaussian bound
  double sigma = 0.0, C7 = 0.0;
  std::size_t excluded = 0;  ///< grid points too small to resolve, left out of the log fits
};

struct KernelDiagnostics {
  std::vector<double> times;
  std::vector<KernelFit> fits;

  void write_csv(std::ostream& os) const {
    os << "resolution,t,constant,value\n";
    char buf[64];
    for (const auto& f : fits) {
      const std::pair<const char*, double> vals[] = {{"C1", f.C1}, {"C2", f.C2}, {"C3", f.C3}, {"C4", f.C4}, {"C5", f.C5},
                                                     {"C6", f.C6}, {"sigma", f.sigma}, {"C7", f.C7}};
      for (const auto& [name, v] : vals) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << f.resolution << ",all," << name << ',' << buf << '\n';
      }
    }
  }

  std::string summary() const {
    std::ostringstream os;
    os.precision(6);
    for (const auto& f : fits) {
      os << "L=" << f.resolution << ": C1=" << f.C1 << " C2=" << f.C2 << " C3=" << f.C3 << " C4=" << f.C4
         << " C5=" << f.C5 << " C6=" << f.C6 << " sigma=" << f.sigma << " C7=" << f.C7 << " excluded=" << f.excluded
         << '\n';
    }
    return os.str();
  }
};

/// Kernel values below this multiple of 1/m_n are within the uniformization
/// truncation error and are left out of logarithmic fits.
inline constexpr double kResolvableMass = 1e-9;

namespace detail {

struct KernelSample {
  double t, d, value;     ///< value = p * (eps v sqrt t)
  std::size_t x, y;
};

inline KernelFit fit_level(const DiscretizedGraph& dg, const WalkGenerator& gen, const std::vector<double>& times) {
  KernelFit fit;
  fit.epsilon = dg.epsilon();
  fit.resolution = 1.0 / fit.epsilon;
  const double eps = fit.epsilon;
  std::vector<double> grid{eps / 4, eps / 2, eps};
  grid.insert(grid.end(), times.begin(), times.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const std::size_t n = dg.size();
  std::vector<Eigen::MatrixXd> ks;
  for (double t : grid) ks.push_back(kernel(gen, t).p);

  double min_measure = std::numeric_limits<double>::infinity();
  for (std::size_t x = 0; x < n; ++x) min_measure = std::min(min_measure, gen.measure(x));
  const double floor_value = kResolvableMass / min_measure;

  std::vector<std::vector<double>> dist(n, std::vector<double>(n));
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t y = 0; y < n; ++y) dist[x][y] = deme_distance(dg, x, y);

  double c1 = 0.0, c3 = 0.0, c5 = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double t = grid[g], scale = std::max(eps, std::sqrt(t));
    for (std::size_t x = 0; x < n; ++x) {
      const double v = ks[g](x, x) * scale;
      if (t >= eps) c1 = std::max(c1, v);
      if (t <= eps) c3 = std::max(c3, v);
      c5 = std::min(c5, v);
    }
  }
  double c2 = std::numeric_limits<double>::infinity(), c4 = c2, c6 = 0.0;
  std::size_t excluded = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double t = grid[g], scale = std::max(eps, std::sqrt(t));
    for (std::size_t x = 0; x < n; ++x) {
      for (std::size_t y = 0; y < n; ++y) {
        const double d = dist[x][y];
        if (d == 0.0) continue;
        const double p = ks[g](x, y);
        if (p < floor_value) {
          ++excluded;
          continue;
        }
        const double logv = std::log(p * scale);
        if (t >= eps) c2 = std::min(c2, (std::log(c1) - logv) / (d * d / t));
        if (t <= eps) c4 = std::min(c4, (std::log(c3) - logv) / (d / std::sqrt(t)));
        c6 = std::max(c6, (std::log(c5) - logv) / (d * d / t));
      }
    }
  }
  fit.C1 = c1;
  fit.C2 = std::isfinite(c2) ? std::max(c2, 0.0) : 0.0;
  fit.C3 = c3;
  fit.C4 = std::isfinite(c4) ? std::max(c4, 0.0) : 0.0;
  fit.C5 = c5;
  fit.C6 = c6;
  fit.excluded = excluded;

  // Hoelder: neighbor moves in x and consecutive grid times, fitted on
  // log dp + log(tau)/2 = log C7 + sigma (log delta - log(tau)/2).
  struct HolderPoint {
    double dp, delta, tau;
  };
  std::vector<HolderPoint> pts;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (std::size_t x = 0; x < n; ++x) {
      for (std::size_t y = 0; y < n; ++y) {
        for (const auto& nb : dg.neighbors(x)) {
          if (nb.deme < x) continue;
          const double dp = std::abs(ks[g](x, y) - ks[g](nb.deme, y));
          if (dp > floor_value) pts.push_back({dp, dist[x][nb.deme], grid[g]});
        }
        if (g + 1 < grid.size()) {
          const double dp = std::abs(ks[g](x, y) - ks[g + 1](x, y));
          if (dp > floor_value) pts.push_back({dp, std::sqrt(grid[g + 1] - grid[g]), grid[g]});
        }
      }
    }
  }
  if (pts.size() >= 2) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& p : pts) {
      const double u = std::log(p.delta) - 0.5 * std::log(p.tau);
      const double v = std::log(p.dp) + 0.5 * std::log(p.tau);
      sx += u, sy += v, sxx += u * u, sxy += u * v;
    }
    const double m = static_cast<double>(pts.size());
    const double den = m * sxx - sx * sx;
    fit.sigma = den > 0 ? (m * sxy - sx * sy) / den : 0.0;
    const double s = std::clamp(fit.sigma, 1e-3, 1.0);
    for (const auto& p : pts) fit.C7 = std::max(fit.C7, p.dp * std::pow(p.tau, (1.0 + s) / 2) / std::pow(p.delta, s));
  }
  return fit;
}

}  // namespace detail

/// Fits the heat-kernel constants at each resolution. The time grid is
/// `times` plus epsilon_n / 4, epsilon_n / 2 and epsilon_n.
inline KernelDiagnostics kernel_diagnostics(const std::vector<DiscretizedGraph>& levels, const std::vector<double>& times,
                                            const std::vector<double>& alpha, ThetaMean mean = {}) {
  detail::require(levels.size() >= 2, "kernel_diagnostics: at least two resolutions required");
  for (double t : times) detail::require(t > 0.0, "kernel_diagnostics: times must be positive");
  KernelDiagnostics out;
  out.times = times;
  for (const auto& dg : levels) {
    const auto gen = walk_rates(dg, conductances(dg, alpha, mean));
    out.fits.push_back(detail::fit_level(dg, gen, times));
  }
  return out;
}

/// sup over coarse deme pairs of |p^coarse(t,x,y) - p^fine(t,x',y')| with x', y'
/// the fine demes at the same positions.
inline double local_clt_error(const DiscretizedGraph& coarse, const DiscretizedGraph& fine, double t,
                              const std::vector<double>& alpha, ThetaMean mean = {}) {
  detail::require(t > 0.0, "local_clt_error: t must be positive");
  detail::require(coarse.graph().edge_count() == fine.graph().edge_count(), "local_clt_error: different graphs");
  bool identical = coarse.size() == fine.size();
  for (std::size_t e = 0; e < coarse.graph().edge_count(); ++e) {
    detail::require(std::abs(coarse.graph().edge(e).length - fine.graph().edge(e).length) <= 1e-12,
                    "local_clt_error: different graphs");
    const double ratio = fine.resolution(e) / coarse.resolution(e);
    identical = identical && ratio == 1.0;
  }
  std::vector<std::size_t> map(coarse.size());
  for (std::size_t x = 0; x < coarse.size(); ++x) {
    const auto hit = fine.deme_at(coarse.point(x), 1e-9);
    detail::require(hit.has_value(), "local_clt_error: resolutions are not nested");
    map[x] = *hit;
  }
  if (!identical) {
    for (std::size_t e = 0; e < coarse.graph().edge_count(); ++e)
      detail::require(fine.resolution(e) >= 4.0 * coarse.resolution(e) - 1e-9,
                      "local_clt_error: fine resolution must be at least 4x coarse");
  }
  const auto gc = walk_rates(coarse, conductances(coarse, alpha, mean));
  const auto gf = walk_rates(fine, conductances(fine, alpha, mean));
  const Eigen::MatrixXd pc = kernel(gc, t).p;
  const Eigen::MatrixXd pf = kernel_columns(gf, t, map);
  double worst = 0.0;
  for (std::size_t x = 0; x < coarse.size(); ++x)
    for (std::size_t y = 0; y < coarse.size(); ++y)
      worst = std::max(worst, std::abs(pc(x, y) - pf(map[x], y)));
  return worst;
}

}  // namespace gfkpp
