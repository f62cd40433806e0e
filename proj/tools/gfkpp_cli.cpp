// Command-line driver. Exit codes: 0 success, 1 a check failed, 2 usage or runtime error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gfkpp/gfkpp.hpp"

using namespace gfkpp;
namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> replicates;
  std::optional<std::string> ladder;
  std::optional<double> t_end, dt, threshold, t;
  std::optional<std::string> micro;
  unsigned threads = 0;
};

std::vector<double> parse_ladder(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(config::number(json(item), "--ladder"));
  return out;
}

/// Loads the config and applies flag overrides; the overrides are returned
/// for the provenance sidecar.
ExperimentConfig load(const Flags& f, json& overrides) {
  ExperimentConfig c = load_experiment(f.config);
  overrides = json::object();
  if (f.replicates) {
    c.bvm_replicates = c.sde_replicates = *f.replicates;
    overrides["replicates"] = *f.replicates;
  }
  if (f.ladder) {
    c.ladder = parse_ladder(*f.ladder);
    overrides["ladder"] = c.ladder;
  }
  if (f.t_end) {
    c.t_end = *f.t_end;
    c.grid.clear();
    overrides["t_end"] = *f.t_end;
  }
  if (f.dt) {
    c.dt = *f.dt;
    overrides["dt"] = *f.dt;
  }
  if (f.threshold) {
    c.threshold = *f.threshold;
    overrides["threshold"] = *f.threshold;
  }
  if (f.out) c.output = *f.out;
  c.check();
  return c;
}

std::uint64_t need_seed(const Flags& f) {
  if (!f.seed) throw ConfigError("--seed is required for this subcommand");
  return *f.seed;
}

int simulate(const Flags& f, bool sde) {
  json ov;
  const auto c = load(f, ov);
  const std::uint64_t seed = need_seed(f);
  const RunMeta meta = RunMeta::of(sde ? "simulate-sde" : "simulate-bvm", c, ov, seed);
  const auto dg = level(c, c.ladder.front());
  const auto u0 = sample_profile(dg, c.profile());
  const auto grid = c.sample_grid();
  std::vector<Trajectory> runs;
  json extra{{"resolution", c.ladder.front()}};
  const std::string tag = sde ? "sde" : "bvm";
  if (sde) {
    const auto model = SdeModel::build(dg, c.macro, c.theta, c.vertex_scaling);
    const double dt = choose_dt(c, model);
    runs = sde_ensemble_runs(dg, model, SdeEnsembleConfig{u0, c.t_end, dt, grid, c.sde_replicates, seed, {}, f.threads});
    extra["dt"] = dt;
    extra["lattice_seed"] = seed;
    extra["lattice_seed_rule"] = "replicate r uses derive_seed(lattice_seed, r)";
  } else {
    const auto micro = micro_from_macro(c.macro, dg, c.micro_options());
    runs = ensemble_runs(dg, micro, EnsembleConfig{u0, c.t_end, grid, c.bvm_replicates, seed, false, f.threads});
    extra["stream_seed_rule"] = "replicate r uses derive_seed(seed, r)";
  }
  write_artifact(c.output / (tag + "_trajectory.csv"), trajectory_csv(dg, runs.front()), meta, extra);
  const auto m = moments(runs);
  write_artifact(c.output / (tag + "_ensemble.csv"), ensemble_csv(dg, m), meta, extra);
  std::uint64_t events = 0;
  for (const auto& r : runs) events += r.events;
  double mass = 0.0;
  for (std::size_t x = 0; x < dg.size(); ++x) mass += m.mean.back()[x] * dg.measure(x);
  std::printf("%s L=%s demes=%zu replicates=%zu %s=%llu mean_mass_at_T=%.17g\n", tag.c_str(), label(c.ladder.front()).c_str(),
              dg.size(), runs.size(), sde ? "steps" : "events", static_cast<unsigned long long>(events), mass);
  return 0;
}

int kernel_cmd(const Flags& f) {
  json ov;
  auto c = load(f, ov);
  if (f.t) {
    c.kernel_times = {*f.t};
    ov["t"] = *f.t;
  }
  const RunMeta meta = RunMeta::of("kernel", c, ov, f.seed.value_or(0));
  const auto dg = level(c, c.ladder.front());
  const auto gen = walk_rates(dg, conductances(dg, c.macro.alpha, c.theta));
  std::vector<KernelMatrix> ks;
  bool ok = true;
  for (double t : c.kernel_times) {
    ks.push_back(kernel(gen, t));
    const auto& k = ks.back();
    const double asym = k.max_asymmetry(), mass = k.max_mass_error(gen), lo = k.min_entry();
    ok = ok && asym <= 1e-10 && mass <= 1e-10 && lo >= 0.0;
    std::printf("t=%.17g asymmetry=%.3e mass_error=%.3e min_entry=%.3e\n", t, asym, mass, lo);
  }
  write_artifact(c.output / "kernel.csv", kernel_csv(ks), meta, {{"resolution", c.ladder.front()}});
  if (c.ladder.size() >= 2) {
    std::vector<DiscretizedGraph> levels;
    for (double L : c.ladder) levels.push_back(level(c, L));
    const auto diag = kernel_diagnostics(levels, c.kernel_times, c.macro.alpha, c.theta);
    std::ostringstream os;
    diag.write_csv(os);
    write_artifact(c.output / "kernel_diagnostics.csv", os.str(), meta);
    std::fputs(diag.summary().c_str(), stdout);
  }
  return ok ? 0 : 1;
}

int dual_cmd(const Flags& f) {
  json ov;
  const auto c = load(f, ov);
  const std::uint64_t seed = need_seed(f);
  const RunMeta meta = RunMeta::of("dual-check", c, ov, seed);
  const auto dg = level(c, c.ladder.front());
  const auto micro = micro_from_macro(c.macro, dg, c.micro_options());
  const auto u0 = sample_profile(dg, c.profile());
  if (c.probes.empty()) throw ConfigError("dual-check needs at least one probe");
  std::vector<std::size_t> probes;
  for (const auto& p : c.probes) probes.push_back(dg.nearest_deme(p));
  const auto mc = duality_gap_mc(dg, micro, u0, probes, c.t_end, c.bvm_replicates, seed, f.threads);
  json rep{{"lhs", mc.lhs}, {"rhs", mc.rhs}, {"stderr", mc.stderr_}, {"replicates", mc.replicates}};
  bool ok = std::abs(mc.lhs - mc.rhs) <= 4.0 * mc.stderr_;
  std::printf("lhs=%.17g rhs=%.17g stderr=%.17g replicates=%zu\n", mc.lhs, mc.rhs, mc.stderr_, mc.replicates);
  if (micro.site_count() <= 16) {
    const auto ex = duality_exact(dg, micro, u0, probes, c.t_end);
    rep["exact_lhs"] = ex.lhs;
    rep["exact_rhs"] = ex.rhs;
    rep["exact_gap"] = ex.gap();
    ok = ok && ex.gap() <= 1e-8;
    std::printf("exact_lhs=%.17g exact_rhs=%.17g exact_gap=%.3e\n", ex.lhs, ex.rhs, ex.gap());
  } else {
    std::printf("exact_gap=unavailable (%zu sites)\n", micro.site_count());
  }
  write_artifact(c.output / "dual_check.json", rep.dump(2) + "\n", meta);
  return ok ? 0 : 1;
}

int converge_cmd(const Flags& f) {
  json ov;
  const auto c = load(f, ov);
  const std::uint64_t seed = need_seed(f);
  const RunMeta meta = RunMeta::of("converge", c, ov, seed);
  const auto rep = run_experiment(c, seed, c.output, &meta, f.threads);
  std::fputs(rep.summary().c_str(), stdout);
  return rep.distances_nonincreasing() ? 0 : 1;
}

int front_cmd(const Flags& f) {
  json ov;
  const auto c = load(f, ov);
  const std::uint64_t seed = need_seed(f);
  const RunMeta meta = RunMeta::of("front-speed", c, ov, seed);
  const auto dg = level(c, c.ladder.front());
  const std::size_t edge = c.front_edge.empty() ? 0 : c.graph.edge_index(c.front_edge);
  const auto u0 = sample_profile(dg, c.profile());
  const auto grid = c.sample_grid();
  std::vector<Trajectory> runs;
  if (c.front_model == "sde") {
    const auto model = SdeModel::build(dg, c.macro, c.theta, c.vertex_scaling);
    runs = sde_ensemble_runs(dg, model, SdeEnsembleConfig{u0, c.t_end, choose_dt(c, model), grid, c.sde_replicates, seed, {}, f.threads});
  } else {
    const auto micro = micro_from_macro(c.macro, dg, c.micro_options());
    runs = ensemble_runs(dg, micro, EnsembleConfig{u0, c.t_end, grid, c.bvm_replicates, seed, false, f.threads});
  }
  std::ostringstream csv;
  csv << "replicate,speed,intercept,points\n";
  double s = 0, ss = 0;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto est = front_speed(dg, runs[r], c.threshold, edge);
    csv << r << ',' << fmt(est.speed) << ',' << fmt(est.intercept) << ',' << est.points << '\n';
    s += est.speed;
    ss += est.speed * est.speed;
  }
  const double n = static_cast<double>(runs.size());
  const double mean = s / n;
  const double se = runs.size() > 1 ? std::sqrt(std::max(0.0, (ss - n * mean * mean) / (n - 1)) / n) : 0.0;
  write_artifact(c.output / "front_speed.csv", csv.str(), meta, {{"model", c.front_model}, {"threshold", c.threshold}});
  std::printf("model=%s threshold=%.17g speed=%.17g stderr=%.17g replicates=%zu\n", c.front_model.c_str(), c.threshold, mean,
              se, runs.size());
  return 0;
}

int validate_cmd(const Flags& f) {
  json ov;
  const auto c = load(f, ov);
  bool ok = true;
  auto report = [&](const DiscretizedGraph& dg, const MicroParams& micro, const std::string& what) {
    const auto rep = validate_conditions(dg, micro, c.macro, c.theta);
    for (const auto& chk : rep.checks) {
      std::printf("%s condition=%s passed=%s residual=%.17g%s%s\n", what.c_str(), chk.name.c_str(), chk.passed ? "true" : "false",
                  chk.residual, chk.detail.empty() ? "" : " detail=", chk.detail.c_str());
    }
    ok = ok && rep.all_passed();
  };
  if (f.micro) {
    const json j = config::read_file(*f.micro);
    if (!j.contains("resolution")) throw ConfigError("micro: missing key 'resolution'");
    const auto dg = discretize(c.graph, j.at("resolution").get<std::vector<double>>());
    report(dg, micro_from_json(j, dg), *f.micro);
  } else {
    for (double L : c.ladder) {
      const auto dg = level(c, L);
      const auto micro = micro_from_macro(c.macro, dg, c.micro_options());
      report(dg, micro, "L=" + label(L));
      if (f.out) {
        const fs::path p = fs::path(*f.out) / ("micro_L" + label(L) + ".json");
        fs::create_directories(p.parent_path());
        std::ofstream(p) << micro_to_json(micro).dump(2) << '\n';
      }
    }
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Biased voter model and stochastic FKPP on metric graphs"};
  app.require_subcommand(1);
  Flags flags;
  struct Sub {
    const char* name;
    const char* help;
    bool seed_required;
  };
  const Sub subs[] = {
      {"simulate-bvm", "simulate the biased voter model", true},
      {"simulate-sde", "simulate the interacting SDE scheme", true},
      {"kernel", "transition kernel and heat-kernel diagnostics", false},
      {"dual-check", "check the duality identity", true},
      {"converge", "BVM vs SDE convergence experiment over the ladder", true},
      {"front-speed", "estimate the front speed on a designated edge", true},
      {"validate", "check the scaling conditions", false},
  };
  for (const auto& s : subs) {
    auto* sc = app.add_subcommand(s.name, s.help);
    sc->add_option("--config", flags.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    auto* seed = sc->add_option("--seed", flags.seed, "master seed (U64)");
    if (s.seed_required) seed->required();
    sc->add_option("--out", flags.out, "output directory");
    sc->add_option("--replicates", flags.replicates, "replicate count for every ensemble")->check(CLI::PositiveNumber);
    sc->add_option("--ladder", flags.ladder, "resolution ladder L1,L2,...");
    sc->add_option("--t-end", flags.t_end, "time horizon");
    sc->add_option("--dt", flags.dt, "SDE step size");
    sc->add_option("--threshold", flags.threshold, "front threshold in (0, 1)");
    sc->add_option("--threads", flags.threads, "worker threads (0 = hardware)");
    if (std::string(s.name) == "kernel") sc->add_option("--t", flags.t, "kernel time");
    if (std::string(s.name) == "validate") sc->add_option("--micro", flags.micro, "stored micro parameters (JSON)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "simulate-bvm") return simulate(flags, false);
    if (cmd == "simulate-sde") return simulate(flags, true);
    if (cmd == "kernel") return kernel_cmd(flags);
    if (cmd == "dual-check") return dual_cmd(flags);
    if (cmd == "converge") return converge_cmd(flags);
    if (cmd == "front-speed") return front_cmd(flags);
    if (cmd == "validate") return validate_cmd(flags);
  } catch (const std::exception& e) {
    std::cerr << cmd << ": " << e.what() << '\n';
    return 2;
  }
  return 2;
}
