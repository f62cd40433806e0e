#pragma once

// Configuration files, CSV artifacts, the convergence experiment and the
// front tracker used by the command-line driver.

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gfkpp/bvm.hpp"
#include "gfkpp/error.hpp"
#include "gfkpp/metric_graph.hpp"
#include "gfkpp/random_walk.hpp"
#include "gfkpp/scaling.hpp"
#include "gfkpp/sde.hpp"
#include "gfkpp/trajectory.hpp"

namespace gfkpp {

inline constexpr const char* kVersion = "0.1.0";

using json = nlohmann::json;

namespace config {

/// Rejects keys outside `allowed`, naming the offending key and context.
inline void only_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

/// A number given either as a JSON number or as a decimal string.
inline double number(const json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || !std::isfinite(v)) throw ConfigError(where + ": '" + s + "' is not a decimal number");
    return v;
  }
  throw ConfigError(where + ": expected a number");
}

inline const json& field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  return j.at(key);
}

inline std::string text(const json& j, const std::string& where) {
  if (!j.is_string()) throw ConfigError(where + ": expected a string");
  return j.get<std::string>();
}

/// A nonnegative integer; JSON parsers may store it as signed.
inline bool is_count(const json& j) {
  return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

inline json read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace config

/// Graph description with its embedded coefficients.
struct GraphFile {
  MetricGraph graph;
  std::vector<std::optional<double>> alpha, beta, gamma;
  std::vector<std::optional<int>> capacity;
  std::vector<std::optional<double>> vertex_growth;
};

/// Schema:
///   {"vertices": ["v0", {"id": "v1", "vertex_growth": "1"}],
///    "edges": [{"id": "e1", "from": "v0", "to": "v1", "length": "1",
///               "alpha": "1", "beta": "0", "gamma": "1", "capacity": 64}]}
/// Lengths and coefficients are decimal strings or numbers; alpha, beta,
/// gamma and capacity are optional per edge.
inline GraphFile parse_graph(const json& j) {
  config::only_keys(j, {"vertices", "edges"}, "graph");
  std::vector<std::string> ids;
  std::vector<std::optional<double>> vg;
  const auto& vs = config::field(j, "vertices", "graph");
  if (!vs.is_array()) throw ConfigError("graph: 'vertices' must be a list");
  for (const auto& v : vs) {
    if (v.is_string()) {
      ids.push_back(v.get<std::string>());
      vg.emplace_back();
    } else {
      config::only_keys(v, {"id", "vertex_growth"}, "graph vertex");
      ids.push_back(config::text(config::field(v, "id", "graph vertex"), "graph vertex id"));
      if (v.contains("vertex_growth")) vg.emplace_back(config::number(v.at("vertex_growth"), "vertex '" + ids.back() + "'"));
      else vg.emplace_back();
    }
  }
  std::vector<EdgeSpec> es;
  GraphFile out;
  const auto& edges = config::field(j, "edges", "graph");
  if (!edges.is_array()) throw ConfigError("graph: 'edges' must be a list");
  for (const auto& e : edges) {
    config::only_keys(e, {"id", "from", "to", "length", "alpha", "beta", "gamma", "capacity"}, "graph edge");
    EdgeSpec s;
    s.id = config::text(config::field(e, "id", "graph edge"), "graph edge id");
    const std::string where = "edge '" + s.id + "'";
    s.from = config::text(config::field(e, "from", where), where + " from");
    s.to = config::text(config::field(e, "to", where), where + " to");
    s.length = config::number(config::field(e, "length", where), where + " length");
    es.push_back(s);
    auto opt = [&](const char* key) -> std::optional<double> {
      if (!e.contains(key)) return std::nullopt;
      return config::number(e.at(key), where + " " + key);
    };
    out.alpha.push_back(opt("alpha"));
    out.beta.push_back(opt("beta"));
    out.gamma.push_back(opt("gamma"));
    if (e.contains("capacity")) {
      if (!e.at("capacity").is_number_integer()) throw ConfigError(where + ": capacity must be an integer");
      out.capacity.emplace_back(e.at("capacity").get<int>());
    } else {
      out.capacity.emplace_back();
    }
  }
  try {
    out.graph = MetricGraph::build(ids, es);
  } catch (const PreconditionError& err) {
    throw ConfigError(std::string("graph: ") + err.what());
  }
  // vertex order of the built graph follows `ids`
  out.vertex_growth = std::move(vg);
  return out;
}

/// Builds an initial density profile from its description:
///   {"type": "constant", "value": v}
///   {"type": "block", "edge": id, "from": a, "to": b, "inside": 1, "outside": 0}
///   {"type": "radial", "vertex": id, "near": a, "far": b}   linear in graph distance
///   {"type": "edges", "values": {id: [start, end], ...}}     linear along each edge
using Profile = std::function<double(std::size_t, double)>;

inline Profile parse_profile(const json& j, const MetricGraph& g) {
  const std::string type = config::text(config::field(j, "type", "initial"), "initial type");
  auto unit = [](double v, const std::string& what) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("initial: " + what + " must lie in [0, 1]");
    return v;
  };
  if (type == "constant") {
    config::only_keys(j, {"type", "value"}, "initial");
    const double v = unit(config::number(config::field(j, "value", "initial"), "initial value"), "value");
    return [v](std::size_t, double) { return v; };
  }
  if (type == "block") {
    config::only_keys(j, {"type", "edge", "from", "to", "inside", "outside"}, "initial");
    const std::size_t e = g.edge_index(config::text(config::field(j, "edge", "initial"), "initial edge"));
    const double a = config::number(config::field(j, "from", "initial"), "initial from");
    const double b = config::number(config::field(j, "to", "initial"), "initial to");
    const double in = j.contains("inside") ? unit(config::number(j.at("inside"), "inside"), "inside") : 1.0;
    const double out = j.contains("outside") ? unit(config::number(j.at("outside"), "outside"), "outside") : 0.0;
    return [=](std::size_t edge, double s) { return edge == e && s >= a && s <= b ? in : out; };
  }
  if (type == "radial") {
    config::only_keys(j, {"type", "vertex", "near", "far"}, "initial");
    const std::size_t v = g.vertex_index(config::text(config::field(j, "vertex", "initial"), "initial vertex"));
    const double near = unit(config::number(config::field(j, "near", "initial"), "near"), "near");
    const double far = unit(config::number(config::field(j, "far", "initial"), "far"), "far");
    double radius = 0.0;
    for (std::size_t w = 0; w < g.vertex_count(); ++w) radius = std::max(radius, g.vertex_distance(v, w));
    return [=, g = g](std::size_t e, double s) {
      const auto& ed = g.edge(e);
      const double d = std::min(g.vertex_distance(v, ed.from) + s, g.vertex_distance(v, ed.to) + ed.length - s);
      const double r = radius > 0.0 ? std::min(d / radius, 1.0) : 0.0;
      return near + (far - near) * r;
    };
  }
  if (type == "edges") {
    config::only_keys(j, {"type", "values"}, "initial");
    const auto& vals = config::field(j, "values", "initial");
    if (!vals.is_object()) throw ConfigError("initial values: expected an object keyed by edge id");
    std::vector<std::pair<double, double>> ends(g.edge_count(), {-1.0, -1.0});
    for (const auto& [id, pair] : vals.items()) {
      const std::size_t e = g.edge_index(id);
      if (!pair.is_array() || pair.size() != 2) throw ConfigError("initial values: edge '" + id + "' needs [start, end]");
      ends[e] = {unit(config::number(pair[0], id), "start"), unit(config::number(pair[1], id), "end")};
    }
    for (std::size_t e = 0; e < g.edge_count(); ++e)
      if (ends[e].first < 0.0) throw ConfigError("initial values: no entry for edge '" + g.edge(e).id + "'");
    std::vector<double> length(g.edge_count());
    for (std::size_t e = 0; e < g.edge_count(); ++e) length[e] = g.edge(e).length;
    return [=](std::size_t e, double s) {
      const double f = s / length[e];
      return ends[e].first + (ends[e].second - ends[e].first) * f;
    };
  }
  throw ConfigError("initial: unknown profile type '" + type + "'");
}

/// Everything a subcommand needs; see configs/ for worked examples.
struct ExperimentConfig {
  std::filesystem::path graph_path;
  MetricGraph graph;
  MacroParams macro;
  std::vector<std::optional<int>> capacity;
  ThetaMean theta;
  VertexGrowthScaling vertex_scaling = VertexGrowthScaling::Matched;
  std::vector<double> ladder;
  double t_end = 0.0;
  std::size_t grid_points = 10;
  std::vector<double> grid;  ///< explicit sample times, overriding grid_points
  std::optional<double> dt;
  std::size_t bvm_replicates = 1;
  std::size_t sde_replicates = 1;
  std::optional<std::uint64_t> seed;
  std::filesystem::path output = "out";
  json initial = json{{"type", "constant"}, {"value", 0.5}};
  std::vector<GraphPoint> probes;
  std::vector<double> kernel_times{0.1, 0.5, 1.0};
  std::string front_edge;
  double threshold = 0.5;
  std::string front_model = "sde";
  json source;  ///< the parsed file, for hashing

  Profile profile() const { return parse_profile(initial, graph); }

  std::vector<double> sample_grid() const {
    if (!grid.empty()) return grid;
    return uniform_grid(0.0, t_end, grid_points);
  }

  MicroOptions micro_options() const { return {theta, capacity}; }

  void check() const {
    macro.check(graph);
    if (ladder.empty()) throw ConfigError("config: the resolution ladder is empty");
    for (std::size_t i = 0; i < ladder.size(); ++i) {
      if (!(ladder[i] > 0.0)) throw ConfigError("config: ladder values must be positive");
      if (i > 0 && !(ladder[i] > ladder[i - 1])) throw ConfigError("config: ladder must be strictly increasing");
    }
    if (!(t_end > 0.0) || !std::isfinite(t_end)) throw ConfigError("config: t_end must be positive");
    if (grid.empty() && grid_points < 1) throw ConfigError("config: grid_points must be at least 1");
    if (bvm_replicates < 1 || sde_replicates < 1) throw ConfigError("config: replicate counts must be at least 1");
    if (dt && !(*dt > 0.0)) throw ConfigError("config: dt must be positive");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("config: threshold must lie in (0, 1)");
    if (front_model != "sde" && front_model != "bvm") throw ConfigError("config: front model must be 'sde' or 'bvm'");
    check_grid(sample_grid(), 0.0, t_end);
    (void)profile();
  }
};

namespace config {

/// A scalar applied to every key, or an object keyed by edge or vertex id.
inline void per_item(const json& j, const std::string& what, std::size_t count,
                     const std::function<std::size_t(const std::string&)>& index, std::vector<double>& out,
                     std::vector<bool>& set) {
  if (j.is_object()) {
    for (const auto& [id, v] : j.items()) {
      std::size_t i = 0;
      try {
        i = index(id);
      } catch (const PreconditionError&) {
        throw ConfigError(what + ": unknown id '" + id + "'");
      }
      out[i] = number(v, what + " '" + id + "'");
      set[i] = true;
    }
  } else {
    const double v = number(j, what);
    out.assign(count, v);
    set.assign(count, true);
  }
}

}  // namespace config

inline ExperimentConfig parse_experiment(const json& j, const std::filesystem::path& base_dir) {
  config::only_keys(j,
                    {"graph", "macro", "theta", "vertex_growth_scaling", "ladder", "t_end", "grid_points", "grid", "dt",
                     "replicates", "seed", "output", "initial", "probes", "kernel_times", "front"},
                    "config");
  ExperimentConfig c;
  c.source = j;
  c.graph_path = base_dir / config::text(config::field(j, "graph", "config"), "config graph");
  const GraphFile gf = parse_graph(config::read_file(c.graph_path));
  c.graph = gf.graph;
  const MetricGraph& g = c.graph;
  const std::size_t ne = g.edge_count(), nv = g.vertex_count();

  std::vector<double> alpha(ne), beta(ne, 0.0), gamma(ne), vg(nv, 0.0);
  std::vector<bool> has_alpha(ne, false), has_gamma(ne, false), has_beta(ne, false), has_vg(nv, false);
  for (std::size_t e = 0; e < ne; ++e) {
    if (gf.alpha[e]) alpha[e] = *gf.alpha[e], has_alpha[e] = true;
    if (gf.beta[e]) beta[e] = *gf.beta[e], has_beta[e] = true;
    if (gf.gamma[e]) gamma[e] = *gf.gamma[e], has_gamma[e] = true;
  }
  for (std::size_t v = 0; v < nv; ++v)
    if (gf.vertex_growth[v]) vg[v] = *gf.vertex_growth[v], has_vg[v] = true;
  c.capacity = gf.capacity;
  if (j.contains("macro")) {
    const auto& m = j.at("macro");
    config::only_keys(m, {"alpha", "beta", "gamma", "vertex_growth", "capacity"}, "macro");
    auto edge = [&](const std::string& id) { return g.edge_index(id); };
    auto vertex = [&](const std::string& id) { return g.vertex_index(id); };
    if (m.contains("alpha")) config::per_item(m.at("alpha"), "macro alpha", ne, edge, alpha, has_alpha);
    if (m.contains("beta")) config::per_item(m.at("beta"), "macro beta", ne, edge, beta, has_beta);
    if (m.contains("gamma")) config::per_item(m.at("gamma"), "macro gamma", ne, edge, gamma, has_gamma);
    if (m.contains("vertex_growth")) config::per_item(m.at("vertex_growth"), "macro vertex_growth", nv, vertex, vg, has_vg);
    if (m.contains("capacity")) {
      std::vector<double> cap(ne, 0.0);
      std::vector<bool> has(ne, false);
      config::per_item(m.at("capacity"), "macro capacity", ne, edge, cap, has);
      for (std::size_t e = 0; e < ne; ++e) {
        if (!has[e]) continue;
        if (cap[e] != std::round(cap[e]) || cap[e] < 1) throw ConfigError("macro capacity must be a positive integer");
        c.capacity[e] = static_cast<int>(cap[e]);
      }
    }
  }
  for (std::size_t e = 0; e < ne; ++e) {
    if (!has_alpha[e]) throw ConfigError("no alpha given for edge '" + g.edge(e).id + "'");
    if (!has_gamma[e]) throw ConfigError("no gamma given for edge '" + g.edge(e).id + "'");
  }
  c.macro = {alpha, beta, gamma, vg};

  if (j.contains("theta")) {
    const auto& t = j.at("theta");
    if (t.is_string() && t.get<std::string>() == "geometric") {
      c.theta = ThetaMean::geometric();
    } else if (t.is_object()) {
      config::only_keys(t, {"power"}, "theta");
      c.theta = ThetaMean::power(config::number(config::field(t, "power", "theta"), "theta power"));
    } else {
      throw ConfigError("theta: expected \"geometric\" or {\"power\": p}");
    }
  }
  if (j.contains("vertex_growth_scaling")) {
    const std::string s = config::text(j.at("vertex_growth_scaling"), "vertex_growth_scaling");
    if (s == "matched") c.vertex_scaling = VertexGrowthScaling::Matched;
    else if (s == "literal") c.vertex_scaling = VertexGrowthScaling::Literal;
    else throw ConfigError("vertex_growth_scaling must be 'matched' or 'literal'");
  }
  const auto& ladder = config::field(j, "ladder", "config");
  if (!ladder.is_array()) throw ConfigError("config: ladder must be a list");
  for (const auto& l : ladder) c.ladder.push_back(config::number(l, "ladder"));
  c.t_end = config::number(config::field(j, "t_end", "config"), "t_end");
  if (j.contains("grid_points")) {
    if (!config::is_count(j.at("grid_points"))) throw ConfigError("grid_points must be a positive integer");
    c.grid_points = j.at("grid_points").get<std::size_t>();
  }
  if (j.contains("grid")) {
    if (!j.at("grid").is_array()) throw ConfigError("grid must be a list of times");
    for (const auto& t : j.at("grid")) c.grid.push_back(config::number(t, "grid"));
  }
  if (j.contains("dt")) c.dt = config::number(j.at("dt"), "dt");
  if (j.contains("replicates")) {
    const auto& r = j.at("replicates");
    auto count = [](const json& v, const char* what) {
      if (!config::is_count(v)) throw ConfigError(std::string("replicates ") + what + " must be a positive integer");
      return v.get<std::size_t>();
    };
    if (r.is_object()) {
      config::only_keys(r, {"bvm", "sde"}, "replicates");
      if (r.contains("bvm")) c.bvm_replicates = count(r.at("bvm"), "bvm");
      if (r.contains("sde")) c.sde_replicates = count(r.at("sde"), "sde");
    } else {
      c.bvm_replicates = c.sde_replicates = count(r, "");
    }
  }
  if (j.contains("seed")) {
    if (!config::is_count(j.at("seed"))) throw ConfigError("seed must be a nonnegative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("output")) c.output = config::text(j.at("output"), "output");
  if (j.contains("initial")) c.initial = j.at("initial");
  if (j.contains("probes")) {
    if (!j.at("probes").is_array()) throw ConfigError("probes must be a list");
    for (const auto& p : j.at("probes")) {
      config::only_keys(p, {"edge", "coord"}, "probe");
      const std::string id = config::text(config::field(p, "edge", "probe"), "probe edge");
      std::size_t e = 0;
      try {
        e = g.edge_index(id);
      } catch (const PreconditionError&) {
        throw ConfigError("probe: unknown edge '" + id + "'");
      }
      c.probes.push_back({e, config::number(config::field(p, "coord", "probe"), "probe coord")});
    }
  }
  if (j.contains("kernel_times")) {
    c.kernel_times.clear();
    for (const auto& t : j.at("kernel_times")) c.kernel_times.push_back(config::number(t, "kernel_times"));
  }
  if (j.contains("front")) {
    const auto& f = j.at("front");
    config::only_keys(f, {"edge", "threshold", "model"}, "front");
    if (f.contains("edge")) c.front_edge = config::text(f.at("edge"), "front edge");
    if (f.contains("threshold")) c.threshold = config::number(f.at("threshold"), "front threshold");
    if (f.contains("model")) c.front_model = config::text(f.at("model"), "front model");
  }
  c.check();
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  return parse_experiment(config::read_file(path), path.parent_path());
}

/// Uniform resolution L on every edge.
inline DiscretizedGraph level(const ExperimentConfig& c, double L) { return discretize(c.graph, L); }

/// The configured dt, or the largest T / n below the guard at the finest
/// level with n a multiple of the grid point count.
inline double choose_dt(const ExperimentConfig& c, const SdeModel& finest) {
  if (c.dt) return *c.dt;
  const double per = c.grid.empty() ? static_cast<double>(c.grid_points) : 1.0;
  const double n = per * std::ceil(c.t_end / (per * finest.dt_limit) - 1e-9);
  return c.t_end / n;
}

// ---------------------------------------------------------------------------
// Artifacts

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Provenance written next to every CSV as <name>.meta.json.
struct RunMeta {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  json extra = json::object();

  static RunMeta of(const std::string& command, const ExperimentConfig& c, const json& overrides, std::uint64_t seed) {
    RunMeta m;
    m.command = command;
    m.config_hash = fnv1a(c.source.dump() + overrides.dump());
    m.seed = seed;
    m.extra["overrides"] = overrides;
    return m;
  }

  json to_json(const std::string& artifact) const {
    json j = extra;
    j["artifact"] = artifact;
    j["command"] = command;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["versions"] = {{"gfkpp", kVersion},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"compiler", __VERSION__}};
    return j;
  }
};

inline void write_artifact(const std::filesystem::path& path, const std::string& body, const RunMeta& meta,
                           const json& extra = json::object()) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << body;
  }
  json m = meta.to_json(path.filename().string());
  for (const auto& [k, v] : extra.items()) m[k] = v;
  std::filesystem::path side = path;
  side.replace_extension(".meta.json");
  std::ofstream out(side, std::ios::binary);
  if (!out) throw Error("cannot write '" + side.string() + "'");
  out << m.dump(2) << '\n';
}

inline std::string trajectory_csv(const DiscretizedGraph& dg, const Trajectory& tr) {
  std::ostringstream os;
  os << "time,deme,edge,coordinate,density\n";
  for (std::size_t i = 0; i < tr.times.size(); ++i)
    for (std::size_t x = 0; x < dg.size(); ++x)
      os << fmt(tr.times[i]) << ',' << x << ',' << dg.graph().edge(dg.deme(x).edge).id << ',' << fmt(dg.deme(x).coord)
         << ',' << fmt(tr.values[i][x]) << '\n';
  return os.str();
}

inline std::string ensemble_csv(const DiscretizedGraph& dg, const MomentTable& m) {
  std::ostringstream os;
  os << "time,deme,edge,coordinate,mean,var,stderr,replicates\n";
  for (std::size_t i = 0; i < m.times.size(); ++i)
    for (std::size_t x = 0; x < dg.size(); ++x)
      os << fmt(m.times[i]) << ',' << x << ',' << dg.graph().edge(dg.deme(x).edge).id << ',' << fmt(dg.deme(x).coord)
         << ',' << fmt(m.mean[i][x]) << ',' << fmt(m.var[i][x]) << ',' << fmt(m.stderr_[i][x]) << ',' << m.replicates
         << '\n';
  return os.str();
}

inline std::string kernel_csv(const std::vector<KernelMatrix>& ks) {
  std::ostringstream os;
  os << "t,source,target,value\n";
  for (const auto& k : ks)
    for (Eigen::Index x = 0; x < k.p.rows(); ++x)
      for (Eigen::Index y = 0; y < k.p.cols(); ++y) os << fmt(k.t) << ',' << x << ',' << y << ',' << fmt(k.p(x, y)) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Micro parameters on disk, so a stored parameter set can be re-validated.

inline json micro_to_json(const MicroParams& m) {
  return {{"resolution", m.resolution},       {"capacity", m.capacity},   {"conductance", m.conductance},
          {"voter", m.voter},                 {"bias", m.bias},           {"interior_bias", m.interior_bias},
          {"vertex_bias", m.vertex_bias}};
}

inline MicroParams micro_from_json(const json& j, const DiscretizedGraph& dg) {
  config::only_keys(j, {"resolution", "capacity", "conductance", "voter", "bias", "interior_bias", "vertex_bias"}, "micro");
  MicroParams m;
  try {
    m.resolution = j.at("resolution").get<std::vector<double>>();
    m.capacity = j.at("capacity").get<std::vector<int>>();
    m.conductance = j.at("conductance").get<std::vector<double>>();
    m.voter = j.at("voter").get<std::vector<double>>();
    m.bias = j.at("bias").get<std::vector<double>>();
    m.interior_bias = j.at("interior_bias").get<std::vector<double>>();
    m.vertex_bias = j.at("vertex_bias").get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("micro: ") + e.what());
  }
  const MetricGraph& g = dg.graph();
  if (m.resolution.size() != g.edge_count() || m.capacity.size() != g.edge_count() ||
      m.interior_bias.size() != g.edge_count() || m.vertex_bias.size() != g.vertex_count() ||
      m.conductance.size() != dg.entry_count() || m.voter.size() != dg.entry_count() || m.bias.size() != dg.entry_count())
    throw ConfigError("micro: table sizes do not match the graph");
  m.deme_capacity.resize(dg.size());
  for (std::size_t x = 0; x < dg.size(); ++x) m.deme_capacity[x] = m.capacity[dg.deme(x).edge];
  m.epsilon = dg.epsilon();
  return m;
}

// ---------------------------------------------------------------------------
// Convergence experiment

struct LevelReport {
  double resolution = 0.0;
  double distance = 0.0;         ///< graph_norm of the mean fields at t_end
  double distance_stderr = 0.0;  ///< max over demes of the pooled standard error
  std::uint64_t bvm_events = 0;
  double bvm_seconds = 0.0, sde_seconds = 0.0;
};

struct CouplingReport {
  double coarse = 0.0, fine = 0.0;
  CouplingResult result;
  double seconds = 0.0;
};

struct ConvergenceReport {
  std::vector<LevelReport> levels;
  std::vector<CouplingReport> coupling;
  std::optional<KernelDiagnostics> kernel;
  double dt = 0.0;

  /// Each distance is at most every coarser one plus k pooled standard errors.
  bool distances_nonincreasing(double k = 2.0) const {
    for (std::size_t j = 1; j < levels.size(); ++j)
      for (std::size_t i = 0; i < j; ++i)
        if (levels[j].distance > levels[i].distance + k * std::hypot(levels[i].distance_stderr, levels[j].distance_stderr))
          return false;
    return true;
  }

  std::string summary() const {
    std::ostringstream os;
    os << "dt=" << fmt(dt) << '\n';
    for (const auto& l : levels)
      os << "L=" << l.resolution << " distance=" << fmt(l.distance) << " stderr=" << fmt(l.distance_stderr)
         << " bvm_events=" << l.bvm_events << " bvm_s=" << l.bvm_seconds << " sde_s=" << l.sde_seconds << '\n';
    for (const auto& c : coupling)
      os << "coupling L=" << c.coarse << "/" << c.fine << " value=" << fmt(c.result.value) << " stderr="
         << fmt(c.result.stderr_) << " s=" << c.seconds << '\n';
    if (kernel) os << kernel->summary();
    os << "distances_nonincreasing=" << (distances_nonincreasing() ? "true" : "false") << '\n';
    return os.str();
  }
};

inline std::string label(double L) {
  std::ostringstream os;
  os << L;
  return os.str();
}

/// Runs every ladder level and writes artifacts to `out` when given.
/// Wall-clock timings go to the report only, never to files.
inline ConvergenceReport run_experiment(const ExperimentConfig& c, std::uint64_t seed,
                                        const std::optional<std::filesystem::path>& out = std::nullopt,
                                        const RunMeta* meta = nullptr, unsigned threads = 0) {
  c.check();
  using clock = std::chrono::steady_clock;
  ConvergenceReport rep;
  const auto grid = c.sample_grid();
  const Profile u0 = c.profile();
  std::vector<DiscretizedGraph> levels;
  for (double L : c.ladder) levels.push_back(level(c, L));
  rep.dt = choose_dt(c, SdeModel::build(levels.back(), c.macro, c.theta, c.vertex_scaling));
  RunMeta m = meta ? *meta : RunMeta{};
  m.seed = seed;

  std::vector<MomentTable> bvm_means, sde_means;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto& dg = levels[i];
    const auto micro = micro_from_macro(c.macro, dg, c.micro_options());
    const auto init = sample_profile(dg, u0);
    LevelReport lr;
    lr.resolution = c.ladder[i];

    const auto t0 = clock::now();
    const std::uint64_t bvm_seed = derive_seed(seed, 2 * i);
    const auto runs = ensemble_runs(dg, micro, EnsembleConfig{init, c.t_end, grid, c.bvm_replicates, bvm_seed, false, threads});
    for (const auto& r : runs) lr.bvm_events += r.events;
    const auto bm = moments(runs);
    const auto t1 = clock::now();
    const auto model = SdeModel::build(dg, c.macro, c.theta, c.vertex_scaling);
    const std::uint64_t sde_seed = derive_seed(seed, 2 * i + 1);
    const auto sm = sde_ensemble(dg, model, SdeEnsembleConfig{init, c.t_end, rep.dt, grid, c.sde_replicates, sde_seed, {}, threads});
    const auto t2 = clock::now();
    lr.bvm_seconds = std::chrono::duration<double>(t1 - t0).count();
    lr.sde_seconds = std::chrono::duration<double>(t2 - t1).count();

    lr.distance = graph_norm(interpolate(dg, bm.mean.back()), interpolate(dg, sm.mean.back()));
    for (std::size_t x = 0; x < dg.size(); ++x)
      lr.distance_stderr = std::max(lr.distance_stderr, std::hypot(bm.stderr_.back()[x], sm.stderr_.back()[x]));
    rep.levels.push_back(lr);
    if (out) {
      const std::string tag = label(c.ladder[i]);
      write_artifact(*out / ("bvm_L" + tag + ".csv"), ensemble_csv(dg, bm), m, {{"resolution", c.ladder[i]}, {"stream_seed", bvm_seed}});
      write_artifact(*out / ("sde_L" + tag + ".csv"), ensemble_csv(dg, sm), m,
                     {{"resolution", c.ladder[i]}, {"dt", rep.dt}, {"lattice_seed", sde_seed},
                      {"lattice_seed_rule", "replicate r uses derive_seed(lattice_seed, r)"}});
    }
  }
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
    const auto t0 = clock::now();
    CouplingConfig cc{u0, c.t_end, rep.dt, grid, c.sde_replicates, derive_seed(seed, 1000 + i), threads};
    CouplingReport cr{c.ladder[i], c.ladder[i + 1], coupling_error(levels[i], levels[i + 1], c.macro, cc, c.theta, c.vertex_scaling), 0.0};
    cr.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    rep.coupling.push_back(cr);
  }
  if (levels.size() >= 2 && !c.kernel_times.empty()) rep.kernel = kernel_diagnostics(levels, c.kernel_times, c.macro.alpha, c.theta);

  if (out) {
    std::ostringstream conv;
    conv << "resolution,distance,distance_stderr,bvm_replicates,sde_replicates\n";
    for (const auto& l : rep.levels)
      conv << label(l.resolution) << ',' << fmt(l.distance) << ',' << fmt(l.distance_stderr) << ',' << c.bvm_replicates << ','
           << c.sde_replicates << '\n';
    write_artifact(*out / "convergence.csv", conv.str(), m, {{"dt", rep.dt}, {"t_end", c.t_end}});
    std::ostringstream cp;
    cp << "coarse,fine,value,stderr,time,deme\n";
    for (const auto& x : rep.coupling)
      cp << label(x.coarse) << ',' << label(x.fine) << ',' << fmt(x.result.value) << ',' << fmt(x.result.stderr_) << ','
         << fmt(x.result.time) << ',' << x.result.deme << '\n';
    write_artifact(*out / "coupling.csv", cp.str(), m, {{"dt", rep.dt}});
    if (rep.kernel) {
      std::ostringstream kc;
      rep.kernel->write_csv(kc);
      write_artifact(*out / "kernel_constants.csv", kc.str(), m);
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Front tracking

struct FrontEstimate {
  double speed = 0.0;
  double intercept = 0.0;
  std::size_t points = 0;
};

/// Rightmost position on `edge` where u >= c, linearly interpolated between
/// demes; nullopt when no deme reaches c.
inline std::optional<double> front_position(const DiscretizedGraph& dg, std::span<const double> u, double c, std::size_t edge) {
  const std::size_t first = dg.first_deme(edge), K = dg.deme_count(edge);
  for (std::size_t k = K; k-- > 0;) {
    const std::size_t x = first + k;
    if (u[x] < c) continue;
    if (k + 1 == K) return dg.deme(x).coord;
    const double next = u[x + 1];
    const double h = dg.deme(x + 1).coord - dg.deme(x).coord;
    return dg.deme(x).coord + h * (u[x] - c) / (u[x] - next);
  }
  return std::nullopt;
}

/// Least-squares slope of the front position over the second half of the
/// sampled horizon.
inline FrontEstimate front_speed(const DiscretizedGraph& dg, const Trajectory& tr, double c, std::size_t edge = 0) {
  detail::require(c > 0.0 && c < 1.0, "front_speed: threshold must lie in (0, 1)");
  detail::require(edge < dg.graph().edge_count(), "front_speed: unknown edge");
  detail::require(tr.times.size() >= 2 && tr.values.size() == tr.times.size(), "front_speed: at least two samples required");
  const double mid = tr.times.front() + 0.5 * (tr.times.back() - tr.times.front());
  std::vector<double> ts, xs;
  bool any = false;
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    const auto p = front_position(dg, tr.values[i], c, edge);
    any = any || p.has_value();
    if (p && tr.times[i] >= mid) {
      ts.push_back(tr.times[i]);
      xs.push_back(*p);
    }
  }
  if (!any) throw PreconditionError("front_speed: front never forms (no value reaches the threshold)");
  if (ts.size() < 2) throw PreconditionError("front_speed: front absent over the fitting window");
  const double n = static_cast<double>(ts.size());
  double mt = 0, mx = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) mt += ts[i], mx += xs[i];
  mt /= n;
  mx /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    sxy += (ts[i] - mt) * (xs[i] - mx);
    sxx += (ts[i] - mt) * (ts[i] - mt);
  }
  FrontEstimate f;
  f.speed = sxy / sxx;
  f.intercept = mx - f.speed * mt;
  f.points = ts.size();
  return f;
}

}  // namespace gfkpp
