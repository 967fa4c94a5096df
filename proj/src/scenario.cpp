#include "slicetwin/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace slicetwin {

namespace {

[[noreturn]] void invariant(const std::string& field, const std::string& what) {
  throw ScenarioError("invalid " + field + ": " + what);
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : value) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

struct Cursor {
  const std::string& origin;
  int line;
  std::string key;

  [[noreturn]] void fail(const std::string& what) const {
    throw ScenarioError(origin + ":" + std::to_string(line) + ": " + key + ": " + what);
  }

  double number(const std::string& token) const {
    // strtod accepts the 1e-3 / 3e8 spellings used in the bundled files.
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (token.empty() || end != token.c_str() + token.size() || !std::isfinite(v))
      fail("expected a number, got '" + token + "'");
    return v;
  }

  std::int64_t integer(const std::string& token) const {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || p != token.data() + token.size())
      fail("expected an integer, got '" + token + "'");
    return v;
  }

  std::uint64_t unsigned_integer(const std::string& token) const {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || p != token.data() + token.size())
      fail("expected a non-negative integer, got '" + token + "'");
    return v;
  }
};

void apply_topology(Topology& topo, const Cursor& at, const std::string& value) {
  if (at.key == "edge") {
    const auto parts = split_list(value);
    if (parts.size() != 3) at.fail("expected '<id> <capacity_bps> <prop_delay_s>'");
    topo.edges.push_back({parts[0], at.number(parts[1]), at.number(parts[2])});
  } else if (at.key == "cores") {
    topo.cores = static_cast<int>(at.integer(value));
  } else if (at.key == "core_speed") {
    topo.core_speed = at.number(value);
  } else if (at.key == "buffer_len") {
    topo.buffer_len = static_cast<int>(at.integer(value));
  } else {
    at.fail("unknown key in [topology]");
  }
}

void apply_app(AppClass& app, const Cursor& at, const std::string& value) {
  const auto& k = at.key;
  if (k == "tau") app.tau = at.number(value);
  else if (k == "rho") app.rho = at.number(value);
  else if (k == "work") app.work = at.number(value);
  else if (k == "pkt_rate") app.pkt_rate = at.number(value);
  else if (k == "pkt_size") {
    const auto parts = split_list(value);
    if (parts.size() != 2) at.fail("expected '<min_bytes> <max_bytes>'");
    app.pkt_size.min_bytes = static_cast<std::uint32_t>(at.unsigned_integer(parts[0]));
    app.pkt_size.max_bytes = static_cast<std::uint32_t>(at.unsigned_integer(parts[1]));
  } else if (k == "priority") {
    if (value == "strict") app.priority = Priority::strict;
    else if (value == "degradable") app.priority = Priority::degradable;
    else at.fail("expected 'strict' or 'degradable'");
  } else if (k == "pareto_shape") app.burst.pareto_shape = at.number(value);
  else if (k == "on_mean") app.burst.on_mean = at.number(value);
  else if (k == "burst_ratio") app.burst.burst_ratio = at.number(value);
  else if (k == "pareto_cap") app.burst.pareto_cap = at.number(value);
  else if (k == "cores") {
    app.cores.clear();
    if (value != "all")
      for (const auto& t : split_list(value)) app.cores.push_back(static_cast<int>(at.integer(t)));
  } else {
    at.fail("unknown key in [app." + app.id + "]");
  }
}

void apply_theta(ThetaSpec& theta, const Cursor& at, const std::string& value, bool& seeds_seen) {
  if (at.key == "kind") {
    if (value != "arrival-rate") at.fail("only 'arrival-rate' is supported");
    theta.kind = value;
  } else if (at.key == "lo") theta.lo = at.number(value);
  else if (at.key == "hi") theta.hi = at.number(value);
  else if (at.key == "grid") {
    theta.grid.clear();
    for (const auto& t : split_list(value)) theta.grid.push_back(at.number(t));
  } else if (at.key == "seeds") {
    seeds_seen = true;
    theta.seeds.clear();
    for (const auto& t : split_list(value)) theta.seeds.push_back(at.unsigned_integer(t));
  } else {
    at.fail("unknown key in [theta]");
  }
}

void apply_sim(ScenarioConfig& cfg, const Cursor& at, const std::string& value) {
  if (at.key == "name") cfg.name = value;
  else if (at.key == "users") cfg.users = static_cast<int>(at.integer(value));
  else if (at.key == "horizon") cfg.sim_horizon = at.number(value);
  else if (at.key == "warmup") cfg.warmup = at.number(value);
  else at.fail("unknown key in [sim]");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::uint64_t fnv1a(std::string_view data, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void AppClass::validate() const {
  const std::string f = "app." + id;
  if (id.empty()) invariant("app", "empty id");
  if (!(tau > 0)) invariant(f + ".tau", "must be > 0");
  if (!(rho > 0 && rho <= 1)) invariant(f + ".rho", "must lie in (0,1]");
  if (!(work > 0)) invariant(f + ".work", "must be > 0");
  if (!(pkt_rate > 0)) invariant(f + ".pkt_rate", "must be > 0");
  if (pkt_size.min_bytes < 20) invariant(f + ".pkt_size", "minimum packet size must be >= 20 bytes");
  if (pkt_size.max_bytes < pkt_size.min_bytes) invariant(f + ".pkt_size", "max < min");
  if (!(burst.pareto_shape > 1)) invariant(f + ".pareto_shape", "must be > 1 for a finite mean");
  if (!(burst.on_mean > 0)) invariant(f + ".on_mean", "must be > 0");
  if (!(burst.burst_ratio > 1)) invariant(f + ".burst_ratio", "must be > 1");
  if (!(burst.pareto_cap > 1)) invariant(f + ".pareto_cap", "must be > 1");
}

void Topology::validate() const {
  if (edges.empty()) invariant("topology.edge", "at least one edge required");
  std::set<std::string> ids;
  for (const auto& e : edges) {
    if (!ids.insert(e.id).second) invariant("topology.edge", "duplicate id '" + e.id + "'");
    if (!(e.capacity > 0)) invariant("topology.edge." + e.id + ".capacity", "must be > 0");
    if (!(e.prop_delay > 0)) invariant("topology.edge." + e.id + ".prop_delay", "must be > 0");
  }
  if (cores < 1) invariant("topology.cores", "must be >= 1");
  if (!(core_speed > 0)) invariant("topology.core_speed", "must be > 0");
  if (buffer_len < 1) invariant("topology.buffer_len", "must be >= 1");
}

double Topology::path_propagation() const {
  double total = 0;
  for (const auto& e : edges) total += e.prop_delay;
  return total;
}

void ThetaSpec::validate() const {
  if (seeds.empty()) throw ScenarioError("no Monte-Carlo seeds");
  if (!(lo > 0)) invariant("theta.lo", "must be > 0");
  if (!(hi >= lo)) invariant("theta.hi", "must be >= lo");
  std::set<std::uint64_t> distinct(seeds.begin(), seeds.end());
  if (distinct.size() != seeds.size()) invariant("theta.seeds", "seeds must be distinct");
  for (double g : grid)
    if (!contains(g)) invariant("theta.grid", "value " + fmt_double(g) + " outside [lo, hi]");
}

void ScenarioConfig::validate() const {
  topology.validate();
  if (apps.empty()) invariant("app", "at least one app required");
  std::set<std::string> ids;
  for (const auto& a : apps) {
    a.validate();
    if (!ids.insert(a.id).second) invariant("app." + a.id, "duplicate id");
    for (int c : a.cores)
      if (c < 0 || c >= topology.cores) invariant("app." + a.id + ".cores", "core index out of range");
    if (!(theta.hi < a.burst.burst_ratio))
      invariant("app." + a.id + ".burst_ratio", "must exceed theta.hi so OFF periods stay positive");
  }
  theta.validate();
  if (users < 1) invariant("sim.users", "must be >= 1");
  if (!(sim_horizon > 0)) invariant("sim.horizon", "must be > 0");
  if (!(warmup >= 0)) invariant("sim.warmup", "must be >= 0");
  if (!(warmup < sim_horizon)) invariant("sim.warmup", "must be < horizon");
}

int ScenarioConfig::app_index(const std::string& id) const {
  for (std::size_t i = 0; i < apps.size(); ++i)
    if (apps[i].id == id) return static_cast<int>(i);
  return -1;
}

std::vector<int> ScenarioConfig::cores_of(std::size_t app) const {
  if (!apps.at(app).cores.empty()) return apps[app].cores;
  std::vector<int> all(topology.cores);
  for (int c = 0; c < topology.cores; ++c) all[c] = c;
  return all;
}

ScenarioConfig parse_scenario(const std::string& text, const std::string& origin) {
  ScenarioConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  bool seeds_seen = false;
  AppClass* app = nullptr;
  std::map<std::string, bool> sections_seen;

  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']')
        throw ScenarioError(origin + ":" + std::to_string(line_no) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      app = nullptr;
      if (section.rfind("app.", 0) == 0) {
        AppClass a;
        a.id = section.substr(4);
        if (a.id.empty())
          throw ScenarioError(origin + ":" + std::to_string(line_no) + ": empty app id");
        cfg.apps.push_back(a);
        app = &cfg.apps.back();
      } else if (section != "topology" && section != "theta" && section != "sim") {
        throw ScenarioError(origin + ":" + std::to_string(line_no) + ": unknown section [" + section + "]");
      }
      sections_seen[section] = true;
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ScenarioError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    Cursor at{origin, line_no, trim(line.substr(0, eq))};
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) at.fail("key outside of any section");

    if (section == "topology") apply_topology(cfg.topology, at, value);
    else if (app != nullptr) apply_app(*app, at, value);
    else if (section == "theta") apply_theta(cfg.theta, at, value, seeds_seen);
    else apply_sim(cfg, at, value);
  }

  if (!sections_seen["topology"]) throw ScenarioError(origin + ": missing [topology] section");
  if (!seeds_seen) throw ScenarioError("no Monte-Carlo seeds");
  if (cfg.theta.grid.empty()) {
    cfg.theta.grid = {cfg.theta.lo};
    if (cfg.theta.hi > cfg.theta.lo) cfg.theta.grid.insert(cfg.theta.grid.end(), {cfg.theta.mean(), cfg.theta.hi});
  }
  if (cfg.name.empty()) cfg.name = origin;
  cfg.validate();
  return cfg;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  auto cfg = parse_scenario(buf.str(), path.string());
  if (cfg.name == path.string()) cfg.name = path.stem().string();
  return cfg;
}

std::string to_text(const ScenarioConfig& c) {
  std::ostringstream os;
  os << "[topology]\n";
  for (const auto& e : c.topology.edges)
    os << "edge = " << e.id << ' ' << fmt_double(e.capacity) << ' ' << fmt_double(e.prop_delay) << '\n';
  os << "cores = " << c.topology.cores << "\n"
     << "core_speed = " << fmt_double(c.topology.core_speed) << "\n"
     << "buffer_len = " << c.topology.buffer_len << "\n";
  for (const auto& a : c.apps) {
    os << "\n[app." << a.id << "]\n"
       << "tau = " << fmt_double(a.tau) << "\n"
       << "rho = " << fmt_double(a.rho) << "\n"
       << "work = " << fmt_double(a.work) << "\n"
       << "pkt_rate = " << fmt_double(a.pkt_rate) << "\n"
       << "pkt_size = " << a.pkt_size.min_bytes << ' ' << a.pkt_size.max_bytes << "\n"
       << "priority = " << (a.priority == Priority::strict ? "strict" : "degradable") << "\n"
       << "pareto_shape = " << fmt_double(a.burst.pareto_shape) << "\n"
       << "on_mean = " << fmt_double(a.burst.on_mean) << "\n"
       << "burst_ratio = " << fmt_double(a.burst.burst_ratio) << "\n"
       << "pareto_cap = " << fmt_double(a.burst.pareto_cap) << "\n";
    if (!a.cores.empty()) {
      os << "cores =";
      for (int k : a.cores) os << ' ' << k;
      os << '\n';
    }
  }
  os << "\n[theta]\nkind = " << c.theta.kind << "\nlo = " << fmt_double(c.theta.lo)
     << "\nhi = " << fmt_double(c.theta.hi) << "\ngrid =";
  for (double g : c.theta.grid) os << ' ' << fmt_double(g);
  os << "\nseeds =";
  for (auto s : c.theta.seeds) os << ' ' << s;
  os << "\n\n[sim]\nname = " << c.name << "\nusers = " << c.users
     << "\nhorizon = " << fmt_double(c.sim_horizon) << "\nwarmup = " << fmt_double(c.warmup) << "\n";
  return os.str();
}

}  // namespace slicetwin
