#include "slicetwin/decision.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace slicetwin {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<double> parse_numbers(const std::string& s, char sep) {
  std::vector<double> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    const std::string tok = s.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (tok.empty() || end != tok.c_str() + tok.size()) throw std::invalid_argument("bad decision key entry '" + tok + "'");
    out.push_back(v);
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

SliceDecision SliceDecision::zeros(std::size_t apps, std::size_t edges, std::size_t cores) {
  SliceDecision d;
  d.flows.assign(apps, std::vector<double>(edges, 0.0));
  d.cpu.assign(apps, std::vector<double>(cores, 0.0));
  return d;
}

SliceDecision SliceDecision::zeros(const ScenarioConfig& config) {
  return zeros(config.apps.size(), config.topology.edges.size(), static_cast<std::size_t>(config.topology.cores));
}

bool SliceDecision::shape_matches(const ScenarioConfig& config) const {
  if (flows.size() != config.apps.size() || cpu.size() != config.apps.size()) return false;
  for (const auto& f : flows)
    if (f.size() != config.topology.edges.size()) return false;
  for (const auto& c : cpu)
    if (c.size() != static_cast<std::size_t>(config.topology.cores)) return false;
  return true;
}

// "<f_e0>:<f_e1>@<phi_c0>:<phi_c1>/<next app>..."
std::string SliceDecision::key() const {
  std::string out;
  for (std::size_t i = 0; i < flows.size(); ++i) {
    if (i) out += '/';
    for (std::size_t e = 0; e < flows[i].size(); ++e) {
      if (e) out += ':';
      out += num(flows[i][e]);
    }
    out += '@';
    for (std::size_t c = 0; c < cpu[i].size(); ++c) {
      if (c) out += ':';
      out += num(cpu[i][c]);
    }
  }
  return out;
}

SliceDecision SliceDecision::from_key(const std::string& key) {
  SliceDecision d;
  std::size_t start = 0;
  while (start <= key.size()) {
    const auto pos = key.find('/', start);
    const std::string part = key.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
    const auto at = part.find('@');
    if (at == std::string::npos) throw std::invalid_argument("bad decision key '" + key + "'");
    d.flows.push_back(parse_numbers(part.substr(0, at), ':'));
    d.cpu.push_back(parse_numbers(part.substr(at + 1), ':'));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return d;
}

std::vector<double> class_resources(const ScenarioConfig& config, const SliceDecision& d, std::size_t app) {
  std::vector<double> x = d.flows.at(app);
  const auto cores = config.cores_of(app);
  double phi = 0;
  for (int c : cores) phi += d.cpu.at(app).at(c);
  x.push_back(cores.empty() ? 0.0 : phi / double(cores.size()));
  return x;
}

void set_class_resources(const ScenarioConfig& config, SliceDecision& d, std::size_t app,
                         const std::vector<double>& x) {
  const std::size_t edges = config.topology.edges.size();
  if (x.size() != edges + 1) throw std::invalid_argument("class resource vector has wrong dimension");
  for (std::size_t e = 0; e < edges; ++e) d.flows.at(app).at(e) = x[e];
  std::fill(d.cpu.at(app).begin(), d.cpu.at(app).end(), 0.0);
  for (int c : config.cores_of(app)) d.cpu[app][c] = x[edges];
}

std::vector<double> linspace(double lo, double hi, int n) {
  if (n < 1) throw std::invalid_argument("linspace needs n >= 1");
  std::vector<double> v(n);
  for (int k = 0; k < n; ++k) v[k] = n == 1 ? lo : lo + (hi - lo) * double(k) / double(n - 1);
  return v;
}

std::vector<SliceDecision> probe_grid(const ScenarioConfig& config, const std::vector<double>& f_values,
                                      const std::vector<double>& phi_values) {
  std::vector<SliceDecision> grid;
  const std::size_t edges = config.topology.edges.size();
  for (std::size_t app = 0; app < config.apps.size(); ++app) {
    for (double f : f_values) {
      for (double phi : phi_values) {
        SliceDecision d = SliceDecision::zeros(config);
        std::vector<double> x(edges, f);
        x.push_back(phi);
        set_class_resources(config, d, app, x);
        grid.push_back(std::move(d));
      }
    }
  }
  return grid;
}

}  // namespace slicetwin
