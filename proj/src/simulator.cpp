#include "slicetwin/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <queue>

namespace slicetwin {

std::string to_string(ServiceMode mode) {
  switch (mode) {
    case ServiceMode::sliced: return "sliced";
    case ServiceMode::network_priority: return "network-priority";
    case ServiceMode::compute_priority: return "compute-priority";
  }
  return "?";
}

ServiceMode parse_service_mode(const std::string& text) {
  if (text == "sliced" || text == "joint") return ServiceMode::sliced;
  if (text == "network-priority") return ServiceMode::network_priority;
  if (text == "compute-priority") return ServiceMode::compute_priority;
  throw std::invalid_argument("unknown service mode '" + text + "'");
}

void DelayHistogram::add(Nanos delay) {
  const double bin_ns = bin_width * 1e9;
  const auto idx = static_cast<std::size_t>(double(delay) / bin_ns);
  if (idx >= counts.size()) counts.resize(idx + 1, 0);
  ++counts[idx];
}

std::uint64_t DelayHistogram::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

namespace {

constexpr double kCapacitySlack = 1e-9;

struct Server {
  double rate = 0;  // bits/s for links, MIPS for cores
  int current = -1;
};

struct Station {
  bool is_cpu = false;
  Nanos prop = 0;  // forward propagation after leaving a link
  std::vector<Server> servers;
  std::vector<std::deque<int>> levels;  // index 0 served first
  std::size_t capacity = 0;
  std::size_t waiting = 0;
  int priority_app = -1;  // apps equal to this go to level 0 when levels > 1
};

struct Request {
  std::uint32_t app;
  Nanos emit;
  std::uint32_t bytes;
  std::uint16_t stage = 0;
  Nanos server_arrival = -1;
  Nanos done = -1;
  enum class Fate : std::uint8_t { pending, net_drop, server_drop, served } fate = Fate::pending;
};

struct Event {
  Nanos t;
  std::uint64_t seq;
  int station;
  int server;  // -1 for an arrival at `station`
  int request;
};

struct EventLater {
  bool operator()(const Event& a, const Event& b) const {
    return a.t != b.t ? a.t > b.t : a.seq > b.seq;
  }
};

class Engine {
 public:
  Engine(const ScenarioConfig& config, const SliceDecision& decision, const SimOptions& options)
      : config_(config) {
    build(decision, options);
  }

  void run(std::vector<Request>& requests) {
    requests_ = &requests;
    std::size_t next_arrival = 0;
    while (next_arrival < requests.size() || !events_.empty()) {
      const bool take_arrival =
          next_arrival < requests.size() && (events_.empty() || requests[next_arrival].emit < events_.top().t);
      if (take_arrival) {
        const int r = static_cast<int>(next_arrival++);
        arrive(routes_[requests[r].app].front(), r, requests[r].emit);
      } else {
        const Event ev = events_.top();
        events_.pop();
        if (ev.server < 0) arrive(ev.station, ev.request, ev.t);
        else depart(ev.station, ev.server, ev.t);
      }
    }
  }

 private:
  void build(const SliceDecision& d, const SimOptions& options) {
    const auto& topo = config_.topology;
    const std::size_t napps = config_.apps.size();
    const auto buffer = static_cast<std::size_t>(topo.buffer_len);
    routes_.assign(napps, {});

    int prio = -1;
    if (options.mode != ServiceMode::sliced) {
      if (!options.priority_app.empty()) {
        prio = config_.app_index(options.priority_app);
        if (prio < 0) throw SimulationError("unknown priority app '" + options.priority_app + "'");
      } else {
        prio = 0;
        for (std::size_t i = 1; i < napps; ++i)
          if (config_.apps[i].tau < config_.apps[prio].tau) prio = static_cast<int>(i);
      }
    }

    auto add_station = [&](bool cpu, Nanos prop, std::vector<double> rates, std::size_t cap, int levels) {
      Station s;
      s.is_cpu = cpu;
      s.prop = prop;
      for (double r : rates)
        if (r > 0) s.servers.push_back({r, -1});
      // Fastest server first; ties keep core order.
      std::stable_sort(s.servers.begin(), s.servers.end(), [](const Server& a, const Server& b) { return a.rate > b.rate; });
      s.levels.assign(levels, {});
      s.capacity = cap;
      s.priority_app = levels > 1 ? prio : -1;
      stations_.push_back(std::move(s));
      return static_cast<int>(stations_.size() - 1);
    };

    if (options.mode == ServiceMode::sliced) {
      for (std::size_t i = 0; i < napps; ++i) {
        for (std::size_t e = 0; e < topo.edges.size(); ++e)
          routes_[i].push_back(add_station(false, to_nanos(topo.edges[e].prop_delay),
                                           {d.flows[i][e] * topo.edges[e].capacity}, buffer, 1));
        std::vector<double> rates;
        for (int c = 0; c < topo.cores; ++c) rates.push_back(d.cpu[i][c] * topo.core_speed);
        routes_[i].push_back(add_station(true, 0, rates, buffer, 1));
      }
      return;
    }

    const bool net_prio = options.mode == ServiceMode::network_priority;
    const std::size_t shared_cap = buffer * napps;
    std::vector<int> shared;
    for (const auto& e : topo.edges)
      shared.push_back(add_station(false, to_nanos(e.prop_delay), {e.capacity}, shared_cap, net_prio ? 2 : 1));
    shared.push_back(add_station(true, 0, std::vector<double>(topo.cores, topo.core_speed), shared_cap, net_prio ? 1 : 2));
    for (std::size_t i = 0; i < napps; ++i) routes_[i] = shared;
  }

  Nanos service_time(const Station& s, const Server& srv, const Request& r) const {
    const double seconds = s.is_cpu ? config_.apps[r.app].work / srv.rate : double(r.bytes) * 8.0 / srv.rate;
    return to_nanos(seconds);
  }

  void start(int station, int server, int request, Nanos now) {
    Station& s = stations_[station];
    Server& srv = s.servers[server];
    srv.current = request;
    events_.push({now + service_time(s, srv, (*requests_)[request]), seq_++, station, server, request});
  }

  void arrive(int station, int request, Nanos now) {
    Station& s = stations_[station];
    Request& r = (*requests_)[request];
    if (s.is_cpu) r.server_arrival = now;
    if (s.servers.empty()) {
      r.fate = s.is_cpu ? Request::Fate::server_drop : Request::Fate::net_drop;
      return;
    }
    for (std::size_t k = 0; k < s.servers.size(); ++k) {
      if (s.servers[k].current < 0) {
        start(station, static_cast<int>(k), request, now);
        return;
      }
    }
    if (s.waiting >= s.capacity) {
      r.fate = s.is_cpu ? Request::Fate::server_drop : Request::Fate::net_drop;
      return;
    }
    const std::size_t level = (s.levels.size() > 1 && static_cast<int>(r.app) != s.priority_app) ? 1 : 0;
    s.levels[level].push_back(request);
    ++s.waiting;
  }

  void depart(int station, int server, Nanos now) {
    Station& s = stations_[station];
    const int request = s.servers[server].current;
    s.servers[server].current = -1;
    Request& r = (*requests_)[request];
    const auto& route = routes_[r.app];
    if (r.stage + 1u < route.size()) {
      ++r.stage;
      events_.push({now + s.prop, seq_++, route[r.stage], -1, request});
    } else {
      r.done = now;
      r.fate = Request::Fate::served;
    }
    for (auto& q : s.levels) {
      if (!q.empty()) {
        const int next = q.front();
        q.pop_front();
        --s.waiting;
        start(station, server, next, now);
        break;
      }
    }
  }

  const ScenarioConfig& config_;
  std::vector<Station> stations_;
  std::vector<std::vector<int>> routes_;
  std::priority_queue<Event, std::vector<Event>, EventLater> events_;
  std::uint64_t seq_ = 0;
  std::vector<Request>* requests_ = nullptr;
};

void check_decision(const ScenarioConfig& config, const SliceDecision& d) {
  if (!d.shape_matches(config)) throw SimulationError("decision shape does not match the scenario");
  const auto& topo = config.topology;
  for (std::size_t e = 0; e < topo.edges.size(); ++e) {
    double sum = 0;
    for (std::size_t i = 0; i < d.apps(); ++i) {
      const double f = d.flows[i][e];
      if (!(f >= 0 && f <= 1)) throw SimulationError("flow fraction outside [0,1] on edge " + topo.edges[e].id);
      sum += f;
    }
    if (sum > 1 + kCapacitySlack) throw SimulationError("flow fractions on edge " + topo.edges[e].id + " exceed capacity");
  }
  for (int c = 0; c < topo.cores; ++c) {
    double sum = 0;
    for (std::size_t i = 0; i < d.apps(); ++i) {
      const double p = d.cpu[i][c];
      if (!(p >= 0 && p <= 1)) throw SimulationError("cpu fraction outside [0,1] on core " + std::to_string(c));
      sum += p;
    }
    if (sum > 1 + kCapacitySlack) throw SimulationError("cpu fractions on core " + std::to_string(c) + " exceed capacity");
  }
}

}  // namespace

QoESample run_sim(const ScenarioConfig& config, const SliceDecision& decision, double theta, std::uint64_t seed,
                  const SimOptions& options) {
  if (!config.theta.contains(theta)) throw SimulationError("theta outside the scenario range");
  if (options.mode == ServiceMode::sliced) check_decision(config, decision);
  else if (!decision.shape_matches(config)) throw SimulationError("decision shape does not match the scenario");
  if (!(options.hist_bin > 0)) throw SimulationError("histogram bin width must be positive");

  const double horizon = options.horizon.value_or(config.sim_horizon);
  if (!(horizon > config.warmup)) throw SimulationError("horizon must exceed the warmup");
  const std::size_t napps = config.apps.size();

  // Merge the per-class streams into one time-ordered request table.
  std::vector<Request> requests;
  {
    std::vector<ArrivalStream> streams;
    std::size_t total = 0;
    for (const auto& app : config.apps) {
      streams.push_back(make_arrival_process(app, config.users, theta, seed, horizon));
      total += streams.back().arrivals.size();
    }
    requests.reserve(total);
    std::vector<std::size_t> pos(napps, 0);
    for (std::size_t n = 0; n < total; ++n) {
      std::size_t best = napps;
      for (std::size_t i = 0; i < napps; ++i) {
        if (pos[i] >= streams[i].arrivals.size()) continue;
        if (best == napps || streams[i].arrivals[pos[i]].time < streams[best].arrivals[pos[best]].time) best = i;
      }
      const Arrival& a = streams[best].arrivals[pos[best]++];
      requests.push_back({static_cast<std::uint32_t>(best), a.time, a.bytes});
    }
  }

  Engine engine(config, decision, options);
  engine.run(requests);

  QoESample sample;
  sample.decision = decision;
  sample.theta = theta;
  sample.seed = seed;
  sample.classes.resize(napps);
  const Nanos warmup = to_nanos(config.warmup);
  const Nanos reverse = to_nanos(config.topology.path_propagation());
  std::vector<std::vector<Nanos>> delays(napps);
  std::vector<double> delay_sum(napps, 0.0);
  std::vector<Nanos> max_net(napps, 0), max_srv(napps, 0);

  for (std::size_t i = 0; i < napps; ++i) {
    sample.classes[i].app = config.apps[i].id;
    sample.classes[i].histogram.bin_width = options.hist_bin;
  }
  for (const Request& r : requests) {
    if (r.emit < warmup) continue;
    ClassQoE& q = sample.classes[r.app];
    ++q.emitted;
    RequestRecord rec{r.app, r.emit, r.bytes};
    if (r.fate != Request::Fate::net_drop) {
      rec.network_ok = true;
      rec.network_delay = r.server_arrival - r.emit;
      ++q.network_ok;
      max_net[r.app] = std::max(max_net[r.app], rec.network_delay);
    }
    if (r.fate == Request::Fate::served) {
      rec.server_ok = true;
      rec.server_delay = r.done - r.server_arrival;
      rec.e2e_delay = rec.network_delay + rec.server_delay + reverse;
      ++q.server_ok;
      max_srv[r.app] = std::max(max_srv[r.app], rec.server_delay);
      delays[r.app].push_back(rec.e2e_delay);
      delay_sum[r.app] += double(rec.e2e_delay);
      q.histogram.add(rec.e2e_delay);
      if (to_seconds(rec.e2e_delay) > config.apps[r.app].tau) ++q.violations;
    }
    if (options.keep_records) sample.records.push_back(rec);
  }

  for (std::size_t i = 0; i < napps; ++i) {
    ClassQoE& q = sample.classes[i];
    q.max_network_delay = to_seconds(max_net[i]);
    q.max_server_delay = to_seconds(max_srv[i]);
    auto& v = delays[i];
    if (v.empty()) continue;
    q.max_delay = to_seconds(*std::max_element(v.begin(), v.end()));
    q.mean_delay = delay_sum[i] / double(v.size()) * 1e-9;
    const auto k = static_cast<std::size_t>(std::ceil(0.99 * double(v.size()))) - 1;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
    q.p99_delay = to_seconds(v[k]);
  }
  return sample;
}

}  // namespace slicetwin
