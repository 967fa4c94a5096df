#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "slicetwin/simulator.hpp"

namespace slicetwin {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double to_d(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw std::runtime_error("bad number in dataset: '" + s + "'");
  return v;
}

std::uint64_t to_u(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used);
  if (used != s.size()) throw std::runtime_error("bad integer in dataset: '" + s + "'");
  return v;
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

std::string join_inputs(const std::vector<double>& x) {
  std::string s;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (k) s += ':';
    s += num(x[k]);
  }
  return s;
}

void write_failure(std::ostream& csv, const SweepCell& cell, const std::string& error) {
  csv << cell.index << ",," << num(cell.theta) << ',' << cell.seed << ",,,,,,,,,,,,,,," << "failed: " << sanitize(error)
      << '\n';
}

}  // namespace

std::string dataset_header() {
  return "cell,app,theta,seed,decision,inputs,emitted,network_ok,server_ok,violations,max_delay_s,mean_delay_s,"
         "p99_delay_s,max_network_delay_s,max_server_delay_s,network_success,server_success,e2e_success,status";
}

std::string histogram_header() { return "cell,app,bin_lo_us,bin_hi_us,count"; }

std::filesystem::path histogram_sidecar(const std::filesystem::path& dataset) {
  auto p = dataset;
  p.replace_extension();
  p += ".hist.csv";
  return p;
}

static void append_rows(std::ostream& csv, std::ostream& hist, std::size_t cell, const QoESample& s,
                        const ScenarioConfig* config) {
  for (std::size_t i = 0; i < s.classes.size(); ++i) {
    const ClassQoE& q = s.classes[i];
    const std::string inputs = config ? join_inputs(class_resources(*config, s.decision, i)) : std::string();
    csv << cell << ',' << q.app << ',' << num(s.theta) << ',' << s.seed << ',' << s.decision.key() << ',' << inputs
        << ',' << q.emitted << ',' << q.network_ok << ',' << q.server_ok << ',' << q.violations << ','
        << num(q.max_delay) << ',' << num(q.mean_delay) << ',' << num(q.p99_delay) << ',' << num(q.max_network_delay)
        << ',' << num(q.max_server_delay) << ',' << num(q.network_success()) << ',' << num(q.server_success()) << ','
        << num(q.e2e_success()) << ",ok\n";
    const double w = q.histogram.bin_width * 1e6;
    for (std::size_t b = 0; b < q.histogram.counts.size(); ++b)
      if (q.histogram.counts[b])
        hist << cell << ',' << q.app << ',' << num(double(b) * w) << ',' << num(double(b + 1) * w) << ','
             << q.histogram.counts[b] << '\n';
  }
}

void append_dataset_rows(std::ostream& csv, std::ostream& hist, std::size_t cell, const QoESample& sample) {
  append_rows(csv, hist, cell, sample, nullptr);
}

void write_dataset_csv(const std::filesystem::path& path, const ScenarioConfig& config,
                       const std::vector<QoESample>& samples) {
  std::ofstream csv(path);
  std::ofstream hist(histogram_sidecar(path));
  if (!csv || !hist) throw std::runtime_error("cannot write dataset " + path.string());
  csv << dataset_header() << '\n';
  hist << histogram_header() << '\n';
  for (std::size_t k = 0; k < samples.size(); ++k) append_rows(csv, hist, k, samples[k], &config);
}

namespace {

struct ParsedDataset {
  std::map<std::size_t, QoESample> ok;
  std::map<std::size_t, std::string> failed;
};

ParsedDataset parse_dataset(const std::filesystem::path& path, const ScenarioConfig& config) {
  ParsedDataset out;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != dataset_header())
    throw std::runtime_error(path.string() + ": unexpected dataset header");
  std::map<std::size_t, std::map<std::size_t, ClassQoE>> classes;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 19) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    const std::size_t cell = to_u(f[0]);
    if (f[18] != "ok") {
      out.failed[cell] = f[18];
      continue;
    }
    QoESample& s = out.ok[cell];
    s.theta = to_d(f[2]);
    s.seed = to_u(f[3]);
    s.decision = SliceDecision::from_key(f[4]);
    const int app = config.app_index(f[1]);
    if (app < 0) throw std::runtime_error(path.string() + ": unknown app '" + f[1] + "'");
    ClassQoE q;
    q.app = f[1];
    q.emitted = to_u(f[6]);
    q.network_ok = to_u(f[7]);
    q.server_ok = to_u(f[8]);
    q.violations = to_u(f[9]);
    q.max_delay = to_d(f[10]);
    q.mean_delay = to_d(f[11]);
    q.p99_delay = to_d(f[12]);
    q.max_network_delay = to_d(f[13]);
    q.max_server_delay = to_d(f[14]);
    classes[cell][static_cast<std::size_t>(app)] = q;
  }
  for (auto& [cell, s] : out.ok) {
    const auto& m = classes[cell];
    if (m.size() != config.apps.size()) throw std::runtime_error(path.string() + ": incomplete cell " + std::to_string(cell));
    for (const auto& [i, q] : m) s.classes.push_back(q);
  }

  std::ifstream hin(histogram_sidecar(path));
  if (hin && std::getline(hin, line)) {
    while (std::getline(hin, line)) {
      if (line.empty()) continue;
      const auto f = split_csv(line);
      if (f.size() != 5) throw std::runtime_error("malformed histogram row '" + line + "'");
      const auto it = out.ok.find(to_u(f[0]));
      if (it == out.ok.end()) continue;
      const int app = config.app_index(f[1]);
      if (app < 0) continue;
      auto& h = it->second.classes[static_cast<std::size_t>(app)].histogram;
      const double lo = to_d(f[2]);
      h.bin_width = (to_d(f[3]) - lo) * 1e-6;
      const auto b = static_cast<std::size_t>(std::llround(lo / (h.bin_width * 1e6)));
      if (b >= h.counts.size()) h.counts.resize(b + 1, 0);
      h.counts[b] = to_u(f[4]);
    }
  }
  return out;
}

}  // namespace

LoadedDataset read_dataset_csv(const std::filesystem::path& path, const ScenarioConfig& config) {
  auto parsed = parse_dataset(path, config);
  LoadedDataset out;
  for (auto& [cell, s] : parsed.ok) {
    out.cells.push_back(cell);
    out.samples.push_back(std::move(s));
  }
  return out;
}

std::vector<SweepCell> sweep_cells(std::size_t decisions, const std::vector<double>& thetas,
                                   const std::vector<std::uint64_t>& seeds) {
  std::vector<SweepCell> cells;
  cells.reserve(decisions * thetas.size() * seeds.size());
  for (std::size_t d = 0; d < decisions; ++d)
    for (double th : thetas)
      for (auto s : seeds) cells.push_back({cells.size(), d, th, s});
  return cells;
}

SweepResult sweep_grid(const ScenarioConfig& config, const std::vector<SliceDecision>& grid,
                       const std::vector<double>& thetas, const std::vector<std::uint64_t>& seeds,
                       const SweepOptions& options) {
  const auto cells = sweep_cells(grid.size(), thetas, seeds);
  std::vector<std::optional<QoESample>> done(cells.size());
  std::vector<std::optional<std::string>> failed(cells.size());
  SweepResult result;

  std::ofstream csv, hist;
  if (options.persist) {
    const auto& path = *options.persist;
    if (std::filesystem::exists(path)) {
      auto parsed = parse_dataset(path, config);
      for (auto& [cell, s] : parsed.ok) {
        if (cell >= cells.size() || !(s.decision == grid[cells[cell].decision]) || s.theta != cells[cell].theta ||
            s.seed != cells[cell].seed)
          throw std::runtime_error(path.string() + ": existing rows do not match this sweep (cell " +
                                   std::to_string(cell) + ")");
        done[cell] = std::move(s);
        ++result.reused;
      }
      for (auto& [cell, msg] : parsed.failed)
        if (cell < cells.size()) {
          failed[cell] = msg;
          ++result.reused;
        }
      csv.open(path, std::ios::app);
      hist.open(histogram_sidecar(path), std::ios::app);
    } else {
      if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
      csv.open(path);
      hist.open(histogram_sidecar(path));
      csv << dataset_header() << '\n';
      hist << histogram_header() << '\n';
    }
    if (!csv || !hist) throw std::runtime_error("cannot open dataset " + path.string() + " for writing");
  }

  std::vector<std::size_t> todo;
  for (const auto& c : cells)
    if (!done[c.index] && !failed[c.index]) todo.push_back(c.index);

  // Workers fill slots; finished slots are flushed to disk in grid order.
  std::vector<char> ready(todo.size(), 0);
  std::size_t flushed = 0;
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t completed = 0;

  auto flush = [&] {
    while (flushed < todo.size() && ready[flushed]) {
      const std::size_t idx = todo[flushed];
      if (csv.is_open()) {
        if (done[idx]) append_rows(csv, hist, idx, *done[idx], &config);
        else write_failure(csv, cells[idx], *failed[idx]);
        csv.flush();
        hist.flush();
      }
      ++flushed;
    }
  };

  auto worker = [&] {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= todo.size()) return;
      const SweepCell& cell = cells[todo[k]];
      std::optional<QoESample> sample;
      std::string error;
      try {
        sample = run_sim(config, grid[cell.decision], cell.theta, cell.seed, options.sim);
      } catch (const std::exception& e) {
        error = e.what();
      }
      std::lock_guard lock(mu);
      if (sample) done[cell.index] = std::move(sample);
      else failed[cell.index] = error;
      ready[k] = 1;
      flush();
      ++completed;
      if (options.progress) options.progress(completed + result.reused, cells.size());
    }
  };

  const unsigned nthreads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(todo.size())));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (const auto& c : cells) {
    if (done[c.index]) result.samples.push_back(std::move(*done[c.index]));
    else if (failed[c.index]) result.failures.push_back({c, *failed[c.index]});
  }
  return result;
}

// --- aggregation --------------------------------------------------------------

std::vector<WorstCaseRow> aggregate_worst_case(const ScenarioConfig& config, const std::vector<QoESample>& dataset) {
  if (dataset.empty()) throw std::invalid_argument("aggregate_worst_case: empty dataset");
  std::vector<WorstCaseRow> rows;
  std::map<std::string, std::size_t> first;  // decision key -> first row index
  for (const auto& s : dataset) {
    const std::string key = s.decision.key();
    auto it = first.find(key);
    if (it == first.end()) {
      it = first.emplace(key, rows.size()).first;
      for (std::size_t i = 0; i < s.classes.size(); ++i) {
        WorstCaseRow r;
        r.app = i;
        r.decision = s.decision;
        r.inputs = class_resources(config, s.decision, i);
        rows.push_back(std::move(r));
      }
    }
    for (std::size_t i = 0; i < s.classes.size(); ++i) {
      WorstCaseRow& r = rows[it->second + i];
      const ClassQoE& q = s.classes[i];
      if (q.server_ok > 0) r.max_delay = std::max(r.max_delay, q.max_delay);
      else if (q.emitted > 0) r.max_delay = std::numeric_limits<double>::infinity();
      r.min_success = std::min(r.min_success, q.e2e_success());
      ++r.samples;
    }
  }
  return rows;
}

std::vector<SiteRow> aggregate_per_site(const ScenarioConfig& config, const std::vector<QoESample>& dataset) {
  if (dataset.empty()) throw std::invalid_argument("aggregate_per_site: empty dataset");
  std::vector<SiteRow> rows;
  std::map<std::pair<std::string, double>, std::size_t> first;
  for (const auto& s : dataset) {
    const auto key = std::make_pair(s.decision.key(), s.theta);
    auto it = first.find(key);
    if (it == first.end()) {
      it = first.emplace(key, rows.size()).first;
      for (std::size_t i = 0; i < s.classes.size(); ++i) {
        SiteRow r;
        r.app = i;
        r.decision = s.decision;
        r.theta = s.theta;
        r.inputs = class_resources(config, s.decision, i);
        rows.push_back(std::move(r));
      }
    }
    for (std::size_t i = 0; i < s.classes.size(); ++i) {
      SiteRow& r = rows[it->second + i];
      const ClassQoE& q = s.classes[i];
      constexpr double inf = std::numeric_limits<double>::infinity();
      if (q.network_ok > 0) r.max_network_delay = std::max(r.max_network_delay, q.max_network_delay);
      else if (q.emitted > 0) r.max_network_delay = inf;
      if (q.server_ok > 0) r.max_server_delay = std::max(r.max_server_delay, q.max_server_delay);
      else if (q.network_ok > 0) r.max_server_delay = inf;
      r.min_network_success = std::min(r.min_network_success, q.network_success());
      r.min_server_success = std::min(r.min_server_success, q.server_success());
      ++r.samples;
    }
  }
  return rows;
}

}  // namespace slicetwin
