#include "slicetwin/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "slicetwin/distributed.hpp"
#include "slicetwin/scenario.hpp"
#include "slicetwin/simulator.hpp"
#include "slicetwin/slicer.hpp"
#include "slicetwin/surrogate.hpp"

namespace slicetwin {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using nlohmann::ordered_json;

// --- manifest ----------------------------------------------------------------

fs::path RunManifest::path_in(const fs::path& run_dir) { return run_dir / "manifest.json"; }

std::string RunManifest::to_json() const {
  ordered_json j;
  j["version"] = version;
  j["scenario"] = scenario_name;
  j["scenario_hash"] = scenario_hash;
  ordered_json st = ordered_json::object();
  for (const auto& [name, s] : stages) {
    ordered_json a = ordered_json::object();
    for (const auto& [k, v] : s.artifacts) a[k] = v;
    st[name] = {{"command", s.command}, {"seeds", s.seeds}, {"artifacts", a}, {"wall_clock_s", s.wall_clock_s}};
  }
  j["stages"] = st;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  const json j = json::parse(text);
  RunManifest m;
  m.version = j.at("version").get<std::string>();
  m.scenario_name = j.at("scenario").get<std::string>();
  m.scenario_hash = j.at("scenario_hash").get<std::uint64_t>();
  for (const auto& [name, s] : j.at("stages").items()) {
    Stage st;
    st.command = s.at("command").get<std::string>();
    st.seeds = s.at("seeds").get<std::vector<std::uint64_t>>();
    st.artifacts = s.at("artifacts").get<std::map<std::string, std::string>>();
    st.wall_clock_s = s.at("wall_clock_s").get<double>();
    m.stages[name] = std::move(st);
  }
  return m;
}

RunManifest RunManifest::load(const fs::path& run_dir) {
  const auto p = path_in(run_dir);
  std::ifstream in(p);
  if (!in) throw StageError(exit_missing, "manifest", "no run manifest in " + run_dir.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_json(ss.str());
  } catch (const json::exception& e) {
    throw StageError(exit_missing, "manifest", p.string() + " is unreadable: " + e.what());
  }
}

void RunManifest::save(const fs::path& run_dir) const {
  const auto p = path_in(run_dir);
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out << to_json();
    if (!out) throw StageError(exit_failed, "manifest", "cannot write " + tmp);
  }
  fs::rename(tmp, p);
}

void RunManifest::require(const fs::path& run_dir, const std::string& stage) const {
  const auto it = stages.find(stage);
  if (it == stages.end())
    throw StageError(exit_missing, stage, "missing prerequisite: stage '" + stage + "' has not run in " + run_dir.string());
  for (const auto& [name, rel] : it->second.artifacts)
    if (!fs::exists(run_dir / rel))
      throw StageError(exit_missing, stage,
                       "missing prerequisite: " + stage + " artifact '" + name + "' (" + rel + ") is gone");
}

namespace {

constexpr const char* kScenarioFile = "scenario.cfg";
constexpr const char* kDatasetFile = "dataset.csv";
constexpr const char* kModelsDir = "models";
constexpr const char* kTrainReport = "train_report.json";

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string read_text(const fs::path& p, const std::string& stage) {
  std::ifstream in(p);
  if (!in) throw StageError(exit_missing, stage, "missing prerequisite: cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  out << text;
  if (!out) throw StageError(exit_failed, "io", "cannot write " + p.string());
}

json read_json(const fs::path& p, const std::string& stage) {
  try {
    return json::parse(read_text(p, stage));
  } catch (const json::exception& e) {
    throw StageError(exit_missing, stage, p.string() + " is not valid JSON: " + e.what());
  }
}

std::string relative_to(const fs::path& p, const fs::path& base) {
  const auto rel = fs::relative(p, base);
  return rel.empty() ? p.string() : rel.generic_string();
}

// An open run: manifest plus the scenario it was created with.
struct Run {
  fs::path dir;
  RunManifest manifest;
  ScenarioConfig config;
};

Run open_run(const fs::path& dir, const std::string& stage) {
  if (!fs::is_directory(dir)) throw StageError(exit_missing, stage, "missing prerequisite: no run directory " + dir.string());
  Run r;
  r.dir = dir;
  r.manifest = RunManifest::load(dir);
  const std::string text = read_text(dir / kScenarioFile, "scenario");
  if (fnv1a(text) != r.manifest.scenario_hash)
    throw StageError(exit_missing, "scenario", (dir / kScenarioFile).string() + " no longer matches the manifest hash");
  r.config = parse_scenario(text, (dir / kScenarioFile).string());
  return r;
}

// Opens a run, or creates one around the given scenario file.
Run open_or_create(const fs::path& dir, const std::string& scenario_path, const std::string& stage) {
  if (scenario_path.empty()) return open_run(dir, stage);
  const std::string text = read_text(scenario_path, "scenario");
  ScenarioConfig config = parse_scenario(text, scenario_path);
  fs::create_directories(dir);
  Run r;
  r.dir = dir;
  if (fs::exists(RunManifest::path_in(dir))) {
    r.manifest = RunManifest::load(dir);
    if (r.manifest.scenario_hash != fnv1a(text))
      throw StageError(exit_failed, stage, dir.string() + " belongs to a different scenario; use a fresh run directory");
  } else {
    r.manifest.scenario_hash = fnv1a(text);
    r.manifest.scenario_name = config.name;
  }
  write_text(dir / kScenarioFile, text);
  r.config = std::move(config);
  return r;
}

void record(Run& run, const std::string& stage, const std::string& command, std::vector<std::uint64_t> seeds,
            std::map<std::string, std::string> artifacts, Clock::time_point t0) {
  artifacts.emplace("scenario", kScenarioFile);
  RunManifest::Stage s{command, std::move(seeds), std::move(artifacts), seconds_since(t0)};
  run.manifest.stages[stage] = std::move(s);
  run.manifest.save(run.dir);
}

std::string model_file(const std::string& app, const std::string& metric, const std::string& kind = "") {
  return app + "." + metric + (kind.empty() ? "" : "." + kind) + ".model";
}

std::shared_ptr<const QoeModel> load_shared(const fs::path& p, const std::string& stage) {
  if (!fs::exists(p)) throw StageError(exit_missing, stage, "missing prerequisite: model " + p.string());
  return std::shared_ptr<const QoeModel>(load_model(p));
}

json decision_json(const SliceDecision& d) {
  return {{"key", d.key()}, {"flows", d.flows}, {"cpu", d.cpu}};
}

SliceDecision decision_from_json(const json& j) {
  SliceDecision d;
  d.flows = j.at("flows").get<std::vector<std::vector<double>>>();
  d.cpu = j.at("cpu").get<std::vector<std::vector<double>>>();
  return d;
}

json validation_json(const ValidationReport& v) {
  json viol = json::array();
  for (const auto& x : v.violations) viol.push_back({{"what", x.what}, {"margin", x.margin}});
  return {{"valid", v.valid()}, {"violations", viol}, {"warnings", v.warnings}};
}

json nlp_json(const NlpSolution& s) {
  return {{"status", to_string(s.status)},
          {"iterations", s.iterations},
          {"kkt_residual", s.kkt_residual},
          {"max_violation", s.max_violation},
          {"start", s.start},
          {"message", s.message}};
}

// Scales each capacity group down onto its bound; site solutions meet the
// rows only within the solver tolerance.
void fit_capacity(SliceDecision& d) {
  const std::size_t apps = d.apps();
  if (!apps) return;
  for (std::size_t e = 0; e < d.flows[0].size(); ++e) {
    double sum = 0;
    for (std::size_t i = 0; i < apps; ++i) sum += d.flows[i][e];
    if (sum > 1)
      for (std::size_t i = 0; i < apps; ++i) d.flows[i][e] = std::min(1.0, d.flows[i][e] / sum);
  }
  for (std::size_t c = 0; c < d.cpu[0].size(); ++c) {
    double sum = 0;
    for (std::size_t i = 0; i < apps; ++i) sum += d.cpu[i][c];
    if (sum > 1)
      for (std::size_t i = 0; i < apps; ++i) d.cpu[i][c] = std::min(1.0, d.cpu[i][c] / sum);
  }
  for (int pass = 0; pass < 4; ++pass) {
    bool over = false;
    for (std::size_t e = 0; e < d.flows[0].size(); ++e) {
      double sum = 0;
      for (std::size_t i = 0; i < apps; ++i) sum += d.flows[i][e];
      if (sum > 1) {
        over = true;
        for (std::size_t i = 0; i < apps; ++i) d.flows[i][e] = std::nextafter(d.flows[i][e], 0.0);
      }
    }
    for (std::size_t c = 0; c < d.cpu[0].size(); ++c) {
      double sum = 0;
      for (std::size_t i = 0; i < apps; ++i) sum += d.cpu[i][c];
      if (sum > 1) {
        over = true;
        for (std::size_t i = 0; i < apps; ++i) d.cpu[i][c] = std::nextafter(d.cpu[i][c], 0.0);
      }
    }
    if (!over) break;
  }
}

// --- stages --------------------------------------------------------------------

struct SimulateArgs {
  std::string run, scenario, mode = "sliced", priority_app;
  std::vector<std::string> alloc;
  double theta = std::nan("");
  std::uint64_t seed = 1;
  double horizon = 0;
};

json class_json(const ClassQoE& q) {
  return {{"app", q.app},
          {"emitted", q.emitted},
          {"network_ok", q.network_ok},
          {"server_ok", q.server_ok},
          {"late", q.violations},
          {"e2e_success", q.e2e_success()},
          {"max_delay", q.max_delay},
          {"mean_delay", q.mean_delay},
          {"p99_delay", q.p99_delay},
          {"max_network_delay", q.max_network_delay},
          {"max_server_delay", q.max_server_delay}};
}

int cmd_simulate(const SimulateArgs& a, const std::string& command, std::ostream& out) {
  const auto t0 = Clock::now();
  Run run = open_or_create(a.run, a.scenario, "simulate");
  const auto& c = run.config;
  const std::size_t dim = class_resource_dim(c);
  std::vector<std::optional<std::vector<double>>> given(c.apps.size());
  for (const auto& spec : a.alloc) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw StageError(exit_usage, "simulate", "--alloc expects APP=v1,v2,...");
    const std::string app = spec.substr(0, eq);
    std::size_t i = 0;
    while (i < c.apps.size() && c.apps[i].id != app) ++i;
    if (i == c.apps.size()) throw StageError(exit_usage, "simulate", "--alloc: unknown app " + app);
    std::vector<double> x;
    std::stringstream ss(spec.substr(eq + 1));
    for (std::string tok; std::getline(ss, tok, ',');) {
      try {
        x.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw StageError(exit_usage, "simulate", "--alloc: bad number '" + tok + "'");
      }
    }
    if (x.size() != dim)
      throw StageError(exit_usage, "simulate",
                       "--alloc " + app + " needs " + std::to_string(dim) + " values (flows on each edge, then cpu)");
    given[i] = std::move(x);
  }
  // Classes without --alloc share what the others leave.
  std::vector<double> left(dim, 1.0);
  std::size_t open = 0;
  for (const auto& g : given) {
    if (!g) ++open;
    else
      for (std::size_t k = 0; k < dim; ++k) left[k] -= (*g)[k];
  }
  SliceDecision d = SliceDecision::zeros(c);
  for (std::size_t i = 0; i < c.apps.size(); ++i) {
    std::vector<double> x(dim);
    for (std::size_t k = 0; k < dim; ++k) x[k] = given[i] ? (*given[i])[k] : std::max(0.0, left[k]) / double(open);
    set_class_resources(c, d, i, x);
  }
  SimOptions o;
  o.mode = parse_service_mode(a.mode);
  o.priority_app = a.priority_app;
  if (a.horizon > 0) o.horizon = a.horizon;
  const double theta = std::isnan(a.theta) ? 0.5 * (c.theta.lo + c.theta.hi) : a.theta;
  const QoESample s = run_sim(c, d, theta, a.seed, o);

  ordered_json j;
  j["mode"] = to_string(o.mode);
  j["theta"] = theta;
  j["seed"] = a.seed;
  j["decision"] = decision_json(d);
  ordered_json classes = ordered_json::array();
  for (const auto& q : s.classes) classes.push_back(class_json(q));
  j["classes"] = classes;
  write_text(run.dir / "simulate.json", j.dump(2) + "\n");
  for (const auto& q : s.classes)
    out << q.app << ": emitted " << q.emitted << ", success " << q.e2e_success() << ", max delay "
        << q.max_delay * 1e3 << " ms, late " << q.violations << "\n";
  record(run, "simulate", command, {a.seed}, {{"result", "simulate.json"}}, t0);
  return exit_ok;
}

struct SweepArgs {
  std::string run, scenario;
  int grid = 21;
  double grid_lo = 0.1;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
};

int cmd_sweep(const SweepArgs& a, const std::string& command, std::ostream& out, std::ostream& err) {
  const auto t0 = Clock::now();
  if (a.scenario.empty()) throw StageError(exit_usage, "sweep", "--scenario is required");
  if (a.grid < 2 || !(a.grid_lo > 0 && a.grid_lo < 1)) throw StageError(exit_usage, "sweep", "need --grid >= 2 and 0 < --grid-lo < 1");
  Run run = open_or_create(a.run, a.scenario, "sweep");
  const auto& c = run.config;
  const auto values = linspace(a.grid_lo, 1.0, a.grid);
  const auto grid = probe_grid(c, values, values);
  SweepOptions so;
  so.threads = a.threads;
  so.persist = run.dir / kDatasetFile;
  std::size_t last = 0;
  so.progress = [&](std::size_t done, std::size_t total) {
    const std::size_t pct = 100 * done / total;
    if (pct >= last + 10 || done == total) {
      last = pct;
      err << "sweep: " << done << "/" << total << " cells\n";
    }
  };
  SweepResult res;
  try {
    res = sweep_grid(c, grid, c.theta.grid, c.theta.seeds, so);
  } catch (const std::runtime_error& e) {
    throw StageError(exit_failed, "sweep", std::string(e.what()) + "; use a fresh run directory");
  }
  for (const auto& f : res.failures) err << "sweep: cell " << f.cell.index << " failed: " << f.error << "\n";
  if (res.samples.empty()) throw StageError(exit_failed, "sweep", "every cell failed");
  out << "sweep: " << res.samples.size() << " samples (" << res.reused << " reused, " << res.failures.size()
      << " failed) for " << grid.size() << " decisions x " << c.theta.grid.size() << " theta x "
      << c.theta.seeds.size() << " seeds\n";
  record(run, "sweep", command, c.theta.seeds,
         {{"dataset", kDatasetFile}, {"histograms", histogram_sidecar(kDatasetFile).generic_string()}}, t0);
  return exit_ok;
}

struct TrainArgs {
  std::string run, metric = "all", arch = "2x16x32x8x1";
  std::vector<std::string> baselines;
  int epochs = 4000, site_epochs = 1000;
  std::uint64_t seed = 1;
  bool no_site = false;
};

ordered_json report_json(const std::string& app, const std::string& metric, const std::string& kind,
                         const std::string& file, const FitReport& r) {
  return {{"app", app},
          {"metric", metric},
          {"kind", kind},
          {"file", file},
          {"train_rows", r.train_rows},
          {"validation_rows", r.validation_rows},
          {"train_rel_error", r.train_rel_error},
          {"validation_rel_error", r.validation_rel_error},
          {"accuracy", r.accuracy()},
          {"heldout_max_abs_error", r.heldout_max_abs_error}};
}

int cmd_train(const TrainArgs& a, const std::string& command, std::ostream& out) {
  const auto t0 = Clock::now();
  Run run = open_run(a.run, "train");
  run.manifest.require(run.dir, "sweep");
  const auto& c = run.config;
  std::vector<Metric> metrics;
  if (a.metric == "all") metrics = {Metric::delay, Metric::throughput};
  else if (a.metric == "delay") metrics = {Metric::delay};
  else if (a.metric == "throughput") metrics = {Metric::throughput};
  else throw StageError(exit_usage, "train", "--metric must be delay, throughput or all");
  std::vector<int> arch;
  std::vector<BaselineKind> baselines;
  try {
    arch = parse_arch(a.arch);
    for (const auto& b : a.baselines) baselines.push_back(BaselineKind::parse(b));
  } catch (const std::exception& e) {
    throw StageError(exit_usage, "train", e.what());
  }
  if (a.epochs < 1 || a.site_epochs < 1) throw StageError(exit_usage, "train", "epochs must be >= 1");

  const auto data = read_dataset_csv(run.dir / kDatasetFile, c);
  if (data.samples.empty()) throw StageError(exit_missing, "sweep", "missing prerequisite: the dataset is empty");
  const auto rows = aggregate_worst_case(c, data.samples);
  const fs::path models = run.dir / kModelsDir;
  fs::create_directories(models);

  std::map<std::string, std::string> artifacts;
  ordered_json rep;
  rep["arch"] = a.arch;
  rep["epochs"] = a.epochs;
  rep["site_epochs"] = a.site_epochs;
  rep["seed"] = a.seed;
  ordered_json list = ordered_json::array(), base_list = ordered_json::array();
  FitHyper hyper;
  hyper.epochs = a.epochs;

  for (std::size_t i = 0; i < c.apps.size(); ++i) {
    const std::string& app = c.apps[i].id;
    for (Metric m : metrics) {
      const TrainingSet set = worst_case_set(rows, i, m);
      auto [model, fr] = fit(set, arch, hyper, a.seed);
      const std::string file = model_file(app, to_string(m));
      model.save(models / file);
      artifacts[app + "." + to_string(m)] = std::string(kModelsDir) + "/" + file;
      list.push_back(report_json(app, to_string(m), "mlp", std::string(kModelsDir) + "/" + file, fr));
      out << app << " " << to_string(m) << ": validation error " << 100 * fr.validation_rel_error << " %\n";
      for (const auto& b : baselines) {
        auto [bm, br] = fit_baseline(set, b, hyper.validation_split, a.seed);
        const std::string tag = b.form == BaselineKind::linear ? "linear" : "poly";
        const std::string bfile = model_file(app, to_string(m), tag);
        bm.save(models / bfile);
        base_list.push_back(report_json(app, to_string(m), b.name(), std::string(kModelsDir) + "/" + bfile, br));
        out << app << " " << to_string(m) << " " << b.name() << ": validation error "
            << 100 * br.validation_rel_error << " %\n";
      }
    }
  }
  if (!a.no_site) {
    const auto site_rows = aggregate_per_site(c, data.samples);
    FitHyper sh = hyper;
    sh.epochs = a.site_epochs;
    for (std::size_t i = 0; i < c.apps.size(); ++i) {
      const std::string& app = c.apps[i].id;
      for (Site site : {Site::network, Site::server}) {
        for (Metric m : {Metric::site_delay, Metric::site_throughput}) {
          const TrainingSet set = site_set(site_rows, i, site, m);
          auto [model, fr] = fit(set, arch, sh, a.seed);
          const std::string metric = to_string(site) + (m == Metric::site_delay ? "_delay" : "_throughput");
          const std::string file = model_file(app, metric);
          model.save(models / file);
          artifacts[app + "." + metric] = std::string(kModelsDir) + "/" + file;
          list.push_back(report_json(app, metric, "mlp", std::string(kModelsDir) + "/" + file, fr));
        }
      }
    }
  }
  rep["models"] = list;
  rep["baselines"] = base_list;
  write_text(run.dir / kTrainReport, rep.dump(2) + "\n");
  artifacts["report"] = kTrainReport;
  record(run, "train", command, {a.seed}, artifacts, t0);
  return exit_ok;
}

struct SolveArgs {
  std::string run, models, out;
  double margin = 0, weight = 1;
};

SliceProblem load_problem(const Run& run, const SolveArgs& a, const std::string& stage) {
  fs::path models = a.models;
  if (models.empty()) {
    run.manifest.require(run.dir, "train");
    models = run.dir / kModelsDir;
  }
  SliceProblem p;
  p.config = run.config;
  p.delay_margin = a.margin;
  for (const auto& app : run.config.apps)
    p.models.push_back({load_shared(models / model_file(app.id, "delay"), "train"),
                        load_shared(models / model_file(app.id, "throughput"), "train")});
  (void)stage;
  return p;
}

ordered_json result_json(const std::string& stage, const SliceResult& r, const NlpSolution& s,
                         const ScenarioConfig& c) {
  ordered_json j;
  j["stage"] = stage;
  j["feasible"] = r.feasible;
  j["message"] = r.message;
  j["objective"] = r.objective;
  j["decision"] = decision_json(r.decision);
  ordered_json classes = ordered_json::array();
  for (const auto& p : r.predicted)
    classes.push_back({{"app", p.app},
                       {"tau", p.tau},
                       {"rho", p.rho},
                       {"resources", p.resources},
                       {"predicted_delay", p.delay},
                       {"predicted_throughput", p.throughput},
                       {"degradable", p.degradable}});
  j["classes"] = classes;
  json mult = json::object(), lin = json::object();
  (void)c;
  for (std::size_t k = 0; k < s.lambda.size(); ++k) mult["g" + std::to_string(k)] = s.lambda[k];
  for (std::size_t k = 0; k < s.lambda_linear.size(); ++k) lin["l" + std::to_string(k)] = s.lambda_linear[k];
  j["multipliers"] = {{"constraints", s.lambda}, {"capacity", s.lambda_linear}};
  j["nlp"] = nlp_json(s);
  j["validation"] = validation_json(validate_decision(r.decision, c.topology));
  return j;
}

void print_prediction(std::ostream& out, const SliceResult& r) {
  for (const auto& p : r.predicted) {
    out << p.app << ":";
    for (double v : p.resources) out << " " << v;
    out << "  delay " << p.delay * 1e3 << " ms (tau " << p.tau * 1e3 << "), throughput " << p.throughput << " (rho "
        << p.rho << ")\n";
  }
}

int cmd_solve(const SolveArgs& a, const std::string& command, std::ostream& out, std::ostream& err) {
  const auto t0 = Clock::now();
  Run run = open_run(a.run, "solve");
  const SliceProblem p = load_problem(run, a, "solve");
  const SliceResult r = solve_robust(p);
  const fs::path dest = a.out.empty() ? run.dir / "solve.json" : fs::path(a.out);
  write_text(dest, result_json("solve", r, r.solution, run.config).dump(2) + "\n");
  out << "solve: " << r.message << "\n";
  print_prediction(out, r);
  if (!r.feasible) err << "solve: no decision meets every constraint; try 'degrade'\n";
  record(run, "solve", command, {}, {{"result", relative_to(dest, run.dir)}}, t0);
  return exit_ok;
}

int cmd_degrade(const SolveArgs& a, const std::string& command, std::ostream& out) {
  const auto t0 = Clock::now();
  Run run = open_run(a.run, "degrade");
  const SliceProblem p = load_problem(run, a, "degrade");
  if (!(a.weight > 0)) throw StageError(exit_usage, "degrade", "--weight must be > 0");
  GracefulResult r;
  try {
    r = solve_graceful(p, DegradeSpec::from_config(run.config, a.weight));
  } catch (const SlicerError& e) {
    throw StageError(exit_failed, "degrade", e.what());
  }
  auto j = result_json("degrade", r, r.solution, run.config);
  json relaxed = json::array();
  for (const auto& x : r.relaxed) relaxed.push_back({{"app", x.app}, {"tau", x.tau}, {"rho", x.rho}});
  j["relaxed"] = relaxed;
  j["penalty"] = r.penalty;
  j["utility"] = r.utility;
  const fs::path dest = a.out.empty() ? run.dir / "degrade.json" : fs::path(a.out);
  write_text(dest, j.dump(2) + "\n");
  out << "degrade: " << r.message << "\n";
  print_prediction(out, r);
  for (const auto& x : r.relaxed)
    out << x.app << " relaxed to delay " << x.tau * 1e3 << " ms, throughput " << x.rho << "\n";
  record(run, "degrade", command, {}, {{"result", relative_to(dest, run.dir)}}, t0);
  return exit_ok;
}

struct DistributeArgs {
  std::string run, models, out, trace, mode = "fixed";
  double eps = 1e-4, alpha0 = 0.1, step_cap = 1.0;
  int max_iter = 500;
};

int cmd_distribute(const DistributeArgs& a, const std::string& command, std::ostream& out) {
  const auto t0 = Clock::now();
  Run run = open_run(a.run, "distribute");
  fs::path models = a.models;
  if (models.empty()) {
    run.manifest.require(run.dir, "train");
    models = run.dir / kModelsDir;
  }
  const auto& c = run.config;
  std::vector<SiteClassModels> net_models, srv_models;
  for (const auto& app : c.apps) {
    net_models.push_back({load_shared(models / model_file(app.id, "network_delay"), "train"),
                          load_shared(models / model_file(app.id, "network_throughput"), "train")});
    srv_models.push_back({load_shared(models / model_file(app.id, "server_delay"), "train"),
                          load_shared(models / model_file(app.id, "server_throughput"), "train")});
  }
  DistributedOptions o;
  try {
    o.mode = parse_master_mode(a.mode);
  } catch (const DistributedError& e) {
    throw StageError(exit_usage, "distribute", e.what());
  }
  if (!(a.eps > 0) || a.max_iter < 1 || !(a.alpha0 > 0) || !(a.step_cap > 0))
    throw StageError(exit_usage, "distribute", "need --eps > 0, --max-iter >= 1, --alpha0 > 0, --step-cap > 0");
  o.eps = a.eps;
  o.max_iter = a.max_iter;
  o.alpha0 = a.alpha0;
  o.step_cap = a.step_cap;
  const fs::path trace_path = a.trace.empty() ? run.dir / "distribute_trace.csv" : fs::path(a.trace);
  if (trace_path.has_parent_path()) fs::create_directories(trace_path.parent_path());
  std::ofstream trace(trace_path);
  o.trace = &trace;

  const SiteProblem net = network_site(c, net_models);
  const SiteProblem srv = server_site(c, srv_models);
  const DistributedResult r = run_algorithm1(net, srv, o);
  trace.close();
  std::vector<double> thetas;
  for (const auto& k : r.state.classes) thetas.push_back(k.theta);
  const CentralizedResult central = solve_centralized(net, srv, thetas);
  SliceDecision d = combine(c, r);
  fit_capacity(d);

  ordered_json j;
  j["stage"] = "distribute";
  j["mode"] = to_string(o.mode);
  j["converged"] = r.converged;
  j["iterations"] = r.iterations;
  j["message"] = r.message;
  j["max_residual"] = r.residuals.max();
  j["objective"] = r.objective;
  j["centralized_objective"] = central.objective;
  const bool central_ok = central.solution.max_violation <= net.nlp.feas_tol;
  j["centralized_feasible"] = central_ok;
  j["decision"] = decision_json(d);
  ordered_json classes = ordered_json::array();
  for (std::size_t i = 0; i < c.apps.size(); ++i) {
    const auto& k = r.state.classes[i];
    classes.push_back({{"app", c.apps[i].id},
                       {"tau", k.tau},
                       {"rho", k.rho},
                       {"tau_n", k.tau_n},
                       {"rho_n", k.rho_n},
                       {"theta", k.theta},
                       {"lambda_tau_n", r.network.classes[i].lambda_tau},
                       {"lambda_tau_s", r.server.classes[i].lambda_tau},
                       {"lambda_rho_n", r.network.classes[i].lambda_rho},
                       {"lambda_rho_s", r.server.classes[i].lambda_rho},
                       {"g_theta_n", r.network.classes[i].g_theta},
                       {"g_theta_s", r.server.classes[i].g_theta}});
  }
  j["classes"] = classes;
  j["validation"] = validation_json(validate_decision(d, c.topology));
  const fs::path dest = a.out.empty() ? run.dir / "distribute.json" : fs::path(a.out);
  write_text(dest, j.dump(2) + "\n");
  out << "distribute: " << r.message << "; objective " << r.objective << " (centralized " << central.objective
      << ")\n";
  if (!central_ok)
    out << "distribute: the split problem is infeasible even when solved centrally (violation "
        << central.solution.max_violation << "); per-site worst cases add up to more than some tau\n";
  record(run, "distribute", command, {},
         {{"result", relative_to(dest, run.dir)}, {"trace", relative_to(trace_path, run.dir)}}, t0);
  return exit_ok;
}

struct VerifyArgs {
  std::string run, result = "solve", baseline, out, priority_app;
  std::uint64_t requests = 100000;
  std::uint64_t seed_base = 1000;
};

struct Tally {
  std::uint64_t emitted = 0, network_ok = 0, served = 0, late = 0;
  double max_delay = 0, delay_sum = 0;
  DelayHistogram hist;
};

double percentile(const DelayHistogram& h, double q) {
  const std::uint64_t total = h.total();
  if (!total) return 0;
  std::uint64_t acc = 0;
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    acc += h.counts[b];
    if (double(acc) >= q * double(total)) return double(b + 1) * h.bin_width;
  }
  return double(h.counts.size()) * h.bin_width;
}

int cmd_verify(const VerifyArgs& a, const std::string& command, std::ostream& out) {
  const auto t0 = Clock::now();
  Run run = open_run(a.run, "verify");
  const auto& c = run.config;
  if (a.result != "solve" && a.result != "degrade" && a.result != "distribute")
    throw StageError(exit_usage, "verify", "--result must be solve, degrade or distribute");
  run.manifest.require(run.dir, a.result);
  const json res = read_json(run.dir / run.manifest.stages.at(a.result).artifacts.at("result"), a.result);
  SliceDecision d = decision_from_json(res.at("decision"));
  if (!d.shape_matches(c)) throw StageError(exit_failed, "verify", "decision does not fit the scenario");

  SimOptions o;
  std::string label = a.result;
  if (!a.baseline.empty()) {
    if (a.baseline != "network-priority" && a.baseline != "compute-priority")
      throw StageError(exit_usage, "verify", "--baseline must be network-priority or compute-priority");
    o.mode = parse_service_mode(a.baseline);
    label = a.baseline;
  }
  o.priority_app = a.priority_app;
  if (a.requests < 1) throw StageError(exit_usage, "verify", "--requests must be >= 1");

  // Fresh seeds, disjoint from the training seeds, cycling the theta grid.
  std::vector<Tally> tally(c.apps.size());
  for (auto& t : tally) t.hist.bin_width = o.hist_bin;
  std::vector<std::uint64_t> seeds;
  for (const auto s : c.theta.seeds)
    if (s >= a.seed_base) throw StageError(exit_usage, "verify", "--seed-base overlaps the scenario seeds");
  for (std::uint64_t k = 0;; ++k) {
    bool enough = true;
    for (const auto& t : tally) enough = enough && t.emitted >= a.requests;
    if (enough) break;
    if (k >= 100000) throw StageError(exit_failed, "verify", "classes emit too few requests to reach --requests");
    const std::uint64_t seed = a.seed_base + k;
    const double theta = c.theta.grid[k % c.theta.grid.size()];
    const QoESample s = run_sim(c, d, theta, seed, o);
    seeds.push_back(seed);
    for (std::size_t i = 0; i < c.apps.size(); ++i) {
      const auto& q = s.classes[i];
      auto& t = tally[i];
      t.emitted += q.emitted;
      t.network_ok += q.network_ok;
      t.served += q.server_ok;
      t.late += q.violations;
      t.max_delay = std::max(t.max_delay, q.max_delay);
      t.delay_sum += q.mean_delay * double(q.server_ok);
      if (t.hist.counts.size() < q.histogram.counts.size()) t.hist.counts.resize(q.histogram.counts.size(), 0);
      for (std::size_t b = 0; b < q.histogram.counts.size(); ++b) t.hist.counts[b] += q.histogram.counts[b];
    }
  }

  // Predicted worst case plus the held-out error of the delay model.
  std::map<std::string, double> model_err;
  if (fs::exists(run.dir / kTrainReport)) {
    const json tr = read_json(run.dir / kTrainReport, "train");
    for (const auto& m : tr.at("models"))
      if (m.at("metric") == "delay") model_err[m.at("app").get<std::string>()] = m.at("heldout_max_abs_error");
  }

  ordered_json j;
  j["label"] = label;
  j["result"] = a.result;
  j["mode"] = to_string(o.mode);
  j["priority_app"] = o.priority_app;
  j["runs"] = seeds.size();
  j["seeds"] = seeds;
  ordered_json classes = ordered_json::array();
  for (std::size_t i = 0; i < c.apps.size(); ++i) {
    const auto& app = c.apps[i];
    const auto& t = tally[i];
    const std::uint64_t lost = t.emitted - t.served;
    const double n = double(std::max<std::uint64_t>(t.emitted, 1));
    ordered_json k;
    k["app"] = app.id;
    k["tau"] = app.tau;
    k["rho"] = app.rho;
    k["emitted"] = t.emitted;
    k["network_ok"] = t.network_ok;
    k["served"] = t.served;
    k["late"] = t.late;
    k["lost"] = lost;
    k["late_pct"] = 100.0 * double(t.late) / n;
    k["lost_pct"] = 100.0 * double(lost) / n;
    k["violation_pct"] = 100.0 * double(t.late + lost) / n;
    k["throughput_pct"] = 100.0 * double(t.served) / n;
    k["meets_tau"] = t.late + lost == 0;
    k["meets_rho"] = double(t.served) >= app.rho * double(t.emitted);
    k["max_delay"] = t.max_delay;
    k["mean_delay"] = t.served ? t.delay_sum / double(t.served) : 0.0;
    k["p99_delay"] = percentile(t.hist, 0.99);
    json predicted = nullptr, bound = nullptr, ok = nullptr;
    if (res.contains("classes") && i < res["classes"].size() && res["classes"][i].contains("predicted_delay") &&
        a.baseline.empty()) {
      const double p = res["classes"][i]["predicted_delay"];
      predicted = p;
      const auto e = model_err.find(app.id);
      const double b = p + (e == model_err.end() ? 0.0 : e->second);
      bound = b;
      ok = t.max_delay <= b;
    }
    k["predicted_delay"] = predicted;
    k["surrogate_bound"] = bound;
    k["within_surrogate_bound"] = ok;
    k["histogram"] = {{"bin_width", t.hist.bin_width}, {"counts", t.hist.counts}};
    classes.push_back(k);
    out << app.id << ": " << t.emitted << " requests, late " << k["late_pct"].get<double>() << " %, lost "
        << k["lost_pct"].get<double>() << " %, max delay " << t.max_delay * 1e3 << " ms (tau " << app.tau * 1e3
        << ")\n";
    if (ok.is_boolean() && !ok.get<bool>())
      out << app.id << ": worst observed delay exceeds the surrogate bound (" << bound.get<double>() * 1e3
          << " ms); the model underestimates this class\n";
  }
  j["classes"] = classes;
  const fs::path dest = a.out.empty() ? run.dir / ("verify_" + label + ".json") : fs::path(a.out);
  write_text(dest, j.dump(2) + "\n");
  record(run, "verify:" + label, command, seeds, {{"result", relative_to(dest, run.dir)}}, t0);
  return exit_ok;
}

struct ReportArgs {
  std::string run, out;
  double bin = 50e-6;
};

int cmd_report(const ReportArgs& a, const std::string& command, std::ostream& out) {
  const auto t0 = Clock::now();
  if (!fs::is_directory(a.run) || fs::is_empty(a.run))
    throw StageError(exit_missing, "report", "missing prerequisite: " + a.run + " is empty or absent");
  Run run = open_run(a.run, "report");
  std::vector<std::string> labels;
  for (const auto& [name, st] : run.manifest.stages)
    if (name.rfind("verify:", 0) == 0) labels.push_back(name);
  if (labels.empty()) throw StageError(exit_missing, "verify", "missing prerequisite: no verify results to report");
  const fs::path dir = a.out.empty() ? run.dir / "report" : fs::path(a.out);
  fs::create_directories(dir);

  ordered_json summary;
  summary["scenario"] = run.manifest.scenario_name;
  summary["scenario_hash"] = run.manifest.scenario_hash;
  summary["bin_width"] = a.bin;
  ordered_json results = ordered_json::array();
  std::map<std::string, std::string> artifacts;
  out << std::left << std::setw(18) << "result" << std::setw(8) << "app" << std::right << std::setw(12)
      << "violation%" << std::setw(12) << "throughput%" << std::setw(12) << "max ms" << std::setw(12) << "p99 ms"
      << "\n";
  for (const auto& name : labels) {
    run.manifest.require(run.dir, name);
    const json v = read_json(run.dir / run.manifest.stages.at(name).artifacts.at("result"), name);
    const std::string label = v.at("label");
    ordered_json r;
    r["label"] = label;
    r["mode"] = v.at("mode");
    ordered_json classes = ordered_json::array();
    for (const auto& k : v.at("classes")) {
      const double recorded = k.at("histogram").at("bin_width");
      const double ratio = a.bin / recorded;
      const auto factor = static_cast<std::size_t>(std::llround(ratio));
      if (factor < 1 || std::abs(ratio - double(factor)) > 1e-9 * ratio)
        throw StageError(exit_usage, "report", "--bin must be a whole multiple of the recorded bin width");
      const auto counts = k.at("histogram").at("counts").get<std::vector<std::uint64_t>>();
      std::vector<std::uint64_t> merged((counts.size() + factor - 1) / factor, 0);
      for (std::size_t b = 0; b < counts.size(); ++b) merged[b / factor] += counts[b];
      const std::uint64_t total = std::accumulate(merged.begin(), merged.end(), std::uint64_t{0});
      std::ostringstream csv;
      csv << "bin_lo_s,bin_hi_s,count,cdf\n";
      std::uint64_t acc = 0;
      for (std::size_t b = 0; b < merged.size(); ++b) {
        acc += merged[b];
        csv << double(b) * a.bin << "," << double(b + 1) * a.bin << "," << merged[b] << ","
            << (total ? double(acc) / double(total) : 0.0) << "\n";
      }
      const std::string app = k.at("app");
      const std::string file = "hist_" + label + "_" + app + ".csv";
      write_text(dir / file, csv.str());
      artifacts["hist:" + label + ":" + app] = relative_to(dir / file, run.dir);
      classes.push_back({{"app", app},
                         {"tau_ms", k.at("tau").get<double>() * 1e3},
                         {"emitted", k.at("emitted")},
                         {"violation_pct", k.at("violation_pct")},
                         {"late_pct", k.at("late_pct")},
                         {"lost_pct", k.at("lost_pct")},
                         {"throughput_pct", k.at("throughput_pct")},
                         {"max_delay_ms", k.at("max_delay").get<double>() * 1e3},
                         {"p99_delay_ms", k.at("p99_delay").get<double>() * 1e3}});
      out << std::left << std::setw(18) << label << std::setw(8) << app << std::right << std::setw(12)
          << k.at("violation_pct").get<double>() << std::setw(12) << k.at("throughput_pct").get<double>()
          << std::setw(12) << k.at("max_delay").get<double>() * 1e3 << std::setw(12)
          << k.at("p99_delay").get<double>() * 1e3 << "\n";
    }
    r["classes"] = classes;
    results.push_back(r);
  }
  summary["results"] = results;
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  artifacts["summary"] = relative_to(dir / "summary.json", run.dir);
  record(run, "report", command, {}, artifacts, t0);
  return exit_ok;
}

std::string join(const std::vector<std::string>& args) {
  std::string s = "slicetwin";
  for (const auto& a : args) s += " " + a;
  return s;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Digital twin for joint network and compute slicing"};
  app.name("slicetwin");
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", kToolVersion);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Run one simulation of a decision");
  c_sim->add_option("--run", sim.run, "Run directory")->required();
  c_sim->add_option("--scenario", sim.scenario, "Scenario file (defaults to the run's copy)");
  c_sim->add_option("--alloc", sim.alloc, "APP=f1,...,phi per class (default: even split)");
  c_sim->add_option("--theta", sim.theta, "Load multiplier (default: middle of the range)");
  c_sim->add_option("--seed", sim.seed, "Random seed");
  c_sim->add_option("--mode", sim.mode, "sliced | network-priority | compute-priority")
      ->check(CLI::IsMember({"sliced", "network-priority", "compute-priority"}));
  c_sim->add_option("--priority-app", sim.priority_app, "Class favoured by the priority modes");
  c_sim->add_option("--horizon", sim.horizon, "Override the simulated horizon (s)");

  SweepArgs sw;
  auto* c_sweep = app.add_subcommand("sweep", "Simulate the probe grid over every theta and seed");
  c_sweep->add_option("--run", sw.run, "Run directory")->required();
  c_sweep->add_option("--scenario", sw.scenario, "Scenario file")->required();
  c_sweep->add_option("--grid", sw.grid, "Points per axis of the (f, phi) grid");
  c_sweep->add_option("--grid-lo", sw.grid_lo, "Smallest grid fraction");
  c_sweep->add_option("--threads", sw.threads, "Worker threads")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Fit worst-case surrogates (and per-site models)");
  c_train->add_option("--run", tr.run, "Run directory")->required();
  c_train->add_option("--metric", tr.metric, "delay | throughput | all")
      ->check(CLI::IsMember({"delay", "throughput", "all"}));
  c_train->add_option("--arch", tr.arch, "Layer widths, e.g. 2x16x32x8x1");
  c_train->add_option("--baseline", tr.baselines, "Also fit linear | poly | polynomial(a,b)");
  c_train->add_option("--epochs", tr.epochs, "Training epochs for end-to-end models");
  c_train->add_option("--site-epochs", tr.site_epochs, "Training epochs for per-site models");
  c_train->add_option("--seed", tr.seed, "Training seed");
  c_train->add_flag("--no-site", tr.no_site, "Skip the per-site models");

  SolveArgs so;
  auto* c_solve = app.add_subcommand("solve", "Robust joint allocation");
  SolveArgs dg;
  auto* c_degrade = app.add_subcommand("degrade", "Allocation with graceful degradation of degradable classes");
  for (auto [cmd, s] : {std::pair{c_solve, &so}, std::pair{c_degrade, &dg}}) {
    cmd->add_option("--run", s->run, "Run directory")->required();
    cmd->add_option("--models", s->models, "Model directory (default: the run's)");
    cmd->add_option("--out", s->out, "Result JSON path");
    cmd->add_option("--margin", s->margin, "Fraction of tau held back from the delay constraints");
  }
  c_degrade->add_option("--weight", dg.weight, "Penalty weight of degradable classes");

  DistributeArgs ds;
  auto* c_dist = app.add_subcommand("distribute", "Two-agent primal decomposition");
  c_dist->add_option("--run", ds.run, "Run directory")->required();
  c_dist->add_option("--models", ds.models, "Model directory (default: the run's)");
  c_dist->add_option("--out", ds.out, "Result JSON path");
  c_dist->add_option("--trace", ds.trace, "Iteration trace CSV path");
  c_dist->add_option("--mode", ds.mode, "fixed | saddle")->check(CLI::IsMember({"fixed", "saddle"}));
  c_dist->add_option("--eps", ds.eps, "Stopping tolerance");
  c_dist->add_option("--max-iter", ds.max_iter, "Iteration limit");
  c_dist->add_option("--alpha0", ds.alpha0, "Initial step size");
  c_dist->add_option("--step-cap", ds.step_cap, "Clip on multiplier differences per step");

  VerifyArgs vf;
  auto* c_verify = app.add_subcommand("verify", "Re-simulate a decision with fresh seeds");
  c_verify->add_option("--run", vf.run, "Run directory")->required();
  c_verify->add_option("--result", vf.result, "solve | degrade | distribute")
      ->check(CLI::IsMember({"solve", "degrade", "distribute"}));
  c_verify->add_option("--baseline", vf.baseline, "network-priority | compute-priority")
      ->check(CLI::IsMember({"network-priority", "compute-priority"}));
  c_verify->add_option("--priority-app", vf.priority_app, "Class favoured by the baseline");
  c_verify->add_option("--requests", vf.requests, "Minimum requests per class");
  c_verify->add_option("--seed-base", vf.seed_base, "First fresh seed");
  c_verify->add_option("--out", vf.out, "Result JSON path");

  ReportArgs rp;
  auto* c_report = app.add_subcommand("report", "Histograms and summary of the verified results");
  c_report->add_option("--run", rp.run, "Run directory")->required();
  c_report->add_option("--bin", rp.bin, "Histogram bin width (s)")->check(CLI::PositiveNumber);
  c_report->add_option("--out", rp.out, "Report directory");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_usage;
  }

  const std::string command = join(args);
  try {
    if (c_sim->parsed()) return cmd_simulate(sim, command, out);
    if (c_sweep->parsed()) return cmd_sweep(sw, command, out, err);
    if (c_train->parsed()) return cmd_train(tr, command, out);
    if (c_solve->parsed()) return cmd_solve(so, command, out, err);
    if (c_degrade->parsed()) return cmd_degrade(dg, command, out);
    if (c_dist->parsed()) return cmd_distribute(ds, command, out);
    if (c_verify->parsed()) return cmd_verify(vf, command, out);
    if (c_report->parsed()) return cmd_report(rp, command, out);
  } catch (const StageError& e) {
    err << "slicetwin: " << e.stage() << ": " << e.what() << "\n";
    if (e.code() == exit_usage) err << app.help();
    return e.code();
  } catch (const ScenarioError& e) {
    err << "slicetwin: " << e.what() << "\n";
    return exit_usage;
  } catch (const std::exception& e) {
    err << "slicetwin: " << e.what() << "\n";
    return exit_failed;
  }
  return exit_usage;
}

}  // namespace slicetwin
