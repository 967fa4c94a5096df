#include "slicetwin/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "model_io.hpp"
#include "slicetwin/rng.hpp"

namespace slicetwin {

using namespace detail;

namespace {

double logistic(double z) {
  z = std::clamp(z, -30.0, 30.0);
  return 1.0 / (1.0 + std::exp(-z));
}

// Replaces non-finite targets with ten times the largest finite one.
void cap_targets(TrainingSet& set) {
  double top = 0;
  for (double y : set.targets)
    if (std::isfinite(y)) top = std::max(top, y);
  for (double& y : set.targets)
    if (!std::isfinite(y)) y = top > 0 ? 10.0 * top : 1.0;
}

bool all_positive(const std::vector<double>& x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return v > 0; });
}

}  // namespace

std::string to_string(Metric m) {
  switch (m) {
    case Metric::delay: return "delay";
    case Metric::throughput: return "throughput";
    case Metric::site_delay: return "site-delay";
    case Metric::site_throughput: return "site-throughput";
  }
  return "?";
}

Metric parse_metric(const std::string& text) {
  if (text == "delay") return Metric::delay;
  if (text == "throughput") return Metric::throughput;
  if (text == "site-delay") return Metric::site_delay;
  if (text == "site-throughput") return Metric::site_throughput;
  throw SurrogateError("unknown metric '" + text + "'");
}

void TrainingSet::add(std::vector<double> x, double y) {
  if (!inputs.empty() && x.size() != inputs.front().size()) throw SurrogateError("training row has wrong dimension");
  inputs.push_back(std::move(x));
  targets.push_back(y);
}

TrainingSet worst_case_set(const std::vector<WorstCaseRow>& rows, std::size_t app, Metric metric) {
  if (metric != Metric::delay && metric != Metric::throughput)
    throw SurrogateError("worst-case sets hold delay or throughput");
  TrainingSet set;
  set.metric = metric;
  for (const auto& r : rows) {
    if (r.app != app || !all_positive(r.inputs)) continue;
    set.add(r.inputs, metric == Metric::delay ? r.max_delay : r.min_success);
  }
  cap_targets(set);
  return set;
}

TrainingSet site_set(const std::vector<SiteRow>& rows, std::size_t app, Site site, Metric metric) {
  if (metric != Metric::site_delay && metric != Metric::site_throughput)
    throw SurrogateError("site sets hold site-delay or site-throughput");
  TrainingSet set;
  set.metric = metric;
  for (const auto& r : rows) {
    if (r.app != app || !all_positive(r.inputs)) continue;
    std::vector<double> x;
    if (site == Site::network) x.assign(r.inputs.begin(), r.inputs.end() - 1);
    else x.push_back(r.inputs.back());
    x.push_back(r.theta);
    double y;
    if (metric == Metric::site_delay) y = site == Site::network ? r.max_network_delay : r.max_server_delay;
    else y = site == Site::network ? r.min_network_success : r.min_server_success;
    set.add(std::move(x), y);
  }
  cap_targets(set);
  return set;
}

// --- QoeModel ----------------------------------------------------------------

bool QoeModel::contains(const std::vector<double>& x) const {
  if (x.size() != lo_.size()) return false;
  for (std::size_t j = 0; j < x.size(); ++j)
    if (x[j] < lo_[j] || x[j] > hi_[j]) return false;
  return true;
}

void QoeModel::check_dim(const std::vector<double>& x) const {
  if (x.size() != lo_.size())
    throw SurrogateError("input has dimension " + std::to_string(x.size()) + ", model expects " +
                         std::to_string(lo_.size()));
}

void QoeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw SurrogateError("cannot write " + path.string());
  save(out);
  if (!out) throw SurrogateError("write failed for " + path.string());
}

// --- MLP -----------------------------------------------------------------------

double Surrogate::output(double z) const {
  if (is_delay(metric_)) return std::exp(out_mean_ + out_scale_ * z);
  return logistic(out_mean_ + out_scale_ * z);
}

double Surrogate::scale_input(std::size_t j, double v) const {
  if (!log_inputs_) return 2.0 * (v - lo_[j]) / span(lo_[j], hi_[j]) - 1.0;
  const double a = std::log(lo_[j]), b = std::log(hi_[j]);
  return 2.0 * (std::log(std::max(v, kMinLogInput)) - a) / span(a, b) - 1.0;
}

double Surrogate::scale_derivative(std::size_t j, double v) const {
  if (!log_inputs_) return 2.0 / span(lo_[j], hi_[j]);
  return 2.0 / (span(std::log(lo_[j]), std::log(hi_[j])) * std::max(v, kMinLogInput));
}

// Network output z before the output transform; optionally dz/dx.
double Surrogate::raw(const std::vector<double>& x, std::vector<double>* grad) const {
  const std::size_t d = lo_.size();
  std::vector<std::vector<double>> acts;  // post-activation of every hidden layer
  std::vector<double> a(d);
  for (std::size_t j = 0; j < d; ++j) a[j] = scale_input(j, x[j]);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    std::vector<double> z(L.out);
    for (int o = 0; o < L.out; ++o) {
      double s = L.b[o];
      const double* w = &L.w[std::size_t(o) * L.in];
      for (int i = 0; i < L.in; ++i) s += w[i] * a[i];
      z[o] = s;
    }
    if (l + 1 < layers_.size())
      for (double& v : z) v = std::tanh(v);
    a = std::move(z);
    if (l + 1 < layers_.size()) acts.push_back(a);
  }
  const double out = a[0];
  if (grad) {
    std::vector<double> delta{1.0};
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const Layer& L = layers_[l];
      std::vector<double> prev(L.in, 0.0);
      for (int o = 0; o < L.out; ++o)
        for (int i = 0; i < L.in; ++i) prev[i] += L.w[std::size_t(o) * L.in + i] * delta[o];
      if (l > 0) {
        const auto& h = acts[l - 1];
        for (int i = 0; i < L.in; ++i) prev[i] *= 1.0 - h[i] * h[i];
      }
      delta = std::move(prev);
    }
    grad->resize(d);
    for (std::size_t j = 0; j < d; ++j) (*grad)[j] = delta[j] * scale_derivative(j, x[j]);
  }
  return out;
}

double Surrogate::predict(const std::vector<double>& x) const {
  check_dim(x);
  return output(raw(x, nullptr));
}

std::vector<double> Surrogate::input_gradient(const std::vector<double>& x) const {
  check_dim(x);
  std::vector<double> g;
  const double z = raw(x, &g);
  const double y = output(z);
  const double dy = is_delay(metric_) ? y * out_scale_ : y * (1.0 - y) * out_scale_;
  for (double& v : g) v *= dy;
  return g;
}

void Surrogate::save(std::ostream& out) const {
  out << "slicetwin-model 1\nkind mlp\nmetric " << to_string(metric_) << "\nwidths";
  for (int w : widths_) out << ' ' << w;
  out << '\n';
  write_numbers(out, "lo", lo_);
  write_numbers(out, "hi", hi_);
  out << "inputs " << (log_inputs_ ? "log" : "linear") << '\n';
  write_numbers(out, "output", {out_mean_, out_scale_});
  for (const auto& L : layers_) {
    write_numbers(out, "w", L.w);
    write_numbers(out, "b", L.b);
  }
  out << "end\n";
}

Surrogate Surrogate::read(std::istream& in) {
  Surrogate s;
  s.metric_ = parse_metric(expect_word(in, "metric"));
  std::string word;
  in >> word;
  if (word != "widths") throw SurrogateError("model file: expected 'widths'");
  std::string line;
  std::getline(in, line);
  std::istringstream ws(line);
  for (int w; ws >> w;) s.widths_.push_back(w);
  if (s.widths_.size() < 2 || s.widths_.back() != 1) throw SurrogateError("model file: bad widths");
  const std::size_t d = s.widths_.front();
  s.lo_ = read_numbers(in, "lo", d);
  s.hi_ = read_numbers(in, "hi", d);
  const std::string scale = expect_word(in, "inputs");
  if (scale != "log" && scale != "linear") throw SurrogateError("model file: bad input scale '" + scale + "'");
  s.log_inputs_ = scale == "log";
  const auto o = read_numbers(in, "output", 2);
  s.out_mean_ = o[0];
  s.out_scale_ = o[1];
  for (std::size_t l = 0; l + 1 < s.widths_.size(); ++l) {
    Layer L;
    L.in = s.widths_[l];
    L.out = s.widths_[l + 1];
    L.w = read_numbers(in, "w", std::size_t(L.in) * L.out);
    L.b = read_numbers(in, "b", L.out);
    s.layers_.push_back(std::move(L));
  }
  if (!(in >> word) || word != "end") throw SurrogateError("model file: missing 'end'");
  return s;
}

std::vector<int> parse_arch(const std::string& text) {
  std::vector<int> widths;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto pos = text.find('x', start);
    const std::string tok = text.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
    char* end = nullptr;
    const long v = std::strtol(tok.c_str(), &end, 10);
    if (tok.empty() || end != tok.c_str() + tok.size() || v < 1) throw SurrogateError("bad architecture '" + text + "'");
    widths.push_back(int(v));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (widths.size() < 2 || widths.back() != 1) throw SurrogateError("architecture must end in a single output: '" + text + "'");
  return widths;
}

std::vector<std::size_t> validation_rows(std::size_t n, double split, std::uint64_t seed) {
  if (split < 0 || split >= 1) throw SurrogateError("validation split must be in [0,1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed ^ 0x5eed5eedULL);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(0, i - 1)]);
  std::size_t k = std::size_t(std::llround(split * double(n)));
  if (split > 0 && k == 0 && n >= 2) k = 1;
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

ErrorStats evaluate(const QoeModel& model, const TrainingSet& data, const std::vector<std::size_t>& rows) {
  ErrorStats e;
  if (rows.empty()) return e;
  for (std::size_t r : rows) {
    const double y = data.targets[r];
    const double err = std::abs(model.predict(data.inputs[r]) - y);
    e.mean_rel += err / std::max(std::abs(y), 1e-12);
    e.max_abs = std::max(e.max_abs, err);
  }
  e.mean_rel /= double(rows.size());
  return e;
}

std::pair<Surrogate, FitReport> fit(const TrainingSet& data, const std::vector<int>& widths_in, const FitHyper& hyper,
                                    std::uint64_t seed) {
  if (data.size() < 20) throw SurrogateError("need at least 20 training rows, got " + std::to_string(data.size()));
  if (widths_in.size() < 2 || widths_in.back() != 1) throw SurrogateError("architecture must end in a single output");
  if (hyper.epochs < 1 || hyper.batch < 1 || !(hyper.learning_rate > 0)) throw SurrogateError("bad hyper-parameters");
  for (std::size_t r = 0; r < data.size(); ++r) {
    if (!std::isfinite(data.targets[r])) throw SurrogateError("non-finite target in row " + std::to_string(r));
    if (is_delay(data.metric) && !(data.targets[r] > 0))
      throw SurrogateError("delay targets must be > 0 (row " + std::to_string(r) + ")");
  }

  if (hyper.log_inputs)
    for (std::size_t r = 0; r < data.size(); ++r)
      for (double v : data.inputs[r])
        if (!(v > 0)) throw SurrogateError("log-scaled inputs must be > 0 (row " + std::to_string(r) + ")");

  Surrogate s;
  s.metric_ = data.metric;
  s.log_inputs_ = hyper.log_inputs;
  s.widths_ = widths_in;
  s.widths_.front() = int(data.dim());
  box_of(data, s.lo_, s.hi_);

  const auto val = validation_rows(data.size(), hyper.validation_split, seed);
  const auto train = complement(data.size(), val);

  // Output scaling from the training rows only.
  const bool delay = is_delay(data.metric);
  double mean = 0, var = 0;
  for (std::size_t r : train) mean += delay ? std::log(data.targets[r]) : data.targets[r];
  mean /= double(train.size());
  for (std::size_t r : train) {
    const double v = (delay ? std::log(data.targets[r]) : data.targets[r]) - mean;
    var += v * v;
  }
  var /= double(train.size());
  // A constant target is represented exactly by a zero output scale.
  const bool constant = var <= 1e-24;
  if (delay) {
    s.out_mean_ = mean;
    s.out_scale_ = constant ? 0.0 : std::sqrt(var);
  } else {
    const double m = std::clamp(mean, constant ? 1e-13 : 1e-3, constant ? 1 - 1e-13 : 1 - 1e-3);
    s.out_mean_ = std::log(m / (1 - m));
    s.out_scale_ = constant ? 0.0 : 1.0;
  }
  const double loss_norm = delay ? 1.0 : 1.0 / std::max(var, 1e-6);

  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < s.widths_.size(); ++l) {
    Surrogate::Layer L;
    L.in = s.widths_[l];
    L.out = s.widths_[l + 1];
    const double a = std::sqrt(6.0 / double(L.in + L.out));
    L.w.resize(std::size_t(L.in) * L.out);
    for (double& w : L.w) w = a * (2.0 * rng.uniform() - 1.0);
    L.b.assign(L.out, 0.0);
    s.layers_.push_back(std::move(L));
  }

  const std::size_t nl = s.layers_.size();
  std::vector<std::vector<double>> gw(nl), gb(nl), vw(nl), vb(nl);
  for (std::size_t l = 0; l < nl; ++l) {
    vw[l].assign(s.layers_[l].w.size(), 0.0);
    vb[l].assign(s.layers_[l].b.size(), 0.0);
  }

  // Normalized training inputs and standardized targets.
  const std::size_t d = data.dim();
  std::vector<std::vector<double>> U(data.size(), std::vector<double>(d));
  for (std::size_t r = 0; r < data.size(); ++r)
    for (std::size_t j = 0; j < d; ++j)
      U[r][j] = s.scale_input(j, data.inputs[r][j]);

  std::vector<std::size_t> order = train;
  std::vector<std::vector<double>> acts(nl + 1);
  FitReport rep;
  double epoch_loss = 0;
  const int epochs = constant ? 0 : hyper.epochs;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const double lr = hyper.learning_rate * std::pow(hyper.lr_decay, double(epoch) / double(hyper.epochs));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(0, i - 1)]);
    epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t stop = std::min(order.size(), start + std::size_t(hyper.batch));
      for (std::size_t l = 0; l < nl; ++l) {
        gw[l].assign(s.layers_[l].w.size(), 0.0);
        gb[l].assign(s.layers_[l].b.size(), 0.0);
      }
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t r = order[k];
        acts[0] = U[r];
        for (std::size_t l = 0; l < nl; ++l) {
          const auto& L = s.layers_[l];
          auto& z = acts[l + 1];
          z.assign(L.out, 0.0);
          for (int o = 0; o < L.out; ++o) {
            double sum = L.b[o];
            for (int i = 0; i < L.in; ++i) sum += L.w[std::size_t(o) * L.in + i] * acts[l][i];
            z[o] = l + 1 < nl ? std::tanh(sum) : sum;
          }
        }
        const double zout = acts[nl][0];
        double dz;
        if (delay) {
          const double t = (std::log(data.targets[r]) - s.out_mean_) / s.out_scale_;
          const double e = zout - t;
          epoch_loss += e * e;
          dz = 2.0 * e;
        } else {
          const double y = logistic(s.out_mean_ + s.out_scale_ * zout);
          const double e = y - data.targets[r];
          epoch_loss += e * e * loss_norm;
          dz = 2.0 * e * loss_norm * y * (1 - y) * s.out_scale_;
        }
        std::vector<double> delta{dz};
        for (std::size_t l = nl; l-- > 0;) {
          const auto& L = s.layers_[l];
          std::vector<double> prev(L.in, 0.0);
          for (int o = 0; o < L.out; ++o) {
            gb[l][o] += delta[o];
            for (int i = 0; i < L.in; ++i) {
              gw[l][std::size_t(o) * L.in + i] += delta[o] * acts[l][i];
              prev[i] += L.w[std::size_t(o) * L.in + i] * delta[o];
            }
          }
          if (l > 0)
            for (int i = 0; i < L.in; ++i) prev[i] *= 1.0 - acts[l][i] * acts[l][i];
          delta = std::move(prev);
        }
      }
      const double inv = 1.0 / double(stop - start);
      for (std::size_t l = 0; l < nl; ++l) {
        auto& L = s.layers_[l];
        for (std::size_t k = 0; k < L.w.size(); ++k) {
          vw[l][k] = hyper.momentum * vw[l][k] - lr * gw[l][k] * inv;
          L.w[k] += vw[l][k];
        }
        for (std::size_t k = 0; k < L.b.size(); ++k) {
          vb[l][k] = hyper.momentum * vb[l][k] - lr * gb[l][k] * inv;
          L.b[k] += vb[l][k];
        }
      }
    }
    epoch_loss /= double(order.size());
    if (!std::isfinite(epoch_loss))
      throw SurrogateError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
  }
  rep.epochs = epochs;
  rep.final_loss = epoch_loss;
  fill_report(rep, s, data, train, val);
  return {std::move(s), rep};
}

std::unique_ptr<QoeModel> read_model(std::istream& in) {
  std::string magic, version;
  if (!(in >> magic >> version) || magic != "slicetwin-model") throw SurrogateError("not a slicetwin model file");
  if (version != "1") throw SurrogateError("unsupported model version " + version);
  const std::string kind = expect_word(in, "kind");
  if (kind == "mlp") return std::make_unique<Surrogate>(Surrogate::read(in));
  return std::make_unique<LeastSquaresModel>(LeastSquaresModel::read(in, kind));
}

std::unique_ptr<QoeModel> load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SurrogateError("cannot open model " + path.string());
  try {
    return read_model(in);
  } catch (const SurrogateError& e) {
    throw SurrogateError(path.string() + ": " + e.what());
  }
}

}  // namespace slicetwin
