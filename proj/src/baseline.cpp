#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "model_io.hpp"
#include "slicetwin/surrogate.hpp"

namespace slicetwin {

using namespace detail;

BaselineKind BaselineKind::parse(const std::string& text) {
  BaselineKind k;
  if (text == "linear") return k;
  k.form = polynomial;
  if (text == "poly" || text == "polynomial") return k;
  int a = 0, b = 0;
  char tail = 0;
  if (std::sscanf(text.c_str(), "polynomial(%d,%d)%c", &a, &b, &tail) == 2 && a >= 1 && b >= 1) {
    k.deg_flow = a;
    k.deg_cpu = b;
    return k;
  }
  throw SurrogateError("unknown baseline kind '" + text + "'");
}

std::string BaselineKind::name() const {
  if (form == linear) return "linear";
  return "polynomial(" + std::to_string(deg_flow) + "," + std::to_string(deg_cpu) + ")";
}

namespace {

// Linear: constant plus one term per input. Polynomial: full tensor product
// with per-input exponent caps (flows get deg_flow, the last input deg_cpu).
std::vector<std::vector<int>> make_exponents(const BaselineKind& k, std::size_t d) {
  std::vector<std::vector<int>> ex;
  if (k.form == BaselineKind::linear) {
    ex.emplace_back(d, 0);
    for (std::size_t j = 0; j < d; ++j) {
      ex.emplace_back(d, 0);
      ex.back()[j] = 1;
    }
    return ex;
  }
  std::vector<int> cap(d, k.deg_flow);
  if (d >= 2) cap.back() = k.deg_cpu;
  std::vector<int> e(d, 0);
  while (true) {
    ex.push_back(e);
    std::size_t j = 0;
    while (j < d && ++e[j] > cap[j]) e[j++] = 0;
    if (j == d) break;
  }
  return ex;
}

double ipow(double x, int n) {
  double r = 1;
  for (int i = 0; i < n; ++i) r *= x;
  return r;
}

}  // namespace

std::vector<double> LeastSquaresModel::scaled(const std::vector<double>& x) const {
  std::vector<double> u(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) u[j] = 2.0 * (x[j] - lo_[j]) / span(lo_[j], hi_[j]) - 1.0;
  return u;
}

double LeastSquaresModel::predict(const std::vector<double>& x) const {
  check_dim(x);
  const auto u = scaled(x);
  double y = 0;
  for (std::size_t t = 0; t < coef_.size(); ++t) {
    double term = coef_[t];
    for (std::size_t j = 0; j < u.size(); ++j) term *= ipow(u[j], exponents_[t][j]);
    y += term;
  }
  return y;
}

std::vector<double> LeastSquaresModel::input_gradient(const std::vector<double>& x) const {
  check_dim(x);
  const auto u = scaled(x);
  std::vector<double> g(u.size(), 0.0);
  for (std::size_t t = 0; t < coef_.size(); ++t) {
    for (std::size_t k = 0; k < u.size(); ++k) {
      const int e = exponents_[t][k];
      if (e == 0) continue;
      double term = coef_[t] * e * ipow(u[k], e - 1);
      for (std::size_t j = 0; j < u.size(); ++j)
        if (j != k) term *= ipow(u[j], exponents_[t][j]);
      g[k] += term;
    }
  }
  for (std::size_t k = 0; k < g.size(); ++k) g[k] *= 2.0 / span(lo_[k], hi_[k]);
  return g;
}

void LeastSquaresModel::save(std::ostream& out) const {
  out << "slicetwin-model 1\nkind " << kind_.name() << "\nmetric " << to_string(metric_) << "\ndim " << lo_.size()
      << '\n';
  write_numbers(out, "lo", lo_);
  write_numbers(out, "hi", hi_);
  out << "terms " << coef_.size() << '\n';
  for (std::size_t t = 0; t < coef_.size(); ++t) {
    out << "term";
    for (int e : exponents_[t]) out << ' ' << e;
    out << ' ' << hex(coef_[t]) << '\n';
  }
  out << "rms " << hex(rms_residual_) << "\nend\n";
}

LeastSquaresModel LeastSquaresModel::read(std::istream& in, const std::string& kind) {
  LeastSquaresModel m;
  m.kind_ = BaselineKind::parse(kind);
  m.metric_ = parse_metric(expect_word(in, "metric"));
  const long d = std::stol(expect_word(in, "dim"));
  if (d < 1) throw SurrogateError("model file: bad dim");
  m.lo_ = read_numbers(in, "lo", d);
  m.hi_ = read_numbers(in, "hi", d);
  const long n = std::stol(expect_word(in, "terms"));
  for (long t = 0; t < n; ++t) {
    std::string word;
    if (!(in >> word) || word != "term") throw SurrogateError("model file: expected 'term'");
    std::vector<int> e(d);
    for (auto& v : e)
      if (!(in >> v)) throw SurrogateError("model file: bad exponent");
    if (!(in >> word)) throw SurrogateError("model file: truncated term");
    m.exponents_.push_back(std::move(e));
    m.coef_.push_back(parse_double(word));
  }
  m.rms_residual_ = read_numbers(in, "rms", 1)[0];
  std::string word;
  if (!(in >> word) || word != "end") throw SurrogateError("model file: missing 'end'");
  return m;
}

std::pair<LeastSquaresModel, FitReport> fit_baseline(const TrainingSet& data, BaselineKind kind,
                                                     double validation_split, std::uint64_t seed) {
  if (data.size() < 2) throw SurrogateError("baseline fit needs at least 2 rows");
  for (double y : data.targets)
    if (!std::isfinite(y)) throw SurrogateError("non-finite target in baseline fit");
  LeastSquaresModel m;
  m.metric_ = data.metric;
  m.kind_ = kind;
  box_of(data, m.lo_, m.hi_);
  m.exponents_ = make_exponents(kind, data.dim());

  const auto val = validation_rows(data.size(), validation_split, seed);
  const auto train = complement(data.size(), val);
  Eigen::MatrixXd A(train.size(), m.exponents_.size());
  Eigen::VectorXd b(train.size());
  for (std::size_t r = 0; r < train.size(); ++r) {
    const auto u = m.scaled(data.inputs[train[r]]);
    for (std::size_t t = 0; t < m.exponents_.size(); ++t) {
      double v = 1;
      for (std::size_t j = 0; j < u.size(); ++j) v *= ipow(u[j], m.exponents_[t][j]);
      A(r, t) = v;
    }
    b(r) = data.targets[train[r]];
  }
  const Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
  m.coef_.assign(c.data(), c.data() + c.size());
  m.rms_residual_ = std::sqrt((A * c - b).squaredNorm() / double(train.size()));

  FitReport rep;
  rep.final_loss = m.rms_residual_ * m.rms_residual_;
  fill_report(rep, m, data, train, val);
  return {std::move(m), rep};
}

}  // namespace slicetwin
