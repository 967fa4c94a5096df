// Helpers shared by the model implementations; not installed.
#pragma once

#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "slicetwin/surrogate.hpp"

namespace slicetwin::detail {

inline std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_double(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || end != tok.c_str() + tok.size()) throw SurrogateError("model file: bad number '" + tok + "'");
  return v;
}

inline std::vector<double> read_numbers(std::istream& in, const std::string& tag, std::size_t n) {
  std::string word;
  if (!(in >> word) || word != tag) throw SurrogateError("model file: expected '" + tag + "', got '" + word + "'");
  std::vector<double> v(n);
  for (auto& x : v) {
    if (!(in >> word)) throw SurrogateError("model file: truncated at '" + tag + "'");
    x = parse_double(word);
  }
  return v;
}

inline void write_numbers(std::ostream& out, const std::string& tag, const std::vector<double>& v) {
  out << tag;
  for (double x : v) out << ' ' << hex(x);
  out << '\n';
}

inline std::string expect_word(std::istream& in, const std::string& tag) {
  std::string word, value;
  if (!(in >> word) || word != tag) throw SurrogateError("model file: expected '" + tag + "'");
  if (!(in >> value)) throw SurrogateError("model file: missing value for '" + tag + "'");
  return value;
}

inline void box_of(const TrainingSet& data, std::vector<double>& lo, std::vector<double>& hi) {
  const std::size_t d = data.dim();
  lo.assign(d, std::numeric_limits<double>::infinity());
  hi.assign(d, -std::numeric_limits<double>::infinity());
  for (const auto& x : data.inputs)
    for (std::size_t j = 0; j < d; ++j) {
      lo[j] = std::min(lo[j], x[j]);
      hi[j] = std::max(hi[j], x[j]);
    }
}

inline double span(double lo, double hi) { return hi > lo ? hi - lo : 1.0; }

inline std::vector<std::size_t> complement(std::size_t n, const std::vector<std::size_t>& held) {
  std::vector<std::size_t> out;
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (k < held.size() && held[k] == i) {
      ++k;
      continue;
    }
    out.push_back(i);
  }
  return out;
}

inline void fill_report(FitReport& rep, const QoeModel& m, const TrainingSet& data, const std::vector<std::size_t>& train,
                 const std::vector<std::size_t>& val) {
  const auto t = evaluate(m, data, train);
  const auto v = evaluate(m, data, val);
  rep.train_rel_error = t.mean_rel;
  rep.train_max_abs_error = t.max_abs;
  rep.validation_rel_error = val.empty() ? t.mean_rel : v.mean_rel;
  rep.heldout_max_abs_error = val.empty() ? t.max_abs : v.max_abs;
  rep.train_rows = train.size();
  rep.validation_rows = val.size();
}

}  // namespace slicetwin::detail
