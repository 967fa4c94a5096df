// Learned QoE surfaces: a small tanh MLP plus least-squares baselines, all
// behind one predict/gradient interface so the optimizer can use any of them.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "slicetwin/simulator.hpp"

namespace slicetwin {

class SurrogateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Metric { delay, throughput, site_delay, site_throughput };

std::string to_string(Metric m);
Metric parse_metric(const std::string& text);
inline bool is_delay(Metric m) { return m == Metric::delay || m == Metric::site_delay; }

struct TrainingSet {
  Metric metric = Metric::delay;
  std::vector<std::vector<double>> inputs;
  std::vector<double> targets;  // seconds for delays, fractions for throughput

  std::size_t size() const { return targets.size(); }
  std::size_t dim() const { return inputs.empty() ? 0 : inputs.front().size(); }
  void add(std::vector<double> x, double y);
};

// Worst-case rows of one class; inputs are the class resource vector.
TrainingSet worst_case_set(const std::vector<WorstCaseRow>& rows, std::size_t app, Metric metric);

// Per-site rows of one class. Network models see (flows..., theta), server
// models see (phi, theta).
enum class Site { network, server };
TrainingSet site_set(const std::vector<SiteRow>& rows, std::size_t app, Site site, Metric metric);

struct FitHyper {
  double learning_rate = 0.02;
  double momentum = 0.9;
  int epochs = 4000;
  int batch = 16;
  double validation_split = 0.2;
  double lr_decay = 0.1;  // final learning rate as a fraction of the initial one
  // Inputs are mapped to [-1, 1] on a log scale; needs positive inputs.
  bool log_inputs = true;
};

struct FitReport {
  double train_rel_error = 0;
  double validation_rel_error = 0;
  int epochs = 0;
  double final_loss = 0;
  double train_max_abs_error = 0;
  double heldout_max_abs_error = 0;
  std::size_t train_rows = 0;
  std::size_t validation_rows = 0;

  // 1 - mean relative validation error.
  double accuracy() const { return 1.0 - validation_rel_error; }
};

class QoeModel {
 public:
  virtual ~QoeModel() = default;

  virtual Metric metric() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual double predict(const std::vector<double>& x) const = 0;
  virtual std::vector<double> input_gradient(const std::vector<double>& x) const = 0;
  virtual std::string kind() const = 0;
  virtual void save(std::ostream& out) const = 0;

  // Box of the training inputs; predictions outside it are extrapolations.
  const std::vector<double>& lo() const { return lo_; }
  const std::vector<double>& hi() const { return hi_; }
  bool contains(const std::vector<double>& x) const;

  void save(const std::filesystem::path& path) const;

 protected:
  void check_dim(const std::vector<double>& x) const;
  std::vector<double> lo_, hi_;
};

class Surrogate final : public QoeModel {
 public:
  struct Layer {
    int in = 0, out = 0;
    std::vector<double> w;  // row-major out x in
    std::vector<double> b;
  };

  Metric metric() const override { return metric_; }
  std::size_t input_dim() const override { return lo_.size(); }
  double predict(const std::vector<double>& x) const override;
  std::vector<double> input_gradient(const std::vector<double>& x) const override;
  std::string kind() const override { return "mlp"; }
  void save(std::ostream& out) const override;
  using QoeModel::save;

  const std::vector<int>& widths() const { return widths_; }
  const std::vector<Layer>& layers() const { return layers_; }
  bool log_inputs() const { return log_inputs_; }

  static Surrogate read(std::istream& in);

 private:
  friend std::pair<Surrogate, FitReport> fit(const TrainingSet&, const std::vector<int>&, const FitHyper&,
                                             std::uint64_t);
  double raw(const std::vector<double>& x, std::vector<double>* grad) const;
  double output(double z) const;
  double scale_input(std::size_t j, double v) const;
  double scale_derivative(std::size_t j, double v) const;
  static constexpr double kMinLogInput = 1e-12;

  Metric metric_ = Metric::delay;
  std::vector<int> widths_;
  std::vector<Layer> layers_;
  bool log_inputs_ = false;
  // Delay: y = exp(out_mean + out_scale * z). Throughput: y = logistic(out_mean + out_scale * z).
  double out_mean_ = 0, out_scale_ = 1;
};

// Widths list input width first; the first entry is replaced by the data
// dimension. Throws SurrogateError for fewer than 20 rows or a non-finite loss.
std::pair<Surrogate, FitReport> fit(const TrainingSet& data, const std::vector<int>& widths,
                                    const FitHyper& hyper = {}, std::uint64_t seed = 1);

std::vector<int> parse_arch(const std::string& text);  // "2x16x32x8x1"

// --- least-squares baselines -------------------------------------------------

struct BaselineKind {
  enum Form { linear, polynomial } form = linear;
  int deg_flow = 5;  // exponent cap for every flow input
  int deg_cpu = 4;   // exponent cap for the last input

  static BaselineKind parse(const std::string& text);  // "linear", "poly", "polynomial(5,4)"
  std::string name() const;
};

class LeastSquaresModel final : public QoeModel {
 public:
  Metric metric() const override { return metric_; }
  std::size_t input_dim() const override { return lo_.size(); }
  double predict(const std::vector<double>& x) const override;
  std::vector<double> input_gradient(const std::vector<double>& x) const override;
  std::string kind() const override { return kind_.name(); }
  void save(std::ostream& out) const override;
  using QoeModel::save;

  const std::vector<double>& coefficients() const { return coef_; }
  double rms_residual() const { return rms_residual_; }

  static LeastSquaresModel read(std::istream& in, const std::string& kind);

 private:
  friend std::pair<LeastSquaresModel, FitReport> fit_baseline(const TrainingSet&, BaselineKind, double,
                                                              std::uint64_t);
  std::vector<double> scaled(const std::vector<double>& x) const;

  Metric metric_ = Metric::delay;
  BaselineKind kind_;
  std::vector<std::vector<int>> exponents_;
  std::vector<double> coef_;
  double rms_residual_ = 0;
};

// Fits raw targets by least squares on the same train/validation split that
// fit() would use for this seed and split fraction.
std::pair<LeastSquaresModel, FitReport> fit_baseline(const TrainingSet& data, BaselineKind kind,
                                                     double validation_split = 0.2, std::uint64_t seed = 1);

// Row indices of the validation part, shared by fit and fit_baseline.
std::vector<std::size_t> validation_rows(std::size_t n, double split, std::uint64_t seed);

// Loads either model kind.
std::unique_ptr<QoeModel> load_model(const std::filesystem::path& path);
std::unique_ptr<QoeModel> read_model(std::istream& in);

// Mean relative and max absolute error of a model on a data set.
struct ErrorStats {
  double mean_rel = 0;
  double max_abs = 0;
};
ErrorStats evaluate(const QoeModel& model, const TrainingSet& data, const std::vector<std::size_t>& rows);

}  // namespace slicetwin
