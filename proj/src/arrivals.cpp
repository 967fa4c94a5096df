#include "slicetwin/arrivals.hpp"

#include <algorithm>
#include <stdexcept>

#include "slicetwin/rng.hpp"

namespace slicetwin {

namespace {

// Mean of a bounded Pareto on [1, cap] with the given shape.
double unit_scale_mean(double shape, double cap) {
  return shape / (shape - 1.0) * (1.0 - std::pow(cap, 1.0 - shape)) / (1.0 - std::pow(cap, -shape));
}

class BoundedPareto {
 public:
  BoundedPareto(double shape, double cap, double mean)
      : shape_(shape), scale_(mean / unit_scale_mean(shape, cap)), tail_(1.0 - std::pow(cap, -shape)) {}

  double sample(Rng& rng) const {
    const double u = rng.uniform();
    return scale_ * std::pow(1.0 - u * tail_, -1.0 / shape_);
  }

 private:
  double shape_;
  double scale_;
  double tail_;
};

struct OnOffPlan {
  double phase;  // initial OFF residual, in units of the OFF scale
  std::vector<double> on;
  std::vector<double> off;  // unit-mean OFF draws, scaled by `off_scale`
  double off_scale = 0;
};

// ON time within [0, horizon) for a given OFF scale. Non-increasing and
// continuous in `scale`.
double on_time(const OnOffPlan& plan, double scale, double horizon) {
  double t = plan.phase * scale;
  double total = 0;
  for (std::size_t k = 0; k < plan.on.size() && t < horizon; ++k) {
    const double end = std::min(t + plan.on[k], horizon);
    total += end - t;
    t += plan.on[k] + scale * plan.off[k];
  }
  return total;
}

OnOffPlan plan_source(const AppClass& app, double theta, double horizon, Rng& rng) {
  const auto& b = app.burst;
  const BoundedPareto on_dist(b.pareto_shape, b.pareto_cap, b.on_mean);
  const BoundedPareto off_dist(b.pareto_shape, b.pareto_cap, 1.0);

  OnOffPlan plan;
  plan.phase = rng.uniform() * off_dist.sample(rng);
  double covered = 0;
  while (covered < horizon) {
    plan.on.push_back(on_dist.sample(rng));
    plan.off.push_back(off_dist.sample(rng));
    covered += plan.on.back();
  }

  const double target = horizon * theta / b.burst_ratio;
  double lo = 0.0;
  double hi = b.on_mean * (b.burst_ratio / theta - 1.0);
  while (on_time(plan, hi, horizon) > target) {
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (on_time(plan, mid, horizon) > target) lo = mid;
    else hi = mid;
  }
  plan.off_scale = hi;
  return plan;
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t seed, const std::string& app_id, int user) {
  std::uint64_t s = splitmix64(seed ^ 0x5157a11ce5ULL);
  s = splitmix64(s ^ fnv1a(app_id));
  return splitmix64(s + static_cast<std::uint64_t>(user) + 1);
}

double ArrivalStream::empirical_rate(double from, double to) const {
  const Nanos a = to_nanos(from);
  const Nanos b = to_nanos(to);
  const auto n = std::count_if(arrivals.begin(), arrivals.end(),
                               [&](const Arrival& r) { return r.time >= a && r.time < b; });
  return double(n) / (to - from);
}

ArrivalStream make_arrival_process(const AppClass& app, int users, double theta, std::uint64_t seed,
                                   double horizon) {
  if (!(theta > 0)) throw std::invalid_argument("theta must be > 0");
  if (!(theta < app.burst.burst_ratio))
    throw std::invalid_argument("theta must be below the burst ratio of app " + app.id);
  if (users < 1 || !(horizon > 0)) throw std::invalid_argument("users and horizon must be positive");

  const double peak = app.burst.burst_ratio * app.pkt_rate;
  const Nanos end_ns = to_nanos(horizon);
  ArrivalStream stream;
  stream.arrivals.reserve(static_cast<std::size_t>(users * app.pkt_rate * theta * horizon * 1.05) + 16);

  for (int u = 0; u < users; ++u) {
    const std::uint64_t s = stream_seed(seed, app.id, u);
    Rng durations(s);
    Rng sizes(s ^ 0x9b1a7e5dULL);
    const OnOffPlan plan = plan_source(app, theta, horizon, durations);

    // Packets sit at cumulative ON times (k + phase) / peak, so the count is
    // independent of how ON time is cut into bursts.
    const double phase = durations.uniform();
    double cumulative = 0;
    std::int64_t emitted = 0;
    double next = phase / peak;
    double t = plan.phase * plan.off_scale;
    for (std::size_t k = 0; k < plan.on.size() && t < horizon; ++k) {
      const double len = std::min(plan.on[k], horizon - t);
      while (next < cumulative + len) {
        const Nanos at = to_nanos(t + (next - cumulative));
        if (at < end_ns) {
          const auto bytes = static_cast<std::uint32_t>(sizes.uniform_int(app.pkt_size.min_bytes, app.pkt_size.max_bytes));
          stream.arrivals.push_back({at, bytes, static_cast<std::uint32_t>(u)});
        }
        ++emitted;
        next = (double(emitted) + phase) / peak;
      }
      cumulative += len;
      t += plan.on[k] + plan.off_scale * plan.off[k];
    }
  }
  std::stable_sort(stream.arrivals.begin(), stream.arrivals.end(), [](const Arrival& a, const Arrival& b) {
    return a.time != b.time ? a.time < b.time : a.user < b.user;
  });
  return stream;
}

}  // namespace slicetwin
