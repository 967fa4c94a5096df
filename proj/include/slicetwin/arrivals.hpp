#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "slicetwin/scenario.hpp"

namespace slicetwin {

using Nanos = std::int64_t;

inline Nanos to_nanos(double seconds) { return static_cast<Nanos>(std::llround(seconds * 1e9)); }
inline double to_seconds(Nanos ns) { return double(ns) * 1e-9; }

struct Arrival {
  Nanos time = 0;
  std::uint32_t bytes = 0;
  std::uint32_t user = 0;

  bool operator==(const Arrival&) const = default;
};

// Time-ordered request stream of one class over [0, horizon), ties broken
// by user index.
struct ArrivalStream {
  std::vector<Arrival> arrivals;

  double empirical_rate(double from, double to) const;
};

// Superposition of `users` on-off sources. Each source draws bounded-Pareto
// ON durations and unit-mean OFF durations; the OFF scale is then solved per
// source so that its ON time over the horizon equals horizon * theta /
// burst_ratio, which pins the long-run rate to users * pkt_rate * theta.
ArrivalStream make_arrival_process(const AppClass& app, int users, double theta, std::uint64_t seed,
                                   double horizon);

// Seed of the stream of user `user` in class `app_id` for run seed `seed`.
std::uint64_t stream_seed(std::uint64_t seed, const std::string& app_id, int user);

}  // namespace slicetwin
