#pragma once

#include "ttsa/core.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ttsa {

/// Constant stepsizes, batch size M and iteration count T.
struct TwoTimescaleConfig {
  double alpha = 0.0;
  double beta = 0.0;
  std::uint64_t batch_size = 1;
  std::uint64_t iterations = 0;

  void validate() const {
    require(alpha > 0.0 && std::isfinite(alpha), ErrorKind::config, "alpha must be positive");
    require(beta > 0.0 && std::isfinite(beta), ErrorKind::config, "beta must be positive");
    require(batch_size >= 1, ErrorKind::config, "batch size must be at least 1");
  }
};

/// Per-iteration diagnostics. Fields that do not apply to an algorithm stay empty.
struct TraceRecord {
  std::uint64_t t = 0;
  std::uint64_t samples = 0;
  std::optional<double> theta_err_sq;
  std::optional<double> tracking_err_sq;
  std::optional<double> objective;
  std::optional<double> grad_norm_sq;
  /// ||w_t - w*(theta_{t-1})||^2, the quantity bounded by the one-step w-recursion.
  std::optional<double> pre_tracking_err_sq;
};

struct RunTrace {
  std::string algo;
  std::uint64_t seed = 0;
  std::vector<TraceRecord> records;
  Vec theta_final;
  Vec w_final;
  /// Index drawn uniformly from {1..T} for algorithms with a randomized output.
  std::optional<std::uint64_t> output_index;
  Vec theta_output;
  std::vector<std::string> events;

  const TraceRecord& final_record() const { return records.back(); }
  const TraceRecord& output_record() const {
    return output_index ? records.at(*output_index) : records.back();
  }
};

namespace detail {
inline void accumulate(std::optional<double>& acc, const std::optional<double>& x, bool first) {
  if (first) {
    acc = x;
  } else if (acc && x) {
    *acc += *x;
  } else {
    acc.reset();
  }
}
inline void scale(std::optional<double>& v, double c) {
  if (v) *v *= c;
}
}  // namespace detail

/// Seed average of traces with identical length.
inline std::vector<TraceRecord> average_traces(const std::vector<RunTrace>& runs) {
  require(!runs.empty(), ErrorKind::precondition, "no traces to average");
  const std::size_t n = runs.front().records.size();
  std::vector<TraceRecord> out(n);
  for (std::size_t k = 0; k < runs.size(); ++k) {
    require(runs[k].records.size() == n, ErrorKind::dimension, "traces differ in length");
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = runs[k].records[i];
      auto& o = out[i];
      const bool first = k == 0;
      o.t = r.t;
      o.samples = r.samples;
      detail::accumulate(o.theta_err_sq, r.theta_err_sq, first);
      detail::accumulate(o.tracking_err_sq, r.tracking_err_sq, first);
      detail::accumulate(o.objective, r.objective, first);
      detail::accumulate(o.grad_norm_sq, r.grad_norm_sq, first);
      detail::accumulate(o.pre_tracking_err_sq, r.pre_tracking_err_sq, first);
    }
  }
  const double c = 1.0 / static_cast<double>(runs.size());
  for (auto& o : out) {
    detail::scale(o.theta_err_sq, c);
    detail::scale(o.tracking_err_sq, c);
    detail::scale(o.objective, c);
    detail::scale(o.grad_norm_sq, c);
    detail::scale(o.pre_tracking_err_sq, c);
  }
  return out;
}

}  // namespace ttsa
