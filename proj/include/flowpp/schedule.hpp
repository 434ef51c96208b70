#pragma once

#include <vector>

namespace flowpp {

/// Variance-preserving schedule with a linear beta(t) on [0, t_max].
struct DiffusionSchedule {
  double beta_min = 0.1;
  double beta_max = 20.0;
  double t_max = 1.0;

  void validate() const;

  double beta(double t) const noexcept { return beta_min + t * (beta_max - beta_min) / t_max; }
  /// B(t) = int_0^t beta(s) ds.
  double integrated_beta(double t) const noexcept {
    return beta_min * t + 0.5 * (beta_max - beta_min) * t * t / t_max;
  }
  double alpha(double t) const;
  /// alpha^2 and sigma^2 = 1 - alpha^2, computed so that they sum to 1 in floating point.
  double alpha_squared(double t) const;
  double sigma_squared(double t) const;
  double sigma(double t) const;
};

/// Decreasing generative time nodes t[0] = t_max > ... > t[T] = 0.
/// Generative step k (1..T) runs from node T-k to node T-k+1; step k = 1 ends on the data.
class TimeGrid {
 public:
  static TimeGrid uniform(int steps, double t_max);
  explicit TimeGrid(std::vector<double> times);

  int steps() const noexcept { return static_cast<int>(times_.size()) - 1; }
  double time(int node) const { return times_.at(static_cast<std::size_t>(node)); }
  const std::vector<double>& times() const noexcept { return times_; }

  int hi_node(int k) const { return steps() - k; }
  int lo_node(int k) const { return steps() - k + 1; }
  double g_hi(int k) const { return time(hi_node(k)); }
  double g_lo(int k) const { return time(lo_node(k)); }

 private:
  std::vector<double> times_;
};

}  // namespace flowpp
