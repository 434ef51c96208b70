#include "flowpp/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace flowpp {

void DiffusionSchedule::validate() const {
  if (!(beta_min > 0.0) || !(beta_max > 0.0)) {
    throw std::invalid_argument("schedule: beta_min and beta_max must be positive");
  }
  if (!(t_max > 0.0)) throw std::invalid_argument("schedule: t_max must be positive");
}

double DiffusionSchedule::alpha(double t) const { return std::exp(-0.5 * integrated_beta(t)); }

double DiffusionSchedule::alpha_squared(double t) const { return std::exp(-integrated_beta(t)); }

double DiffusionSchedule::sigma_squared(double t) const { return 1.0 - alpha_squared(t); }

double DiffusionSchedule::sigma(double t) const { return std::sqrt(sigma_squared(t)); }

TimeGrid TimeGrid::uniform(int steps, double t_max) {
  if (steps < 1) throw std::invalid_argument("time grid needs at least one step");
  std::vector<double> t(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) {
    t[static_cast<std::size_t>(i)] = t_max * static_cast<double>(steps - i) / steps;
  }
  return TimeGrid(std::move(t));
}

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times)) {
  if (times_.size() < 2) throw std::invalid_argument("time grid needs at least one step");
  if (times_.back() != 0.0) throw std::invalid_argument("time grid must end at t = 0");
  for (std::size_t i = 1; i < times_.size(); ++i) {
    if (!(times_[i] < times_[i - 1])) {
      throw std::invalid_argument("time grid must be strictly decreasing (node " +
                                  std::to_string(i) + ")");
    }
  }
}

}  // namespace flowpp
