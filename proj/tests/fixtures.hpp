#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "flowpp/estimators.hpp"
#include "flowpp/flow.hpp"
#include "flowpp/gmm.hpp"
#include "flowpp/schedule.hpp"

namespace fixtures {

using flowpp::ComponentSpec;
using flowpp::DiffusionSchedule;
using flowpp::GmmSpec;
using flowpp::Integrator;
using flowpp::ProbabilityFlow;
using flowpp::TimeGrid;

inline GmmSpec single_gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  return GmmSpec({1.0}, {ComponentSpec::from_covariance(mean, cov)});
}

inline GmmSpec standard_normal(int d) {
  return single_gaussian(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d));
}

inline ProbabilityFlow make_flow(const GmmSpec& model, int steps, Integrator integ = Integrator::heun) {
  DiffusionSchedule sched;
  return ProbabilityFlow(model, sched, TimeGrid::uniform(steps, sched.t_max), integ);
}

/// Target with p_t = N(0, I) at every t; its flow is the identity.
inline ProbabilityFlow stationary_flow(int d, int steps) { return make_flow(standard_normal(d), steps); }

inline Eigen::VectorXd random_vector(int d, std::uint64_t seed) {
  flowpp::Rng rng(seed);
  return flowpp::standard_normal_vector(d, rng);
}

/// Central differences of f at x, one column per coordinate.
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd j(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    j.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

/// Velocity of a single Gaussian N(m, S) is affine, v = A(t) x + c(t); built
/// here directly from the closed-form marginal N(alpha m, alpha^2 S + sigma^2 I).
struct LinearVelocity {
  Eigen::MatrixXd a;
  Eigen::VectorXd c;
};

inline LinearVelocity linear_velocity(const Eigen::VectorXd& m, const Eigen::MatrixXd& s,
                                      const DiffusionSchedule& sched, double t) {
  const auto d = m.size();
  const double al = std::sqrt(sched.alpha_squared(t));
  const Eigen::MatrixXd cov = sched.alpha_squared(t) * s + sched.sigma_squared(t) * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd p = cov.inverse();
  const double b = sched.beta(t);
  return {-0.5 * b * (Eigen::MatrixXd::Identity(d, d) - p), -0.5 * b * p * (al * m)};
}

/// Jacobian of one Heun step of an affine field from t_hi down to t_lo.
inline Eigen::MatrixXd heun_linear_step(const Eigen::MatrixXd& a_hi, const Eigen::MatrixXd& a_lo, double h) {
  const auto d = a_hi.rows();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
  return id - 0.5 * h * (a_hi + a_lo * (id - h * a_hi));
}

}  // namespace fixtures
