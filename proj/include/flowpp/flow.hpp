#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "flowpp/gmm.hpp"
#include "flowpp/schedule.hpp"

namespace flowpp {

enum class Integrator { heun, euler };
enum class StepDirection { generative, inverse };

/// Instrumented ODE work. One pass = T step evaluations of a single vector
/// (primal or tangent), or one probe sweep over the trajectory nodes.
struct PassCounter {
  std::uint64_t generative_steps = 0;
  std::uint64_t inverse_steps = 0;
  std::uint64_t tangent_steps = 0;
  std::uint64_t probe_sweeps = 0;

  double passes(int steps) const noexcept {
    return static_cast<double>(generative_steps + inverse_steps + tangent_steps) / steps +
           static_cast<double>(probe_sweeps);
  }
  PassCounter& operator+=(const PassCounter& o) noexcept {
    generative_steps += o.generative_steps;
    inverse_steps += o.inverse_steps;
    tangent_steps += o.tangent_steps;
    probe_sweeps += o.probe_sweeps;
    return *this;
  }
};

/// States on the grid nodes: column i is the state at time t[i], so column 0
/// is the latent z = x_{T+1} and column T is the sample x = x_1.
struct FlowTrajectory {
  Eigen::MatrixXd states;

  int steps() const noexcept { return static_cast<int>(states.cols()) - 1; }
  Eigen::VectorXd latent() const { return states.col(0); }
  Eigen::VectorXd sample() const { return states.col(states.cols() - 1); }
  /// x_k, the output of generative step k.
  Eigen::VectorXd step_output(int k) const { return states.col(steps() - k + 1); }
  /// x_{k+1}, the input of generative step k.
  Eigen::VectorXd step_input(int k) const { return states.col(steps() - k); }
  bool all_finite() const { return states.allFinite(); }
};

/// Mixture of the time-t marginal: means alpha*mu_j, covariances alpha^2 Sigma_j + sigma^2 I.
GmmSpec diffused_marginal(const GmmSpec& gmm, double alpha, double sigma);

/// Probability-flow velocity -1/2 beta(t) (x + grad log p_t(x)), marginal built on the fly.
Eigen::VectorXd velocity(const GmmSpec& gmm, const DiffusionSchedule& sched,
                         const Eigen::VectorXd& x, double t);

/// Discretized probability-flow map f = f_1 o ... o f_T for an analytic mixture
/// score. Marginals are cached on the grid nodes; every integrator stage lands
/// on a node.
class ProbabilityFlow {
 public:
  ProbabilityFlow(GmmSpec model, DiffusionSchedule schedule, TimeGrid grid,
                  Integrator integrator = Integrator::heun);

  int dim() const noexcept { return model_.dim(); }
  int steps() const noexcept { return grid_.steps(); }
  const GmmSpec& model() const noexcept { return model_; }
  const DiffusionSchedule& schedule() const noexcept { return schedule_; }
  const TimeGrid& grid() const noexcept { return grid_; }
  Integrator integrator() const noexcept { return integrator_; }
  const GmmSpec& node_marginal(int node) const { return marginals_.at(static_cast<std::size_t>(node)); }

  Eigen::VectorXd velocity_at(const Eigen::VectorXd& x, int node) const;
  /// -1/2 beta (I + H), H the Hessian of log p_t.
  Eigen::MatrixXd velocity_jacobian_at(const Eigen::VectorXd& x, int node) const;
  /// Writes J_v(x) u into out.
  void velocity_jvp_at(const Eigen::VectorXd& x, int node, const Eigen::VectorXd& u,
                       Eigen::VectorXd& out) const;

  Eigen::VectorXd step_generative(const Eigen::VectorXd& x_next, int k,
                                  PassCounter* counter = nullptr) const;
  /// Reverse-time integration of step k with the same scheme, from g_lo(k) to g_hi(k).
  Eigen::VectorXd step_inverse(const Eigen::VectorXd& x_k, int k,
                               PassCounter* counter = nullptr) const;

  /// Exact directional derivative of a step map at x_in along tangent.
  Eigen::VectorXd step_tangent(int k, const Eigen::VectorXd& x_in, StepDirection dir,
                               const Eigen::VectorXd& tangent, PassCounter* counter = nullptr) const;
  /// Exact D x D Jacobian of a step map, from the analytic velocity Jacobian.
  Eigen::MatrixXd step_jacobian_exact(int k, const Eigen::VectorXd& x_in, StepDirection dir,
                                      PassCounter* counter = nullptr) const;

  /// Generative steps k = T..1; one pass.
  FlowTrajectory push_forward(const Eigen::VectorXd& z, PassCounter* counter = nullptr) const;
  /// Inverse steps k = 1..T; one pass. Stored in node order like push_forward.
  FlowTrajectory pull_back(const Eigen::VectorXd& x, PassCounter* counter = nullptr) const;
  /// Latent f^-1(x) and the exact tangent (d f^-1 / dx) u, propagated together in one pass.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> pull_back_tangent(
      const Eigen::VectorXd& x, const Eigen::VectorXd& u, PassCounter* counter = nullptr) const;

 private:
  void check_step(int k) const;
  void integrate(const Eigen::VectorXd& x, int from, int to, Eigen::VectorXd& out) const;
  void integrate_tangent(const Eigen::VectorXd& x, int from, int to, const Eigen::VectorXd& u,
                         Eigen::VectorXd& x_out, Eigen::VectorXd& u_out) const;
  std::pair<int, int> step_nodes(int k, StepDirection dir) const;

  GmmSpec model_;
  DiffusionSchedule schedule_;
  TimeGrid grid_;
  Integrator integrator_;
  std::vector<GmmSpec> marginals_;
  std::vector<double> betas_;
};

/// Binary dump: "FPTR" magic, int32 D, int32 T, uint64 seed, then T+1 rows of D doubles
/// in node order.
void write_trajectory(std::ostream& os, const FlowTrajectory& traj, std::uint64_t seed);
FlowTrajectory read_trajectory(std::istream& is, std::uint64_t* seed = nullptr);

}  // namespace flowpp
