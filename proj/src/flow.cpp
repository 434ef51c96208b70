#include "flowpp/flow.hpp"

#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "flowpp/errors.hpp"

namespace flowpp {

namespace {

GmmSpec diffuse(const GmmSpec& gmm, double alpha, double alpha2, double sigma2) {
  std::vector<ComponentSpec> comps;
  comps.reserve(gmm.num_components());
  for (const auto& c : gmm.components()) {
    Eigen::MatrixXd cov = alpha2 * c.covariance;
    cov.diagonal().array() += sigma2;
    comps.push_back(ComponentSpec::from_covariance(alpha * c.mean, std::move(cov)));
  }
  return GmmSpec(gmm.weights(), std::move(comps));
}

void require_finite(const Eigen::VectorXd& v, const char* what, int k) {
  if (!v.allFinite()) {
    throw NumericalFailure(std::string("non-finite state in ") + what + " at step " +
                           std::to_string(k));
  }
}

}  // namespace

GmmSpec diffused_marginal(const GmmSpec& gmm, double alpha, double sigma) {
  if (!(alpha > 0.0) || alpha > 1.0) throw std::invalid_argument("alpha must lie in (0, 1]");
  if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
  return diffuse(gmm, alpha, alpha * alpha, sigma * sigma);
}

Eigen::VectorXd velocity(const GmmSpec& gmm, const DiffusionSchedule& sched,
                         const Eigen::VectorXd& x, double t) {
  if (!(t >= 0.0 && t <= sched.t_max)) throw std::invalid_argument("t outside [0, t_max]");
  const GmmSpec pt = diffuse(gmm, sched.alpha(t), sched.alpha_squared(t), sched.sigma_squared(t));
  return -0.5 * sched.beta(t) * (x + score(pt, x));
}

ProbabilityFlow::ProbabilityFlow(GmmSpec model, DiffusionSchedule schedule, TimeGrid grid,
                                 Integrator integrator)
    : model_(std::move(model)),
      schedule_(schedule),
      grid_(std::move(grid)),
      integrator_(integrator) {
  schedule_.validate();
  if (grid_.time(0) > schedule_.t_max * (1.0 + 1e-12)) {
    throw std::invalid_argument("time grid extends past t_max");
  }
  marginals_.reserve(grid_.times().size());
  for (double t : grid_.times()) {
    marginals_.push_back(
        diffuse(model_, schedule_.alpha(t), schedule_.alpha_squared(t), schedule_.sigma_squared(t)));
    betas_.push_back(schedule_.beta(t));
  }
}

Eigen::VectorXd ProbabilityFlow::velocity_at(const Eigen::VectorXd& x, int node) const {
  thread_local MixturePoint point;
  evaluate_point(marginals_[static_cast<std::size_t>(node)], x, point);
  return -0.5 * betas_[static_cast<std::size_t>(node)] * (x + point.score);
}

Eigen::MatrixXd ProbabilityFlow::velocity_jacobian_at(const Eigen::VectorXd& x, int node) const {
  Eigen::MatrixXd j = score_jacobian(marginals_[static_cast<std::size_t>(node)], x);
  j.diagonal().array() += 1.0;
  return -0.5 * betas_[static_cast<std::size_t>(node)] * j;
}

void ProbabilityFlow::velocity_jvp_at(const Eigen::VectorXd& x, int node, const Eigen::VectorXd& u,
                                      Eigen::VectorXd& out) const {
  thread_local MixturePoint point;
  const auto& pt = marginals_[static_cast<std::size_t>(node)];
  evaluate_point(pt, x, point);
  score_jacobian_apply(pt, point, u, out);
  out += u;
  out *= -0.5 * betas_[static_cast<std::size_t>(node)];
}

void ProbabilityFlow::check_step(int k) const {
  if (k < 1 || k > steps()) {
    throw std::invalid_argument("step index " + std::to_string(k) + " outside [1, " +
                                std::to_string(steps()) + "]");
  }
}

std::pair<int, int> ProbabilityFlow::step_nodes(int k, StepDirection dir) const {
  check_step(k);
  if (dir == StepDirection::generative) return {grid_.hi_node(k), grid_.lo_node(k)};
  return {grid_.lo_node(k), grid_.hi_node(k)};
}

void ProbabilityFlow::integrate(const Eigen::VectorXd& x, int from, int to,
                                Eigen::VectorXd& out) const {
  thread_local MixturePoint point;
  thread_local Eigen::VectorXd k1, predictor;
  const double h = grid_.time(to) - grid_.time(from);
  const auto f = static_cast<std::size_t>(from);
  const auto t = static_cast<std::size_t>(to);

  evaluate_point(marginals_[f], x, point);
  k1 = -0.5 * betas_[f] * (x + point.score);
  if (integrator_ == Integrator::euler) {
    out = x + h * k1;
    return;
  }
  predictor = x + h * k1;
  evaluate_point(marginals_[t], predictor, point);
  // x + h/2 (k1 + k2), k2 = -1/2 beta_to (predictor + score)
  out = x + (0.5 * h) * (k1 - 0.5 * betas_[t] * (predictor + point.score));
}

void ProbabilityFlow::integrate_tangent(const Eigen::VectorXd& x, int from, int to,
                                        const Eigen::VectorXd& u, Eigen::VectorXd& x_out,
                                        Eigen::VectorXd& u_out) const {
  thread_local MixturePoint point;
  thread_local Eigen::VectorXd k1, du1, predictor, dpred, du2;
  const double h = grid_.time(to) - grid_.time(from);
  const auto f = static_cast<std::size_t>(from);
  const auto t = static_cast<std::size_t>(to);

  evaluate_point(marginals_[f], x, point);
  k1 = -0.5 * betas_[f] * (x + point.score);
  score_jacobian_apply(marginals_[f], point, u, du1);
  du1 = -0.5 * betas_[f] * (u + du1);
  if (integrator_ == Integrator::euler) {
    x_out = x + h * k1;
    u_out = u + h * du1;
    return;
  }
  predictor = x + h * k1;
  dpred = u + h * du1;
  evaluate_point(marginals_[t], predictor, point);
  score_jacobian_apply(marginals_[t], point, dpred, du2);
  du2 = -0.5 * betas_[t] * (dpred + du2);
  x_out = x + (0.5 * h) * (k1 - 0.5 * betas_[t] * (predictor + point.score));
  u_out = u + (0.5 * h) * (du1 + du2);
}

Eigen::VectorXd ProbabilityFlow::step_generative(const Eigen::VectorXd& x_next, int k,
                                                 PassCounter* counter) const {
  const auto [from, to] = step_nodes(k, StepDirection::generative);
  require_finite(x_next, "generative step input", k);
  Eigen::VectorXd out;
  integrate(x_next, from, to, out);
  require_finite(out, "generative step", k);
  if (counter) ++counter->generative_steps;
  return out;
}

Eigen::VectorXd ProbabilityFlow::step_inverse(const Eigen::VectorXd& x_k, int k,
                                              PassCounter* counter) const {
  const auto [from, to] = step_nodes(k, StepDirection::inverse);
  require_finite(x_k, "inverse step input", k);
  Eigen::VectorXd out;
  integrate(x_k, from, to, out);
  require_finite(out, "inverse step", k);
  if (counter) ++counter->inverse_steps;
  return out;
}

Eigen::VectorXd ProbabilityFlow::step_tangent(int k, const Eigen::VectorXd& x_in, StepDirection dir,
                                              const Eigen::VectorXd& tangent,
                                              PassCounter* counter) const {
  const auto [from, to] = step_nodes(k, dir);
  Eigen::VectorXd x_out, u_out;
  integrate_tangent(x_in, from, to, tangent, x_out, u_out);
  require_finite(u_out, "step tangent", k);
  if (counter) ++counter->tangent_steps;
  return u_out;
}

Eigen::MatrixXd ProbabilityFlow::step_jacobian_exact(int k, const Eigen::VectorXd& x_in,
                                                     StepDirection dir, PassCounter* counter) const {
  const auto [from, to] = step_nodes(k, dir);
  const double h = grid_.time(to) - grid_.time(from);
  const auto d = static_cast<Eigen::Index>(dim());
  const Eigen::MatrixXd j1 = velocity_jacobian_at(x_in, from);
  Eigen::MatrixXd jac;
  if (integrator_ == Integrator::euler) {
    jac = h * j1;
  } else {
    const Eigen::VectorXd predictor = x_in + h * velocity_at(x_in, from);
    Eigen::MatrixXd dpred = h * j1;
    dpred.diagonal().array() += 1.0;
    jac = (0.5 * h) * (j1 + velocity_jacobian_at(predictor, to) * dpred);
  }
  jac.diagonal().array() += 1.0;
  if (!jac.allFinite()) {
    throw NumericalFailure("non-finite step Jacobian at step " + std::to_string(k));
  }
  if (counter) counter->tangent_steps += static_cast<std::uint64_t>(d);
  return jac;
}

FlowTrajectory ProbabilityFlow::push_forward(const Eigen::VectorXd& z, PassCounter* counter) const {
  if (z.size() != dim()) throw std::invalid_argument("latent has the wrong dimension");
  const int T = steps();
  FlowTrajectory traj;
  traj.states.resize(dim(), T + 1);
  traj.states.col(0) = z;
  require_finite(z, "push_forward input", T);
  Eigen::VectorXd cur = z, next;
  for (int k = T; k >= 1; --k) {
    integrate(cur, grid_.hi_node(k), grid_.lo_node(k), next);
    require_finite(next, "push_forward", k);
    traj.states.col(grid_.lo_node(k)) = next;
    cur.swap(next);
  }
  if (counter) counter->generative_steps += static_cast<std::uint64_t>(T);
  return traj;
}

FlowTrajectory ProbabilityFlow::pull_back(const Eigen::VectorXd& x, PassCounter* counter) const {
  if (x.size() != dim()) throw std::invalid_argument("sample has the wrong dimension");
  const int T = steps();
  FlowTrajectory traj;
  traj.states.resize(dim(), T + 1);
  traj.states.col(T) = x;
  require_finite(x, "pull_back input", 1);
  Eigen::VectorXd cur = x, next;
  for (int k = 1; k <= T; ++k) {
    integrate(cur, grid_.lo_node(k), grid_.hi_node(k), next);
    require_finite(next, "pull_back", k);
    traj.states.col(grid_.hi_node(k)) = next;
    cur.swap(next);
  }
  if (counter) counter->inverse_steps += static_cast<std::uint64_t>(T);
  return traj;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> ProbabilityFlow::pull_back_tangent(
    const Eigen::VectorXd& x, const Eigen::VectorXd& u, PassCounter* counter) const {
  if (x.size() != dim() || u.size() != dim()) {
    throw std::invalid_argument("pull_back_tangent: wrong dimension");
  }
  const int T = steps();
  Eigen::VectorXd cur = x, cur_u = u, next, next_u;
  for (int k = 1; k <= T; ++k) {
    integrate_tangent(cur, grid_.lo_node(k), grid_.hi_node(k), cur_u, next, next_u);
    require_finite(next, "pull_back_tangent", k);
    require_finite(next_u, "pull_back_tangent", k);
    cur.swap(next);
    cur_u.swap(next_u);
  }
  if (counter) counter->tangent_steps += static_cast<std::uint64_t>(T);
  return {cur, cur_u};
}

void write_trajectory(std::ostream& os, const FlowTrajectory& traj, std::uint64_t seed) {
  const std::int32_t d = static_cast<std::int32_t>(traj.states.rows());
  const std::int32_t t = static_cast<std::int32_t>(traj.steps());
  os.write("FPTR", 4);
  os.write(reinterpret_cast<const char*>(&d), sizeof d);
  os.write(reinterpret_cast<const char*>(&t), sizeof t);
  os.write(reinterpret_cast<const char*>(&seed), sizeof seed);
  // Column-major storage: each column (one node) is a contiguous row on disk.
  os.write(reinterpret_cast<const char*>(traj.states.data()),
           static_cast<std::streamsize>(sizeof(double) * traj.states.size()));
}

FlowTrajectory read_trajectory(std::istream& is, std::uint64_t* seed) {
  char magic[4];
  std::int32_t d = 0, t = 0;
  std::uint64_t s = 0;
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(&d), sizeof d);
  is.read(reinterpret_cast<char*>(&t), sizeof t);
  is.read(reinterpret_cast<char*>(&s), sizeof s);
  if (!is || std::memcmp(magic, "FPTR", 4) != 0 || d < 1 || t < 1) {
    throw std::runtime_error("not a trajectory dump");
  }
  FlowTrajectory traj;
  traj.states.resize(d, t + 1);
  is.read(reinterpret_cast<char*>(traj.states.data()),
          static_cast<std::streamsize>(sizeof(double) * traj.states.size()));
  if (!is) throw std::runtime_error("truncated trajectory dump");
  if (seed) *seed = s;
  return traj;
}

}  // namespace flowpp
