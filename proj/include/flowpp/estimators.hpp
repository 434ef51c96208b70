#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flowpp/flow.hpp"
#include "flowpp/random.hpp"

namespace flowpp {

enum class EstimatorKind { fp, fppp, hutchinson, brute_force };
enum class ProbeDistribution { gaussian, rademacher };
/// How J^-1 eps is formed for FP / FP++: central differences of the inverse
/// map, or exact forward-mode tangents.
enum class DerivativeMode { finite_difference, exact_tangent };

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::fppp;
  DerivativeMode mode = DerivativeMode::finite_difference;
  double delta = 1e-4;
  int n_probes = 1;
  ProbeDistribution probes = ProbeDistribution::gaussian;
  /// FP++ only: reuse a single epsilon at every step instead of drawing T.
  bool shared_epsilon = false;
  /// Hutchinson only: draw the probes once and hold them along the whole
  /// trajectory instead of redrawing at every quadrature node.
  bool hold_probes = false;

  void validate() const;
  /// "FP", "FPpp", "HutchGaussian(n)", "HutchRademacher(n)" or "BruteForce".
  std::string label() const;
  /// ODE passes on top of trajectory generation.
  int extra_passes(int dim) const;
};

/// Accepts the short tags fp, fppp, bf, g<n>, r<n> and the long labels above,
/// with an optional "-exact" (fp, fppp) or "-held" (Hutchinson) suffix.
EstimatorConfig parse_estimator(const std::string& tag);

/// Unit-sphere perturbations for one estimate, regenerated from (seed, dim, count).
struct PerturbationDraw {
  std::uint64_t seed = 0;
  std::vector<Eigen::VectorXd> epsilons;

  static PerturbationDraw generate(std::uint64_t seed, int dim, int count);
};

struct EntropyEstimate {
  double delta_s = 0.0;
  EstimatorConfig estimator;
  int ode_passes = 0;
  std::optional<std::uint64_t> draw_seed;
};

Eigen::VectorXd sample_unit_sphere(int dim, Rng& rng);

/// ||A^-1 eps||^-D for a single step; its mean over eps is |det A|.
double single_step_fp_factor(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& inverse_action,
                             const Eigen::VectorXd& epsilon, int dim);

/// Single-step Flow Perturbation: one epsilon pulled back through the whole inverse flow.
EntropyEstimate fp_entropy(const ProbabilityFlow& flow, const Eigen::VectorXd& x,
                           const EstimatorConfig& cfg, std::uint64_t seed,
                           PassCounter* counter = nullptr);

/// Multi-step estimator: an independent epsilon per step, log-factors summed.
/// step_terms, if given, receives -D log ||J_k^-1 eps_k|| for k = 1..T.
EntropyEstimate fppp_entropy(const ProbabilityFlow& flow, const FlowTrajectory& traj,
                             const EstimatorConfig& cfg, std::uint64_t seed,
                             PassCounter* counter = nullptr,
                             std::vector<double>* step_terms = nullptr);

/// Trapezoidal (Heun) or left-point (Euler) quadrature of Hutchinson divergence
/// estimates on the trajectory nodes. Probes are redrawn at every node unless
/// hold_probes is set.
EntropyEstimate hutchinson_entropy(const ProbabilityFlow& flow, const FlowTrajectory& traj,
                                   const EstimatorConfig& cfg, std::uint64_t seed,
                                   PassCounter* counter = nullptr);

/// Exact log|det| of the discrete generative map from composed step Jacobians.
EntropyEstimate bruteforce_entropy(const ProbabilityFlow& flow, const FlowTrajectory& traj,
                                   PassCounter* counter = nullptr);

EntropyEstimate estimate_entropy(const ProbabilityFlow& flow, const FlowTrajectory& traj,
                                 const EstimatorConfig& cfg, std::uint64_t seed,
                                 PassCounter* counter = nullptr);

/// sum_k log|det d f_k^-1 / d x_k| along the trajectory. exp(-this) is the
/// quantity FP++ is unbiased for.
double exact_inverse_step_log_det(const ProbabilityFlow& flow, const FlowTrajectory& traj);

/// The Hutchinson quadrature with exact traces instead of probes.
double trace_quadrature(const ProbabilityFlow& flow, const FlowTrajectory& traj);

/// log|det M| via partial-pivot LU; throws SingularJacobian on a zero pivot.
double log_abs_det(const Eigen::MatrixXd& m);

struct EstimatorStats {
  std::size_t n = 0;
  double mean_delta_s = 0.0;
  double var_delta_s = 0.0;
  double var_se = 0.0;        // standard error of var_delta_s
  double log_mean_exp = 0.0;  // log of the sample mean of exp(delta_s)
  double rel_se_exp = 0.0;    // standard error of mean exp(delta_s), relative to the mean
};

/// Moments of a sample of delta_s values; exp-averages via log-sum-exp.
EstimatorStats summarize_delta_s(std::span<const double> delta_s);

/// Repeated estimates at fixed z with draw seeds derive_seed(base_seed, {i}).
EstimatorStats estimator_stats(const ProbabilityFlow& flow, const Eigen::VectorXd& z,
                               const EstimatorConfig& cfg, std::size_t n_draws,
                               std::uint64_t base_seed, std::vector<double>* samples = nullptr);

}  // namespace flowpp
