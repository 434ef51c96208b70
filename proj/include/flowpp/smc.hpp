#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flowpp/errors.hpp"
#include "flowpp/estimators.hpp"
#include "flowpp/flow.hpp"
#include "flowpp/gmm.hpp"

namespace flowpp {

/// beta_0 = 0 < ... < beta_N = 1, plus the per-level MCMC and resampling knobs.
struct AnnealingSchedule {
  std::vector<double> betas;
  int mcmc_steps_per_level = 10;
  double ess_threshold_fraction = 0.5;

  static AnnealingSchedule linear(int levels, int mcmc_steps, double ess_threshold_fraction);
  int levels() const noexcept { return static_cast<int>(betas.size()) - 1; }
  void validate() const;
};

/// Generalized work W = u_X(f(z)) - u_Z(z) - dS.
struct WorkRecord {
  double u_x = 0.0;
  double u_z = 0.0;
  double delta_s = 0.0;
  double w = 0.0;

  static WorkRecord assemble(double u_x, double u_z, double delta_s);
};

struct Particle {
  Eigen::VectorXd z;
  Eigen::VectorXd x;
  WorkRecord work;
  double log_weight = 0.0;
  int ancestor = 0;
  std::uint64_t draw_seed = 0;
};

struct ParticleEnsemble {
  std::vector<Particle> particles;

  std::size_t size() const noexcept { return particles.size(); }
  std::vector<double> normalized_weights() const;
};

struct LevelRecord {
  int level = 0;
  double beta = 0.0;
  double ess = 0.0;
  bool resampled = false;
  double acceptance_rate = 0.0;
  double mean_energy = 0.0;
  int distinct_ancestors = 0;
  std::size_t failed_proposals = 0;
};

struct SmcDiagnostics {
  std::vector<LevelRecord> levels;
  PassCounter passes;
  std::size_t work_evaluations = 0;
};

enum class ResampleMethod { multinomial, systematic };

/// Block random-walk Metropolis on the annealed latent density.
struct MetropolisKernel {
  int block_size = 0;  // 0: max(1, D/10)
  double step_size = 0.1;

  int effective_block(int dim) const;
};

struct SmcConfig {
  int num_particles = 1000;
  AnnealingSchedule schedule = AnnealingSchedule::linear(200, 10, 0.5);
  MetropolisKernel kernel;
  ResampleMethod resample = ResampleMethod::systematic;
  EstimatorConfig estimator;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
};

/// Thrown by run_smc when the ensemble degenerates; carries the trace so far.
class SmcAborted : public DegenerateEnsemble {
 public:
  SmcAborted(const std::string& what, int level, SmcDiagnostics diagnostics)
      : DegenerateEnsemble(what, level), diagnostics_(std::move(diagnostics)) {}
  const SmcDiagnostics& diagnostics() const noexcept { return diagnostics_; }

 private:
  SmcDiagnostics diagnostics_;
};

/// Standard-normal prior energy 1/2 |z|^2 + D/2 log 2 pi.
double prior_energy(const Eigen::VectorXd& z);

/// Pushes z through the flow and assembles W with the chosen entropy estimator.
/// x_out, if given, receives f(z).
WorkRecord generalized_work(const ProbabilityFlow& flow, const GmmSpec& target,
                            const Eigen::VectorXd& z, const EstimatorConfig& estimator,
                            std::uint64_t draw_seed, PassCounter* counter = nullptr,
                            Eigen::VectorXd* x_out = nullptr);

/// log pi_beta(z) = -u_Z(z) - beta W(z), up to a constant.
double log_target_density_annealed(double beta, const WorkRecord& work);

/// Metropolis acceptance probability min(1, pi(proposed) / pi(current)) for a
/// symmetric proposal.
double metropolis_acceptance(double log_target_current, double log_target_proposed);

/// Everything a level needs to re-evaluate work for a particle.
struct SmcSystem {
  const ProbabilityFlow& flow;
  const GmmSpec& target;
  EstimatorConfig estimator;
};

struct PropagateResult {
  double acceptance_rate = 0.0;
  std::size_t failed_proposals = 0;
  PassCounter passes;
  std::size_t work_evaluations = 0;
};

/// mcmc_steps block-Metropolis updates per particle targeting pi_beta, with the
/// particle's perturbation seed held fixed. Each particle has its own stream
/// keyed on (seed, level, index), so results do not depend on workers.
PropagateResult mcmc_propagate(ParticleEnsemble& ensemble, double beta, const SmcSystem& system,
                               const MetropolisKernel& kernel, int mcmc_steps, std::uint64_t seed,
                               int level, int workers = 1);

/// log_weight += -(beta_next - beta_prev) W, then renormalize in log space.
void weight_update(ParticleEnsemble& ensemble, double beta_prev, double beta_next, int level = 0);

double ess(std::span<const double> weights);

std::vector<std::size_t> resample_indices(std::span<const double> weights, ResampleMethod method,
                                          Rng& rng);

/// Offspring copy their parent (ancestor id included); weights reset to uniform.
void resample(ParticleEnsemble& ensemble, ResampleMethod method, Rng& rng);

int distinct_ancestors(const ParticleEnsemble& ensemble);

struct SmcResult {
  ParticleEnsemble ensemble;
  SmcDiagnostics diagnostics;
};

/// Annealed SMC from the prior (beta = 0) to the reweighted target (beta = 1).
/// Level n: MCMC invariant for pi_{n-1}, weight update by (beta_n - beta_{n-1}) W,
/// resample if ESS < threshold * M (perturbation seeds redrawn after resampling).
SmcResult run_smc(const ProbabilityFlow& flow, const GmmSpec& target, const SmcConfig& cfg);

}  // namespace flowpp
