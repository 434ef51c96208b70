#include "flowpp/smc.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flowpp {

namespace {

// Stream tags keep level-local streams apart.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kSeedStream = 1;
constexpr std::uint64_t kResampleStream = 2;
constexpr std::uint64_t kMcmcStream = 3;

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 4) num_threads(std::max(1, workers))
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  (void)workers;
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double logsumexp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double weighted_mean_energy(const ParticleEnsemble& ensemble) {
  const auto w = ensemble.normalized_weights();
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * ensemble.particles[i].work.u_x;
  return acc;
}

}  // namespace

AnnealingSchedule AnnealingSchedule::linear(int levels, int mcmc_steps, double ess_threshold_fraction) {
  if (levels < 1) throw std::invalid_argument("annealing needs at least one level");
  AnnealingSchedule s;
  s.betas.resize(static_cast<std::size_t>(levels) + 1);
  for (int n = 0; n <= levels; ++n) {
    s.betas[static_cast<std::size_t>(n)] = static_cast<double>(n) / levels;
  }
  s.mcmc_steps_per_level = mcmc_steps;
  s.ess_threshold_fraction = ess_threshold_fraction;
  return s;
}

void AnnealingSchedule::validate() const {
  if (betas.size() < 2 || betas.front() != 0.0 || betas.back() != 1.0) {
    throw std::invalid_argument("annealing schedule must run from beta = 0 to beta = 1");
  }
  for (std::size_t i = 1; i < betas.size(); ++i) {
    if (!(betas[i] > betas[i - 1])) {
      throw std::invalid_argument("annealing schedule must be strictly ascending");
    }
  }
  if (mcmc_steps_per_level < 0) throw std::invalid_argument("mcmc steps must be >= 0");
  if (!(ess_threshold_fraction > 0.0 && ess_threshold_fraction <= 1.0)) {
    throw std::invalid_argument("ESS threshold fraction must lie in (0, 1]");
  }
}

WorkRecord WorkRecord::assemble(double u_x, double u_z, double delta_s) {
  WorkRecord r{u_x, u_z, delta_s, u_x - u_z - delta_s};
  if (!std::isfinite(r.w)) throw NumericalFailure("non-finite generalized work");
  return r;
}

std::vector<double> ParticleEnsemble::normalized_weights() const {
  std::vector<double> lw(particles.size());
  for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = particles[i].log_weight;
  const double norm = logsumexp(lw);
  for (auto& v : lw) v = std::exp(v - norm);
  return lw;
}

int MetropolisKernel::effective_block(int dim) const {
  if (block_size > 0) return std::min(block_size, dim);
  return std::max(1, dim / 10);
}

void SmcConfig::validate() const {
  if (num_particles < 1) throw std::invalid_argument("need at least one particle");
  schedule.validate();
  estimator.validate();
  if (!(kernel.step_size > 0.0)) throw std::invalid_argument("MCMC step size must be positive");
  if (kernel.block_size < 0) throw std::invalid_argument("MCMC block size must be >= 0");
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
}

double prior_energy(const Eigen::VectorXd& z) {
  return 0.5 * z.squaredNorm() +
         0.5 * static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi);
}

WorkRecord generalized_work(const ProbabilityFlow& flow, const GmmSpec& target,
                            const Eigen::VectorXd& z, const EstimatorConfig& estimator,
                            std::uint64_t draw_seed, PassCounter* counter, Eigen::VectorXd* x_out) {
  if (z.size() != flow.dim() || target.dim() != flow.dim()) {
    throw std::invalid_argument("generalized_work: dimension mismatch");
  }
  const FlowTrajectory traj = flow.push_forward(z, counter);
  const Eigen::VectorXd x = traj.sample();
  const double delta_s = estimate_entropy(flow, traj, estimator, draw_seed, counter).delta_s;
  if (x_out) *x_out = x;
  return WorkRecord::assemble(energy(target, x), prior_energy(z), delta_s);
}

double log_target_density_annealed(double beta, const WorkRecord& work) {
  return -work.u_z - beta * work.w;
}

double metropolis_acceptance(double log_target_current, double log_target_proposed) {
  const double diff = log_target_proposed - log_target_current;
  return diff >= 0.0 ? 1.0 : std::exp(diff);
}

PropagateResult mcmc_propagate(ParticleEnsemble& ensemble, double beta, const SmcSystem& system,
                               const MetropolisKernel& kernel, int mcmc_steps, std::uint64_t seed,
                               int level, int workers) {
  const std::size_t m = ensemble.size();
  PropagateResult out;
  if (m == 0 || mcmc_steps == 0) {
    out.acceptance_rate = 1.0;
    return out;
  }
  const int d = system.flow.dim();
  const int block = kernel.effective_block(d);
  std::vector<std::size_t> accepted(m, 0), failed(m, 0), evals(m, 0);
  std::vector<PassCounter> counters(m);

  parallel_for(m, workers, [&](std::size_t i) {
    Particle& p = ensemble.particles[i];
    Rng rng(derive_seed(seed, {kMcmcStream, static_cast<std::uint64_t>(level), i}));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<int> coords(static_cast<std::size_t>(d));
    std::iota(coords.begin(), coords.end(), 0);
    // At beta = 0 the target is the prior; work is refreshed once at the end.
    const bool prior_only = beta == 0.0;
    bool stale = false;
    double current = log_target_density_annealed(beta, p.work);
    Eigen::VectorXd proposal, x_new;
    for (int s = 0; s < mcmc_steps; ++s) {
      for (int b = 0; b < block; ++b) {
        std::uniform_int_distribution<int> pick(b, d - 1);
        std::swap(coords[static_cast<std::size_t>(b)], coords[static_cast<std::size_t>(pick(rng))]);
      }
      proposal = p.z;
      for (int b = 0; b < block; ++b) {
        proposal[coords[static_cast<std::size_t>(b)]] += kernel.step_size * normal(rng);
      }
      const double u = unif(rng);
      if (prior_only) {
        const double cand = -prior_energy(proposal);
        if (u < metropolis_acceptance(current, cand)) {
          p.z = proposal;
          current = cand;
          stale = true;
          ++accepted[i];
        }
        continue;
      }
      WorkRecord w;
      try {
        w = generalized_work(system.flow, system.target, proposal, system.estimator, p.draw_seed,
                             &counters[i], &x_new);
        ++evals[i];
      } catch (const NumericalFailure&) {
        ++evals[i];
        ++failed[i];
        continue;
      }
      const double cand = log_target_density_annealed(beta, w);
      if (u < metropolis_acceptance(current, cand)) {
        p.z = proposal;
        p.x = x_new;
        p.work = w;
        current = cand;
        ++accepted[i];
      }
    }
    if (stale) {
      p.work = generalized_work(system.flow, system.target, p.z, system.estimator, p.draw_seed,
                                &counters[i], &p.x);
      ++evals[i];
    }
  });

  std::size_t total_accepted = 0;
  for (std::size_t i = 0; i < m; ++i) {
    total_accepted += accepted[i];
    out.failed_proposals += failed[i];
    out.work_evaluations += evals[i];
    out.passes += counters[i];
  }
  out.acceptance_rate =
      static_cast<double>(total_accepted) / (static_cast<double>(m) * mcmc_steps);
  return out;
}

void weight_update(ParticleEnsemble& ensemble, double beta_prev, double beta_next, int level) {
  if (beta_next < beta_prev) throw std::invalid_argument("weight_update: beta must not decrease");
  const double dbeta = beta_next - beta_prev;
  std::vector<double> lw(ensemble.size());
  for (std::size_t i = 0; i < lw.size(); ++i) {
    auto& p = ensemble.particles[i];
    if (dbeta != 0.0) p.log_weight -= dbeta * p.work.w;
    lw[i] = p.log_weight;
  }
  const double norm = logsumexp(lw);
  if (!std::isfinite(norm)) {
    throw DegenerateEnsemble("all particle weights vanished at level " + std::to_string(level),
                             level);
  }
  for (auto& p : ensemble.particles) p.log_weight -= norm;
}

double ess(std::span<const double> weights) {
  double s = 0.0;
  for (double w : weights) s += w * w;
  return 1.0 / s;
}

std::vector<std::size_t> resample_indices(std::span<const double> weights, ResampleMethod method,
                                          Rng& rng) {
  const std::size_t m = weights.size();
  std::vector<double> cdf(m);
  std::partial_sum(weights.begin(), weights.end(), cdf.begin());
  const double total = cdf.back();
  for (auto& c : cdf) c /= total;
  cdf.back() = 1.0;

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> positions(m);
  if (method == ResampleMethod::systematic) {
    const double u0 = unif(rng);
    for (std::size_t i = 0; i < m; ++i) positions[i] = (static_cast<double>(i) + u0) / m;
  } else {
    for (auto& u : positions) u = unif(rng);
    std::sort(positions.begin(), positions.end());
  }
  std::vector<std::size_t> idx(m);
  std::size_t j = 0;
  for (std::size_t i = 0; i < m; ++i) {
    while (j + 1 < m && cdf[j] <= positions[i]) ++j;
    idx[i] = j;
  }
  return idx;
}

void resample(ParticleEnsemble& ensemble, ResampleMethod method, Rng& rng) {
  const auto w = ensemble.normalized_weights();
  const auto idx = resample_indices(w, method, rng);
  std::vector<Particle> next;
  next.reserve(idx.size());
  const double lw = -std::log(static_cast<double>(idx.size()));
  for (auto j : idx) {
    next.push_back(ensemble.particles[j]);
    next.back().log_weight = lw;
  }
  ensemble.particles = std::move(next);
}

int distinct_ancestors(const ParticleEnsemble& ensemble) {
  std::unordered_set<int> ids;
  for (const auto& p : ensemble.particles) ids.insert(p.ancestor);
  return static_cast<int>(ids.size());
}

SmcResult run_smc(const ProbabilityFlow& flow, const GmmSpec& target, const SmcConfig& cfg) {
  cfg.validate();
  const std::size_t m = static_cast<std::size_t>(cfg.num_particles);
  const int d = flow.dim();
  const SmcSystem system{flow, target, cfg.estimator};
  SmcResult result;
  auto& ens = result.ensemble;
  auto& diag = result.diagnostics;

  // Evaluate (or re-evaluate) work for every particle with its current seed.
  auto refresh_work = [&](std::vector<PassCounter>& counters) {
    parallel_for(m, cfg.workers, [&](std::size_t i) {
      auto& p = ens.particles[i];
      try {
        p.work = generalized_work(flow, target, p.z, cfg.estimator, p.draw_seed, &counters[i], &p.x);
      } catch (const NumericalFailure& e) {
        throw NumericalFailure("particle " + std::to_string(i) + ": " + e.what());
      }
    });
    for (auto& c : counters) diag.passes += c;
    diag.work_evaluations += m;
  };

  ens.particles.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    Rng rng(derive_seed(cfg.seed, {kInitStream, i}));
    auto& p = ens.particles[i];
    p.z = standard_normal_vector(d, rng);
    p.ancestor = static_cast<int>(i);
    p.log_weight = -std::log(static_cast<double>(m));
    p.draw_seed = derive_seed(cfg.seed, {kSeedStream, 0, i});
  }
  {
    std::vector<PassCounter> counters(m);
    refresh_work(counters);
  }

  const auto& betas = cfg.schedule.betas;
  const double threshold = cfg.schedule.ess_threshold_fraction * static_cast<double>(m);
  for (int n = 1; n <= cfg.schedule.levels(); ++n) {
    LevelRecord rec;
    rec.level = n;
    rec.beta = betas[static_cast<std::size_t>(n)];

    const auto prop = mcmc_propagate(ens, betas[static_cast<std::size_t>(n - 1)], system, cfg.kernel,
                                     cfg.schedule.mcmc_steps_per_level, cfg.seed, n, cfg.workers);
    rec.acceptance_rate = prop.acceptance_rate;
    rec.failed_proposals = prop.failed_proposals;
    diag.passes += prop.passes;
    diag.work_evaluations += prop.work_evaluations;

    try {
      weight_update(ens, betas[static_cast<std::size_t>(n - 1)], rec.beta, n);
    } catch (const DegenerateEnsemble& e) {
      throw SmcAborted(e.what(), n, diag);
    }
    const auto w = ens.normalized_weights();
    rec.ess = ess(w);
    rec.mean_energy = weighted_mean_energy(ens);

    if (rec.ess < threshold) {
      Rng rng(derive_seed(cfg.seed, {kResampleStream, static_cast<std::uint64_t>(n)}));
      resample(ens, cfg.resample, rng);
      rec.resampled = true;
      // after the last level the work values are final, so seeds stay with them
      if (n < cfg.schedule.levels()) {
        for (std::size_t i = 0; i < m; ++i) {
          ens.particles[i].draw_seed =
              derive_seed(cfg.seed, {kSeedStream, static_cast<std::uint64_t>(n), i});
        }
        std::vector<PassCounter> counters(m);
        refresh_work(counters);
      }
    }
    rec.distinct_ancestors = distinct_ancestors(ens);
    diag.levels.push_back(rec);
  }
  return result;
}

}  // namespace flowpp
