#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "flowpp/estimators.hpp"
#include "flowpp/flow.hpp"
#include "flowpp/gmm.hpp"
#include "flowpp/schedule.hpp"
#include "flowpp/smc.hpp"

namespace flowpp {

/// Which mixture weights the exact-score flow is built from.
enum class FlowWeights { uniform, target };

/// benchmark: the two-component mixture. stationary: N(0, I), for which the
/// flow is the identity and every work value is zero.
enum class TargetKind { benchmark, stationary };

struct TargetSection {
  TargetKind kind = TargetKind::benchmark;
  int dim = 10;
  std::uint64_t seed = 0;
  double diag_noise_std = 0.5;
  FlowWeights flow_weights = FlowWeights::uniform;
};

struct FlowSection {
  DiffusionSchedule schedule;
  int steps = 100;
  Integrator integrator = Integrator::heun;
};

struct SmcSection {
  int particles = 1000;
  int levels = 50;
  int mcmc_steps = 3;
  int block_size = 0;
  double step_size = 0.1;
  double ess_threshold = 0.5;
  ResampleMethod resample = ResampleMethod::systematic;
};

struct RunSection {
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out = "runs/default";
};

struct BenchSection {
  std::vector<std::string> estimators{"fppp"};
  int seeds = 10;
  int reference_samples = 100000;
  int rc_bins = 60;
  double rc_min = -4.0;
  double rc_max = 4.0;
  int energy_bins = 50;
};

struct EstimateSection {
  int draws = 1000;
  int points = 1;
  std::string z_file;
};

struct ValidateSection {
  int sphere_matrices = 200;
  int sphere_draws = 100000;
  double sphere_max_cond = 1e3;
  double sphere_tail_budget = 100.0;
  int roundtrip_points = 100;
  int unbiased_dim = 5;
  int unbiased_steps = 16;
  int unbiased_draws = 100000;
  int variance_points = 10;
  int variance_draws = 10000;
  int variance_required = 9;
};

struct RunConfig {
  TargetSection target;
  FlowSection flow;
  EstimatorConfig estimator;
  SmcSection smc;
  RunSection run;
  BenchSection bench;
  EstimateSection estimate;
  ValidateSection validate;

  /// Throws ConfigError naming the offending key.
  void check() const;
};

/// Parses `key = value` lines; `[section]` headers prefix later keys with
/// "section."; `#` starts a comment. Unknown keys are errors.
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Applies one dotted assignment, e.g. ("smc.particles", "500").
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Flat, fully resolved form; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& cfg);
std::map<std::string, std::string> to_map(const RunConfig& cfg);

GmmSpec make_target(const RunConfig& cfg);
GmmSpec make_flow_model(const RunConfig& cfg, const GmmSpec& target);
ProbabilityFlow make_flow(const RunConfig& cfg, const GmmSpec& model);
SmcConfig make_smc_config(const RunConfig& cfg, const EstimatorConfig& estimator, std::uint64_t seed);

std::string to_string(Integrator integrator);
std::string to_string(ResampleMethod method);
std::string to_string(FlowWeights weights);
std::string to_string(TargetKind kind);

}  // namespace flowpp
