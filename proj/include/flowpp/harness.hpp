#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "flowpp/config.hpp"
#include "flowpp/metrics.hpp"

namespace flowpp {

enum ExitCode : int { exit_ok = 0, exit_failed = 1, exit_config = 2, exit_numerical = 3 };

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// --- validation suites -------------------------------------------------------

struct SphereSuiteParams {
  int matrices = 200;
  int draws = 100000;
  std::vector<int> dims{2, 3, 5, 10};
  double max_cond = 1e3;
  double tail_budget = 100.0;  // per-dimension cap: cond^(D-1) <= tail_budget
  double z_tol = 4.0;
  std::uint64_t seed = 0;
};

/// Random A = Q1 diag(s) Q2 with cond(A) <= min(max_cond, tail_budget^(1/(D-1)));
/// MC mean of ||A eps||^-D against |det A|^-1.
CheckResult sphere_identity_suite(const SphereSuiteParams& p);

/// |pull_back(push_forward(z)) - z| / |z| < tol for n random z.
CheckResult roundtrip_suite(const ProbabilityFlow& flow, int n, double tol, std::uint64_t seed);

/// Mean of exp(dS_FP++) at a fixed z against exp(-sum_k log|det J_k^-1|), in
/// standard errors.
CheckResult unbiasedness_suite(const ProbabilityFlow& flow, const EstimatorConfig& estimator, int draws,
                               double z_tol, std::uint64_t seed);

/// Var[dS_FP++] < Var[dS_FP] at 99% one-sided confidence for at least
/// `required` of `points` random z.
CheckResult variance_ordering_suite(const ProbabilityFlow& flow, const EstimatorConfig& estimator, int points,
                                    int draws, int required, std::uint64_t seed);

/// Per-evaluation pass counts for every estimator family.
CheckResult pass_count_suite(const ProbabilityFlow& flow, const GmmSpec& target, std::uint64_t seed);

struct ValidateReport {
  std::vector<CheckResult> checks;
  bool all_passed() const;
};

ValidateReport cmd_validate(const RunConfig& cfg, std::ostream& log);

// --- benchmark ---------------------------------------------------------------

/// Column order of summary.csv; stable across versions.
inline constexpr const char* kSummaryHeader =
    "estimator,seed,status,modal_weight,distinct_ancestors,ode_passes,wall_s,tv_energy";

struct BenchRun {
  std::string estimator;
  std::uint64_t seed = 0;
  std::string status;  // "ok" or the failure message
  double modal_weight = 0.0;
  int distinct_ancestors = 0;
  double ode_passes = 0.0;
  double wall_s = 0.0;
  double tv_energy = 0.0;
};

struct BenchReport {
  std::vector<BenchRun> runs;
  bool any_failed() const;
};

/// Runs SMC for every (estimator, seed) pair and writes CSV artifacts under
/// cfg.run.out. Seeds are run.seed, run.seed + 1, ...
BenchReport cmd_bench_gmm(const RunConfig& cfg, std::ostream& log);

/// One (estimator, seed) benchmark run; writes its CSVs if out_dir is non-empty.
BenchRun bench_single(const RunConfig& cfg, const GmmSpec& target, const ProbabilityFlow& flow,
                      const std::string& estimator_tag, std::uint64_t seed,
                      std::span<const double> reference_energy, const std::filesystem::path& out_dir);

// --- estimate ----------------------------------------------------------------

struct EstimateRecord {
  std::string kind;
  std::uint64_t seed = 0;
  std::size_t point = 0;
  double delta_s = 0.0;
  int ode_passes = 0;
  std::int64_t wall_ns = 0;
};

/// Reads whitespace- or comma-separated z vectors, one per line; '#' comments.
std::vector<Eigen::VectorXd> read_points(std::istream& in, int dim, const std::string& origin);

/// Estimates at each point; one JSON object per line on `out`.
void cmd_estimate(const RunConfig& cfg, std::ostream& out);

std::string to_jsonl(const EstimateRecord& r);

/// Mean and unbiased variance of delta_s per (kind, point) from JSONL records.
struct EstimateSummary {
  std::string kind;
  std::size_t point = 0;
  std::size_t n = 0;
  double mean = 0.0;
  double var = 0.0;
};
std::vector<EstimateSummary> summarize_jsonl(std::istream& in);

}  // namespace flowpp
