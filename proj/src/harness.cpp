#include "flowpp/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "flowpp/errors.hpp"

namespace flowpp {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

Eigen::MatrixXd random_orthogonal(int d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ();
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  os << std::setprecision(17);
  return os;
}

std::string file_tag(const std::string& s) {
  std::string out;
  for (char c : s) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

constexpr std::uint64_t kReferenceStream = 0x5eed0001;

}  // namespace

// --- validation suites -------------------------------------------------------

CheckResult sphere_identity_suite(const SphereSuiteParams& p) {
  const auto t0 = Clock::now();
  CheckResult r{"sphere-identity", true, "", 0.0};
  int failures = 0;
  double worst = 0.0;
  std::string first_failure;
  for (int m = 0; m < p.matrices; ++m) {
    const int d = p.dims[static_cast<std::size_t>(m) % p.dims.size()];
    Rng rng(derive_seed(p.seed, {static_cast<std::uint64_t>(m)}));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    // ||A eps||^-D has relative variance ~ cond^(D-1); capping that at tail_budget
    // keeps the sample mean close enough to normal for a z-test at 1e5 draws.
    const double cap = std::min(p.max_cond, std::pow(p.tail_budget, 1.0 / (d - 1)));
    const double cond = std::exp(unif(rng) * std::log(cap));
    Eigen::VectorXd s(d);
    for (int i = 0; i < d; ++i) s[i] = std::exp(-unif(rng) * std::log(cond));
    s[0] = 1.0;
    s[d - 1] = 1.0 / cond;
    const Eigen::MatrixXd a = random_orthogonal(d, rng) * s.asDiagonal() * random_orthogonal(d, rng);
    const double det = s.prod();
    // mean of det * ||A eps||^-D should be 1
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < p.draws; ++i) {
      const Eigen::VectorXd eps = sample_unit_sphere(d, rng);
      const double v = det * std::pow((a * eps).norm(), -d);
      sum += v;
      sum2 += v * v;
    }
    const double n = p.draws;
    const double mean = sum / n;
    const double var = std::max(0.0, (sum2 / n - mean * mean) * n / (n - 1.0));
    const double se = std::sqrt(var / n);
    const double z = se > 0.0 ? (mean - 1.0) / se : (mean == 1.0 ? 0.0 : INFINITY);
    worst = std::max(worst, std::abs(z));
    if (!(std::abs(z) <= p.z_tol)) {
      ++failures;
      if (first_failure.empty()) {
        first_failure = "; first failure: matrix " + std::to_string(m) + " D=" + std::to_string(d) +
                        " cond=" + fmt(cond) + " mean*det=" + fmt(mean) + " z=" + fmt(z);
      }
    }
  }
  r.passed = failures == 0;
  r.detail = std::to_string(p.matrices - failures) + "/" + std::to_string(p.matrices) +
             " matrices within " + fmt(p.z_tol) + " SE, worst |z| = " + fmt(worst, 4) + first_failure;
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult roundtrip_suite(const ProbabilityFlow& flow, int n, double tol, std::uint64_t seed) {
  const auto t0 = Clock::now();
  CheckResult r{"round-trip", true, "", 0.0};
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    const Eigen::VectorXd z = standard_normal_vector(flow.dim(), rng);
    const Eigen::VectorXd back = flow.pull_back(flow.push_forward(z).sample()).latent();
    worst = std::max(worst, (back - z).norm() / z.norm());
  }
  r.passed = worst < tol;
  r.detail = "max relative error " + fmt(worst, 4) + " over " + std::to_string(n) + " points (tol " +
             fmt(tol) + ")";
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult unbiasedness_suite(const ProbabilityFlow& flow, const EstimatorConfig& estimator, int draws,
                               double z_tol, std::uint64_t seed) {
  const auto t0 = Clock::now();
  CheckResult r{"fppp-unbiased", false, "", 0.0};
  EstimatorConfig cfg = estimator;
  cfg.kind = EstimatorKind::fppp;
  Rng rng(derive_seed(seed, {0}));
  const Eigen::VectorXd z = standard_normal_vector(flow.dim(), rng);
  const FlowTrajectory traj = flow.push_forward(z);
  const double exact = exact_inverse_step_log_det(flow, traj);
  std::vector<double> values(static_cast<std::size_t>(draws));
  try {
    for (int i = 0; i < draws; ++i) {
      values[static_cast<std::size_t>(i)] =
          fppp_entropy(flow, traj, cfg, derive_seed(seed, {1, static_cast<std::uint64_t>(i)})).delta_s;
    }
  } catch (const NumericalFailure& e) {
    r.detail = std::string("estimator failed: ") + e.what();
    r.seconds = seconds_since(t0);
    return r;
  }
  const auto st = summarize_delta_s(values);
  // E exp(dS) = prod_k |det J_k^-1|^-1
  const double ratio = std::exp(st.log_mean_exp + exact);
  const double zscore = (ratio - 1.0) / st.rel_se_exp;
  r.passed = std::abs(zscore) <= z_tol;
  r.detail = "mean exp(dS) / exact = " + fmt(ratio, 8) + ", relative SE " + fmt(st.rel_se_exp, 3) +
             ", z = " + fmt(zscore, 4) + " (tol " + fmt(z_tol) + ", delta " + fmt(cfg.delta) + ")";
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult variance_ordering_suite(const ProbabilityFlow& flow, const EstimatorConfig& estimator, int points,
                                    int draws, int required, std::uint64_t seed) {
  const auto t0 = Clock::now();
  CheckResult r{"variance-ordering", false, "", 0.0};
  EstimatorConfig fp = estimator, fppp = estimator;
  fp.kind = EstimatorKind::fp;
  fppp.kind = EstimatorKind::fppp;
  constexpr double z99 = 2.3263478740408408;  // one-sided 99% normal quantile
  int wins = 0;
  std::string per_point;
  for (int i = 0; i < points; ++i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    const Eigen::VectorXd z = standard_normal_vector(flow.dim(), rng);
    const auto s_fp = estimator_stats(flow, z, fp, static_cast<std::size_t>(draws), derive_seed(seed, {1, 0ULL + i}));
    const auto s_pp =
        estimator_stats(flow, z, fppp, static_cast<std::size_t>(draws), derive_seed(seed, {2, 0ULL + i}));
    const double zs = (s_fp.var_delta_s - s_pp.var_delta_s) / std::hypot(s_fp.var_se, s_pp.var_se);
    if (zs > z99) ++wins;
    per_point += (i ? ", " : "") + fmt(s_pp.var_delta_s, 3) + "<" + fmt(s_fp.var_delta_s, 3);
  }
  r.passed = wins >= required;
  r.detail = std::to_string(wins) + "/" + std::to_string(points) + " points with Var[FP++] < Var[FP] at 99% (need " +
             std::to_string(required) + "); variances " + per_point;
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult pass_count_suite(const ProbabilityFlow& flow, const GmmSpec& target, std::uint64_t seed) {
  const auto t0 = Clock::now();
  CheckResult r{"pass-count", true, "", 0.0};
  Rng rng(derive_seed(seed, {0}));
  const Eigen::VectorXd z = standard_normal_vector(flow.dim(), rng);
  const int d = flow.dim();
  for (const char* tag : {"fp", "fppp", "fp-exact", "fppp-exact", "g1", "g2", "r10", "bf"}) {
    const auto cfg = parse_estimator(tag);
    PassCounter c;
    generalized_work(flow, target, z, cfg, derive_seed(seed, {1}), &c);
    const double got = c.passes(flow.steps());
    const double want = 1.0 + cfg.extra_passes(d);
    if (got != want) r.passed = false;
    r.detail += std::string(r.detail.empty() ? "" : ", ") + cfg.label() + "=" + fmt(got) +
                (got == want ? "" : " (want " + fmt(want) + ")");
  }
  r.seconds = seconds_since(t0);
  return r;
}

bool ValidateReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

ValidateReport cmd_validate(const RunConfig& cfg, std::ostream& log) {
  ValidateReport rep;
  auto emit = [&](CheckResult c) {
    log << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << " [" << fmt(c.seconds, 3) << " s]\n";
    log.flush();
    rep.checks.push_back(std::move(c));
  };
  const std::uint64_t seed = cfg.run.seed;

  SphereSuiteParams sp;
  sp.matrices = cfg.validate.sphere_matrices;
  sp.draws = cfg.validate.sphere_draws;
  sp.max_cond = cfg.validate.sphere_max_cond;
  sp.tail_budget = cfg.validate.sphere_tail_budget;
  sp.seed = derive_seed(seed, {1});
  emit(sphere_identity_suite(sp));

  const GmmSpec target = make_target(cfg);
  const ProbabilityFlow flow = make_flow(cfg, make_flow_model(cfg, target));
  emit(roundtrip_suite(flow, cfg.validate.roundtrip_points, 1e-3, derive_seed(seed, {2})));

  RunConfig small = cfg;
  small.target.dim = cfg.validate.unbiased_dim;
  small.flow.steps = cfg.validate.unbiased_steps;
  const GmmSpec small_target = make_target(small);
  const ProbabilityFlow small_flow = make_flow(small, make_flow_model(small, small_target));
  emit(unbiasedness_suite(small_flow, cfg.estimator, cfg.validate.unbiased_draws, 3.0, derive_seed(seed, {3})));

  emit(variance_ordering_suite(flow, cfg.estimator, cfg.validate.variance_points, cfg.validate.variance_draws,
                               cfg.validate.variance_required, derive_seed(seed, {4})));
  emit(pass_count_suite(flow, target, derive_seed(seed, {5})));
  return rep;
}

// --- benchmark ---------------------------------------------------------------

bool BenchReport::any_failed() const {
  return std::any_of(runs.begin(), runs.end(), [](const BenchRun& r) { return r.status != "ok"; });
}

BenchRun bench_single(const RunConfig& cfg, const GmmSpec& target, const ProbabilityFlow& flow,
                      const std::string& estimator_tag, std::uint64_t seed,
                      std::span<const double> reference_energy, const std::filesystem::path& out_dir) {
  EstimatorConfig est = parse_estimator(estimator_tag);
  est.delta = cfg.estimator.delta;
  est.hold_probes = est.hold_probes || (est.kind == EstimatorKind::hutchinson && cfg.estimator.hold_probes);
  BenchRun run;
  run.estimator = est.label();
  run.seed = seed;
  const auto t0 = Clock::now();
  SmcResult res;
  try {
    res = run_smc(flow, target, make_smc_config(cfg, est, seed));
  } catch (const SmcAborted& e) {
    run.status = std::string("degenerate: ") + e.what();
    run.wall_s = seconds_since(t0);
    run.ode_passes = e.diagnostics().passes.passes(flow.steps());
    return run;
  } catch (const NumericalFailure& e) {
    run.status = std::string("numerical: ") + e.what();
    run.wall_s = seconds_since(t0);
    return run;
  }
  run.wall_s = seconds_since(t0);
  run.status = "ok";
  run.modal_weight = modal_weights(target, res.ensemble)[0];
  run.distinct_ancestors = distinct_ancestors(res.ensemble);
  run.ode_passes = res.diagnostics.passes.passes(flow.steps());

  const auto w = res.ensemble.normalized_weights();
  std::vector<double> energies, rc;
  for (const auto& p : res.ensemble.particles) {
    energies.push_back(energy(target, p.x));
    rc.push_back(p.x[0]);
  }
  const auto cmp = compare_energies(energies, w, reference_energy, cfg.bench.energy_bins);
  run.tv_energy = cmp.tv;

  if (out_dir.empty()) return run;
  const std::string stem = file_tag(estimator_tag) + "_seed" + std::to_string(seed);
  {
    auto os = open_out(out_dir / (stem + "_levels.csv"));
    os << "level,beta,ess,resampled,acceptance_rate,mean_energy,distinct_ancestors\n";
    for (const auto& l : res.diagnostics.levels) {
      os << l.level << ',' << l.beta << ',' << l.ess << ',' << (l.resampled ? 1 : 0) << ',' << l.acceptance_rate
         << ',' << l.mean_energy << ',' << l.distinct_ancestors << '\n';
    }
  }
  {
    auto os = open_out(out_dir / (stem + "_ensemble.csv"));
    const int d = flow.dim();
    for (int i = 0; i < d; ++i) os << "z" << i << ',';
    for (int i = 0; i < d; ++i) os << "x" << i << ',';
    os << "log_weight,ancestor\n";
    for (const auto& p : res.ensemble.particles) {
      for (int i = 0; i < d; ++i) os << p.z[i] << ',';
      for (int i = 0; i < d; ++i) os << p.x[i] << ',';
      os << p.log_weight << ',' << p.ancestor << '\n';
    }
  }
  {
    auto os = open_out(out_dir / (stem + "_energy_hist.csv"));
    os << "bin_lo,bin_hi,sampled,reference\n";
    for (std::size_t b = 0; b < cmp.sampled.mass.size(); ++b) {
      os << cmp.sampled.edges[b] << ',' << cmp.sampled.edges[b + 1] << ',' << cmp.sampled.mass[b] << ','
         << cmp.reference.mass[b] << '\n';
    }
  }
  {
    const auto h = weighted_histogram(rc, w, cfg.bench.rc_min, cfg.bench.rc_max, cfg.bench.rc_bins);
    auto os = open_out(out_dir / (stem + "_rc_hist.csv"));
    os << "bin_lo,bin_hi,mass\n";
    for (std::size_t b = 0; b < h.mass.size(); ++b) {
      os << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.mass[b] << '\n';
    }
  }
  return run;
}

BenchReport cmd_bench_gmm(const RunConfig& cfg, std::ostream& log) {
  const std::filesystem::path out = cfg.run.out;
  std::filesystem::create_directories(out);
  {
    std::ofstream os(out / "config.txt");
    os << to_text(cfg);
  }
  const GmmSpec target = make_target(cfg);
  const ProbabilityFlow flow = make_flow(cfg, make_flow_model(cfg, target));

  Rng ref_rng(derive_seed(cfg.run.seed, {kReferenceStream}));
  std::vector<double> ref_energy, ref_rc;
  for (int i = 0; i < cfg.bench.reference_samples; ++i) {
    const Eigen::VectorXd x = sample_direct(target, ref_rng);
    ref_energy.push_back(energy(target, x));
    ref_rc.push_back(x[0]);
  }
  {
    const auto h = weighted_histogram(ref_rc, {}, cfg.bench.rc_min, cfg.bench.rc_max, cfg.bench.rc_bins);
    auto os = open_out(out / "reference_rc_hist.csv");
    os << "bin_lo,bin_hi,mass\n";
    for (std::size_t b = 0; b < h.mass.size(); ++b) os << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.mass[b] << '\n';
  }

  BenchReport rep;
  auto summary = open_out(out / "summary.csv");
  summary << kSummaryHeader << '\n';
  for (const auto& tag : cfg.bench.estimators) {
    for (int s = 0; s < cfg.bench.seeds; ++s) {
      const std::uint64_t seed = cfg.run.seed + static_cast<std::uint64_t>(s);
      BenchRun run = bench_single(cfg, target, flow, tag, seed, ref_energy, out);
      summary << run.estimator << ',' << run.seed << ',' << (run.status == "ok" ? "ok" : "failed") << ','
              << run.modal_weight << ',' << run.distinct_ancestors << ',' << run.ode_passes << ',' << run.wall_s << ','
              << run.tv_energy << '\n';
      summary.flush();
      log << run.estimator << " seed " << run.seed << ": " << run.status << ", modal weight " << fmt(run.modal_weight, 4)
          << ", ancestors " << run.distinct_ancestors << ", TV " << fmt(run.tv_energy, 3) << ", " << fmt(run.wall_s, 3)
          << " s\n";
      log.flush();
      rep.runs.push_back(std::move(run));
    }
  }

  nlohmann::json manifest;
  manifest["tool"] = "flowpp";
  manifest["version"] = "0.1.0";
  manifest["command"] = "bench-gmm";
  manifest["master_seed"] = cfg.run.seed;
  manifest["target_seed"] = cfg.target.seed;
  manifest["workers"] = cfg.run.workers;
  manifest["config"] = to_map(cfg);
  manifest["summary_columns"] = kSummaryHeader;
  for (const auto& r : rep.runs) {
    manifest["runs"].push_back({{"estimator", r.estimator}, {"seed", r.seed}, {"status", r.status}});
  }
  std::ofstream(out / "manifest.json") << manifest.dump(2) << '\n';
  return rep;
}

// --- estimate ----------------------------------------------------------------

std::vector<Eigen::VectorXd> read_points(std::istream& in, int dim, const std::string& origin) {
  std::vector<Eigen::VectorXd> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::vector<double> vals;
    std::string tok;
    while (ls >> tok) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": bad number '" + tok + "'");
      }
      vals.push_back(v);
    }
    if (vals.empty()) continue;
    if (static_cast<int>(vals.size()) != dim) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                        " values, got " + std::to_string(vals.size()));
    }
    out.push_back(Eigen::Map<Eigen::VectorXd>(vals.data(), dim));
  }
  if (out.empty()) throw ConfigError(origin + ": no points");
  return out;
}

std::string to_jsonl(const EstimateRecord& r) {
  nlohmann::json j;
  j["kind"] = r.kind;
  j["point"] = r.point;
  j["seed"] = r.seed;
  j["delta_s"] = r.delta_s;
  j["ode_passes"] = r.ode_passes;
  j["wall_ns"] = r.wall_ns;
  return j.dump();
}

void cmd_estimate(const RunConfig& cfg, std::ostream& out) {
  const GmmSpec target = make_target(cfg);
  const ProbabilityFlow flow = make_flow(cfg, make_flow_model(cfg, target));
  std::vector<Eigen::VectorXd> points;
  if (!cfg.estimate.z_file.empty()) {
    std::ifstream in(cfg.estimate.z_file);
    if (!in) throw ConfigError("cannot open z file '" + cfg.estimate.z_file + "'");
    points = read_points(in, cfg.target.dim, cfg.estimate.z_file);
  } else {
    for (int i = 0; i < cfg.estimate.points; ++i) {
      Rng rng(derive_seed(cfg.run.seed, {0, static_cast<std::uint64_t>(i)}));
      points.push_back(standard_normal_vector(cfg.target.dim, rng));
    }
  }
  const std::string label = cfg.estimator.label();
  for (std::size_t p = 0; p < points.size(); ++p) {
    const FlowTrajectory traj = flow.push_forward(points[p]);
    for (int i = 0; i < cfg.estimate.draws; ++i) {
      EstimateRecord r;
      r.kind = label;
      r.point = p;
      r.seed = derive_seed(cfg.run.seed, {1, p, static_cast<std::uint64_t>(i)});
      const auto t0 = Clock::now();
      const auto e = estimate_entropy(flow, traj, cfg.estimator, r.seed);
      r.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
      r.delta_s = e.delta_s;
      r.ode_passes = e.ode_passes;
      out << to_jsonl(r) << '\n';
    }
  }
  out.flush();
}

std::vector<EstimateSummary> summarize_jsonl(std::istream& in) {
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> groups;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      groups[{j.at("kind").get<std::string>(), j.value("point", std::size_t{0})}].push_back(
          j.at("delta_s").get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  std::vector<EstimateSummary> out;
  for (const auto& [key, v] : groups) {
    EstimateSummary s;
    s.kind = key.first;
    s.point = key.second;
    s.n = v.size();
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(s.n);
    if (s.n > 1) {
      for (double x : v) s.var += (x - s.mean) * (x - s.mean);
      s.var /= static_cast<double>(s.n - 1);
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace flowpp
