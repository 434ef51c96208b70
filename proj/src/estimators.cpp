#include "flowpp/estimators.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "flowpp/errors.hpp"

namespace flowpp {

// ---------------------------------------------------------------------------
// Configuration

void EstimatorConfig::validate() const {
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    throw std::invalid_argument("estimator delta must be positive");
  }
  if (kind == EstimatorKind::hutchinson && n_probes < 1) {
    throw std::invalid_argument("Hutchinson needs n_probes >= 1");
  }
}

std::string EstimatorConfig::label() const {
  switch (kind) {
    case EstimatorKind::fp:
      return mode == DerivativeMode::exact_tangent ? "FP-exact" : "FP";
    case EstimatorKind::fppp:
      return mode == DerivativeMode::exact_tangent ? "FPpp-exact" : "FPpp";
    case EstimatorKind::hutchinson:
      return std::string(probes == ProbeDistribution::gaussian ? "HutchGaussian(" : "HutchRademacher(") +
             std::to_string(n_probes) + (hold_probes ? ",held)" : ")");
    case EstimatorKind::brute_force:
      return "BruteForce";
  }
  return "?";
}

int EstimatorConfig::extra_passes(int dim) const {
  switch (kind) {
    case EstimatorKind::fp:
    case EstimatorKind::fppp:
      return mode == DerivativeMode::exact_tangent ? 1 : 2;
    case EstimatorKind::hutchinson:
      return n_probes;
    case EstimatorKind::brute_force:
      return dim;
  }
  return 0;
}

EstimatorConfig parse_estimator(const std::string& tag) {
  std::string t = tag;
  EstimatorConfig cfg;
  auto strip = [&t](const std::string& suffix) {
    if (t.size() > suffix.size() && t.compare(t.size() - suffix.size(), suffix.size(), suffix) == 0) {
      t.resize(t.size() - suffix.size());
      return true;
    }
    return false;
  };
  if (strip("-exact")) cfg.mode = DerivativeMode::exact_tangent;
  if (strip("-held")) cfg.hold_probes = true;
  // long labels spell it "(n,held)"
  if (strip(",held)")) {
    cfg.hold_probes = true;
    t.push_back(')');
  }
  std::string lower;
  for (char c : t) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));

  auto parse_count = [&](const std::string& digits) {
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit)) {
      throw ConfigError("bad estimator tag '" + tag + "'");
    }
    if (digits.size() > 6) throw ConfigError("probe count too large in '" + tag + "'");
    return std::stoi(digits);
  };

  if (lower == "fp") {
    cfg.kind = EstimatorKind::fp;
  } else if (lower == "fppp" || lower == "fp++") {
    cfg.kind = EstimatorKind::fppp;
  } else if (lower == "bf" || lower == "bruteforce") {
    cfg.kind = EstimatorKind::brute_force;
  } else if (lower.rfind("hutchgaussian(", 0) == 0 && lower.back() == ')') {
    cfg.kind = EstimatorKind::hutchinson;
    cfg.probes = ProbeDistribution::gaussian;
    cfg.n_probes = parse_count(lower.substr(14, lower.size() - 15));
  } else if (lower.rfind("hutchrademacher(", 0) == 0 && lower.back() == ')') {
    cfg.kind = EstimatorKind::hutchinson;
    cfg.probes = ProbeDistribution::rademacher;
    cfg.n_probes = parse_count(lower.substr(16, lower.size() - 17));
  } else if (lower.size() > 1 && (lower[0] == 'g' || lower[0] == 'r')) {
    cfg.kind = EstimatorKind::hutchinson;
    cfg.probes = lower[0] == 'g' ? ProbeDistribution::gaussian : ProbeDistribution::rademacher;
    cfg.n_probes = parse_count(lower.substr(1));
  } else {
    throw ConfigError("unknown estimator '" + tag + "' (fp, fppp, bf, g<n>, r<n>)");
  }
  if (cfg.kind != EstimatorKind::fp && cfg.kind != EstimatorKind::fppp &&
      cfg.mode == DerivativeMode::exact_tangent) {
    throw ConfigError("'-exact' applies to fp and fppp only");
  }
  if (cfg.kind != EstimatorKind::hutchinson && cfg.hold_probes) {
    throw ConfigError("'-held' applies to Hutchinson estimators only");
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("estimator '" + tag + "': " + e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Perturbations

Eigen::VectorXd sample_unit_sphere(int dim, Rng& rng) {
  if (dim < 1) throw std::invalid_argument("sphere dimension must be >= 1");
  for (;;) {
    Eigen::VectorXd v = standard_normal_vector(dim, rng);
    const double n = v.norm();
    if (n > 0.0) return v / n;
  }
}

PerturbationDraw PerturbationDraw::generate(std::uint64_t seed, int dim, int count) {
  PerturbationDraw draw;
  draw.seed = seed;
  Rng rng(seed);
  draw.epsilons.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) draw.epsilons.push_back(sample_unit_sphere(dim, rng));
  return draw;
}

double single_step_fp_factor(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& inverse_action,
                             const Eigen::VectorXd& epsilon, int dim) {
  const double n = inverse_action(epsilon).norm();
  if (!std::isfinite(n)) throw NumericalFailure("non-finite inverse action");
  if (n == 0.0) throw SingularJacobian("inverse action has zero norm");
  return std::pow(n, -static_cast<double>(dim));
}

namespace {

// -D log ||v||, the per-step log-volume factor.
double log_factor(const Eigen::VectorXd& v, int dim, int k) {
  const double n = v.norm();
  if (!std::isfinite(n)) {
    throw NumericalFailure("non-finite inverse-Jacobian product at step " + std::to_string(k));
  }
  if (n == 0.0) {
    throw SingularJacobian("zero inverse-Jacobian product at step " + std::to_string(k));
  }
  return -static_cast<double>(dim) * std::log(n);
}

EntropyEstimate make_estimate(double delta_s, const EstimatorConfig& cfg, int dim,
                              std::optional<std::uint64_t> seed) {
  if (!std::isfinite(delta_s)) throw NumericalFailure("non-finite entropy estimate");
  EntropyEstimate e;
  e.delta_s = delta_s;
  e.estimator = cfg;
  e.ode_passes = cfg.extra_passes(dim);
  e.draw_seed = seed;
  return e;
}

// Quadrature weight of each trajectory node; times are decreasing so weights are negative.
std::vector<double> node_weights(const ProbabilityFlow& flow) {
  const auto& t = flow.grid().times();
  const std::size_t n = t.size();
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double h = t[i + 1] - t[i];
    if (flow.integrator() == Integrator::euler) {
      w[i] += h;
    } else {
      w[i] += 0.5 * h;
      w[i + 1] += 0.5 * h;
    }
  }
  return w;
}

void check_trajectory(const ProbabilityFlow& flow, const FlowTrajectory& traj) {
  if (traj.states.rows() != flow.dim() || traj.steps() != flow.steps()) {
    throw std::invalid_argument("trajectory does not match the flow");
  }
  if (!traj.all_finite()) throw NumericalFailure("trajectory has non-finite states");
}

}  // namespace

// ---------------------------------------------------------------------------
// Estimators

EntropyEstimate fp_entropy(const ProbabilityFlow& flow, const Eigen::VectorXd& x,
                           const EstimatorConfig& cfg, std::uint64_t seed, PassCounter* counter) {
  cfg.validate();
  const int d = flow.dim();
  Rng rng(seed);
  const Eigen::VectorXd eps = sample_unit_sphere(d, rng);
  Eigen::VectorXd image;
  if (cfg.mode == DerivativeMode::exact_tangent) {
    image = flow.pull_back_tangent(x, eps, counter).second;
  } else {
    const Eigen::VectorXd plus = flow.pull_back(x + cfg.delta * eps, counter).latent();
    const Eigen::VectorXd minus = flow.pull_back(x - cfg.delta * eps, counter).latent();
    image = (plus - minus) / (2.0 * cfg.delta);
  }
  return make_estimate(log_factor(image, d, 0), cfg, d, seed);
}

EntropyEstimate fppp_entropy(const ProbabilityFlow& flow, const FlowTrajectory& traj,
                             const EstimatorConfig& cfg, std::uint64_t seed, PassCounter* counter,
                             std::vector<double>* step_terms) {
  cfg.validate();
  check_trajectory(flow, traj);
  const int d = flow.dim();
  const int T = flow.steps();
  Rng rng(seed);
  if (step_terms) step_terms->assign(static_cast<std::size_t>(T), 0.0);
  Eigen::VectorXd eps, image;
  double delta_s = 0.0;
  for (int k = 1; k <= T; ++k) {
    if (k == 1 || !cfg.shared_epsilon) eps = sample_unit_sphere(d, rng);
    const Eigen::VectorXd x_k = traj.step_output(k);
    if (cfg.mode == DerivativeMode::exact_tangent) {
      image = flow.step_tangent(k, x_k, StepDirection::inverse, eps, counter);
    } else {
      const Eigen::VectorXd plus = flow.step_inverse(x_k + cfg.delta * eps, k, counter);
      const Eigen::VectorXd minus = flow.step_inverse(x_k - cfg.delta * eps, k, counter);
      image = (plus - minus) / (2.0 * cfg.delta);
    }
    const double term = log_factor(image, d, k);
    if (step_terms) (*step_terms)[static_cast<std::size_t>(k - 1)] = term;
    delta_s += term;
  }
  return make_estimate(delta_s, cfg, d, seed);
}

EntropyEstimate hutchinson_entropy(const ProbabilityFlow& flow, const FlowTrajectory& traj,
                                   const EstimatorConfig& cfg, std::uint64_t seed,
                                   PassCounter* counter) {
  cfg.validate();
  check_trajectory(flow, traj);
  const int d = flow.dim();
  const auto weights = node_weights(flow);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  auto draw = [&](Eigen::VectorXd& u) {
    for (int i = 0; i < d; ++i) {
      u[i] = cfg.probes == ProbeDistribution::gaussian ? normal(rng) : (coin(rng) ? 1.0 : -1.0);
    }
  };
  std::vector<Eigen::VectorXd> fixed;
  if (cfg.hold_probes) {
    fixed.assign(static_cast<std::size_t>(cfg.n_probes), Eigen::VectorXd(d));
    for (auto& u : fixed) draw(u);
  }
  Eigen::VectorXd u(d), ju(d);
  double delta_s = 0.0;
  for (std::size_t node = 0; node < weights.size(); ++node) {
    if (weights[node] == 0.0) continue;
    const Eigen::VectorXd x = traj.states.col(static_cast<Eigen::Index>(node));
    double div = 0.0;
    for (int p = 0; p < cfg.n_probes; ++p) {
      if (cfg.hold_probes) {
        u = fixed[static_cast<std::size_t>(p)];
      } else {
        draw(u);
      }
      flow.velocity_jvp_at(x, static_cast<int>(node), u, ju);
      div += u.dot(ju);
    }
    delta_s += weights[node] * div / cfg.n_probes;
  }
  if (counter) counter->probe_sweeps += static_cast<std::uint64_t>(cfg.n_probes);
  return make_estimate(delta_s, cfg, d, seed);
}

double log_abs_det(const Eigen::MatrixXd& m) {
  if (!m.allFinite()) throw NumericalFailure("non-finite matrix in log-determinant");
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
  const auto& packed = lu.matrixLU();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < packed.rows(); ++i) {
    const double u = std::abs(packed(i, i));
    if (u == 0.0) throw SingularJacobian("singular Jacobian (zero pivot)");
    acc += std::log(u);
  }
  return acc;
}

EntropyEstimate bruteforce_entropy(const ProbabilityFlow& flow, const FlowTrajectory& traj,
                                   PassCounter* counter) {
  check_trajectory(flow, traj);
  const int d = flow.dim();
  Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(d, d);
  for (int k = flow.steps(); k >= 1; --k) {
    jac = flow.step_jacobian_exact(k, traj.step_input(k), StepDirection::generative, counter) * jac;
  }
  EstimatorConfig cfg;
  cfg.kind = EstimatorKind::brute_force;
  return make_estimate(log_abs_det(jac), cfg, d, std::nullopt);
}

EntropyEstimate estimate_entropy(const ProbabilityFlow& flow, const FlowTrajectory& traj,
                                 const EstimatorConfig& cfg, std::uint64_t seed,
                                 PassCounter* counter) {
  switch (cfg.kind) {
    case EstimatorKind::fp:
      return fp_entropy(flow, traj.sample(), cfg, seed, counter);
    case EstimatorKind::fppp:
      return fppp_entropy(flow, traj, cfg, seed, counter);
    case EstimatorKind::hutchinson:
      return hutchinson_entropy(flow, traj, cfg, seed, counter);
    case EstimatorKind::brute_force:
      return bruteforce_entropy(flow, traj, counter);
  }
  throw std::invalid_argument("unknown estimator kind");
}

double exact_inverse_step_log_det(const ProbabilityFlow& flow, const FlowTrajectory& traj) {
  check_trajectory(flow, traj);
  double acc = 0.0;
  for (int k = 1; k <= flow.steps(); ++k) {
    acc += log_abs_det(flow.step_jacobian_exact(k, traj.step_output(k), StepDirection::inverse));
  }
  return acc;
}

double trace_quadrature(const ProbabilityFlow& flow, const FlowTrajectory& traj) {
  check_trajectory(flow, traj);
  const auto weights = node_weights(flow);
  double acc = 0.0;
  for (std::size_t node = 0; node < weights.size(); ++node) {
    if (weights[node] == 0.0) continue;
    acc += weights[node] *
           flow.velocity_jacobian_at(traj.states.col(static_cast<Eigen::Index>(node)),
                                     static_cast<int>(node))
               .trace();
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Statistics

EstimatorStats summarize_delta_s(std::span<const double> delta_s) {
  EstimatorStats s;
  s.n = delta_s.size();
  if (s.n < 2) throw std::invalid_argument("need at least two draws");
  const double n = static_cast<double>(s.n);
  double mean = 0.0;
  double max_v = -std::numeric_limits<double>::infinity();
  for (double v : delta_s) {
    mean += v;
    max_v = std::max(max_v, v);
  }
  mean /= n;
  double m2 = 0.0, m4 = 0.0, sum_e = 0.0, sum_e2 = 0.0;
  for (double v : delta_s) {
    const double c = v - mean;
    m2 += c * c;
    m4 += c * c * c * c;
    const double e = std::exp(v - max_v);
    sum_e += e;
    sum_e2 += e * e;
  }
  s.mean_delta_s = mean;
  s.var_delta_s = m2 / (n - 1.0);
  const double mu4 = m4 / n;
  const double mu2 = m2 / n;
  s.var_se = std::sqrt(std::max(0.0, mu4 - mu2 * mu2) / n);
  const double mean_e = sum_e / n;
  s.log_mean_exp = max_v + std::log(mean_e);
  const double var_e = std::max(0.0, (sum_e2 / n - mean_e * mean_e) * n / (n - 1.0));
  s.rel_se_exp = std::sqrt(var_e / n) / mean_e;
  return s;
}

EstimatorStats estimator_stats(const ProbabilityFlow& flow, const Eigen::VectorXd& z,
                               const EstimatorConfig& cfg, std::size_t n_draws,
                               std::uint64_t base_seed, std::vector<double>* samples) {
  if (n_draws < 2) throw std::invalid_argument("estimator_stats needs n_draws >= 2");
  const FlowTrajectory traj = flow.push_forward(z);
  std::vector<double> values(n_draws);
  for (std::size_t i = 0; i < n_draws; ++i) {
    values[i] = estimate_entropy(flow, traj, cfg, derive_seed(base_seed, {i})).delta_s;
  }
  const auto stats = summarize_delta_s(values);
  if (samples) *samples = std::move(values);
  return stats;
}

}  // namespace flowpp
