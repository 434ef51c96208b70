#include "flowpp/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>

#include "flowpp/errors.hpp"

namespace flowpp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("key '" + key + "': cannot parse '" + value + "' as a number");
  }
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += items[i];
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Member>
Field number_field(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            member(c) = parse_number<T>(k, v);
          },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt_double(member(const_cast<RunConfig&>(c)));
            } else {
              return std::to_string(member(const_cast<RunConfig&>(c)));
            }
          }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["target.kind"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "benchmark") c.target.kind = TargetKind::benchmark;
          else if (v == "stationary") c.target.kind = TargetKind::stationary;
          else throw ConfigError("key '" + k + "': expected benchmark or stationary, got '" + v + "'");
        },
        [](const RunConfig& c) { return to_string(c.target.kind); }};
    t["target.dim"] = number_field<int>([](RunConfig& c) -> int& { return c.target.dim; });
    t["target.seed"] = number_field<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.target.seed; });
    t["target.diag_noise_std"] =
        number_field<double>([](RunConfig& c) -> double& { return c.target.diag_noise_std; });
    t["target.flow_weights"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "uniform") c.target.flow_weights = FlowWeights::uniform;
          else if (v == "target") c.target.flow_weights = FlowWeights::target;
          else throw ConfigError("key '" + k + "': expected uniform or target, got '" + v + "'");
        },
        [](const RunConfig& c) { return to_string(c.target.flow_weights); }};

    t["flow.beta_min"] = number_field<double>([](RunConfig& c) -> double& { return c.flow.schedule.beta_min; });
    t["flow.beta_max"] = number_field<double>([](RunConfig& c) -> double& { return c.flow.schedule.beta_max; });
    t["flow.t_max"] = number_field<double>([](RunConfig& c) -> double& { return c.flow.schedule.t_max; });
    t["flow.steps"] = number_field<int>([](RunConfig& c) -> int& { return c.flow.steps; });
    t["flow.integrator"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "heun") c.flow.integrator = Integrator::heun;
          else if (v == "euler") c.flow.integrator = Integrator::euler;
          else throw ConfigError("key '" + k + "': expected heun or euler, got '" + v + "'");
        },
        [](const RunConfig& c) { return to_string(c.flow.integrator); }};

    t["estimator.kind"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "fp") c.estimator.kind = EstimatorKind::fp;
          else if (v == "fppp" || v == "fp++") c.estimator.kind = EstimatorKind::fppp;
          else if (v == "hutchinson") c.estimator.kind = EstimatorKind::hutchinson;
          else if (v == "bruteforce" || v == "bf") c.estimator.kind = EstimatorKind::brute_force;
          else throw ConfigError("key '" + k + "': expected fp, fppp, hutchinson or bruteforce, got '" + v + "'");
        },
        [](const RunConfig& c) -> std::string {
          switch (c.estimator.kind) {
            case EstimatorKind::fp: return "fp";
            case EstimatorKind::fppp: return "fppp";
            case EstimatorKind::hutchinson: return "hutchinson";
            case EstimatorKind::brute_force: return "bruteforce";
          }
          return "?";
        }};
    t["estimator.mode"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "fd") c.estimator.mode = DerivativeMode::finite_difference;
          else if (v == "exact") c.estimator.mode = DerivativeMode::exact_tangent;
          else throw ConfigError("key '" + k + "': expected fd or exact, got '" + v + "'");
        },
        [](const RunConfig& c) {
          return std::string(c.estimator.mode == DerivativeMode::exact_tangent ? "exact" : "fd");
        }};
    t["estimator.delta"] = number_field<double>([](RunConfig& c) -> double& { return c.estimator.delta; });
    t["estimator.n_probes"] = number_field<int>([](RunConfig& c) -> int& { return c.estimator.n_probes; });
    t["estimator.probe"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "gaussian") c.estimator.probes = ProbeDistribution::gaussian;
          else if (v == "rademacher") c.estimator.probes = ProbeDistribution::rademacher;
          else throw ConfigError("key '" + k + "': expected gaussian or rademacher, got '" + v + "'");
        },
        [](const RunConfig& c) {
          return std::string(c.estimator.probes == ProbeDistribution::gaussian ? "gaussian" : "rademacher");
        }};
    t["estimator.probe_policy"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "trajectory") c.estimator.hold_probes = true;
          else if (v == "node") c.estimator.hold_probes = false;
          else throw ConfigError("key '" + k + "': expected trajectory or node, got '" + v + "'");
        },
        [](const RunConfig& c) { return std::string(c.estimator.hold_probes ? "trajectory" : "node"); }};

    t["smc.particles"] = number_field<int>([](RunConfig& c) -> int& { return c.smc.particles; });
    t["smc.levels"] = number_field<int>([](RunConfig& c) -> int& { return c.smc.levels; });
    t["smc.mcmc_steps"] = number_field<int>([](RunConfig& c) -> int& { return c.smc.mcmc_steps; });
    t["smc.block_size"] = number_field<int>([](RunConfig& c) -> int& { return c.smc.block_size; });
    t["smc.step_size"] = number_field<double>([](RunConfig& c) -> double& { return c.smc.step_size; });
    t["smc.ess_threshold"] = number_field<double>([](RunConfig& c) -> double& { return c.smc.ess_threshold; });
    t["smc.resample"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "systematic") c.smc.resample = ResampleMethod::systematic;
          else if (v == "multinomial") c.smc.resample = ResampleMethod::multinomial;
          else throw ConfigError("key '" + k + "': expected systematic or multinomial, got '" + v + "'");
        },
        [](const RunConfig& c) { return to_string(c.smc.resample); }};

    t["run.seed"] = number_field<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.run.seed; });
    t["run.workers"] = number_field<int>([](RunConfig& c) -> int& { return c.run.workers; });
    t["run.out"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.run.out = v; },
                    [](const RunConfig& c) { return c.run.out; }};

    t["bench.estimators"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          auto items = split_list(v);
          if (items.empty()) throw ConfigError("key '" + k + "': empty estimator list");
          for (const auto& e : items) parse_estimator(e);
          c.bench.estimators = items;
        },
        [](const RunConfig& c) { return join(c.bench.estimators); }};
    t["bench.seeds"] = number_field<int>([](RunConfig& c) -> int& { return c.bench.seeds; });
    t["bench.reference_samples"] =
        number_field<int>([](RunConfig& c) -> int& { return c.bench.reference_samples; });
    t["bench.rc_bins"] = number_field<int>([](RunConfig& c) -> int& { return c.bench.rc_bins; });
    t["bench.rc_min"] = number_field<double>([](RunConfig& c) -> double& { return c.bench.rc_min; });
    t["bench.rc_max"] = number_field<double>([](RunConfig& c) -> double& { return c.bench.rc_max; });
    t["bench.energy_bins"] = number_field<int>([](RunConfig& c) -> int& { return c.bench.energy_bins; });

    t["estimate.draws"] = number_field<int>([](RunConfig& c) -> int& { return c.estimate.draws; });
    t["estimate.points"] = number_field<int>([](RunConfig& c) -> int& { return c.estimate.points; });
    t["estimate.z_file"] = {
        [](RunConfig& c, const std::string&, const std::string& v) { c.estimate.z_file = v; },
        [](const RunConfig& c) { return c.estimate.z_file; }};

    t["validate.sphere_matrices"] =
        number_field<int>([](RunConfig& c) -> int& { return c.validate.sphere_matrices; });
    t["validate.sphere_draws"] = number_field<int>([](RunConfig& c) -> int& { return c.validate.sphere_draws; });
    t["validate.sphere_max_cond"] =
        number_field<double>([](RunConfig& c) -> double& { return c.validate.sphere_max_cond; });
    t["validate.sphere_tail_budget"] =
        number_field<double>([](RunConfig& c) -> double& { return c.validate.sphere_tail_budget; });
    t["validate.roundtrip_points"] =
        number_field<int>([](RunConfig& c) -> int& { return c.validate.roundtrip_points; });
    t["validate.unbiased_dim"] = number_field<int>([](RunConfig& c) -> int& { return c.validate.unbiased_dim; });
    t["validate.unbiased_steps"] =
        number_field<int>([](RunConfig& c) -> int& { return c.validate.unbiased_steps; });
    t["validate.unbiased_draws"] =
        number_field<int>([](RunConfig& c) -> int& { return c.validate.unbiased_draws; });
    t["validate.variance_points"] =
        number_field<int>([](RunConfig& c) -> int& { return c.validate.variance_points; });
    t["validate.variance_draws"] =
        number_field<int>([](RunConfig& c) -> int& { return c.validate.variance_draws; });
    t["validate.variance_required"] =
        number_field<int>([](RunConfig& c) -> int& { return c.validate.variance_required; });
    return t;
  }();
  return table;
}

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = fields();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, key, value);
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = origin + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (!section.empty()) key = section + "." + key;
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    } catch (const std::exception& e) {
      throw ConfigError(where + "key '" + key + "': " + e.what());
    }
  }
  cfg.check();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

void RunConfig::check() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("key '" + key + "': " + why);
  };
  if (target.dim < 2) fail("target.dim", "must be >= 2");
  if (!(target.diag_noise_std > 0.0)) fail("target.diag_noise_std", "must be positive");
  try {
    flow.schedule.validate();
  } catch (const std::exception& e) {
    fail("flow", e.what());
  }
  if (flow.steps < 1) fail("flow.steps", "must be >= 1");
  try {
    estimator.validate();
  } catch (const std::exception& e) {
    fail("estimator", e.what());
  }
  if (smc.particles < 1) fail("smc.particles", "must be >= 1");
  if (smc.levels < 1) fail("smc.levels", "must be >= 1");
  if (smc.mcmc_steps < 0) fail("smc.mcmc_steps", "must be >= 0");
  if (smc.block_size < 0) fail("smc.block_size", "must be >= 0 (0 selects max(1, D/10))");
  if (!(smc.step_size > 0.0)) fail("smc.step_size", "must be positive");
  if (!(smc.ess_threshold > 0.0 && smc.ess_threshold <= 1.0)) fail("smc.ess_threshold", "must lie in (0, 1]");
  if (run.workers < 1) fail("run.workers", "must be >= 1");
  if (bench.seeds < 1) fail("bench.seeds", "must be >= 1");
  if (bench.reference_samples < 100) fail("bench.reference_samples", "must be >= 100");
  if (bench.rc_bins < 1) fail("bench.rc_bins", "must be >= 1");
  if (!(bench.rc_max > bench.rc_min)) fail("bench.rc_max", "must exceed bench.rc_min");
  if (bench.energy_bins < 1) fail("bench.energy_bins", "must be >= 1");
  if (estimate.draws < 1) fail("estimate.draws", "must be >= 1");
  if (estimate.points < 1) fail("estimate.points", "must be >= 1");
  if (validate.sphere_matrices < 1) fail("validate.sphere_matrices", "must be >= 1");
  if (validate.sphere_draws < 2) fail("validate.sphere_draws", "must be >= 2");
  if (!(validate.sphere_max_cond >= 1.0)) fail("validate.sphere_max_cond", "must be >= 1");
  if (!(validate.sphere_tail_budget >= 1.0)) fail("validate.sphere_tail_budget", "must be >= 1");
  if (validate.roundtrip_points < 1) fail("validate.roundtrip_points", "must be >= 1");
  if (validate.unbiased_dim < 2) fail("validate.unbiased_dim", "must be >= 2");
  if (validate.unbiased_steps < 1) fail("validate.unbiased_steps", "must be >= 1");
  if (validate.unbiased_draws < 2) fail("validate.unbiased_draws", "must be >= 2");
  if (validate.variance_points < 1) fail("validate.variance_points", "must be >= 1");
  if (validate.variance_draws < 4) fail("validate.variance_draws", "must be >= 4");
  if (validate.variance_required < 0 || validate.variance_required > validate.variance_points) {
    fail("validate.variance_required", "must lie in [0, validate.variance_points]");
  }
}

std::map<std::string, std::string> to_map(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(cfg);
  return out;
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : to_map(cfg)) out += k + " = " + v + "\n";
  return out;
}

GmmSpec make_target(const RunConfig& cfg) {
  if (cfg.target.kind == TargetKind::stationary) {
    const int d = cfg.target.dim;
    return GmmSpec({1.0}, {ComponentSpec::from_covariance(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d))});
  }
  return build_benchmark_gmm(cfg.target.dim, cfg.target.seed, cfg.target.diag_noise_std);
}

GmmSpec make_flow_model(const RunConfig& cfg, const GmmSpec& target) {
  if (cfg.target.flow_weights == FlowWeights::target) return target;
  const auto k = target.num_components();
  return with_weights(target, std::vector<double>(k, 1.0 / static_cast<double>(k)));
}

ProbabilityFlow make_flow(const RunConfig& cfg, const GmmSpec& model) {
  return ProbabilityFlow(model, cfg.flow.schedule, TimeGrid::uniform(cfg.flow.steps, cfg.flow.schedule.t_max),
                         cfg.flow.integrator);
}

SmcConfig make_smc_config(const RunConfig& cfg, const EstimatorConfig& estimator, std::uint64_t seed) {
  SmcConfig s;
  s.num_particles = cfg.smc.particles;
  s.schedule = AnnealingSchedule::linear(cfg.smc.levels, cfg.smc.mcmc_steps, cfg.smc.ess_threshold);
  s.kernel.block_size = cfg.smc.block_size;
  s.kernel.step_size = cfg.smc.step_size;
  s.resample = cfg.smc.resample;
  s.estimator = estimator;
  s.seed = seed;
  s.workers = cfg.run.workers;
  return s;
}

std::string to_string(Integrator integrator) {
  return integrator == Integrator::heun ? "heun" : "euler";
}

std::string to_string(ResampleMethod method) {
  return method == ResampleMethod::systematic ? "systematic" : "multinomial";
}

std::string to_string(FlowWeights weights) {
  return weights == FlowWeights::uniform ? "uniform" : "target";
}

std::string to_string(TargetKind kind) {
  return kind == TargetKind::benchmark ? "benchmark" : "stationary";
}

}  // namespace flowpp
