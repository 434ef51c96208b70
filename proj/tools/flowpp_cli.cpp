#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowpp/errors.hpp"
#include "flowpp/harness.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> workers;
  std::vector<std::string> sets;
  bool strict = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "config file (key = value)");
  cmd->add_option("--seed", o.seed, "master seed (run.seed)");
  cmd->add_option("--out", o.out, "output directory or file");
  cmd->add_option("--workers", o.workers, "worker threads (run.workers)")->check(CLI::PositiveNumber);
  cmd->add_option("--set", o.sets, "override, e.g. --set smc.particles=200");
  cmd->add_flag("--strict", o.strict, "treat failed runs as a nonzero exit");
}

flowpp::RunConfig resolve(const CommonOptions& o) {
  flowpp::RunConfig cfg = o.config.empty() ? flowpp::RunConfig{} : flowpp::load_config(o.config);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw flowpp::ConfigError("--set expects key=value, got '" + s + "'");
    flowpp::set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (o.seed) cfg.run.seed = *o.seed;
  if (o.workers) cfg.run.workers = *o.workers;
  if (!o.out.empty()) cfg.run.out = o.out;
  cfg.check();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-perturbation entropy estimators and SMC on Gaussian-mixture targets"};
  app.require_subcommand(1);

  CommonOptions validate_opts, bench_opts, estimate_opts;
  auto* validate = app.add_subcommand("validate", "run the estimator validation suites");
  add_common(validate, validate_opts);
  auto* bench = app.add_subcommand("bench-gmm", "SMC benchmark on the Gaussian-mixture target");
  add_common(bench, bench_opts);
  auto* estimate = app.add_subcommand("estimate", "repeated entropy estimates as JSONL");
  add_common(estimate, estimate_opts);
  std::string z_file;
  estimate->add_option("--z-file", z_file, "latent points, one per line");
  auto* summarize = app.add_subcommand("summarize", "mean/variance of delta_s from JSONL on stdin");
  auto* show = app.add_subcommand("show-config", "print the resolved configuration");
  CommonOptions show_opts;
  add_common(show, show_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : flowpp::exit_config;
  }

  try {
    if (*validate) {
      const auto cfg = resolve(validate_opts);
      const auto rep = flowpp::cmd_validate(cfg, std::cout);
      std::vector<std::string> failed;
      for (const auto& c : rep.checks) {
        if (!c.passed) failed.push_back(c.name);
      }
      if (!failed.empty()) {
        std::cout << "failed:";
        for (const auto& f : failed) std::cout << ' ' << f;
        std::cout << '\n';
        return flowpp::exit_failed;
      }
      return flowpp::exit_ok;
    }
    if (*bench) {
      const auto cfg = resolve(bench_opts);
      const auto rep = flowpp::cmd_bench_gmm(cfg, std::cout);
      return rep.any_failed() && bench_opts.strict ? flowpp::exit_numerical : flowpp::exit_ok;
    }
    if (*estimate) {
      auto cfg = resolve(estimate_opts);
      if (!z_file.empty()) cfg.estimate.z_file = z_file;
      if (!estimate_opts.out.empty()) {
        std::ofstream os(estimate_opts.out);
        if (!os) throw flowpp::ConfigError("cannot write '" + estimate_opts.out + "'");
        flowpp::cmd_estimate(cfg, os);
      } else {
        flowpp::cmd_estimate(cfg, std::cout);
      }
      return flowpp::exit_ok;
    }
    if (*summarize) {
      std::cout << "kind,point,n,mean,var\n" << std::setprecision(17);
      for (const auto& s : flowpp::summarize_jsonl(std::cin)) {
        std::cout << s.kind << ',' << s.point << ',' << s.n << ',' << s.mean << ',' << s.var << '\n';
      }
      return flowpp::exit_ok;
    }
    if (*show) {
      std::cout << flowpp::to_text(resolve(show_opts));
      return flowpp::exit_ok;
    }
  } catch (const flowpp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return flowpp::exit_config;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return flowpp::exit_config;
  } catch (const flowpp::NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return flowpp::exit_numerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return flowpp::exit_numerical;
  }
  return flowpp::exit_ok;
}
