#include "flowpp/gmm.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "flowpp/errors.hpp"

namespace flowpp {

namespace {

void check_dim(const GmmSpec& gmm, const Eigen::VectorXd& x) {
  if (x.size() != gmm.dim()) {
    throw std::invalid_argument("dimension mismatch: expected " + std::to_string(gmm.dim()) +
                                ", got " + std::to_string(x.size()));
  }
}

}  // namespace

ComponentSpec ComponentSpec::from_covariance(Eigen::VectorXd mean, Eigen::MatrixXd covariance) {
  const auto d = mean.size();
  if (d < 1 || covariance.rows() != d || covariance.cols() != d) {
    throw std::invalid_argument("component covariance must be D x D with D = mean length");
  }
  const double scale = covariance.cwiseAbs().maxCoeff();
  const double asym = (covariance - covariance.transpose()).cwiseAbs().maxCoeff();
  if (!(asym <= 1e-12 * scale)) {
    throw std::invalid_argument("component covariance is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("component covariance is not positive definite");
  }
  ComponentSpec c;
  c.chol = llt.matrixL();
  c.precision = llt.solve(Eigen::MatrixXd::Identity(d, d));
  c.precision = 0.5 * (c.precision + c.precision.transpose()).eval();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) log_det += 2.0 * std::log(c.chol(i, i));
  c.log_norm = -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det);
  c.mean = std::move(mean);
  c.covariance = std::move(covariance);
  return c;
}

GmmSpec::GmmSpec(std::vector<double> weights, std::vector<ComponentSpec> components)
    : weights_(std::move(weights)), components_(std::move(components)) {
  if (components_.empty() || components_.size() != weights_.size()) {
    throw std::invalid_argument("mixture needs one positive weight per component");
  }
  double total = 0.0;
  for (double w : weights_) {
    if (!(w > 0.0)) throw std::invalid_argument("mixture weights must be strictly positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument("mixture weights must sum to 1");
  }
  dim_ = static_cast<int>(components_.front().mean.size());
  for (const auto& c : components_) {
    if (c.mean.size() != dim_) throw std::invalid_argument("components differ in dimension");
  }
  log_weights_.reserve(weights_.size());
  for (double w : weights_) log_weights_.push_back(std::log(w));
}

void evaluate_point(const GmmSpec& gmm, const Eigen::VectorXd& x, MixturePoint& out) {
  check_dim(gmm, x);
  const auto k = static_cast<Eigen::Index>(gmm.num_components());
  const auto d = static_cast<Eigen::Index>(gmm.dim());
  thread_local Eigen::VectorXd diff;
  diff.resize(d);
  out.responsibilities.resize(k);
  out.component_scores.resize(d, k);
  double max_log = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto& c = gmm.components()[static_cast<std::size_t>(j)];
    diff.noalias() = x - c.mean;
    out.component_scores.col(j).noalias() = -c.precision * diff;
    const double quad = -diff.dot(out.component_scores.col(j));
    const double lj = gmm.log_weights()[static_cast<std::size_t>(j)] + c.log_norm - 0.5 * quad;
    out.responsibilities[j] = lj;
    max_log = std::max(max_log, lj);
  }
  double sum = 0.0;
  for (Eigen::Index j = 0; j < k; ++j) {
    out.responsibilities[j] = std::exp(out.responsibilities[j] - max_log);
    sum += out.responsibilities[j];
  }
  out.responsibilities /= sum;
  out.log_density = max_log + std::log(sum);
  out.score.noalias() = out.component_scores * out.responsibilities;
}

double log_density(const GmmSpec& gmm, const Eigen::VectorXd& x) {
  MixturePoint p;
  evaluate_point(gmm, x, p);
  return p.log_density;
}

Eigen::VectorXd score(const GmmSpec& gmm, const Eigen::VectorXd& x) {
  MixturePoint p;
  evaluate_point(gmm, x, p);
  return p.score;
}

Eigen::MatrixXd score_jacobian(const GmmSpec& gmm, const Eigen::VectorXd& x) {
  MixturePoint p;
  evaluate_point(gmm, x, p);
  const auto d = static_cast<Eigen::Index>(gmm.dim());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t j = 0; j < gmm.num_components(); ++j) {
    const double r = p.responsibilities[static_cast<Eigen::Index>(j)];
    const auto s = p.component_scores.col(static_cast<Eigen::Index>(j));
    h.noalias() += r * (s * s.transpose() - gmm.components()[j].precision);
  }
  h.noalias() -= p.score * p.score.transpose();
  return 0.5 * (h + h.transpose());
}

void score_jacobian_apply(const GmmSpec& gmm, const MixturePoint& point, const Eigen::VectorXd& u,
                          Eigen::VectorXd& out) {
  out.noalias() = -(point.score.dot(u)) * point.score;
  for (std::size_t j = 0; j < gmm.num_components(); ++j) {
    const double r = point.responsibilities[static_cast<Eigen::Index>(j)];
    const auto s = point.component_scores.col(static_cast<Eigen::Index>(j));
    out.noalias() += (r * s.dot(u)) * s;
    out.noalias() -= r * (gmm.components()[j].precision * u);
  }
}

Eigen::VectorXd responsibilities(const GmmSpec& gmm, const Eigen::VectorXd& x) {
  MixturePoint p;
  evaluate_point(gmm, x, p);
  return p.responsibilities;
}

int modal_assignment(const GmmSpec& gmm, const Eigen::VectorXd& x) {
  MixturePoint p;
  evaluate_point(gmm, x, p);
  int best = 0;
  for (Eigen::Index j = 1; j < p.responsibilities.size(); ++j) {
    if (p.responsibilities[j] > p.responsibilities[best]) best = static_cast<int>(j);
  }
  return best;
}

Eigen::VectorXd sample_direct(const GmmSpec& gmm, Rng& rng) {
  std::discrete_distribution<std::size_t> pick(gmm.weights().begin(), gmm.weights().end());
  const auto& c = gmm.components()[pick(rng)];
  return c.mean + c.chol * standard_normal_vector(gmm.dim(), rng);
}

GmmSpec build_benchmark_gmm(int dim, std::uint64_t seed, double diag_noise_std) {
  if (dim < 2) throw std::invalid_argument("benchmark mixture needs dim >= 2");
  if (!(diag_noise_std >= 0.0)) throw std::invalid_argument("diag_noise_std must be >= 0");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_diagonal = [&] {
    Eigen::VectorXd diag(dim);
    for (int i = 0; i < dim; ++i) diag[i] = 0.01 + diag_noise_std * std::abs(normal(rng));
    return diag;
  };

  Eigen::VectorXd mean0 = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd mean1 = Eigen::VectorXd::Zero(dim);
  mean0[0] = -2.0;
  mean1[0] = 2.0;

  const Eigen::VectorXd diag0 = random_diagonal();
  const Eigen::VectorXd diag1 = random_diagonal();

  Eigen::MatrixXd gauss(dim, dim);
  for (int c = 0; c < dim; ++c)
    for (int r = 0; r < dim; ++r) gauss(r, c) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, dim);
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Positive diagonal of R makes Q unique.
  for (int i = 0; i < dim; ++i) {
    if (r(i, i) < 0.0) q.col(i) *= -1.0;
  }
  Eigen::MatrixXd cov1 = q * diag1.asDiagonal() * q.transpose();
  cov1 = 0.5 * (cov1 + cov1.transpose()).eval();

  std::vector<ComponentSpec> comps;
  comps.push_back(ComponentSpec::from_covariance(mean0, diag0.asDiagonal()));
  comps.push_back(ComponentSpec::from_covariance(mean1, cov1));
  return GmmSpec({0.25, 0.75}, std::move(comps));
}

GmmSpec with_weights(const GmmSpec& gmm, std::vector<double> weights) {
  return GmmSpec(std::move(weights), gmm.components());
}

// ---------------------------------------------------------------------------
// Text serialization: "key = v1 v2 ..." lines, 17 significant digits.

namespace {

void write_numbers(std::ostream& os, const double* data, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) os << (i ? " " : "") << data[i];
}

std::vector<double> parse_numbers(const std::string& text, const std::string& key) {
  std::vector<double> out;
  const char* p = text.data();
  const char* end = text.data() + text.size();
  while (p < end) {
    while (p < end && (*p == ' ' || *p == '\t' || *p == ',')) ++p;
    if (p == end) break;
    double v = 0.0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc()) throw ConfigError("bad number in '" + key + "'");
    out.push_back(v);
    p = next;
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void write_gmm(std::ostream& os, const GmmSpec& gmm) {
  const auto old_precision = os.precision(17);
  const int d = gmm.dim();
  os << "dim = " << d << "\n";
  os << "components = " << gmm.num_components() << "\n";
  os << "weights = ";
  write_numbers(os, gmm.weights().data(), static_cast<Eigen::Index>(gmm.weights().size()));
  os << "\n";
  for (std::size_t j = 0; j < gmm.num_components(); ++j) {
    const auto& c = gmm.components()[j];
    os << "component." << j << ".mean = ";
    write_numbers(os, c.mean.data(), d);
    os << "\n";
    // Row-major on disk.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = c.covariance;
    os << "component." << j << ".covariance = ";
    write_numbers(os, rm.data(), static_cast<Eigen::Index>(d) * d);
    os << "\n";
  }
  os.precision(old_precision);
}

GmmSpec read_gmm(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("mixture file is missing '" + key + "'");
    return it->second;
  };
  const auto dim_v = parse_numbers(get("dim"), "dim");
  const auto k_v = parse_numbers(get("components"), "components");
  if (dim_v.size() != 1 || k_v.size() != 1 || dim_v[0] < 1 || k_v[0] < 1) {
    throw ConfigError("mixture file: dim and components must be positive integers");
  }
  const auto d = static_cast<Eigen::Index>(dim_v[0]);
  const auto k = static_cast<std::size_t>(k_v[0]);
  auto weights = parse_numbers(get("weights"), "weights");
  if (weights.size() != k) throw ConfigError("mixture file: weights length != components");
  std::vector<ComponentSpec> comps;
  for (std::size_t j = 0; j < k; ++j) {
    const std::string prefix = "component." + std::to_string(j);
    const auto mean = parse_numbers(get(prefix + ".mean"), prefix + ".mean");
    const auto cov = parse_numbers(get(prefix + ".covariance"), prefix + ".covariance");
    if (static_cast<Eigen::Index>(mean.size()) != d ||
        static_cast<Eigen::Index>(cov.size()) != d * d) {
      throw ConfigError("mixture file: " + prefix + " has the wrong length");
    }
    Eigen::VectorXd m = Eigen::Map<const Eigen::VectorXd>(mean.data(), d);
    Eigen::MatrixXd c =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            cov.data(), d, d);
    comps.push_back(ComponentSpec::from_covariance(std::move(m), std::move(c)));
  }
  return GmmSpec(std::move(weights), std::move(comps));
}

void save_gmm(const std::string& path, const GmmSpec& gmm) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_gmm(os, gmm);
}

GmmSpec load_gmm(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path);
  return read_gmm(is);
}

}  // namespace flowpp
