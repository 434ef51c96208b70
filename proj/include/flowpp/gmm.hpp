#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flowpp/random.hpp"

namespace flowpp {

/// One Gaussian component with its cached factorizations.
struct ComponentSpec {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd chol;       // lower triangular, chol * chol^T = covariance
  Eigen::MatrixXd precision;  // covariance^-1
  double log_norm = 0.0;      // -1/2 log det(2 pi covariance)

  /// Throws std::invalid_argument if the covariance is asymmetric, not
  /// positive definite, or has the wrong shape.
  static ComponentSpec from_covariance(Eigen::VectorXd mean, Eigen::MatrixXd covariance);
};

/// Gaussian mixture p(x) = sum_j w_j N(x | mu_j, Sigma_j). Immutable once built.
class GmmSpec {
 public:
  GmmSpec(std::vector<double> weights, std::vector<ComponentSpec> components);

  int dim() const noexcept { return dim_; }
  std::size_t num_components() const noexcept { return components_.size(); }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const std::vector<double>& log_weights() const noexcept { return log_weights_; }
  const std::vector<ComponentSpec>& components() const noexcept { return components_; }
  const ComponentSpec& component(std::size_t j) const { return components_.at(j); }

 private:
  int dim_ = 0;
  std::vector<double> weights_;
  std::vector<double> log_weights_;
  std::vector<ComponentSpec> components_;
};

/// Per-point quantities shared by the density, score and Hessian routines.
/// Storage is reused across calls to evaluate_point.
struct MixturePoint {
  double log_density = 0.0;
  Eigen::VectorXd responsibilities;  // softmax of log(w_j N_j(x))
  Eigen::MatrixXd component_scores;  // column j: -P_j (x - mu_j)
  Eigen::VectorXd score;             // sum_j r_j s_j
};

void evaluate_point(const GmmSpec& gmm, const Eigen::VectorXd& x, MixturePoint& out);

double log_density(const GmmSpec& gmm, const Eigen::VectorXd& x);

/// Dimensionless energy u(x) = -log p(x).
inline double energy(const GmmSpec& gmm, const Eigen::VectorXd& x) { return -log_density(gmm, x); }

Eigen::VectorXd score(const GmmSpec& gmm, const Eigen::VectorXd& x);

/// Hessian of log p at x.
Eigen::MatrixXd score_jacobian(const GmmSpec& gmm, const Eigen::VectorXd& x);

/// Hessian-vector product (grad score) * u given an already evaluated point.
void score_jacobian_apply(const GmmSpec& gmm, const MixturePoint& point,
                          const Eigen::VectorXd& u, Eigen::VectorXd& out);

Eigen::VectorXd responsibilities(const GmmSpec& gmm, const Eigen::VectorXd& x);

/// argmax_j r_j(x); ties go to the lower index.
int modal_assignment(const GmmSpec& gmm, const Eigen::VectorXd& x);

Eigen::VectorXd sample_direct(const GmmSpec& gmm, Rng& rng);

/// Two-component benchmark: means at -/+2 on axis 0, component 0 diagonal,
/// component 1 a rotated diagonal, weights (0.25, 0.75). Diagonal entries are
/// 0.01 + diag_noise_std * |N(0,1)|.
GmmSpec build_benchmark_gmm(int dim, std::uint64_t seed, double diag_noise_std = 0.5);

/// Same components, new weights (e.g. the equal-weight mixture a flow was fit to).
GmmSpec with_weights(const GmmSpec& gmm, std::vector<double> weights);

void write_gmm(std::ostream& os, const GmmSpec& gmm);
GmmSpec read_gmm(std::istream& is);
void save_gmm(const std::string& path, const GmmSpec& gmm);
GmmSpec load_gmm(const std::string& path);

}  // namespace flowpp
