#pragma once

#include <span>
#include <vector>

#include "flowpp/gmm.hpp"
#include "flowpp/smc.hpp"

namespace flowpp {

/// Uniform bins on [lo, hi]; values outside are dropped. Mass is normalized to 1
/// over the in-range values.
struct Histogram {
  std::vector<double> edges;
  std::vector<double> mass;
};

Histogram weighted_histogram(std::span<const double> values, std::span<const double> weights, double lo,
                             double hi, int bins);

/// 1/2 sum |p - q| over shared bins; both histograms must use the same edges.
double tv_distance(const Histogram& p, const Histogram& q);

/// Linear-interpolated empirical quantile, q in [0, 1].
double quantile(std::vector<double> values, double q);

/// Weighted fraction of particles whose x is assigned to each component.
std::vector<double> modal_weights(const GmmSpec& target, const ParticleEnsemble& ensemble);

struct EnergyComparison {
  Histogram sampled;
  Histogram reference;
  double tv = 0.0;
};

/// Energy histograms of the weighted ensemble and of direct samples over the
/// pooled 1st-99th percentile range.
EnergyComparison compare_energies(std::span<const double> sample_energy, std::span<const double> sample_weight,
                                  std::span<const double> reference_energy, int bins);

}  // namespace flowpp
