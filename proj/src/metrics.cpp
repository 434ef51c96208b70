#include "flowpp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flowpp {

Histogram weighted_histogram(std::span<const double> values, std::span<const double> weights, double lo,
                             double hi, int bins) {
  if (bins < 1 || !(hi > lo)) throw std::invalid_argument("histogram needs bins >= 1 and hi > lo");
  if (!weights.empty() && weights.size() != values.size()) {
    throw std::invalid_argument("histogram weights and values differ in length");
  }
  Histogram h;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) h.edges[static_cast<std::size_t>(b)] = lo + (hi - lo) * b / bins;
  h.mass.assign(static_cast<std::size_t>(bins), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!(v >= lo && v <= hi)) continue;
    auto b = static_cast<int>((v - lo) / (hi - lo) * bins);
    b = std::clamp(b, 0, bins - 1);
    const double w = weights.empty() ? 1.0 : weights[i];
    h.mass[static_cast<std::size_t>(b)] += w;
    total += w;
  }
  if (total > 0.0) {
    for (auto& m : h.mass) m /= total;
  }
  return h;
}

double tv_distance(const Histogram& p, const Histogram& q) {
  if (p.edges != q.edges) throw std::invalid_argument("TV distance needs identical bin edges");
  double acc = 0.0;
  for (std::size_t b = 0; b < p.mass.size(); ++b) acc += std::abs(p.mass[b] - q.mass[b]);
  return std::min(1.0, 0.5 * acc);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= values.size()) return values.back();
  const double f = pos - static_cast<double>(i);
  return values[i] * (1.0 - f) + values[i + 1] * f;
}

std::vector<double> modal_weights(const GmmSpec& target, const ParticleEnsemble& ensemble) {
  std::vector<double> out(target.num_components(), 0.0);
  const auto w = ensemble.normalized_weights();
  for (std::size_t i = 0; i < w.size(); ++i) {
    out[static_cast<std::size_t>(modal_assignment(target, ensemble.particles[i].x))] += w[i];
  }
  return out;
}

EnergyComparison compare_energies(std::span<const double> sample_energy, std::span<const double> sample_weight,
                                  std::span<const double> reference_energy, int bins) {
  std::vector<double> pooled(sample_energy.begin(), sample_energy.end());
  pooled.insert(pooled.end(), reference_energy.begin(), reference_energy.end());
  double lo = quantile(pooled, 0.01);
  double hi = quantile(pooled, 0.99);
  if (!(hi > lo)) hi = lo + 1.0;
  EnergyComparison out;
  out.sampled = weighted_histogram(sample_energy, sample_weight, lo, hi, bins);
  out.reference = weighted_histogram(reference_energy, {}, lo, hi, bins);
  out.tv = tv_distance(out.sampled, out.reference);
  return out;
}

}  // namespace flowpp
