#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dagvi/graph.hpp"

namespace dagvi {

// Gibbs prior p(A) ∝ exp(-lambda_t (tr e^A - d) - lambda_sparse |A|).
// The normalizer is never needed: every consumer takes differences of
// log-priors or renormalizes over an enumerated support.
struct PriorConfig {
  double lambda_sparse = 0.01;
  double temp_min = 10.0;
  double temp_max = 1000.0;
  int total_epochs = 30000;

  void validate() const {
    if (lambda_sparse < 0.0) throw std::invalid_argument("prior: lambda_sparse < 0");
    if (!(temp_min > 0.0) || !(temp_max > 0.0) || temp_min > temp_max)
      throw std::invalid_argument("prior: need 0 < temp_min <= temp_max");
    if (total_epochs < 1) throw std::invalid_argument("prior: total_epochs < 1");
  }
};

inline double log_prior_unnormalized(const AdjacencyMatrix& a, double lambda_t,
                                     const PriorConfig& config) {
  if (lambda_t < 0.0) throw std::invalid_argument("log_prior_unnormalized: lambda_t < 0");
  return -lambda_t * dag_penalty(a) - config.lambda_sparse * a.edge_count();
}

// lambda_t(i) = min + 10^{-2 max(0, k - 1.1 i)/k} (max - min); hits max at
// i >= k/1.1 and stays there.
inline double temperature_schedule(int epoch, const PriorConfig& config) {
  if (epoch < 0) throw std::invalid_argument("temperature_schedule: epoch < 0");
  const double k = config.total_epochs;
  const double expo = -2.0 * std::max(0.0, k - 1.1 * epoch) / k;
  return config.temp_min + std::pow(10.0, expo) * (config.temp_max - config.temp_min);
}

}  // namespace dagvi
