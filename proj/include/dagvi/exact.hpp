#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dagvi/bge.hpp"
#include "dagvi/family.hpp"
#include "dagvi/graph.hpp"
#include "dagvi/prior.hpp"
#include "dagvi/rng.hpp"
#include "dagvi/scm.hpp"

namespace dagvi {

struct UndefinedMetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Explicit table over all 2^{d(d-1)} off-diagonal configurations. Support is
// every directed graph, not just DAGs, so tables from the prior-suppressed
// posterior and from the variational family live on the same space.
struct GraphDistribution {
  int d = 0;
  std::vector<double> probs;

  GraphDistribution() = default;
  GraphDistribution(int dim, std::vector<double> p) : d(dim), probs(std::move(p)) {
    if (d < 1 || d > 4) throw std::invalid_argument("GraphDistribution: need 1 <= d <= 4");
    if (probs.size() != num_graph_codes(d))
      throw std::invalid_argument("GraphDistribution: wrong table size");
    for (double v : probs)
      if (!(v >= 0.0)) throw std::invalid_argument("GraphDistribution: negative probability");
  }

  double total_mass() const { return std::accumulate(probs.begin(), probs.end(), 0.0); }
};

struct EnumeratedPosterior {
  GraphDistribution dist;
  // log normalizer = log p(D) shifted by the prior's (never computed) log Z_d
  double log_evidence = 0.0;
};

inline EnumeratedPosterior enumerate_posterior(const SufficientStats& stats,
                                               const BgeHyperparams& hyper, double lambda_t,
                                               const PriorConfig& prior, ScoreCache& cache) {
  const int d = hyper.dim();
  if (d > 4) throw std::invalid_argument("enumerate_posterior: d > 4 not enumerable");
  const std::uint64_t count = num_graph_codes(d);
  std::vector<double> logscore(count);
  for (std::uint64_t code = 0; code < count; ++code) {
    const AdjacencyMatrix a = graph_from_index(d, code);
    logscore[code] = log_marginal_likelihood(a, stats, hyper, cache) +
                     log_prior_unnormalized(a, lambda_t, prior);
  }
  const double shift = *std::max_element(logscore.begin(), logscore.end());
  double total = 0.0;
  for (double ls : logscore) total += std::exp(ls - shift);
  const double log_evidence = shift + std::log(total);
  std::vector<double> probs(count);
  for (std::uint64_t code = 0; code < count; ++code)
    probs[code] = std::exp(logscore[code] - log_evidence);
  return {GraphDistribution(d, std::move(probs)), log_evidence};
}

inline GraphDistribution model_distribution(const Model& model, int d) {
  if (d > 4) throw std::invalid_argument("model_distribution: d > 4 not enumerable");
  if (model_dim(model) != d) throw DimensionMismatchError("model_distribution: dim mismatch");
  const std::uint64_t count = num_graph_codes(d);
  std::vector<double> probs(count);
  for (std::uint64_t code = 0; code < count; ++code)
    probs[code] = std::exp(log_prob(model, graph_from_index(d, code)));
  return GraphDistribution(d, std::move(probs));
}

inline double hellinger(const GraphDistribution& p, const GraphDistribution& q) {
  if (p.d != q.d) throw DimensionMismatchError("hellinger: dimension mismatch");
  double sum = 0.0;
  for (std::size_t k = 0; k < p.probs.size(); ++k) {
    const double diff = std::sqrt(p.probs[k]) - std::sqrt(q.probs[k]);
    sum += diff * diff;
  }
  return std::sqrt(sum) / std::sqrt(2.0);
}

inline double expected_shd(const Model& model, const AdjacencyMatrix& ground_truth,
                           int num_samples, Rng& rng) {
  if (num_samples < 1) throw std::invalid_argument("expected_shd: num_samples < 1");
  long total = 0;
  for (int s = 0; s < num_samples; ++s)
    total += shd(sample(model, rng).graph, ground_truth);
  return static_cast<double>(total) / num_samples;
}

inline double expected_shd_exact(const GraphDistribution& dist,
                                 const AdjacencyMatrix& ground_truth) {
  if (dist.d != ground_truth.dim())
    throw DimensionMismatchError("expected_shd_exact: dimension mismatch");
  double total = 0.0;
  for (std::uint64_t code = 0; code < dist.probs.size(); ++code)
    total += dist.probs[code] * shd(graph_from_index(dist.d, code), ground_truth);
  return total;
}

// ELBO of an explicit table q: sum_A q(A) [log p(D|A) + log p~(A) - log q(A)],
// with 0 log 0 = 0. Shares the prior's constant shift with enumerate_posterior's
// log_evidence, so bound comparisons between the two are exact.
inline double exact_elbo(const GraphDistribution& q, const SufficientStats& stats,
                         const BgeHyperparams& hyper, double lambda_t, const PriorConfig& prior,
                         ScoreCache& cache) {
  if (q.d != hyper.dim()) throw DimensionMismatchError("exact_elbo: dimension mismatch");
  double total = 0.0;
  for (std::uint64_t code = 0; code < q.probs.size(); ++code) {
    const double qa = q.probs[code];
    if (qa <= 0.0) continue;
    const AdjacencyMatrix a = graph_from_index(q.d, code);
    total += qa * (log_marginal_likelihood(a, stats, hyper, cache) +
                   log_prior_unnormalized(a, lambda_t, prior) - std::log(qa));
  }
  return total;
}

inline double exact_elbo(const Model& model, const SufficientStats& stats,
                         const BgeHyperparams& hyper, double lambda_t, const PriorConfig& prior,
                         ScoreCache& cache) {
  const int d = model_dim(model);
  if (d > 4) throw std::invalid_argument("exact_elbo: d > 4 not enumerable");
  double total = 0.0;
  for (std::uint64_t code = 0; code < num_graph_codes(d); ++code) {
    const AdjacencyMatrix a = graph_from_index(d, code);
    const double logq = log_prob(model, a);
    total += std::exp(logq) * (log_marginal_likelihood(a, stats, hyper, cache) +
                               log_prior_unnormalized(a, lambda_t, prior) - logq);
  }
  return total;
}

// d ELBO / d phi = sum_A q(A) (signal(A) - b) grad log q(A); any constant b
// gives the same value since sum_A q grad log q = 0, so b = 0 is used.
inline Eigen::VectorXd exact_elbo_gradient(const Model& model, const SufficientStats& stats,
                                           const BgeHyperparams& hyper, double lambda_t,
                                           const PriorConfig& prior, ScoreCache& cache) {
  const int d = model_dim(model);
  if (d > 4) throw std::invalid_argument("exact_elbo_gradient: d > 4 not enumerable");
  Eigen::VectorXd g = Eigen::VectorXd::Zero(num_params(model));
  for (std::uint64_t code = 0; code < num_graph_codes(d); ++code) {
    const AdjacencyMatrix a = graph_from_index(d, code);
    const double logq = log_prob(model, a);
    const double signal = log_marginal_likelihood(a, stats, hyper, cache) +
                          log_prior_unnormalized(a, lambda_t, prior) - logq;
    g += std::exp(logq) * signal * grad_log_prob(model, a);
  }
  return g;
}

struct RocPoint {
  double threshold = 0.0;
  double true_positive_rate = 0.0;
  double false_positive_rate = 0.0;
};

namespace detail {

inline void collect_edge_scores(const Eigen::MatrixXd& marginals,
                                const AdjacencyMatrix& ground_truth,
                                std::vector<std::pair<double, int>>& scored) {
  const int d = ground_truth.dim();
  if (marginals.rows() != d || marginals.cols() != d)
    throw DimensionMismatchError("auroc: marginal matrix dimension mismatch");
  scored.clear();
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      if (i == j) continue;
      scored.emplace_back(marginals(i, j), ground_truth.edge(i, j) ? 1 : 0);
    }
  int positives = 0;
  for (const auto& [s, lab] : scored) positives += lab;
  if (positives == 0 || positives == static_cast<int>(scored.size()))
    throw UndefinedMetricError("auroc undefined: ground truth has no edge/non-edge split");
}

}  // namespace detail

// Points at every distinct score threshold (prediction: score >= threshold),
// from (0,0) down to (1,1).
inline std::vector<RocPoint> roc_curve(const Eigen::MatrixXd& marginals,
                                       const AdjacencyMatrix& ground_truth) {
  std::vector<std::pair<double, int>> scored;
  detail::collect_edge_scores(marginals, ground_truth, scored);
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  int positives = 0;
  for (const auto& [s, lab] : scored) positives += lab;
  const int negatives = static_cast<int>(scored.size()) - positives;

  std::vector<RocPoint> curve;
  curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  int tp = 0, fp = 0;
  std::size_t k = 0;
  while (k < scored.size()) {
    const double threshold = scored[k].first;
    while (k < scored.size() && scored[k].first == threshold) {
      if (scored[k].second) ++tp; else ++fp;
      ++k;
    }
    curve.push_back({threshold, static_cast<double>(tp) / positives,
                     static_cast<double>(fp) / negatives});
  }
  return curve;
}

// Rank statistic with tied scores sharing their average rank; identical to the
// trapezoidal area through tied groups of the curve above.
inline double auroc(const Eigen::MatrixXd& marginals, const AdjacencyMatrix& ground_truth) {
  std::vector<std::pair<double, int>> scored;
  detail::collect_edge_scores(marginals, ground_truth, scored);
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  int positives = 0;
  for (const auto& [s, lab] : scored) positives += lab;
  const int negatives = static_cast<int>(scored.size()) - positives;

  double rank_sum_pos = 0.0;
  std::size_t k = 0;
  while (k < scored.size()) {
    std::size_t j = k;
    while (j < scored.size() && scored[j].first == scored[k].first) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(k + 1) + static_cast<double>(j));
    for (std::size_t t = k; t < j; ++t)
      if (scored[t].second) rank_sum_pos += avg_rank;
    k = j;
  }
  return (rank_sum_pos - 0.5 * positives * (positives + 1.0)) /
         (static_cast<double>(positives) * negatives);
}

inline double area_under(const std::vector<RocPoint>& curve) {
  double area = 0.0;
  for (std::size_t k = 1; k < curve.size(); ++k)
    area += (curve[k].false_positive_rate - curve[k - 1].false_positive_rate) *
            0.5 * (curve[k].true_positive_rate + curve[k - 1].true_positive_rate);
  return area;
}

inline void write_distribution_csv(const GraphDistribution& dist,
                                   const AdjacencyMatrix* ground_truth, std::ostream& os) {
  os << "index,probability,is_acyclic" << (ground_truth ? ",shd_to_gt" : "") << '\n';
  char buf[64];
  for (std::uint64_t code = 0; code < dist.probs.size(); ++code) {
    const AdjacencyMatrix a = graph_from_index(dist.d, code);
    std::snprintf(buf, sizeof(buf), "%.17g", dist.probs[code]);
    os << code << ',' << buf << ',' << (is_acyclic(a) ? 1 : 0);
    if (ground_truth) os << ',' << shd(a, *ground_truth);
    os << '\n';
  }
}

inline void write_distribution_csv(const GraphDistribution& dist,
                                   const AdjacencyMatrix* ground_truth,
                                   const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_distribution_csv: cannot open " + path);
  write_distribution_csv(dist, ground_truth, os);
}

}  // namespace dagvi
