#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dagvi/graph.hpp"
#include "dagvi/scm.hpp"

namespace dagvi {

struct NotPositiveDefiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Gaussian-Wishart prior over (mean, precision): mu | W ~ N(gamma, (alpha_mu W)^-1),
// W ~ Wishart(alpha_w, rate T).
struct BgeHyperparams {
  double alpha_mu = 1.0;
  double alpha_w = 10.0;
  Eigen::VectorXd gamma;
  Eigen::MatrixXd t_scale;

  int dim() const { return static_cast<int>(gamma.size()); }

  static BgeHyperparams defaults(int d) {
    BgeHyperparams h;
    h.alpha_mu = 1.0;
    h.alpha_w = d <= 5 ? 10.0 : 1000.0;
    h.gamma = Eigen::VectorXd::Constant(d, 2.0);
    h.t_scale = h.alpha_mu * (h.alpha_w - d - 1.0) / (h.alpha_mu + 1.0) *
                Eigen::MatrixXd::Identity(d, d);
    return h;
  }
};

// Config-file view of the hyperparameters; alpha_w = 0 means "pick by
// dimension" (10 up to d=5, else 1000).
struct BgeConfig {
  double alpha_mu = 1.0;
  double alpha_w = 0.0;
  double gamma_scalar = 2.0;
  std::string t_scale_mode = "auto";  // "auto": alpha_mu (alpha_w - d - 1)/(alpha_mu + 1) I

  BgeHyperparams materialize(int d) const {
    BgeHyperparams h;
    h.alpha_mu = alpha_mu;
    h.alpha_w = alpha_w > 0.0 ? alpha_w : (d <= 5 ? 10.0 : 1000.0);
    if (!(h.alpha_mu > 0.0)) throw std::invalid_argument("bge: alpha_mu must be positive");
    if (h.alpha_w <= d - 1) throw std::invalid_argument("bge: alpha_w must exceed d - 1");
    h.gamma = Eigen::VectorXd::Constant(d, gamma_scalar);
    if (t_scale_mode == "auto") {
      const double scale = h.alpha_mu * (h.alpha_w - d - 1.0) / (h.alpha_mu + 1.0);
      if (!(scale > 0.0)) throw std::invalid_argument("bge: auto t_scale needs alpha_w > d + 1");
      h.t_scale = scale * Eigen::MatrixXd::Identity(d, d);
    } else if (t_scale_mode == "identity") {
      h.t_scale = Eigen::MatrixXd::Identity(d, d);
    } else {
      throw std::invalid_argument("bge: unknown t_scale_mode " + t_scale_mode);
    }
    return h;
  }
};

struct PosteriorParams {
  Eigen::VectorXd gamma_post;
  double precision_scale = 0.0;  // alpha_mu + n
  double alpha_w_post = 0.0;
  Eigen::MatrixXd t_post;
};

inline PosteriorParams posterior_update(const SufficientStats& stats,
                                        const BgeHyperparams& hyper) {
  const int d = hyper.dim();
  const double n = stats.n;
  PosteriorParams post;
  post.precision_scale = hyper.alpha_mu + n;
  post.alpha_w_post = hyper.alpha_w + n;
  if (stats.n == 0) {
    post.gamma_post = hyper.gamma;
    post.t_post = hyper.t_scale;
    return post;
  }
  if (stats.dim() != d) throw DimensionMismatchError("posterior_update: stats dim != hyper dim");
  post.gamma_post = (hyper.alpha_mu * hyper.gamma + n * stats.mean) / (hyper.alpha_mu + n);
  const Eigen::VectorXd diff = hyper.gamma - stats.mean;
  post.t_post = hyper.t_scale + stats.scatter +
                (hyper.alpha_mu * n / (hyper.alpha_mu + n)) * diff * diff.transpose();
  return post;
}

// log of the multivariate gamma function Gamma_l(a)
inline double lmvgamma(int l, double a) {
  double out = 0.25 * l * (l - 1) * std::log(M_PI);
  for (int j = 1; j <= l; ++j) out += std::lgamma(a + 0.5 * (1 - j));
  return out;
}

inline double logdet_spd(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefiniteError(std::string("matrix not positive definite in ") + what);
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

namespace detail {
inline std::vector<int> mask_to_indices(std::uint32_t mask) {
  std::vector<int> idx;
  for (int i = 0; mask >> i; ++i)
    if ((mask >> i) & 1u) idx.push_back(i);
  return idx;
}
}  // namespace detail

// Evidence of the subset's columns under the Gaussian-Wishart model:
//   -(n l / 2) log pi + (l/2) log(alpha_mu / (alpha_mu + n))
//   + log Gamma_l((alpha_w + n)/2) - log Gamma_l(alpha_w/2)
//   + (alpha_w/2) log|T_S| - ((alpha_w + n)/2) log|T'_S|
// with T'_S the posterior rate restricted to the subset. Restricting the
// hyperparameters to the subset first gives the same value (submatrix
// consistency), which is what makes the per-node decomposition coherent.
inline double log_marginal_subset(const SufficientStats& stats, std::uint32_t subset,
                                  const BgeHyperparams& hyper) {
  if (subset == 0) return 0.0;
  const auto idx = detail::mask_to_indices(subset);
  const int l = static_cast<int>(idx.size());
  if (idx.back() >= hyper.dim() || (stats.n > 0 && idx.back() >= stats.dim()))
    throw DimensionMismatchError("log_marginal_subset: subset exceeds dimension");
  const double n = stats.n;
  const double am = hyper.alpha_mu;
  const double aw = hyper.alpha_w;

  Eigen::MatrixXd t_s(l, l);
  Eigen::VectorXd gamma_s(l);
  for (int a = 0; a < l; ++a) {
    gamma_s(a) = hyper.gamma(idx[a]);
    for (int b = 0; b < l; ++b) t_s(a, b) = hyper.t_scale(idx[a], idx[b]);
  }

  Eigen::MatrixXd t_post = t_s;
  if (stats.n > 0) {
    Eigen::VectorXd diff(l);
    for (int a = 0; a < l; ++a) diff(a) = gamma_s(a) - stats.mean(idx[a]);
    Eigen::MatrixXd scatter_s(l, l);
    for (int a = 0; a < l; ++a)
      for (int b = 0; b < l; ++b) scatter_s(a, b) = stats.scatter(idx[a], idx[b]);
    t_post += scatter_s + (am * n / (am + n)) * diff * diff.transpose();
  }

  return -0.5 * n * l * std::log(M_PI) + 0.5 * l * std::log(am / (am + n)) +
         lmvgamma(l, 0.5 * (aw + n)) - lmvgamma(l, 0.5 * aw) +
         0.5 * aw * logdet_spd(t_s, "prior rate submatrix") -
         0.5 * (aw + n) * logdet_spd(t_post, "posterior rate submatrix");
}

// Memoizes subset evidences and per-node local scores. Insertions are
// serialized; cached values are bit-identical to fresh computation.
class ScoreCache {
 public:
  double subset_marginal(std::uint32_t subset, const SufficientStats& stats,
                         const BgeHyperparams& hyper) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = subset_.find(subset);
      if (it != subset_.end()) return it->second;
    }
    const double v = log_marginal_subset(stats, subset, hyper);
    std::lock_guard<std::mutex> lock(mu_);
    return subset_.emplace(subset, v).first->second;
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return subset_.size();
  }

  void clear() {
    std::lock_guard<std::mutex> lock(mu_);
    subset_.clear();
  }

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::uint32_t, double> subset_;
};

// local_score(i, Pa) = log m(Pa ∪ {i}) - log m(Pa); sums over nodes give the
// graph score. Score equivalence across a Markov class follows because the
// score is a difference of a fixed set function over families.
inline double local_score(int node, std::uint32_t parent_mask, const SufficientStats& stats,
                          const BgeHyperparams& hyper, ScoreCache& cache) {
  if ((parent_mask >> node) & 1u)
    throw std::invalid_argument("local_score: node contained in its own parent set");
  const std::uint32_t family = parent_mask | (1u << node);
  return cache.subset_marginal(family, stats, hyper) -
         cache.subset_marginal(parent_mask, stats, hyper);
}

inline double local_score(int node, const std::vector<int>& parents,
                          const SufficientStats& stats, const BgeHyperparams& hyper,
                          ScoreCache& cache) {
  std::uint32_t mask = 0;
  for (int p : parents) mask |= 1u << p;
  return local_score(node, mask, stats, hyper, cache);
}

// Decomposable graph score; defined for cyclic matrices too (the prior, not
// the likelihood, is what suppresses cycles during training).
inline double log_marginal_likelihood(const AdjacencyMatrix& a, const SufficientStats& stats,
                                      const BgeHyperparams& hyper, ScoreCache& cache) {
  double total = 0.0;
  for (int i = 0; i < a.dim(); ++i)
    total += local_score(i, a.parent_mask(i), stats, hyper, cache);
  return total;
}

}  // namespace dagvi
