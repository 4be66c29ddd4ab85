#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dagvi/adam.hpp"
#include "dagvi/bge.hpp"
#include "dagvi/family.hpp"
#include "dagvi/graph.hpp"
#include "dagvi/prior.hpp"
#include "dagvi/rng.hpp"
#include "dagvi/scm.hpp"

namespace dagvi {

enum class Family { autoregressive, factorized };

inline std::string to_string(Family f) {
  return f == Family::autoregressive ? "autoregressive" : "factorized";
}

inline Family family_from_string(const std::string& s) {
  if (s == "autoregressive") return Family::autoregressive;
  if (s == "factorized") return Family::factorized;
  throw std::invalid_argument("unknown family: " + s);
}

struct TrainConfig {
  int epochs = 30000;
  int batch_size = 1000;
  double learning_rate = 1e-2;
  double baseline_decay = 0.99;
  std::uint64_t seed = 0;
  PriorConfig prior;
  BgeConfig bge;
  Family family = Family::autoregressive;
  int hidden_size = 48;
  bool early_stop = false;      // plateau stop; off by default
  int early_stop_window = 500;
  double early_stop_rel = 1e-5;

  // small enough that a full study runs in minutes on one core
  static TrainConfig desk() {
    TrainConfig c;
    c.epochs = 3000;
    c.batch_size = 64;
    c.hidden_size = 48;
    return c;
  }

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs < 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size < 1");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("train: negative learning rate");
    if (baseline_decay < 0.0 || baseline_decay >= 1.0)
      throw std::invalid_argument("train: baseline_decay outside [0,1)");
    if (hidden_size < 1) throw std::invalid_argument("train: hidden_size < 1");
    prior.validate();
  }
};

struct EpochRecord {
  int epoch = 0;
  double elbo = 0.0;      // batch mean of loglik + log prior - log q
  double loglik = 0.0;    // batch mean of log p(D|G)
  double kl_est = 0.0;    // batch mean of log q - unnormalized log prior
  double lambda_t = 0.0;
  double baseline = 0.0;  // value used for this step's gradient
  double grad_norm = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
};

inline const char* history_csv_header() {
  return "epoch,elbo,loglik,kl_est,lambda_t,baseline,grad_norm";
}

inline void write_history_csv(const TrainHistory& hist, std::ostream& os) {
  os << history_csv_header() << '\n';
  char buf[512];
  for (const auto& r : hist.records) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.epoch, r.elbo,
                  r.loglik, r.kl_est, r.lambda_t, r.baseline, r.grad_norm);
    os << buf << '\n';
  }
}

inline void write_history_csv(const TrainHistory& hist, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_history_csv: cannot open " + path);
  write_history_csv(hist, os);
}

// ELBO integrand for one sampled graph: log p(D|G) + log p~(G) - log q(G).
// The prior's missing normalizer shifts all signals by the same constant and
// cancels in baselined gradients.
inline double per_sample_signal(const AdjacencyMatrix& a, const SufficientStats& stats,
                                const BgeHyperparams& hyper, double lambda_t,
                                const PriorConfig& prior, const Model& model,
                                ScoreCache& cache) {
  return log_marginal_likelihood(a, stats, hyper, cache) +
         log_prior_unnormalized(a, lambda_t, prior) - log_prob(model, a);
}

inline double elbo_estimate(const Model& model, const SufficientStats& stats,
                            const BgeHyperparams& hyper, double lambda_t,
                            const PriorConfig& prior, int num_samples, Rng& rng,
                            ScoreCache& cache) {
  if (num_samples < 1) throw std::invalid_argument("elbo_estimate: num_samples < 1");
  double total = 0.0;
  for (int s = 0; s < num_samples; ++s) {
    const SampleResult draw = sample(model, rng);
    total += log_marginal_likelihood(draw.graph, stats, hyper, cache) +
             log_prior_unnormalized(draw.graph, lambda_t, prior) - draw.log_prob;
  }
  return total / num_samples;
}

struct BatchStats {
  double elbo = 0.0;
  double loglik = 0.0;
  double kl_est = 0.0;
  double baseline_used = 0.0;
};

namespace detail {

// Lockstep batch of recurrent chains: one GEMM per step instead of L
// mat-vecs, and a single weighted backward pass for the whole batch.
struct ArBatchTrace {
  int steps = 0;
  int batch = 0;
  std::vector<Eigen::MatrixXd> hs;                 // steps+1, H x L, hs[0] = 0
  std::vector<Eigen::MatrixXd> gi, gf, gg, go, c, tc;  // steps, H x L
  Eigen::MatrixXd logits;                          // steps x L
  Eigen::MatrixXi syms;                            // steps x L input symbols
  Eigen::MatrixXi bits;                            // steps x L sampled bits
};

inline void ar_batch_sample(const AutoregressiveModel& m, int batch, Rng& rng, ArBatchTrace& tr,
                            Eigen::VectorXd& logq) {
  const int steps = sequence_length(m.d);
  const int h = m.hidden;
  tr.steps = steps;
  tr.batch = batch;
  tr.hs.assign(steps + 1, Eigen::MatrixXd::Zero(h, batch));
  tr.gi.assign(steps, Eigen::MatrixXd(h, batch));
  tr.gf.assign(steps, Eigen::MatrixXd(h, batch));
  tr.gg.assign(steps, Eigen::MatrixXd(h, batch));
  tr.go.assign(steps, Eigen::MatrixXd(h, batch));
  tr.c.assign(steps, Eigen::MatrixXd(h, batch));
  tr.tc.assign(steps, Eigen::MatrixXd(h, batch));
  tr.logits.resize(steps, batch);
  tr.syms.resize(steps, batch);
  tr.bits.resize(steps, batch);
  logq = Eigen::VectorXd::Zero(batch);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd c_prev = Eigen::MatrixXd::Zero(h, batch);
  Eigen::MatrixXd z(4 * h, batch);
  std::vector<int> prev(batch, 0);
  for (int t = 0; t < steps; ++t) {
    const Eigen::VectorXd base =
        m.w_in.rightCols(m.embed) * m.pos_embed.row(t).transpose() + m.bias;
    z.noalias() = m.w_rec * tr.hs[t];
    for (int j = 0; j < batch; ++j) {
      tr.syms(t, j) = prev[j];
      z.col(j) += base + m.w_in.col(prev[j]);
    }
    tr.gi[t] = z.topRows(h).unaryExpr([](double v) { return sigmoid(v); });
    tr.gf[t] = z.block(h, 0, h, batch).unaryExpr([](double v) { return sigmoid(v); });
    tr.gg[t] = z.block(2 * h, 0, h, batch).array().tanh();
    tr.go[t] = z.bottomRows(h).unaryExpr([](double v) { return sigmoid(v); });
    tr.c[t] = tr.gf[t].cwiseProduct(c_prev) + tr.gi[t].cwiseProduct(tr.gg[t]);
    tr.tc[t] = tr.c[t].array().tanh();
    tr.hs[t + 1] = tr.go[t].cwiseProduct(tr.tc[t]);
    tr.logits.row(t) = m.w_out.transpose() * tr.hs[t + 1];
    for (int j = 0; j < batch; ++j) {
      const double logit = tr.logits(t, j);
      const int bit = unif(rng) < sigmoid(logit) ? 1 : 0;
      tr.bits(t, j) = bit;
      logq(j) += bernoulli_logmass(logit, bit);
      prev[j] = bit ? 2 : 1;
    }
    c_prev = tr.c[t];
  }
}

// Gradient of sum_j weight_j * log q(A_j) in the flattened parameter order.
inline Eigen::VectorXd ar_batch_backward(const AutoregressiveModel& m, const ArBatchTrace& tr,
                                         const Eigen::VectorXd& weights) {
  const int steps = tr.steps;
  const int batch = tr.batch;
  const int h = m.hidden;

  Eigen::MatrixXd dw_in = Eigen::MatrixXd::Zero(m.w_in.rows(), m.w_in.cols());
  Eigen::MatrixXd dw_rec = Eigen::MatrixXd::Zero(m.w_rec.rows(), m.w_rec.cols());
  Eigen::VectorXd dbias = Eigen::VectorXd::Zero(m.bias.size());
  Eigen::MatrixXd dpos = Eigen::MatrixXd::Zero(m.pos_embed.rows(), m.pos_embed.cols());
  Eigen::VectorXd dw_out = Eigen::VectorXd::Zero(h);
  double db_out = 0.0;

  Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(h, batch);
  Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(h, batch);
  Eigen::MatrixXd dz(4 * h, batch);
  Eigen::RowVectorXd dlogit(batch);
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(h, batch);
  for (int t = steps - 1; t >= 0; --t) {
    for (int j = 0; j < batch; ++j)
      dlogit(j) = weights(j) * (tr.bits(t, j) - sigmoid(tr.logits(t, j)));
    dw_out.noalias() += tr.hs[t + 1] * dlogit.transpose();
    db_out += dlogit.sum();
    dh.noalias() += m.w_out * dlogit;

    Eigen::MatrixXd dout = dh.cwiseProduct(tr.tc[t]);
    Eigen::MatrixXd dc =
        dh.cwiseProduct(tr.go[t]).cwiseProduct(ones - tr.tc[t].cwiseProduct(tr.tc[t])) + dc_next;
    Eigen::MatrixXd c_prev =
        t > 0 ? tr.c[t - 1] : Eigen::MatrixXd::Zero(h, batch);
    dz.topRows(h) = dc.cwiseProduct(tr.gg[t]).cwiseProduct(tr.gi[t]).cwiseProduct(ones - tr.gi[t]);
    dz.block(h, 0, h, batch) =
        dc.cwiseProduct(c_prev).cwiseProduct(tr.gf[t]).cwiseProduct(ones - tr.gf[t]);
    dz.block(2 * h, 0, h, batch) =
        dc.cwiseProduct(tr.gi[t]).cwiseProduct(ones - tr.gg[t].cwiseProduct(tr.gg[t]));
    dz.bottomRows(h) =
        dout.cwiseProduct(tr.go[t]).cwiseProduct(ones - tr.go[t]);

    const Eigen::VectorXd dz_sum = dz.rowwise().sum();
    dbias += dz_sum;
    dw_rec.noalias() += dz * tr.hs[t].transpose();
    for (int j = 0; j < batch; ++j) dw_in.col(tr.syms(t, j)) += dz.col(j);
    dw_in.rightCols(m.embed).noalias() += dz_sum * m.pos_embed.row(t);
    dpos.row(t) += (m.w_in.rightCols(m.embed).transpose() * dz_sum).transpose();
    dh.noalias() = m.w_rec.transpose() * dz;
    dc_next = dc.cwiseProduct(tr.gf[t]);
  }

  Eigen::VectorXd g(num_params(m));
  int at = 0;
  pack_row_major(dw_in, g, at);
  pack_row_major(dw_rec, g, at);
  g.segment(at, dbias.size()) = dbias;
  at += static_cast<int>(dbias.size());
  pack_row_major(dpos, g, at);
  g.segment(at, dw_out.size()) = dw_out;
  at += static_cast<int>(dw_out.size());
  g(at) = db_out;
  return g;
}

}  // namespace detail

// One batch of the score-function estimator:
//   g = (1/L) sum_j (signal_j - b) grad log q(A_j).
// baseline = nullopt centers on this batch's mean signal (used for the very
// first step); stats of the batch come back through `out`.
inline Eigen::VectorXd reinforce_gradient(const Model& model, const SufficientStats& stats,
                                          const BgeHyperparams& hyper, double lambda_t,
                                          const PriorConfig& prior, int batch_size,
                                          std::optional<double> baseline, Rng& rng,
                                          ScoreCache& cache, BatchStats* out = nullptr) {
  if (batch_size < 1) throw std::invalid_argument("reinforce_gradient: batch_size < 1");
  const int L = batch_size;

  Eigen::VectorXd logq(L);
  Eigen::VectorXd loglik(L);
  Eigen::VectorXd logprior(L);

  detail::ArBatchTrace tr;
  std::vector<AdjacencyMatrix> graphs;
  const auto* ar = std::get_if<AutoregressiveModel>(&model);
  if (ar) {
    detail::ar_batch_sample(*ar, L, rng, tr, logq);
    graphs.reserve(L);
    const int steps = tr.steps;
    std::vector<std::uint8_t> bits(steps);
    for (int j = 0; j < L; ++j) {
      for (int t = 0; t < steps; ++t)
        bits[ar_position(ar->d, t)] = static_cast<std::uint8_t>(tr.bits(t, j));
      graphs.push_back(delinearize(ar->d, bits));
    }
  } else {
    graphs.reserve(L);
    for (int j = 0; j < L; ++j) {
      SampleResult draw = sample(model, rng);
      logq(j) = draw.log_prob;
      graphs.push_back(std::move(draw.graph));
    }
  }

  for (int j = 0; j < L; ++j) {
    loglik(j) = log_marginal_likelihood(graphs[j], stats, hyper, cache);
    logprior(j) = log_prior_unnormalized(graphs[j], lambda_t, prior);
  }
  const Eigen::VectorXd signal = loglik + logprior - logq;
  const double mean_signal = signal.mean();
  const double b = baseline.value_or(mean_signal);
  const Eigen::VectorXd weights = (signal.array() - b).matrix() / L;

  Eigen::VectorXd g;
  if (ar) {
    g = detail::ar_batch_backward(*ar, tr, weights);
  } else {
    const auto& fm = std::get<FactorizedModel>(model);
    g = Eigen::VectorXd::Zero(num_params(fm));
    for (int j = 0; j < L; ++j) g += weights(j) * grad_log_prob(fm, graphs[j]);
  }

  if (out) {
    out->elbo = mean_signal;
    out->loglik = loglik.mean();
    out->kl_est = (logq - logprior).mean();
    out->baseline_used = b;
  }
  return g;
}

struct TrainState {
  Model model;
  AdamState opt;
  double baseline = 0.0;
  bool baseline_ready = false;
  int epoch = 0;
};

// One epoch: sample a batch, take the baselined score-function step, advance
// the EMA baseline (use current value, then fold in this batch's mean).
inline EpochRecord grad_step(TrainState& state, const SufficientStats& stats,
                             const BgeHyperparams& hyper, double lambda_t,
                             const TrainConfig& config, Rng& rng, ScoreCache& cache) {
  BatchStats bs;
  const std::optional<double> b =
      state.baseline_ready ? std::optional<double>(state.baseline) : std::nullopt;
  const Eigen::VectorXd g = reinforce_gradient(state.model, stats, hyper, lambda_t, config.prior,
                                               config.batch_size, b, rng, cache, &bs);
  if (!g.allFinite())
    throw std::runtime_error("grad_step: non-finite gradient at epoch " +
                             std::to_string(state.epoch));

  Eigen::VectorXd params = get_params(state.model);
  AdamParams ap;
  ap.learning_rate = config.learning_rate;
  adam_step(params, g, state.opt, ap);
  set_params(state.model, params);

  if (!state.baseline_ready) {
    state.baseline = bs.baseline_used;
    state.baseline_ready = true;
  }
  state.baseline = config.baseline_decay * state.baseline +
                   (1.0 - config.baseline_decay) * bs.elbo;

  EpochRecord rec;
  rec.epoch = state.epoch;
  rec.elbo = bs.elbo;
  rec.loglik = bs.loglik;
  rec.kl_est = bs.kl_est;
  rec.lambda_t = lambda_t;
  rec.baseline = bs.baseline_used;
  rec.grad_norm = g.norm();
  state.epoch += 1;
  return rec;
}

struct TrainResult {
  Model model;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

inline Model make_initial_model(int d, const TrainConfig& config, Rng& rng) {
  if (config.family == Family::autoregressive)
    return Model(init_model(d, config.hidden_size, rng));
  return Model(init_factorized(d, rng));
}

inline TrainResult train(const Dataset& data, const TrainConfig& config,
                         const EpochCallback& callback = {}) {
  config.validate();
  const int d = data.dim();
  PriorConfig prior = config.prior;
  prior.total_epochs = config.epochs;
  TrainConfig cfg = config;
  cfg.prior = prior;

  const SufficientStats stats = sufficient_stats(data);
  const BgeHyperparams hyper = cfg.bge.materialize(d);
  ScoreCache cache;

  Rng init_rng = make_rng(cfg.seed, 0);
  Rng train_rng = make_rng(cfg.seed, 1);
  TrainState state;
  state.model = make_initial_model(d, cfg, init_rng);
  state.opt = AdamState(num_params(state.model));

  TrainHistory hist;
  hist.records.reserve(cfg.epochs);
  for (int i = 0; i < cfg.epochs; ++i) {
    const double lambda_t = temperature_schedule(i, prior);
    EpochRecord rec = grad_step(state, stats, hyper, lambda_t, cfg, train_rng, cache);
    hist.records.push_back(rec);
    if (callback) callback(rec);
    if (cfg.early_stop && static_cast<int>(hist.records.size()) >= 2 * cfg.early_stop_window) {
      const int w = cfg.early_stop_window;
      const auto& rs = hist.records;
      double recent = 0.0, earlier = 0.0;
      for (int k = 0; k < w; ++k) {
        recent += rs[rs.size() - 1 - k].elbo;
        earlier += rs[rs.size() - 1 - w - k].elbo;
      }
      recent /= w;
      earlier /= w;
      const double denom = std::max({std::abs(recent), std::abs(earlier), 1.0});
      if (std::abs(recent - earlier) / denom < cfg.early_stop_rel) break;
    }
  }
  return {state.model, hist};
}

}  // namespace dagvi
