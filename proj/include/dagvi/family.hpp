#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dagvi/graph.hpp"
#include "dagvi/rng.hpp"

namespace dagvi {

inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

inline double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

// log Bernoulli(bit | sigmoid(logit)); softplus keeps this finite for any
// finite logit, so saturated models still have proper log-masses.
inline double bernoulli_logmass(double logit, int bit) {
  return bit ? -softplus(-logit) : -softplus(logit);
}

// Independent Bernoulli per off-diagonal entry, in linearized order.
struct FactorizedModel {
  int d = 0;
  Eigen::VectorXd logits;  // length d(d-1)
};

// Single-layer LSTM over the off-diagonal entries. Step input is the one-hot
// of the previous symbol {start, 0, 1} concatenated with a learned per-step
// embedding; a linear head maps the hidden state to the entry's Bernoulli
// logit. Gate rows stack as [input; forget; cell; output], H rows each.
//
// Visit order: the two directions of each node pair are emitted back to back
// ((i,j) then (j,i), pairs in row-major order), so the "at most one direction
// between a pair" dependency is a one-step recurrence instead of a long-range
// one. Any fixed order defines the same model class; this one is easiest for
// the recurrence to exploit.
struct AutoregressiveModel {
  int d = 0;
  int hidden = 0;
  int embed = 0;
  Eigen::MatrixXd w_in;       // 4H x (3 + embed)
  Eigen::MatrixXd w_rec;      // 4H x H
  Eigen::VectorXd bias;       // 4H
  Eigen::MatrixXd pos_embed;  // d(d-1) x embed
  Eigen::VectorXd w_out;      // H
  double b_out = 0.0;
};

using Model = std::variant<FactorizedModel, AutoregressiveModel>;

constexpr int kPosEmbedSize = 8;

// Linearized position visited at step t of the recurrence: steps 2q and 2q+1
// cover the q-th unordered pair {i,j} (i<j, pairs in row-major order) in its
// forward then reverse direction.
inline int ar_position(int d, int t) {
  const int q = t / 2;
  const bool reverse = (t % 2) != 0;
  int i = 0, rem = q;
  while (rem >= d - 1 - i) {
    rem -= d - 1 - i;
    ++i;
  }
  const int j = i + 1 + rem;
  const int r = reverse ? j : i;
  const int c = reverse ? i : j;
  return r * (d - 1) + (c > r ? c - 1 : c);
}

inline FactorizedModel init_factorized(int d, Rng& rng) {
  std::uniform_real_distribution<double> unif(-0.1, 0.1);
  FactorizedModel m;
  m.d = d;
  m.logits.resize(sequence_length(d));
  for (int k = 0; k < m.logits.size(); ++k) m.logits(k) = unif(rng);
  return m;
}

// All weights uniform in [-0.1, 0.1]; output bias 0 so initial entry
// probabilities sit near 1/2.
inline AutoregressiveModel init_model(int d, int hidden_size, Rng& rng) {
  if (hidden_size < 1) throw std::invalid_argument("init_model: hidden_size < 1");
  std::uniform_real_distribution<double> unif(-0.1, 0.1);
  AutoregressiveModel m;
  m.d = d;
  m.hidden = hidden_size;
  m.embed = kPosEmbedSize;
  const int rows = 4 * hidden_size;
  auto fill = [&](Eigen::MatrixXd& w, int r, int c) {
    w.resize(r, c);
    for (int a = 0; a < r; ++a)
      for (int b = 0; b < c; ++b) w(a, b) = unif(rng);
  };
  fill(m.w_in, rows, 3 + m.embed);
  fill(m.w_rec, rows, hidden_size);
  m.bias.resize(rows);
  for (int a = 0; a < rows; ++a) m.bias(a) = unif(rng);
  fill(m.pos_embed, sequence_length(d), m.embed);
  m.w_out.resize(hidden_size);
  for (int a = 0; a < hidden_size; ++a) m.w_out(a) = unif(rng);
  m.b_out = 0.0;
  return m;
}

namespace detail {

// Per-step records kept by the forward pass for reverse accumulation.
struct ArTrace {
  Eigen::MatrixXd x;                  // (3+E) x T
  Eigen::MatrixXd gi, gf, gg, go;     // H x T gate activations
  Eigen::MatrixXd c, tc, h;           // H x T
  Eigen::VectorXd logits;             // T
};

// LSTM recurrence shared by sampling, scoring, and the gradient forward pass,
// so all three produce bit-identical logits for identical bit sequences.
class ArCell {
 public:
  explicit ArCell(const AutoregressiveModel& m)
      : m_(m),
        h_(Eigen::VectorXd::Zero(m.hidden)),
        c_(Eigen::VectorXd::Zero(m.hidden)),
        x_(Eigen::VectorXd::Zero(3 + m.embed)) {}

  // prev_symbol: 0 = start token, 1 = previous bit 0, 2 = previous bit 1
  double step(int prev_symbol, int t, ArTrace* trace = nullptr) {
    const int h = m_.hidden;
    x_.setZero();
    x_(prev_symbol) = 1.0;
    x_.tail(m_.embed) = m_.pos_embed.row(t).transpose();
    Eigen::VectorXd z = m_.w_in * x_ + m_.w_rec * h_ + m_.bias;
    Eigen::VectorXd gi = z.head(h).unaryExpr([](double v) { return sigmoid(v); });
    Eigen::VectorXd gf = z.segment(h, h).unaryExpr([](double v) { return sigmoid(v); });
    Eigen::VectorXd gg = z.segment(2 * h, h).array().tanh();
    Eigen::VectorXd go = z.tail(h).unaryExpr([](double v) { return sigmoid(v); });
    c_ = gf.cwiseProduct(c_) + gi.cwiseProduct(gg);
    Eigen::VectorXd tc = c_.array().tanh();
    h_ = go.cwiseProduct(tc);
    const double logit = m_.w_out.dot(h_) + m_.b_out;
    if (trace) {
      trace->x.col(t) = x_;
      trace->gi.col(t) = gi;
      trace->gf.col(t) = gf;
      trace->gg.col(t) = gg;
      trace->go.col(t) = go;
      trace->c.col(t) = c_;
      trace->tc.col(t) = tc;
      trace->h.col(t) = h_;
      trace->logits(t) = logit;
    }
    return logit;
  }

 private:
  const AutoregressiveModel& m_;
  Eigen::VectorXd h_, c_, x_;
};

inline void resize_trace(ArTrace& tr, const AutoregressiveModel& m, int steps) {
  tr.x.resize(3 + m.embed, steps);
  tr.gi.resize(m.hidden, steps);
  tr.gf.resize(m.hidden, steps);
  tr.gg.resize(m.hidden, steps);
  tr.go.resize(m.hidden, steps);
  tr.c.resize(m.hidden, steps);
  tr.tc.resize(m.hidden, steps);
  tr.h.resize(m.hidden, steps);
  tr.logits.resize(steps);
}

}  // namespace detail

struct SampleResult {
  AdjacencyMatrix graph;
  double log_prob;
};

inline SampleResult sample(const FactorizedModel& m, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int steps = static_cast<int>(m.logits.size());
  std::vector<std::uint8_t> bits(steps);
  double lp = 0.0;
  for (int t = 0; t < steps; ++t) {
    const int bit = unif(rng) < sigmoid(m.logits(t)) ? 1 : 0;
    bits[t] = static_cast<std::uint8_t>(bit);
    lp += bernoulli_logmass(m.logits(t), bit);
  }
  return {delinearize(m.d, bits), lp};
}

inline SampleResult sample(const AutoregressiveModel& m, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int steps = sequence_length(m.d);
  detail::ArCell cell(m);
  std::vector<std::uint8_t> bits(steps);
  double lp = 0.0;
  int prev = 0;
  for (int t = 0; t < steps; ++t) {
    const double logit = cell.step(prev, t);
    const int bit = unif(rng) < sigmoid(logit) ? 1 : 0;
    bits[ar_position(m.d, t)] = static_cast<std::uint8_t>(bit);
    lp += bernoulli_logmass(logit, bit);
    prev = bit ? 2 : 1;
  }
  return {delinearize(m.d, bits), lp};
}

inline double log_prob(const FactorizedModel& m, const AdjacencyMatrix& a) {
  if (a.dim() != m.d) throw DimensionMismatchError("log_prob: graph dim != model dim");
  const auto bits = linearize(a);
  double lp = 0.0;
  for (int t = 0; t < static_cast<int>(bits.size()); ++t)
    lp += bernoulli_logmass(m.logits(t), bits[t]);
  return lp;
}

inline double log_prob(const AutoregressiveModel& m, const AdjacencyMatrix& a) {
  if (a.dim() != m.d) throw DimensionMismatchError("log_prob: graph dim != model dim");
  const auto bits = linearize(a);
  detail::ArCell cell(m);
  double lp = 0.0;
  int prev = 0;
  for (int t = 0; t < static_cast<int>(bits.size()); ++t) {
    const int bit = bits[ar_position(m.d, t)];
    const double logit = cell.step(prev, t);
    lp += bernoulli_logmass(logit, bit);
    prev = bit ? 2 : 1;
  }
  return lp;
}

// Parameter flattening (fixed so optimizer state lines up across runs):
// factorized -> logits in linearized order;
// autoregressive -> w_in row-major, w_rec row-major, bias, pos_embed
// row-major, w_out, b_out.
inline int num_params(const FactorizedModel& m) { return static_cast<int>(m.logits.size()); }

inline int num_params(const AutoregressiveModel& m) {
  return static_cast<int>(m.w_in.size() + m.w_rec.size() + m.bias.size() + m.pos_embed.size() +
                          m.w_out.size() + 1);
}

namespace detail {

inline void pack_row_major(const Eigen::MatrixXd& w, Eigen::VectorXd& out, int& at) {
  for (int r = 0; r < w.rows(); ++r)
    for (int c = 0; c < w.cols(); ++c) out(at++) = w(r, c);
}

inline void unpack_row_major(Eigen::MatrixXd& w, const Eigen::VectorXd& in, int& at) {
  for (int r = 0; r < w.rows(); ++r)
    for (int c = 0; c < w.cols(); ++c) w(r, c) = in(at++);
}

}  // namespace detail

inline Eigen::VectorXd get_params(const FactorizedModel& m) { return m.logits; }

inline Eigen::VectorXd get_params(const AutoregressiveModel& m) {
  Eigen::VectorXd out(num_params(m));
  int at = 0;
  detail::pack_row_major(m.w_in, out, at);
  detail::pack_row_major(m.w_rec, out, at);
  out.segment(at, m.bias.size()) = m.bias;
  at += static_cast<int>(m.bias.size());
  detail::pack_row_major(m.pos_embed, out, at);
  out.segment(at, m.w_out.size()) = m.w_out;
  at += static_cast<int>(m.w_out.size());
  out(at) = m.b_out;
  return out;
}

inline void set_params(FactorizedModel& m, const Eigen::VectorXd& p) {
  if (p.size() != m.logits.size()) throw DimensionMismatchError("set_params: size mismatch");
  m.logits = p;
}

inline void set_params(AutoregressiveModel& m, const Eigen::VectorXd& p) {
  if (p.size() != num_params(m)) throw DimensionMismatchError("set_params: size mismatch");
  int at = 0;
  detail::unpack_row_major(m.w_in, p, at);
  detail::unpack_row_major(m.w_rec, p, at);
  m.bias = p.segment(at, m.bias.size());
  at += static_cast<int>(m.bias.size());
  detail::unpack_row_major(m.pos_embed, p, at);
  m.w_out = p.segment(at, m.w_out.size());
  at += static_cast<int>(m.w_out.size());
  m.b_out = p(at);
}

inline Eigen::VectorXd grad_log_prob(const FactorizedModel& m, const AdjacencyMatrix& a) {
  if (a.dim() != m.d) throw DimensionMismatchError("grad_log_prob: dim mismatch");
  const auto bits = linearize(a);
  Eigen::VectorXd g(m.logits.size());
  for (int t = 0; t < static_cast<int>(bits.size()); ++t)
    g(t) = bits[t] - sigmoid(m.logits(t));
  return g;
}

// Reverse accumulation through the unrolled recurrence; validated against
// central finite differences in the tests.
inline Eigen::VectorXd grad_log_prob(const AutoregressiveModel& m, const AdjacencyMatrix& a) {
  if (a.dim() != m.d) throw DimensionMismatchError("grad_log_prob: dim mismatch");
  const auto bits = linearize(a);
  const int steps = static_cast<int>(bits.size());
  const int h = m.hidden;

  detail::ArTrace tr;
  detail::resize_trace(tr, m, steps);
  detail::ArCell cell(m);
  int prev = 0;
  for (int t = 0; t < steps; ++t) {
    cell.step(prev, t, &tr);
    prev = bits[ar_position(m.d, t)] ? 2 : 1;
  }

  Eigen::MatrixXd dw_in = Eigen::MatrixXd::Zero(m.w_in.rows(), m.w_in.cols());
  Eigen::MatrixXd dw_rec = Eigen::MatrixXd::Zero(m.w_rec.rows(), m.w_rec.cols());
  Eigen::VectorXd dbias = Eigen::VectorXd::Zero(m.bias.size());
  Eigen::MatrixXd dpos = Eigen::MatrixXd::Zero(m.pos_embed.rows(), m.pos_embed.cols());
  Eigen::VectorXd dw_out = Eigen::VectorXd::Zero(h);
  double db_out = 0.0;

  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(h);
  Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(h);
  Eigen::VectorXd dz(4 * h);
  for (int t = steps - 1; t >= 0; --t) {
    const double dlogit = bits[ar_position(m.d, t)] - sigmoid(tr.logits(t));
    dw_out += dlogit * tr.h.col(t);
    db_out += dlogit;
    Eigen::VectorXd dh = dlogit * m.w_out + dh_next;
    Eigen::VectorXd dout = dh.cwiseProduct(tr.tc.col(t));
    Eigen::VectorXd dc = dh.cwiseProduct(tr.go.col(t))
                             .cwiseProduct(Eigen::VectorXd::Ones(h) -
                                           tr.tc.col(t).cwiseProduct(tr.tc.col(t))) +
                         dc_next;
    Eigen::VectorXd c_prev = t > 0 ? Eigen::VectorXd(tr.c.col(t - 1)) : Eigen::VectorXd::Zero(h);
    Eigen::VectorXd di = dc.cwiseProduct(tr.gg.col(t));
    Eigen::VectorXd dg = dc.cwiseProduct(tr.gi.col(t));
    Eigen::VectorXd df = dc.cwiseProduct(c_prev);
    dz.head(h) = di.cwiseProduct(tr.gi.col(t)).cwiseProduct(Eigen::VectorXd::Ones(h) - tr.gi.col(t));
    dz.segment(h, h) =
        df.cwiseProduct(tr.gf.col(t)).cwiseProduct(Eigen::VectorXd::Ones(h) - tr.gf.col(t));
    dz.segment(2 * h, h) =
        dg.cwiseProduct(Eigen::VectorXd::Ones(h) - tr.gg.col(t).cwiseProduct(tr.gg.col(t)));
    dz.tail(h) = dout.cwiseProduct(tr.go.col(t)).cwiseProduct(Eigen::VectorXd::Ones(h) - tr.go.col(t));

    dw_in += dz * tr.x.col(t).transpose();
    if (t > 0) dw_rec += dz * tr.h.col(t - 1).transpose();
    dbias += dz;
    dpos.row(t) += (m.w_in.rightCols(m.embed).transpose() * dz).transpose();
    dh_next = m.w_rec.transpose() * dz;
    dc_next = dc.cwiseProduct(tr.gf.col(t));
  }

  Eigen::VectorXd g(num_params(m));
  int at = 0;
  detail::pack_row_major(dw_in, g, at);
  detail::pack_row_major(dw_rec, g, at);
  g.segment(at, dbias.size()) = dbias;
  at += static_cast<int>(dbias.size());
  detail::pack_row_major(dpos, g, at);
  g.segment(at, dw_out.size()) = dw_out;
  at += static_cast<int>(dw_out.size());
  g(at) = db_out;
  return g;
}

inline Eigen::MatrixXd edge_marginals(const FactorizedModel& m, int /*num_samples*/, Rng& /*rng*/) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m.d, m.d);
  for (int k = 0; k < m.logits.size(); ++k) {
    const auto [i, j] = position_of(m.d, k);
    out(i, j) = sigmoid(m.logits(k));
  }
  return out;
}

inline Eigen::MatrixXd edge_marginals(const AutoregressiveModel& m, int num_samples, Rng& rng) {
  if (num_samples < 1) throw std::invalid_argument("edge_marginals: num_samples < 1");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m.d, m.d);
  for (int s = 0; s < num_samples; ++s) out += sample(m, rng).graph.as_matrix();
  return out / num_samples;
}

// --- variant dispatch ---

inline int model_dim(const Model& m) {
  return std::visit([](const auto& v) { return v.d; }, m);
}

inline SampleResult sample(const Model& m, Rng& rng) {
  return std::visit([&](const auto& v) { return sample(v, rng); }, m);
}

inline double log_prob(const Model& m, const AdjacencyMatrix& a) {
  return std::visit([&](const auto& v) { return log_prob(v, a); }, m);
}

inline Eigen::VectorXd grad_log_prob(const Model& m, const AdjacencyMatrix& a) {
  return std::visit([&](const auto& v) { return grad_log_prob(v, a); }, m);
}

inline Eigen::MatrixXd edge_marginals(const Model& m, int num_samples, Rng& rng) {
  return std::visit([&](const auto& v) { return edge_marginals(v, num_samples, rng); }, m);
}

inline int num_params(const Model& m) {
  return std::visit([](const auto& v) { return num_params(v); }, m);
}

inline Eigen::VectorXd get_params(const Model& m) {
  return std::visit([](const auto& v) { return get_params(v); }, m);
}

inline void set_params(Model& m, const Eigen::VectorXd& p) {
  std::visit([&](auto& v) { set_params(v, p); }, m);
}

inline std::string family_name(const Model& m) {
  return std::holds_alternative<FactorizedModel>(m) ? "factorized" : "autoregressive";
}

// --- checkpoint serialization ---

inline nlohmann::json model_to_json(const Model& m) {
  nlohmann::json j;
  j["version"] = 1;
  j["family"] = family_name(m);
  j["d"] = model_dim(m);
  if (const auto* ar = std::get_if<AutoregressiveModel>(&m)) {
    j["hidden_size"] = ar->hidden;
    j["embed_size"] = ar->embed;
  }
  const Eigen::VectorXd p = get_params(m);
  j["params"] = std::vector<double>(p.data(), p.data() + p.size());
  return j;
}

inline Model model_from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error("model_from_json: unsupported checkpoint version");
  const int d = j.at("d").get<int>();
  const auto params = j.at("params").get<std::vector<double>>();
  Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(params.data(), params.size());
  const std::string family = j.at("family").get<std::string>();
  if (family == "factorized") {
    FactorizedModel m;
    m.d = d;
    m.logits.resize(sequence_length(d));
    set_params(m, p);
    return m;
  }
  if (family == "autoregressive") {
    AutoregressiveModel m;
    m.d = d;
    m.hidden = j.at("hidden_size").get<int>();
    m.embed = j.at("embed_size").get<int>();
    const int rows = 4 * m.hidden;
    m.w_in.resize(rows, 3 + m.embed);
    m.w_rec.resize(rows, m.hidden);
    m.bias.resize(rows);
    m.pos_embed.resize(sequence_length(d), m.embed);
    m.w_out.resize(m.hidden);
    set_params(m, p);
    return m;
  }
  throw std::runtime_error("model_from_json: unknown family " + family);
}

inline void save_model(const Model& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_model: cannot open " + path);
  os << model_to_json(m).dump(2) << '\n';
}

inline Model load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_model: cannot open " + path);
  nlohmann::json j;
  is >> j;
  return model_from_json(j);
}

}  // namespace dagvi
