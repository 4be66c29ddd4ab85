#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dagvi/graph.hpp"
#include "dagvi/rng.hpp"

namespace dagvi {

// Linear-Gaussian structural model: node j = sum_i weights(i,j) * node i + noise.
struct WeightedScm {
  AdjacencyMatrix graph;
  Eigen::MatrixXd weights;        // nonzero only where graph has an edge
  Eigen::VectorXd noise_variance; // per node
};

struct Dataset {
  Eigen::MatrixXd rows;  // n x d

  int n() const { return static_cast<int>(rows.rows()); }
  int dim() const { return static_cast<int>(rows.cols()); }
};

struct SufficientStats {
  int n = 0;
  Eigen::VectorXd mean;     // (1/n) sum x_i
  Eigen::MatrixXd scatter;  // sum (x_i - mean)(x_i - mean)^T, unnormalized

  int dim() const { return static_cast<int>(mean.size()); }
};

// Random DAG with the given expected edge count: draw a uniform node
// permutation, then include each of the d(d-1)/2 pairs independently with
// probability expected_edges / (d(d-1)/2), oriented along the permutation.
inline AdjacencyMatrix sample_er_dag(int d, double expected_edges, Rng& rng) {
  if (d < 2) throw std::invalid_argument("sample_er_dag: need d >= 2");
  const double max_edges = d * (d - 1) / 2.0;
  if (!(expected_edges > 0.0) || expected_edges > max_edges)
    throw std::invalid_argument("sample_er_dag: expected_edges out of range");
  const double p = expected_edges / max_edges;

  std::vector<int> perm(d);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  AdjacencyMatrix a(d);
  for (int u = 0; u < d; ++u)
    for (int v = u + 1; v < d; ++v)
      if (unif(rng) < p) a.set_edge(perm[u], perm[v]);
  return a;
}

// True iff some single edge reversal stays a DAG in the same Markov class;
// cheap stand-in for "equivalence class larger than the graph itself".
inline bool has_nontrivial_mec(const AdjacencyMatrix& a) {
  const auto vs = v_structures(a);
  for (int i = 0; i < a.dim(); ++i) {
    for (int j = 0; j < a.dim(); ++j) {
      if (!a.edge(i, j)) continue;
      AdjacencyMatrix rev = a;
      rev.set_edge(i, j, false);
      rev.set_edge(j, i, true);
      if (is_acyclic(rev) && v_structures(rev) == vs) return true;
    }
  }
  return false;
}

inline AdjacencyMatrix sample_er_dag_filtered(int d, double expected_edges, Rng& rng,
                                              int max_attempts = 1000) {
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    AdjacencyMatrix a = sample_er_dag(d, expected_edges, rng);
    if (has_nontrivial_mec(a)) return a;
  }
  throw std::runtime_error("sample_er_dag_filtered: no multi-graph equivalence class found");
}

// Edge weights ~ Normal(2, 1), unit noise variance per node.
inline WeightedScm sample_weights(const AdjacencyMatrix& graph, Rng& rng) {
  if (!is_acyclic(graph)) throw CyclicGraphError("sample_weights: graph has a cycle");
  const int d = graph.dim();
  std::normal_distribution<double> weight_dist(2.0, 1.0);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (graph.edge(i, j)) w(i, j) = weight_dist(rng);
  return {graph, w, Eigen::VectorXd::Ones(d)};
}

// Ancestral sampling with the noise draws supplied explicitly (n x d, node
// order); separating the draws from the sweep makes relabeling arguments exact.
inline Dataset simulate_with_noise(const WeightedScm& scm, const Eigen::MatrixXd& noise) {
  const int d = scm.graph.dim();
  const int n = static_cast<int>(noise.rows());
  if (static_cast<int>(noise.cols()) != d)
    throw DimensionMismatchError("simulate_with_noise: noise width != d");
  const auto order = topological_order(scm.graph);

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, d);
  for (int r = 0; r < n; ++r) {
    for (int node : order) {
      double v = noise(r, node);
      for (int i = 0; i < d; ++i)
        if (scm.graph.edge(i, node)) v += scm.weights(i, node) * x(r, i);
      x(r, node) = v;
    }
  }
  return {x};
}

inline Dataset simulate(const WeightedScm& scm, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("simulate: need n >= 1");
  const int d = scm.graph.dim();
  std::normal_distribution<double> std_normal(0.0, 1.0);
  Eigen::MatrixXd noise(n, d);
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < d; ++j)
      noise(r, j) = std::sqrt(scm.noise_variance(j)) * std_normal(rng);
  return simulate_with_noise(scm, noise);
}

inline SufficientStats sufficient_stats(const Dataset& data) {
  if (data.n() < 1) throw std::invalid_argument("sufficient_stats: empty dataset");
  const int n = data.n();
  Eigen::VectorXd mean = data.rows.colwise().mean();
  Eigen::MatrixXd centered = data.rows.rowwise() - mean.transpose();
  Eigen::MatrixXd scatter = centered.transpose() * centered;
  return {n, mean, scatter};
}

// --- file I/O ---

inline void write_csv(const Dataset& data, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_csv: cannot open " + path);
  for (int j = 0; j < data.dim(); ++j) os << (j ? "," : "") << 'X' << (j + 1);
  os << '\n';
  char buf[64];
  for (int r = 0; r < data.n(); ++r) {
    for (int j = 0; j < data.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", data.rows(r, j));
      os << (j ? "," : "") << buf;
    }
    os << '\n';
  }
}

inline Dataset read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_csv: cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("read_csv: empty file " + path);

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur.push_back(c);
      }
    }
    out.push_back(cur);
    return out;
  };

  const int d = static_cast<int>(split(line).size());
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (static_cast<int>(cells.size()) != d)
      throw std::runtime_error("read_csv: inconsistent row length in " + path);
    std::vector<double> row(d);
    for (int j = 0; j < d; ++j) {
      std::size_t pos = 0;
      try {
        row[j] = std::stod(cells[j], &pos);
      } catch (const std::exception&) {
        pos = std::string::npos;
      }
      if (pos != cells[j].size()) throw std::runtime_error("read_csv: bad number '" + cells[j] + "'");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("read_csv: no data rows in " + path);

  Eigen::MatrixXd m(rows.size(), d);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int j = 0; j < d; ++j) m(r, j) = rows[r][j];
  return {m};
}

// {d, edges: [[i, j, weight], ...], noise_variance: [...]}, 1-based node ids
inline nlohmann::json scm_to_json(const WeightedScm& scm) {
  nlohmann::json j;
  const int d = scm.graph.dim();
  j["d"] = d;
  nlohmann::json edges = nlohmann::json::array();
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k)
      if (scm.graph.edge(i, k)) edges.push_back({i + 1, k + 1, scm.weights(i, k)});
  j["edges"] = edges;
  j["noise_variance"] = std::vector<double>(scm.noise_variance.data(),
                                            scm.noise_variance.data() + d);
  return j;
}

inline WeightedScm scm_from_json(const nlohmann::json& j) {
  const int d = j.at("d").get<int>();
  AdjacencyMatrix graph(d);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, d);
  for (const auto& e : j.at("edges")) {
    const int i = e.at(0).get<int>() - 1;
    const int k = e.at(1).get<int>() - 1;
    graph.set_edge(i, k);
    w(i, k) = e.at(2).get<double>();
  }
  const auto nv = j.at("noise_variance").get<std::vector<double>>();
  if (static_cast<int>(nv.size()) != d)
    throw std::invalid_argument("scm_from_json: noise_variance size != d");
  Eigen::VectorXd noise(d);
  for (int i = 0; i < d; ++i) noise(i) = nv[i];
  return {graph, w, noise};
}

}  // namespace dagvi
