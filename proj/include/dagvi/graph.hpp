#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

namespace dagvi {

struct CyclicGraphError : std::runtime_error {
  explicit CyclicGraphError(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionMismatchError : std::invalid_argument {
  explicit DimensionMismatchError(const std::string& what) : std::invalid_argument(what) {}
};

// Directed graph on d nodes as a 0/1 matrix, entry (i,j) = 1 meaning edge i -> j.
// The diagonal is structurally zero.
class AdjacencyMatrix {
 public:
  explicit AdjacencyMatrix(int d) : d_(d), a_(static_cast<std::size_t>(d) * d, 0) {
    if (d < 1) throw std::invalid_argument("AdjacencyMatrix: d must be >= 1");
  }

  int dim() const { return d_; }

  bool edge(int i, int j) const { return a_[idx(i, j)] != 0; }

  void set_edge(int i, int j, bool present = true) {
    if (i == j) throw std::invalid_argument("AdjacencyMatrix: no self loops");
    a_[idx(i, j)] = present ? 1 : 0;
  }

  int edge_count() const {
    int c = 0;
    for (auto v : a_) c += v;
    return c;
  }

  std::vector<int> parents(int node) const {
    std::vector<int> out;
    for (int i = 0; i < d_; ++i)
      if (edge(i, node)) out.push_back(i);
    return out;
  }

  std::uint32_t parent_mask(int node) const {
    std::uint32_t m = 0;
    for (int i = 0; i < d_; ++i)
      if (edge(i, node)) m |= (1u << i);
    return m;
  }

  Eigen::MatrixXd as_matrix() const {
    Eigen::MatrixXd m(d_, d_);
    for (int i = 0; i < d_; ++i)
      for (int j = 0; j < d_; ++j) m(i, j) = edge(i, j) ? 1.0 : 0.0;
    return m;
  }

  static AdjacencyMatrix from_rows(const std::vector<std::vector<int>>& rows) {
    const int d = static_cast<int>(rows.size());
    AdjacencyMatrix a(d);
    for (int i = 0; i < d; ++i) {
      if (static_cast<int>(rows[i].size()) != d)
        throw std::invalid_argument("AdjacencyMatrix: ragged row matrix");
      for (int j = 0; j < d; ++j) {
        const int v = rows[i][j];
        if (v != 0 && v != 1) throw std::invalid_argument("AdjacencyMatrix: entries must be 0/1");
        if (i == j && v != 0) throw std::invalid_argument("AdjacencyMatrix: nonzero diagonal");
        if (v) a.set_edge(i, j);
      }
    }
    return a;
  }

  bool operator==(const AdjacencyMatrix& o) const { return d_ == o.d_ && a_ == o.a_; }
  bool operator!=(const AdjacencyMatrix& o) const { return !(*this == o); }

 private:
  std::size_t idx(int i, int j) const { return static_cast<std::size_t>(i) * d_ + j; }

  int d_;
  std::vector<std::uint8_t> a_;
};

// Integer code for the off-diagonal entries, bijective with AdjacencyMatrix at
// fixed d. Bit k of the code is the k-th linearized entry.
struct GraphIndex {
  std::uint64_t code = 0;
};

inline int sequence_length(int d) { return d * (d - 1); }

inline std::uint64_t num_graph_codes(int d) {
  const int m = sequence_length(d);
  if (m >= 63) throw std::invalid_argument("num_graph_codes: too many nodes to enumerate");
  return std::uint64_t{1} << m;
}

// Fixed linearization: row-major over off-diagonal entries, i.e. the sequence
// (0,1),(0,2),...,(0,d-1),(1,0),(1,2),... of (row, col) positions.
inline std::vector<std::uint8_t> linearize(const AdjacencyMatrix& a) {
  std::vector<std::uint8_t> bits;
  bits.reserve(sequence_length(a.dim()));
  for (int i = 0; i < a.dim(); ++i)
    for (int j = 0; j < a.dim(); ++j)
      if (i != j) bits.push_back(a.edge(i, j) ? 1 : 0);
  return bits;
}

inline AdjacencyMatrix delinearize(int d, const std::vector<std::uint8_t>& bits) {
  if (static_cast<int>(bits.size()) != sequence_length(d))
    throw std::invalid_argument("delinearize: wrong bit count");
  AdjacencyMatrix a(d);
  int k = 0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (i != j) a.set_edge(i, j, bits[k++] != 0);
  return a;
}

// Maps the k-th linearized position back to its (row, col) pair.
inline std::pair<int, int> position_of(int d, int k) {
  const int per_row = d - 1;
  const int i = k / per_row;
  int j = k % per_row;
  if (j >= i) ++j;
  return {i, j};
}

inline GraphIndex graph_index(const AdjacencyMatrix& a) {
  const auto bits = linearize(a);
  std::uint64_t code = 0;
  for (std::size_t k = 0; k < bits.size(); ++k)
    if (bits[k]) code |= (std::uint64_t{1} << k);
  return {code};
}

inline AdjacencyMatrix graph_from_index(int d, std::uint64_t code) {
  const int m = sequence_length(d);
  std::vector<std::uint8_t> bits(m);
  for (int k = 0; k < m; ++k) bits[k] = (code >> k) & 1;
  return delinearize(d, bits);
}

// Acyclicity by iterative source elimination: repeatedly delete a node with no
// remaining incoming edges; the graph is a DAG iff all nodes get deleted.
inline bool is_acyclic(const AdjacencyMatrix& a) {
  const int d = a.dim();
  std::vector<int> indeg(d, 0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (a.edge(i, j)) ++indeg[j];
  std::vector<bool> removed(d, false);
  int count = 0;
  bool progress = true;
  while (progress) {
    progress = false;
    for (int v = 0; v < d; ++v) {
      if (!removed[v] && indeg[v] == 0) {
        removed[v] = true;
        ++count;
        progress = true;
        for (int j = 0; j < d; ++j)
          if (a.edge(v, j)) --indeg[j];
      }
    }
  }
  return count == d;
}

// Deterministic topological order (lowest-index source first).
inline std::vector<int> topological_order(const AdjacencyMatrix& a) {
  const int d = a.dim();
  std::vector<int> indeg(d, 0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (a.edge(i, j)) ++indeg[j];
  std::vector<bool> placed(d, false);
  std::vector<int> order;
  order.reserve(d);
  for (int step = 0; step < d; ++step) {
    int src = -1;
    for (int v = 0; v < d; ++v) {
      if (!placed[v] && indeg[v] == 0) {
        src = v;
        break;
      }
    }
    if (src < 0) throw CyclicGraphError("topological_order: graph has a cycle");
    placed[src] = true;
    order.push_back(src);
    for (int j = 0; j < d; ++j)
      if (a.edge(src, j)) --indeg[j];
  }
  return order;
}

// tr(exp(A)) - d via scaling-and-squaring with a truncated Taylor series.
// Zero exactly on DAGs (all closed walks vanish) and positive on cyclic graphs.
inline double dag_penalty(const AdjacencyMatrix& a) {
  const int d = a.dim();
  Eigen::MatrixXd m = a.as_matrix();
  double norm1 = 0.0;
  for (int j = 0; j < d; ++j) norm1 = std::max(norm1, m.col(j).lpNorm<1>());
  int s = 0;
  while (norm1 > 0.5) {
    norm1 /= 2.0;
    ++s;
  }
  m /= std::pow(2.0, s);

  Eigen::MatrixXd x = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(d, d);
  for (int k = 1; k <= 64; ++k) {
    term = (term * m) / static_cast<double>(k);
    x += term;
    if (term.cwiseAbs().maxCoeff() < 1e-18 * std::max(1.0, x.cwiseAbs().maxCoeff())) break;
  }
  for (int k = 0; k < s; ++k) x = x * x;
  return x.trace() - static_cast<double>(d);
}

// Structural Hamming distance. Each ordered node pair contributes the number
// of single-edge operations (insert, delete, reverse) needed, with a reversal
// counting once.
inline int shd(const AdjacencyMatrix& a, const AdjacencyMatrix& b) {
  if (a.dim() != b.dim()) throw DimensionMismatchError("shd: dimension mismatch");
  int dist = 0;
  for (int i = 0; i < a.dim(); ++i) {
    for (int j = i + 1; j < a.dim(); ++j) {
      const int sa = (a.edge(i, j) ? 1 : 0) | (a.edge(j, i) ? 2 : 0);
      const int sb = (b.edge(i, j) ? 1 : 0) | (b.edge(j, i) ? 2 : 0);
      if (sa == sb) continue;
      // states: 0 none, 1 fwd, 2 bwd, 3 both; everything except none<->both is
      // one operation
      dist += (sa == 0 && sb == 3) || (sa == 3 && sb == 0) ? 2 : 1;
    }
  }
  return dist;
}

inline bool same_skeleton(const AdjacencyMatrix& a, const AdjacencyMatrix& b) {
  if (a.dim() != b.dim()) throw DimensionMismatchError("same_skeleton: dimension mismatch");
  for (int i = 0; i < a.dim(); ++i)
    for (int j = i + 1; j < a.dim(); ++j)
      if ((a.edge(i, j) || a.edge(j, i)) != (b.edge(i, j) || b.edge(j, i))) return false;
  return true;
}

// Colliders i -> k <- j with i, j non-adjacent; returned as (min(i,j), max(i,j), k).
inline std::set<std::tuple<int, int, int>> v_structures(const AdjacencyMatrix& a) {
  std::set<std::tuple<int, int, int>> out;
  const int d = a.dim();
  for (int k = 0; k < d; ++k) {
    for (int i = 0; i < d; ++i) {
      if (i == k || !a.edge(i, k)) continue;
      for (int j = i + 1; j < d; ++j) {
        if (j == k || !a.edge(j, k)) continue;
        if (a.edge(i, j) || a.edge(j, i)) continue;
        out.insert({i, j, k});
      }
    }
  }
  return out;
}

// Same skeleton and same v-structures; meaningful for DAG inputs.
inline bool markov_equivalent(const AdjacencyMatrix& a, const AdjacencyMatrix& b) {
  return same_skeleton(a, b) && v_structures(a) == v_structures(b);
}

inline nlohmann::json adjacency_to_json(const AdjacencyMatrix& a) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < a.dim(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < a.dim(); ++j) row.push_back(a.edge(i, j) ? 1 : 0);
    rows.push_back(row);
  }
  return rows;
}

inline AdjacencyMatrix adjacency_from_json(const nlohmann::json& j) {
  std::vector<std::vector<int>> rows;
  for (const auto& r : j) rows.push_back(r.get<std::vector<int>>());
  return AdjacencyMatrix::from_rows(rows);
}

// Edge-list interchange, one "i j" line per edge, 1-based node ids.
inline void write_edge_list(const AdjacencyMatrix& a, std::ostream& os) {
  for (int i = 0; i < a.dim(); ++i)
    for (int j = 0; j < a.dim(); ++j)
      if (a.edge(i, j)) os << (i + 1) << ' ' << (j + 1) << '\n';
}

inline AdjacencyMatrix read_edge_list(int d, std::istream& is) {
  AdjacencyMatrix a(d);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    int i = 0, j = 0;
    if (!(ls >> i >> j)) throw std::invalid_argument("read_edge_list: malformed line: " + line);
    if (i < 1 || i > d || j < 1 || j > d)
      throw std::invalid_argument("read_edge_list: node id out of range");
    a.set_edge(i - 1, j - 1);
  }
  return a;
}

}  // namespace dagvi
