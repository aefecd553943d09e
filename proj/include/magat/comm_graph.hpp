#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "magat/gridworld.hpp"

namespace magat {

/// Dense row-major matrix used for feature matrices and graph shift operators.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
  Matrix(int r, int c, std::vector<double> values);

  double& operator()(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }
  friend bool operator==(const Matrix&, const Matrix&) = default;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

/// Communication graph S_t: symmetric, zero diagonal, weights in [0, 1].
using AdjacencyMatrix = Matrix;
using FeatureMatrix = Matrix;

enum class EdgeWeighting { Binary, DegreeNormalized };

/// s_ij = 1 when 0 < |p_i - p_j| <= r_comm (Euclidean). DegreeNormalized
/// rescales each edge to 1 / sqrt(deg_i deg_j). Throws if r_comm <= 0.
AdjacencyMatrix build_adjacency(std::span<const Cell> positions, double r_comm,
                                EdgeWeighting weighting = EdgeWeighting::Binary);

/// [S X]_if = sum_j s_ij x_jf.
FeatureMatrix graph_shift(const AdjacencyMatrix& s, const FeatureMatrix& x);

/// pi[i] is the new label of robot i, so [P X]_{pi[i]} = X_i.
class Permutation {
 public:
  explicit Permutation(std::vector<int> pi);
  static Permutation identity(int n);
  static Permutation random(int n, std::uint64_t seed);

  int size() const { return static_cast<int>(pi_.size()); }
  int operator[](int i) const { return pi_[i]; }
  Permutation inverse() const;
  Matrix matrix() const;
  /// Reorders per-robot items: out[pi[i]] = items[i].
  template <class T>
  std::vector<T> apply(std::span<const T> items) const {
    std::vector<T> out(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) out[pi_[i]] = items[i];
    return out;
  }

 private:
  std::vector<int> pi_;
};

/// Rows of a feature matrix relabeled: P X.
FeatureMatrix permute_rows(const Permutation& p, const FeatureMatrix& x);
/// Both endpoints relabeled: P S P^T.
AdjacencyMatrix permute_graph(const Permutation& p, const AdjacencyMatrix& s);

struct Permuted {
  AdjacencyMatrix s;
  FeatureMatrix x;
};
Permuted permute(const Permutation& p, const AdjacencyMatrix& s, const FeatureMatrix& x);

/// Compressed sparse rows of a graph shift operator; rows may be offset into a
/// larger block-diagonal batch. Neighbour lists are sorted by column.
struct SparseGraph {
  int n = 0;
  std::vector<int> row_ptr{0};
  std::vector<int> col;
  std::vector<double> weight;

  std::size_t num_edges() const { return col.size(); }
  int degree(int i) const { return row_ptr[i + 1] - row_ptr[i]; }
};

SparseGraph to_sparse(const AdjacencyMatrix& s);
AdjacencyMatrix to_dense(const SparseGraph& g);
/// Builds the sparse graph directly from positions with a cell-hash grid, for
/// large robot counts.
SparseGraph build_sparse_adjacency(std::span<const Cell> positions, double r_comm,
                                   EdgeWeighting weighting = EdgeWeighting::Binary);
/// Appends `g` as a diagonal block of `batch`.
void append_block(SparseGraph& batch, const SparseGraph& g);

/// "i j s_ij" lines for every nonzero entry, preceded by "# n <N> nnz <E>".
std::string to_coo(const AdjacencyMatrix& s);

}  // namespace magat
