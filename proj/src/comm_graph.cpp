#include "magat/comm_graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace magat {

Matrix::Matrix(int r, int c, std::vector<double> values) : rows(r), cols(c), v(std::move(values)) {
  if (v.size() != static_cast<std::size_t>(r) * c)
    throw std::invalid_argument("Matrix: " + std::to_string(v.size()) + " values for " +
                                std::to_string(r) + "x" + std::to_string(c));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw std::invalid_argument("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                                " times " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  Matrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}

namespace {

bool within(Cell a, Cell b, double r) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy <= r * r;
}

void check_radius(double r_comm) {
  if (!(r_comm > 0.0)) throw std::invalid_argument("r_comm must be positive");
}

}  // namespace

AdjacencyMatrix build_adjacency(std::span<const Cell> positions, double r_comm,
                                EdgeWeighting weighting) {
  check_radius(r_comm);
  const int n = static_cast<int>(positions.size());
  AdjacencyMatrix s(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (positions[i] != positions[j] && within(positions[i], positions[j], r_comm))
        s(i, j) = s(j, i) = 1.0;
  if (weighting == EdgeWeighting::DegreeNormalized) {
    std::vector<double> deg(n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) deg[i] += s(i, j);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (s(i, j) != 0.0) s(i, j) = 1.0 / std::sqrt(deg[i] * deg[j]);
  }
  return s;
}

FeatureMatrix graph_shift(const AdjacencyMatrix& s, const FeatureMatrix& x) {
  if (s.rows != s.cols || s.cols != x.rows)
    throw std::invalid_argument("graph_shift: S is " + std::to_string(s.rows) + "x" +
                                std::to_string(s.cols) + ", X has " + std::to_string(x.rows) +
                                " rows");
  return matmul(s, x);
}

Permutation::Permutation(std::vector<int> pi) : pi_(std::move(pi)) {
  std::vector<char> seen(pi_.size(), 0);
  for (int p : pi_) {
    if (p < 0 || p >= size() || seen[p]) throw std::invalid_argument("Permutation: not a bijection");
    seen[p] = 1;
  }
}

Permutation Permutation::identity(int n) {
  std::vector<int> pi(n);
  std::iota(pi.begin(), pi.end(), 0);
  return Permutation(std::move(pi));
}

Permutation Permutation::random(int n, std::uint64_t seed) {
  std::vector<int> pi(n);
  std::iota(pi.begin(), pi.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(pi.begin(), pi.end(), rng);
  return Permutation(std::move(pi));
}

Permutation Permutation::inverse() const {
  std::vector<int> inv(pi_.size());
  for (int i = 0; i < size(); ++i) inv[pi_[i]] = i;
  return Permutation(std::move(inv));
}

Matrix Permutation::matrix() const {
  Matrix p(size(), size());
  for (int i = 0; i < size(); ++i) p(pi_[i], i) = 1.0;
  return p;
}

FeatureMatrix permute_rows(const Permutation& p, const FeatureMatrix& x) {
  if (p.size() != x.rows) throw std::invalid_argument("permute_rows: size mismatch");
  FeatureMatrix out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i)
    std::copy_n(&x.v[static_cast<std::size_t>(i) * x.cols], x.cols,
                &out.v[static_cast<std::size_t>(p[i]) * x.cols]);
  return out;
}

AdjacencyMatrix permute_graph(const Permutation& p, const AdjacencyMatrix& s) {
  if (p.size() != s.rows || s.rows != s.cols) throw std::invalid_argument("permute_graph: size mismatch");
  AdjacencyMatrix out(s.rows, s.cols);
  for (int i = 0; i < s.rows; ++i)
    for (int j = 0; j < s.cols; ++j) out(p[i], p[j]) = s(i, j);
  return out;
}

Permuted permute(const Permutation& p, const AdjacencyMatrix& s, const FeatureMatrix& x) {
  return {permute_graph(p, s), permute_rows(p, x)};
}

SparseGraph to_sparse(const AdjacencyMatrix& s) {
  if (s.rows != s.cols) throw std::invalid_argument("to_sparse: S must be square");
  SparseGraph g;
  g.n = s.rows;
  for (int i = 0; i < s.rows; ++i) {
    for (int j = 0; j < s.cols; ++j)
      if (s(i, j) != 0.0) {
        g.col.push_back(j);
        g.weight.push_back(s(i, j));
      }
    g.row_ptr.push_back(static_cast<int>(g.col.size()));
  }
  return g;
}

AdjacencyMatrix to_dense(const SparseGraph& g) {
  AdjacencyMatrix s(g.n, g.n);
  for (int i = 0; i < g.n; ++i)
    for (int e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) s(i, g.col[e]) = g.weight[e];
  return s;
}

SparseGraph build_sparse_adjacency(std::span<const Cell> positions, double r_comm,
                                   EdgeWeighting weighting) {
  check_radius(r_comm);
  const int n = static_cast<int>(positions.size());
  const int bucket = std::max(1, static_cast<int>(std::ceil(r_comm)));
  auto key = [](int bx, int by) {
    return (static_cast<std::int64_t>(bx) << 32) ^ static_cast<std::uint32_t>(by);
  };
  auto floor_div = [](int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
  std::unordered_map<std::int64_t, std::vector<int>> buckets;
  for (int i = 0; i < n; ++i)
    buckets[key(floor_div(positions[i].x, bucket), floor_div(positions[i].y, bucket))].push_back(i);

  SparseGraph g;
  g.n = n;
  std::vector<int> nbrs;
  for (int i = 0; i < n; ++i) {
    nbrs.clear();
    const int bx = floor_div(positions[i].x, bucket), by = floor_div(positions[i].y, bucket);
    for (int ox = -1; ox <= 1; ++ox)
      for (int oy = -1; oy <= 1; ++oy) {
        auto it = buckets.find(key(bx + ox, by + oy));
        if (it == buckets.end()) continue;
        for (int j : it->second)
          if (j != i && positions[i] != positions[j] && within(positions[i], positions[j], r_comm))
            nbrs.push_back(j);
      }
    std::sort(nbrs.begin(), nbrs.end());
    for (int j : nbrs) {
      g.col.push_back(j);
      g.weight.push_back(1.0);
    }
    g.row_ptr.push_back(static_cast<int>(g.col.size()));
  }
  if (weighting == EdgeWeighting::DegreeNormalized)
    for (int i = 0; i < n; ++i)
      for (int e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e)
        g.weight[e] = 1.0 / std::sqrt(static_cast<double>(g.degree(i)) * g.degree(g.col[e]));
  return g;
}

void append_block(SparseGraph& batch, const SparseGraph& g) {
  const int offset = batch.n;
  for (int i = 0; i < g.n; ++i) {
    for (int e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      batch.col.push_back(g.col[e] + offset);
      batch.weight.push_back(g.weight[e]);
    }
    batch.row_ptr.push_back(static_cast<int>(batch.col.size()));
  }
  batch.n += g.n;
}

std::string to_coo(const AdjacencyMatrix& s) {
  std::ostringstream os;
  std::size_t nnz = 0;
  for (double w : s.v) nnz += w != 0.0;
  os << "# n " << s.rows << " nnz " << nnz << '\n';
  os.precision(17);
  for (int i = 0; i < s.rows; ++i)
    for (int j = 0; j < s.cols; ++j)
      if (s(i, j) != 0.0) os << i << ' ' << j << ' ' << s(i, j) << '\n';
  return os.str();
}

}  // namespace magat
