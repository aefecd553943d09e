#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>

#include "magat/comm_graph.hpp"

namespace magat {
namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) e(i, j) = m(i, j);
  return e;
}

Matrix random_matrix(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (double& v : m.v) v = n(rng);
  return m;
}

AdjacencyMatrix random_graph(int n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution edge(p);
  AdjacencyMatrix s(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (edge(rng)) s(i, j) = s(j, i) = 1.0;
  return s;
}

TEST(BuildAdjacency, FarApartGivesEmptyGraph) {
  const std::vector<Cell> pos{{0, 0}, {10, 0}, {0, 10}};
  const AdjacencyMatrix s = build_adjacency(pos, 5.0);
  for (double v : s.v) EXPECT_EQ(v, 0.0);
}

TEST(BuildAdjacency, BoundaryDistanceIsIncluded) {
  const std::vector<Cell> pos{{0, 0}, {3, 4}};
  const AdjacencyMatrix s = build_adjacency(pos, 5.0);
  EXPECT_EQ(s(0, 1), 1.0);
  EXPECT_EQ(s(1, 0), 1.0);
  EXPECT_EQ(build_adjacency(pos, 4.999)(0, 1), 0.0);
}

TEST(BuildAdjacency, CollinearRobotsFormPath) {
  const std::vector<Cell> pos{{0, 0}, {7, 0}, {14, 0}};
  const AdjacencyMatrix s = build_adjacency(pos, 7.0);
  EXPECT_EQ(s(0, 1), 1.0);
  EXPECT_EQ(s(1, 2), 1.0);
  EXPECT_EQ(s(0, 2), 0.0);
}

TEST(BuildAdjacency, RejectsNonPositiveRadius) {
  const std::vector<Cell> pos{{0, 0}};
  EXPECT_THROW(build_adjacency(pos, 0.0), std::invalid_argument);
}

TEST(BuildAdjacency, SymmetricZeroDiagonalUnitInterval) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> coord(0, 19);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Cell> pos;
    for (int i = 0; i < 12; ++i) pos.push_back({coord(rng), coord(rng)});
    for (auto w : {EdgeWeighting::Binary, EdgeWeighting::DegreeNormalized}) {
      const AdjacencyMatrix s = build_adjacency(pos, 6.0, w);
      for (int i = 0; i < 12; ++i) {
        EXPECT_EQ(s(i, i), 0.0);
        for (int j = 0; j < 12; ++j) {
          EXPECT_EQ(s(i, j), s(j, i));
          EXPECT_GE(s(i, j), 0.0);
          EXPECT_LE(s(i, j), 1.0);
        }
      }
    }
  }
}

TEST(BuildAdjacency, SparseBuilderMatchesDense) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> coord(-30, 30);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Cell> pos;
    for (int i = 0; i < 40; ++i) pos.push_back({coord(rng), coord(rng)});
    for (auto w : {EdgeWeighting::Binary, EdgeWeighting::DegreeNormalized}) {
      const AdjacencyMatrix dense = build_adjacency(pos, 7.0, w);
      const SparseGraph sparse = build_sparse_adjacency(pos, 7.0, w);
      EXPECT_EQ(to_dense(sparse), dense);
      EXPECT_EQ(to_dense(to_sparse(dense)), dense);
    }
  }
}

TEST(GraphShift, ZeroOperatorGivesZero) {
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(4, 3, rng);
  const Matrix y = graph_shift(AdjacencyMatrix(4, 4), x);
  for (double v : y.v) EXPECT_EQ(v, 0.0);
}

TEST(GraphShift, TwoNodeSwap) {
  const AdjacencyMatrix s(2, 2, {0, 1, 1, 0});
  const FeatureMatrix x(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(graph_shift(s, x), FeatureMatrix(2, 2, {3, 4, 1, 2}));
}

TEST(GraphShift, IsolatedNodeRowIsZero) {
  AdjacencyMatrix s(3, 3);
  s(0, 1) = s(1, 0) = 1.0;
  std::mt19937_64 rng(2);
  const Matrix y = graph_shift(s, random_matrix(3, 4, rng));
  for (int f = 0; f < 4; ++f) EXPECT_EQ(y(2, f), 0.0);
}

TEST(GraphShift, MatchesDenseProduct) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const AdjacencyMatrix s = random_graph(15, 0.3, rng);
    const Matrix x = random_matrix(15, 6, rng);
    const Eigen::MatrixXd expect = to_eigen(s) * to_eigen(x);
    const Matrix y = graph_shift(s, x);
    for (int i = 0; i < 15; ++i)
      for (int f = 0; f < 6; ++f) EXPECT_NEAR(y(i, f), expect(i, f), 1e-12);
  }
}

TEST(GraphShift, ShapeMismatchThrows) {
  EXPECT_THROW(graph_shift(AdjacencyMatrix(3, 3), FeatureMatrix(4, 2)), std::invalid_argument);
}

TEST(Permute, IdentityLeavesInputs) {
  std::mt19937_64 rng(4);
  const AdjacencyMatrix s = random_graph(6, 0.5, rng);
  const Matrix x = random_matrix(6, 3, rng);
  const Permuted p = permute(Permutation::identity(6), s, x);
  EXPECT_EQ(p.s, s);
  EXPECT_EQ(p.x, x);
}

TEST(Permute, SwapOfIsolatedRobots) {
  AdjacencyMatrix s(4, 4);
  s(0, 1) = s(1, 0) = 1.0;
  std::mt19937_64 rng(6);
  const Matrix x = random_matrix(4, 2, rng);
  const Permuted p = permute(Permutation({0, 1, 3, 2}), s, x);
  EXPECT_EQ(p.s, s);
  for (int f = 0; f < 2; ++f) {
    EXPECT_EQ(p.x(2, f), x(3, f));
    EXPECT_EQ(p.x(3, f), x(2, f));
  }
}

TEST(Permute, MatchesPermutationMatrixProducts) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 10;
    const Permutation p = Permutation::random(n, rng());
    const AdjacencyMatrix s = random_graph(n, 0.4, rng);
    const Matrix x = random_matrix(n, 3, rng);
    const Eigen::MatrixXd pm = to_eigen(p.matrix());
    const Eigen::MatrixXd xs = pm * to_eigen(x);
    const Eigen::MatrixXd ss = pm * to_eigen(s) * pm.transpose();
    const Permuted out = permute(p, s, x);
    EXPECT_EQ(to_eigen(out.x), xs);
    EXPECT_EQ(to_eigen(out.s), ss);
  }
}

TEST(Permute, ShiftIsEquivariant) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 20;
    const Permutation p = Permutation::random(n, rng());
    const AdjacencyMatrix s = random_graph(n, 0.3, rng);
    const Matrix x = random_matrix(n, 5, rng);
    const Permuted q = permute(p, s, x);
    EXPECT_LT(max_abs_diff(graph_shift(q.s, q.x), permute_rows(p, graph_shift(s, x))), 1e-12);
    // symmetry and zero diagonal survive relabeling
    for (int i = 0; i < n; ++i) {
      EXPECT_EQ(q.s(i, i), 0.0);
      for (int j = 0; j < n; ++j) EXPECT_EQ(q.s(i, j), q.s(j, i));
    }
  }
}

TEST(Permute, InverseUndoes) {
  const Permutation p = Permutation::random(9, 3);
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(9, 2, rng);
  EXPECT_EQ(permute_rows(p.inverse(), permute_rows(p, x)), x);
  EXPECT_THROW(Permutation({0, 0, 1}), std::invalid_argument);
}

TEST(SparseGraph, BlockAppendOffsetsColumns) {
  SparseGraph batch;
  const SparseGraph g = to_sparse(AdjacencyMatrix(2, 2, {0, 1, 1, 0}));
  append_block(batch, g);
  append_block(batch, g);
  const AdjacencyMatrix d = to_dense(batch);
  EXPECT_EQ(d(2, 3), 1.0);
  EXPECT_EQ(d(0, 3), 0.0);
  EXPECT_EQ(batch.num_edges(), 4u);
}

TEST(Coo, DumpListsNonzeros) {
  const std::string text = to_coo(AdjacencyMatrix(2, 2, {0, 1, 1, 0}));
  EXPECT_EQ(text, "# n 2 nnz 2\n0 1 1\n1 0 1\n");
}

}  // namespace
}  // namespace magat
