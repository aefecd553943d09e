#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>
#include <tuple>
#include <vector>

#include "magat/kernels.hpp"

namespace magat::kernels {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

class GemmShapes : public ::testing::TestWithParam<std::tuple<int, int, int, bool, bool>> {};

TEST_P(GemmShapes, BothBackendsMatchEigen) {
  const auto [m, n, k, ta, tb] = GetParam();
  std::mt19937_64 rng(m * 131 + n * 17 + k);
  const int ar = ta ? k : m, ac = ta ? m : k;
  const int br = tb ? n : k, bc = tb ? k : n;
  const auto a = random_values(static_cast<std::size_t>(ar) * ac, rng);
  const auto b = random_values(static_cast<std::size_t>(br) * bc, rng);
  const auto c0 = random_values(static_cast<std::size_t>(m) * n, rng);

  Eigen::Map<const RowMat> ea(a.data(), ar, ac), eb(b.data(), br, bc), ec(c0.data(), m, n);
  const RowMat opa = ta ? RowMat(ea.transpose()) : RowMat(ea);
  const RowMat opb = tb ? RowMat(eb.transpose()) : RowMat(eb);
  const RowMat expect = opa * opb + 0.5 * ec;

  for (auto fn : {&gemm_reference, &gemm_parallel}) {
    std::vector<double> c = c0;
    fn(ta, tb, m, n, k, a.data(), ac, b.data(), bc, 0.5, c.data(), n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ASSERT_NEAR(c[i * n + j], expect(i, j), 1e-11 * (k + 1)) << i << "," << j;
  }
}

INSTANTIATE_TEST_SUITE_P(Shapes, GemmShapes,
                         ::testing::Values(std::make_tuple(1, 1, 1, false, false),
                                           std::make_tuple(7, 5, 3, false, false),
                                           std::make_tuple(33, 17, 300, false, false),
                                           std::make_tuple(130, 70, 9, true, false),
                                           std::make_tuple(65, 600, 20, false, true),
                                           std::make_tuple(19, 23, 513, true, true),
                                           std::make_tuple(256, 5, 128, false, false)));

TEST(Gemm, BetaZeroIgnoresGarbage) {
  std::vector<double> a{1, 2, 3, 4}, b{1, 0, 0, 1};
  for (auto fn : {&gemm_reference, &gemm_parallel}) {
    std::vector<double> c(4, std::numeric_limits<double>::quiet_NaN());
    fn(false, false, 2, 2, 2, a.data(), 2, b.data(), 2, 0.0, c.data(), 2);
    EXPECT_EQ(c, a);
  }
}

TEST(Gemm, ParallelIsBitwiseRepeatable) {
  std::mt19937_64 rng(2);
  const auto a = random_values(300 * 200, rng), b = random_values(200 * 90, rng);
  std::vector<double> c1(300 * 90), c2(300 * 90);
  gemm_parallel(false, false, 300, 90, 200, a.data(), 200, b.data(), 90, 0.0, c1.data(), 90);
  gemm_parallel(false, false, 300, 90, 200, a.data(), 200, b.data(), 90, 0.0, c2.data(), 90);
  EXPECT_EQ(c1, c2);
}

TEST(Im2col, BackendsAgreeAndAdjointHolds) {
  std::mt19937_64 rng(3);
  for (auto [k, stride, pad] : {std::tuple{3, 1, 1}, std::tuple{1, 1, 0}, std::tuple{3, 2, 0}}) {
    ConvShape s{3, 7, 6, 4, k, stride, pad};
    const auto x = random_values(3u * 7 * 6 * 4, rng);
    std::vector<double> c1(s.patch_rows() * s.patch_cols()), c2(c1.size());
    im2col_reference(s, x.data(), c1.data());
    im2col_parallel(s, x.data(), c2.data());
    EXPECT_EQ(c1, c2);

    // <im2col(x), y> == <x, col2im(y)>
    const auto y = random_values(c1.size(), rng);
    std::vector<double> d1(x.size(), 0.0), d2(x.size(), 0.0);
    col2im_reference(s, y.data(), d1.data());
    col2im_parallel(s, y.data(), d2.data());
    EXPECT_EQ(d1, d2);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += c1[i] * y[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * d1[i];
    EXPECT_NEAR(lhs, rhs, 1e-10);
  }
}

TEST(Im2col, PaddingIsZeroAndCenterIsPixel) {
  ConvShape s{1, 2, 2, 1, 3, 1, 1};
  const std::vector<double> x{1, 2, 3, 4};
  std::vector<double> cols(s.patch_rows() * s.patch_cols());
  im2col(s, x.data(), cols.data());
  // output pixel (0,0): patch rows y=-1..1, x=-1..1
  const std::vector<double> first(cols.begin(), cols.begin() + 9);
  EXPECT_EQ(first, (std::vector<double>{0, 0, 0, 0, 1, 2, 0, 3, 4}));
}

TEST(Backend, ScopedSwitchRestores) {
  const Backend before = backend();
  {
    ScopedBackend guard(Backend::Reference);
    EXPECT_EQ(backend(), Backend::Reference);
  }
  EXPECT_EQ(backend(), before);
}

}  // namespace
}  // namespace magat::kernels
