#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "magat/autodiff.hpp"
#include "magat/kernels.hpp"

namespace magat::ad {
namespace {

Tensor rand_param(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = u(rng);
  return parameter(std::move(shape), std::move(v));
}

// Fixed random projection so every op is checked through a scalar with
// nontrivial upstream gradient.
Tensor project(const Tensor& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::vector<double> w(t.numel());
  for (double& x : w) x = n(rng);
  return sum(elementwise_mul(t, constant(t.shape(), std::move(w))));
}

std::shared_ptr<const SparseGraph> random_graph(int n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution edge(p);
  AdjacencyMatrix s(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (edge(rng)) s(i, j) = s(j, i) = 1.0;
  return std::make_shared<const SparseGraph>(to_sparse(s));
}

constexpr double kTol = 1e-4;
constexpr int kTrials = 100;

// Runs `kTrials` random instances of an op through the finite-difference oracle.
void fd_trials(const std::function<std::pair<std::function<Tensor()>, std::vector<Tensor>>(std::mt19937_64&)>& make,
               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (int t = 0; t < kTrials; ++t) {
    auto [f, inputs] = make(rng);
    const double err = gradient_check(f, inputs);
    ASSERT_LT(err, kTol) << "trial " << t;
  }
}

TEST(MaskedSoftmax, TwoEqualUnmaskedEntriesSplitEvenly) {
  const Tensor x = constant({1, 4}, {3.0, 3.0, 100.0, -2.0});
  const std::vector<std::uint8_t> mask{1, 1, 0, 0};
  const Tensor y = masked_softmax(x, mask);
  EXPECT_DOUBLE_EQ(y.values()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.values()[1], 0.5);
  EXPECT_EQ(y.values()[2], 0.0);
  EXPECT_EQ(y.values()[3], 0.0);
}

TEST(MaskedSoftmax, FullyMaskedRowIsZero) {
  const Tensor x = constant({2, 3}, {1, 2, 3, 4, 5, 6});
  const std::vector<std::uint8_t> mask{0, 0, 0, 1, 1, 1};
  const Tensor y = masked_softmax(x, mask);
  for (int j = 0; j < 3; ++j) EXPECT_EQ(y.values()[j], 0.0);
}

TEST(MaskedSoftmax, RowsOnSupportSumToOne) {
  std::mt19937_64 rng(1);
  std::bernoulli_distribution keep(0.6);
  for (int t = 0; t < 100; ++t) {
    const Tensor x = rand_param({6, 9}, rng, -20, 20);
    std::vector<std::uint8_t> mask(54);
    for (auto& m : mask) m = keep(rng);
    const Tensor y = masked_softmax(x, mask);
    for (int i = 0; i < 6; ++i) {
      double s = 0.0;
      bool any = false;
      for (int j = 0; j < 9; ++j) {
        s += y.values()[i * 9 + j];
        any = any || mask[i * 9 + j];
        if (!mask[i * 9 + j]) EXPECT_EQ(y.values()[i * 9 + j], 0.0);
      }
      EXPECT_NEAR(s, any ? 1.0 : 0.0, 1e-9);
    }
  }
}

TEST(CrossEntropy, SpikeOnCorrectLabelTendsToZero) {
  const std::vector<int> label{2};
  double prev = std::numeric_limits<double>::infinity();
  for (double spike : {1.0, 5.0, 20.0, 50.0}) {
    const double loss = cross_entropy(constant({1, 5}, {0, 0, spike, 0, 0}), label).item();
    EXPECT_LT(loss, prev);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-20);
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  const std::vector<int> labels{0, 4};
  EXPECT_NEAR(cross_entropy(zeros({2, 5}), labels).item(), 2 * std::log(5.0), 1e-12);
  EXPECT_THROW(cross_entropy(zeros({2, 5}), std::vector<int>{0, 5}), std::invalid_argument);
}

TEST(Backward, SumGivesOnes) {
  std::mt19937_64 rng(2);
  Tensor x = rand_param({3, 4}, rng);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, QuadraticFormMatchesAnalytic) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    Tensor x = rand_param({5, 1}, rng);
    const Tensor w = rand_param({5, 5}, rng);
    // loss = x^T W x as sum(x o (W x))
    backward(sum(elementwise_mul(x, matmul(w, x))));
    for (int i = 0; i < 5; ++i) {
      double expect = 0.0;
      for (int j = 0; j < 5; ++j) expect += (w.values()[i * 5 + j] + w.values()[j * 5 + i]) * x.values()[j];
      EXPECT_NEAR(x.grad()[i], expect, 1e-12);
    }
  }
}

TEST(Backward, SecondCallThrows) {
  std::mt19937_64 rng(4);
  Tensor x = rand_param({2}, rng);
  const Tensor loss = sum(x);
  backward(loss);
  EXPECT_THROW(backward(loss), std::logic_error);
}

TEST(Backward, NonScalarThrows) {
  std::mt19937_64 rng(5);
  EXPECT_THROW(backward(rand_param({3}, rng)), std::invalid_argument);
}

TEST(Backward, GradientsAccumulateUntilZeroed) {
  std::mt19937_64 rng(6);
  Tensor x = rand_param({2}, rng);
  backward(sum(x));
  backward(sum(x));
  EXPECT_EQ(x.grad()[0], 2.0);
  Tensor params[] = {x};
  zero_grad(params);
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Backward, NoGradRecordsNothing) {
  std::mt19937_64 rng(7);
  const Tensor x = rand_param({2, 2}, rng);
  NoGradGuard guard;
  const Tensor y = matmul(x, x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Shapes, MismatchNamesBothShapes) {
  try {
    matmul(zeros({2, 3}), zeros({4, 5}));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4,5]"), std::string::npos);
  }
  EXPECT_THROW(add(zeros({2}), zeros({3})), std::invalid_argument);
  EXPECT_THROW(concat(std::vector<Tensor>{zeros({2, 2}), zeros({3, 3})}, 1), std::invalid_argument);
}

TEST(FiniteDifference, Matmul) {
  fd_trials([](std::mt19937_64& rng) {
    const int m = 1 + rng() % 6, k = 1 + rng() % 6, n = 1 + rng() % 6;
    Tensor a = rand_param({m, k}, rng), b = rand_param({k, n}, rng);
    return std::pair{std::function<Tensor()>([=] { return project(matmul(a, b), 1); }), std::vector{a, b}};
  }, 10);
}

TEST(FiniteDifference, AddBiasScaleAndMul) {
  fd_trials([](std::mt19937_64& rng) {
    Tensor a = rand_param({3, 4}, rng), b = rand_param({3, 4}, rng), c = rand_param({4}, rng);
    return std::pair{std::function<Tensor()>([=] {
                       return project(scale(add_bias(add(elementwise_mul(a, b), a), c), -1.7), 2);
                     }),
                     std::vector{a, b, c}};
  }, 11);
}

TEST(FiniteDifference, ReluAndLeakyRelu) {
  fd_trials([](std::mt19937_64& rng) {
    Tensor a = rand_param({4, 5}, rng);
    return std::pair{std::function<Tensor()>([=] { return project(add(relu(a), leaky_relu(a, 0.2)), 3); }),
                     std::vector{a}};
  }, 12);
}

TEST(FiniteDifference, ReshapeAndConcat) {
  fd_trials([](std::mt19937_64& rng) {
    Tensor a = rand_param({2, 3}, rng), b = rand_param({2, 5}, rng), c = rand_param({4, 2}, rng);
    return std::pair{std::function<Tensor()>([=] {
                       const Tensor cols[] = {a, b};
                       const Tensor joined = concat(cols, 1);  // [2, 8]
                       const Tensor rows[] = {reshape(joined, {4, 4}), reshape(c, {2, 4})};
                       return project(concat(rows, 0), 4);
                     }),
                     std::vector{a, b, c}};
  }, 13);
}

TEST(FiniteDifference, MaskedSoftmax) {
  fd_trials([](std::mt19937_64& rng) {
    Tensor a = rand_param({4, 6}, rng, -3, 3);
    std::vector<std::uint8_t> mask(24);
    for (auto& m : mask) m = rng() % 3 != 0;
    return std::pair{std::function<Tensor()>([=] { return project(masked_softmax(a, mask), 5); }),
                     std::vector{a}};
  }, 14);
}

TEST(FiniteDifference, CrossEntropy) {
  fd_trials([](std::mt19937_64& rng) {
    Tensor a = rand_param({6, 5}, rng, -3, 3);
    std::vector<int> labels(6);
    for (int& l : labels) l = static_cast<int>(rng() % 5);
    return std::pair{std::function<Tensor()>([=] { return cross_entropy(a, labels); }), std::vector{a}};
  }, 15);
}

TEST(FiniteDifference, Conv2d) {
  fd_trials([](std::mt19937_64& rng) {
    const int c = 1 + rng() % 3, co = 1 + rng() % 4;
    const int k = rng() % 2 ? 3 : 1, stride = 1 + rng() % 2, pad = k == 3 ? static_cast<int>(rng() % 2) : 0;
    Tensor x = rand_param({2, 5, 4, c}, rng), w = rand_param({k * k * c, co}, rng), b = rand_param({co}, rng);
    return std::pair{std::function<Tensor()>([=] { return project(conv2d(x, w, b, k, stride, pad), 6); }),
                     std::vector{x, w, b}};
  }, 16);
}

TEST(FiniteDifference, MaxPool) {
  fd_trials([](std::mt19937_64& rng) {
    Tensor x = rand_param({2, 5, 4, 3}, rng);
    return std::pair{std::function<Tensor()>([=] { return project(max_pool(x, 2), 7); }), std::vector{x}};
  }, 17);
}

TEST(FiniteDifference, SampleNorm) {
  fd_trials([](std::mt19937_64& rng) {
    Tensor x = rand_param({3, 2, 3, 4}, rng), g = rand_param({4}, rng), s = rand_param({4}, rng);
    return std::pair{std::function<Tensor()>([=] { return project(sample_norm(x, g, s), 8); }),
                     std::vector{x, g, s}};
  }, 18);
}

TEST(FiniteDifference, EdgeOps) {
  fd_trials([](std::mt19937_64& rng) {
    const int n = 2 + rng() % 7;
    auto g = random_graph(n, 0.5, rng);
    Tensor q = rand_param({n, 3}, rng), k = rand_param({n, 3}, rng);
    Tensor l = rand_param({n, 1}, rng), r = rand_param({n, 1}, rng), x = rand_param({n, 4}, rng);
    return std::pair{std::function<Tensor()>([=] {
                       const Tensor e = add(edge_bilinear(g, q, k), edge_pair_sum(g, l, r));
                       const Tensor a = edge_softmax(g, leaky_relu(e, 0.2));
                       return project(add(attention_shift(g, a, x), graph_shift(g, x)), 9);
                     }),
                     std::vector{q, k, l, r, x}};
  }, 19);
}

TEST(KinkMonitor, RecordsDistanceToNearestKink) {
  const Tensor a = constant({4}, {0.5, -0.02, 3.0, -1.0});
  {
    KinkMonitor m;
    relu(a);
    EXPECT_DOUBLE_EQ(m.margin(), 0.02);
  }
  {
    KinkMonitor outer;
    {
      KinkMonitor inner;
      leaky_relu(scale(a, 10.0), 0.2);
      EXPECT_NEAR(inner.margin(), 0.2, 1e-15);
    }
    EXPECT_TRUE(std::isinf(outer.margin()));  // the inner scope owned that pass
    leaky_relu(a, 1.0);                       // identity has no kink
    EXPECT_TRUE(std::isinf(outer.margin()));
  }
  // max_pool: gap between the two largest entries of a window; exact ties ignored
  KinkMonitor m;
  max_pool(constant({1, 2, 2, 1}, {0.1, 0.4, 0.35, -2.0}), 2);
  EXPECT_NEAR(m.margin(), 0.05, 1e-15);
  KinkMonitor tie;
  max_pool(constant({1, 2, 2, 1}, {0.0, 0.0, 0.0, 0.0}), 2);
  EXPECT_TRUE(std::isinf(tie.margin()));
  EXPECT_EQ(KinkMonitor::active(), &tie);
}

TEST(Determinism, ForwardIsBitwiseRepeatable) {
  std::mt19937_64 rng(20);
  const Tensor x = rand_param({4, 6, 6, 3}, rng), w = rand_param({27, 8}, rng), b = rand_param({8}, rng);
  const Tensor y1 = max_pool(conv2d(x, w, b, 3, 1, 1), 2);
  const Tensor y2 = max_pool(conv2d(x, w, b, 3, 1, 1), 2);
  EXPECT_TRUE(std::equal(y1.values().begin(), y1.values().end(), y2.values().begin()));
}

TEST(Determinism, BackendsAgreeOnConv) {
  std::mt19937_64 rng(21);
  const Tensor x = rand_param({5, 11, 11, 3}, rng), w = rand_param({27, 32}, rng), b = rand_param({32}, rng);
  const Tensor fast = conv2d(x, w, b, 3, 1, 1);
  kernels::ScopedBackend ref(kernels::Backend::Reference);
  const Tensor slow = conv2d(x, w, b, 3, 1, 1);
  for (std::size_t i = 0; i < fast.numel(); ++i) EXPECT_NEAR(fast.values()[i], slow.values()[i], 1e-12);
}

TEST(LrSchedule, CosineEndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(cosine_lr(0), 1e-3);
  EXPECT_NEAR(cosine_lr(300), 1e-6, 1e-18);
  EXPECT_NEAR(cosine_lr(150), (1e-3 + 1e-6) / 2, 1e-15);
  EXPECT_NEAR(cosine_lr(400), 1e-6, 1e-18);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  Tensor p = parameter({2}, {1.0, -1.0});
  Tensor params[] = {p};
  Adam opt(params, AdamConfig{.weight_decay = 0.0});
  backward(sum(scale(p, 3.0)));
  opt.step(params, 0.01);
  // bias-corrected first step is lr * g / (|g| + eps)
  EXPECT_NEAR(p.values()[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.values()[1], -1.0 - 0.01, 1e-9);
}

TEST(Adam, MatchesHandRolledRecurrence) {
  Tensor p = parameter({1}, {0.5});
  Tensor params[] = {p};
  AdamConfig cfg;
  Adam opt(params, cfg);
  double theta = 0.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    zero_grad(params);
    backward(sum(elementwise_mul(p, p)));  // grad 2 theta
    opt.step(params, 1e-2);
    const double g = 2 * theta + cfg.weight_decay * theta;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    theta -= 1e-2 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + cfg.eps);
    EXPECT_NEAR(p.values()[0], theta, 1e-14);
  }
}

TEST(Adam, ZeroLearningRateFreezes) {
  std::mt19937_64 rng(22);
  Tensor p = rand_param({3}, rng);
  const std::vector<double> before(p.values().begin(), p.values().end());
  Tensor params[] = {p};
  Adam opt(params);
  backward(sum(p));
  opt.step(params, 0.0);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), p.values().begin()));
}

TEST(Checkpoint, RoundTripAndCorruption) {
  Checkpoint ck;
  ck.config = "{\"name\":\"x\"}";
  ck.arrays.push_back({"a", {2, 3}, {1, 2, 3, 4, 5, 6}});
  ck.arrays.push_back({"b", {}, {7.5}});
  const std::string bytes = serialize(ck);
  EXPECT_EQ(bytes.substr(0, 4), "MGCK");
  EXPECT_EQ(deserialize(bytes), ck);
  EXPECT_THROW(deserialize(bytes.substr(0, bytes.size() - 1)), std::runtime_error);
  EXPECT_THROW(deserialize("XXXX" + bytes.substr(4)), std::runtime_error);
  std::string bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(deserialize(bad_version), std::runtime_error);

  const std::string path = ::testing::TempDir() + "ck.bin";
  save_checkpoint(ck, path);
  EXPECT_EQ(load_checkpoint(path), ck);
}

}  // namespace
}  // namespace magat::ad
