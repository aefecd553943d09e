#include "magat/verify.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <random>
#include <sstream>

#include "magat/evaluation.hpp"
#include "magat/expert.hpp"
#include "magat/model.hpp"

namespace magat::verify {
namespace {

using ad::Tensor;

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

struct SingleThread {
  int saved = omp_get_max_threads();
  SingleThread() { omp_set_num_threads(1); }
  ~SingleThread() { omp_set_num_threads(saved); }
};

void fail(SuiteResult& r, const std::string& what) {
  if (r.failures++ == 0) r.note = what;
}

Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, bool param, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = n(rng);
  return param ? ad::parameter(std::move(shape), std::move(v)) : ad::constant(std::move(shape), std::move(v));
}

AdjacencyMatrix random_adjacency(int n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution edge(p);
  AdjacencyMatrix s(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (edge(rng)) s(i, j) = s(j, i) = 1.0;
  return s;
}

ad::GraphPtr graph_of(const AdjacencyMatrix& s) { return std::make_shared<const SparseGraph>(to_sparse(s)); }

Matrix as_matrix(const Tensor& t) { return Matrix(t.dim(0), t.dim(1), {t.values().begin(), t.values().end()}); }

std::vector<HeadParams> random_heads(LayerKind kind, int heads, int f, int g, int taps, std::mt19937_64& rng,
                                     bool param = false) {
  std::vector<HeadParams> out(heads);
  for (auto& h : out) {
    for (int k = 0; k < taps; ++k) h.taps.push_back(random_tensor({f, g}, rng, param, 0.5));
    if (kind == LayerKind::MAGAT) h.key_query = random_tensor({f, f}, rng, param, 0.5);
    if (kind == LayerKind::GAT) {
      h.score_left = random_tensor({g, 1}, rng, param, 0.5);
      h.score_right = random_tensor({g, 1}, rng, param, 0.5);
    }
  }
  return out;
}

std::vector<double> random_observations(int robots, int size, std::mt19937_64& rng) {
  std::bernoulli_distribution on(0.2);
  std::vector<double> obs(static_cast<std::size_t>(robots) * kObservationChannels * size * size);
  for (double& v : obs) v = on(rng);
  return obs;
}

std::vector<double> permute_robots(const Permutation& p, std::span<const double> obs, int robots) {
  const std::size_t per = obs.size() / robots;
  std::vector<double> out(obs.size());
  for (int i = 0; i < robots; ++i) std::copy_n(obs.begin() + i * per, per, out.begin() + p[i] * per);
  return out;
}

}  // namespace

SuiteResult equivariance(std::size_t trials, std::uint64_t seed) {
  const Stopwatch clock;
  SuiteResult r;
  r.name = "permutation equivariance";
  std::mt19937_64 rng(seed);
  constexpr LayerKind kinds[] = {LayerKind::GNN, LayerKind::GAT, LayerKind::MAGAT};
  for (std::size_t t = 0; t < trials; ++t) {
    ++r.trials;
    const int n = 1 + static_cast<int>(rng() % 20);
    const AdjacencyMatrix s = random_adjacency(n, std::uniform_real_distribution<double>(0.05, 0.7)(rng), rng);
    const Permutation p = Permutation::random(n, rng());
    double err = 0.0;
    if (t % 10 == 9) {
      // whole model: observations through CNN, graph layer and action head
      ModelConfig cfg = ModelConfig::parse(t % 20 == 9 ? "MAGAT-F-32-P2" : "GAT-B-16");
      const Model model(cfg, rng());
      const int size = cfg.input_size();
      const auto obs = random_observations(n, size, rng);
      const auto moved = permute_robots(p, obs, n);
      const Matrix y = as_matrix(model.logits(observation_batch(obs, n, size), graph_of(s)));
      const Matrix yp = as_matrix(model.logits(observation_batch(moved, n, size), graph_of(permute_graph(p, s))));
      err = max_abs_diff(permute_rows(p, y), yp);
    } else {
      ModelConfig cfg;
      cfg.kind = kinds[t % 3];
      cfg.heads = 1 + static_cast<int>(rng() % 3);
      const int f = 2 + static_cast<int>(rng() % 7);
      const auto heads = random_heads(cfg.kind, cfg.heads, f, f, 2, rng);
      const Matrix x = as_matrix(random_tensor({n, f}, rng, false));
      const Permuted q = permute(p, s, x);
      const Matrix y = as_matrix(layer_forward(cfg, graph_of(s), ad::constant({n, f}, x.v), heads));
      const Matrix yq = as_matrix(layer_forward(cfg, graph_of(q.s), ad::constant({n, f}, q.x.v), heads));
      err = max_abs_diff(permute_rows(p, y), yq);
    }
    r.worst = std::max(r.worst, err);
    if (!(err < 1e-9)) fail(r, "trial " + std::to_string(t) + ": error " + std::to_string(err));
  }
  r.seconds = clock.seconds();
  return r;
}

SuiteResult time_invariance(std::size_t trials, std::uint64_t seed) {
  const Stopwatch clock;
  const SingleThread one;
  SuiteResult r;
  r.name = "time invariance";
  std::mt19937_64 rng(seed);
  const Model model(ModelConfig::parse("MAGAT-F-32-P2"), seed);
  const int size = model.config().input_size();
  ad::NoGradGuard no_grad;
  for (std::size_t t = 0; t < trials; ++t) {
    ++r.trials;
    const int n = 1 + static_cast<int>(rng() % 20);
    const auto obs = random_observations(n, size, rng);
    const auto g = graph_of(random_adjacency(n, 0.3, rng));
    const Tensor first = model.logits(observation_batch(obs, n, size), g);
    // an unrelated pass in between must leave no trace
    const int m = 1 + static_cast<int>(rng() % 20);
    model.logits(observation_batch(random_observations(m, size, rng), m, size), graph_of(random_adjacency(m, 0.5, rng)));
    const Tensor again = model.logits(observation_batch(obs, n, size), g);
    if (!std::equal(first.values().begin(), first.values().end(), again.values().begin(), again.values().end()))
      fail(r, "trial " + std::to_string(t) + ": logits differ");
  }
  r.seconds = clock.seconds();
  return r;
}

SuiteResult attention_normalization(std::size_t trials, std::uint64_t seed) {
  const Stopwatch clock;
  SuiteResult r;
  r.name = "attention normalization";
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    ++r.trials;
    const int n = 1 + static_cast<int>(rng() % 20);
    const AdjacencyMatrix s = random_adjacency(n, std::uniform_real_distribution<double>(0.0, 0.5)(rng), rng);
    const auto g = graph_of(s);
    const int f = 2 + static_cast<int>(rng() % 6);
    const Tensor x = random_tensor({n, f}, rng, false, 2.0);
    ModelConfig cfg;
    cfg.kind = t % 2 ? LayerKind::GAT : LayerKind::MAGAT;
    const auto heads = random_heads(cfg.kind, 1, f, f, 2, rng);
    const Matrix e = edge_values_to_dense(*g, head_attention(cfg, g, x, heads[0]).values());
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      double row = 0.0;
      for (int j = 0; j < n; ++j) {
        if (s(i, j) == 0.0 && e(i, j) != 0.0) ok = false;
        row += e(i, j);
      }
      const double target = g->degree(i) ? 1.0 : 0.0;
      const double err = g->degree(i) ? std::abs(row - 1.0) : std::abs(row);
      r.worst = std::max(r.worst, err);
      if (g->degree(i) ? err > 1e-9 : row != target) ok = false;
    }
    if (!ok) fail(r, "trial " + std::to_string(t) + " (" + std::string(to_string(cfg.kind)) + ")");
  }
  r.seconds = clock.seconds();
  return r;
}

SuiteResult attention_reduces_to_gnn(std::size_t trials, std::uint64_t seed) {
  const Stopwatch clock;
  SuiteResult r;
  r.name = "all-ones attention equals GNN";
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    ++r.trials;
    const int n = 1 + static_cast<int>(rng() % 20);
    const auto g = graph_of(random_adjacency(n, 0.3, rng));
    const int f = 2 + static_cast<int>(rng() % 6);
    const Tensor x = random_tensor({n, f}, rng, false);
    ModelConfig gnn;
    gnn.kind = LayerKind::GNN;
    gnn.heads = 1 + static_cast<int>(rng() % 3);
    const auto heads = random_heads(LayerKind::MAGAT, gnn.heads, f, f, 2, rng);
    const Tensor ones = ad::constant({static_cast<int>(g->num_edges())}, std::vector<double>(g->num_edges(), 1.0));
    std::vector<Tensor> parts;
    for (const auto& h : heads) parts.push_back(ad::relu(graph_conv(g, x, ones, h.taps)));
    const Matrix forced = as_matrix(ad::concat(parts, 1));
    const Matrix plain = as_matrix(layer_forward(gnn, g, x, heads));
    const double err = max_abs_diff(forced, plain);
    r.worst = std::max(r.worst, err);
    if (!(err < 1e-12)) fail(r, "trial " + std::to_string(t) + ": error " + std::to_string(err));
  }
  r.seconds = clock.seconds();
  return r;
}

namespace {

// Fixed random projection so each op sees a nontrivial upstream gradient.
Tensor project(const Tensor& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::vector<double> w(t.numel());
  for (double& x : w) x = n(rng);
  return ad::sum(ad::elementwise_mul(t, ad::constant(t.shape(), std::move(w))));
}

// Central differences are meaningless across a kink, so inputs whose forward
// pass comes closer than `margin` to one are redrawn. Single ops see O(1)
// inputs and get a wide margin; the full model has tens of thousands of ReLU
// inputs, most of which a single-coordinate step barely moves, and uses the
// step size itself.
constexpr double kOpKinkMargin = 1e-3;
constexpr double kModelKinkMargin = 1e-5;

bool smooth_at(const std::function<Tensor()>& f, double margin) {
  const ad::NoGradGuard no_grad;
  const ad::KinkMonitor monitor;
  f();
  return monitor.margin() >= margin;
}

void too_many_redraws(std::size_t& rejected) {
  if (++rejected > 100000) throw std::runtime_error("gradient suite: no kink-free draw found");
}

struct GradCase {
  std::function<Tensor()> f;
  std::vector<Tensor> inputs;
  std::size_t max_coords = 0;
};
using GradMaker = std::function<GradCase(std::mt19937_64&)>;

std::vector<std::pair<std::string, GradMaker>> gradient_cases() {
  using namespace ad;
  auto P = [](Shape s, std::mt19937_64& rng) { return random_tensor(std::move(s), rng, true); };
  std::vector<std::pair<std::string, GradMaker>> c;
  c.emplace_back("matmul", [=](std::mt19937_64& rng) {
    const int m = 1 + rng() % 6, k = 1 + rng() % 6, n = 1 + rng() % 6;
    Tensor a = P({m, k}, rng), b = P({k, n}, rng);
    return GradCase{[=] { return project(matmul(a, b), 1); }, {a, b}};
  });
  c.emplace_back("linear", [=](std::mt19937_64& rng) {
    Tensor x = P({4, 3}, rng), w = P({3, 5}, rng), b = P({5}, rng);
    return GradCase{[=] { return project(linear(x, w, b), 2); }, {x, w, b}};
  });
  c.emplace_back("add/add_bias/mul/scale/sum", [=](std::mt19937_64& rng) {
    Tensor a = P({3, 4}, rng), b = P({3, 4}, rng), v = P({4}, rng);
    return GradCase{[=] { return add(project(scale(add_bias(add(elementwise_mul(a, b), a), v), -1.7), 3), sum(b)); },
                    {a, b, v}};
  });
  c.emplace_back("relu/leaky_relu", [=](std::mt19937_64& rng) {
    Tensor a = P({4, 5}, rng);
    return GradCase{[=] { return project(add(relu(a), leaky_relu(a, 0.2)), 4); }, {a}};
  });
  c.emplace_back("reshape/concat", [=](std::mt19937_64& rng) {
    Tensor a = P({2, 3}, rng), b = P({2, 5}, rng), d = P({4, 2}, rng);
    return GradCase{[=] {
                      const Tensor cols[] = {a, b};
                      const Tensor rows[] = {reshape(concat(cols, 1), {4, 4}), reshape(d, {2, 4})};
                      return project(concat(rows, 0), 5);
                    },
                    {a, b, d}};
  });
  c.emplace_back("masked_softmax", [=](std::mt19937_64& rng) {
    Tensor a = P({4, 6}, rng);
    std::vector<std::uint8_t> mask(24);
    for (auto& m : mask) m = rng() % 3 != 0;
    return GradCase{[=] { return project(masked_softmax(a, mask), 6); }, {a}};
  });
  c.emplace_back("cross_entropy", [=](std::mt19937_64& rng) {
    Tensor a = P({6, 5}, rng);
    std::vector<int> labels(6);
    for (int& l : labels) l = static_cast<int>(rng() % 5);
    return GradCase{[=] { return cross_entropy(a, labels); }, {a}};
  });
  c.emplace_back("conv2d", [=](std::mt19937_64& rng) {
    const int ch = 1 + rng() % 3, co = 1 + rng() % 4;
    const int k = rng() % 2 ? 3 : 1, stride = 1 + rng() % 2, pad = k == 3 ? static_cast<int>(rng() % 2) : 0;
    Tensor x = P({2, 5, 4, ch}, rng), w = P({k * k * ch, co}, rng), b = P({co}, rng);
    return GradCase{[=] { return project(conv2d(x, w, b, k, stride, pad), 7); }, {x, w, b}};
  });
  c.emplace_back("max_pool", [=](std::mt19937_64& rng) {
    Tensor x = P({2, 5, 4, 3}, rng);
    return GradCase{[=] { return project(max_pool(x, 2), 8); }, {x}};
  });
  c.emplace_back("sample_norm", [=](std::mt19937_64& rng) {
    Tensor x = P({3, 2, 3, 4}, rng), g = P({4}, rng), s = P({4}, rng);
    return GradCase{[=] { return project(sample_norm(x, g, s), 9); }, {x, g, s}};
  });
  c.emplace_back("edge ops", [=](std::mt19937_64& rng) {
    const int n = 2 + rng() % 7;
    auto g = graph_of(random_adjacency(n, 0.5, rng));
    Tensor q = P({n, 3}, rng), k = P({n, 3}, rng), l = P({n, 1}, rng), r = P({n, 1}, rng), x = P({n, 4}, rng);
    return GradCase{[=] {
                      const Tensor e = add(edge_bilinear(g, q, k), edge_pair_sum(g, l, r));
                      const Tensor a = edge_softmax(g, leaky_relu(e, 0.2));
                      return project(add(attention_shift(g, a, x), graph_shift(g, x)), 10);
                    },
                    {q, k, l, r, x}};
  });
  for (LayerKind kind : {LayerKind::GNN, LayerKind::GAT, LayerKind::MAGAT}) {
    c.emplace_back(std::string(to_string(kind)) + " layer", [=](std::mt19937_64& rng) {
      ModelConfig cfg;
      cfg.kind = kind;
      cfg.heads = 2;
      const int n = 2 + rng() % 6;
      auto g = graph_of(random_adjacency(n, 0.6, rng));
      Tensor x = random_tensor({n, 4}, rng, true, 0.7);
      auto heads = random_heads(kind, 2, 4, 3, 2, rng, true);
      std::vector<Tensor> inputs{x};
      for (auto& h : heads) {
        for (auto& t : h.taps) inputs.push_back(t);
        for (auto* t : {&h.key_query, &h.score_left, &h.score_right})
          if (t->defined()) inputs.push_back(*t);
      }
      std::vector<int> labels(n);
      for (int& l : labels) l = static_cast<int>(rng() % 6);
      return GradCase{[=] { return cross_entropy(layer_forward(cfg, g, x, heads), labels); }, inputs};
    });
  }
  return c;
}

}  // namespace

SuiteResult gradients(std::size_t trials_per_op, std::uint64_t seed) {
  const Stopwatch clock;
  SuiteResult r;
  r.name = "finite-difference gradients";
  std::mt19937_64 rng(seed);
  std::ostringstream summary;
  std::size_t rejected = 0;
  for (const auto& [name, make] : gradient_cases()) {
    double worst = 0.0;
    for (std::size_t t = 0; t < trials_per_op; ++t) {
      ++r.trials;
      GradCase gc = make(rng);
      while (!smooth_at(gc.f, kOpKinkMargin)) {
        too_many_redraws(rejected);
        gc = make(rng);
      }
      const double err = ad::gradient_check(gc.f, gc.inputs, 1e-5, gc.max_coords, rng());
      worst = std::max(worst, err);
      if (!(err < 1e-4)) fail(r, name + " trial " + std::to_string(t) + ": " + std::to_string(err));
    }
    r.worst = std::max(r.worst, worst);
    summary << name << ' ' << worst << "; ";
  }

  // End-to-end: full-width MAGAT-F-16 on three robots placed on a small
  // random map. Constant-initialised parameters (biases, norm gain and
  // shift) get a small jitter first; at exactly zero, dead channels sit on a
  // ReLU kink where central differences are meaningless. Every parameter
  // tensor is probed at up to 24 seeded coordinates.
  const ModelConfig e2e = ModelConfig::parse("MAGAT-F-16");
  const int size = e2e.input_size();
  for (int t = 0; t < 3; ++t) {
    ++r.trials;
    std::optional<Model> model;
    std::vector<double> obs;
    ad::GraphPtr g;
    std::vector<int> labels(3);
    auto f = [&] { return ad::cross_entropy(model->logits(observation_batch(obs, 3, size), g), labels); };
    auto draw = [&] {
      model.emplace(e2e, rng());
      std::normal_distribution<double> jitter(0.0, 0.05);
      for (auto& p : model->parameters()) {
        auto v = p.mutable_values();
        if (std::all_of(v.begin(), v.end(), [&](double a) { return a == v[0]; }))
          for (double& x : v) x += jitter(rng);
      }
      const GridMap map = generate_map(8, 8, 0.15, rng());
      auto free = map.free_cells();
      std::shuffle(free.begin(), free.end(), rng);
      const std::vector<Cell> pos(free.begin(), free.begin() + 3), goals(free.begin() + 3, free.begin() + 6);
      obs.assign(3 * kObservationChannels * size * size, 0.0);
      observe_all(pos, map, goals, e2e.fov, obs);
      g = std::make_shared<const SparseGraph>(build_sparse_adjacency(pos, 7.0));
      for (int& l : labels) l = static_cast<int>(rng() % kNumActions);
    };
    for (draw(); !smooth_at(f, kModelKinkMargin); draw()) too_many_redraws(rejected);
    const double err = ad::gradient_check(f, model->parameters(), 1e-5, 24, rng());
    r.worst = std::max(r.worst, err);
    summary << "MAGAT-F-16 end-to-end " << err << "; ";
    if (!(err < 1e-4)) fail(r, "MAGAT-F-16 end-to-end: " + std::to_string(err));
  }
  summary << rejected << " draws rejected near a kink";
  if (r.failures == 0) r.note = summary.str();
  r.seconds = clock.seconds();
  return r;
}

SuiteResult ecbs_soundness(std::size_t instances, std::uint64_t seed) {
  const Stopwatch clock;
  SuiteResult r;
  r.name = "ECBS soundness";
  std::mt19937_64 rng(seed);
  PlannerConfig planner;
  std::size_t solvable = 0;
  while (r.trials < instances) {
    const int side = rng() % 2 ? 5 : 4;
    const int robots = rng() % 2 ? 3 : 2;
    const double density = std::uniform_real_distribution<double>(0.1, 0.2)(rng);
    GridWorldCase c;
    c.map = generate_map(side, side, density, rng());
    auto free = c.map.free_cells();
    if (static_cast<int>(free.size()) < 2 * robots) continue;
    std::shuffle(free.begin(), free.end(), rng);
    c.starts.assign(free.begin(), free.begin() + robots);
    c.goals.assign(free.begin() + robots, free.begin() + 2 * robots);
    c.case_id = "ecbs-" + std::to_string(r.trials);
    ++r.trials;

    const OracleResult oracle = joint_state_oracle(c);
    const PlanResult plan = ecbs_solve(c, planner);
    if (!oracle.flowtime) {
      if (plan) {
        const auto v = validate_solution(c, plan.solution->paths);
        if (v.collision_free && v.all_arrive) fail(r, c.case_id + ": solved an instance the oracle proves unsolvable");
      }
      continue;
    }
    ++solvable;
    if (!plan) {
      fail(r, c.case_id + ": solvable instance reported " + std::string(to_string(plan.failure)));
      continue;
    }
    const auto v = validate_solution(c, plan.solution->paths);
    if (!v.collision_free || !v.all_arrive) {
      fail(r, c.case_id + ": invalid solution");
      continue;
    }
    const double ratio = *oracle.flowtime ? static_cast<double>(v.flowtime) / *oracle.flowtime : 1.0;
    r.worst = std::max(r.worst, ratio);
    if (v.flowtime > planner.bound * *oracle.flowtime + 1e-9)
      fail(r, c.case_id + ": flowtime " + std::to_string(v.flowtime) + " vs optimum " +
                  std::to_string(*oracle.flowtime));
  }
  if (r.failures == 0)
    r.note = std::to_string(solvable) + " solvable, " + std::to_string(r.trials - solvable) + " proven unsolvable";
  r.seconds = clock.seconds();
  return r;
}

SuiteResult metric_identities(std::size_t cases, std::uint64_t seed) {
  const Stopwatch clock;
  SuiteResult r;
  r.name = "metric identities";

  // planted failure: two robots, expert lengths 4 and 4, the second never moves
  GridWorldCase lanes;
  lanes.map = GridMap(5, 5);
  lanes.starts = {{0, 0}, {0, 4}};
  lanes.goals = {{4, 0}, {4, 4}};
  lanes.expert_paths = std::vector<std::vector<Action>>(2, std::vector<Action>(4, Action::Right));
  lanes.case_id = "planted";
  const Policy half = [](const PolicyInput& in) {
    std::vector<Action> a(2, Action::Idle);
    if (in.state.time < 4) a[0] = Action::Right;
    return a;
  };
  ++r.trials;
  const RolloutRecord planted = rollout(lanes, half, {}, seed);
  if (planted.flowtime() != 16 || flowtime_increase(planted, lanes.expert_flowtime()) != 1.0 || planted.t_max != 12)
    fail(r, "planted failure: FT " + std::to_string(planted.flowtime()));

  const auto set = make_sweep_cases({10, 10, 4}, static_cast<int>(cases), seed, PlannerConfig{});
  const Model model(ModelConfig::parse("MAGAT-F-32"), seed);
  for (const auto& c : set) {
    ++r.trials;
    const int t_max = 3 * c.expert_makespan();
    const RolloutRecord replay = rollout(c, replay_policy(), {}, seed);
    if (!replay.success() || flowtime_increase(replay, c.expert_flowtime()) != 0.0)
      fail(r, c.case_id + ": expert replay has nonzero flowtime increase");
    const RolloutRecord idle = rollout(c, idle_policy(), {}, seed);
    if (idle.t_max != t_max || idle.steps != t_max) fail(r, c.case_id + ": idle rollout did not stop at T_max");
    const RolloutRecord learned = rollout(c, model_policy(model, DecisionMode::Sample), {}, seed);
    if (learned.steps > t_max) fail(r, c.case_id + ": rollout ran past T_max");
  }
  if (r.failures == 0) r.note = "planted FT 16, increase 1.0; replay increase 0 on " + std::to_string(set.size()) + " cases";
  r.seconds = clock.seconds();
  return r;
}

SuiteResult shape_contracts() {
  const Stopwatch clock;
  SuiteResult r;
  r.name = "shape contracts";
  std::mt19937_64 rng(1);
  {
    ++r.trials;
    const Model m(ModelConfig::parse("MAGAT-F-32-P4"), 1);
    const int n = 5, size = m.config().input_size();
    const Tensor x = m.perceive(observation_batch(random_observations(n, size, rng), n, size));
    const Tensor y = m.communicate(x, graph_of(random_adjacency(n, 0.5, rng)));
    if (m.config().graph_output_width() != 128 || y.dim(1) != 128 || m.layer_heads(0).size() != 4 || x.dim(1) != 32)
      fail(r, "MAGAT-F-32-P4 concat width " + std::to_string(y.dim(1)));
  }
  {
    ++r.trials;
    const Model m(ModelConfig::parse("MAGAT-B-64"), 1);
    const auto& names = m.parameter_names();
    const auto it = std::find(names.begin(), names.end(), "action.w1");
    const int width = it == names.end() ? -1 : m.parameters()[it - names.begin()].dim(0);
    if (m.config().action_head_width() != 128 || width != 128) fail(r, "MAGAT-B-64 action head width " + std::to_string(width));
  }
  if (r.failures == 0) r.note = "MAGAT-F-32-P4 concat 4x32=128; MAGAT-B-64 action head input 128";
  r.seconds = clock.seconds();
  return r;
}

}  // namespace magat::verify
