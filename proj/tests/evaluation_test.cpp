#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "magat/evaluation.hpp"

namespace magat {
namespace {

std::vector<GridWorldCase> small_cases(int count, std::uint64_t seed, int robots = 4) {
  return make_sweep_cases({10, 10, robots}, count, seed, PlannerConfig{});
}

// Two robots on an empty 5x5 map, each four steps west of its goal.
GridWorldCase two_lanes() {
  GridWorldCase c;
  c.map = GridMap(5, 5);
  c.starts = {{0, 0}, {0, 4}};
  c.goals = {{4, 0}, {4, 4}};
  c.expert_paths = std::vector<std::vector<Action>>{std::vector<Action>(4, Action::Right),
                                                    std::vector<Action>(4, Action::Right)};
  c.case_id = "lanes";
  return c;
}

ModelConfig tiny(std::string_view name) {
  ModelConfig cfg = ModelConfig::parse(name);
  cfg.cnn_widths = {4, 4, 8};
  cfg.hidden = 8;
  return cfg;
}

TEST(FlowtimeIncrease, PlantedFailureChargesHorizon) {
  const GridWorldCase c = two_lanes();
  // robot 0 follows its expert path, robot 1 never moves
  const Policy half = [](const PolicyInput& in) {
    std::vector<Action> a(2, Action::Idle);
    if (in.state.time < 4) a[0] = Action::Right;
    return a;
  };
  const RolloutRecord r = rollout(c, half, {}, 7);
  EXPECT_EQ(r.t_max, 12);
  EXPECT_EQ(r.steps, 12);
  EXPECT_FALSE(r.success());
  EXPECT_EQ(r.flowtime(), 16);
  EXPECT_EQ(c.expert_flowtime(), 8);
  EXPECT_EQ(flowtime_increase(r, c.expert_flowtime()), 1.0);
}

TEST(FlowtimeIncrease, RejectsNonPositiveExpertFlowtime) {
  EXPECT_THROW(flowtime_increase(RolloutRecord{}, 0), std::invalid_argument);
}

TEST(Rollout, ExpertReplayHasZeroIncrease) {
  const auto cases = small_cases(25, 11);
  ASSERT_EQ(cases.size(), 25u);
  for (const auto& c : cases) {
    const RolloutRecord r = rollout(c, replay_policy(), {}, 1);
    EXPECT_TRUE(r.success()) << c.case_id;
    EXPECT_EQ(r.steps, c.expert_makespan());
    EXPECT_EQ(r.flowtime(), c.expert_flowtime());
    EXPECT_EQ(flowtime_increase(r, c.expert_flowtime()), 0.0);
    EXPECT_TRUE(r.shield_events.empty());
  }
}

TEST(Rollout, IdlePolicyRunsToHorizon) {
  for (const auto& c : small_cases(10, 12)) {
    const RolloutRecord r = rollout(c, idle_policy(), {}, 1);
    const int t_max = 3 * c.expert_makespan();
    EXPECT_EQ(r.t_max, t_max);
    EXPECT_EQ(r.steps, t_max);
    EXPECT_FALSE(r.success());
    for (const auto& p : r.paths) EXPECT_EQ(static_cast<int>(p.size()), t_max + 1);
    const double full = static_cast<double>(c.num_robots() * t_max - c.expert_flowtime()) / c.expert_flowtime();
    EXPECT_DOUBLE_EQ(flowtime_increase(r, c.expert_flowtime()), full);
  }
}

TEST(Rollout, HorizonNeverExceeded) {
  const Model model(tiny("MAGAT-F-8"), 3);
  for (const auto& c : small_cases(10, 13)) {
    const RolloutRecord r = rollout(c, model_policy(model, DecisionMode::Sample), {}, 5);
    EXPECT_LE(r.steps, 3 * c.expert_makespan());
  }
}

TEST(Rollout, RequiresExpertPaths) {
  GridWorldCase c = two_lanes();
  c.expert_paths.reset();
  EXPECT_THROW(rollout(c, idle_policy(), {}, 1), std::invalid_argument);
}

TEST(Rollout, GreedyRepeatsAndSamplingVaries) {
  const Model model(tiny("MAGAT-F-8"), 4);
  const auto cases = small_cases(5, 14);
  bool varied = false;
  for (const auto& c : cases) {
    const auto g1 = rollout(c, model_policy(model, DecisionMode::Greedy), {}, 1);
    const auto g2 = rollout(c, model_policy(model, DecisionMode::Greedy), {}, 2);
    EXPECT_EQ(g1.paths, g2.paths);
    const auto s1 = rollout(c, model_policy(model, DecisionMode::Sample), {}, 1);
    const auto s1b = rollout(c, model_policy(model, DecisionMode::Sample), {}, 1);
    const auto s2 = rollout(c, model_policy(model, DecisionMode::Sample), {}, 2);
    EXPECT_EQ(s1.paths, s1b.paths);
    varied |= s1.paths != s2.paths;
  }
  EXPECT_TRUE(varied);
}

TEST(Rollout, StrictModeFailsOnBlockedMove) {
  GridWorldCase c = two_lanes();
  const Policy bump = [](const PolicyInput&) { return std::vector<Action>{Action::Up, Action::Right}; };
  RolloutOptions strict;
  strict.strict = true;
  const RolloutRecord r = rollout(c, bump, strict, 1);
  EXPECT_TRUE(r.collided);
  EXPECT_EQ(r.steps, 1);
  EXPECT_FALSE(r.success());
  const RolloutRecord lenient = rollout(c, bump, {}, 1);
  EXPECT_FALSE(lenient.collided);
  EXPECT_FALSE(lenient.shield_events.empty());
}

TEST(Rollout, RelabeledCaseGivesRelabeledTrajectory) {
  const Model model(tiny("MAGAT-F-8-P2"), 5);
  const auto cases = small_cases(8, 15, 6);
  for (const auto& c : cases) {
    const Permutation p = Permutation::random(c.num_robots(), 99);
    GridWorldCase q = c;
    auto& qp = *q.expert_paths;
    for (int i = 0; i < c.num_robots(); ++i) {
      q.starts[p[i]] = c.starts[i];
      q.goals[p[i]] = c.goals[i];
      qp[p[i]] = (*c.expert_paths)[i];
    }
    const auto seeds = robot_seeds(77, c.num_robots());
    std::vector<std::uint64_t> moved(seeds.size());
    for (int i = 0; i < c.num_robots(); ++i) moved[p[i]] = seeds[i];
    const auto a = rollout(c, model_policy(model, DecisionMode::Sample), {}, seeds);
    const auto b = rollout(q, model_policy(model, DecisionMode::Sample), {}, moved);
    ASSERT_EQ(a.steps, b.steps);
    for (int i = 0; i < c.num_robots(); ++i) EXPECT_EQ(a.paths[i], b.paths[p[i]]);
  }
}

TEST(Rollout, AttentionRecordedPerStep) {
  const Model model(tiny("MAGAT-F-8-P2"), 6);
  const auto c = small_cases(1, 16).front();
  RolloutOptions opt;
  opt.record_attention = true;
  const auto r = rollout(c, model_policy(model, DecisionMode::Greedy), opt, 1);
  ASSERT_EQ(static_cast<int>(r.attention.size()), r.steps);
  for (const auto& step : r.attention) {
    ASSERT_EQ(step.size(), 2u);
    for (const Matrix& e : step) {
      EXPECT_EQ(e.rows, c.num_robots());
      for (int i = 0; i < e.rows; ++i) {
        double row = 0.0;
        for (int j = 0; j < e.cols; ++j) row += e(i, j);
        EXPECT_TRUE(std::abs(row - 1.0) < 1e-9 || row == 0.0);
      }
    }
  }
  std::ostringstream os;
  write_attention_dump(os, r);
  EXPECT_NE(os.str().find("attention 1"), std::string::npos);
}

TEST(EvaluateSet, ReplayIsPerfect) {
  const auto cases = small_cases(20, 17);
  const MetricsReport m = evaluate_set(replay_policy(), cases, {}, 3);
  EXPECT_EQ(m.cases, 20u);
  EXPECT_EQ(m.success_rate, 1.0);
  EXPECT_EQ(m.mean_flowtime_increase, 0.0);
  EXPECT_EQ(m.robot_success, 1.0);
  EXPECT_EQ(m.histogram[kHistogramBins - 1], 20u);
}

TEST(EvaluateSet, AggregatesMatchPerCaseRecords) {
  const Model model(tiny("GNN-F-8"), 7);
  const auto cases = small_cases(30, 18);
  const Policy policy = model_policy(model, DecisionMode::Sample);
  const MetricsReport m = evaluate_set(policy, cases, {}, 4);
  std::size_t ok = 0, binned = 0;
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const auto r = rollout(cases[k], policy, {}, case_seed(4, cases[k].case_id));
    ok += r.success();
    EXPECT_EQ(m.details[k].success, r.success());
    EXPECT_EQ(m.details[k].flowtime, r.flowtime());
  }
  for (auto h : m.histogram) binned += h;
  EXPECT_EQ(binned, cases.size());
  EXPECT_EQ(m.success_rate, static_cast<double>(ok) / cases.size());
  EXPECT_GE(m.robot_success, m.success_rate);
  EXPECT_GE(m.mean_flowtime_increase, -1.0);
}

TEST(Histogram, TwoPercentBins) {
  EXPECT_EQ(histogram_bin(0, 4), 0);
  EXPECT_EQ(histogram_bin(4, 4), kHistogramBins - 1);
  EXPECT_EQ(histogram_bin(1, 50), 1);
  EXPECT_EQ(histogram_bin(49, 50), 49);
  EXPECT_EQ(histogram_bin(1, 100), 0);
  EXPECT_EQ(histogram_bin(2, 100), 1);
  EXPECT_THROW(histogram_bin(0, 0), std::invalid_argument);
}

TEST(Sweeps, SameDensityPoints) {
  const auto pts = sweep_points("same-density");
  std::vector<std::string> labels;
  for (const auto& p : pts) {
    labels.push_back(p.label());
    EXPECT_NEAR(p.robot_density(), 0.025, 0.0015);  // nominal; 65x65/100 is 0.0237
    EXPECT_EQ(p.obstacle_density, 0.1);
  }
  EXPECT_EQ(labels, (std::vector<std::string>{"20x20/10", "28x28/20", "35x35/30", "40x40/40", "45x45/50",
                                              "50x50/60", "65x65/100"}));
}

TEST(Sweeps, IncreasingDensityPoints) {
  const auto pts = sweep_points("increasing-density");
  ASSERT_EQ(pts.size(), 7u);
  const double expect[] = {0.004, 0.008, 0.012, 0.016, 0.02, 0.024, 0.04};
  for (std::size_t k = 0; k < pts.size(); ++k) {
    EXPECT_EQ(pts[k].width, 50);
    EXPECT_DOUBLE_EQ(pts[k].robot_density(), expect[k]);
  }
}

TEST(Sweeps, LargeScalePoints) {
  const auto pts = sweep_points("large-scale");
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_EQ(pts[0].label(), "200x200/500");
  EXPECT_EQ(pts[1].label(), "200x200/1000");
  EXPECT_EQ(pts[2].label(), "100x100/500");
  EXPECT_DOUBLE_EQ(pts[0].robot_density(), 0.0125);
  EXPECT_DOUBLE_EQ(pts[2].robot_density(), 0.05);
  EXPECT_THROW(sweep_points("huge"), std::invalid_argument);
}

TEST(Sweeps, GeneratedCasesAreSolvedAndDistinct) {
  const auto cases = small_cases(15, 19);
  std::set<std::string> ids;
  for (const auto& c : cases) {
    ids.insert(c.case_id);
    ASSERT_TRUE(c.expert_paths);
    const auto v = validate_solution(c, *c.expert_paths);
    EXPECT_TRUE(v.collision_free && v.all_arrive);
  }
  EXPECT_EQ(ids.size(), cases.size());
}

TEST(Output, RecordAndColumns) {
  const auto cases = small_cases(3, 20);
  const MetricsReport m = evaluate_set(replay_policy(), cases, {}, 1);
  const auto rec = sweep_record({10, 10, 4}, m);
  EXPECT_EQ(rec["map"], "10x10");
  EXPECT_EQ(rec["n_robots"], 4);
  EXPECT_DOUBLE_EQ(rec["rho_robot"].get<double>(), 0.04);
  EXPECT_EQ(rec["success_rate"], 1.0);
  std::ostringstream details, hist;
  write_case_details(details, m);
  write_histogram(hist, m);
  int lines = 0;
  for (char ch : details.str()) lines += ch == '\n';
  EXPECT_EQ(lines, 4);
  lines = 0;
  for (char ch : hist.str()) lines += ch == '\n';
  EXPECT_EQ(lines, kHistogramBins + 1);
}

}  // namespace
}  // namespace magat
