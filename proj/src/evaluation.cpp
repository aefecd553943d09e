#include "magat/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <optional>
#include <ostream>
#include <stdexcept>

#include "magat/runtime.hpp"

namespace magat {

Policy model_policy(const Model& model, DecisionMode mode) {
  return [&model, mode](const PolicyInput& in) {
    if (in.observation_size != model.config().input_size())
      throw std::invalid_argument("observation size " + std::to_string(in.observation_size) +
                                  " does not match model input " +
                                  std::to_string(model.config().input_size()));
    Decision d = decide(model, in.observations, in.task.num_robots(), in.graph, mode, in.rngs);
    if (in.attention) {
      in.attention->clear();
      for (const auto& e : d.attention) in.attention->push_back(edge_values_to_dense(*in.graph, e.values()));
    }
    return std::move(d.actions);
  };
}

Policy replay_policy() {
  return [](const PolicyInput& in) {
    const auto& paths = *in.task.expert_paths;
    std::vector<Action> out(paths.size(), Action::Idle);
    for (std::size_t i = 0; i < paths.size(); ++i)
      if (in.state.time < static_cast<int>(paths[i].size())) out[i] = paths[i][in.state.time];
    return out;
  };
}

Policy idle_policy() {
  return [](const PolicyInput& in) { return std::vector<Action>(in.task.num_robots(), Action::Idle); };
}

int RolloutRecord::robots_at_goal() const {
  return static_cast<int>(std::count(arrived.begin(), arrived.end(), true));
}

bool RolloutRecord::success() const { return !collided && robots_at_goal() == num_robots(); }

int RolloutRecord::flowtime() const {
  int ft = 0;
  for (std::size_t i = 0; i < arrived.size(); ++i) ft += arrived[i] ? arrival_times[i] : t_max;
  return ft;
}

std::vector<std::uint64_t> robot_seeds(std::uint64_t case_seed, int robots) {
  std::vector<std::uint64_t> s(robots);
  for (int i = 0; i < robots; ++i) s[i] = mix_seed(case_seed, i);
  return s;
}

namespace {

bool is_collision(ShieldReason r) { return r != ShieldReason::Arrived; }

}  // namespace

RolloutRecord rollout(const GridWorldCase& c, const Policy& policy, const RolloutOptions& opt,
                      std::span<const std::uint64_t> seeds) {
  if (!c.expert_paths) throw std::invalid_argument("case " + c.case_id + " has no expert paths; T_max is undefined");
  const int n = c.num_robots();
  if (static_cast<int>(seeds.size()) != n) throw std::invalid_argument("need one seed per robot");

  RolloutRecord r;
  r.case_id = c.case_id;
  r.t_max = opt.horizon_factor * c.expert_makespan();

  std::vector<std::mt19937_64> rngs;
  rngs.reserve(n);
  for (auto s : seeds) rngs.emplace_back(s);

  WorldState state = initial_state(c);
  r.paths.resize(n);
  r.arrival_times.assign(n, -1);
  for (int i = 0; i < n; ++i) {
    r.paths[i].push_back(state.positions[i]);
    if (state.arrived[i]) r.arrival_times[i] = 0;
  }

  const int size = opt.fov + 2;
  std::vector<double> obs(static_cast<std::size_t>(n) * kObservationChannels * size * size);
  std::vector<Matrix> attention;
  auto all_arrived = [&] { return std::all_of(state.arrived.begin(), state.arrived.end(), [](bool b) { return b; }); };

  while (state.time < r.t_max && !all_arrived()) {
    observe_all(state.positions, c.map, c.goals, opt.fov, obs);
    const ad::GraphPtr g =
        std::make_shared<const SparseGraph>(build_sparse_adjacency(state.positions, opt.r_comm, opt.weighting));
    const PolicyInput in{c, state, obs, size, g, rngs, opt.record_attention ? &attention : nullptr};
    const std::vector<Action> actions = policy(in);
    if (opt.record_attention) r.attention.push_back(attention);

    auto [next, report] = step(state, c.map, actions, c.goals);
    for (const auto& e : report.events) {
      r.shield_events.push_back({state.time, e});
      if (opt.strict && is_collision(e.reason)) r.collided = true;
    }
    state = std::move(next);
    for (int i = 0; i < n; ++i) {
      r.paths[i].push_back(state.positions[i]);
      if (state.arrived[i] && r.arrival_times[i] < 0) r.arrival_times[i] = state.time;
    }
    if (r.collided) break;
  }
  r.steps = state.time;
  r.arrived = state.arrived;
  return r;
}

RolloutRecord rollout(const GridWorldCase& c, const Policy& policy, const RolloutOptions& opt,
                      std::uint64_t case_seed) {
  return rollout(c, policy, opt, robot_seeds(case_seed, c.num_robots()));
}

double flowtime_increase(const RolloutRecord& r, int expert_flowtime) {
  if (expert_flowtime <= 0) throw std::invalid_argument("expert flowtime must be positive");
  return static_cast<double>(r.flowtime() - expert_flowtime) / expert_flowtime;
}

int histogram_bin(int at_goal, int robots) {
  if (robots <= 0) throw std::invalid_argument("histogram needs at least one robot");
  // integer arithmetic so that exact multiples of 2% land in their own bin
  return std::min(kHistogramBins - 1, at_goal * kHistogramBins / robots);
}

std::uint64_t case_seed(std::uint64_t seed, std::string_view case_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : case_id) h = (h ^ ch) * 0x100000001b3ULL;
  return mix_seed(seed, h);
}

MetricsReport summarize(std::span<const GridWorldCase> cases, std::span<const RolloutRecord> records) {
  if (cases.size() != records.size()) throw std::invalid_argument("one record per case required");
  MetricsReport m;
  m.cases = cases.size();
  if (cases.empty()) return m;
  std::size_t ok = 0;
  double dft = 0.0, prg = 0.0;
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const RolloutRecord& r = records[k];
    CaseSummary s;
    s.case_id = r.case_id;
    s.success = r.success();
    s.robots = r.num_robots();
    s.at_goal = r.robots_at_goal();
    s.flowtime = r.flowtime();
    s.expert_flowtime = cases[k].expert_flowtime();
    s.flowtime_increase = flowtime_increase(r, s.expert_flowtime);
    s.steps = r.steps;
    s.t_max = r.t_max;
    s.shield_events = r.shield_events.size();
    ok += s.success;
    dft += s.flowtime_increase;
    prg += static_cast<double>(s.at_goal) / s.robots;
    ++m.histogram[histogram_bin(s.at_goal, s.robots)];
    m.details.push_back(std::move(s));
  }
  const double n = static_cast<double>(cases.size());
  m.success_rate = ok / n;
  m.mean_flowtime_increase = dft / n;
  m.robot_success = prg / n;
  return m;
}

MetricsReport evaluate_set(const Policy& policy, std::span<const GridWorldCase> cases,
                           const RolloutOptions& opt, std::uint64_t seed) {
  std::vector<RolloutRecord> records(cases.size());
  std::string error;
  const long n = static_cast<long>(cases.size());
#pragma omp parallel for schedule(dynamic)
  for (long k = 0; k < n; ++k) {
    try {
      records[k] = rollout(cases[k], policy, opt, case_seed(seed, cases[k].case_id));
    } catch (const std::exception& e) {
#pragma omp critical(magat_eval_error)
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw std::runtime_error(error);
  return summarize(cases, records);
}

std::string SweepPoint::label() const {
  return std::to_string(width) + "x" + std::to_string(height) + "/" + std::to_string(robots);
}

std::vector<SweepPoint> sweep_points(std::string_view sweep) {
  std::vector<SweepPoint> pts;
  if (sweep == "same-density") {
    // every point has robot density 0.025
    constexpr std::pair<int, int> side_robots[] = {{20, 10}, {28, 20}, {35, 30}, {40, 40},
                                                   {45, 50}, {50, 60}, {65, 100}};
    for (auto [side, n] : side_robots) pts.push_back({side, side, n});
  } else if (sweep == "increasing-density") {
    for (int n : {10, 20, 30, 40, 50, 60, 100}) pts.push_back({50, 50, n});
  } else if (sweep == "large-scale") {
    pts = {{200, 200, 500}, {200, 200, 1000}, {100, 100, 500}};
  } else {
    throw std::invalid_argument("unknown sweep '" + std::string(sweep) +
                                "' (expected same-density, increasing-density or large-scale)");
  }
  return pts;
}

std::vector<GridWorldCase> make_sweep_cases(const SweepPoint& p, int count, std::uint64_t seed,
                                            const PlannerConfig& planner, int attempts_per_case) {
  const CaseSolver solver = make_case_solver(planner);
  if (p.width * p.height - obstacle_count(p.width, p.height, p.obstacle_density) < 2 * p.robots)
    throw std::invalid_argument("map " + p.label() + " has too few free cells for its robots");
  // every case owns its seed stream, so solving in parallel keeps the output fixed
  std::vector<std::optional<GridWorldCase>> slots(std::max(count, 0));
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < count; ++k) {
    char id[64];
    std::snprintf(id, sizeof id, "%dx%d-%d-%05d", p.width, p.height, p.robots, k);
    for (int attempt = 0; attempt < attempts_per_case; ++attempt) {
      const std::uint64_t s = mix_seed(mix_seed(seed, k), attempt);
      const GridMap map = generate_map(p.width, p.height, p.obstacle_density, s);
      CaseResult r = generate_case(map, p.robots, mix_seed(s, 1), solver, id);
      if (r) {
        slots[k] = std::move(r.accepted);
        break;
      }
    }
  }
  std::vector<GridWorldCase> out;
  for (auto& c : slots)
    if (c) out.push_back(std::move(*c));
  return out;
}

nlohmann::json sweep_record(const SweepPoint& p, const MetricsReport& m) {
  return {{"map", std::to_string(p.width) + "x" + std::to_string(p.height)},
          {"n_robots", p.robots},
          {"rho_robot", p.robot_density()},
          {"cases", m.cases},
          {"success_rate", m.success_rate},
          {"flowtime_increase", m.mean_flowtime_increase},
          {"robot_success", m.robot_success}};
}

void write_case_details(std::ostream& os, const MetricsReport& m) {
  os << "# case_id success robots at_goal flowtime expert_flowtime flowtime_increase steps t_max shield_events\n";
  for (const auto& s : m.details)
    os << s.case_id << ' ' << s.success << ' ' << s.robots << ' ' << s.at_goal << ' ' << s.flowtime << ' '
       << s.expert_flowtime << ' ' << s.flowtime_increase << ' ' << s.steps << ' ' << s.t_max << ' '
       << s.shield_events << '\n';
}

void write_histogram(std::ostream& os, const MetricsReport& m) {
  os << "# robots_at_goal_low robots_at_goal_high fraction_of_cases\n";
  for (int b = 0; b < kHistogramBins; ++b) {
    const double frac = m.cases ? static_cast<double>(m.histogram[b]) / m.cases : 0.0;
    os << 2.0 * b / 100 << ' ' << 2.0 * (b + 1) / 100 << ' ' << frac << '\n';
  }
}

void write_attention_dump(std::ostream& os, const RolloutRecord& r) {
  os << "# case " << r.case_id << " steps " << r.steps << '\n';
  for (std::size_t t = 0; t < r.attention.size(); ++t) {
    os << "step " << t << "\npositions";
    for (const auto& path : r.paths) os << ' ' << path[t].x << ',' << path[t].y;
    os << '\n';
    for (std::size_t h = 0; h < r.attention[t].size(); ++h) {
      const Matrix& e = r.attention[t][h];
      os << "attention " << h << '\n';
      for (int i = 0; i < e.rows; ++i) {
        for (int j = 0; j < e.cols; ++j) os << (j ? " " : "") << e(i, j);
        os << '\n';
      }
    }
  }
}

}  // namespace magat
