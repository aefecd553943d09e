#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "magat/comm_graph.hpp"
#include "magat/expert.hpp"
#include "magat/gridworld.hpp"
#include "magat/model.hpp"

namespace magat {

/// What a policy sees at one step of a rollout.
struct PolicyInput {
  const GridWorldCase& task;
  const WorldState& state;
  std::span<const double> observations;  // [robot][channel][row][col]
  int observation_size = 0;
  const ad::GraphPtr& graph;
  std::span<std::mt19937_64> rngs;  // one per robot
  std::vector<Matrix>* attention = nullptr;  // dense E per layer and head, when requested
};

using Policy = std::function<std::vector<Action>(const PolicyInput&)>;

Policy model_policy(const Model& model, DecisionMode mode);
/// Plays back the case's own expert paths; idles once a path is exhausted.
Policy replay_policy();
Policy idle_policy();

struct RolloutOptions {
  int fov = 9;
  double r_comm = 7.0;
  EdgeWeighting weighting = EdgeWeighting::Binary;
  /// Any blocked move other than a request by an already-arrived robot fails the case.
  bool strict = false;
  bool record_attention = false;
  int horizon_factor = 3;  // T_max = factor * expert makespan
};

struct TimedShieldEvent {
  int time = 0;
  ShieldEvent event;
};

struct RolloutRecord {
  std::string case_id;
  std::vector<std::vector<Cell>> paths;  // per robot, positions at t = 0..steps
  std::vector<bool> arrived;
  std::vector<int> arrival_times;  // step of first rest on the goal, -1 if never
  int steps = 0;
  int t_max = 0;
  std::vector<TimedShieldEvent> shield_events;
  bool collided = false;  // only set in strict mode
  std::vector<std::vector<Matrix>> attention;  // per step, when recorded

  int num_robots() const { return static_cast<int>(arrived.size()); }
  int robots_at_goal() const;
  bool success() const;
  /// Sum of arrival times with t_max charged for every robot that did not arrive.
  int flowtime() const;
};

/// Per-robot sampling streams derived from one case seed.
std::vector<std::uint64_t> robot_seeds(std::uint64_t case_seed, int robots);

/// observe -> adjacency -> policy -> shielded step, until everyone has arrived
/// or t_max steps have run. Throws std::invalid_argument without expert paths.
RolloutRecord rollout(const GridWorldCase& c, const Policy& policy, const RolloutOptions& opt,
                      std::span<const std::uint64_t> seeds);
RolloutRecord rollout(const GridWorldCase& c, const Policy& policy, const RolloutOptions& opt,
                      std::uint64_t case_seed);

/// (FT - FT*) / FT*. Throws std::invalid_argument when expert_flowtime <= 0.
double flowtime_increase(const RolloutRecord& r, int expert_flowtime);

inline constexpr int kHistogramBins = 50;  // 2% of the robots per bin

struct CaseSummary {
  std::string case_id;
  bool success = false;
  int robots = 0;
  int at_goal = 0;
  int flowtime = 0;
  int expert_flowtime = 0;
  double flowtime_increase = 0.0;
  int steps = 0;
  int t_max = 0;
  std::size_t shield_events = 0;
};

struct MetricsReport {
  std::size_t cases = 0;
  double success_rate = 0.0;            // alpha
  double mean_flowtime_increase = 0.0;  // mean delta_FT
  double robot_success = 0.0;           // p_rg, mean fraction of robots at goal
  /// Cases by fraction of robots at goal; bin b covers [2b%, 2b+2%), the last bin includes 100%.
  std::array<std::size_t, kHistogramBins> histogram{};
  std::vector<CaseSummary> details;
};

int histogram_bin(int at_goal, int robots);

/// Stable per-case seed from the evaluation seed and the case id.
std::uint64_t case_seed(std::uint64_t seed, std::string_view case_id);

/// Rolls out every case in parallel (each with its own world and RNG streams)
/// and reduces in case order.
MetricsReport evaluate_set(const Policy& policy, std::span<const GridWorldCase> cases,
                           const RolloutOptions& opt, std::uint64_t seed);
MetricsReport summarize(std::span<const GridWorldCase> cases, std::span<const RolloutRecord> records);

struct SweepPoint {
  int width = 0;
  int height = 0;
  int robots = 0;
  double obstacle_density = 0.1;

  double robot_density() const { return static_cast<double>(robots) / (width * height); }
  std::string label() const;  // "28x28/20"
};

/// "same-density", "increasing-density" or "large-scale"; throws on anything else.
std::vector<SweepPoint> sweep_points(std::string_view sweep);

/// Cases for one sweep point, solved by ECBS. Instances the planner rejects
/// are redrawn up to `attempts_per_case` times each.
std::vector<GridWorldCase> make_sweep_cases(const SweepPoint& p, int count, std::uint64_t seed,
                                            const PlannerConfig& planner, int attempts_per_case = 20);

nlohmann::json sweep_record(const SweepPoint& p, const MetricsReport& m);
/// Whitespace-separated columns with a '#' header line.
void write_case_details(std::ostream& os, const MetricsReport& m);
void write_histogram(std::ostream& os, const MetricsReport& m);
/// Positions and dense attention matrices for every recorded step.
void write_attention_dump(std::ostream& os, const RolloutRecord& r);

}  // namespace magat
