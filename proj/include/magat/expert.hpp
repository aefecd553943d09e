#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "magat/gridworld.hpp"

namespace magat {

/// Conflict semantics shared by the planner, the oracle and the validator:
/// a robot that enters its goal cell stays there and keeps occupying it;
/// two robots may not share a cell at the same step (vertex conflict) or swap
/// cells in one step (edge conflict). Following a robot into the cell it is
/// vacating is allowed.
struct PlannerConfig {
  double bound = 1.1;              // suboptimality bound w >= 1, both levels
  double time_budget_s = 60.0;     // wall clock per solve
  /// High-level node budget; keeps generation deterministic when wall clock
  /// is not the binding limit. Zero means unlimited.
  std::size_t max_high_level_expansions = 200000;
  std::string tie_break = "fifo";  // lowest node id among equal keys
};

enum class PlanFailure { Timeout, Unsolvable };
std::string_view to_string(PlanFailure f);

struct Solution {
  std::vector<std::vector<Action>> paths;
  int flowtime = 0;
  int makespan = 0;
  std::size_t high_level_expansions = 0;
  std::size_t low_level_expansions = 0;
};

struct PlanResult {
  std::optional<Solution> solution;
  PlanFailure failure = PlanFailure::Unsolvable;
  explicit operator bool() const { return solution.has_value(); }
};

/// Enhanced Conflict-Based Search. Flowtime of the result is at most
/// `cfg.bound` times the optimal flowtime.
PlanResult ecbs_solve(const GridMap& map, std::span<const Cell> starts,
                      std::span<const Cell> goals, const PlannerConfig& cfg);
PlanResult ecbs_solve(const GridWorldCase& c, const PlannerConfig& cfg);

/// Adapter for generate_case.
CaseSolver make_case_solver(PlannerConfig cfg);

struct OracleResult {
  std::optional<int> flowtime;  // nullopt: proven unsolvable
  std::size_t expanded = 0;
};

/// Exact optimal flowtime by A* over joint states (sum of per-robot distances
/// as the heuristic). Throws std::invalid_argument if the case has more than
/// `max_robots` robots, std::runtime_error if `max_states` is exceeded.
OracleResult joint_state_oracle(const GridWorldCase& c, int max_robots = 3,
                                std::size_t max_states = 20'000'000);

enum class ConflictKind { Vertex, Edge, Obstacle, OutOfMap };
std::string_view to_string(ConflictKind k);

struct Conflict {
  ConflictKind kind = ConflictKind::Vertex;
  int robot_a = 0;
  int robot_b = -1;  // -1 for obstacle / out-of-map
  int time = 0;      // step at which the offending position is reached
  Cell cell;
};

struct ValidationReport {
  bool collision_free = true;
  bool all_arrive = true;
  int flowtime = 0;
  int makespan = 0;
  std::vector<int> arrival_times;  // per robot: steps until it rests at its goal
  std::optional<Conflict> first_conflict;
};

/// Executes `paths` without shielding. Robots that exhaust their path stay
/// in place. Throws std::invalid_argument if |paths| != N.
ValidationReport validate_solution(const GridWorldCase& c,
                                   const std::vector<std::vector<Action>>& paths);

/// BFS distance from every cell to `goal`; -1 where unreachable.
std::vector<int> distance_field(const GridMap& map, Cell goal);

}  // namespace magat
