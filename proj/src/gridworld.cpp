#include "magat/gridworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace magat {

Cell displacement(Action a) {
  switch (a) {
    case Action::Up: return {0, -1};
    case Action::Down: return {0, 1};
    case Action::Left: return {-1, 0};
    case Action::Right: return {1, 0};
    case Action::Idle: return {0, 0};
  }
  return {0, 0};
}

Cell apply(Cell c, Action a) {
  const Cell d = displacement(a);
  return {c.x + d.x, c.y + d.y};
}

char action_symbol(Action a) {
  switch (a) {
    case Action::Up: return 'u';
    case Action::Down: return 'd';
    case Action::Left: return 'l';
    case Action::Right: return 'r';
    case Action::Idle: return 'i';
  }
  return '?';
}

Action action_from_symbol(char s) {
  switch (s) {
    case 'u': return Action::Up;
    case 'd': return Action::Down;
    case 'l': return Action::Left;
    case 'r': return Action::Right;
    case 'i': return Action::Idle;
    default: break;
  }
  throw std::invalid_argument(std::string("unknown action symbol '") + s + "'");
}

std::string encode_actions(std::span<const Action> actions) {
  std::string out;
  out.reserve(actions.size());
  for (Action a : actions) out.push_back(action_symbol(a));
  return out;
}

std::vector<Action> decode_actions(std::string_view symbols) {
  std::vector<Action> out;
  out.reserve(symbols.size());
  for (char s : symbols) out.push_back(action_from_symbol(s));
  return out;
}

Action action_between(Cell from, Cell to) {
  for (Action a : kAllActions)
    if (apply(from, a) == to) return a;
  throw std::invalid_argument("cells are not adjacent");
}

GridMap::GridMap(int width, int height) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("map dimensions must be positive");
  blocked_.assign(static_cast<std::size_t>(width) * height, 0);
}

GridMap::GridMap(int width, int height, std::span<const Cell> obstacles)
    : GridMap(width, height) {
  for (Cell c : obstacles) set_obstacle(c);
}

void GridMap::set_obstacle(Cell c) {
  if (!in_bounds(c)) throw std::out_of_range("obstacle outside the map");
  blocked_[index(c)] = 1;
}

std::vector<Cell> GridMap::obstacles() const {
  std::vector<Cell> out;
  for (int i = 0; i < num_cells(); ++i)
    if (blocked_[i]) out.push_back(cell(i));
  return out;
}

std::vector<Cell> GridMap::free_cells() const {
  std::vector<Cell> out;
  for (int i = 0; i < num_cells(); ++i)
    if (!blocked_[i]) out.push_back(cell(i));
  return out;
}

int GridMap::num_obstacles() const {
  return static_cast<int>(std::count(blocked_.begin(), blocked_.end(), 1));
}

int obstacle_count(int width, int height, double obstacle_density) {
  // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
  return static_cast<int>(std::floor(obstacle_density * width * height + 1e-9));
}

GridMap generate_map(int width, int height, double obstacle_density, std::uint64_t seed) {
  if (width < 3 || height < 3) throw std::invalid_argument("map must be at least 3x3");
  if (obstacle_density < 0.0 || obstacle_density >= 1.0)
    throw std::invalid_argument("obstacle density must lie in [0, 1)");
  GridMap map(width, height);
  const int count = obstacle_count(width, height, obstacle_density);
  std::vector<int> cells(static_cast<std::size_t>(width) * height);
  std::iota(cells.begin(), cells.end(), 0);
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first `count` entries are a uniform sample.
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, static_cast<int>(cells.size()) - 1);
    std::swap(cells[i], cells[pick(rng)]);
    map.set_obstacle(map.cell(cells[i]));
  }
  return map;
}

int GridWorldCase::expert_makespan() const {
  if (!expert_paths) throw std::invalid_argument("case " + case_id + " has no expert paths");
  int m = 0;
  for (const auto& p : *expert_paths) m = std::max(m, static_cast<int>(p.size()));
  return m;
}

int GridWorldCase::expert_flowtime() const {
  if (!expert_paths) throw std::invalid_argument("case " + case_id + " has no expert paths");
  int ft = 0;
  for (const auto& p : *expert_paths) ft += static_cast<int>(p.size());
  return ft;
}

void check_case(const GridWorldCase& c) {
  if (c.starts.size() != c.goals.size())
    throw std::invalid_argument("starts and goals differ in length");
  auto check_cells = [&](const std::vector<Cell>& cells, const char* what) {
    std::set<Cell> seen;
    for (Cell p : cells) {
      if (!c.map.passable(p))
        throw std::invalid_argument(std::string(what) + " on an obstacle or outside the map");
      if (!seen.insert(p).second) throw std::invalid_argument(std::string("duplicate ") + what);
    }
  };
  check_cells(c.starts, "start");
  check_cells(c.goals, "goal");
  if (c.expert_paths && c.expert_paths->size() != c.starts.size())
    throw std::invalid_argument("expert path count differs from robot count");
}

std::string_view to_string(RejectReason r) {
  return r == RejectReason::Unsolvable ? "unsolvable" : "timeout";
}

CaseResult generate_case(const GridMap& map, int n_robots, std::uint64_t seed,
                         const CaseSolver& solver, std::string case_id) {
  if (n_robots <= 0) throw std::invalid_argument("need at least one robot");
  std::vector<Cell> free = map.free_cells();
  if (free.size() < static_cast<std::size_t>(2 * n_robots))
    throw std::invalid_argument("map has fewer than 2N free cells");
  std::mt19937_64 rng(seed);
  for (int i = 0; i < 2 * n_robots; ++i) {
    std::uniform_int_distribution<int> pick(i, static_cast<int>(free.size()) - 1);
    std::swap(free[i], free[pick(rng)]);
  }
  GridWorldCase c;
  c.map = map;
  c.starts.assign(free.begin(), free.begin() + n_robots);
  c.goals.assign(free.begin() + n_robots, free.begin() + 2 * n_robots);
  c.case_id = std::move(case_id);
  c.rng_seed = seed;

  CaseResult result;
  SolveOutcome outcome = solver(c);
  if (!outcome.paths) {
    result.rejected = outcome.reason;
    return result;
  }
  c.expert_paths = std::move(outcome.paths);
  result.accepted = std::move(c);
  return result;
}

WorldState initial_state(const GridWorldCase& c) {
  WorldState s;
  s.positions = c.starts;
  s.arrived.resize(c.starts.size());
  for (std::size_t i = 0; i < c.starts.size(); ++i) s.arrived[i] = c.starts[i] == c.goals[i];
  return s;
}

std::string_view to_string(ShieldReason r) {
  switch (r) {
    case ShieldReason::OutOfMap: return "out_of_map";
    case ShieldReason::Obstacle: return "obstacle";
    case ShieldReason::VertexConflict: return "vertex_conflict";
    case ShieldReason::EdgeConflict: return "edge_conflict";
    case ShieldReason::Arrived: return "arrived";
  }
  return "?";
}

bool ShieldReport::shielded(int robot) const {
  return std::any_of(events.begin(), events.end(),
                     [robot](const ShieldEvent& e) { return e.robot == robot; });
}

std::pair<WorldState, ShieldReport> step(const WorldState& state, const GridMap& map,
                                         std::span<const Action> joint_actions,
                                         std::span<const Cell> goals) {
  const std::size_t n = state.positions.size();
  if (joint_actions.size() != n) throw std::invalid_argument("joint action count != robot count");
  if (goals.size() != n) throw std::invalid_argument("goal count != robot count");

  ShieldReport report;
  std::vector<Action> act(joint_actions.begin(), joint_actions.end());
  auto shield = [&](std::size_t i, ShieldReason why) {
    report.events.push_back({static_cast<int>(i), joint_actions[i], why});
    act[i] = Action::Idle;
  };

  for (std::size_t i = 0; i < n; ++i) {
    if (act[i] == Action::Idle) continue;
    if (i < state.arrived.size() && state.arrived[i]) {
      shield(i, ShieldReason::Arrived);
      continue;
    }
    const Cell to = apply(state.positions[i], act[i]);
    if (!map.in_bounds(to))
      shield(i, ShieldReason::OutOfMap);
    else if (map.blocked(to))
      shield(i, ShieldReason::Obstacle);
  }

  // Shielding one robot can create a new conflict for a robot moving into its
  // cell, so iterate to a fixed point. Each pass shields at least one robot.
  std::vector<Cell> target(n);
  std::vector<int> occupancy(static_cast<std::size_t>(map.num_cells()));
  for (bool changed = true; changed;) {
    changed = false;
    std::fill(occupancy.begin(), occupancy.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      target[i] = apply(state.positions[i], act[i]);
      ++occupancy[map.index(target[i])];
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (act[i] == Action::Idle) continue;
      if (occupancy[map.index(target[i])] > 1) {
        shield(i, ShieldReason::VertexConflict);
        changed = true;
      }
    }
    if (changed) continue;
    for (std::size_t i = 0; i < n; ++i) {
      if (act[i] == Action::Idle) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i || act[j] == Action::Idle) continue;
        if (target[i] == state.positions[j] && target[j] == state.positions[i]) {
          shield(i, ShieldReason::EdgeConflict);
          shield(j, ShieldReason::EdgeConflict);
          changed = true;
          break;
        }
      }
    }
  }

  WorldState next;
  next.positions = std::move(target);
  next.time = state.time + 1;
  next.arrived.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    next.arrived[i] = (i < state.arrived.size() && state.arrived[i]) || next.positions[i] == goals[i];
  return {std::move(next), std::move(report)};
}

std::pair<int, int> goal_mark(int dx, int dy, int fov) {
  if (fov < 1 || fov % 2 == 0) throw std::invalid_argument("fov must be a positive odd number");
  const int half = fov / 2;
  const int ring = half + 1;
  if (std::abs(dx) <= half && std::abs(dy) <= half) return {dy + ring, dx + ring};
  const double m = std::max(std::abs(dx), std::abs(dy));
  const int col = static_cast<int>(std::lround(dx * ring / m));
  const int row = static_cast<int>(std::lround(dy * ring / m));
  return {row + ring, col + ring};
}

namespace {

void fill_observation(std::span<const Cell> positions, const GridMap& map, Cell goal, int robot,
                      int fov, double* out) {
  const int size = fov + 2;
  const int ring = size / 2;
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  std::fill(out, out + 3 * plane, 0.0);
  const Cell me = positions[robot];
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const Cell world{me.x + c - ring, me.y + r - ring};
      if (!map.passable(world)) out[r * size + c] = 1.0;
    }
  }
  for (Cell p : positions) {
    const int c = p.x - me.x + ring;
    const int r = p.y - me.y + ring;
    if (r >= 0 && c >= 0 && r < size && c < size) out[plane + r * size + c] = 1.0;
  }
  const auto [gr, gc] = goal_mark(goal.x - me.x, goal.y - me.y, fov);
  out[2 * plane + gr * size + gc] = 1.0;
}

}  // namespace

Observation observe(std::span<const Cell> positions, const GridMap& map, Cell goal, int robot,
                    int fov) {
  if (robot < 0 || static_cast<std::size_t>(robot) >= positions.size())
    throw std::out_of_range("robot index");
  goal_mark(0, 0, fov);  // validates fov
  Observation obs;
  obs.size = fov + 2;
  obs.data.resize(static_cast<std::size_t>(kObservationChannels) * obs.size * obs.size);
  fill_observation(positions, map, goal, robot, fov, obs.data.data());
  return obs;
}

Observation observe(const WorldState& state, const GridMap& map, std::span<const Cell> goals,
                    int robot, int fov) {
  return observe(state.positions, map, goals[robot], robot, fov);
}

void observe_all(std::span<const Cell> positions, const GridMap& map,
                 std::span<const Cell> goals, int fov, std::span<double> out) {
  goal_mark(0, 0, fov);
  const std::size_t per = static_cast<std::size_t>(kObservationChannels) * (fov + 2) * (fov + 2);
  if (out.size() != per * positions.size()) throw std::invalid_argument("observation buffer size");
  for (std::size_t i = 0; i < positions.size(); ++i)
    fill_observation(positions, map, goals[i], static_cast<int>(i), fov, out.data() + i * per);
}

SplitSizes split_sizes(std::size_t n, double train_fraction, double valid_fraction) {
  SplitSizes s;
  s.train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
  s.valid = static_cast<std::size_t>(std::floor(valid_fraction * static_cast<double>(n) + 1e-9));
  s.test = n - s.train - s.valid;
  return s;
}

DatasetSplit split_dataset(std::vector<std::string> ids, std::uint64_t seed,
                           double train_fraction, double valid_fraction) {
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const SplitSizes s = split_sizes(ids.size(), train_fraction, valid_fraction);
  DatasetSplit out;
  out.train.assign(ids.begin(), ids.begin() + s.train);
  out.valid.assign(ids.begin() + s.train, ids.begin() + s.train + s.valid);
  out.test.assign(ids.begin() + s.train + s.valid, ids.end());
  return out;
}

}  // namespace magat
