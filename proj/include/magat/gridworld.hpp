#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace magat {

struct Cell {
  int x = 0;  // column, grows east
  int y = 0;  // row, grows south
  auto operator<=>(const Cell&) const = default;
};

/// Motion primitives. The numeric value is the index used for model logits
/// and checkpoints: up, down, left, right, idle.
enum class Action : std::uint8_t { Up = 0, Down = 1, Left = 2, Right = 3, Idle = 4 };

inline constexpr int kNumActions = 5;
inline constexpr std::array<Action, kNumActions> kAllActions = {
    Action::Up, Action::Down, Action::Left, Action::Right, Action::Idle};

Cell displacement(Action a);
Cell apply(Cell c, Action a);
char action_symbol(Action a);
Action action_from_symbol(char s);
std::string encode_actions(std::span<const Action> actions);
std::vector<Action> decode_actions(std::string_view symbols);
/// The action moving `from` to the 4-neighbour (or same cell) `to`.
Action action_between(Cell from, Cell to);

class GridMap {
 public:
  GridMap() = default;
  GridMap(int width, int height);
  GridMap(int width, int height, std::span<const Cell> obstacles);

  int width() const { return width_; }
  int height() const { return height_; }
  int num_cells() const { return width_ * height_; }
  bool in_bounds(Cell c) const {
    return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_;
  }
  bool blocked(Cell c) const { return blocked_[index(c)] != 0; }
  /// Out-of-map cells count as blocked.
  bool passable(Cell c) const { return in_bounds(c) && !blocked(c); }
  int index(Cell c) const { return c.y * width_ + c.x; }
  Cell cell(int index) const { return {index % width_, index / width_}; }

  void set_obstacle(Cell c);
  /// Obstacle cells in row-major order.
  std::vector<Cell> obstacles() const;
  std::vector<Cell> free_cells() const;
  int num_obstacles() const;

  friend bool operator==(const GridMap&, const GridMap&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> blocked_;
};

/// floor(density * W * H) obstacle cells drawn uniformly without replacement.
GridMap generate_map(int width, int height, double obstacle_density, std::uint64_t seed);
int obstacle_count(int width, int height, double obstacle_density);

struct GridWorldCase {
  GridMap map;
  std::vector<Cell> starts;
  std::vector<Cell> goals;
  std::optional<std::vector<std::vector<Action>>> expert_paths;
  std::string case_id;
  std::uint64_t rng_seed = 0;

  int num_robots() const { return static_cast<int>(starts.size()); }
  /// Longest expert path; throws if the case has no expert paths.
  int expert_makespan() const;
  /// Sum of expert path lengths; throws if the case has no expert paths.
  int expert_flowtime() const;
};

/// Throws std::invalid_argument describing the first violated invariant
/// (duplicate starts/goals, endpoints on obstacles or outside the map).
void check_case(const GridWorldCase& c);

enum class RejectReason { Unsolvable, Timeout };
std::string_view to_string(RejectReason r);

/// What a solver hands back to case generation: paths on success, otherwise a reason.
struct SolveOutcome {
  std::optional<std::vector<std::vector<Action>>> paths;
  RejectReason reason = RejectReason::Unsolvable;
};

using CaseSolver = std::function<SolveOutcome(const GridWorldCase&)>;

struct CaseResult {
  std::optional<GridWorldCase> accepted;
  RejectReason rejected = RejectReason::Unsolvable;
  explicit operator bool() const { return accepted.has_value(); }
};

/// Samples 2N distinct free cells (N starts then N goals) and keeps the case if
/// `solver` returns paths. Throws std::invalid_argument if the map has fewer
/// than 2N free cells.
CaseResult generate_case(const GridMap& map, int n_robots, std::uint64_t seed,
                         const CaseSolver& solver, std::string case_id = {});

struct WorldState {
  std::vector<Cell> positions;
  int time = 0;
  std::vector<bool> arrived;
};

WorldState initial_state(const GridWorldCase& c);

enum class ShieldReason { OutOfMap, Obstacle, VertexConflict, EdgeConflict, Arrived };
std::string_view to_string(ShieldReason r);

struct ShieldEvent {
  int robot = 0;
  Action requested = Action::Idle;
  ShieldReason reason = ShieldReason::Obstacle;
};

struct ShieldReport {
  std::vector<ShieldEvent> events;
  bool shielded(int robot) const;
};

/// Applies joint actions with collision shielding: illegal moves become idle
/// until the joint move is free of vertex and edge conflicts. Robots flagged in
/// `state.arrived` stay put. `goals` refreshes the arrived flags after the move.
std::pair<WorldState, ShieldReport> step(const WorldState& state, const GridMap& map,
                                         std::span<const Action> joint_actions,
                                         std::span<const Cell> goals);

inline constexpr int kObservationChannels = 3;

/// Egocentric observation: channel 0 obstacles, 1 robots, 2 goal, each of size
/// (fov+2) x (fov+2) stored row-major as [channel][row][col].
struct Observation {
  int size = 0;  // W_in == H_in
  std::vector<double> data;

  double at(int channel, int row, int col) const {
    return data[(static_cast<std::size_t>(channel) * size + row) * size + col];
  }
  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Goal-channel cell (row, col) for a goal displaced by (dx, dy) from the robot.
/// Goals inside the FOV map to their own cell; others are projected along the
/// robot->goal ray onto the outer ring of the window.
std::pair<int, int> goal_mark(int dx, int dy, int fov);

Observation observe(std::span<const Cell> positions, const GridMap& map, Cell goal,
                    int robot, int fov);
Observation observe(const WorldState& state, const GridMap& map, std::span<const Cell> goals,
                    int robot, int fov);

/// Writes the observation of every robot into `out` (N * 3 * W_in * W_in values).
void observe_all(std::span<const Cell> positions, const GridMap& map,
                 std::span<const Cell> goals, int fov, std::span<double> out);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
};

/// floor(0.70 n) / floor(0.15 n) / remainder.
SplitSizes split_sizes(std::size_t n, double train_fraction = 0.70,
                       double valid_fraction = 0.15);

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> valid;
  std::vector<std::string> test;
};

/// Seeded shuffle of `ids` partitioned by split_sizes.
DatasetSplit split_dataset(std::vector<std::string> ids, std::uint64_t seed,
                           double train_fraction = 0.70, double valid_fraction = 0.15);

}  // namespace magat
