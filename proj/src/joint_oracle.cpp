#include <algorithm>
#include <queue>
#include <stdexcept>
#include <unordered_map>

#include "magat/expert.hpp"

namespace magat {

OracleResult joint_state_oracle(const GridWorldCase& c, int max_robots, std::size_t max_states) {
  check_case(c);
  const int n = c.num_robots();
  if (n > max_robots)
    throw std::invalid_argument("joint-state oracle refuses " + std::to_string(n) + " robots (max " +
                                std::to_string(max_robots) + ")");
  const GridMap& map = c.map;
  const std::uint64_t cells = static_cast<std::uint64_t>(map.num_cells());

  std::vector<std::vector<int>> dist(n);
  std::vector<int> goal(n);
  for (int i = 0; i < n; ++i) {
    dist[i] = distance_field(map, c.goals[i]);
    goal[i] = map.index(c.goals[i]);
    if (dist[i][map.index(c.starts[i])] < 0) return {};  // disconnected
  }

  auto encode = [&](const std::vector<int>& pos) {
    std::uint64_t key = 0;
    for (int i = n - 1; i >= 0; --i) key = key * cells + static_cast<std::uint64_t>(pos[i]);
    return key;
  };
  auto decode = [&](std::uint64_t key) {
    std::vector<int> pos(n);
    for (int i = 0; i < n; ++i) {
      pos[i] = static_cast<int>(key % cells);
      key /= cells;
    }
    return pos;
  };
  auto heuristic = [&](const std::vector<int>& pos) {
    int h = 0;
    for (int i = 0; i < n; ++i) h += dist[i][pos[i]];
    return h;
  };

  std::vector<int> start(n);
  for (int i = 0; i < n; ++i) start[i] = map.index(c.starts[i]);

  // (f, g, key); robots standing on their goal have finished and never move again.
  using Entry = std::tuple<int, int, std::uint64_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> frontier;
  std::unordered_map<std::uint64_t, int> best_g;
  const std::uint64_t start_key = encode(start);
  best_g[start_key] = 0;
  frontier.push({heuristic(start), 0, start_key});

  OracleResult result;
  std::vector<int> next(n);
  while (!frontier.empty()) {
    const auto [f, g, key] = frontier.top();
    frontier.pop();
    if (best_g[key] < g) continue;
    ++result.expanded;
    const std::vector<int> pos = decode(key);
    std::vector<int> movers;
    for (int i = 0; i < n; ++i)
      if (pos[i] != goal[i]) movers.push_back(i);
    if (movers.empty()) {
      result.flowtime = g;
      return result;
    }
    const int step_cost = static_cast<int>(movers.size());

    // Enumerate the 5^k joint moves of the unfinished robots.
    std::vector<int> choice(movers.size(), 0);
    for (;;) {
      next = pos;
      bool legal = true;
      for (std::size_t m = 0; m < movers.size() && legal; ++m) {
        const Cell to = apply(map.cell(pos[movers[m]]), kAllActions[choice[m]]);
        if (!map.passable(to)) legal = false;
        else next[movers[m]] = map.index(to);
      }
      for (int a = 0; a < n && legal; ++a) {
        for (int b = a + 1; b < n && legal; ++b) {
          if (next[a] == next[b]) legal = false;
          if (next[a] == pos[b] && next[b] == pos[a] && pos[a] != pos[b]) legal = false;
        }
      }
      if (legal) {
        const std::uint64_t nk = encode(next);
        const int ng = g + step_cost;
        auto it = best_g.find(nk);
        if (it == best_g.end() || ng < it->second) {
          if (it == best_g.end() && best_g.size() >= max_states)
            throw std::runtime_error("joint-state oracle exceeded its state budget");
          best_g[nk] = ng;
          frontier.push({ng + heuristic(next), ng, nk});
        }
      }
      std::size_t m = 0;
      while (m < choice.size() && ++choice[m] == kNumActions) choice[m++] = 0;
      if (m == choice.size()) break;
    }
  }
  return result;
}

std::string_view to_string(ConflictKind k) {
  switch (k) {
    case ConflictKind::Vertex: return "vertex";
    case ConflictKind::Edge: return "edge";
    case ConflictKind::Obstacle: return "obstacle";
    case ConflictKind::OutOfMap: return "out_of_map";
  }
  return "?";
}

ValidationReport validate_solution(const GridWorldCase& c,
                                   const std::vector<std::vector<Action>>& paths) {
  const int n = c.num_robots();
  if (static_cast<int>(paths.size()) != n)
    throw std::invalid_argument("validate_solution: " + std::to_string(paths.size()) +
                                " paths for " + std::to_string(n) + " robots");
  ValidationReport rep;
  std::size_t horizon = 0;
  for (const auto& p : paths) horizon = std::max(horizon, p.size());

  auto flag = [&](Conflict conflict) {
    rep.collision_free = false;
    if (!rep.first_conflict) rep.first_conflict = conflict;
  };

  std::vector<Cell> pos = c.starts;
  std::vector<int> last_off_goal(n, -1);  // last step at which robot i was away from its goal
  for (int i = 0; i < n; ++i)
    if (pos[i] != c.goals[i]) last_off_goal[i] = 0;

  for (std::size_t t = 0; t < horizon; ++t) {
    const int arrive = static_cast<int>(t) + 1;
    std::vector<Cell> next = pos;
    for (int i = 0; i < n; ++i) {
      if (t >= paths[i].size()) continue;
      const Cell to = apply(pos[i], paths[i][t]);
      if (!c.map.in_bounds(to)) {
        flag({ConflictKind::OutOfMap, i, -1, arrive, to});
        continue;
      }
      if (c.map.blocked(to)) {
        flag({ConflictKind::Obstacle, i, -1, arrive, to});
        continue;
      }
      next[i] = to;
    }
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        if (next[a] == next[b]) flag({ConflictKind::Vertex, a, b, arrive, next[a]});
        else if (next[a] == pos[b] && next[b] == pos[a] && pos[a] != next[a])
          flag({ConflictKind::Edge, a, b, arrive, next[a]});
      }
    }
    pos = std::move(next);
    for (int i = 0; i < n; ++i)
      if (pos[i] != c.goals[i]) last_off_goal[i] = arrive;
  }

  rep.arrival_times.resize(n);
  for (int i = 0; i < n; ++i) {
    const bool arrived = pos[i] == c.goals[i];
    rep.all_arrive = rep.all_arrive && arrived;
    rep.arrival_times[i] = arrived ? last_off_goal[i] + 1 : static_cast<int>(paths[i].size());
    rep.flowtime += rep.arrival_times[i];
    rep.makespan = std::max(rep.makespan, rep.arrival_times[i]);
  }
  return rep;
}

}  // namespace magat
