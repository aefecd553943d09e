#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <memory>
#include <queue>
#include <set>
#include <stdexcept>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "magat/expert.hpp"

namespace magat {

std::string_view to_string(PlanFailure f) {
  return f == PlanFailure::Timeout ? "timeout" : "unsolvable";
}

std::vector<int> distance_field(const GridMap& map, Cell goal) {
  std::vector<int> dist(static_cast<std::size_t>(map.num_cells()), -1);
  if (!map.passable(goal)) return dist;
  std::deque<int> queue;
  dist[map.index(goal)] = 0;
  queue.push_back(map.index(goal));
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    for (Action a : kAllActions) {
      if (a == Action::Idle) continue;
      const Cell next = apply(map.cell(cur), a);
      if (!map.passable(next)) continue;
      int& d = dist[map.index(next)];
      if (d >= 0) continue;
      d = dist[cur] + 1;
      queue.push_back(map.index(next));
    }
  }
  return dist;
}

namespace {

using Path = std::vector<int>;  // cell index at each step; the robot rests on back() afterwards
using PathPtr = std::shared_ptr<const Path>;

int position_at(const Path& p, int t) {
  return p[std::min<std::size_t>(static_cast<std::size_t>(t), p.size() - 1)];
}

std::uint64_t pack(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return (a << 42) ^ (b << 21) ^ c;
}

struct Constraint {
  enum Kind { Vertex, Edge, VertexFrom } kind = Vertex;
  int from = 0;  // vertex constraints use `from` as the cell
  int to = 0;
  int time = 0;  // vertex: forbidden step; edge: departure step; from: first forbidden step
};

class ConstraintTable {
 public:
  ConstraintTable(const std::vector<Constraint>& constraints, int goal) {
    for (const Constraint& c : constraints) {
      switch (c.kind) {
        case Constraint::Edge:
          edge_.insert(pack(c.from, c.to, c.time));
          max_time_ = std::max(max_time_, c.time + 1);
          break;
        case Constraint::Vertex:
          vertex_.insert(pack(c.from, 0, c.time));
          max_time_ = std::max(max_time_, c.time);
          if (c.from == goal) last_goal_time_ = std::max(last_goal_time_, c.time);
          break;
        case Constraint::VertexFrom: {
          auto [it, fresh] = blocked_from_.try_emplace(c.from, c.time);
          if (!fresh) it->second = std::min(it->second, c.time);
          max_time_ = std::max(max_time_, c.time);
          if (c.from == goal) last_goal_time_ = INT32_MAX / 2;
          break;
        }
      }
    }
  }
  bool vertex_blocked(int cell, int t) const {
    if (auto it = blocked_from_.find(cell); it != blocked_from_.end() && t >= it->second) return true;
    return vertex_.count(pack(cell, 0, t)) != 0;
  }
  bool edge_blocked(int from, int to, int t) const { return edge_.count(pack(from, to, t)) != 0; }
  int max_time() const { return max_time_; }
  int last_goal_time() const { return last_goal_time_; }

 private:
  std::unordered_set<std::uint64_t> vertex_;
  std::unordered_set<std::uint64_t> edge_;
  std::unordered_map<int, int> blocked_from_;
  int max_time_ = 0;
  int last_goal_time_ = -1;
};

/// Positions of the other robots, used to count conflicts for the focal heuristic.
class Reservations {
 public:
  Reservations(int num_cells, const std::vector<const Path*>& others)
      : num_cells_(num_cells), others_(others) {
    for (const Path* p : others_) horizon_ = std::max(horizon_, static_cast<int>(p->size()) - 1);
    occupancy_.assign(static_cast<std::size_t>(horizon_ + 1) * num_cells_, 0);
    for (const Path* p : others_)
      for (int t = 0; t <= horizon_; ++t) ++occupancy_[slot(position_at(*p, t), t)];
  }
  int horizon() const { return horizon_; }
  int vertex(int cell, int t) const { return occupancy_[slot(cell, std::min(t, horizon_))]; }
  int edge(int from, int to, int t) const {
    if (from == to) return 0;
    int n = 0;
    for (const Path* p : others_)
      if (position_at(*p, t) == to && position_at(*p, t + 1) == from) ++n;
    return n;
  }
  /// Conflicts incurred by resting on `cell` from step `t` onwards.
  int resting(int cell, int t) const {
    int n = 0;
    for (int s = t + 1; s <= horizon_; ++s) n += occupancy_[slot(cell, s)];
    return n;
  }

 private:
  std::size_t slot(int cell, int t) const {
    return static_cast<std::size_t>(t) * num_cells_ + cell;
  }
  int num_cells_;
  int horizon_ = 0;
  std::vector<const Path*> others_;
  std::vector<std::uint16_t> occupancy_;
};

struct LowLevelResult {
  Path path;
  int lower_bound = 0;  // f_min of the focal search when the goal was popped
};

/// Focal A* over (cell, time). Beyond the last constraint and the last
/// movement of other robots the environment is static, so times past that
/// horizon collapse into one layer and the search space is finite.
std::optional<LowLevelResult> low_level_search(const GridMap& map, int start, int goal,
                                               const std::vector<int>& dist,
                                               const ConstraintTable& cons,
                                               const Reservations& others, double w,
                                               std::size_t& expansions) {
  if (dist[start] < 0) return std::nullopt;
  const int last_goal = cons.last_goal_time();
  if (start == goal && last_goal >= 0) return std::nullopt;
  if (cons.vertex_blocked(start, 0)) return std::nullopt;

  struct Node {
    int cell, t, f, conflicts, parent;
    bool closed;
  };
  const int t_cap = std::max(cons.max_time(), others.horizon()) + 1;
  auto key_of = [&](int cell, int t) -> std::uint64_t {
    return static_cast<std::uint64_t>(cell) * (t_cap + 1) + std::min(t, t_cap);
  };

  std::vector<Node> nodes;
  std::unordered_map<std::uint64_t, int> by_key;
  std::set<std::pair<int, int>> open;               // (f, id)
  std::set<std::tuple<int, int, int>> focal;        // (conflicts, f, id)

  auto push = [&](Node n, double bound) {
    const int id = static_cast<int>(nodes.size());
    nodes.push_back(n);
    by_key[key_of(n.cell, n.t)] = id;
    open.insert({n.f, id});
    if (n.f <= bound + 1e-9) focal.insert({n.conflicts, n.f, id});
  };

  double bound = w * dist[start];
  {
    int c0 = 0;
    if (start == goal) c0 = others.resting(goal, 0);
    push({start, 0, dist[start], c0, -1, false}, bound);
  }

  while (!open.empty()) {
    const int f_min = open.begin()->first;
    const double new_bound = w * f_min;
    if (new_bound > bound) {
      for (auto it = open.upper_bound({static_cast<int>(std::floor(bound + 1e-9)), INT32_MAX});
           it != open.end() && it->first <= new_bound + 1e-9; ++it)
        focal.insert({nodes[it->second].conflicts, it->first, it->second});
      bound = new_bound;
    }
    const auto [conf, f, id] = *focal.begin();
    focal.erase(focal.begin());
    open.erase({f, id});
    nodes[id].closed = true;
    const Node cur = nodes[id];
    ++expansions;

    if (cur.cell == goal) {
      LowLevelResult res;
      for (int at = id; at >= 0; at = nodes[at].parent) res.path.push_back(nodes[at].cell);
      std::reverse(res.path.begin(), res.path.end());
      res.lower_bound = f_min;
      return res;
    }

    const Cell here = map.cell(cur.cell);
    for (Action a : kAllActions) {
      const Cell nc = apply(here, a);
      if (!map.passable(nc)) continue;
      const int next = map.index(nc);
      const int t1 = cur.t + 1;
      if (dist[next] < 0) continue;
      if (cons.vertex_blocked(next, t1) || cons.edge_blocked(cur.cell, next, cur.t)) continue;
      // Entering the goal is final, so it must come after every goal constraint.
      if (next == goal && t1 <= last_goal) continue;
      int conflicts = cur.conflicts + others.vertex(next, t1) + others.edge(cur.cell, next, cur.t);
      if (next == goal) conflicts += others.resting(goal, t1);

      const std::uint64_t key = key_of(next, t1);
      if (auto found = by_key.find(key); found != by_key.end()) {
        Node& old = nodes[found->second];
        if (old.closed) continue;
        const bool better = t1 < old.t || (t1 == old.t && conflicts < old.conflicts);
        if (!better) continue;
        open.erase({old.f, found->second});
        focal.erase({old.conflicts, old.f, found->second});
        old.closed = true;  // superseded
      }
      push({next, t1, t1 + dist[next], conflicts, id, false}, bound);
    }
  }
  return std::nullopt;
}

struct HighLevelNode {
  int id = 0;
  int parent = -1;
  int agent = -1;
  Constraint constraint;
  std::vector<PathPtr> paths;
  std::vector<int> lower_bounds;
  int cost = 0;
  int lower_bound = 0;
  int conflicts = 0;
};

struct FoundConflict {
  bool edge = false;
  int a = 0, b = 0;
  int time = 0;      // arrival step of the conflicting positions
  int resting = -1;  // a or b when that robot already rests on its goal
};

/// Earliest conflict (by step, then robot pair) and the number of robot pairs in conflict.
std::pair<std::optional<FoundConflict>, int> find_conflicts(const std::vector<PathPtr>& paths) {
  const int n = static_cast<int>(paths.size());
  std::optional<FoundConflict> first;
  int pairs = 0;
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      const Path& pa = *paths[a];
      const Path& pb = *paths[b];
      const int horizon = static_cast<int>(std::max(pa.size(), pb.size()));
      for (int t = 1; t < horizon; ++t) {
        FoundConflict c{false, a, b, t};
        bool hit = false;
        if (position_at(pa, t) == position_at(pb, t)) {
          hit = true;
          if (t >= static_cast<int>(pb.size()) - 1) c.resting = b;
          else if (t >= static_cast<int>(pa.size()) - 1) c.resting = a;
        } else if (position_at(pa, t - 1) == position_at(pb, t) &&
                   position_at(pa, t) == position_at(pb, t - 1)) {
          c.edge = true;
          hit = true;
        }
        if (!hit) continue;
        ++pairs;
        if (!first || t < first->time) first = c;
        break;
      }
    }
  }
  return {first, pairs};
}

std::vector<Action> to_actions(const GridMap& map, const Path& path) {
  std::vector<Action> out;
  out.reserve(path.size());
  for (std::size_t t = 1; t < path.size(); ++t)
    out.push_back(action_between(map.cell(path[t - 1]), map.cell(path[t])));
  return out;
}

}  // namespace

PlanResult ecbs_solve(const GridMap& map, std::span<const Cell> starts,
                      std::span<const Cell> goals, const PlannerConfig& cfg) {
  if (cfg.bound < 1.0) throw std::invalid_argument("suboptimality bound must be >= 1");
  if (starts.size() != goals.size()) throw std::invalid_argument("starts/goals length mismatch");
  const int n = static_cast<int>(starts.size());
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                            std::chrono::duration<double>(cfg.time_budget_s));
  const double w = cfg.bound;

  std::vector<int> start_idx(n), goal_idx(n);
  std::vector<std::vector<int>> dist(n);
  for (int i = 0; i < n; ++i) {
    if (!map.passable(starts[i]) || !map.passable(goals[i]))
      throw std::invalid_argument("start or goal not on a free cell");
    start_idx[i] = map.index(starts[i]);
    goal_idx[i] = map.index(goals[i]);
    dist[i] = distance_field(map, goals[i]);
  }

  PlanResult result;
  std::size_t ll_expansions = 0;
  std::deque<HighLevelNode> tree;

  auto replan = [&](const HighLevelNode& node, int agent,
                    const std::vector<Constraint>& cons) -> std::optional<LowLevelResult> {
    std::vector<const Path*> others;
    for (int j = 0; j < n; ++j)
      if (j != agent && node.paths[j]) others.push_back(node.paths[j].get());
    const ConstraintTable table(cons, goal_idx[agent]);
    const Reservations res(map.num_cells(), others);
    return low_level_search(map, start_idx[agent], goal_idx[agent], dist[agent], table, res, w,
                            ll_expansions);
  };

  auto constraints_for = [&](int node_id, int agent) {
    std::vector<Constraint> cons;
    for (int at = node_id; at >= 0; at = tree[at].parent)
      if (tree[at].agent == agent) cons.push_back(tree[at].constraint);
    return cons;
  };

  auto finalize = [&](HighLevelNode& node) {
    node.cost = 0;
    node.lower_bound = 0;
    for (int i = 0; i < n; ++i) {
      node.cost += static_cast<int>(node.paths[i]->size()) - 1;
      node.lower_bound += node.lower_bounds[i];
    }
    node.conflicts = find_conflicts(node.paths).second;
  };

  {
    HighLevelNode root;
    root.paths.assign(n, nullptr);
    root.lower_bounds.assign(n, 0);
    for (int i = 0; i < n; ++i) {
      auto found = replan(root, i, {});
      if (!found) {
        result.failure = PlanFailure::Unsolvable;
        return result;
      }
      root.lower_bounds[i] = found->lower_bound;
      root.paths[i] = std::make_shared<const Path>(std::move(found->path));
    }
    finalize(root);
    tree.push_back(std::move(root));
  }

  std::set<std::pair<int, int>> open_by_lb;                // (lower bound, id)
  std::set<std::pair<int, int>> waiting_by_cost;           // open but not yet in focal
  std::set<std::tuple<int, int, int>> focal;               // (conflicts, cost, id)
  double bound = w * tree[0].lower_bound;

  auto insert = [&](const HighLevelNode& node) {
    open_by_lb.insert({node.lower_bound, node.id});
    if (node.cost <= bound + 1e-9)
      focal.insert({node.conflicts, node.cost, node.id});
    else
      waiting_by_cost.insert({node.cost, node.id});
  };
  insert(tree[0]);

  std::size_t expansions = 0;
  while (!open_by_lb.empty()) {
    const double new_bound = w * open_by_lb.begin()->first;
    if (new_bound > bound) {
      bound = new_bound;
      while (!waiting_by_cost.empty() && waiting_by_cost.begin()->first <= bound + 1e-9) {
        const int id = waiting_by_cost.begin()->second;
        waiting_by_cost.erase(waiting_by_cost.begin());
        focal.insert({tree[id].conflicts, tree[id].cost, id});
      }
    }
    if (cfg.max_high_level_expansions && expansions >= cfg.max_high_level_expansions) break;
    if ((expansions & 31) == 0 && std::chrono::steady_clock::now() > deadline) break;
    if (focal.empty()) break;  // unreachable when lower bounds are consistent

    const int id = std::get<2>(*focal.begin());
    focal.erase(focal.begin());
    open_by_lb.erase({tree[id].lower_bound, id});
    ++expansions;

    const auto [conflict, num_pairs] = find_conflicts(tree[id].paths);
    if (!conflict) {
      Solution sol;
      for (int i = 0; i < n; ++i) sol.paths.push_back(to_actions(map, *tree[id].paths[i]));
      sol.flowtime = tree[id].cost;
      for (const auto& p : sol.paths) sol.makespan = std::max(sol.makespan, static_cast<int>(p.size()));
      sol.high_level_expansions = expansions;
      sol.low_level_expansions = ll_expansions;
      result.solution = std::move(sol);
      return result;
    }

    for (int side = 0; side < 2; ++side) {
      const int agent = side == 0 ? conflict->a : conflict->b;
      const int other = side == 0 ? conflict->b : conflict->a;
      const Path& mine = *tree[id].paths[agent];
      const Path& theirs = *tree[id].paths[other];
      Constraint c;
      c.time = conflict->time;
      if (conflict->edge) {
        c.kind = Constraint::Edge;
        c.from = position_at(mine, conflict->time - 1);
        c.to = position_at(mine, conflict->time);
        c.time = conflict->time - 1;
      } else {
        c.from = position_at(theirs, conflict->time);
        // Target conflict: either the resting robot arrives later (plain vertex
        // constraint), or it has arrived by now and its goal is off limits to
        // the other robot from this step on.
        if (conflict->resting == other) c.kind = Constraint::VertexFrom;
      }

      HighLevelNode child;
      child.id = static_cast<int>(tree.size());
      child.parent = id;
      child.agent = agent;
      child.constraint = c;
      child.paths = tree[id].paths;
      child.lower_bounds = tree[id].lower_bounds;
      tree.push_back(child);  // constraints_for walks the tree, so the child must be in it
      auto found = replan(tree.back(), agent, constraints_for(child.id, agent));
      if (!found) {
        tree.pop_back();
        continue;
      }
      HighLevelNode& node = tree.back();
      // A child's constrained optimum is never below its parent's, so the
      // parent's bound carries over; this keeps the open-list minimum monotone.
      node.lower_bounds[agent] = std::max(node.lower_bounds[agent], found->lower_bound);
      node.paths[agent] = std::make_shared<const Path>(std::move(found->path));
      finalize(node);
      insert(node);
    }
  }

  result.failure = open_by_lb.empty() ? PlanFailure::Unsolvable : PlanFailure::Timeout;
  return result;
}

PlanResult ecbs_solve(const GridWorldCase& c, const PlannerConfig& cfg) {
  check_case(c);
  return ecbs_solve(c.map, c.starts, c.goals, cfg);
}

CaseSolver make_case_solver(PlannerConfig cfg) {
  return [cfg](const GridWorldCase& c) {
    SolveOutcome out;
    PlanResult r = ecbs_solve(c, cfg);
    if (r) {
      out.paths = std::move(r.solution->paths);
    } else {
      out.reason = r.failure == PlanFailure::Timeout ? RejectReason::Timeout : RejectReason::Unsolvable;
    }
    return out;
  };
}

}  // namespace magat
