#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace magat::verify {

/// Outcome of one randomized property suite.
struct SuiteResult {
  std::string name;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double worst = 0.0;  // largest error metric seen, where the suite has one
  double seconds = 0.0;
  std::string note;    // first failure, or a summary

  bool passed() const { return trials > 0 && failures == 0; }
};

/// max |P A(X;S) - A(PX; P S P^T)| over random graph layers (all kinds,
/// multi-head) and some full models; fails above 1e-9.
SuiteResult equivariance(std::size_t trials, std::uint64_t seed);
/// Identical (Z, S) give bitwise identical logits, also after unrelated
/// forward passes in between. Runs single-threaded.
SuiteResult time_invariance(std::size_t trials, std::uint64_t seed);
/// Neighbour rows of E sum to 1 within 1e-9, off-edge and isolated rows are 0.
SuiteResult attention_normalization(std::size_t trials, std::uint64_t seed);
/// A MAGAT layer whose attention is forced to ones equals the GNN layer within 1e-12.
SuiteResult attention_reduces_to_gnn(std::size_t trials, std::uint64_t seed);
/// Central differences against backward for every differentiable op and for
/// the end-to-end MAGAT-F-16 model on three robots; fails at relative error 1e-4.
SuiteResult gradients(std::size_t trials_per_op, std::uint64_t seed);
/// ECBS against the joint-state oracle on small random instances: flowtime
/// within the bound, collision-free, and no solvable instance left unsolved.
SuiteResult ecbs_soundness(std::size_t instances, std::uint64_t seed);
/// Expert replay gives zero flowtime increase, the planted two-robot failure
/// gives FT = 16 and increase 1.0, and rollouts stop at 3 x expert makespan.
SuiteResult metric_identities(std::size_t cases, std::uint64_t seed);
/// Head-concatenation and action-head widths of MAGAT-F-32-P4 and MAGAT-B-64.
SuiteResult shape_contracts();

}  // namespace magat::verify
