#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "magat/autodiff.hpp"
#include "magat/evaluation.hpp"
#include "magat/expert.hpp"
#include "magat/model.hpp"

namespace magat {

/// All robots of one case at one timestep. Observations are binary, kept as bytes.
struct TrainingPair {
  int robots = 0;
  std::vector<std::uint8_t> observations;  // [robot][channel][row][col]
  SparseGraph graph;
  std::vector<int> actions;  // expert action index per robot
};

struct PairOptions {
  int fov = 9;
  double r_comm = 7.0;
  EdgeWeighting weighting = EdgeWeighting::Binary;
};

/// Replays the expert paths and emits one pair per step up to the makespan.
/// Robots whose path has ended (or that rest on their goal) are labelled idle.
std::vector<TrainingPair> build_pairs(const GridWorldCase& c, const PairOptions& opt);
void append_pairs(std::vector<TrainingPair>& out, std::span<const GridWorldCase> cases, const PairOptions& opt);

struct Batch {
  ad::Tensor observations;  // NHWC over all robots of all pairs
  ad::GraphPtr graph;       // block diagonal
  std::vector<int> labels;
  int pairs = 0;
};
Batch make_batch(std::span<const TrainingPair* const> pairs, int observation_size);

struct TrainSchedule {
  int batch_size = 64;
  int epochs = 100;
  double lr_max = 1e-3;
  double lr_min = 1e-6;
  int lr_period = 0;  // cosine period in epochs; 0 means `epochs`
  int validation_period = 4;
  int validation_cases = 1000;  // at most this many validation cases are rolled out
  int online_expert_period = 4;
  int online_expert_cases = 500;  // n_OE; 0 disables the online expert
  bool replan_from_failure = false;
  ad::AdamConfig adam;

  static TrainSchedule desk();
  static TrainSchedule paper();
  void validate() const;
};

struct EpochStats {
  double loss = 0.0;      // cross-entropy summed over robots, averaged over pairs
  double accuracy = 0.0;  // fraction of robots whose argmax matches the expert
  std::size_t pairs = 0;
};

/// One pass in seeded shuffled order; Adam step per batch with the batch loss
/// divided by the batch's pair count.
EpochStats train_epoch(Model& model, ad::Adam& adam, std::span<const TrainingPair> pairs, int batch_size,
                       double lr, std::uint64_t shuffle_seed);
/// Same statistics without updating anything.
EpochStats evaluate_pairs(const Model& model, std::span<const TrainingPair> pairs, int batch_size);

struct OnlineExpertResult {
  std::vector<GridWorldCase> added;  // expert-solved copies of failed cases
  int rolled_out = 0;
  int failed = 0;
  std::vector<std::string> skipped;  // case ids whose replan hit the planner budget
};

/// Rolls out `count` distinct random cases of `training` with `policy` (the
/// stochastic model policy during training) and re-solves the failures with
/// ECBS, from the original starts or, with `from_failure`, from where the
/// rollout left the robots.
OnlineExpertResult online_expert_round(const Policy& policy, std::span<const GridWorldCase> training, int count,
                                       const PlannerConfig& planner, const RolloutOptions& rollout_opt,
                                       bool from_failure, std::uint64_t seed, const std::string& tag);

struct TrainConfig {
  ModelConfig model;
  TrainSchedule schedule;
  RolloutOptions rollout;
  PlannerConfig planner;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  PairOptions pair_options() const { return {rollout.fov, rollout.r_comm, rollout.weighting}; }
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t pairs = 0;
  std::optional<double> val_success;
  std::optional<double> val_accuracy;
  std::optional<double> val_loss;
  int oe_failed = 0;
  int oe_added_cases = 0;
  std::vector<std::string> oe_skipped;

  nlohmann::ordered_json to_json() const;
};

/// Imitation learning with periodic validation and online-expert augmentation.
/// With an output directory it writes:
///   train_log.jsonl   one EpochLog per line
///   epoch_NNNN.mgck   model after every validation round
///   best.mgck         model with the best validation success so far
///   state.mgck        model, optimizer moments and counters for resume
///   extra_cases.jsonl cases appended by the online expert
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<GridWorldCase> train, std::vector<GridWorldCase> valid,
          std::filesystem::path out_dir = {});

  bool done() const { return epoch_ >= cfg_.schedule.epochs; }
  EpochLog run_epoch();
  void run(const std::function<void(const EpochLog&)>& on_epoch = {});

  /// Restores from `out_dir/state.mgck` if present. Throws if its configuration
  /// differs from this trainer's.
  bool resume();

  const Model& model() const { return model_; }
  const Model& best_model() const { return best_; }
  std::optional<int> best_epoch() const { return best_epoch_; }
  int epoch() const { return epoch_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<EpochLog>& history() const { return history_; }
  std::size_t num_pairs() const { return pairs_.size(); }
  std::size_t num_training_cases() const { return train_.size() + extra_.size(); }
  std::span<const GridWorldCase> extra_cases() const { return extra_; }

  ad::Checkpoint state_checkpoint() const;

 private:
  void validate_round(EpochLog& log);
  void online_expert(EpochLog& log);
  void write_outputs(const EpochLog& log, bool validated) const;

  TrainConfig cfg_;
  std::vector<GridWorldCase> train_;
  std::vector<GridWorldCase> valid_;
  std::vector<GridWorldCase> extra_;
  std::filesystem::path out_;
  Model model_;
  Model best_;
  ad::Adam adam_;
  std::vector<TrainingPair> pairs_;
  std::vector<TrainingPair> valid_pairs_;
  int epoch_ = 0;
  std::optional<int> best_epoch_;
  double best_success_ = -1.0;
  double best_accuracy_ = -1.0;
  std::vector<EpochLog> history_;
};

}  // namespace magat
