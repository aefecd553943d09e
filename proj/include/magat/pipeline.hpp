#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "magat/gridworld.hpp"
#include "magat/model.hpp"
#include "magat/training.hpp"

namespace magat {

struct DatasetConfig {
  int width = 10;
  int height = 10;
  int robots = 4;
  double obstacle_density = 0.1;
  int train = 1000;
  int valid = 200;
  int test = 200;

  int total() const { return train + valid + test; }
};

/// Everything a command needs, loadable from one JSON file. Unset keys keep
/// the defaults of the selected mode (see `magat config --mode desk`).
struct RunConfig {
  std::string mode = "desk";
  std::uint64_t seed = 1;
  int workers = 0;  // 0: all available cores
  DatasetConfig dataset;
  TrainConfig train;
  std::filesystem::path data_dir = "data/desk";
  std::filesystem::path run_dir = "runs/desk";
  int sweep_cases = 100;  // cases per sweep point
  DecisionMode decision = DecisionMode::Sample;

  /// "desk": 10x10, 4 robots, 1000/200/200 cases, 100 epochs.
  /// "paper": 20x20, 10 robots, 30000 cases split 70/15/15, 300 epochs.
  static RunConfig defaults(std::string_view mode);
  /// Mode defaults (from j["mode"], else `fallback_mode`) merged with `j`.
  static RunConfig from_json(const nlohmann::json& j, std::string_view fallback_mode = "desk");
  nlohmann::json to_json() const;

  /// Sets the model string and keeps fov and weighting consistent with it.
  void set_model(std::string_view name);
  /// Seed propagated to data, training and evaluation streams.
  void set_seed(std::uint64_t s);
  std::uint64_t data_seed() const;
  std::uint64_t eval_seed() const;
  RolloutOptions rollout_for(const ModelConfig& m) const;
};

struct Dataset {
  DatasetSplit split;
  std::vector<GridWorldCase> train;
  std::vector<GridWorldCase> valid;
  std::vector<GridWorldCase> test;
};

/// Solves `total()` cases with ECBS and partitions them by a seeded shuffle.
Dataset generate_dataset(const RunConfig& cfg);
/// Writes cases.jsonl and manifest.json (which echoes the config).
void save_dataset(const std::filesystem::path& dir, const Dataset& d, const RunConfig& cfg);
Dataset load_dataset(const std::filesystem::path& dir);

/// Seeded shuffle of `ids` cut into train / valid / rest.
DatasetSplit split_by_counts(std::vector<std::string> ids, std::uint64_t seed, std::size_t train,
                             std::size_t valid);

/// Builds the model recorded in a checkpoint written by Model::to_checkpoint.
Model load_model(const std::filesystem::path& checkpoint);

}  // namespace magat
