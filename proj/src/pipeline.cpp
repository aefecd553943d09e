#include "magat/pipeline.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "magat/case_io.hpp"
#include "magat/evaluation.hpp"
#include "magat/runtime.hpp"

namespace magat {

using nlohmann::json;

namespace {

enum Stream : std::uint64_t { kData = 0xda7a, kSplit = 0x5b17, kEval = 0xe7a1 };

DecisionMode decision_from(const std::string& s) {
  if (s == "sample") return DecisionMode::Sample;
  if (s == "greedy") return DecisionMode::Greedy;
  throw std::invalid_argument("decision must be sample or greedy, got " + s);
}

}  // namespace

RunConfig RunConfig::defaults(std::string_view mode) {
  RunConfig c;
  c.mode = std::string(mode);
  if (mode == "desk") {
    c.train.schedule = TrainSchedule::desk();
  } else if (mode == "paper") {
    c.dataset = {.width = 20, .height = 20, .robots = 10, .obstacle_density = 0.1,
                 .train = 21000, .valid = 4500, .test = 4500};
    c.train.schedule = TrainSchedule::paper();
    c.data_dir = "data/paper";
    c.run_dir = "runs/paper";
    c.sweep_cases = 1000;
  } else {
    throw std::invalid_argument("mode must be desk or paper, got " + std::string(mode));
  }
  c.set_seed(c.seed);
  return c;
}

json RunConfig::to_json() const {
  json j;
  j["mode"] = mode;
  j["seed"] = seed;
  j["workers"] = workers;
  j["dataset"] = {{"width", dataset.width},
                  {"height", dataset.height},
                  {"robots", dataset.robots},
                  {"obstacle_density", dataset.obstacle_density},
                  {"train", dataset.train},
                  {"valid", dataset.valid},
                  {"test", dataset.test}};
  j["train"] = train.to_json();
  j["train"].erase("seed");  // always the run seed
  j["data_dir"] = data_dir.string();
  j["run_dir"] = run_dir.string();
  j["sweep_cases"] = sweep_cases;
  j["decision"] = decision == DecisionMode::Sample ? "sample" : "greedy";
  return j;
}

RunConfig RunConfig::from_json(const json& j, std::string_view fallback_mode) {
  const std::string mode = j.value("mode", std::string(fallback_mode));
  const RunConfig base = defaults(mode);
  json merged = base.to_json();
  json patch = j;
  std::string model_name;
  if (patch.contains("train") && patch["train"].contains("model") && patch["train"]["model"].is_string()) {
    model_name = patch["train"]["model"].get<std::string>();
    patch["train"].erase("model");
  }
  merged.merge_patch(patch);

  RunConfig c;
  c.mode = mode;
  const auto& d = merged.at("dataset");
  c.dataset = {.width = d.at("width"), .height = d.at("height"), .robots = d.at("robots"),
               .obstacle_density = d.at("obstacle_density"), .train = d.at("train"),
               .valid = d.at("valid"), .test = d.at("test")};
  c.train = TrainConfig::from_json(merged.at("train"));
  c.data_dir = merged.at("data_dir").get<std::string>();
  c.run_dir = merged.at("run_dir").get<std::string>();
  c.sweep_cases = merged.at("sweep_cases");
  c.decision = decision_from(merged.at("decision"));
  c.workers = merged.at("workers");
  c.set_seed(merged.at("seed").get<std::uint64_t>());
  if (!model_name.empty()) c.set_model(model_name);
  if (c.dataset.train <= 0 || c.dataset.valid < 0 || c.dataset.test < 0)
    throw std::invalid_argument("dataset split sizes must be positive");
  return c;
}

void RunConfig::set_model(std::string_view name) {
  ModelConfig m = ModelConfig::parse(name);
  const ModelConfig& old = train.model;
  m.fov = old.fov;
  m.leaky_slope = old.leaky_slope;
  m.weighting = old.weighting;
  m.cnn_widths = old.cnn_widths;
  m.hidden = old.hidden;
  m.validate();
  train.model = m;
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
}

std::uint64_t RunConfig::data_seed() const { return mix_seed(seed, kData); }
std::uint64_t RunConfig::eval_seed() const { return mix_seed(seed, kEval); }

RolloutOptions RunConfig::rollout_for(const ModelConfig& m) const {
  RolloutOptions r = train.rollout;
  r.fov = m.fov;
  r.weighting = m.weighting;
  return r;
}

DatasetSplit split_by_counts(std::vector<std::string> ids, std::uint64_t seed, std::size_t train,
                             std::size_t valid) {
  if (train + valid > ids.size()) throw std::invalid_argument("split sizes exceed the number of cases");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  DatasetSplit s;
  s.train.assign(ids.begin(), ids.begin() + train);
  s.valid.assign(ids.begin() + train, ids.begin() + train + valid);
  s.test.assign(ids.begin() + train + valid, ids.end());
  return s;
}

namespace {

Dataset assemble(DatasetSplit split, std::vector<GridWorldCase> cases) {
  std::unordered_map<std::string, std::size_t> at;
  for (std::size_t i = 0; i < cases.size(); ++i)
    if (!at.emplace(cases[i].case_id, i).second) throw std::runtime_error("duplicate case id " + cases[i].case_id);
  Dataset d;
  auto take = [&](const std::vector<std::string>& ids, std::vector<GridWorldCase>& out) {
    for (const auto& id : ids) {
      const auto it = at.find(id);
      if (it == at.end()) throw std::runtime_error("manifest names unknown case " + id);
      out.push_back(cases[it->second]);
    }
  };
  take(split.train, d.train);
  take(split.valid, d.valid);
  take(split.test, d.test);
  d.split = std::move(split);
  return d;
}

}  // namespace

Dataset generate_dataset(const RunConfig& cfg) {
  const DatasetConfig& dc = cfg.dataset;
  const SweepPoint point{dc.width, dc.height, dc.robots, dc.obstacle_density};
  auto cases = make_sweep_cases(point, dc.total(), cfg.data_seed(), cfg.train.planner);
  if (static_cast<int>(cases.size()) != dc.total())
    throw std::runtime_error("only " + std::to_string(cases.size()) + " of " + std::to_string(dc.total()) +
                             " cases could be solved");
  std::vector<std::string> ids;
  for (const auto& c : cases) ids.push_back(c.case_id);
  auto split = split_by_counts(std::move(ids), mix_seed(cfg.seed, kSplit), dc.train, dc.valid);
  return assemble(std::move(split), std::move(cases));
}

void save_dataset(const std::filesystem::path& dir, const Dataset& d, const RunConfig& cfg) {
  std::filesystem::create_directories(dir);
  std::vector<GridWorldCase> all;
  for (const auto* part : {&d.train, &d.valid, &d.test}) all.insert(all.end(), part->begin(), part->end());
  save_cases(dir / "cases.jsonl", all);
  save_manifest(dir / "manifest.json", {d.split, "cases.jsonl", cfg.to_json()});
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const DatasetManifest m = load_manifest(dir / "manifest.json");
  return assemble(m.split, load_cases(dir / m.cases_file));
}

Model load_model(const std::filesystem::path& checkpoint) {
  const ad::Checkpoint ck = ad::load_checkpoint(checkpoint.string());
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(ck.config);
  } catch (const std::exception& e) {
    throw std::runtime_error(checkpoint.string() + " is not a model checkpoint: " + e.what());
  }
  Model m(cfg, 0);
  m.load(ck);
  return m;
}

}  // namespace magat
