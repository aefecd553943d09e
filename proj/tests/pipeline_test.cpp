#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "magat/case_io.hpp"
#include "magat/pipeline.hpp"

namespace magat {
namespace {

TEST(RunConfig, ModeDefaults) {
  const RunConfig desk = RunConfig::defaults("desk");
  EXPECT_EQ(desk.dataset.width, 10);
  EXPECT_EQ(desk.dataset.robots, 4);
  EXPECT_EQ(desk.dataset.train, 1000);
  EXPECT_EQ(desk.dataset.valid, 200);
  EXPECT_EQ(desk.dataset.test, 200);
  EXPECT_EQ(desk.train.schedule.epochs, 100);
  EXPECT_EQ(desk.train.rollout.r_comm, 7.0);

  const RunConfig paper = RunConfig::defaults("paper");
  EXPECT_EQ(paper.dataset.width, 20);
  EXPECT_EQ(paper.dataset.robots, 10);
  EXPECT_EQ(paper.dataset.total(), 30000);
  EXPECT_EQ(paper.dataset.train, 21000);
  EXPECT_EQ(paper.dataset.valid, 4500);
  EXPECT_EQ(paper.dataset.test, 4500);

  EXPECT_THROW(RunConfig::defaults("huge"), std::invalid_argument);
}

TEST(RunConfig, JsonRoundTripAndPatch) {
  RunConfig c = RunConfig::defaults("paper");
  c.set_seed(42);
  c.set_model("GAT-B-64-P2");
  const RunConfig back = RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.train.seed, 42u);

  const auto patched = RunConfig::from_json(
      nlohmann::json::parse(R"({"train": {"model": "GNN-F-16", "rollout": {"r_comm": 5}}, "dataset": {"robots": 6}})"));
  EXPECT_EQ(patched.mode, "desk");
  EXPECT_EQ(patched.train.model.name(), "GNN-F-16");
  EXPECT_EQ(patched.train.rollout.r_comm, 5.0);
  EXPECT_EQ(patched.dataset.robots, 6);
  EXPECT_EQ(patched.dataset.width, 10);
}

TEST(Split, CountsArePartition) {
  std::vector<std::string> ids;
  for (int i = 0; i < 50; ++i) ids.push_back("c" + std::to_string(i));
  const DatasetSplit s = split_by_counts(ids, 3, 30, 12);
  EXPECT_EQ(s.train.size(), 30u);
  EXPECT_EQ(s.valid.size(), 12u);
  EXPECT_EQ(s.test.size(), 8u);
  std::set<std::string> all(s.train.begin(), s.train.end());
  all.insert(s.valid.begin(), s.valid.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 50u);
  EXPECT_EQ(split_by_counts(ids, 3, 30, 12).train, s.train);
  EXPECT_THROW(split_by_counts(ids, 3, 40, 11), std::invalid_argument);
}

TEST(Dataset, GenerateSaveLoad) {
  RunConfig c = RunConfig::defaults("desk");
  c.dataset.train = 12;
  c.dataset.valid = 4;
  c.dataset.test = 4;
  const Dataset d = generate_dataset(c);
  ASSERT_EQ(d.train.size(), 12u);
  for (const auto& cs : d.train) EXPECT_TRUE(cs.expert_paths.has_value());

  const auto dir = std::filesystem::temp_directory_path() / "magat_pipeline_test";
  std::filesystem::remove_all(dir);
  save_dataset(dir, d, c);
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.split.train, d.split.train);
  EXPECT_EQ(back.split.test, d.split.test);
  ASSERT_EQ(back.test.size(), 4u);
  EXPECT_EQ(back.test[2].starts, d.test[2].starts);
  EXPECT_EQ(back.test[2].expert_paths, d.test[2].expert_paths);
  EXPECT_EQ(load_manifest(dir / "manifest.json").config, c.to_json());

  // same seed, same data
  const Dataset again = generate_dataset(c);
  EXPECT_EQ(again.split.valid, d.split.valid);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, LoadModelRebuildsConfig) {
  const Model m(ModelConfig::parse("MAGAT-B-16-P2"), 9);
  const auto path = std::filesystem::temp_directory_path() / "magat_pipeline_model.mgck";
  ad::save_checkpoint(m.to_checkpoint(), path.string());
  const Model back = load_model(path);
  EXPECT_EQ(back.config(), m.config());
  for (std::size_t i = 0; i < m.parameters().size(); ++i)
    EXPECT_TRUE(std::ranges::equal(back.parameters()[i].values(), m.parameters()[i].values()));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace magat
