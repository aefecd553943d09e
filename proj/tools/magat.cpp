// magat: dataset generation, expert solving, training, evaluation and the
// property suites from one binary. Run `magat config` to see every setting.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "magat/case_io.hpp"
#include "magat/evaluation.hpp"
#include "magat/expert.hpp"
#include "magat/pipeline.hpp"
#include "magat/runtime.hpp"
#include "magat/training.hpp"
#include "magat/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace magat;

namespace {

struct Common {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string mode;
  std::string model;
};

RunConfig resolve(const Common& o) {
  json j = json::object();
  if (!o.config_file.empty()) {
    std::ifstream is(o.config_file);
    if (!is) throw std::runtime_error("cannot read " + o.config_file);
    j = json::parse(is, nullptr, true, true);
  }
  if (!o.mode.empty()) j["mode"] = o.mode;
  RunConfig cfg = RunConfig::from_json(j);
  if (o.seed) cfg.set_seed(*o.seed);
  if (o.workers) cfg.workers = *o.workers;
  if (!o.model.empty()) cfg.set_model(o.model);
  set_workers(cfg.workers);
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

std::ofstream open_text(const fs::path& path, const RunConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "# config " << cfg.to_json().dump() << '\n';
  return os;
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json metrics_json(const MetricsReport& m) {
  return {{"cases", m.cases},
          {"success_rate", m.success_rate},
          {"flowtime_increase", m.mean_flowtime_increase},
          {"robot_success", m.robot_success}};
}

std::string file_label(const SweepPoint& p) {
  return std::to_string(p.width) + "x" + std::to_string(p.height) + "_" + std::to_string(p.robots);
}

int cmd_generate(const RunConfig& cfg, const std::string& out) {
  const fs::path dir = out.empty() ? cfg.data_dir : fs::path(out);
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset d = generate_dataset(cfg);
  save_dataset(dir, d, cfg);
  std::printf("%zu train / %zu valid / %zu test cases (%dx%d, %d robots) in %.1fs -> %s\n", d.train.size(),
              d.valid.size(), d.test.size(), cfg.dataset.width, cfg.dataset.height, cfg.dataset.robots, since(t0),
              dir.c_str());
  return 0;
}

int cmd_solve(RunConfig cfg, const std::string& input, const std::string& output, std::optional<double> bound,
              std::optional<double> budget) {
  if (bound) cfg.train.planner.bound = *bound;
  if (budget) cfg.train.planner.time_budget_s = *budget;
  auto cases = load_cases(input);
  std::vector<std::optional<PlanResult>> results(cases.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < cases.size(); ++i) results[i] = ecbs_solve(cases[i], cfg.train.planner);

  std::vector<GridWorldCase> solved;
  int failed = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const PlanResult& r = *results[i];
    if (!r) {
      ++failed;
      std::fprintf(stderr, "%s: %s\n", cases[i].case_id.c_str(), std::string(to_string(r.failure)).c_str());
      continue;
    }
    cases[i].expert_paths = r.solution->paths;
    solved.push_back(std::move(cases[i]));
  }
  save_cases(output, solved);
  write_json(fs::path(output).concat(".config.json"), cfg.to_json());
  std::printf("solved %zu of %zu cases (w = %g) -> %s\n", solved.size(), cases.size(), cfg.train.planner.bound,
              output.c_str());
  return failed ? 1 : 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data, const std::string& out, bool fresh) {
  const fs::path data_dir = data.empty() ? cfg.data_dir : fs::path(data);
  const fs::path run_dir = out.empty() ? cfg.run_dir : fs::path(out);
  const Dataset d = load_dataset(data_dir);
  fs::create_directories(run_dir);
  if (fresh)
    for (const char* f : {"state.mgck", "train_log.jsonl", "extra_cases.jsonl"}) fs::remove(run_dir / f);

  Trainer trainer(cfg.train, d.train, d.valid, run_dir);
  if (trainer.resume()) std::printf("resumed %s at epoch %d\n", run_dir.c_str(), trainer.epoch());
  json echoed = cfg.to_json();
  echoed["data_dir"] = data_dir.string();
  echoed["run_dir"] = run_dir.string();
  write_json(run_dir / "run_config.json", echoed);
  std::printf("%s: %zu cases, %zu pairs, %zu parameters\n", cfg.train.model.name().c_str(), d.train.size(),
              trainer.num_pairs(), trainer.model().num_scalars());

  const auto t0 = std::chrono::steady_clock::now();
  trainer.run([&](const EpochLog& e) {
    std::printf("epoch %3d  lr %.2e  loss %.4f  acc %.4f", e.epoch, e.lr, e.loss, e.accuracy);
    if (e.val_success) std::printf("  val success %.3f acc %.4f", *e.val_success, *e.val_accuracy);
    if (e.oe_failed) std::printf("  oe +%d", e.oe_added_cases);
    std::printf("  %.0fs\n", since(t0));
    std::fflush(stdout);
  });

  if (!d.test.empty()) {
    const Model& best = trainer.best_model();
    const MetricsReport m =
        evaluate_set(model_policy(best, cfg.decision), d.test, cfg.rollout_for(best.config()), cfg.eval_seed());
    json j = metrics_json(m);
    j["split"] = "test";
    j["best_epoch"] = trainer.best_epoch() ? json(*trainer.best_epoch()) : json();
    j["config"] = echoed;
    write_json(run_dir / "test_metrics.json", j);
    std::printf("test success %.3f  flowtime increase %.4f  robots at goal %.3f\n", m.success_rate,
                m.mean_flowtime_increase, m.robot_success);
  }
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string sweep;
  std::string case_id;
  std::string split = "test";
  std::string data;
  std::string out = "eval";
  bool strict = false;
};

int cmd_evaluate(RunConfig cfg, const EvalArgs& a) {
  const Model model = a.checkpoint.empty() ? Model(cfg.train.model, cfg.seed) : load_model(a.checkpoint);
  if (a.checkpoint.empty()) std::printf("no checkpoint given: evaluating an untrained %s\n", model.config().name().c_str());
  cfg.train.model = model.config();
  RolloutOptions ropt = cfg.rollout_for(model.config());
  ropt.strict = ropt.strict || a.strict;
  const Policy policy = model_policy(model, cfg.decision);
  const fs::path out = a.out;
  fs::create_directories(out);
  json echoed = cfg.to_json();
  echoed["checkpoint"] = a.checkpoint;
  echoed["strict"] = ropt.strict;
  write_json(out / "run_config.json", echoed);

  auto dataset_cases = [&] {
    const Dataset d = load_dataset(a.data.empty() ? cfg.data_dir : fs::path(a.data));
    if (a.split == "train") return d.train;
    if (a.split == "valid") return d.valid;
    if (a.split == "test") return d.test;
    throw std::invalid_argument("split must be train, valid or test");
  };

  if (!a.case_id.empty()) {
    const auto cases = dataset_cases();
    const auto it = std::find_if(cases.begin(), cases.end(), [&](const auto& c) { return c.case_id == a.case_id; });
    if (it == cases.end()) throw std::invalid_argument("no case " + a.case_id + " in the " + a.split + " split");
    ropt.record_attention = true;
    const RolloutRecord r = rollout(*it, policy, ropt, case_seed(cfg.eval_seed(), it->case_id));
    auto os = open_text(out / ("attention_" + a.case_id + ".txt"), cfg);
    write_attention_dump(os, r);
    std::printf("%s: %s, %d of %d robots at goal after %d steps\n", a.case_id.c_str(),
                r.success() ? "success" : "failure", r.robots_at_goal(), r.num_robots(), r.steps);
    return 0;
  }

  if (a.sweep.empty()) {
    const auto cases = dataset_cases();
    const MetricsReport m = evaluate_set(policy, cases, ropt, cfg.eval_seed());
    json j = metrics_json(m);
    j["split"] = a.split;
    j["config"] = echoed;
    write_json(out / ("metrics_" + a.split + ".json"), j);
    auto details = open_text(out / ("details_" + a.split + ".txt"), cfg);
    write_case_details(details, m);
    auto hist = open_text(out / ("histogram_" + a.split + ".txt"), cfg);
    write_histogram(hist, m);
    std::printf("%s: %zu cases  success %.3f  flowtime increase %.4f  robots at goal %.3f\n", a.split.c_str(),
                m.cases, m.success_rate, m.mean_flowtime_increase, m.robot_success);
    return 0;
  }

  const auto points = sweep_points(a.sweep);
  std::ofstream records(out / ("sweep_" + a.sweep + ".jsonl"));
  auto curve = open_text(out / ("curve_" + a.sweep + ".txt"), cfg);
  curve << "# map robots rho_robot cases success_rate flowtime_increase robot_success\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const SweepPoint& p = points[i];
    const auto t0 = std::chrono::steady_clock::now();
    const auto cases = make_sweep_cases(p, cfg.sweep_cases, mix_seed(cfg.eval_seed(), i), cfg.train.planner);
    const MetricsReport m = evaluate_set(policy, cases, ropt, cfg.eval_seed());
    json rec = sweep_record(p, m);
    rec["config"] = echoed;
    records << rec.dump() << '\n' << std::flush;
    curve << p.width << 'x' << p.height << ' ' << p.robots << ' ' << p.robot_density() << ' ' << m.cases << ' '
          << m.success_rate << ' ' << m.mean_flowtime_increase << ' ' << m.robot_success << '\n'
          << std::flush;
    auto details = open_text(out / ("details_" + file_label(p) + ".txt"), cfg);
    write_case_details(details, m);
    auto hist = open_text(out / ("histogram_" + file_label(p) + ".txt"), cfg);
    write_histogram(hist, m);
    std::printf("%-10s %4zu cases  success %.3f  flowtime increase %.4f  robots at goal %.3f  %.0fs\n",
                p.label().c_str(), m.cases, m.success_rate, m.mean_flowtime_increase, m.robot_success, since(t0));
    std::fflush(stdout);
  }
  return 0;
}

int cmd_verify(std::uint64_t seed, bool quick) {
  const std::size_t k = quick ? 10 : 1;
  std::vector<verify::SuiteResult> results;
  auto run = [&](verify::SuiteResult r) {
    std::printf("%-32s %s  trials %zu  failures %zu  worst %.3g  %.1fs  %s\n", r.name.c_str(),
                r.passed() ? "ok  " : "FAIL", r.trials, r.failures, r.worst, r.seconds, r.note.c_str());
    std::fflush(stdout);
    results.push_back(std::move(r));
  };
  run(verify::equivariance(1000 / k, seed));
  run(verify::time_invariance(100 / k, seed + 1));
  run(verify::attention_normalization(500 / k, seed + 2));
  run(verify::attention_reduces_to_gnn(500 / k, seed + 3));
  run(verify::gradients(quick ? 10 : 100, seed + 4));
  run(verify::ecbs_soundness(quick ? 20 : 200, seed + 5));
  run(verify::metric_identities(quick ? 5 : 25, seed + 6));
  run(verify::shape_contracts());
  const bool ok = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed(); });
  std::printf("%s\n", ok ? "all suites passed" : "some suites FAILED");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Multi-robot path planning with graph attention: data, training and evaluation"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_file, "JSON run configuration; unset keys keep the mode defaults");
    sub->add_option("--seed", common.seed, "seed for data, training and evaluation");
    sub->add_option("--workers", common.workers, "worker threads, 0 = all cores");
    sub->add_option("--mode", common.mode, "default set")->check(CLI::IsMember({"desk", "paper"}));
    sub->add_option("--model", common.model, "model string such as MAGAT-F-32 or GNN-B-64-P4");
  };

  auto* config = app.add_subcommand("config", "print the resolved configuration");
  add_common(config);

  std::string out;
  auto* generate = app.add_subcommand("generate", "generate and solve a dataset with its split manifest");
  add_common(generate);
  generate->add_option("--out", out, "dataset directory (default: data_dir)");

  std::string input, output;
  std::optional<double> bound, budget;
  auto* solve = app.add_subcommand("solve", "solve cases with ECBS and attach the expert paths");
  add_common(solve);
  solve->add_option("--input", input, "cases (JSON lines)")->required();
  solve->add_option("--output", output, "solved cases (JSON lines)")->required();
  solve->add_option("-w,--bound", bound, "suboptimality bound w");
  solve->add_option("--budget", budget, "wall-clock budget per case in seconds");

  std::string data;
  bool fresh = false;
  auto* train = app.add_subcommand("train", "train a model, resuming from run_dir/state.mgck when present");
  add_common(train);
  train->add_option("--data", data, "dataset directory (default: data_dir)");
  train->add_option("--out", out, "run directory (default: run_dir)");
  train->add_flag("--fresh", fresh, "ignore saved state and start over");

  EvalArgs ev;
  bool greedy = false;
  auto* evaluate = app.add_subcommand("evaluate", "roll out a model on a dataset split, a sweep or one case");
  add_common(evaluate);
  evaluate->add_option("--checkpoint", ev.checkpoint, "model checkpoint; without it the untrained --model is used");
  evaluate->add_option("--sweep", ev.sweep, "map sweep")
      ->check(CLI::IsMember({"same-density", "increasing-density", "large-scale"}));
  evaluate->add_option("--case", ev.case_id, "roll out one case and dump its attention matrices");
  evaluate->add_option("--split", ev.split, "dataset split")->check(CLI::IsMember({"train", "valid", "test"}));
  evaluate->add_option("--data", ev.data, "dataset directory (default: data_dir)");
  evaluate->add_option("--out", ev.out, "output directory");
  evaluate->add_flag("--greedy", greedy, "argmax actions instead of sampling");
  evaluate->add_flag("--strict", ev.strict, "count any blocked move as a collision");

  bool quick = false;
  auto* verify = app.add_subcommand("verify", "run the property suites; nonzero exit on any failure");
  add_common(verify);
  verify->add_flag("--quick", quick, "a tenth of the trials");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = resolve(common);
    if (config->parsed()) {
      std::printf("%s\n", cfg.to_json().dump(2).c_str());
      return 0;
    }
    if (generate->parsed()) return cmd_generate(cfg, out);
    if (solve->parsed()) return cmd_solve(cfg, input, output, bound, budget);
    if (train->parsed()) return cmd_train(cfg, data, out, fresh);
    if (evaluate->parsed()) {
      if (greedy) cfg.decision = DecisionMode::Greedy;
      return cmd_evaluate(cfg, ev);
    }
    if (verify->parsed()) return cmd_verify(cfg.seed, quick);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
