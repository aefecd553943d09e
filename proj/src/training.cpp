#include "magat/training.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "magat/case_io.hpp"
#include "magat/runtime.hpp"

namespace magat {

std::vector<TrainingPair> build_pairs(const GridWorldCase& c, const PairOptions& opt) {
  if (!c.expert_paths) throw std::invalid_argument("case " + c.case_id + " has no expert paths");
  const auto& paths = *c.expert_paths;
  const int n = c.num_robots();
  const int size = opt.fov + 2;
  const std::size_t per_pair = static_cast<std::size_t>(n) * kObservationChannels * size * size;
  std::vector<double> obs(per_pair);
  std::vector<TrainingPair> out;
  WorldState state = initial_state(c);
  const int makespan = c.expert_makespan();
  for (int t = 0; t < makespan; ++t) {
    TrainingPair p;
    p.robots = n;
    observe_all(state.positions, c.map, c.goals, opt.fov, obs);
    p.observations.assign(obs.begin(), obs.end());
    p.graph = build_sparse_adjacency(state.positions, opt.r_comm, opt.weighting);
    std::vector<Action> joint(n, Action::Idle);
    p.actions.assign(n, static_cast<int>(Action::Idle));
    for (int i = 0; i < n; ++i) {
      if (state.arrived[i] || t >= static_cast<int>(paths[i].size())) continue;
      joint[i] = paths[i][t];
      p.actions[i] = static_cast<int>(joint[i]);
    }
    auto [next, report] = step(state, c.map, joint, c.goals);
    if (!report.events.empty())
      throw std::invalid_argument("expert paths of case " + c.case_id + " are blocked at t=" + std::to_string(t));
    state = std::move(next);
    out.push_back(std::move(p));
  }
  return out;
}

void append_pairs(std::vector<TrainingPair>& out, std::span<const GridWorldCase> cases, const PairOptions& opt) {
  for (const auto& c : cases) {
    auto p = build_pairs(c, opt);
    std::move(p.begin(), p.end(), std::back_inserter(out));
  }
}

Batch make_batch(std::span<const TrainingPair* const> pairs, int observation_size) {
  Batch b;
  b.pairs = static_cast<int>(pairs.size());
  int robots = 0;
  for (const auto* p : pairs) robots += p->robots;
  std::vector<double> obs;
  obs.reserve(static_cast<std::size_t>(robots) * kObservationChannels * observation_size * observation_size);
  SparseGraph g;
  b.labels.reserve(robots);
  for (const auto* p : pairs) {
    obs.insert(obs.end(), p->observations.begin(), p->observations.end());
    append_block(g, p->graph);
    b.labels.insert(b.labels.end(), p->actions.begin(), p->actions.end());
  }
  if (obs.size() != static_cast<std::size_t>(robots) * kObservationChannels * observation_size * observation_size)
    throw std::invalid_argument("training pair observations do not match the model input size");
  b.observations = observation_batch(obs, robots, observation_size);
  b.graph = std::make_shared<const SparseGraph>(std::move(g));
  return b;
}

namespace {

std::size_t count_correct(const ad::Tensor& logits, std::span<const int> labels) {
  const auto v = logits.values();
  std::size_t ok = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const auto row = v.subspan(r * kNumActions, kNumActions);
    ok += std::max_element(row.begin(), row.end()) - row.begin() == labels[r];
  }
  return ok;
}

template <class Fn>
EpochStats over_batches(std::span<const TrainingPair> pairs, std::span<const std::size_t> order, int batch_size,
                        Fn&& fn) {
  EpochStats st;
  st.pairs = pairs.size();
  double loss = 0.0;
  std::size_t correct = 0, robots = 0;
  std::vector<const TrainingPair*> chunk;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    chunk.clear();
    const std::size_t end = std::min(order.size(), start + batch_size);
    for (std::size_t k = start; k < end; ++k) chunk.push_back(&pairs[order[k]]);
    const auto [ce, ok, n] = fn(chunk);
    loss += ce;
    correct += ok;
    robots += n;
  }
  if (st.pairs) st.loss = loss / st.pairs;
  if (robots) st.accuracy = static_cast<double>(correct) / robots;
  return st;
}

}  // namespace

EpochStats train_epoch(Model& model, ad::Adam& adam, std::span<const TrainingPair> pairs, int batch_size,
                       double lr, std::uint64_t shuffle_seed) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);
  const int size = model.config().input_size();
  return over_batches(pairs, order, batch_size, [&](std::span<const TrainingPair* const> chunk) {
    const Batch b = make_batch(chunk, size);
    const ad::Tensor logits = model.logits(b.observations, b.graph);
    const ad::Tensor ce = ad::cross_entropy(logits, b.labels);
    const ad::Tensor loss = ad::scale(ce, 1.0 / b.pairs);
    ad::zero_grad(model.parameters());
    ad::backward(loss);
    adam.step(model.parameters(), lr);
    return std::tuple{ce.item(), count_correct(logits, b.labels), b.labels.size()};
  });
}

EpochStats evaluate_pairs(const Model& model, std::span<const TrainingPair> pairs, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  ad::NoGradGuard no_grad;
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  const int size = model.config().input_size();
  return over_batches(pairs, order, batch_size, [&](std::span<const TrainingPair* const> chunk) {
    const Batch b = make_batch(chunk, size);
    const ad::Tensor logits = model.logits(b.observations, b.graph);
    return std::tuple{ad::cross_entropy(logits, b.labels).item(), count_correct(logits, b.labels),
                      b.labels.size()};
  });
}

OnlineExpertResult online_expert_round(const Policy& policy, std::span<const GridWorldCase> training, int count,
                                       const PlannerConfig& planner, const RolloutOptions& rollout_opt,
                                       bool from_failure, std::uint64_t seed, const std::string& tag) {
  OnlineExpertResult res;
  const std::size_t n = training.size();
  const std::size_t k = std::min<std::size_t>(std::max(count, 0), n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);

  std::vector<RolloutRecord> records(k);
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (long j = 0; j < static_cast<long>(k); ++j) {
    try {
      const GridWorldCase& c = training[idx[j]];
      records[j] = rollout(c, policy, rollout_opt, case_seed(seed, c.case_id));
    } catch (const std::exception& e) {
#pragma omp critical(magat_oe_error)
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw std::runtime_error(error);

  res.rolled_out = static_cast<int>(k);
  for (std::size_t j = 0; j < k; ++j) {
    if (records[j].success()) continue;
    ++res.failed;
    GridWorldCase c = training[idx[j]];
    if (from_failure)
      for (int i = 0; i < c.num_robots(); ++i) c.starts[i] = records[j].paths[i].back();
    const PlanResult plan = ecbs_solve(c, planner);
    if (!plan) {
      res.skipped.push_back(c.case_id);
      continue;
    }
    c.expert_paths = plan.solution->paths;
    c.case_id += "#oe-" + tag;
    res.added.push_back(std::move(c));
  }
  return res;
}

TrainSchedule TrainSchedule::desk() {
  TrainSchedule s;
  s.epochs = 100;
  s.validation_cases = 200;
  s.online_expert_cases = 200;
  return s;
}

TrainSchedule TrainSchedule::paper() {
  TrainSchedule s;
  s.epochs = 300;
  s.validation_cases = 1000;
  s.online_expert_cases = 500;
  return s;
}

void TrainSchedule::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (validation_period < 1 || online_expert_period < 1) throw std::invalid_argument("periods must be >= 1");
  if (lr_period < 0) throw std::invalid_argument("lr_period must be >= 0");
  if (!(lr_min >= 0.0 && lr_min <= lr_max)) throw std::invalid_argument("need 0 <= lr_min <= lr_max");
  if (validation_cases < 0 || online_expert_cases < 0) throw std::invalid_argument("case counts must be >= 0");
}

namespace {

std::string weighting_name(EdgeWeighting w) { return w == EdgeWeighting::Binary ? "binary" : "degree_normalized"; }

EdgeWeighting weighting_from(const std::string& s) {
  if (s == "binary") return EdgeWeighting::Binary;
  if (s == "degree_normalized") return EdgeWeighting::DegreeNormalized;
  throw std::invalid_argument("unknown edge weighting '" + s + "'");
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["model"] = nlohmann::ordered_json::parse(model.to_json());
  const auto& s = schedule;
  j["schedule"] = {{"batch_size", s.batch_size},
                   {"epochs", s.epochs},
                   {"lr_max", s.lr_max},
                   {"lr_min", s.lr_min},
                   {"lr_period", s.lr_period},
                   {"validation_period", s.validation_period},
                   {"validation_cases", s.validation_cases},
                   {"online_expert_period", s.online_expert_period},
                   {"online_expert_cases", s.online_expert_cases},
                   {"replan_from_failure", s.replan_from_failure},
                   {"adam_beta1", s.adam.beta1},
                   {"adam_beta2", s.adam.beta2},
                   {"adam_eps", s.adam.eps},
                   {"weight_decay", s.adam.weight_decay}};
  j["rollout"] = {{"fov", rollout.fov},
                  {"r_comm", rollout.r_comm},
                  {"weighting", weighting_name(rollout.weighting)},
                  {"strict", rollout.strict},
                  {"horizon_factor", rollout.horizon_factor}};
  j["planner"] = {{"bound", planner.bound},
                  {"time_budget_s", planner.time_budget_s},
                  {"max_high_level_expansions", planner.max_high_level_expansions},
                  {"tie_break", planner.tie_break}};
  j["seed"] = seed;
  return nlohmann::json::parse(j.dump());
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model").dump());
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    auto& d = c.schedule;
    d.batch_size = s.value("batch_size", d.batch_size);
    d.epochs = s.value("epochs", d.epochs);
    d.lr_max = s.value("lr_max", d.lr_max);
    d.lr_min = s.value("lr_min", d.lr_min);
    d.lr_period = s.value("lr_period", d.lr_period);
    d.validation_period = s.value("validation_period", d.validation_period);
    d.validation_cases = s.value("validation_cases", d.validation_cases);
    d.online_expert_period = s.value("online_expert_period", d.online_expert_period);
    d.online_expert_cases = s.value("online_expert_cases", d.online_expert_cases);
    d.replan_from_failure = s.value("replan_from_failure", d.replan_from_failure);
    d.adam.beta1 = s.value("adam_beta1", d.adam.beta1);
    d.adam.beta2 = s.value("adam_beta2", d.adam.beta2);
    d.adam.eps = s.value("adam_eps", d.adam.eps);
    d.adam.weight_decay = s.value("weight_decay", d.adam.weight_decay);
  }
  if (j.contains("rollout")) {
    const auto& r = j.at("rollout");
    c.rollout.fov = r.value("fov", c.rollout.fov);
    c.rollout.r_comm = r.value("r_comm", c.rollout.r_comm);
    c.rollout.weighting = weighting_from(r.value("weighting", std::string("binary")));
    c.rollout.strict = r.value("strict", c.rollout.strict);
    c.rollout.horizon_factor = r.value("horizon_factor", c.rollout.horizon_factor);
  }
  if (j.contains("planner")) {
    const auto& p = j.at("planner");
    c.planner.bound = p.value("bound", c.planner.bound);
    c.planner.time_budget_s = p.value("time_budget_s", c.planner.time_budget_s);
    c.planner.max_high_level_expansions = p.value("max_high_level_expansions", c.planner.max_high_level_expansions);
    c.planner.tie_break = p.value("tie_break", c.planner.tie_break);
  }
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::ordered_json EpochLog::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["lr"] = lr;
  j["loss"] = loss;
  j["accuracy"] = accuracy;
  j["pairs"] = pairs;
  j["val_success"] = val_success ? nlohmann::ordered_json(*val_success) : nlohmann::ordered_json();
  j["val_accuracy"] = val_accuracy ? nlohmann::ordered_json(*val_accuracy) : nlohmann::ordered_json();
  j["val_loss"] = val_loss ? nlohmann::ordered_json(*val_loss) : nlohmann::ordered_json();
  j["oe_failed"] = oe_failed;
  j["oe_added_cases"] = oe_added_cases;
  j["oe_skipped"] = oe_skipped;
  return j;
}

namespace {

std::optional<double> opt_double(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

EpochLog epoch_log_from_json(const nlohmann::json& j) {
  EpochLog e;
  e.epoch = j.at("epoch").get<int>();
  e.lr = j.at("lr").get<double>();
  e.loss = j.at("loss").get<double>();
  e.accuracy = j.at("accuracy").get<double>();
  e.pairs = j.at("pairs").get<std::size_t>();
  e.val_success = opt_double(j, "val_success");
  e.val_accuracy = opt_double(j, "val_accuracy");
  e.val_loss = opt_double(j, "val_loss");
  e.oe_failed = j.value("oe_failed", 0);
  e.oe_added_cases = j.value("oe_added_cases", 0);
  e.oe_skipped = j.value("oe_skipped", std::vector<std::string>{});
  return e;
}

// Seed streams; one per independent use of randomness.
enum Stream : std::uint64_t { kModelInit = 1, kShuffle = 2, kValidation = 3, kOnlineExpert = 4 };

TrainConfig checked(TrainConfig cfg) {
  cfg.schedule.validate();
  cfg.model.validate();
  if (cfg.rollout.fov != cfg.model.fov)
    throw std::invalid_argument("rollout fov " + std::to_string(cfg.rollout.fov) + " differs from model fov " +
                                std::to_string(cfg.model.fov));
  if (cfg.rollout.weighting != cfg.model.weighting)
    throw std::invalid_argument("rollout edge weighting differs from the model's");
  return cfg;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, std::vector<GridWorldCase> train, std::vector<GridWorldCase> valid,
                 std::filesystem::path out_dir)
    : cfg_(checked(std::move(cfg))),
      train_(std::move(train)),
      valid_(std::move(valid)),
      out_(std::move(out_dir)),
      model_(cfg_.model, mix_seed(cfg_.seed, kModelInit)),
      best_(cfg_.model, mix_seed(cfg_.seed, kModelInit)),
      adam_(model_.parameters(), cfg_.schedule.adam) {
  const std::size_t nv = std::min<std::size_t>(valid_.size(), cfg_.schedule.validation_cases);
  valid_.resize(nv);
  append_pairs(pairs_, train_, cfg_.pair_options());
  append_pairs(valid_pairs_, valid_, cfg_.pair_options());
  if (!out_.empty()) std::filesystem::create_directories(out_);
}

EpochLog Trainer::run_epoch() {
  if (done()) throw std::logic_error("training already finished");
  const auto& s = cfg_.schedule;
  const int e = epoch_ + 1;
  EpochLog log;
  log.epoch = e;
  log.lr = ad::cosine_lr(e - 1, s.lr_max, s.lr_min, s.lr_period > 0 ? s.lr_period : s.epochs);
  const EpochStats st =
      train_epoch(model_, adam_, pairs_, s.batch_size, log.lr, mix_seed(mix_seed(cfg_.seed, kShuffle), e));
  log.loss = st.loss;
  log.accuracy = st.accuracy;
  log.pairs = st.pairs;
  epoch_ = e;

  const bool validated = e % s.validation_period == 0 || e == s.epochs;
  if (validated) validate_round(log);
  if (s.online_expert_cases > 0 && e % s.online_expert_period == 0 && e < s.epochs) online_expert(log);
  history_.push_back(log);
  write_outputs(log, validated);
  return log;
}

void Trainer::run(const std::function<void(const EpochLog&)>& on_epoch) {
  while (!done()) {
    const EpochLog log = run_epoch();
    if (on_epoch) on_epoch(log);
  }
}

void Trainer::validate_round(EpochLog& log) {
  if (valid_.empty()) {
    best_.copy_parameters_from(model_);
    best_epoch_ = log.epoch;
    return;
  }
  const MetricsReport m = evaluate_set(model_policy(model_, DecisionMode::Sample), valid_, cfg_.rollout,
                                       mix_seed(cfg_.seed, kValidation));
  const EpochStats st = evaluate_pairs(model_, valid_pairs_, cfg_.schedule.batch_size);
  log.val_success = m.success_rate;
  log.val_accuracy = st.accuracy;
  log.val_loss = st.loss;
  if (m.success_rate > best_success_ || (m.success_rate == best_success_ && st.accuracy > best_accuracy_)) {
    best_success_ = m.success_rate;
    best_accuracy_ = st.accuracy;
    best_epoch_ = log.epoch;
    best_.copy_parameters_from(model_);
  }
}

void Trainer::online_expert(EpochLog& log) {
  const std::uint64_t seed = mix_seed(mix_seed(cfg_.seed, kOnlineExpert), log.epoch);
  OnlineExpertResult r = online_expert_round(model_policy(model_, DecisionMode::Sample), train_,
                                             cfg_.schedule.online_expert_cases, cfg_.planner, cfg_.rollout,
                                             cfg_.schedule.replan_from_failure, seed, std::to_string(log.epoch));
  log.oe_failed = r.failed;
  log.oe_added_cases = static_cast<int>(r.added.size());
  log.oe_skipped = std::move(r.skipped);
  append_pairs(pairs_, r.added, cfg_.pair_options());
  std::move(r.added.begin(), r.added.end(), std::back_inserter(extra_));
}

ad::Checkpoint Trainer::state_checkpoint() const {
  ad::Checkpoint ck;
  nlohmann::ordered_json j;
  j["train"] = cfg_.to_json();
  j["epoch"] = epoch_;
  j["adam_steps"] = adam_.steps();
  j["best_epoch"] = best_epoch_ ? *best_epoch_ : 0;
  j["best_success"] = best_success_;
  j["best_accuracy"] = best_accuracy_;
  j["extra_cases"] = extra_.size();
  ck.config = j.dump();
  const auto& names = model_.parameter_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& p = model_.parameters()[i];
    const auto& b = best_.parameters()[i];
    ck.arrays.push_back({names[i], p.shape(), {p.values().begin(), p.values().end()}});
    ck.arrays.push_back({"best/" + names[i], b.shape(), {b.values().begin(), b.values().end()}});
    ck.arrays.push_back({"adam.m/" + names[i], p.shape(), adam_.first_moments()[i]});
    ck.arrays.push_back({"adam.v/" + names[i], p.shape(), adam_.second_moments()[i]});
  }
  return ck;
}

void Trainer::write_outputs(const EpochLog& log, bool validated) const {
  if (out_.empty()) return;
  {
    std::ofstream f(out_ / "train_log.jsonl", log.epoch == 1 ? std::ios::trunc : std::ios::app);
    f << log.to_json().dump() << '\n';
    if (!f) throw std::runtime_error("cannot write " + (out_ / "train_log.jsonl").string());
  }
  if (validated) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04d.mgck", log.epoch);
    ad::save_checkpoint(model_.to_checkpoint(), (out_ / name).string());
    ad::save_checkpoint(best_.to_checkpoint(), (out_ / "best.mgck").string());
  }
  // extras first: the state records how many of them it accounts for
  if (log.oe_added_cases > 0) save_cases(out_ / "extra_cases.jsonl", extra_);
  ad::save_checkpoint(state_checkpoint(), (out_ / "state.mgck").string());
}

bool Trainer::resume() {
  if (out_.empty() || !std::filesystem::exists(out_ / "state.mgck")) return false;
  const ad::Checkpoint ck = ad::load_checkpoint((out_ / "state.mgck").string());
  const auto j = nlohmann::json::parse(ck.config);
  if (j.at("train") != cfg_.to_json())
    throw std::invalid_argument("state in " + out_.string() + " was written with a different configuration: " +
                                j.at("train").dump());

  auto load_prefixed = [&](Model& m, const std::string& prefix) {
    ad::Checkpoint mc;
    mc.config = cfg_.model.to_json();
    for (const auto& name : m.parameter_names()) {
      const ad::NamedArray* a = ck.find(prefix + name);
      if (!a) throw std::invalid_argument("state lacks " + prefix + name);
      mc.arrays.push_back({name, a->shape, a->values});
    }
    m.load(mc);
  };
  load_prefixed(model_, "");
  load_prefixed(best_, "best/");
  const auto& names = model_.parameter_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const ad::NamedArray* m = ck.find("adam.m/" + names[i]);
    const ad::NamedArray* v = ck.find("adam.v/" + names[i]);
    if (!m || !v) throw std::invalid_argument("state lacks optimizer moments for " + names[i]);
    adam_.first_moments()[i] = m->values;
    adam_.second_moments()[i] = v->values;
  }
  adam_.set_steps(j.at("adam_steps").get<std::int64_t>());
  epoch_ = j.at("epoch").get<int>();
  const int be = j.at("best_epoch").get<int>();
  best_epoch_ = be > 0 ? std::optional<int>(be) : std::nullopt;
  best_success_ = j.at("best_success").get<double>();
  best_accuracy_ = j.at("best_accuracy").get<double>();

  const auto n_extra = j.at("extra_cases").get<std::size_t>();
  extra_.clear();
  if (n_extra > 0) {
    extra_ = load_cases(out_ / "extra_cases.jsonl");
    if (extra_.size() < n_extra) throw std::runtime_error("extra_cases.jsonl is shorter than the saved state");
    extra_.resize(n_extra);
  }
  pairs_.clear();
  append_pairs(pairs_, train_, cfg_.pair_options());
  append_pairs(pairs_, extra_, cfg_.pair_options());

  history_.clear();
  std::ifstream in(out_ / "train_log.jsonl");
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    EpochLog e = epoch_log_from_json(nlohmann::json::parse(line));
    if (e.epoch <= epoch_) history_.push_back(std::move(e));
  }
  in.close();
  std::ofstream out(out_ / "train_log.jsonl", std::ios::trunc);
  for (const auto& e : history_) out << e.to_json().dump() << '\n';
  return true;
}

}  // namespace magat
