#include "magat/model.hpp"

#include <algorithm>
#include <cctype>
#include <json.hpp>
#include <stdexcept>

namespace magat {

using ad::Tensor;

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::GNN: return "GNN";
    case LayerKind::GAT: return "GAT";
    case LayerKind::MAGAT: return "MAGAT";
  }
  return "?";
}

std::string ModelConfig::name() const {
  std::string s = std::string(to_string(kind)) + (type == PipelineType::B ? "-B-" : "-F-") +
                  std::to_string(features);
  if (heads > 1) s += "-P" + std::to_string(heads);
  return s;
}

ModelConfig ModelConfig::parse(std::string_view name) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : name) {
    if (ch == '-') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    }
  }
  parts.push_back(cur);
  auto fail = [&] {
    throw std::invalid_argument("model config '" + std::string(name) +
                                "' is not LABEL-TYPE-FEATURES[-P<heads>]");
  };
  if (parts.size() < 3 || parts.size() > 4) fail();
  ModelConfig cfg;
  if (parts[0] == "GNN") cfg.kind = LayerKind::GNN;
  else if (parts[0] == "GAT") cfg.kind = LayerKind::GAT;
  else if (parts[0] == "MAGAT") cfg.kind = LayerKind::MAGAT;
  else fail();
  if (parts[1] == "F") cfg.type = PipelineType::F;
  else if (parts[1] == "B") cfg.type = PipelineType::B;
  else fail();
  try {
    std::size_t used = 0;
    cfg.features = std::stoi(parts[2], &used);
    if (used != parts[2].size()) fail();
    if (parts.size() == 4) {
      if (parts[3].size() < 2 || parts[3][0] != 'P') fail();
      cfg.heads = std::stoi(parts[3].substr(1), &used);
      if (used != parts[3].size() - 1) fail();
    }
  } catch (const std::logic_error&) {
    fail();
  }
  cfg.validate();
  return cfg;
}

void ModelConfig::validate() const {
  auto check = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("model config: ") + what);
  };
  check(features >= 1, "features must be positive");
  check(heads >= 1, "heads must be positive");
  check(taps >= 1, "taps K must be >= 1");
  check(layers >= 1, "layers L must be >= 1");
  check(fov >= 1 && fov % 2 == 1, "fov must be odd and positive");
  check(hidden >= 1, "hidden width must be positive");
  for (int w : cnn_widths) check(w >= 1, "CNN widths must be positive");
  check((fov + 2) / 4 >= 1, "fov too small for two pooling stages");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["name"] = name();
  j["kind"] = to_string(kind);
  j["type"] = type == PipelineType::B ? "B" : "F";
  j["features"] = features;
  j["heads"] = heads;
  j["taps"] = taps;
  j["layers"] = layers;
  j["fov"] = fov;
  j["leaky_slope"] = leaky_slope;
  j["weighting"] = weighting == EdgeWeighting::Binary ? "binary" : "degree_normalized";
  j["cnn_widths"] = cnn_widths;
  j["hidden"] = hidden;
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  ModelConfig cfg = parse(j.at("name").get<std::string>());
  cfg.taps = j.value("taps", cfg.taps);
  cfg.layers = j.value("layers", cfg.layers);
  cfg.fov = j.value("fov", cfg.fov);
  cfg.leaky_slope = j.value("leaky_slope", cfg.leaky_slope);
  cfg.weighting = j.value("weighting", std::string("binary")) == "binary" ? EdgeWeighting::Binary
                                                                         : EdgeWeighting::DegreeNormalized;
  if (j.contains("cnn_widths")) cfg.cnn_widths = j.at("cnn_widths").get<std::array<int, 3>>();
  cfg.hidden = j.value("hidden", cfg.hidden);
  cfg.validate();
  return cfg;
}

Tensor magat_scores(const ad::GraphPtr& g, const Tensor& x, const Tensor& w, double slope) {
  const Tensor e = ad::edge_bilinear(g, ad::matmul(x, w), x);
  return ad::edge_softmax(g, ad::leaky_relu(e, slope));
}

Tensor gat_scores(const ad::GraphPtr& g, const Tensor& x, const Tensor& a, const Tensor& h_left,
                  const Tensor& h_right, double slope) {
  const Tensor xa = ad::matmul(x, a);
  const Tensor e = ad::edge_pair_sum(g, ad::matmul(xa, h_left), ad::matmul(xa, h_right));
  return ad::edge_softmax(g, ad::leaky_relu(e, slope));
}

Tensor graph_conv(const ad::GraphPtr& g, const Tensor& x, const Tensor& attention,
                  std::span<const Tensor> taps) {
  if (taps.empty()) throw std::invalid_argument("graph_conv: need at least one tap");
  Tensor out = ad::matmul(x, taps[0]);
  Tensor z = x;
  for (std::size_t k = 1; k < taps.size(); ++k) {
    z = attention.defined() ? ad::attention_shift(g, attention, z) : ad::graph_shift(g, z);
    out = ad::add(out, ad::matmul(z, taps[k]));
  }
  return out;
}

Tensor head_attention(const ModelConfig& cfg, const ad::GraphPtr& g, const Tensor& x, const HeadParams& head) {
  switch (cfg.kind) {
    case LayerKind::GNN: return {};
    case LayerKind::MAGAT: return magat_scores(g, x, head.key_query, cfg.leaky_slope);
    case LayerKind::GAT: {
      // Scored on the communicating tap A_1 (A_0 when K = 1).
      const Tensor& a = head.taps[std::min<std::size_t>(1, head.taps.size() - 1)];
      return gat_scores(g, x, a, head.score_left, head.score_right, cfg.leaky_slope);
    }
  }
  return {};
}

Tensor layer_forward(const ModelConfig& cfg, const ad::GraphPtr& g, const Tensor& x,
                     std::span<const HeadParams> heads, std::vector<Tensor>* attention_out) {
  std::vector<Tensor> outs;
  outs.reserve(heads.size());
  for (const HeadParams& h : heads) {
    const Tensor e = head_attention(cfg, g, x, h);
    if (attention_out && e.defined()) attention_out->push_back(e);
    outs.push_back(ad::relu(graph_conv(g, x, e, h.taps)));
  }
  return outs.size() == 1 ? outs[0] : ad::concat(outs, 1);
}

Matrix edge_values_to_dense(const SparseGraph& g, std::span<const double> values) {
  if (values.size() != g.num_edges()) throw std::invalid_argument("edge_values_to_dense: size mismatch");
  Matrix m(g.n, g.n);
  for (int i = 0; i < g.n; ++i)
    for (int p = g.row_ptr[i]; p < g.row_ptr[i + 1]; ++p) m(i, g.col[p]) = values[p];
  return m;
}

Tensor observation_batch(std::span<const double> chw, int robots, int size) {
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  if (chw.size() != robots * kObservationChannels * plane)
    throw std::invalid_argument("observation_batch: " + std::to_string(chw.size()) + " values for " +
                                std::to_string(robots) + " robots of size " + std::to_string(size));
  std::vector<double> nhwc(chw.size());
  for (int n = 0; n < robots; ++n)
    for (int c = 0; c < kObservationChannels; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        nhwc[(n * plane + p) * kObservationChannels + c] = chw[(n * kObservationChannels + c) * plane + p];
  return ad::constant({robots, size, size, kObservationChannels}, std::move(nhwc));
}

Tensor Model::add_param(std::string name, ad::Shape shape, int fan_in, std::mt19937_64& rng, double gain) {
  const std::size_t count = ad::numel(shape);
  auto values = ad::fan_in_uniform(count, fan_in, rng);
  for (double& v : values) v *= gain;
  Tensor t = ad::parameter(std::move(shape), std::move(values));
  params_.push_back(t);
  names_.push_back(std::move(name));
  return t;
}

Tensor Model::add_const_param(std::string name, ad::Shape shape, double value) {
  const std::size_t count = ad::numel(shape);
  Tensor t = ad::parameter(std::move(shape), std::vector<double>(count, value));
  params_.push_back(t);
  names_.push_back(std::move(name));
  return t;
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  int in = kObservationChannels;
  int size = cfg_.input_size();
  for (int b = 0; b < 3; ++b) {
    const int out = cfg_.cnn_widths[b];
    const std::string p = "cnn." + std::to_string(b) + ".";
    Block blk;
    blk.conv_w = add_param(p + "conv.w", {9 * in, out}, 9 * in, rng);
    blk.conv_b = add_const_param(p + "conv.b", {out}, 0.0);
    blk.gain = add_const_param(p + "norm.gain", {out}, 1.0);
    blk.shift = add_const_param(p + "norm.shift", {out}, 0.0);
    blk.skip_w = add_param(p + "skip.w", {in, out}, in, rng);
    blk.skip_b = add_const_param(p + "skip.b", {out}, 0.0);
    blk.pool = b < 2;
    if (blk.pool) size /= 2;
    blocks_.push_back(blk);
    in = out;
  }
  const int flat = size * size * in;
  fc_w = add_param("mlp.w", {flat, cfg_.hidden}, flat, rng);
  fc_b = add_const_param("mlp.b", {cfg_.hidden}, 0.0);
  compress_w = add_param("compress.w", {cfg_.hidden, cfg_.features}, cfg_.hidden, rng);
  compress_b = add_const_param("compress.b", {cfg_.features}, 0.0);

  int width = cfg_.features;
  for (int l = 0; l < cfg_.layers; ++l) {
    std::vector<HeadParams> heads;
    for (int h = 0; h < cfg_.heads; ++h) {
      const std::string p = "graph." + std::to_string(l) + ".head." + std::to_string(h) + ".";
      HeadParams hp;
      for (int k = 0; k < cfg_.taps; ++k)
        hp.taps.push_back(add_param(p + "A" + std::to_string(k), {width, cfg_.features}, width, rng));
      // Features leave the CNN with norms around 10, so full-scale score
      // weights give scores near 100 and one-hot attention with vanishing
      // gradients. Starting small keeps the first attention near uniform.
      if (cfg_.kind == LayerKind::MAGAT)
        hp.key_query = add_param(p + "W", {width, width}, width, rng, kAttentionInitGain);
      if (cfg_.kind == LayerKind::GAT) {
        hp.score_left = add_param(p + "H.left", {cfg_.features, 1}, cfg_.features, rng, kAttentionInitGain);
        hp.score_right = add_param(p + "H.right", {cfg_.features, 1}, cfg_.features, rng, kAttentionInitGain);
      }
      heads.push_back(std::move(hp));
    }
    layers_.push_back(std::move(heads));
    width = cfg_.graph_output_width();
  }
  const int head_in = cfg_.action_head_width();
  head_w1 = add_param("action.w1", {head_in, cfg_.hidden}, head_in, rng);
  head_b1 = add_const_param("action.b1", {cfg_.hidden}, 0.0);
  head_w2 = add_param("action.w2", {cfg_.hidden, kNumActions}, cfg_.hidden, rng);
  head_b2 = add_const_param("action.b2", {kNumActions}, 0.0);
}

std::size_t Model::num_scalars() const {
  std::size_t n = 0;
  for (const Tensor& p : params_) n += p.numel();
  return n;
}

Tensor Model::perceive(const Tensor& obs) const {
  const int s = cfg_.input_size();
  if (obs.rank() != 4 || obs.dim(1) != s || obs.dim(2) != s || obs.dim(3) != kObservationChannels)
    throw std::invalid_argument("perceive: expected [N," + std::to_string(s) + "," + std::to_string(s) + ",3], got " +
                                ad::to_string(obs.shape()));
  Tensor x = obs;
  for (const Block& b : blocks_) {
    Tensor main = ad::relu(ad::sample_norm(ad::conv2d(x, b.conv_w, b.conv_b, 3, 1, 1), b.gain, b.shift));
    Tensor skip = ad::conv2d(x, b.skip_w, b.skip_b, 1, 1, 0);
    if (b.pool) {
      main = ad::max_pool(main, 2);
      skip = ad::max_pool(skip, 2);
    }
    x = ad::add(main, skip);
  }
  const int n = x.dim(0);
  x = ad::reshape(x, {n, static_cast<int>(x.numel() / std::max(n, 1))});
  x = ad::relu(ad::linear(x, fc_w, fc_b));
  return ad::linear(x, compress_w, compress_b);
}

Tensor Model::communicate(const Tensor& x, const ad::GraphPtr& g, std::vector<Tensor>* attention_out) const {
  Tensor h = x;
  for (const auto& heads : layers_) h = layer_forward(cfg_, g, h, heads, attention_out);
  return h;
}

Tensor Model::action_head(const Tensor& fused) const {
  return ad::linear(ad::relu(ad::linear(fused, head_w1, head_b1)), head_w2, head_b2);
}

Tensor Model::logits(const Tensor& obs, const ad::GraphPtr& g, std::vector<Tensor>* attention_out) const {
  const Tensor x = perceive(obs);
  Tensor h = communicate(x, g, attention_out);
  if (cfg_.type == PipelineType::B) {
    const Tensor parts[] = {x, h};
    h = ad::concat(parts, 1);
  }
  return action_head(h);
}

ad::Checkpoint Model::to_checkpoint() const {
  ad::Checkpoint ck;
  ck.config = cfg_.to_json();
  for (std::size_t i = 0; i < params_.size(); ++i)
    ck.arrays.push_back({names_[i], params_[i].shape(), {params_[i].values().begin(), params_[i].values().end()}});
  return ck;
}

void Model::load(const ad::Checkpoint& ck) {
  const ModelConfig stored = ModelConfig::from_json(ck.config);
  if (!(stored == cfg_))
    throw std::invalid_argument("checkpoint holds " + stored.name() + " (" + ck.config + "), model is " +
                                cfg_.name() + " (" + cfg_.to_json() + ")");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const ad::NamedArray* a = ck.find(names_[i]);
    if (!a) throw std::invalid_argument("checkpoint lacks parameter " + names_[i]);
    if (a->shape != params_[i].shape())
      throw std::invalid_argument("checkpoint parameter " + names_[i] + " has shape " + ad::to_string(a->shape));
    std::copy(a->values.begin(), a->values.end(), params_[i].mutable_values().begin());
  }
}

void Model::copy_parameters_from(const Model& other) {
  if (!(other.cfg_ == cfg_)) throw std::invalid_argument("copy_parameters_from: config mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i)
    std::copy(other.params_[i].values().begin(), other.params_[i].values().end(),
              params_[i].mutable_values().begin());
}

Action choose_action(std::span<const double> probs, DecisionMode mode, std::mt19937_64& rng) {
  if (probs.size() != kNumActions) throw std::invalid_argument("choose_action: need 5 probabilities");
  if (mode == DecisionMode::Greedy)
    return static_cast<Action>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    acc += probs[a];
    if (u < acc) return static_cast<Action>(a);
  }
  // Rounding left the CDF short of 1: take the last action with mass.
  for (int a = kNumActions - 1; a >= 0; --a)
    if (probs[a] > 0.0) return static_cast<Action>(a);
  return Action::Idle;
}

Decision decide(const Model& model, std::span<const double> observations, int robots, const ad::GraphPtr& g,
                DecisionMode mode, std::span<std::mt19937_64> rngs) {
  if (static_cast<int>(rngs.size()) != robots && mode == DecisionMode::Sample)
    throw std::invalid_argument("decide: need one generator per robot");
  ad::NoGradGuard no_grad;
  Decision d;
  const Tensor obs = observation_batch(observations, robots, model.config().input_size());
  const Tensor logits = model.logits(obs, g, &d.attention);
  std::vector<std::uint8_t> all(logits.numel(), 1);
  const Tensor probs = ad::masked_softmax(logits, all);
  std::mt19937_64 unused;
  for (int i = 0; i < robots; ++i) {
    std::array<double, kNumActions> p{};
    std::copy_n(probs.values().data() + static_cast<std::size_t>(i) * kNumActions, kNumActions, p.begin());
    d.actions.push_back(choose_action(p, mode, mode == DecisionMode::Sample ? rngs[i] : unused));
    d.probabilities.push_back(p);
  }
  return d;
}

}  // namespace magat
