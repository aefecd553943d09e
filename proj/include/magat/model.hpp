#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "magat/autodiff.hpp"
#include "magat/comm_graph.hpp"
#include "magat/gridworld.hpp"

namespace magat {

enum class LayerKind { GNN, GAT, MAGAT };

/// Attention-score weights start at this fraction of the fan-in bound.
inline constexpr double kAttentionInitGain = 0.01;
enum class PipelineType { F, B };  // B: bottleneck skip around communication

struct ModelConfig {
  LayerKind kind = LayerKind::MAGAT;
  PipelineType type = PipelineType::F;
  int features = 32;  // F = G
  int heads = 1;      // P
  int taps = 2;       // K
  int layers = 1;     // L
  int fov = 9;
  double leaky_slope = 0.2;
  EdgeWeighting weighting = EdgeWeighting::Binary;
  std::array<int, 3> cnn_widths{32, 64, 128};
  int hidden = 128;

  /// "MAGAT-F-32", "+-P4" when heads > 1.
  std::string name() const;
  /// Parses "LABEL-TYPE-FEATURES[-P<n>]"; other fields keep their defaults.
  static ModelConfig parse(std::string_view name);
  /// Full configuration as compact JSON (stored in checkpoints).
  std::string to_json() const;
  static ModelConfig from_json(std::string_view json);
  void validate() const;

  int input_size() const { return fov + 2; }
  /// Width of the concatenated head outputs of the last graph layer.
  int graph_output_width() const { return heads * features; }
  /// Input width of the action head.
  int action_head_width() const {
    return graph_output_width() + (type == PipelineType::B ? features : 0);
  }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string_view to_string(LayerKind k);

/// One attention head of one graph layer.
struct HeadParams {
  std::vector<ad::Tensor> taps;  // A_k, each F_in x G
  ad::Tensor key_query;          // MAGAT: W, F_in x F_in
  ad::Tensor score_left;         // GAT: h_l, G x 1
  ad::Tensor score_right;        // GAT: h_r, G x 1
};

/// Edge attention e_ij = softmax_j LeakyReLU(x_i W x_j^T) over each neighbourhood.
ad::Tensor magat_scores(const ad::GraphPtr& g, const ad::Tensor& x, const ad::Tensor& w, double slope);
/// Edge attention on transformed features: LeakyReLU(h_l . x_i A + h_r . x_j A).
ad::Tensor gat_scores(const ad::GraphPtr& g, const ad::Tensor& x, const ad::Tensor& a,
                      const ad::Tensor& h_left, const ad::Tensor& h_right, double slope);
/// sum_k (E o S)^k X A_k by repeated shifts; `attention` undefined means E = 1 on edges.
ad::Tensor graph_conv(const ad::GraphPtr& g, const ad::Tensor& x, const ad::Tensor& attention,
                      std::span<const ad::Tensor> taps);
/// Edge attention of one head for the configured layer kind (undefined for GNN).
ad::Tensor head_attention(const ModelConfig& cfg, const ad::GraphPtr& g, const ad::Tensor& x,
                          const HeadParams& head);
/// Heads run independently, each through ReLU, concatenated along features.
ad::Tensor layer_forward(const ModelConfig& cfg, const ad::GraphPtr& g, const ad::Tensor& x,
                         std::span<const HeadParams> heads,
                         std::vector<ad::Tensor>* attention_out = nullptr);

/// Dense N x N view of per-edge values (zero off the edge set).
Matrix edge_values_to_dense(const SparseGraph& g, std::span<const double> values);

/// Observations laid out [robot][channel][row][col] turned into an NHWC batch.
ad::Tensor observation_batch(std::span<const double> chw, int robots, int size);

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::span<ad::Tensor> parameters() { return params_; }
  std::span<const ad::Tensor> parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::size_t num_scalars() const;

  /// NHWC [N, W, W, 3] -> [N, F]; every robot goes through the same weights.
  ad::Tensor perceive(const ad::Tensor& obs) const;
  /// [N, F] -> [N, P*G] for the last layer.
  ad::Tensor communicate(const ad::Tensor& x, const ad::GraphPtr& g,
                         std::vector<ad::Tensor>* attention_out = nullptr) const;
  /// [N, width] -> [N, 5].
  ad::Tensor action_head(const ad::Tensor& fused) const;
  ad::Tensor logits(const ad::Tensor& obs, const ad::GraphPtr& g,
                    std::vector<ad::Tensor>* attention_out = nullptr) const;

  std::span<const HeadParams> layer_heads(int layer) const { return layers_[layer]; }
  std::vector<HeadParams>& mutable_layer_heads(int layer) { return layers_[layer]; }

  /// Parameters only; the config JSON is stored alongside.
  ad::Checkpoint to_checkpoint() const;
  /// Throws std::invalid_argument if the stored config differs from this model's.
  void load(const ad::Checkpoint& ck);
  void copy_parameters_from(const Model& other);

 private:
  ad::Tensor add_param(std::string name, ad::Shape shape, int fan_in, std::mt19937_64& rng, double gain = 1.0);
  ad::Tensor add_const_param(std::string name, ad::Shape shape, double value);

  ModelConfig cfg_;
  std::vector<ad::Tensor> params_;
  std::vector<std::string> names_;

  struct Block {
    ad::Tensor conv_w, conv_b, gain, shift, skip_w, skip_b;
    bool pool = false;
  };
  std::vector<Block> blocks_;
  ad::Tensor fc_w, fc_b, compress_w, compress_b;
  std::vector<std::vector<HeadParams>> layers_;
  ad::Tensor head_w1, head_b1, head_w2, head_b2;
};

enum class DecisionMode { Sample, Greedy };

struct Decision {
  std::vector<Action> actions;
  std::vector<std::array<double, kNumActions>> probabilities;
  std::vector<ad::Tensor> attention;  // per layer and head, edge values
};

/// Softmax row to action: greedy takes the argmax (lowest index on ties),
/// sample inverts the CDF at a uniform draw from `rng`.
Action choose_action(std::span<const double> probs, DecisionMode mode, std::mt19937_64& rng);

/// Forward pass on all robots and one action each. `rngs` holds one generator
/// per robot (used only in sample mode).
Decision decide(const Model& model, std::span<const double> observations, int robots,
                const ad::GraphPtr& g, DecisionMode mode, std::span<std::mt19937_64> rngs);

}  // namespace magat
