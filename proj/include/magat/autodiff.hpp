#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "magat/comm_graph.hpp"

namespace magat::ad {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string to_string(const Shape& s);

/// One recorded value. `backward` reads `grad` and accumulates into the
/// parents' gradients.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool consumed = false;  // set on a loss once backward has run

  std::vector<double>& grad_buffer();
};

/// Shared handle to a node; copies alias the same value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int axis) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->value.size(); }
  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  /// Gradient, zero-filled if nothing has flowed back yet.
  std::span<const double> grad() const;
  bool requires_grad() const { return node_->requires_grad; }
  double item() const;
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Leaf without gradient.
Tensor constant(Shape shape, std::vector<double> values);
Tensor zeros(Shape shape);
/// Leaf that accumulates gradient.
Tensor parameter(Shape shape, std::vector<double> values);

/// While alive on this thread, ops record no backward graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};
bool grad_enabled();

/// While alive on this thread, records how close relu, leaky_relu and
/// max_pool inputs come to a point where the op is not differentiable.
/// Finite-difference tests use it to reject inputs sitting on a kink.
class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  double margin() const { return margin_; }
  void observe(double distance) { margin_ = std::min(margin_, distance); }
  static KinkMonitor* active();

 private:
  double margin_ = std::numeric_limits<double>::infinity();
  KinkMonitor* outer_;
};

/// Reverse pass from a scalar. Throws std::invalid_argument for a non-scalar
/// loss and std::logic_error when run a second time on the same loss.
void backward(const Tensor& loss);
void zero_grad(std::span<Tensor> params);

// Dense ops. Shape errors throw std::invalid_argument naming both shapes.
Tensor matmul(const Tensor& a, const Tensor& b);                 // [m,k] x [k,n]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x w + b
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& x, const Tensor& bias);  // bias over the last axis
Tensor elementwise_mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sum(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(std::span<const Tensor> parts, int axis);
/// Row softmax of [m,n] over entries with mask != 0; an all-masked row is all zeros.
Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> mask);
/// Sum over rows of -log softmax(logits)[label]; logits [m,c].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// NHWC image ops.
/// x [B,H,W,C], w [k*k*C, Co] ordered (ky,kx,c), bias [Co].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int kernel, int stride, int pad);
/// Non-overlapping window max; floor on odd sizes.
Tensor max_pool(const Tensor& x, int window);
/// Per-sample normalization over (H,W,C), then per-channel gain and shift.
Tensor sample_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = 1e-5);

// Sparse graph ops over the edge list of `g` (edge e runs from row i to col j).
using GraphPtr = std::shared_ptr<const SparseGraph>;
/// e_ij = q_i . k_j for q, k [N,F]; result [E].
Tensor edge_bilinear(const GraphPtr& g, const Tensor& q, const Tensor& k);
/// e_ij = l_i + r_j for l, r [N,1]; result [E].
Tensor edge_pair_sum(const GraphPtr& g, const Tensor& l, const Tensor& r);
/// Softmax of edge scores over each row's neighbourhood.
Tensor edge_softmax(const GraphPtr& g, const Tensor& e);
/// y_i = sum_j s_ij x_j.
Tensor graph_shift(const GraphPtr& g, const Tensor& x);
/// y_i = sum_j a_ij s_ij x_j with edge coefficients a [E].
Tensor attention_shift(const GraphPtr& g, const Tensor& a, const Tensor& x);

/// Norm-wise relative error ||g - g_fd|| / max(||g||, ||g_fd||, 1e-6) between the
/// backward gradient of `f` and central differences with step `h`, maximised
/// over `inputs`. `f` must rebuild its graph on every call. When `max_coords`
/// is nonzero only that many seeded random coordinates per input are probed.
double gradient_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double h = 1e-5,
                      std::size_t max_coords = 0, std::uint64_t seed = 0);

/// Uniform(-sqrt(6 / fan_in), +sqrt(6 / fan_in)).
std::vector<double> fan_in_uniform(std::size_t count, int fan_in, std::mt19937_64& rng);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // L2 term added to the gradient
};

class Adam {
 public:
  explicit Adam(std::span<const Tensor> params, AdamConfig cfg = {});
  /// One update with learning rate `lr` using the parameters' current gradients.
  void step(std::span<Tensor> params, double lr);

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// lr_min + (lr_max - lr_min) (1 + cos(pi e / T)) / 2, held at lr_min past T.
double cosine_lr(double epoch, double lr_max = 1e-3, double lr_min = 1e-6, double period = 300);

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

/// Self-describing binary container:
///   "MGCK" | u32 version | u32 len, config text | u32 count |
///   count x (u32 len, name | u32 rank | rank x i64 dim | numel x f64)
/// All integers and doubles little-endian.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::string config;
  std::vector<NamedArray> arrays;

  const NamedArray* find(std::string_view name) const;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
std::string serialize(const Checkpoint& ck);
Checkpoint deserialize(std::string_view bytes);

}  // namespace magat::ad
