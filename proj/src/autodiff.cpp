#include "magat/autodiff.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "magat/kernels.hpp"

namespace magat::ad {

namespace {

thread_local bool t_grad_enabled = true;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                              to_string(b));
}

// Result node; the backward rule and parents are kept only when some input
// needs a gradient and recording is on.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> rule) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  for (const Tensor& p : parents) needs = needs || p.requires_grad();
  if (needs && t_grad_enabled) {
    n->requires_grad = true;
    for (Tensor& p : parents) n->parents.push_back(p.ptr());
    n->backward = std::move(rule);
  }
  return Tensor(std::move(n));
}

// Gradient sink of parent `i`, or nullptr if it needs none.
double* sink(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.grad_buffer().data() : nullptr;
}

// row[r][j] += v[j] over `rows` rows of width n.
void add_rows(double* row, std::size_t rows, std::size_t n, const double* v) {
  for (std::size_t r = 0; r < rows; ++r, row += n)
    for (std::size_t j = 0; j < n; ++j) row[j] += v[j];
}

// out[j] += sum_r row[r][j].
void sum_rows(const double* row, std::size_t rows, std::size_t n, double* out) {
  for (std::size_t r = 0; r < rows; ++r, row += n)
    for (std::size_t j = 0; j < n; ++j) out[j] += row[j];
}

void require_rank(const char* op, const Tensor& t, int rank) {
  if (t.rank() != rank)
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + to_string(t.shape()));
}

}  // namespace

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + to_string(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

int Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw std::out_of_range("axis out of range for " + to_string(shape()));
  return node_->shape[axis];
}

std::span<const double> Tensor::grad() const {
  return node_->grad_buffer();
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on shape " + to_string(shape()));
  return node_->value[0];
}

Tensor constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size())
    throw std::invalid_argument("constant: " + std::to_string(values.size()) + " values for shape " +
                                to_string(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return Tensor(std::move(n));
}

Tensor zeros(Shape shape) {
  const std::size_t count = numel(shape);
  return constant(std::move(shape), std::vector<double>(count, 0.0));
}

Tensor parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node()->requires_grad = true;
  return t;
}

NoGradGuard::NoGradGuard() : saved_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = saved_; }
bool grad_enabled() { return t_grad_enabled; }

namespace {
thread_local KinkMonitor* t_kink_monitor = nullptr;
}
KinkMonitor::KinkMonitor() : outer_(t_kink_monitor) { t_kink_monitor = this; }
KinkMonitor::~KinkMonitor() { t_kink_monitor = outer_; }
KinkMonitor* KinkMonitor::active() { return t_kink_monitor; }

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + to_string(loss.shape()));
  Node* root = loss.node();
  if (root->consumed) throw std::logic_error("backward: already run on this graph; rebuild the forward pass");
  root->consumed = true;
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen{root};
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

void zero_grad(std::span<Tensor> params) {
  for (Tensor& p : params) p.node()->grad.clear();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(static_cast<std::size_t>(m) * n);
  kernels::gemm(false, false, m, n, k, a.values().data(), k, b.values().data(), n, 0.0, c.data(), n);
  return make_result({m, n}, std::move(c), {a, b}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    const double* av = self.parents[0]->value.data();
    const double* bv = self.parents[1]->value.data();
    if (double* da = sink(self, 0)) kernels::gemm(false, true, m, k, n, g, n, bv, n, 1.0, da, k);
    if (double* db = sink(self, 1)) kernels::gemm(true, false, k, n, m, av, k, g, n, 1.0, db, n);
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_bias(matmul(x, w), b); }

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  std::vector<double> c(a.numel());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a.values()[i] + b.values()[i];
  return make_result(a.shape(), std::move(c), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (double* d = sink(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() < 1 || x.dim(-1) != bias.dim(0)) shape_error("add_bias", x.shape(), bias.shape());
  const std::size_t n = bias.numel();
  std::vector<double> c(x.values().begin(), x.values().end());
  add_rows(c.data(), c.size() / n, n, bias.values().data());
  return make_result(x.shape(), std::move(c), {x, bias}, [n](Node& self) {
    if (double* dx = sink(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
    if (double* db = sink(self, 1)) sum_rows(self.grad.data(), self.grad.size() / n, n, db);
  });
}

Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("elementwise_mul", a.shape(), b.shape());
  std::vector<double> c(a.numel());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a.values()[i] * b.values()[i];
  return make_result(a.shape(), std::move(c), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (double* da = sink(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i] * bv[i];
    if (double* db = sink(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) db[i] += self.grad[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> c(a.values().begin(), a.values().end());
  for (double& v : c) v *= s;
  return make_result(a.shape(), std::move(c), {a}, [s](Node& self) {
    double* d = sink(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += s * self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result({1}, {s}, {a}, [](Node& self) {
    double* d = sink(self, 0);
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) d[i] += self.grad[0];
  });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  std::vector<double> c(a.values().begin(), a.values().end());
  if (auto* m = KinkMonitor::active(); m && slope != 1.0)
    for (double v : c) m->observe(std::abs(v));
  for (double& v : c)
    if (v <= 0.0) v = slope == 0.0 ? 0.0 : v * slope;
  return make_result(a.shape(), std::move(c), {a}, [slope](Node& self) {
    double* d = sink(self, 0);
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < x.size(); ++i) d[i] += x[i] > 0.0 ? self.grad[i] : slope * self.grad[i];
  });
}

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  return make_result(std::move(shape), {a.values().begin(), a.values().end()}, {a}, [](Node& self) {
    double* d = sink(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
  });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis < 0) axis += static_cast<int>(first.size());
  if (axis < 0 || axis >= static_cast<int>(first.size())) throw std::invalid_argument("concat: bad axis");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != first.size()) shape_error("concat", first, probe);
    for (std::size_t d = 0; d < probe.size(); ++d)
      if (static_cast<int>(d) != axis && probe[d] != first[d]) shape_error("concat", first, probe);
    out_shape[axis] += probe[axis];
  }
  std::size_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= first[d];
  std::vector<std::size_t> inner;
  std::size_t row = 0;
  for (const Tensor& p : parts) {
    inner.push_back(p.numel() / std::max<std::size_t>(outer, 1));
    row += inner.back();
  }
  std::vector<double> c(outer * row);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = o * row;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      std::copy_n(parts[i].values().data() + o * inner[i], inner[i], c.data() + off);
      off += inner[i];
    }
  }
  return make_result(std::move(out_shape), std::move(c), std::vector<Tensor>(parts.begin(), parts.end()),
                     [outer, row, inner](Node& self) {
                       std::size_t base = 0;
                       for (std::size_t i = 0; i < inner.size(); ++i) {
                         if (double* d = sink(self, i))
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t j = 0; j < inner[i]; ++j)
                               d[o * inner[i] + j] += self.grad[o * row + base + j];
                         base += inner[i];
                       }
                     });
}

Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> mask) {
  require_rank("masked_softmax", x, 2);
  if (mask.size() != x.numel())
    throw std::invalid_argument("masked_softmax: mask has " + std::to_string(mask.size()) +
                                " entries for shape " + to_string(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> y(x.numel(), 0.0);
  for (int i = 0; i < m; ++i) {
    const double* xi = x.values().data() + static_cast<std::size_t>(i) * n;
    const std::uint8_t* mi = mask.data() + static_cast<std::size_t>(i) * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j)
      if (mi[j]) mx = std::max(mx, xi[j]);
    if (mx == -std::numeric_limits<double>::infinity()) continue;  // empty support
    double z = 0.0;
    double* yi = y.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j)
      if (mi[j]) z += yi[j] = std::exp(xi[j] - mx);
    for (int j = 0; j < n; ++j) yi[j] /= z;
  }
  return make_result(x.shape(), std::move(y), {x}, [m, n](Node& self) {
    double* d = sink(self, 0);
    const double* y = self.value.data();
    const double* g = self.grad.data();
    for (int i = 0; i < m; ++i) {
      const std::size_t r = static_cast<std::size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += g[r + j] * y[r + j];
      for (int j = 0; j < n; ++j) d[r + j] += y[r + j] * (g[r + j] - dot);
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank("cross_entropy", logits, 2);
  const int m = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != m)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                                to_string(logits.shape()));
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  double loss = 0.0;
  for (int i = 0; i < m; ++i) {
    if (labels[i] < 0 || labels[i] >= c) throw std::invalid_argument("cross_entropy: label out of range");
    const double* z = logits.values().data() + static_cast<std::size_t>(i) * c;
    double* p = probs->data() + static_cast<std::size_t>(i) * c;
    const double mx = *std::max_element(z, z + c);
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += p[j] = std::exp(z[j] - mx);
    for (int j = 0; j < c; ++j) p[j] /= s;
    loss -= z[labels[i]] - mx - std::log(s);
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result({1}, {loss}, {logits}, [probs, lab = std::move(lab), c](Node& self) {
    double* d = sink(self, 0);
    const double g = self.grad[0];
    for (std::size_t i = 0; i < lab.size(); ++i)
      for (int j = 0; j < c; ++j)
        d[i * c + j] += g * ((*probs)[i * c + j] - (j == lab[i] ? 1.0 : 0.0));
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int kernel, int stride, int pad) {
  require_rank("conv2d", x, 4);
  kernels::ConvShape s{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel, stride, pad};
  if (w.rank() != 2 || w.dim(0) != s.patch_cols()) shape_error("conv2d", x.shape(), w.shape());
  const int co = w.dim(1);
  if (bias.rank() != 1 || bias.dim(0) != co) shape_error("conv2d bias", w.shape(), bias.shape());
  if (s.out_height() <= 0 || s.out_width() <= 0) throw std::invalid_argument("conv2d: empty output");
  const int rows = static_cast<int>(s.patch_rows()), k = s.patch_cols();
  auto cols = std::make_shared<std::vector<double>>(s.patch_rows() * k);
  kernels::im2col(s, x.values().data(), cols->data());
  std::vector<double> y(static_cast<std::size_t>(rows) * co);
  kernels::gemm(false, false, rows, co, k, cols->data(), k, w.values().data(), co, 0.0, y.data(), co);
  add_rows(y.data(), rows, co, bias.values().data());
  Shape out{s.batch, s.out_height(), s.out_width(), co};
  return make_result(std::move(out), std::move(y), {x, w, bias}, [s, cols, rows, k, co](Node& self) {
    const double* g = self.grad.data();
    if (double* dw = sink(self, 1)) kernels::gemm(true, false, k, co, rows, cols->data(), k, g, co, 1.0, dw, co);
    if (double* db = sink(self, 2)) sum_rows(g, rows, co, db);
    if (double* dx = sink(self, 0)) {
      std::vector<double> dcols(static_cast<std::size_t>(rows) * k);
      kernels::gemm(false, true, rows, k, co, g, co, self.parents[1]->value.data(), co, 0.0, dcols.data(), k);
      kernels::col2im(s, dcols.data(), dx);
    }
  });
}

Tensor max_pool(const Tensor& x, int window) {
  require_rank("max_pool", x, 4);
  if (window < 1) throw std::invalid_argument("max_pool: window must be positive");
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const int oh = h / window, ow = w / window;
  if (oh == 0 || ow == 0) throw std::invalid_argument("max_pool: window larger than input " + to_string(x.shape()));
  const std::size_t count = static_cast<std::size_t>(b) * oh * ow * c;
  std::vector<double> y(count);
  auto arg = std::make_shared<std::vector<std::size_t>>(count);
  const double* xv = x.values().data();
  KinkMonitor* monitor = KinkMonitor::active();
  for (int n = 0; n < b; ++n)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t o = ((static_cast<std::size_t>(n) * oh + oy) * ow + ox) * c + ch;
          std::size_t best = 0;
          double bv = -std::numeric_limits<double>::infinity();
          for (int dy = 0; dy < window; ++dy)
            for (int dx = 0; dx < window; ++dx) {
              const std::size_t i =
                  ((static_cast<std::size_t>(n) * h + oy * window + dy) * w + ox * window + dx) * c + ch;
              if (xv[i] > bv) bv = xv[i], best = i;
            }
          if (monitor && window > 1) {
            double runner_up = -std::numeric_limits<double>::infinity();
            for (int dy = 0; dy < window; ++dy)
              for (int dx = 0; dx < window; ++dx) {
                const std::size_t i =
                    ((static_cast<std::size_t>(n) * h + oy * window + dy) * w + ox * window + dx) * c + ch;
                if (i != best) runner_up = std::max(runner_up, xv[i]);
              }
            // exact ties come from duplicated values (say, zeros after a
            // relu) that move together; only near ties can swap the argmax
            if (bv > runner_up) monitor->observe(bv - runner_up);
          }
          y[o] = bv;
          (*arg)[o] = best;
        }
  return make_result({b, oh, ow, c}, std::move(y), {x}, [arg](Node& self) {
    double* d = sink(self, 0);
    for (std::size_t o = 0; o < arg->size(); ++o) d[(*arg)[o]] += self.grad[o];
  });
}

Tensor sample_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  if (x.rank() < 2) throw std::invalid_argument("sample_norm: need a batch axis, got " + to_string(x.shape()));
  const int c = x.dim(-1);
  if (gain.rank() != 1 || gain.dim(0) != c) shape_error("sample_norm gain", x.shape(), gain.shape());
  if (shift.rank() != 1 || shift.dim(0) != c) shape_error("sample_norm shift", x.shape(), shift.shape());
  const int b = x.dim(0);
  const std::size_t per = x.numel() / b, pixels = per / c;
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(b);
  std::vector<double> y(x.numel());
  const double* gv = gain.values().data();
  const double* sv = shift.values().data();
  for (int n = 0; n < b; ++n) {
    const double* xs = x.values().data() + n * per;
    double mean = 0.0;
    for (std::size_t i = 0; i < per; ++i) mean += xs[i];
    mean /= static_cast<double>(per);
    double var = 0.0;
    for (std::size_t i = 0; i < per; ++i) var += (xs[i] - mean) * (xs[i] - mean);
    var /= static_cast<double>(per);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[n] = is;
    double* hs = xhat->data() + n * per;
    double* ys = y.data() + n * per;
    for (std::size_t p = 0; p < pixels; ++p)
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t i = p * c + ch;
        hs[i] = (xs[i] - mean) * is;
        ys[i] = hs[i] * gv[ch] + sv[ch];
      }
  }
  return make_result(x.shape(), std::move(y), {x, gain, shift}, [xhat, inv_std, per, pixels, c, b](Node& self) {
    const double* g = self.grad.data();
    const double* h = xhat->data();
    const double* gv = self.parents[1]->value.data();
    const std::size_t rows = static_cast<std::size_t>(b) * pixels;
    if (double* dg = sink(self, 1))
      for (std::size_t r = 0; r < rows; ++r)
        for (int ch = 0; ch < c; ++ch) dg[ch] += g[r * c + ch] * h[r * c + ch];
    if (double* ds = sink(self, 2)) sum_rows(g, rows, c, ds);
    if (double* dx = sink(self, 0))
      for (int n = 0; n < b; ++n) {
        const double* gs = g + n * per;
        const double* hs = h + n * per;
        double* ds = dx + n * per;
        double mean_d = 0.0, mean_dh = 0.0;
        for (std::size_t p = 0; p < pixels; ++p)
          for (int ch = 0; ch < c; ++ch) {
            const double dh = gs[p * c + ch] * gv[ch];
            mean_d += dh;
            mean_dh += dh * hs[p * c + ch];
          }
        mean_d /= static_cast<double>(per);
        mean_dh /= static_cast<double>(per);
        const double is = (*inv_std)[n];
        for (std::size_t p = 0; p < pixels; ++p)
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t i = p * c + ch;
            ds[i] += is * (gs[i] * gv[ch] - mean_d - hs[i] * mean_dh);
          }
      }
  });
}

namespace {

void check_nodes(const char* op, const GraphPtr& g, const Tensor& t) {
  if (t.rank() != 2 || t.dim(0) != g->n)
    throw std::invalid_argument(std::string(op) + ": graph has " + std::to_string(g->n) + " nodes, tensor is " +
                                to_string(t.shape()));
}

void check_edges(const char* op, const GraphPtr& g, const Tensor& e) {
  if (e.rank() != 1 || static_cast<std::size_t>(e.dim(0)) != g->num_edges())
    throw std::invalid_argument(std::string(op) + ": graph has " + std::to_string(g->num_edges()) +
                                " edges, tensor is " + to_string(e.shape()));
}

}  // namespace

Tensor edge_bilinear(const GraphPtr& g, const Tensor& q, const Tensor& k) {
  check_nodes("edge_bilinear", g, q);
  check_nodes("edge_bilinear", g, k);
  if (q.dim(1) != k.dim(1)) shape_error("edge_bilinear", q.shape(), k.shape());
  const int f = q.dim(1);
  std::vector<double> e(g->num_edges());
  for (int i = 0; i < g->n; ++i)
    for (int p = g->row_ptr[i]; p < g->row_ptr[i + 1]; ++p) {
      const double* qi = q.values().data() + static_cast<std::size_t>(i) * f;
      const double* kj = k.values().data() + static_cast<std::size_t>(g->col[p]) * f;
      double s = 0.0;
      for (int c = 0; c < f; ++c) s += qi[c] * kj[c];
      e[p] = s;
    }
  const int edges = static_cast<int>(e.size());
  return make_result({edges}, std::move(e), {q, k}, [g, f](Node& self) {
    double* dq = sink(self, 0);
    double* dk = sink(self, 1);
    const double* qv = self.parents[0]->value.data();
    const double* kv = self.parents[1]->value.data();
    for (int i = 0; i < g->n; ++i)
      for (int p = g->row_ptr[i]; p < g->row_ptr[i + 1]; ++p) {
        const double ge = self.grad[p];
        const std::size_t ri = static_cast<std::size_t>(i) * f, rj = static_cast<std::size_t>(g->col[p]) * f;
        for (int c = 0; c < f; ++c) {
          if (dq) dq[ri + c] += ge * kv[rj + c];
          if (dk) dk[rj + c] += ge * qv[ri + c];
        }
      }
  });
}

Tensor edge_pair_sum(const GraphPtr& g, const Tensor& l, const Tensor& r) {
  check_nodes("edge_pair_sum", g, l);
  check_nodes("edge_pair_sum", g, r);
  if (l.dim(1) != 1 || r.dim(1) != 1) shape_error("edge_pair_sum", l.shape(), r.shape());
  std::vector<double> e(g->num_edges());
  for (int i = 0; i < g->n; ++i)
    for (int p = g->row_ptr[i]; p < g->row_ptr[i + 1]; ++p) e[p] = l.values()[i] + r.values()[g->col[p]];
  const int edges = static_cast<int>(e.size());
  return make_result({edges}, std::move(e), {l, r}, [g](Node& self) {
    double* dl = sink(self, 0);
    double* dr = sink(self, 1);
    for (int i = 0; i < g->n; ++i)
      for (int p = g->row_ptr[i]; p < g->row_ptr[i + 1]; ++p) {
        if (dl) dl[i] += self.grad[p];
        if (dr) dr[g->col[p]] += self.grad[p];
      }
  });
}

Tensor edge_softmax(const GraphPtr& g, const Tensor& e) {
  check_edges("edge_softmax", g, e);
  std::vector<double> a(g->num_edges());
  for (int i = 0; i < g->n; ++i) {
    const int lo = g->row_ptr[i], hi = g->row_ptr[i + 1];
    if (lo == hi) continue;
    const double mx = *std::max_element(e.values().begin() + lo, e.values().begin() + hi);
    double z = 0.0;
    for (int p = lo; p < hi; ++p) z += a[p] = std::exp(e.values()[p] - mx);
    for (int p = lo; p < hi; ++p) a[p] /= z;
  }
  return make_result(e.shape(), std::move(a), {e}, [g](Node& self) {
    double* d = sink(self, 0);
    for (int i = 0; i < g->n; ++i) {
      const int lo = g->row_ptr[i], hi = g->row_ptr[i + 1];
      double dot = 0.0;
      for (int p = lo; p < hi; ++p) dot += self.grad[p] * self.value[p];
      for (int p = lo; p < hi; ++p) d[p] += self.value[p] * (self.grad[p] - dot);
    }
  });
}

namespace {

Tensor shift_impl(const GraphPtr& g, const Tensor* a, const Tensor& x) {
  check_nodes("graph_shift", g, x);
  if (a) check_edges("attention_shift", g, *a);
  const int f = x.dim(1);
  std::vector<double> y(x.numel(), 0.0);
  for (int i = 0; i < g->n; ++i)
    for (int p = g->row_ptr[i]; p < g->row_ptr[i + 1]; ++p) {
      const double c = g->weight[p] * (a ? a->values()[p] : 1.0);
      const double* xj = x.values().data() + static_cast<std::size_t>(g->col[p]) * f;
      double* yi = y.data() + static_cast<std::size_t>(i) * f;
      for (int k = 0; k < f; ++k) yi[k] += c * xj[k];
    }
  std::vector<Tensor> parents{x};
  if (a) parents.push_back(*a);
  const bool attn = a != nullptr;
  return make_result(x.shape(), std::move(y), std::move(parents), [g, f, attn](Node& self) {
    double* dx = sink(self, 0);
    double* da = attn ? sink(self, 1) : nullptr;
    const double* xv = self.parents[0]->value.data();
    const double* av = attn ? self.parents[1]->value.data() : nullptr;
    for (int i = 0; i < g->n; ++i)
      for (int p = g->row_ptr[i]; p < g->row_ptr[i + 1]; ++p) {
        const std::size_t rj = static_cast<std::size_t>(g->col[p]) * f;
        const double* gi = self.grad.data() + static_cast<std::size_t>(i) * f;
        if (dx) {
          const double c = g->weight[p] * (av ? av[p] : 1.0);
          for (int k = 0; k < f; ++k) dx[rj + k] += c * gi[k];
        }
        if (da) {
          double s = 0.0;
          for (int k = 0; k < f; ++k) s += gi[k] * xv[rj + k];
          da[p] += g->weight[p] * s;
        }
      }
  });
}

}  // namespace

Tensor graph_shift(const GraphPtr& g, const Tensor& x) { return shift_impl(g, nullptr, x); }
Tensor attention_shift(const GraphPtr& g, const Tensor& a, const Tensor& x) { return shift_impl(g, &a, x); }

double gradient_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double h,
                      std::size_t max_coords, std::uint64_t seed) {
  zero_grad(inputs);
  backward(f());
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (Tensor& in : inputs) {
    if (!in.requires_grad()) throw std::invalid_argument("gradient_check: input does not require grad");
    const std::vector<double> analytic(in.grad().begin(), in.grad().end());
    std::vector<std::size_t> coords(in.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    double diff = 0.0, na = 0.0, nf = 0.0;
    NoGradGuard no_grad;
    for (std::size_t i : coords) {
      double& x = in.mutable_values()[i];
      const double saved = x;
      x = saved + h;
      const double up = f().item();
      x = saved - h;
      const double down = f().item();
      x = saved;
      const double fd = (up - down) / (2.0 * h);
      diff += (fd - analytic[i]) * (fd - analytic[i]);
      na += analytic[i] * analytic[i];
      nf += fd * fd;
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nf), 1e-6});
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

std::vector<double> fan_in_uniform(std::size_t count, int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / std::max(1, fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(count);
  for (double& x : v) x = u(rng);
  return v;
}

Adam::Adam(std::span<const Tensor> params, AdamConfig cfg) : cfg_(cfg) {
  for (const Tensor& p : params) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(std::span<Tensor> params, double lr) {
  if (params.size() != m_.size()) throw std::invalid_argument("Adam::step: parameter count changed");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto theta = params[k].mutable_values();
    auto grad = params[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = grad[i] + cfg_.weight_decay * theta[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
  }
}

double cosine_lr(double epoch, double lr_max, double lr_min, double period) {
  if (period <= 0) throw std::invalid_argument("cosine_lr: period must be positive");
  const double e = std::clamp(epoch, 0.0, period);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * e / period));
}

const NamedArray* Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string text() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw std::runtime_error("checkpoint: truncated data");
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const Checkpoint& ck) {
  std::string out = "MGCK";
  put<std::uint32_t>(out, Checkpoint::kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.config.size()));
  out += ck.config;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.arrays.size()));
  for (const auto& a : ck.arrays) {
    if (numel(a.shape) != a.values.size())
      throw std::invalid_argument("checkpoint: array '" + a.name + "' size does not match its shape");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (int d : a.shape) put<std::int64_t>(out, d);
    for (double v : a.values) put<double>(out, v);
  }
  return out;
}

Checkpoint deserialize(std::string_view bytes) {
  if (bytes.substr(0, 4) != "MGCK") throw std::runtime_error("checkpoint: bad magic");
  Reader r(bytes.substr(4));
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.config = r.text();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.text();
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(static_cast<int>(r.get<std::int64_t>()));
    a.values.resize(numel(a.shape));
    for (double& v : a.values) v = r.get<double>();
    ck.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + tmp);
    const std::string bytes = serialize(ck);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot rename to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

}  // namespace magat::ad
