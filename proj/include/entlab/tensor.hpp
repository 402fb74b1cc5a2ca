#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "entlab/kernels.hpp"
#include "entlab/rng.hpp"

namespace entlab {

// ---------------------------------------------------------------------------
// Autograd mode. Disable to build inference-only graphs (greedy decoding).
// ---------------------------------------------------------------------------

inline bool& autograd_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  NoGradGuard() : prev_(autograd_flag()) { autograd_flag() = false; }
  ~NoGradGuard() { autograd_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---------------------------------------------------------------------------
// Node: one recorded value in the computation graph. Nodes either own their
// storage or view external memory (parameter leaves), never both.
// ---------------------------------------------------------------------------

template <typename T>
struct Node {
  std::vector<std::size_t> shape;
  std::vector<T> owned;
  const T* view_data = nullptr;
  std::size_t view_size = 0;
  std::vector<T> grad;  // sized lazily, persists across backward passes
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void()> backward;  // accumulates this->grad into parents

  std::size_t size() const {
    return view_data ? view_size : owned.size();
  }

  std::span<const T> values() const {
    return view_data ? std::span<const T>(view_data, view_size)
                     : std::span<const T>(owned.data(), owned.size());
  }

  std::span<T> mutable_values() {
    if (view_data) throw std::logic_error("cannot mutate a view node");
    return {owned.data(), owned.size()};
  }

  std::span<T> grad_span() {
    if (grad.size() != size()) grad.assign(size(), T(0));
    return {grad.data(), grad.size()};
  }
};

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor: shared handle over a Node.
// ---------------------------------------------------------------------------

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->owned.assign(shape_numel(n->shape), T(0));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(std::vector<std::size_t> shape, T value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->owned.begin(), t.node_->owned.end(), value);
    return t;
  }

  static Tensor from_data(std::vector<std::size_t> shape, std::vector<T> data,
                          bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("Tensor: shape does not match data length");
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->owned = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  // leaf over external storage (model parameters); caller keeps it alive
  static Tensor view(std::vector<std::size_t> shape, const T* data, std::size_t len,
                     bool requires_grad = true) {
    if (shape_numel(shape) != len)
      throw std::invalid_argument("Tensor::view: shape does not match length");
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->view_data = data;
    n->view_size = len;
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev,
                      bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node_->owned) v = static_cast<T>(rng.normal(0.0, stddev));
    return t;
  }

  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->size(); }
  std::span<const T> data() const { return node_->values(); }
  std::span<T> mutable_data() { return node_->mutable_values(); }
  std::span<const T> grad() const {
    return {node_->grad.data(), node_->grad.size()};
  }
  bool requires_grad() const { return node_->requires_grad; }
  std::shared_ptr<Node<T>> node() const { return node_; }
  bool defined() const { return node_ != nullptr; }

  T item() const {
    if (size() != 1) throw std::logic_error("item() requires a scalar tensor");
    return data()[0];
  }

  void zero_grad() { node_->grad.assign(node_->size(), T(0)); }

  void backward() const;

 private:
  std::shared_ptr<Node<T>> node_;
};

// ---------------------------------------------------------------------------
// ComputationTape: topological ordering of the graph under a root. Every node
// appears after all of its parents; reverse replay drives backpropagation.
// ---------------------------------------------------------------------------

template <typename T>
struct ComputationTape {
  std::vector<Node<T>*> order;

  static ComputationTape build(Node<T>* root) {
    ComputationTape tape;
    std::unordered_set<const Node<T>*> visited;
    // iterative post-order DFS, deterministic for a fixed graph
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
      auto& [node, next_child] = stack.back();
      if (next_child < node->parents.size()) {
        Node<T>* child = node->parents[next_child++].get();
        if (visited.insert(child).second) stack.emplace_back(child, 0);
      } else {
        tape.order.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  void run_backward(Node<T>* root) {
    // interior grads are scratch for one pass; only leaves accumulate across
    // passes (two backward calls without zeroing double a leaf gradient)
    for (Node<T>* n : order)
      if (n->backward) n->grad.assign(n->size(), T(0));
    auto g = root->grad_span();
    for (auto& v : g) v += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward && n->requires_grad) n->backward();
    }
  }
};

template <typename T>
void Tensor<T>::backward() const {
  if (size() != 1) throw std::logic_error("backward() requires a scalar tensor");
  auto tape = ComputationTape<T>::build(node_.get());
  tape.run_backward(node_.get());
}

// ---------------------------------------------------------------------------
// op helpers
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
std::shared_ptr<Node<T>> make_result(std::vector<std::size_t> shape,
                                     std::vector<std::shared_ptr<Node<T>>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->owned.assign(shape_numel(n->shape), T(0));
  if (autograd_flag()) {
    for (auto& p : parents)
      if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->parents = std::move(parents);
  }
  return n;
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and linear algebra ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape(), "add: shape mismatch");
  auto out = detail::make_result<T>(a.shape(), {a.node(), b.node()});
  auto av = a.data(), bv = b.data();
  auto ov = out->mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (out->requires_grad) {
    Node<T>* o = out.get();
    auto an = a.node().get();
    auto bn = b.node().get();
    out->backward = [o, an, bn] {
      auto g = o->grad_span();
      if (an->requires_grad) {
        auto ga = an->grad_span();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        auto gb = bn->grad_span();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape(), "mul: shape mismatch");
  auto out = detail::make_result<T>(a.shape(), {a.node(), b.node()});
  auto av = a.data(), bv = b.data();
  auto ov = out->mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (out->requires_grad) {
    Node<T>* o = out.get();
    auto an = a.node().get();
    auto bn = b.node().get();
    out->backward = [o, an, bn] {
      auto g = o->grad_span();
      auto av2 = an->values();
      auto bv2 = bn->values();
      if (an->requires_grad) {
        auto ga = an->grad_span();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
      }
      if (bn->requires_grad) {
        auto gb = bn->grad_span();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  auto out = detail::make_result<T>(a.shape(), {a.node()});
  auto av = a.data();
  auto ov = out->mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  if (out->requires_grad) {
    Node<T>* o = out.get();
    auto an = a.node().get();
    out->backward = [o, an, c] {
      auto g = o->grad_span();
      auto ga = an->grad_span();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    };
  }
  return Tensor<T>(out);
}

// out[m x n] = a[m x k] * b[k x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape().size() == 2 && b.shape().size() == 2, "matmul: rank-2 only");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  detail::check(k == k2, "matmul: inner dimensions disagree");
  auto out = detail::make_result<T>({m, n}, {a.node(), b.node()});
  kern::matmul(a.data().data(), b.data().data(), out->mutable_values().data(), m, k, n);
  if (out->requires_grad) {
    Node<T>* o = out.get();
    auto an = a.node().get();
    auto bn = b.node().get();
    out->backward = [o, an, bn, m, k, n] {
      const T* G = o->grad_span().data();
      if (an->requires_grad) {
        std::vector<T> scratch(k * n);
        kern::matmul_grad_a(G, bn->values().data(), an->grad_span().data(), scratch.data(),
                            m, k, n);
      }
      if (bn->requires_grad)
        kern::matmul_grad_b(an->values().data(), G, bn->grad_span().data(), m, k, n);
    };
  }
  return Tensor<T>(out);
}

// broadcast-add a length-d row vector to every row of x[... x d]
template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::check(!x.shape().empty() && bias.shape().size() == 1, "add_row: bad ranks");
  const std::size_t d = x.shape().back();
  detail::check(bias.shape()[0] == d, "add_row: width mismatch");
  const std::size_t rows = x.size() / d;
  auto out = detail::make_result<T>(x.shape(), {x.node(), bias.node()});
  auto xv = x.data();
  auto bv = bias.data();
  auto ov = out->mutable_values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) ov[r * d + j] = xv[r * d + j] + bv[j];
  if (out->requires_grad) {
    Node<T>* o = out.get();
    auto xn = x.node().get();
    auto bn = bias.node().get();
    out->backward = [o, xn, bn, rows, d] {
      auto g = o->grad_span();
      if (xn->requires_grad) {
        auto gx = xn->grad_span();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bn->requires_grad) {
        auto gb = bn->grad_span();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
    };
  }
  return Tensor<T>(out);
}

// per-row zero mean / unit variance over the last dimension, then affine
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
  detail::check(!x.shape().empty(), "layer_norm: rank >= 1 required");
  const std::size_t d = x.shape().back();
  detail::check(gain.shape() == std::vector<std::size_t>{d} &&
                    bias.shape() == std::vector<std::size_t>{d},
                "layer_norm: gain/bias must have shape [d]");
  const std::size_t rows = x.size() / d;
  auto out = detail::make_result<T>(x.shape(), {x.node(), gain.node(), bias.node()});
  auto xv = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  auto ov = out->mutable_values();
  // keep normalized activations for backward
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mean) * is;
      (*xhat)[r * d + j] = h;
      ov[r * d + j] = h * gv[j] + bv[j];
    }
  }
  if (out->requires_grad) {
    Node<T>* o = out.get();
    auto xn = x.node().get();
    auto gn = gain.node().get();
    auto bn = bias.node().get();
    out->backward = [o, xn, gn, bn, xhat, inv_std, rows, d] {
      auto g = o->grad_span();
      auto gv2 = gn->values();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* grow = g.data() + r * d;
        const T* hrow = xhat->data() + r * d;
        if (gn->requires_grad) {
          auto gg = gn->grad_span();
          for (std::size_t j = 0; j < d; ++j) gg[j] += grow[j] * hrow[j];
        }
        if (bn->requires_grad) {
          auto gb = bn->grad_span();
          for (std::size_t j = 0; j < d; ++j) gb[j] += grow[j];
        }
        if (xn->requires_grad) {
          auto gx = xn->grad_span();
          // dL/dxhat = g * gain; standard layernorm input gradient
          T sum_dh = T(0), sum_dh_h = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = grow[j] * gv2[j];
            sum_dh += dh;
            sum_dh_h += dh * hrow[j];
          }
          const T is = (*inv_std)[r];
          const T inv_d = T(1) / static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = grow[j] * gv2[j];
            gx[r * d + j] += is * (dh - inv_d * sum_dh - hrow[j] * inv_d * sum_dh_h);
          }
        }
      }
    };
  }
  return Tensor<T>(out);
}

// GELU, tanh approximation
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  static constexpr T kC = T(0.79788456080286535588);  // sqrt(2/pi)
  static constexpr T kA = T(0.044715);
  auto out = detail::make_result<T>(x.shape(), {x.node()});
  auto xv = x.data();
  auto ov = out->mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const T v = xv[i];
    ov[i] = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
  }
  if (out->requires_grad) {
    Node<T>* o = out.get();
    auto xn = x.node().get();
    out->backward = [o, xn] {
      auto g = o->grad_span();
      auto xv2 = xn->values();
      auto gx = xn->grad_span();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = xv2[i];
        const T t = std::tanh(kC * (v + kA * v * v * v));
        const T dt = (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
        gx[i] += g[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
      }
    };
  }
  return Tensor<T>(out);
}

// w2 * act(w1 * x) with biases; x rows are tokens
template <typename T>
Tensor<T> ffn_forward(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1,
                      const Tensor<T>& w2, const Tensor<T>& b2) {
  return add_row(matmul(gelu(add_row(matmul(x, w1), b1)), w2), b2);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  auto out = detail::make_result<T>({1}, {x.node()});
  auto xv = x.data();
  T acc = T(0);
  for (auto v : xv) acc += v;
  out->mutable_values()[0] = acc;
  if (out->requires_grad) {
    Node<T>* o = out.get();
    auto xn = x.node().get();
    out->backward = [o, xn] {
      const T g = o->grad_span()[0];
      auto gx = xn->grad_span();
      for (auto& v : gx) v += g;
    };
  }
  return Tensor<T>(out);
}

// mean negative log-likelihood over unmasked positions, stable log-sum-exp
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        const std::vector<std::uint8_t>& mask) {
  detail::check(logits.shape().size() == 2, "cross_entropy: logits must be [n x V]");
  const std::size_t n = logits.shape()[0], V = logits.shape()[1];
  detail::check(targets.size() == n && mask.size() == n,
                "cross_entropy: targets/mask length mismatch");
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++count;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= V)
      throw std::invalid_argument("cross_entropy: target id out of range");
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: all positions masked out");
  auto out = detail::make_result<T>({1}, {logits.node()});
  auto lv = logits.data();
  T loss = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const T* row = lv.data() + i * V;
    T mx = row[0];
    for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
    T se = T(0);
    for (std::size_t j = 0; j < V; ++j) se += std::exp(row[j] - mx);
    loss += std::log(se) + mx - row[targets[i]];
  }
  out->mutable_values()[0] = loss / static_cast<T>(count);
  if (out->requires_grad) {
    Node<T>* o = out.get();
    auto ln = logits.node().get();
    auto tcopy = std::make_shared<std::vector<int>>(targets);
    auto mcopy = std::make_shared<std::vector<std::uint8_t>>(mask);
    out->backward = [o, ln, tcopy, mcopy, n, V, count] {
      const T g = o->grad_span()[0] / static_cast<T>(count);
      auto lv2 = ln->values();
      auto gl = ln->grad_span();
      for (std::size_t i = 0; i < n; ++i) {
        if (!(*mcopy)[i]) continue;
        const T* row = lv2.data() + i * V;
        T mx = row[0];
        for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
        T se = T(0);
        for (std::size_t j = 0; j < V; ++j) se += std::exp(row[j] - mx);
        T* grow = gl.data() + i * V;
        for (std::size_t j = 0; j < V; ++j) {
          const T p = std::exp(row[j] - mx) / se;
          grow[j] += g * (p - (static_cast<int>(j) == (*tcopy)[i] ? T(1) : T(0)));
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids) {
  detail::check(table.shape().size() == 2, "embedding_lookup: table must be [V x d]");
  const std::size_t V = table.shape()[0], d = table.shape()[1];
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= V)
      throw std::invalid_argument("embedding_lookup: token id out of range");
  auto out = detail::make_result<T>({ids.size(), d}, {table.node()});
  auto tv = table.data();
  auto ov = out->mutable_values();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, ov.data() + i * d);
  if (out->requires_grad) {
    Node<T>* o = out.get();
    auto tn = table.node().get();
    auto idc = std::make_shared<std::vector<int>>(ids);
    out->backward = [o, tn, idc, d] {
      auto g = o->grad_span();
      auto gt = tn->grad_span();
      for (std::size_t i = 0; i < idc->size(); ++i) {
        T* dst = gt.data() + static_cast<std::size_t>((*idc)[i]) * d;
        const T* src = g.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  }
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// finite-difference oracle
// ---------------------------------------------------------------------------

// Builds the graph via `f` on a fresh leaf, runs autodiff, then compares the
// leaf gradient against central differences. Returns the max relative error
// max |g_ad - g_fd| / max(|g_fd|, 1e-8).
inline double finite_difference_check(
    const std::function<Tensor<double>(const Tensor<double>&)>& f,
    const std::vector<std::size_t>& shape, std::vector<double> x0, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw std::invalid_argument("finite_difference_check: eps outside [1e-7, 1e-3]");
  Tensor<double> x = Tensor<double>::from_data(shape, x0, true);
  Tensor<double> y = f(x);
  if (y.size() != 1)
    throw std::invalid_argument("finite_difference_check: f must be scalar-valued");
  if (!std::isfinite(y.item()))
    throw std::runtime_error("finite_difference_check: non-finite value");
  y.backward();
  std::vector<double> g_ad(x.grad().begin(), x.grad().end());

  double max_rel = 0.0;
  NoGradGuard ng;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double orig = x0[i];
    x0[i] = orig + eps;
    const double fp = f(Tensor<double>::from_data(shape, x0, false)).item();
    x0[i] = orig - eps;
    const double fm = f(Tensor<double>::from_data(shape, x0, false)).item();
    x0[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_difference_check: non-finite value");
    const double g_fd = (fp - fm) / (2.0 * eps);
    const double rel = std::abs(g_ad[i] - g_fd) / std::max(std::abs(g_fd), 1e-8);
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace entlab
