#pragma once

// Dense NCHW tensors with reverse-mode autodiff, sized for small CNNs on CPU.
//
// Design notes:
//  - Tensor<T> is a cheap handle onto a shared node. Ops are free functions
//    that build the graph define-by-run; backward() walks it in reverse
//    topological order and accumulates into .grad(). Graphs are one-shot:
//    backward() tears down the walked graph, and leaf grads persist until
//    zero_grad().
//  - The scalar type T is the engine-wide precision switch: float for
//    training, double for gradient checking. There are no per-tensor dtypes.
//  - Convolution runs as im2col + GEMM (Eigen). A naive direct-convolution
//    reference lives in the test suite and pins this path to 1e-5.
//  - Everything is single-threaded and iteration order is fixed, so equal
//    seeds give bitwise-equal results.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cresnet/error.hpp"

namespace cresnet {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

namespace detail {

// Grad recording is on by default; evaluate() and friends switch it off via
// the RAII guard below instead of threading flags through every op.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

}  // namespace detail

struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Tensor {
  struct Node;

 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return filled(std::move(shape), T(1)); }

  static Tensor filled(Shape shape, T value) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->data.assign(static_cast<size_t>(numel(t.node_->shape)), value);
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<T> data) {
    if (static_cast<std::int64_t>(data.size()) != numel(shape))
      throw ShapeError("tensor: data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    return t;
  }

  static Tensor randn(Shape shape, std::mt19937& rng, T stddev = T(1)) {
    Tensor t = zeros(std::move(shape));
    std::normal_distribution<T> dist(T(0), stddev);
    for (auto& v : t.node_->data) v = dist(rng);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  // Owner count of the underlying node; lets tests pin graph teardown.
  long use_count() const { return node_.use_count(); }
  const Shape& shape() const { return node_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->data.size()); }
  std::int64_t dim(size_t i) const { return node_->shape.at(i); }

  T* data() { return node_->data.data(); }
  const T* data() const { return node_->data.data(); }
  std::vector<T>& vec() { return node_->data; }
  const std::vector<T>& vec() const { return node_->data; }

  T item() const {
    if (size() != 1)
      throw ShapeError("item: tensor has " + std::to_string(size()) + " elements, expected 1");
    return node_->data[0];
  }

  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Grad storage, lazily allocated; repeated backward() calls accumulate here
  // until zero_grad().
  std::vector<T>& grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
    return node_->grad;
  }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  void zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  // Same buffer, no graph: further ops on the result are leaves.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = node_->shape;
    t.node_->data = node_->data;
    return t;
  }

  // Non-owning handle onto the same node, for an op's backprop closure to
  // reach its own output. An owning copy there would make the node own
  // itself through the closure and the graph would never free.
  Tensor alias() const {
    Tensor t;
    t.node_ = std::shared_ptr<Node>(std::shared_ptr<Node>(), node_.get());
    return t;
  }

  // Graphs are one-shot: closures and parent edges drop as soon as each
  // node's grads have flowed, so intermediate activations free during the
  // walk rather than piling up until the root handle dies.
  void backward() {
    if (size() != 1) throw GraphError("backward: root must be a scalar, got " + shape_str(shape()));
    if (!node_->requires_grad)
      throw GraphError("backward: tensor is detached from any graph (requires_grad is false)");
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_set<Node*> seen;
    topo(node_, seen, order);
    grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = it->get();
      if (n->backprop) {
        n->backprop();
        n->backprop = nullptr;
      }
      n->parents.clear();
      it->reset();
    }
  }

  // Op constructor: when grad mode is on and any parent requires grad, the
  // result keeps the parent edges; the op then attaches its backprop closure,
  // which runs with the result's grad already populated.
  static Tensor make_op(Shape shape, std::vector<Tensor> parents) {
    Tensor t = zeros(std::move(shape));
    bool track = detail::grad_mode() &&
                 std::any_of(parents.begin(), parents.end(),
                             [](const Tensor& p) { return p.requires_grad(); });
    if (track) {
      t.node_->requires_grad = true;
      t.node_->parents = std::move(parents);
    }
    return t;
  }

  void set_backprop(std::function<void()> fn) { node_->backprop = std::move(fn); }
  bool tracked() const { return node_ && node_->requires_grad && !node_->parents.empty(); }

 private:
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void()> backprop;
  };

  static void topo(const std::shared_ptr<Node>& n, std::unordered_set<Node*>& seen,
                   std::vector<std::shared_ptr<Node>>& order) {
    if (!seen.insert(n.get()).second) return;
    for (auto& p : n->parents) topo(p.node_, seen, order);
    order.push_back(n);
  }

  std::shared_ptr<Node> node_;
};

// ---------------------------------------------------------------------------
// conv2d: x (N,Cin,H,W) * w (Cout,Cin,k,k) -> (N,Cout,Ho,Wo), bias-free.

namespace detail {

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride,
                                 std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// col is (Cin*k*k) x (Ho*Wo), row-major. Out-of-image taps read as zero.
template <typename T>
void im2col(const T* x, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t k,
            std::int64_t stride, std::int64_t pad, std::int64_t Ho, std::int64_t Wo, T* col) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        T* row = col + ((c * k + ki) * k + kj) * (Ho * Wo);
        for (std::int64_t oh = 0; oh < Ho; ++oh) {
          std::int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) {
            std::fill(row + oh * Wo, row + (oh + 1) * Wo, T(0));
            continue;
          }
          const T* src = x + (c * H + ih) * W;
          for (std::int64_t ow = 0; ow < Wo; ++ow) {
            std::int64_t iw = ow * stride - pad + kj;
            row[oh * Wo + ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t k,
                std::int64_t stride, std::int64_t pad, std::int64_t Ho, std::int64_t Wo, T* x) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const T* row = col + ((c * k + ki) * k + kj) * (Ho * Wo);
        for (std::int64_t oh = 0; oh < Ho; ++oh) {
          std::int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) continue;
          T* dst = x + (c * H + ih) * W;
          for (std::int64_t ow = 0; ow < Wo; ++ow) {
            std::int64_t iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < W) dst[iw] += row[oh * Wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::int64_t stride, std::int64_t pad) {
  if (x.shape().size() != 4)
    throw ShapeError("conv2d: input must be 4-d (N,C,H,W), got " + shape_str(x.shape()));
  if (w.shape().size() != 4 || w.dim(2) != w.dim(3))
    throw ShapeError("conv2d: weight must be (Cout,Cin,k,k), got " + shape_str(w.shape()));
  const std::int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != Cin)
    throw ShapeError("conv2d: input channel axis (" + std::to_string(Cin) +
                     ") does not match weight channel axis (" + std::to_string(w.dim(1)) + ")");
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >=1 and pad >=0");
  const std::int64_t Ho = detail::conv_out_dim(H, k, stride, pad);
  const std::int64_t Wo = detail::conv_out_dim(W, k, stride, pad);
  if (Ho < 1 || Wo < 1)
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " exceeds padded input on H/W axes " +
                     shape_str(x.shape()));

  Tensor<T> out = Tensor<T>::make_op({N, Cout, Ho, Wo}, {x, w});

  std::vector<T> col(static_cast<size_t>(Cin * k * k * Ho * Wo));
  detail::MapConstMat<T> wm(w.data(), Cout, Cin * k * k);
  for (std::int64_t i = 0; i < N; ++i) {
    detail::im2col(x.data() + i * Cin * H * W, Cin, H, W, k, stride, pad, Ho, Wo, col.data());
    detail::MapConstMat<T> cm(col.data(), Cin * k * k, Ho * Wo);
    detail::MapMat<T> om(out.data() + i * Cout * Ho * Wo, Cout, Ho * Wo);
    om.noalias() = wm * cm;
  }

  if (out.tracked()) {
    Tensor<T> xc = x, wc = w, oc = out.alias();
    oc.set_backprop([xc, wc, oc, N, Cin, H, W, Cout, k, stride, pad, Ho, Wo]() mutable {
      const std::vector<T>& go = oc.grad();
      std::vector<T> col(static_cast<size_t>(Cin * k * k * Ho * Wo));
      detail::MapConstMat<T> wm(wc.data(), Cout, Cin * k * k);
      const bool need_dx = xc.requires_grad(), need_dw = wc.requires_grad();
      std::vector<T> dcol(need_dx ? col.size() : 0);
      for (std::int64_t i = 0; i < N; ++i) {
        detail::MapConstMat<T> gm(go.data() + i * Cout * Ho * Wo, Cout, Ho * Wo);
        if (need_dw) {
          detail::im2col(xc.data() + i * Cin * H * W, Cin, H, W, k, stride, pad, Ho, Wo,
                         col.data());
          detail::MapConstMat<T> cm(col.data(), Cin * k * k, Ho * Wo);
          detail::MapMat<T> dwm(wc.grad().data(), Cout, Cin * k * k);
          dwm.noalias() += gm * cm.transpose();
        }
        if (need_dx) {
          detail::MapMat<T> dcm(dcol.data(), Cin * k * k, Ho * Wo);
          dcm.noalias() = wm.transpose() * gm;
          detail::col2im_add(dcol.data(), Cin, H, W, k, stride, pad, Ho, Wo,
                             xc.grad().data() + i * Cin * H * W);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batchnorm2d. Running stats live outside the graph in BnState.

template <typename T>
struct BnState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);
  bool initialized = true;  // (0,1) defaults count as initialized

  explicit BnState(std::int64_t channels = 0)
      : running_mean(static_cast<size_t>(channels), T(0)),
        running_var(static_cast<size_t>(channels), T(1)) {}

  static BnState uninitialized(std::int64_t channels) {
    BnState s(channels);
    s.initialized = false;
    return s;
  }
};

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BnState<T>& state, bool training) {
  if (x.shape().size() != 4)
    throw ShapeError("batchnorm2d: input must be 4-d (N,C,H,W), got " + shape_str(x.shape()));
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.size() != C || beta.size() != C ||
      static_cast<std::int64_t>(state.running_mean.size()) != C)
    throw ShapeError("batchnorm2d: channel axis " + std::to_string(C) +
                     " does not match parameter size " + std::to_string(gamma.size()));
  if (!training && !state.initialized)
    throw Error("batchnorm2d: eval mode with uninitialized running statistics");
  const std::int64_t m = N * H * W;
  if (training && m < 2)
    throw ShapeError("batchnorm2d: training needs more than one value per channel, got N*H*W=1");

  Tensor<T> out = Tensor<T>::make_op(x.shape(), {x, gamma, beta});

  const std::int64_t plane = H * W;
  std::vector<T> mean(C), invstd(C);
  if (training) {
    for (std::int64_t c = 0; c < C; ++c) {
      T s = 0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) s += p[i];
      }
      mean[c] = s / T(m);
      T v = 0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          T d = p[i] - mean[c];
          v += d * d;
        }
      }
      T var = v / T(m);
      invstd[c] = T(1) / std::sqrt(var + state.eps);
      // Running stats track the unbiased variance estimate.
      T unbiased = m > 1 ? v / T(m - 1) : var;
      state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mean[c];
      state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
    state.initialized = true;
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      invstd[c] = T(1) / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T* p = x.data() + (n * C + c) * plane;
      T* o = out.data() + (n * C + c) * plane;
      const T g = gamma.data()[c], b = beta.data()[c], mu = mean[c], is = invstd[c];
      for (std::int64_t i = 0; i < plane; ++i) o[i] = g * (p[i] - mu) * is + b;
    }
  }

  if (out.tracked()) {
    Tensor<T> xc = x, gc = gamma, bc = beta, oc = out.alias();
    oc.set_backprop([xc, gc, bc, oc, mean, invstd, N, C, plane, m, training]() mutable {
      const std::vector<T>& go = oc.grad();
      for (std::int64_t c = 0; c < C; ++c) {
        const T mu = mean[c], is = invstd[c], g = gc.data()[c];
        T sum_dy = 0, sum_dy_xhat = 0;
        for (std::int64_t n = 0; n < N; ++n) {
          const T* gp = go.data() + (n * C + c) * plane;
          const T* xp = xc.data() + (n * C + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            sum_dy += gp[i];
            sum_dy_xhat += gp[i] * (xp[i] - mu) * is;
          }
        }
        if (gc.requires_grad()) gc.grad()[c] += sum_dy_xhat;
        if (bc.requires_grad()) bc.grad()[c] += sum_dy;
        if (!xc.requires_grad()) continue;
        for (std::int64_t n = 0; n < N; ++n) {
          const T* gp = go.data() + (n * C + c) * plane;
          const T* xp = xc.data() + (n * C + c) * plane;
          T* dx = xc.grad().data() + (n * C + c) * plane;
          if (training) {
            // d/dx of the per-batch normalization, stats included.
            const T inv_m = T(1) / T(m);
            for (std::int64_t i = 0; i < plane; ++i) {
              T xhat = (xp[i] - mu) * is;
              dx[i] += g * is * (gp[i] - inv_m * sum_dy - inv_m * xhat * sum_dy_xhat);
            }
          } else {
            for (std::int64_t i = 0; i < plane; ++i) dx[i] += g * is * gp[i];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise and reduction ops.

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::make_op(x.shape(), {x});
  const T* p = x.data();
  T* o = out.data();
  const std::int64_t n = x.size();
  // std::max keeps NaN (comparison false returns the first argument), so
  // non-finite activations stay visible to first_nonfinite and loss checks.
  for (std::int64_t i = 0; i < n; ++i) o[i] = std::max(p[i], T(0));
  if (out.tracked()) {
    Tensor<T> xc = x, oc = out.alias();
    oc.set_backprop([xc, oc, n]() mutable {
      if (!xc.requires_grad()) return;
      const std::vector<T>& go = oc.grad();
      T* dx = xc.grad().data();
      const T* p = xc.data();
      for (std::int64_t i = 0; i < n; ++i)
        if (p[i] > T(0)) dx[i] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shapes differ on at least one axis: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::make_op(a.shape(), {a, b});
  const std::int64_t n = a.size();
  const T* pa = a.data();
  const T* pb = b.data();
  T* o = out.data();
  for (std::int64_t i = 0; i < n; ++i) o[i] = pa[i] + pb[i];
  if (out.tracked()) {
    Tensor<T> ac = a, bc = b, oc = out.alias();
    oc.set_backprop([ac, bc, oc, n]() mutable {
      const std::vector<T>& go = oc.grad();
      if (ac.requires_grad()) {
        T* da = ac.grad().data();
        for (std::int64_t i = 0; i < n; ++i) da[i] += go[i];
      }
      if (bc.requires_grad()) {
        T* db = bc.grad().data();
        for (std::int64_t i = 0; i < n; ++i) db[i] += go[i];
      }
    });
  }
  return out;
}

// (N,C,H,W) -> (N,C); the classifier head's pooling.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.shape().size() != 4)
    throw ShapeError("global_avg_pool: input must be 4-d (N,C,H,W), got " + shape_str(x.shape()));
  const std::int64_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out = Tensor<T>::make_op({N, C}, {x});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* p = x.data() + (n * C + c) * plane;
      T s = 0;
      for (std::int64_t i = 0; i < plane; ++i) s += p[i];
      out.data()[n * C + c] = s / T(plane);
    }
  if (out.tracked()) {
    Tensor<T> xc = x, oc = out.alias();
    oc.set_backprop([xc, oc, N, C, plane]() mutable {
      if (!xc.requires_grad()) return;
      const std::vector<T>& go = oc.grad();
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
          T g = go[n * C + c] / T(plane);
          T* dx = xc.grad().data() + (n * C + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) dx[i] += g;
        }
    });
  }
  return out;
}

// x (N,C) * w(K,C)^T + b(K) -> (N,K)
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2)
    throw ShapeError("linear: expected x (N,C) and w (K,C), got " + shape_str(x.shape()) + " and " +
                     shape_str(w.shape()));
  const std::int64_t N = x.dim(0), C = x.dim(1), K = w.dim(0);
  if (w.dim(1) != C)
    throw ShapeError("linear: feature axis mismatch, x has " + std::to_string(C) + ", w expects " +
                     std::to_string(w.dim(1)));
  if (b.size() != K)
    throw ShapeError("linear: bias size " + std::to_string(b.size()) + " != output axis " +
                     std::to_string(K));
  Tensor<T> out = Tensor<T>::make_op({N, K}, {x, w, b});
  detail::MapConstMat<T> xm(x.data(), N, C), wm(w.data(), K, C);
  detail::MapMat<T> om(out.data(), N, K);
  om.noalias() = xm * wm.transpose();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t k = 0; k < K; ++k) out.data()[n * K + k] += b.data()[k];
  if (out.tracked()) {
    Tensor<T> xc = x, wc = w, bc = b, oc = out.alias();
    oc.set_backprop([xc, wc, bc, oc, N, C, K]() mutable {
      detail::MapConstMat<T> gm(oc.grad().data(), N, K);
      if (xc.requires_grad()) {
        detail::MapConstMat<T> wm(wc.data(), K, C);
        detail::MapMat<T> dxm(xc.grad().data(), N, C);
        dxm.noalias() += gm * wm;
      }
      if (wc.requires_grad()) {
        detail::MapConstMat<T> xm(xc.data(), N, C);
        detail::MapMat<T> dwm(wc.grad().data(), K, C);
        dwm.noalias() += gm.transpose() * xm;
      }
      if (bc.requires_grad()) {
        T* db = bc.grad().data();
        const T* g = oc.grad().data();
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t k = 0; k < K; ++k) db[k] += g[n * K + k];
      }
    });
  }
  return out;
}

// Mean softmax cross-entropy over the batch; labels are class indices.
// Uniform logits over K classes give exactly ln(K).
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2)
    throw ShapeError("softmax_cross_entropy: logits must be (N,K), got " +
                     shape_str(logits.shape()));
  const std::int64_t N = logits.dim(0), K = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != N)
    throw ShapeError("softmax_cross_entropy: batch axis " + std::to_string(N) + " != label count " +
                     std::to_string(labels.size()));
  for (auto y : labels)
    if (y < 0 || y >= K)
      throw Error("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," +
                  std::to_string(K) + ")");

  Tensor<T> out = Tensor<T>::make_op({1}, {logits});
  // Stash softmax probabilities for the backward pass.
  std::vector<T> probs(static_cast<size_t>(N * K));
  T loss = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    const T* z = logits.data() + n * K;
    T zmax = z[0];
    for (std::int64_t k = 1; k < K; ++k) zmax = std::max(zmax, z[k]);
    T denom = 0;
    for (std::int64_t k = 0; k < K; ++k) denom += std::exp(z[k] - zmax);
    T log_denom = std::log(denom);
    for (std::int64_t k = 0; k < K; ++k) probs[n * K + k] = std::exp(z[k] - zmax) / denom;
    loss += -(z[labels[n]] - zmax - log_denom);
  }
  out.data()[0] = loss / T(N);

  if (out.tracked()) {
    Tensor<T> lc = logits, oc = out.alias();
    oc.set_backprop([lc, oc, probs = std::move(probs), labels, N, K]() mutable {
      if (!lc.requires_grad()) return;
      const T g = oc.grad()[0] / T(N);
      T* dz = lc.grad().data();
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t k = 0; k < K; ++k)
          dz[n * K + k] += g * (probs[n * K + k] - (labels[n] == k ? T(1) : T(0)));
    });
  }
  return out;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (std::int64_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t.data()[i])) return false;
  return true;
}

}  // namespace cresnet
