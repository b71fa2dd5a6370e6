#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bytenmt/error.hpp"

namespace bytenmt {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Boolean attention mask; allowed(i, j) == true lets query i attend to
/// key j. A null mask pointer in the ops below means "all allowed".
struct AttnMask {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> allowed;

  static AttnMask all_allowed(int rows, int cols);
  static AttnMask causal(int n);

  bool at(int i, int j) const {
    return allowed[static_cast<size_t>(i) * cols + j] != 0;
  }
  void set(int i, int j, bool value) {
    allowed[static_cast<size_t>(i) * cols + j] = value ? 1 : 0;
  }
};

namespace detail {
bool& grad_enabled_flag();
}

/// Disables graph recording for the current thread (inference paths).
struct NoGradGuard {
  NoGradGuard() : previous(detail::grad_enabled_flag()) {
    detail::grad_enabled_flag() = false;
  }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // sized lazily, same length as data
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

/// Dense row-major tensor with reverse-mode gradient support. Copying a
/// Tensor copies the handle; the underlying node is shared.
template <typename T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    auto node = std::make_shared<Node>();
    node->data.assign(static_cast<size_t>(shape_numel(shape)), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values,
                     bool requires_grad = false) {
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
      throw Error("Tensor::from: " + std::to_string(values.size()) +
                  " values do not fill shape " + shape_str(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  /// Builds an op result node. `backward` receives the finished output
  /// node (to read its gradient) and must accumulate into the parents'
  /// gradients; it is only invoked when the output requires a gradient.
  /// Parents that do not require gradients must be skipped by the lambda.
  static Tensor make(Shape shape, std::vector<T> values,
                     std::vector<Tensor> parents,
                     std::function<void(Node&)> backward) {
    Tensor out = from(std::move(shape), std::move(values), false);
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    Node* raw = out.node_.get();
    out.node_->backward_fn = [raw, fn = std::move(backward)]() { fn(*raw); };
    return out;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(node_->data.size()); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  std::span<const T> values() const { return node_->data; }
  /// Mutable view of the raw buffer (parameter init, optimizer updates,
  /// finite-difference probes). Does not touch the recorded graph.
  std::span<T> raw() { return node_->data; }

  T item() const {
    if (size() != 1)
      throw Error("Tensor::item: tensor of shape " + shape_str(shape()) +
                  " is not a scalar");
    return node_->data[0];
  }

  std::span<const T> grad() const {
    if (!node_ || node_->grad.size() != node_->data.size())
      throw Error("Tensor::grad: no gradient has been accumulated");
    return node_->grad;
  }

  void zero_grad() {
    if (node_) node_->grad.assign(node_->data.size(), T(0));
  }

  bool all_finite() const {
    for (T v : node_->data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  /// Reverse-mode sweep from a scalar output. Accumulates into the .grad
  /// buffers of every reachable tensor that requires a gradient.
  void backward() const;

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

template <typename T>
void Tensor<T>::backward() const {
  if (!node_) throw Error("backward: undefined tensor");
  if (size() != 1)
    throw Error("backward: output of shape " + shape_str(shape()) +
                " is not a scalar");
  // Iterative post-order DFS; graphs from long batches can be deep.
  std::vector<Node*> order;
  std::vector<std::pair<Node*, size_t>> stack;
  std::unordered_set<const Node*> visited_set;
  stack.emplace_back(node_.get(), 0);
  visited_set.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* parent = n->parents[idx].get();
      ++idx;
      if (parent->requires_grad && !visited_set.count(parent)) {
        visited_set.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad();
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->requires_grad && (*it)->backward_fn) (*it)->backward_fn();
  }
}

// ---------------------------------------------------------------------------
// Forward/backward ops. Shapes are checked explicitly; there is no implicit
// broadcasting except multiplication by a plain scalar.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// [n, d] plus a length-d row vector added to every row.
template <typename T>
Tensor<T> add_rows(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// x * s[index] where s is a (learnable) parameter vector.
template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s, int index);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Row-wise softmax over the last axis of a 2-D tensor. Blocked entries
/// (mask == false) get probability exactly 0; a fully blocked row becomes
/// all zeros. A null mask means all allowed and follows the identical
/// arithmetic path.
template <typename T>
Tensor<T> masked_softmax_rows(const Tensor<T>& x, const AttnMask* mask);

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  return masked_softmax_rows(x, nullptr);
}

/// Per-row normalization over the last axis with affine gain/bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-5));

/// Inverted dropout driven by an explicit generator; the caller disables
/// it at evaluation by not calling it.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng);

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int c0, int c1);

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, int r0, int r1);

template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

/// Row lookup: out[i] = table[ids[i]] (dense embedding).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& ids);

/// Non-overlapping 1-D convolution over the rows of input [N, d_in] with
/// kernel [n, d_in, d_out] and stride == n. right_pad pads the input with
/// zero rows to a multiple of n; output length is ceil(N / n).
template <typename T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, int stride, bool right_pad);

template <typename T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& kernel, int stride,
                 bool right_pad);

/// out[i] = x[i / n] for i in [0, out_len); out_len <= n * rows(x).
template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, int n, int out_len);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// Max over coordinates of |analytic - numeric| / max(1, |analytic|,
/// |numeric|) using central differences of step h. f must be a pure
/// scalar-valued function of x's data; x must require a gradient and
/// appear in the graph f builds.
template <typename T>
double grad_check(const std::function<Tensor<T>(Tensor<T>&)>& f, Tensor<T>& x,
                  T h = T(1e-4)) {
  Tensor<T> y = f(x);
  if (y.size() != 1)
    throw Error("grad_check: f returned non-scalar output of shape " +
                shape_str(y.shape()));
  x.zero_grad();
  y.backward();
  std::vector<T> analytic(x.grad().begin(), x.grad().end());
  double worst = 0.0;
  auto data = x.raw();
  for (size_t i = 0; i < data.size(); ++i) {
    const T saved = data[i];
    data[i] = saved + h;
    double up;
    {
      NoGradGuard ng;
      up = static_cast<double>(f(x).item());
    }
    data[i] = saved - h;
    double down;
    {
      NoGradGuard ng;
      down = static_cast<double>(f(x).item());
    }
    data[i] = saved;
    const double numeric = (up - down) / (2.0 * static_cast<double>(h));
    const double a = static_cast<double>(analytic[i]);
    const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace bytenmt
