#include "bytenmt/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <limits>
#include <numeric>

namespace bytenmt {

namespace detail {
bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

AttnMask AttnMask::all_allowed(int rows, int cols) {
  AttnMask m;
  m.rows = rows;
  m.cols = cols;
  m.allowed.assign(static_cast<size_t>(rows) * cols, 1);
  return m;
}

AttnMask AttnMask::causal(int n) {
  AttnMask m;
  m.rows = n;
  m.cols = n;
  m.allowed.assign(static_cast<size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) m.set(i, j, true);
  return m;
}

namespace {

template <typename T>
using MatMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using StridedMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
               Eigen::Unaligned, Eigen::OuterStride<Eigen::Dynamic>>;
template <typename T>
using ConstStridedMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
    Eigen::Unaligned, Eigen::OuterStride<Eigen::Dynamic>>;

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(message);
}

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.ndim() == 2 && b.ndim() == 2,
          "matmul: operands must be 2-D, got " + shape_str(a.shape()) +
              " and " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
  std::vector<T> out(static_cast<size_t>(m) * n);
  {
    ConstMatMap<T> A(a.values().data(), m, k);
    ConstMatMap<T> B(b.values().data(), k, n);
    MatMap<T> O(out.data(), m, n);
    O.noalias() = A * B;
  }
  auto an = a.node();
  auto bn = b.node();
  return Tensor<T>::make(
      {m, n}, std::move(out), {a, b},
      [an, bn, m, k, n](TensorNode<T>& o) {
        ConstMatMap<T> G(o.grad.data(), m, n);
        if (an->requires_grad) {
          an->ensure_grad();
          MatMap<T> dA(an->grad.data(), m, k);
          ConstMatMap<T> B(bn->data.data(), k, n);
          dA.noalias() += G * B.transpose();
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          MatMap<T> dB(bn->grad.data(), k, n);
          ConstMatMap<T> A(an->data.data(), m, k);
          dB.noalias() += A.transpose() * G;
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("add", a, b);
  std::vector<T> out(a.values().begin(), a.values().end());
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
  auto an = a.node();
  auto bn = b.node();
  return Tensor<T>::make(a.shape(), std::move(out), {a, b},
                         [an, bn](TensorNode<T>& o) {
                           if (an->requires_grad) {
                             an->ensure_grad();
                             for (size_t i = 0; i < o.grad.size(); ++i)
                               an->grad[i] += o.grad[i];
                           }
                           if (bn->requires_grad) {
                             bn->ensure_grad();
                             for (size_t i = 0; i < o.grad.size(); ++i)
                               bn->grad[i] += o.grad[i];
                           }
                         });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("mul", a, b);
  std::vector<T> out(a.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] * b.values()[i];
  auto an = a.node();
  auto bn = b.node();
  return Tensor<T>::make(a.shape(), std::move(out), {a, b},
                         [an, bn](TensorNode<T>& o) {
                           if (an->requires_grad) {
                             an->ensure_grad();
                             for (size_t i = 0; i < o.grad.size(); ++i)
                               an->grad[i] += o.grad[i] * bn->data[i];
                           }
                           if (bn->requires_grad) {
                             bn->ensure_grad();
                             for (size_t i = 0; i < o.grad.size(); ++i)
                               bn->grad[i] += o.grad[i] * an->data[i];
                           }
                         });
}

template <typename T>
Tensor<T> add_rows(const Tensor<T>& x, const Tensor<T>& bias) {
  require(x.ndim() == 2 && bias.ndim() == 1 && bias.dim(0) == x.dim(1),
          "add_rows: shape mismatch " + shape_str(x.shape()) + " vs " +
              shape_str(bias.shape()));
  const int n = x.dim(0), d = x.dim(1);
  std::vector<T> out(x.values().begin(), x.values().end());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out[static_cast<size_t>(i) * d + j] += bias.values()[j];
  auto xn = x.node();
  auto bn = bias.node();
  return Tensor<T>::make(
      x.shape(), std::move(out), {x, bias}, [xn, bn, n, d](TensorNode<T>& o) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
              bn->grad[j] += o.grad[static_cast<size_t>(i) * d + j];
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * factor;
  auto xn = x.node();
  return Tensor<T>::make(x.shape(), std::move(out), {x},
                         [xn, factor](TensorNode<T>& o) {
                           if (!xn->requires_grad) return;
                           xn->ensure_grad();
                           for (size_t i = 0; i < o.grad.size(); ++i)
                             xn->grad[i] += o.grad[i] * factor;
                         });
}

template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s, int index) {
  require(s.ndim() == 1 && index >= 0 && index < s.dim(0),
          "scale_by: index " + std::to_string(index) +
              " outside weight vector " + shape_str(s.shape()));
  const T factor = s.values()[static_cast<size_t>(index)];
  std::vector<T> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * factor;
  auto xn = x.node();
  auto sn = s.node();
  return Tensor<T>::make(
      x.shape(), std::move(out), {x, s},
      [xn, sn, factor, index](TensorNode<T>& o) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i)
            xn->grad[i] += o.grad[i] * factor;
        }
        if (sn->requires_grad) {
          sn->ensure_grad();
          T acc = T(0);
          for (size_t i = 0; i < o.grad.size(); ++i)
            acc += o.grad[i] * xn->data[i];
          sn->grad[static_cast<size_t>(index)] += acc;
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = x.values()[i] > T(0) ? x.values()[i] : T(0);
  auto xn = x.node();
  return Tensor<T>::make(x.shape(), std::move(out), {x},
                         [xn](TensorNode<T>& o) {
                           if (!xn->requires_grad) return;
                           xn->ensure_grad();
                           for (size_t i = 0; i < o.grad.size(); ++i)
                             if (xn->data[i] > T(0))
                               xn->grad[i] += o.grad[i];
                         });
}

template <typename T>
Tensor<T> masked_softmax_rows(const Tensor<T>& x, const AttnMask* mask) {
  require(x.ndim() == 2, "softmax: operand must be 2-D, got " +
                             shape_str(x.shape()));
  const int n = x.dim(0), d = x.dim(1);
  if (mask)
    require(mask->rows == n && mask->cols == d,
            "softmax: attention mask shape [" + std::to_string(mask->rows) +
                "," + std::to_string(mask->cols) + "] does not match scores " +
                shape_str(x.shape()));
  std::vector<T> out(static_cast<size_t>(n) * d, T(0));
  for (int i = 0; i < n; ++i) {
    const T* row = x.values().data() + static_cast<size_t>(i) * d;
    T* orow = out.data() + static_cast<size_t>(i) * d;
    T best = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (int j = 0; j < d; ++j) {
      if (mask && !mask->at(i, j)) continue;
      any = true;
      best = std::max(best, row[j]);
    }
    if (!any) continue;  // fully blocked row stays all-zero
    T total = T(0);
    for (int j = 0; j < d; ++j) {
      if (mask && !mask->at(i, j)) continue;
      orow[j] = std::exp(row[j] - best);
      total += orow[j];
    }
    for (int j = 0; j < d; ++j) orow[j] /= total;
  }
  auto xn = x.node();
  std::vector<T> probs = out;  // backward needs the forward result
  return Tensor<T>::make(
      x.shape(), std::move(out), {x},
      [xn, probs = std::move(probs), n, d](TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < n; ++i) {
          const T* p = probs.data() + static_cast<size_t>(i) * d;
          const T* g = o.grad.data() + static_cast<size_t>(i) * d;
          T* dx = xn->grad.data() + static_cast<size_t>(i) * d;
          T dot = T(0);
          for (int j = 0; j < d; ++j) dot += g[j] * p[j];
          for (int j = 0; j < d; ++j) dx[j] += p[j] * (g[j] - dot);
        }
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  require(x.ndim() == 2, "layer_norm: operand must be 2-D, got " +
                             shape_str(x.shape()));
  const int n = x.dim(0), d = x.dim(1);
  require(gain.ndim() == 1 && gain.dim(0) == d && bias.ndim() == 1 &&
              bias.dim(0) == d,
          "layer_norm: affine shape mismatch " + shape_str(gain.shape()) +
              " / " + shape_str(bias.shape()) + " vs " + shape_str(x.shape()));
  std::vector<T> out(static_cast<size_t>(n) * d);
  std::vector<T> normed(static_cast<size_t>(n) * d);
  std::vector<T> inv_std(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const T* row = x.values().data() + static_cast<size_t>(i) * d;
    T mean = T(0);
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= T(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) {
      T delta = row[j] - mean;
      var += delta * delta;
    }
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int j = 0; j < d; ++j) {
      const size_t idx = static_cast<size_t>(i) * d + j;
      normed[idx] = (row[j] - mean) * is;
      out[idx] = normed[idx] * gain.values()[j] + bias.values()[j];
    }
  }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return Tensor<T>::make(
      x.shape(), std::move(out), {x, gain, bias},
      [xn, gn, bn, normed = std::move(normed), inv_std = std::move(inv_std), n,
       d](TensorNode<T>& o) {
        for (int i = 0; i < n; ++i) {
          const size_t off = static_cast<size_t>(i) * d;
          const T* g = o.grad.data() + off;
          const T* xh = normed.data() + off;
          if (gn->requires_grad) {
            gn->ensure_grad();
            for (int j = 0; j < d; ++j) gn->grad[j] += g[j] * xh[j];
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (int j = 0; j < d; ++j) bn->grad[j] += g[j];
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            T sum_dxh = T(0), sum_dxh_xh = T(0);
            for (int j = 0; j < d; ++j) {
              const T dxh = g[j] * gn->data[j];
              sum_dxh += dxh;
              sum_dxh_xh += dxh * xh[j];
            }
            const T is = inv_std[static_cast<size_t>(i)];
            for (int j = 0; j < d; ++j) {
              const T dxh = g[j] * gn->data[j];
              xn->grad[off + j] +=
                  is * (dxh - (sum_dxh + xh[j] * sum_dxh_xh) / T(d));
            }
          }
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  require(rate < 1.0, "dropout: rate " + std::to_string(rate) +
                          " must be below 1");
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<T> mask(x.size());
  std::vector<T> out(x.size());
  for (size_t i = 0; i < mask.size(); ++i) {
    mask[i] = keep(rng) ? keep_scale : T(0);
    out[i] = x.values()[i] * mask[i];
  }
  auto xn = x.node();
  return Tensor<T>::make(x.shape(), std::move(out), {x},
                         [xn, mask = std::move(mask)](TensorNode<T>& o) {
                           if (!xn->requires_grad) return;
                           xn->ensure_grad();
                           for (size_t i = 0; i < o.grad.size(); ++i)
                             xn->grad[i] += o.grad[i] * mask[i];
                         });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_cols: no operands");
  const int n = parts.front().dim(0);
  int total = 0;
  for (const auto& p : parts) {
    require(p.ndim() == 2 && p.dim(0) == n,
            "concat_cols: shape mismatch " + shape_str(parts.front().shape()) +
                " vs " + shape_str(p.shape()));
    total += p.dim(1);
  }
  std::vector<T> out(static_cast<size_t>(n) * total);
  int col = 0;
  for (const auto& p : parts) {
    const int d = p.dim(1);
    for (int i = 0; i < n; ++i)
      std::copy_n(p.values().data() + static_cast<size_t>(i) * d, d,
                  out.data() + static_cast<size_t>(i) * total + col);
    col += d;
  }
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  std::vector<int> widths;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.dim(1));
  }
  return Tensor<T>::make(
      {n, total}, std::move(out), parts,
      [nodes = std::move(nodes), widths = std::move(widths), n,
       total](TensorNode<T>& o) {
        int col = 0;
        for (size_t k = 0; k < nodes.size(); ++k) {
          const int d = widths[k];
          if (nodes[k]->requires_grad) {
            nodes[k]->ensure_grad();
            for (int i = 0; i < n; ++i)
              for (int j = 0; j < d; ++j)
                nodes[k]->grad[static_cast<size_t>(i) * d + j] +=
                    o.grad[static_cast<size_t>(i) * total + col + j];
          }
          col += d;
        }
      });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int c0, int c1) {
  require(x.ndim() == 2 && 0 <= c0 && c0 < c1 && c1 <= x.dim(1),
          "slice_cols: range [" + std::to_string(c0) + "," +
              std::to_string(c1) + ") outside " + shape_str(x.shape()));
  const int n = x.dim(0), d = x.dim(1), w = c1 - c0;
  std::vector<T> out(static_cast<size_t>(n) * w);
  for (int i = 0; i < n; ++i)
    std::copy_n(x.values().data() + static_cast<size_t>(i) * d + c0, w,
                out.data() + static_cast<size_t>(i) * w);
  auto xn = x.node();
  return Tensor<T>::make({n, w}, std::move(out), {x},
                         [xn, n, d, w, c0](TensorNode<T>& o) {
                           if (!xn->requires_grad) return;
                           xn->ensure_grad();
                           for (int i = 0; i < n; ++i)
                             for (int j = 0; j < w; ++j)
                               xn->grad[static_cast<size_t>(i) * d + c0 + j] +=
                                   o.grad[static_cast<size_t>(i) * w + j];
                         });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, int r0, int r1) {
  require(x.ndim() == 2 && 0 <= r0 && r0 < r1 && r1 <= x.dim(0),
          "slice_rows: range [" + std::to_string(r0) + "," +
              std::to_string(r1) + ") outside " + shape_str(x.shape()));
  const int d = x.dim(1), h = r1 - r0;
  std::vector<T> out(x.values().begin() + static_cast<size_t>(r0) * d,
                     x.values().begin() + static_cast<size_t>(r1) * d);
  auto xn = x.node();
  return Tensor<T>::make({h, d}, std::move(out), {x},
                         [xn, r0, d, h](TensorNode<T>& o) {
                           if (!xn->requires_grad) return;
                           xn->ensure_grad();
                           for (size_t i = 0; i < static_cast<size_t>(h) * d;
                                ++i)
                             xn->grad[static_cast<size_t>(r0) * d + i] +=
                                 o.grad[i];
                         });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require(x.ndim() == 2, "transpose: operand must be 2-D, got " +
                             shape_str(x.shape()));
  const int n = x.dim(0), d = x.dim(1);
  std::vector<T> out(static_cast<size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out[static_cast<size_t>(j) * n + i] =
          x.values()[static_cast<size_t>(i) * d + j];
  auto xn = x.node();
  return Tensor<T>::make({d, n}, std::move(out), {x},
                         [xn, n, d](TensorNode<T>& o) {
                           if (!xn->requires_grad) return;
                           xn->ensure_grad();
                           for (int i = 0; i < n; ++i)
                             for (int j = 0; j < d; ++j)
                               xn->grad[static_cast<size_t>(i) * d + j] +=
                                   o.grad[static_cast<size_t>(j) * n + i];
                         });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& ids) {
  require(table.ndim() == 2, "gather_rows: table must be 2-D, got " +
                                 shape_str(table.shape()));
  const int v = table.dim(0), d = table.dim(1);
  const int n = static_cast<int>(ids.size());
  std::vector<T> out(static_cast<size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    require(ids[i] >= 0 && ids[i] < v,
            "gather_rows: ID " + std::to_string(ids[i]) + " outside table " +
                shape_str(table.shape()));
    std::copy_n(table.values().data() + static_cast<size_t>(ids[i]) * d, d,
                out.data() + static_cast<size_t>(i) * d);
  }
  auto tn = table.node();
  return Tensor<T>::make({n, d}, std::move(out), {table},
                         [tn, ids, n, d](TensorNode<T>& o) {
                           if (!tn->requires_grad) return;
                           tn->ensure_grad();
                           for (int i = 0; i < n; ++i)
                             for (int j = 0; j < d; ++j)
                               tn->grad[static_cast<size_t>(ids[i]) * d + j] +=
                                   o.grad[static_cast<size_t>(i) * d + j];
                         });
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, int stride, bool right_pad) {
  require(input.ndim() == 2, "conv1d: input must be 2-D, got " +
                                 shape_str(input.shape()));
  require(kernel.ndim() == 3, "conv1d: kernel must be [n,d_in,d_out], got " +
                                  shape_str(kernel.shape()));
  const int rows = input.dim(0), d_in = input.dim(1);
  const int width = kernel.dim(0), d_out = kernel.dim(2);
  require(kernel.dim(1) == d_in,
          "conv1d: kernel input width " + std::to_string(kernel.dim(1)) +
              " does not match input " + shape_str(input.shape()));
  require(width >= 1, "conv1d: kernel width " + std::to_string(width) +
                          " below 1");
  require(stride == width, "conv1d: stride " + std::to_string(stride) +
                               " must equal kernel width " +
                               std::to_string(width));
  require(rows >= 1, "conv1d: empty input");
  if (bias.defined())
    require(bias.ndim() == 1 && bias.dim(0) == d_out,
            "conv1d: bias shape " + shape_str(bias.shape()) +
                " does not match output width " + std::to_string(d_out));
  int padded_rows;
  if (right_pad) {
    padded_rows = ((rows + width - 1) / width) * width;
  } else {
    require(rows % width == 0,
            "conv1d: input length " + std::to_string(rows) +
                " is not a multiple of the kernel width " +
                std::to_string(width) + " and right_pad is off");
    padded_rows = rows;
  }
  require(width <= padded_rows, "conv1d: kernel width " +
                                    std::to_string(width) +
                                    " exceeds padded input length " +
                                    std::to_string(padded_rows));
  const int out_rows = padded_rows / width;

  auto padded = std::make_shared<std::vector<T>>(
      static_cast<size_t>(padded_rows) * d_in, T(0));
  std::copy_n(input.values().data(), static_cast<size_t>(rows) * d_in,
              padded->data());

  std::vector<T> out(static_cast<size_t>(out_rows) * d_out, T(0));
  {
    MatMap<T> O(out.data(), out_rows, d_out);
    for (int j = 0; j < width; ++j) {
      ConstStridedMap<T> V(padded->data() + static_cast<size_t>(j) * d_in,
                           out_rows, d_in,
                           Eigen::OuterStride<>(width * d_in));
      ConstMatMap<T> K(
          kernel.values().data() + static_cast<size_t>(j) * d_in * d_out, d_in,
          d_out);
      O.noalias() += V * K;
    }
    if (bias.defined())
      for (int i = 0; i < out_rows; ++i)
        for (int j = 0; j < d_out; ++j)
          out[static_cast<size_t>(i) * d_out + j] += bias.values()[j];
  }

  auto in_node = input.node();
  auto k_node = kernel.node();
  auto b_node = bias.defined() ? bias.node() : nullptr;
  std::vector<Tensor<T>> parents{input, kernel};
  if (bias.defined()) parents.push_back(bias);
  return Tensor<T>::make(
      {out_rows, d_out}, std::move(out), std::move(parents),
      [in_node, k_node, b_node, padded, rows, d_in, d_out, width, padded_rows,
       out_rows](TensorNode<T>& o) {
        ConstMatMap<T> G(o.grad.data(), out_rows, d_out);
        if (in_node->requires_grad) {
          in_node->ensure_grad();
          std::vector<T> dpad(static_cast<size_t>(padded_rows) * d_in, T(0));
          for (int j = 0; j < width; ++j) {
            StridedMap<T> dV(dpad.data() + static_cast<size_t>(j) * d_in,
                             out_rows, d_in,
                             Eigen::OuterStride<>(width * d_in));
            ConstMatMap<T> K(
                k_node->data.data() + static_cast<size_t>(j) * d_in * d_out,
                d_in, d_out);
            dV.noalias() += G * K.transpose();
          }
          for (size_t i = 0; i < static_cast<size_t>(rows) * d_in; ++i)
            in_node->grad[i] += dpad[i];
        }
        if (k_node->requires_grad) {
          k_node->ensure_grad();
          for (int j = 0; j < width; ++j) {
            ConstStridedMap<T> V(padded->data() + static_cast<size_t>(j) * d_in,
                                 out_rows, d_in,
                                 Eigen::OuterStride<>(width * d_in));
            MatMap<T> dK(
                k_node->grad.data() + static_cast<size_t>(j) * d_in * d_out,
                d_in, d_out);
            dK.noalias() += V.transpose() * G;
          }
        }
        if (b_node && b_node->requires_grad) {
          b_node->ensure_grad();
          for (int i = 0; i < out_rows; ++i)
            for (int j = 0; j < d_out; ++j)
              b_node->grad[j] += o.grad[static_cast<size_t>(i) * d_out + j];
        }
      });
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& kernel, int stride,
                 bool right_pad) {
  return conv1d(input, kernel, Tensor<T>(), stride, right_pad);
}

template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, int n, int out_len) {
  require(x.ndim() == 2, "repeat_rows: operand must be 2-D, got " +
                             shape_str(x.shape()));
  require(n >= 1, "repeat_rows: factor " + std::to_string(n) + " below 1");
  const int rows = x.dim(0), d = x.dim(1);
  require(out_len >= 0 && out_len <= n * rows,
          "repeat_rows: output length " + std::to_string(out_len) +
              " outside [0, " + std::to_string(n * rows) + "]");
  std::vector<T> out(static_cast<size_t>(out_len) * d);
  for (int i = 0; i < out_len; ++i)
    std::copy_n(x.values().data() + static_cast<size_t>(i / n) * d, d,
                out.data() + static_cast<size_t>(i) * d);
  auto xn = x.node();
  return Tensor<T>::make({out_len, d}, std::move(out), {x},
                         [xn, n, d, out_len](TensorNode<T>& o) {
                           if (!xn->requires_grad) return;
                           xn->ensure_grad();
                           for (int i = 0; i < out_len; ++i)
                             for (int j = 0; j < d; ++j)
                               xn->grad[static_cast<size_t>(i / n) * d + j] +=
                                   o.grad[static_cast<size_t>(i) * d + j];
                         });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = std::accumulate(x.values().begin(), x.values().end(), T(0));
  auto xn = x.node();
  return Tensor<T>::make({1}, {total}, {x}, [xn](TensorNode<T>& o) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += o.grad[0];
  });
}

template class Tensor<float>;
template class Tensor<double>;

#define BYTENMT_INSTANTIATE_OPS(T)                                            \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> add_rows<T>(const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                          \
  template Tensor<T> scale_by<T>(const Tensor<T>&, const Tensor<T>&, int);   \
  template Tensor<T> relu<T>(const Tensor<T>&);                              \
  template Tensor<T> masked_softmax_rows<T>(const Tensor<T>&,                \
                                            const AttnMask*);                \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&,       \
                                   const Tensor<T>&, T);                     \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, std::mt19937_64&); \
  template Tensor<T> concat_cols<T>(const std::vector<Tensor<T>>&);          \
  template Tensor<T> slice_cols<T>(const Tensor<T>&, int, int);              \
  template Tensor<T> slice_rows<T>(const Tensor<T>&, int, int);              \
  template Tensor<T> transpose<T>(const Tensor<T>&);                         \
  template Tensor<T> gather_rows<T>(const Tensor<T>&,                        \
                                    const std::vector<int>&);                \
  template Tensor<T> conv1d<T>(const Tensor<T>&, const Tensor<T>&,           \
                               const Tensor<T>&, int, bool);                 \
  template Tensor<T> conv1d<T>(const Tensor<T>&, const Tensor<T>&, int,      \
                               bool);                                        \
  template Tensor<T> repeat_rows<T>(const Tensor<T>&, int, int);             \
  template Tensor<T> sum<T>(const Tensor<T>&);

BYTENMT_INSTANTIATE_OPS(float)
BYTENMT_INSTANTIATE_OPS(double)

#undef BYTENMT_INSTANTIATE_OPS

}  // namespace bytenmt
