#pragma once

// Dense row-major tensors with reverse-mode gradient propagation.
//
// A Tensor is a handle to a graph node. Ops build new nodes that remember
// their inputs and a closure that pushes the output gradient back into them;
// Tensor::backward() runs those closures in reverse topological order.
// Gradients always accumulate, so callers zero parameter gradients between
// steps. Values are 64-bit throughout.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "c2c/error.hpp"

namespace c2c {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_size(shape) != values.size()) {
      throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  /// Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_values() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }

  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  /// Copy of the values with no graph attached.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  /// Backpropagates from a single-element tensor, accumulating into every
  /// reachable node that requires gradients.
  void backward() const {
    if (size() != 1) throw ShapeError("backward() requires a scalar, got " + shape_str(shape()));
    if (!node_->requires_grad) return;
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        detail::Node* p = n->parents[next++].get();
        if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward && !(*it)->grad.empty()) (*it)->backward(**it);
    }
  }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Wraps freshly computed values into a node linked to `inputs`. The
/// backward closure is only attached when recording is on and some input
/// requires gradients.
inline Tensor make_result(Shape shape, std::vector<double> values,
                          std::initializer_list<const Tensor*> inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  if (!grad_enabled_flag()) return out;
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  if (!any) return out;
  Node& n = *out.node();
  n.requires_grad = true;
  for (const Tensor* t : inputs) n.parents.push_back(t->node());
  n.backward = std::move(backward);
  return out;
}

inline void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(v), {&a, &b}, [](detail::Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(v), {&a, &b}, [](detail::Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(v), {&a, &b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

/// scale * a + shift
inline Tensor affine(const Tensor& a, double scale, double shift = 0.0) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = scale * a[i] + shift;
  return detail::make_result(a.shape(), std::move(v), {&a}, [scale](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * self.grad[i];
  });
}

inline Tensor scale(const Tensor& a, double s) { return affine(a, s, 0.0); }

inline Tensor relu(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] > 0.0 ? a[i] : 0.0;
  return detail::make_result(a.shape(), std::move(v), {&a}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (p.value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

/// Adds a bias vector along the last dimension.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  detail::require_rank(bias, 1, "add_bias");
  const std::size_t n = bias.size();
  if (a.rank() == 0 || a.shape().back() != n) {
    throw ShapeError("add_bias: " + shape_str(a.shape()) + " + " + shape_str(bias.shape()));
  }
  std::vector<double> v(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += bias[i % n];
  return detail::make_result(a.shape(), std::move(v), {&a, &bias}, [n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> v(a.values().begin(), a.values().end());
  return detail::make_result(std::move(shape), std::move(v), {&a}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// [m,p] ++ [m,q] -> [m,p+q]
inline Tensor concat(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "concat");
  detail::require_rank(b, 2, "concat");
  const std::size_t m = a.dim(0), p = a.dim(1), q = b.dim(1);
  if (b.dim(0) != m) throw ShapeError("concat: row mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> v(m * (p + q));
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.values().begin() + i * p, p, v.begin() + i * (p + q));
    std::copy_n(b.values().begin() + i * q, q, v.begin() + i * (p + q) + p);
  }
  return detail::make_result({m, p + q}, std::move(v), {&a, &b}, [m, p, q](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < m; ++i) {
      if (pa.requires_grad) {
        auto& g = pa.ensure_grad();
        for (std::size_t j = 0; j < p; ++j) g[i * p + j] += self.grad[i * (p + q) + j];
      }
      if (pb.requires_grad) {
        auto& g = pb.ensure_grad();
        for (std::size_t j = 0; j < q; ++j) g[i * q + j] += self.grad[i * (p + q) + p + j];
      }
    }
  });
}

/// Row r of the output is row `index[r]` of `a` ([m,n] -> [index.size(), n]).
inline Tensor gather_rows(const Tensor& a, std::vector<std::size_t> index) {
  detail::require_rank(a, 2, "gather_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> v(index.size() * n);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= m) throw ShapeError("gather_rows: index out of range");
    std::copy_n(a.values().begin() + index[r] * n, n, v.begin() + r * n);
  }
  const std::size_t rows = index.size();
  return detail::make_result({rows, n}, std::move(v), {&a},
                             [n, index = std::move(index)](detail::Node& self) {
                               auto& g = self.parents[0]->ensure_grad();
                               for (std::size_t r = 0; r < index.size(); ++r) {
                                 for (std::size_t j = 0; j < n; ++j) g[index[r] * n + j] += self.grad[r * n + j];
                               }
                             });
}

/// Column c of the output is column `index[c]` of `a` ([m,n] -> [m, index.size()]).
inline Tensor gather_cols(const Tensor& a, std::vector<std::size_t> index) {
  detail::require_rank(a, 2, "gather_cols");
  const std::size_t m = a.dim(0), n = a.dim(1), k = index.size();
  for (std::size_t c : index) {
    if (c >= n) throw ShapeError("gather_cols: index out of range");
  }
  std::vector<double> v(m * k);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < k; ++c) v[i * k + c] = a[i * n + index[c]];
  }
  return detail::make_result({m, k}, std::move(v), {&a},
                             [m, n, k, index = std::move(index)](detail::Node& self) {
                               auto& g = self.parents[0]->ensure_grad();
                               for (std::size_t i = 0; i < m; ++i) {
                                 for (std::size_t c = 0; c < k; ++c) g[i * n + index[c]] += self.grad[i * k + c];
                               }
                             });
}

/// Columns [begin, end) of a rank-2 tensor.
inline Tensor slice_channels(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require_rank(a, 2, "slice_channels");
  if (begin > end || end > a.dim(1)) throw ShapeError("slice_channels: range out of bounds");
  std::vector<std::size_t> index(end - begin);
  std::iota(index.begin(), index.end(), begin);
  return gather_cols(a, std::move(index));
}

// ---------------------------------------------------------------------------
// Reductions

/// Mean over one axis. Each output element sums its inputs in sorted order,
/// so the result is exactly invariant to permutations along `axis`.
inline Tensor mean_over_axis(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw ShapeError("mean_over_axis: axis out of range for " + shape_str(a.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t n = a.dim(axis);
  if (n == 0) throw ShapeError("mean_over_axis: empty axis");
  Shape out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis) out_shape.push_back(a.dim(i));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> v(outer * inner);
  std::vector<double> buf(n);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      for (std::size_t k = 0; k < n; ++k) buf[k] = a[(o * n + k) * inner + j];
      std::sort(buf.begin(), buf.end());
      double s = 0.0;
      for (double x : buf) s += x;
      v[o * inner + j] = s / static_cast<double>(n);
    }
  }
  return detail::make_result(std::move(out_shape), std::move(v), {&a},
                             [outer, inner, n](detail::Node& self) {
                               auto& g = self.parents[0]->ensure_grad();
                               const double inv = 1.0 / static_cast<double>(n);
                               for (std::size_t o = 0; o < outer; ++o) {
                                 for (std::size_t k = 0; k < n; ++k) {
                                   for (std::size_t j = 0; j < inner; ++j) {
                                     g[(o * n + k) * inner + j] += inv * self.grad[o * inner + j];
                                   }
                                 }
                               }
                             });
}

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return detail::make_result({1}, {s}, {&a}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (double& x : g) x += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [m,k] x [k,n] -> [m,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> v(m * n, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = v.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return detail::make_result({m, n}, std::move(v), {&a, &b}, [m, k, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const double* G = self.grad.data();
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      const double* B = pb.value.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
          ga[i * k + p] += s;
        }
      }
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      const double* A = pa.value.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          double* grow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) grow[j] += aip * G[i * n + j];
        }
      }
    }
  });
}

/// Temporal convolution over [batch, time, in] with weights [kernel, in, out]
/// and bias [out]. Odd kernel, stride 1, output length equals input length.
/// Out-of-range taps replicate the edge frame, so a temporally constant input
/// gives a temporally constant output.
inline Tensor conv1d_temporal(const Tensor& x, const Tensor& w, const Tensor& bias) {
  detail::require_rank(x, 3, "conv1d_temporal");
  detail::require_rank(w, 3, "conv1d_temporal");
  detail::require_rank(bias, 1, "conv1d_temporal");
  const std::size_t B = x.dim(0), T = x.dim(1), Ci = x.dim(2);
  const std::size_t K = w.dim(0), Co = w.dim(2);
  if (w.dim(1) != Ci || bias.size() != Co || K % 2 == 0) {
    throw ShapeError("conv1d_temporal: x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()) +
                     ", bias " + shape_str(bias.shape()));
  }
  const long pad = static_cast<long>(K / 2);
  auto src = [T, pad](std::size_t t, std::size_t k) {
    const long s = static_cast<long>(t) + static_cast<long>(k) - pad;
    return static_cast<std::size_t>(std::clamp<long>(s, 0, static_cast<long>(T) - 1));
  };
  std::vector<double> v(B * T * Co);
  const double* X = x.values().data();
  const double* W = w.values().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      double* out = v.data() + (b * T + t) * Co;
      for (std::size_t c = 0; c < Co; ++c) out[c] = bias[c];
      for (std::size_t k = 0; k < K; ++k) {
        const double* in = X + (b * T + src(t, k)) * Ci;
        for (std::size_t ci = 0; ci < Ci; ++ci) {
          const double xv = in[ci];
          const double* wrow = W + (k * Ci + ci) * Co;
          for (std::size_t c = 0; c < Co; ++c) out[c] += xv * wrow[c];
        }
      }
    }
  }
  return detail::make_result({B, T, Co}, std::move(v), {&x, &w, &bias},
                             [B, T, Ci, K, Co, src](detail::Node& self) {
                               auto& px = *self.parents[0];
                               auto& pw = *self.parents[1];
                               auto& pbias = *self.parents[2];
                               const double* G = self.grad.data();
                               if (pbias.requires_grad) {
                                 auto& gb = pbias.ensure_grad();
                                 for (std::size_t r = 0; r < B * T; ++r) {
                                   for (std::size_t c = 0; c < Co; ++c) gb[c] += G[r * Co + c];
                                 }
                               }
                               for (std::size_t b = 0; b < B; ++b) {
                                 for (std::size_t t = 0; t < T; ++t) {
                                   const double* g = G + (b * T + t) * Co;
                                   for (std::size_t k = 0; k < K; ++k) {
                                     const std::size_t s = (b * T + src(t, k)) * Ci;
                                     for (std::size_t ci = 0; ci < Ci; ++ci) {
                                       const std::size_t wr = (k * Ci + ci) * Co;
                                       if (px.requires_grad) {
                                         double acc = 0.0;
                                         for (std::size_t c = 0; c < Co; ++c) acc += g[c] * pw.value[wr + c];
                                         px.ensure_grad()[s + ci] += acc;
                                       }
                                       if (pw.requires_grad) {
                                         auto& gw = pw.ensure_grad();
                                         const double xv = px.value[s + ci];
                                         for (std::size_t c = 0; c < Co; ++c) gw[wr + c] += xv * g[c];
                                       }
                                     }
                                   }
                                 }
                               }
                             });
}

/// Pairwise cosine similarity between the rows of a [m,c] and b [n,c] -> [m,n].
/// A zero-norm row raises NumericalError.
inline Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "cosine_similarity");
  detail::require_rank(b, 2, "cosine_similarity");
  const std::size_t m = a.dim(0), n = b.dim(0), c = a.dim(1);
  if (b.dim(1) != c) {
    throw ShapeError("cosine_similarity: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto norms = [c](std::span<const double> x, std::size_t rows, const char* which) {
    std::vector<double> out(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += x[i * c + j] * x[i * c + j];
      out[i] = std::sqrt(s);
      if (!(out[i] > 0.0) || !std::isfinite(out[i])) {
        throw NumericalError(std::string("cosine_similarity: zero-norm or non-finite row in ") + which);
      }
    }
    return out;
  };
  std::vector<double> na = norms(a.values(), m, "lhs");
  std::vector<double> nb = norms(b.values(), n, "rhs");
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double d = 0.0;
      for (std::size_t t = 0; t < c; ++t) d += a[i * c + t] * b[j * c + t];
      v[i * n + j] = d / (na[i] * nb[j]);
    }
  }
  return detail::make_result(
      {m, n}, std::move(v), {&a, &b},
      [m, n, c, na = std::move(na), nb = std::move(nb)](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& C = self.value;
        const auto& G = self.grad;
        // d cos / d a_i = b_j / (|a_i||b_j|) - cos_ij * a_i / |a_i|^2
        if (pa.requires_grad) {
          auto& ga = pa.ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            double self_coef = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double g = G[i * n + j];
              if (g == 0.0) continue;
              const double k = g / (na[i] * nb[j]);
              for (std::size_t t = 0; t < c; ++t) ga[i * c + t] += k * pb.value[j * c + t];
              self_coef += g * C[i * n + j];
            }
            const double s = self_coef / (na[i] * na[i]);
            for (std::size_t t = 0; t < c; ++t) ga[i * c + t] -= s * pa.value[i * c + t];
          }
        }
        if (pb.requires_grad) {
          auto& gb = pb.ensure_grad();
          for (std::size_t j = 0; j < n; ++j) {
            double self_coef = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
              const double g = G[i * n + j];
              if (g == 0.0) continue;
              const double k = g / (na[i] * nb[j]);
              for (std::size_t t = 0; t < c; ++t) gb[j * c + t] += k * pa.value[i * c + t];
              self_coef += g * C[i * n + j];
            }
            const double s = self_coef / (nb[j] * nb[j]);
            for (std::size_t t = 0; t < c; ++t) gb[j * c + t] -= s * pb.value[j * c + t];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Losses

struct CrossEntropyOptions {
  double temperature = 1.0;
  /// Optional [n] candidate mask shared by all rows; nonzero = candidate.
  std::span<const std::uint8_t> column_mask{};
  /// Optional [m*n] per-row candidate mask; combined with column_mask by OR.
  std::span<const std::uint8_t> row_mask{};
  /// Optional [m] per-row weights (default 1).
  std::span<const double> row_weights{};
};

/// Mean over rows of  w_r * -log softmax(logits_r / T)[target_r], where the
/// softmax runs over the row's candidate columns only.
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                                    const CrossEntropyOptions& opt = {}) {
  detail::require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t m = logits.dim(0), n = logits.dim(1);
  if (!(opt.temperature > 0.0)) throw InvalidConfig("softmax_cross_entropy: temperature must be > 0");
  if (targets.size() != m) throw ShapeError("softmax_cross_entropy: one target per row required");
  if (!opt.column_mask.empty() && opt.column_mask.size() != n) throw ShapeError("softmax_cross_entropy: column mask size");
  if (!opt.row_mask.empty() && opt.row_mask.size() != m * n) throw ShapeError("softmax_cross_entropy: row mask size");
  if (!opt.row_weights.empty() && opt.row_weights.size() != m) throw ShapeError("softmax_cross_entropy: weight size");
  const bool masked = !opt.column_mask.empty() || !opt.row_mask.empty();
  std::vector<std::uint8_t> cand(masked ? m * n : 0, 0);
  if (masked) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        cand[i * n + j] = (!opt.column_mask.empty() && opt.column_mask[j]) ||
                          (!opt.row_mask.empty() && opt.row_mask[i * n + j]);
      }
    }
  }
  const double inv_t = 1.0 / opt.temperature;
  std::vector<double> prob(m * n, 0.0);
  std::vector<double> weights(m, 1.0);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (tgt[i] >= n) throw InvalidInput("softmax_cross_entropy: target out of range");
    if (masked && !cand[i * n + tgt[i]]) throw InvalidInput("softmax_cross_entropy: target outside candidate set");
    if (!opt.row_weights.empty()) weights[i] = opt.row_weights[i];
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (!masked || cand[i * n + j]) mx = std::max(mx, logits[i * n + j] * inv_t);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!masked || cand[i * n + j]) {
        prob[i * n + j] = std::exp(logits[i * n + j] * inv_t - mx);
        z += prob[i * n + j];
      }
    }
    for (std::size_t j = 0; j < n; ++j) prob[i * n + j] /= z;
    const double lse = mx + std::log(z);
    loss += weights[i] * (lse - logits[i * n + tgt[i]] * inv_t);
  }
  loss /= static_cast<double>(m);
  return detail::make_result(
      {1}, {loss}, {&logits},
      [m, n, inv_t, prob = std::move(prob), weights = std::move(weights), tgt = std::move(tgt)](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        const double up = self.grad[0] / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
          const double k = up * weights[i] * inv_t;
          for (std::size_t j = 0; j < n; ++j) g[i * n + j] += k * prob[i * n + j];
          g[i * n + tgt[i]] -= k;
        }
      });
}

/// Row-normalized cross-entropy against fixed target rows:
///   -(1/R) sum_r sum_k target[r,k] * log( m[r,k] / (sum_k m[r,k] + eps) )
/// for model rows m (nonnegative). Terms with target 0 are skipped.
inline Tensor conditional_cross_entropy(const Tensor& model, std::span<const double> target, double eps = 1e-8) {
  detail::require_rank(model, 2, "conditional_cross_entropy");
  const std::size_t R = model.dim(0), K = model.dim(1);
  if (target.size() != R * K) throw ShapeError("conditional_cross_entropy: target size mismatch");
  std::vector<double> row_sum(R, 0.0);
  double loss = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t k = 0; k < K; ++k) row_sum[r] += model[r * K + k];
    const double denom = row_sum[r] + eps;
    for (std::size_t k = 0; k < K; ++k) {
      const double t = target[r * K + k];
      if (t == 0.0) continue;
      loss -= t * std::log(model[r * K + k] / denom);
    }
  }
  loss /= static_cast<double>(R);
  std::vector<double> tgt(target.begin(), target.end());
  return detail::make_result({1}, {loss}, {&model},
                             [R, K, eps, row_sum = std::move(row_sum), tgt = std::move(tgt)](detail::Node& self) {
                               auto& p = *self.parents[0];
                               auto& g = p.ensure_grad();
                               const double up = self.grad[0] / static_cast<double>(R);
                               for (std::size_t r = 0; r < R; ++r) {
                                 double tsum = 0.0;
                                 for (std::size_t k = 0; k < K; ++k) tsum += tgt[r * K + k];
                                 const double common = tsum / (row_sum[r] + eps);
                                 for (std::size_t k = 0; k < K; ++k) {
                                   const double t = tgt[r * K + k];
                                   double d = common;
                                   if (t != 0.0) d -= t / p.value[r * K + k];
                                   g[r * K + k] += up * d;
                                 }
                               }
                             });
}

}  // namespace c2c
