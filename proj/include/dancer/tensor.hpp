#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dancer/rng.hpp"

namespace dancer {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

/// Thrown on any tensor shape violation; the message names the offending axes.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Grad mode
// ---------------------------------------------------------------------------

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// ---------------------------------------------------------------------------
// Tensor with a reverse-mode tape over a fixed op vocabulary
// ---------------------------------------------------------------------------

template <typename T>
struct TensorT;

template <typename T>
struct NodeT {
  std::vector<TensorT<T>> parents;
  std::function<void(TensorT<T>&)> backward;
};

/// Row-major dense tensor. Copies are shallow (storage is shared); use
/// clone() for a deep copy. Gradient storage is allocated iff requires_grad.
template <typename T>
struct TensorT {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;
  std::shared_ptr<NodeT<T>> node;
  bool requires_grad = false;

  TensorT() = default;

  static TensorT zeros(const Shape& s, bool rg = false) {
    TensorT t;
    t.shape = s;
    t.data = std::make_shared<std::vector<T>>(shape_numel(s), T(0));
    t.requires_grad = rg;
    if (rg) t.grad = std::make_shared<std::vector<T>>(shape_numel(s), T(0));
    return t;
  }

  static TensorT full(const Shape& s, T v) {
    TensorT t = zeros(s);
    for (auto& x : *t.data) x = v;
    return t;
  }

  static TensorT from(const Shape& s, std::vector<T> values) {
    if (values.size() != shape_numel(s))
      throw DimensionError("tensor from(): " + std::to_string(values.size()) +
                           " values for shape " + shape_str(s));
    TensorT t;
    t.shape = s;
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  static TensorT randn(const Shape& s, Rng& rng) {
    TensorT t = zeros(s);
    for (auto& x : *t.data) x = static_cast<T>(rng.normal());
    return t;
  }

  static TensorT rand_uniform(const Shape& s, Rng& rng, T lo, T hi) {
    TensorT t = zeros(s);
    for (auto& x : *t.data) x = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return static_cast<bool>(data); }
  std::size_t numel() const { return data ? data->size() : 0; }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }

  T value() const {
    if (numel() != 1) throw DimensionError("value(): tensor is not scalar, shape " + shape_str(shape));
    return (*data)[0];
  }

  T& at(std::size_t i) { return (*data)[i]; }
  T at(std::size_t i) const { return (*data)[i]; }

  void set_requires_grad(bool rg) {
    requires_grad = rg;
    if (rg && !grad) grad = std::make_shared<std::vector<T>>(numel(), T(0));
  }

  void zero_grad() {
    if (grad)
      for (auto& g : *grad) g = T(0);
  }

  /// Same storage, detached from the tape.
  TensorT detached() const {
    TensorT t;
    t.shape = shape;
    t.data = data;
    return t;
  }

  TensorT clone() const {
    TensorT t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<T>>(*data);
    return t;
  }

  bool all_finite() const {
    for (T v : *data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

using Tensor = TensorT<float>;

namespace detail {

template <typename T>
bool tape_wants(const TensorT<T>& t) {
  return grad_mode() && t.requires_grad;
}

template <typename T>
TensorT<T> make_out(const Shape& s, bool rg) {
  return TensorT<T>::zeros(s, rg && grad_mode());
}

template <typename T, typename F>
void attach(TensorT<T>& out, std::vector<TensorT<T>> parents, F&& fn) {
  if (!out.requires_grad) return;
  out.node = std::make_shared<NodeT<T>>();
  out.node->parents = std::move(parents);
  out.node->backward = std::forward<F>(fn);
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape != b.shape)
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
}

}  // namespace detail

/// Runs reverse-mode accumulation from a scalar root.
template <typename T>
void backward(TensorT<T>& root) {
  if (!root.requires_grad || !root.grad)
    throw std::runtime_error("backward: root does not require grad");
  if (root.numel() != 1)
    throw DimensionError("backward: root must be scalar, shape " + shape_str(root.shape));
  (*root.grad)[0] = T(1);

  // Post-order DFS so each node runs after everything that consumes it.
  std::vector<TensorT<T>> order;
  std::unordered_set<const NodeT<T>*> seen;
  std::vector<std::pair<TensorT<T>, bool>> stack;
  stack.push_back({root, false});
  while (!stack.empty()) {
    auto [t, expanded] = stack.back();
    stack.pop_back();
    if (!t.node) continue;
    if (expanded) {
      order.push_back(t);
      continue;
    }
    if (seen.count(t.node.get())) continue;
    seen.insert(t.node.get());
    stack.push_back({t, true});
    for (auto& p : t.node->parents)
      if (p.node) stack.push_back({p, false});
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (it->node->backward) it->node->backward(*it);
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "add");
  auto out = detail::make_out<T>(a.shape, a.requires_grad || b.requires_grad);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  detail::attach(out, {a, b}, [](TensorT<T>& o) {
    auto& pa = o.node->parents[0];
    auto& pb = o.node->parents[1];
    const std::size_t n2 = o.numel();
    if (pa.requires_grad)
      for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < n2; ++i) (*pb.grad)[i] += (*o.grad)[i];
  });
  return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "sub");
  auto out = detail::make_out<T>(a.shape, a.requires_grad || b.requires_grad);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
  detail::attach(out, {a, b}, [](TensorT<T>& o) {
    auto& pa = o.node->parents[0];
    auto& pb = o.node->parents[1];
    const std::size_t n2 = o.numel();
    if (pa.requires_grad)
      for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < n2; ++i) (*pb.grad)[i] -= (*o.grad)[i];
  });
  return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "mul");
  auto out = detail::make_out<T>(a.shape, a.requires_grad || b.requires_grad);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  detail::attach(out, {a, b}, [](TensorT<T>& o) {
    auto& pa = o.node->parents[0];
    auto& pb = o.node->parents[1];
    const std::size_t n2 = o.numel();
    if (pa.requires_grad)
      for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i] * (*pb.data)[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < n2; ++i) (*pb.grad)[i] += (*o.grad)[i] * (*pa.data)[i];
  });
  return out;
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s) {
  auto out = detail::make_out<T>(a.shape, a.requires_grad);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * s;
  detail::attach(out, {a}, [s](TensorT<T>& o) {
    auto& pa = o.node->parents[0];
    if (!pa.requires_grad) return;
    const std::size_t n2 = o.numel();
    for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i] * s;
  });
  return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
  auto out = detail::make_out<T>(a.shape, a.requires_grad);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + s;
  detail::attach(out, {a}, [](TensorT<T>& o) {
    auto& pa = o.node->parents[0];
    if (!pa.requires_grad) return;
    const std::size_t n2 = o.numel();
    for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i];
  });
  return out;
}

template <typename T>
TensorT<T> square(const TensorT<T>& a) {
  auto out = detail::make_out<T>(a.shape, a.requires_grad);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*a.data)[i];
  detail::attach(out, {a}, [](TensorT<T>& o) {
    auto& pa = o.node->parents[0];
    if (!pa.requires_grad) return;
    const std::size_t n2 = o.numel();
    for (std::size_t i = 0; i < n2; ++i)
      (*pa.grad)[i] += T(2) * (*pa.data)[i] * (*o.grad)[i];
  });
  return out;
}

template <typename T>
TensorT<T> exp_t(const TensorT<T>& a) {
  auto out = detail::make_out<T>(a.shape, a.requires_grad);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = std::exp((*a.data)[i]);
  detail::attach(out, {a}, [](TensorT<T>& o) {
    auto& pa = o.node->parents[0];
    if (!pa.requires_grad) return;
    const std::size_t n2 = o.numel();
    for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i] * (*o.data)[i];
  });
  return out;
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& a) {
  auto out = detail::make_out<T>(a.shape, a.requires_grad);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = sigmoid_scalar((*a.data)[i]);
  detail::attach(out, {a}, [](TensorT<T>& o) {
    auto& pa = o.node->parents[0];
    if (!pa.requires_grad) return;
    const std::size_t n2 = o.numel();
    for (std::size_t i = 0; i < n2; ++i) {
      const T s = (*o.data)[i];
      (*pa.grad)[i] += (*o.grad)[i] * s * (T(1) - s);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, const Shape& s) {
  if (shape_numel(s) != x.numel())
    throw DimensionError("reshape: numel mismatch " + shape_str(x.shape) + " -> " + shape_str(s));
  TensorT<T> out;
  out.shape = s;
  out.data = x.data;  // view
  if (detail::tape_wants(x)) {
    out.requires_grad = true;
    out.grad = std::make_shared<std::vector<T>>(x.numel(), T(0));
    detail::attach(out, {x}, [](TensorT<T>& o) {
      auto& px = o.node->parents[0];
      if (!px.requires_grad) return;
      const std::size_t n = o.numel();
      for (std::size_t i = 0; i < n; ++i) (*px.grad)[i] += (*o.grad)[i];
    });
  }
  return out;
}

namespace detail {

inline void split_at_axis(const Shape& s, int axis, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i)
    inner *= static_cast<std::size_t>(s[i]);
}

}  // namespace detail

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: empty part list");
  const int r = parts[0].rank();
  if (axis < 0 || axis >= r) throw DimensionError("concat: axis out of range");
  Shape out_shape = parts[0].shape;
  int total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rank() != r) throw DimensionError("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && p.shape[static_cast<std::size_t>(i)] != out_shape[static_cast<std::size_t>(i)])
        throw DimensionError("concat: axis " + std::to_string(i) + " mismatch " +
                             shape_str(p.shape) + " vs " + shape_str(out_shape));
    total += p.shape[static_cast<std::size_t>(axis)];
    rg = rg || p.requires_grad;
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  auto out = detail::make_out<T>(out_shape, rg);

  std::size_t outer, inner;
  detail::split_at_axis(out_shape, axis, outer, inner);
  const std::size_t out_row = static_cast<std::size_t>(total) * inner;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t p_axis = static_cast<std::size_t>(p.shape[static_cast<std::size_t>(axis)]);
    const std::size_t p_row = p_axis * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      const T* src = p.ptr() + o * p_row;
      T* dst = out.ptr() + o * out_row + offset;
      for (std::size_t i = 0; i < p_row; ++i) dst[i] = src[i];
    }
    offset += p_row;
  }

  detail::attach(out, parts, [axis, inner, outer, out_row](TensorT<T>& o) {
    std::size_t off = 0;
    for (auto& p : o.node->parents) {
      const std::size_t p_row =
          static_cast<std::size_t>(p.shape[static_cast<std::size_t>(axis)]) * inner;
      if (p.requires_grad) {
        for (std::size_t ou = 0; ou < outer; ++ou) {
          const T* src = o.grad->data() + ou * out_row + off;
          T* dst = p.grad->data() + ou * p_row;
          for (std::size_t i = 0; i < p_row; ++i) dst[i] += src[i];
        }
      }
      off += p_row;
    }
  });
  return out;
}

template <typename T>
TensorT<T> slice(const TensorT<T>& x, int axis, int start, int len) {
  if (axis < 0 || axis >= x.rank()) throw DimensionError("slice: axis out of range");
  const int extent = x.shape[static_cast<std::size_t>(axis)];
  if (start < 0 || len <= 0 || start + len > extent)
    throw DimensionError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") outside axis of size " +
                         std::to_string(extent));
  Shape out_shape = x.shape;
  out_shape[static_cast<std::size_t>(axis)] = len;
  auto out = detail::make_out<T>(out_shape, x.requires_grad);

  std::size_t outer, inner;
  detail::split_at_axis(x.shape, axis, outer, inner);
  const std::size_t in_row = static_cast<std::size_t>(extent) * inner;
  const std::size_t out_row = static_cast<std::size_t>(len) * inner;
  const std::size_t off = static_cast<std::size_t>(start) * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = x.ptr() + o * in_row + off;
    T* dst = out.ptr() + o * out_row;
    for (std::size_t i = 0; i < out_row; ++i) dst[i] = src[i];
  }

  detail::attach(out, {x}, [outer, inner, in_row, out_row, off](TensorT<T>& o) {
    auto& px = o.node->parents[0];
    if (!px.requires_grad) return;
    for (std::size_t ou = 0; ou < outer; ++ou) {
      const T* src = o.grad->data() + ou * out_row;
      T* dst = px.grad->data() + ou * in_row + off;
      for (std::size_t i = 0; i < out_row; ++i) dst[i] += src[i];
    }
  });
  return out;
}

namespace detail {

template <typename T>
void permuted_copy(const Shape& in_shape, const std::vector<int>& axes, const T* src, T* dst,
                   bool accumulate_into_src_order) {
  const int r = static_cast<int>(in_shape.size());
  std::vector<std::size_t> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[static_cast<std::size_t>(i)] =
        in_strides[static_cast<std::size_t>(i + 1)] *
        static_cast<std::size_t>(in_shape[static_cast<std::size_t>(i + 1)]);
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i)
    out_shape[static_cast<std::size_t>(i)] = in_shape[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];

  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  const std::size_t n = shape_numel(in_shape);
  for (std::size_t flat_out = 0; flat_out < n; ++flat_out) {
    std::size_t src_off = 0;
    for (int i = 0; i < r; ++i)
      src_off += static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]) *
                 in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
    if (accumulate_into_src_order)
      dst[src_off] += src[flat_out];
    else
      dst[flat_out] = src[src_off];
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
      idx[static_cast<std::size_t>(i)] = 0;
    }
  }
}

}  // namespace detail

template <typename T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r) throw DimensionError("permute: axes size mismatch");
  std::vector<bool> used(static_cast<std::size_t>(r), false);
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int a = axes[static_cast<std::size_t>(i)];
    if (a < 0 || a >= r || used[static_cast<std::size_t>(a)])
      throw DimensionError("permute: invalid axis permutation");
    used[static_cast<std::size_t>(a)] = true;
    out_shape[static_cast<std::size_t>(i)] = x.shape[static_cast<std::size_t>(a)];
  }
  auto out = detail::make_out<T>(out_shape, x.requires_grad);
  detail::permuted_copy(x.shape, axes, x.ptr(), out.ptr(), false);

  Shape in_shape = x.shape;
  detail::attach(out, {x}, [in_shape, axes](TensorT<T>& o) {
    auto& px = o.node->parents[0];
    if (!px.requires_grad) return;
    detail::permuted_copy(in_shape, axes, o.grad->data(), px.grad->data(), true);
  });
  return out;
}

/// Repeats a [1, ...] tensor n times along axis 0.
template <typename T>
TensorT<T> broadcast_axis0(const TensorT<T>& x, int n) {
  if (x.rank() < 1 || x.shape[0] != 1)
    throw DimensionError("broadcast_axis0: expected leading axis of size 1, got " +
                         shape_str(x.shape));
  Shape out_shape = x.shape;
  out_shape[0] = n;
  auto out = detail::make_out<T>(out_shape, x.requires_grad);
  const std::size_t row = x.numel();
  for (int i = 0; i < n; ++i) {
    T* dst = out.ptr() + static_cast<std::size_t>(i) * row;
    const T* src = x.ptr();
    for (std::size_t j = 0; j < row; ++j) dst[j] = src[j];
  }
  detail::attach(out, {x}, [n, row](TensorT<T>& o) {
    auto& px = o.node->parents[0];
    if (!px.requires_grad) return;
    for (int i = 0; i < n; ++i) {
      const T* src = o.grad->data() + static_cast<std::size_t>(i) * row;
      for (std::size_t j = 0; j < row; ++j) (*px.grad)[j] += src[j];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions (accumulated in double for a stable loss scale)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
  auto out = detail::make_out<T>({1}, x.requires_grad);
  double acc = 0.0;
  for (T v : *x.data) acc += static_cast<double>(v);
  (*out.data)[0] = static_cast<T>(acc);
  detail::attach(out, {x}, [](TensorT<T>& o) {
    auto& px = o.node->parents[0];
    if (!px.requires_grad) return;
    const T g = (*o.grad)[0];
    for (auto& v : *px.grad) v += g;
  });
  return out;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean_all: empty tensor");
  auto out = detail::make_out<T>({1}, x.requires_grad);
  double acc = 0.0;
  for (T v : *x.data) acc += static_cast<double>(v);
  (*out.data)[0] = static_cast<T>(acc / static_cast<double>(x.numel()));
  const T inv_n = static_cast<T>(1.0 / static_cast<double>(x.numel()));
  detail::attach(out, {x}, [inv_n](TensorT<T>& o) {
    auto& px = o.node->parents[0];
    if (!px.requires_grad) return;
    const T g = (*o.grad)[0] * inv_n;
    for (auto& v : *px.grad) v += g;
  });
  return out;
}

/// Mean over axis 0: [n, ...] -> [1, ...].
template <typename T>
TensorT<T> mean_axis0(const TensorT<T>& x) {
  if (x.rank() < 1 || x.shape[0] < 1) throw DimensionError("mean_axis0: empty axis");
  const int n = x.shape[0];
  Shape out_shape = x.shape;
  out_shape[0] = 1;
  auto out = detail::make_out<T>(out_shape, x.requires_grad);
  const std::size_t row = out.numel();
  for (std::size_t j = 0; j < row; ++j) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += static_cast<double>((*x.data)[static_cast<std::size_t>(i) * row + j]);
    (*out.data)[j] = static_cast<T>(acc / n);
  }
  detail::attach(out, {x}, [n, row](TensorT<T>& o) {
    auto& px = o.node->parents[0];
    if (!px.requires_grad) return;
    const T inv = T(1) / static_cast<T>(n);
    for (int i = 0; i < n; ++i)
      for (std::size_t j = 0; j < row; ++j)
        (*px.grad)[static_cast<std::size_t>(i) * row + j] += (*o.grad)[j] * inv;
  });
  return out;
}

template <typename T>
TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b) {
  return mean_all(square(sub(a, b)));
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul2d(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul2d: expected rank-2 operands, got " + shape_str(a.shape) +
                         " and " + shape_str(b.shape));
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  if (b.shape[0] != k)
    throw DimensionError("matmul2d: inner axis mismatch " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
  auto out = detail::make_out<T>({m, n}, a.requires_grad || b.requires_grad);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (int i = 0; i < m; ++i) {
    T* orow = po + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const T av = pa[static_cast<std::size_t>(i) * k + kk];
      if (av == T(0)) continue;
      const T* brow = pb + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  detail::attach(out, {a, b}, [m, k, n](TensorT<T>& o) {
    auto& pa2 = o.node->parents[0];
    auto& pb2 = o.node->parents[1];
    const T* g = o.grad->data();
    if (pa2.requires_grad) {
      T* da = pa2.grad->data();
      const T* bd = pb2.data->data();
      for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
          const T* grow = g + static_cast<std::size_t>(i) * n;
          const T* brow = bd + static_cast<std::size_t>(kk) * n;
          T acc = T(0);
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          da[static_cast<std::size_t>(i) * k + kk] += acc;
        }
    }
    if (pb2.requires_grad) {
      T* db = pb2.grad->data();
      const T* ad = pa2.data->data();
      for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
          const T av = ad[static_cast<std::size_t>(i) * k + kk];
          if (av == T(0)) continue;
          const T* grow = g + static_cast<std::size_t>(i) * n;
          T* brow = db + static_cast<std::size_t>(kk) * n;
          for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
        }
    }
  });
  return out;
}

/// A @ B^T for row-major A[m,k], B[n,k].
template <typename T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul_nt: expected rank-2 operands");
  const int m = a.shape[0], k = a.shape[1], n = b.shape[0];
  if (b.shape[1] != k)
    throw DimensionError("matmul_nt: inner axis mismatch " + shape_str(a.shape) + " x " +
                         shape_str(b.shape) + "^T");
  auto out = detail::make_out<T>({m, n}, a.requires_grad || b.requires_grad);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (int i = 0; i < m; ++i) {
    const T* arow = pa + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const T* brow = pb + static_cast<std::size_t>(j) * k;
      T acc = T(0);
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      po[static_cast<std::size_t>(i) * n + j] = acc;
    }
  }
  detail::attach(out, {a, b}, [m, k, n](TensorT<T>& o) {
    auto& pa2 = o.node->parents[0];
    auto& pb2 = o.node->parents[1];
    const T* g = o.grad->data();
    if (pa2.requires_grad) {
      T* da = pa2.grad->data();
      const T* bd = pb2.data->data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const T gv = g[static_cast<std::size_t>(i) * n + j];
          if (gv == T(0)) continue;
          const T* brow = bd + static_cast<std::size_t>(j) * k;
          T* arow = da + static_cast<std::size_t>(i) * k;
          for (int kk = 0; kk < k; ++kk) arow[kk] += gv * brow[kk];
        }
    }
    if (pb2.requires_grad) {
      T* db = pb2.grad->data();
      const T* ad = pa2.data->data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const T gv = g[static_cast<std::size_t>(i) * n + j];
          if (gv == T(0)) continue;
          const T* arow = ad + static_cast<std::size_t>(i) * k;
          T* brow = db + static_cast<std::size_t>(j) * k;
          for (int kk = 0; kk < k; ++kk) brow[kk] += gv * arow[kk];
        }
    }
  });
  return out;
}

}  // namespace dancer
