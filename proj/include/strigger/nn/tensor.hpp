#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Tensor is a shared handle onto a graph node. Operations on tensors that
// require gradients record their parents and a backward closure, so the graph
// is rebuilt on every forward pass and discarded with the last handle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace strigger::nn {

using Shape = std::vector<std::size_t>;

// Tensor storage is allocated at Eigen's maximum alignment so vectorized kernels
// take the same code path on every run, keeping results bit-reproducible.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

inline std::string shape_string(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace detail {

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node &)> backward_fn;

  Buffer &ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

} // namespace detail

class Tensor {
public:
  Tensor() = default;

  Tensor(Shape shape, const std::vector<double> &values, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer(values.begin(), values.end()), requires_grad) {}

  Tensor(Shape shape, std::initializer_list<double> values, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer(values), requires_grad) {}

  Tensor(Shape shape, Buffer values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape.empty()) shape = {1};
    for (auto d : shape)
      if (d == 0) throw DimensionError("tensor dimensions must be positive");
    if (shape_size(shape) != values.size())
      throw DimensionError("shape " + shape_string(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), Buffer(n, 0.0), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, const std::vector<double> &values,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, values, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape &shape() const { return node().shape; }
  std::size_t size() const { return node().value.size(); }
  std::size_t rank() const { return node().shape.size(); }

  // Rows/cols view every tensor as a matrix; rank-1 tensors are a single row.
  std::size_t rows() const { return rank() == 1 ? 1 : node().shape[0]; }
  std::size_t cols() const { return rank() == 1 ? node().shape[0] : size() / node().shape[0]; }

  std::span<const double> values() const { return node().value; }
  std::span<double> mutable_values() { return node().value; }
  double operator[](std::size_t i) const { return node().value[i]; }

  double item() const {
    if (size() != 1) throw UsageError("item() on a tensor of shape " + shape_string(shape()));
    return node().value[0];
  }

  bool requires_grad() const { return node().requires_grad; }
  bool has_grad() const { return node().grad.size() == node().value.size(); }
  std::span<const double> grad() const {
    if (!has_grad()) throw UsageError("tensor has no gradient");
    return node().grad;
  }
  std::span<double> mutable_grad() { return node().ensure_grad(); }
  void zero_grad() { node().grad.assign(node().value.size(), 0.0); }
  void clear_grad() { node().grad.clear(); }

  // Fresh leaf with copied values and no history.
  Tensor clone() const {
    Tensor t(node().shape, node().value, node().requires_grad);
    return t;
  }
  Tensor detach() const { return Tensor(node().shape, node().value, false); }

  // Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
  void backward() const;

  detail::Node &node() const {
    if (!node_) throw UsageError("use of an undefined tensor");
    return *node_;
  }
  const std::shared_ptr<detail::Node> &handle() const { return node_; }

private:
  std::shared_ptr<detail::Node> node_;
};

inline void Tensor::backward() const {
  if (size() != 1)
    throw UsageError("backward() requires a scalar loss, got shape " + shape_string(shape()));
  if (!requires_grad()) return;

  std::vector<detail::Node *> order;
  std::unordered_set<detail::Node *> seen;
  std::vector<std::pair<detail::Node *, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto &[n, next] = stack.back();
    if (next < n->parents.size()) {
      auto *p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto *n : order)
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

namespace detail {

inline Tensor make_result(Shape shape, Buffer value,
                          std::vector<Tensor> const &inputs,
                          std::function<void(Node &)> backward_fn) {
  bool rg = std::any_of(inputs.begin(), inputs.end(),
                        [](const Tensor &t) { return t.requires_grad(); });
  Tensor out(std::move(shape), std::move(value), rg);
  if (rg) {
    auto &n = out.node();
    for (const auto &t : inputs) n.parents.push_back(t.handle());
    n.backward_fn = std::move(backward_fn);
  }
  return out;
}

inline void require_same_shape(const Tensor &a, const Tensor &b, const char *op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor &a, Fwd fwd, Deriv deriv) {
  Buffer out(a.size());
  auto av = a.values();
  std::transform(av.begin(), av.end(), out.begin(), fwd);
  return make_result(a.shape(), std::move(out), {a}, [deriv](Node &self) {
    auto &p = *self.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
  });
}

} // namespace detail

// ---- elementwise ----------------------------------------------------------

inline Tensor operator+(const Tensor &a, const Tensor &b) {
  detail::require_same_shape(a, b, "add");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node &self) {
    for (auto &p : self.parents) {
      if (!p->requires_grad) continue;
      auto &g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor operator-(const Tensor &a, const Tensor &b) {
  detail::require_same_shape(a, b, "sub");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node &self) {
    double sign = 1.0;
    for (auto &p : self.parents) {
      if (p->requires_grad) {
        auto &g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
      }
      sign = -1.0;
    }
  });
}

inline Tensor operator*(const Tensor &a, const Tensor &b) {
  detail::require_same_shape(a, b, "mul");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node &self) {
    auto &pa = *self.parents[0];
    auto &pb = *self.parents[1];
    if (pa.requires_grad) {
      auto &g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto &g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

inline Tensor operator*(const Tensor &a, double c) {
  return detail::unary(
      a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}
inline Tensor operator*(double c, const Tensor &a) { return a * c; }
inline Tensor operator-(const Tensor &a) { return a * -1.0; }

inline Tensor operator+(const Tensor &a, double c) {
  return detail::unary(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor tanh(const Tensor &a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor &a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor &a) {
  return detail::unary(a, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor exp(const Tensor &a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor square(const Tensor &a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// Gradient is passed through only where the input lies strictly inside [lo, hi].
inline Tensor clamp(const Tensor &a, double lo, double hi) {
  return detail::unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// Ties route the gradient to the first argument.
inline Tensor minimum(const Tensor &a, const Tensor &b) {
  detail::require_same_shape(a, b, "minimum");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(a[i], b[i]);
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node &self) {
    auto &pa = *self.parents[0];
    auto &pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      bool first = pa.value[i] <= pb.value[i];
      auto &p = first ? pa : pb;
      if (p.requires_grad) p.ensure_grad()[i] += self.grad[i];
    }
  });
}

// ---- reductions -----------------------------------------------------------

inline Tensor sum(const Tensor &a) {
  auto v = a.values();
  double s = std::accumulate(v.begin(), v.end(), 0.0);
  return detail::make_result({1}, Buffer{s}, {a}, [](detail::Node &self) {
    auto &p = *self.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.ensure_grad();
    for (auto &x : g) x += self.grad[0];
  });
}

inline Tensor mean(const Tensor &a) { return sum(a) * (1.0 / static_cast<double>(a.size())); }

// Per-row sum of a [rows x cols] tensor, giving [rows].
inline Tensor sum_cols(const Tensor &a) {
  const std::size_t r = a.rows(), c = a.cols();
  Buffer out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += a[i * c + j];
  return detail::make_result({r}, std::move(out), {a}, [r, c](detail::Node &self) {
    auto &p = *self.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i];
  });
}

// ---- matrix ops -----------------------------------------------------------

inline Tensor matmul(const Tensor &a, const Tensor &b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul expects rank-2 tensors, got " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  Buffer out(n * m);
  detail::MapMat(out.data(), n, m).noalias() =
      detail::ConstMapMat(a.values().data(), n, k) * detail::ConstMapMat(b.values().data(), k, m);
  return detail::make_result({n, m}, std::move(out), {a, b}, [n, k, m](detail::Node &self) {
    auto &pa = *self.parents[0];
    auto &pb = *self.parents[1];
    detail::ConstMapMat go(self.grad.data(), n, m);
    if (pa.requires_grad)
      detail::MapMat(pa.ensure_grad().data(), n, k).noalias() +=
          go * detail::ConstMapMat(pb.value.data(), k, m).transpose();
    if (pb.requires_grad)
      detail::MapMat(pb.ensure_grad().data(), k, m).noalias() +=
          detail::ConstMapMat(pa.value.data(), n, k).transpose() * go;
  });
}

// Adds a [cols] (or [1 x cols]) row vector to every row of a [rows x cols] tensor.
inline Tensor add_row(const Tensor &a, const Tensor &row) {
  const std::size_t r = a.rows(), c = a.cols();
  if (row.size() != c)
    throw DimensionError("add_row: row of size " + std::to_string(row.size()) +
                         " for matrix " + shape_string(a.shape()));
  Buffer out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a[i * c + j] + row[j];
  return detail::make_result(a.shape(), std::move(out), {a, row}, [r, c](detail::Node &self) {
    auto &pa = *self.parents[0];
    auto &pr = *self.parents[1];
    if (pa.requires_grad) {
      auto &g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pr.requires_grad) {
      auto &g = pr.ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

// Columns [begin, end) of a [rows x cols] tensor.
inline Tensor slice_cols(const Tensor &a, std::size_t begin, std::size_t end) {
  const std::size_t r = a.rows(), c = a.cols();
  if (begin >= end || end > c)
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + shape_string(a.shape()));
  const std::size_t w = end - begin;
  Buffer out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a[i * c + begin + j];
  return detail::make_result({r, w}, std::move(out), {a}, [r, c, w, begin](detail::Node &self) {
    auto &p = *self.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
  });
}

// Row-wise log-softmax of a [rows x cols] tensor.
inline Tensor log_softmax_rows(const Tensor &a) {
  const std::size_t r = a.rows(), c = a.cols();
  Buffer out(a.size());
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, a[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(a[i * c + j] - mx);
    double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a[i * c + j] - lse;
  }
  return detail::make_result(a.shape(), std::move(out), {a}, [r, c](detail::Node &self) {
    auto &p = *self.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += self.grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        g[i * c + j] += self.grad[i * c + j] - std::exp(self.value[i * c + j]) * gs;
    }
  });
}

// out[i] = a[i, index[i]].
inline Tensor gather_cols(const Tensor &a, std::span<const std::size_t> index) {
  const std::size_t r = a.rows(), c = a.cols();
  if (index.size() != r) throw DimensionError("gather_cols: one index per row required");
  std::vector<std::size_t> idx(index.begin(), index.end());
  Buffer out(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (idx[i] >= c) throw DimensionError("gather_cols: index out of range");
    out[i] = a[i * c + idx[i]];
  }
  return detail::make_result({r}, std::move(out), {a}, [c, idx = std::move(idx)](detail::Node &self) {
    auto &p = *self.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) g[i * c + idx[i]] += self.grad[i];
  });
}

// Reshape without copying history semantics; gradient maps one-to-one.
inline Tensor reshape(const Tensor &a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  Buffer out(a.values().begin(), a.values().end());
  return detail::make_result(std::move(shape), std::move(out), {a}, [](detail::Node &self) {
    auto &p = *self.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

} // namespace strigger::nn
