#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "orchard/errors.hpp"

namespace orchard {

using Shape = std::vector<std::size_t>;

inline std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

namespace autograd {

// Thread-local switch: when off, ops do not record tape nodes. Used by
// inference paths so evaluation stays side-effect-free and allocation-light.
inline bool& recording_flag() {
  thread_local bool flag = true;
  return flag;
}

class NoGradGuard {
 public:
  NoGradGuard() : prev_(recording_flag()) { recording_flag() = false; }
  ~NoGradGuard() { recording_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

}  // namespace autograd

// Dense n-dimensional array over T (float for training, double for gradient
// checks), row-major contiguous, with an optional reverse-mode tape.
//
// A TensorT is a cheap shared handle. Values are immutable after construction
// except for the grad buffer and the explicit leaf-update path used by the
// optimizer (mutable_data). Forward ops are pure; a backward pass owns its
// tape exclusively and can run it exactly once.
template <class T>
class TensorT {
 public:
  using BackwardFn = std::function<void(std::span<const T> out_grad)>;

  TensorT() = default;

  static TensorT from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw shape_error("tensor: shape " + shape_to_string(shape) + " wants " +
                        std::to_string(shape_numel(shape)) + " values, got " +
                        std::to_string(data.size()));
    }
    TensorT t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static TensorT full(Shape shape, T value, bool requires_grad = false) {
    std::vector<T> d(shape_numel(shape), value);
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static TensorT ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(1), requires_grad);
  }

  static TensorT scalar(T value, bool requires_grad = false) {
    return from_data(Shape{}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return checked().shape; }
  std::size_t rank() const { return checked().shape.size(); }
  std::size_t numel() const { return checked().data.size(); }
  std::size_t extent(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) throw index_error("tensor: axis " + std::to_string(axis) + " out of range");
    return s[axis];
  }

  std::span<const T> data() const { return {checked().data.data(), checked().data.size()}; }

  // Leaf update hook for the optimizer and loaders. Mutating a tensor that is
  // an input of a live tape invalidates that tape's saved values.
  T* mutable_data() { return checked().data.data(); }

  T item() const {
    if (numel() != 1) {
      throw contract_error("tensor: item() on non-scalar of shape " + shape_to_string(shape()));
    }
    return checked().data[0];
  }

  T at(const std::vector<std::size_t>& idx) const {
    const Node& n = checked();
    if (idx.size() != n.shape.size()) {
      throw index_error("tensor: at() rank mismatch");
    }
    std::size_t flat = 0;
    for (std::size_t d = 0; d < idx.size(); ++d) {
      if (idx[d] >= n.shape[d]) throw index_error("tensor: index out of range on axis " + std::to_string(d));
      flat = flat * n.shape[d] + idx[d];
    }
    return n.data[flat];
  }

  bool requires_grad() const { return checked().requires_grad; }
  void set_requires_grad(bool v) { checked().requires_grad = v; }

  bool has_grad() const { return !checked().grad.empty(); }

  std::span<const T> grad() const {
    const Node& n = checked();
    if (n.grad.empty()) throw state_error("tensor: grad accessed before backward populated it");
    return {n.grad.data(), n.grad.size()};
  }

  TensorT grad_tensor() const {
    const Node& n = checked();
    if (n.grad.empty()) throw state_error("tensor: grad accessed before backward populated it");
    return from_data(n.shape, n.grad);
  }

  void zero_grad() { checked().grad.clear(); }

  // Accumulates into the grad buffer (+=). No-op unless requires_grad.
  void accumulate_grad(std::span<const T> g) {
    Node& n = checked();
    if (!n.requires_grad) return;
    if (g.size() != n.data.size()) {
      throw shape_error("tensor: grad contribution size mismatch");
    }
    if (n.grad.empty()) n.grad.assign(n.data.size(), T(0));
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  // Grad buffer sized to the tensor, for backward rules that accumulate
  // element-by-element. Callers must check requires_grad() first.
  std::vector<T>& grad_accum_buffer() {
    Node& n = checked();
    if (n.grad.empty()) n.grad.assign(n.data.size(), T(0));
    return n.grad;
  }

  // Registers an op result on the tape. `backward_fn` receives dLoss/dResult
  // and accumulates into the parents it captured. The tape node is only
  // created while recording is on and some parent requires grad.
  static TensorT make_op(Shape shape, std::vector<T> data, std::vector<TensorT> parents,
                         BackwardFn backward_fn, const char* op_name,
                         bool check_finite = true) {
    if (check_finite) ensure_finite(data, op_name);
    const bool record = autograd::recording_flag() && any_requires_grad(parents);
    TensorT t = from_data(std::move(shape), std::move(data), record);
    if (record) {
      Node& n = *t.node_;
      n.parents = std::move(parents);
      n.backward_fn = std::move(backward_fn);
      n.op_name = op_name;
    }
    return t;
  }

  // Reverse-mode sweep from a scalar loss. Populates grad on every
  // requires_grad ancestor, accumulating across fan-out, then consumes the
  // tape: the same nodes cannot be replayed.
  void backward() {
    Node& root = checked();
    if (root.data.size() != 1) {
      throw contract_error("backward: loss must be scalar, got shape " + shape_to_string(root.shape));
    }
    // Owning handles: releasing a node's closure mid-sweep must not free
    // nodes that are still queued.
    std::vector<std::shared_ptr<Node>> order = topo_order(node_);
    root.grad.assign(1, T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = it->get();
      if (!n->backward_fn) continue;
      if (!n->grad.empty()) {
        n->backward_fn(std::span<const T>(n->grad.data(), n->grad.size()));
      }
      n->consumed = true;
      n->backward_fn = nullptr;
      n->parents.clear();
      if (!n->requires_grad) n->grad.clear();
    }
  }

  bool same_node(const TensorT& other) const { return node_ == other.node_; }

 private:
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    bool consumed = false;
    std::vector<TensorT> parents;
    BackwardFn backward_fn;
    const char* op_name = "leaf";
  };

  std::shared_ptr<Node> node_;

  Node& checked() {
    if (!node_) throw contract_error("tensor: operation on default-constructed (null) tensor");
    return *node_;
  }
  const Node& checked() const {
    if (!node_) throw contract_error("tensor: operation on default-constructed (null) tensor");
    return *node_;
  }

  static bool any_requires_grad(const std::vector<TensorT>& ps) {
    for (const TensorT& p : ps) {
      if (p.defined() && p.requires_grad()) return true;
    }
    return false;
  }

  static void ensure_finite(const std::vector<T>& data, const char* op_name) {
    for (const T& v : data) {
      if (!std::isfinite(v)) {
        throw arithmetic_error(std::string(op_name) + ": non-finite value in result (overflow)");
      }
    }
  }

  // Iterative DFS post-order over parent edges; reversed it is a valid
  // topological order (every consumer before its producers).
  static std::vector<std::shared_ptr<Node>> topo_order(const std::shared_ptr<Node>& root) {
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root.get());
    if (root->consumed) throw state_error("backward: tape already consumed");
    while (!stack.empty()) {
      auto& [node, next_child] = stack.back();
      if (next_child < node->parents.size()) {
        const std::shared_ptr<Node>& child = node->parents[next_child].node_;
        ++next_child;
        if (child && !seen.count(child.get())) {
          if (child->consumed) throw state_error("backward: tape already consumed");
          seen.insert(child.get());
          stack.emplace_back(child, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    return order;
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// ---------------------------------------------------------------------------
// Broadcasting (trailing-dimension): a dim matches if equal or either is 1.
// ---------------------------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw shape_error("broadcast: shapes " + shape_to_string(a) + " and " + shape_to_string(b) +
                        " are not compatible");
    }
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

namespace detail {

// Row-major strides; broadcast dims (extent 1 where output extent > 1) and
// missing leading dims get stride 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& operand, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = 0; i < operand.size(); ++i) {
    const std::size_t d = operand.size() - 1 - i;
    const std::size_t od = out.size() - 1 - i;
    strides[od] = (operand[d] == 1 && out[od] != 1) ? 0 : s;
    s *= operand[d];
  }
  return strides;
}

// Walks every flat index of `out`, handing the callback the matching flat
// offsets into two broadcast operands.
template <class Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, Fn&& fn) {
  const std::size_t n = shape_numel(out);
  if (n == 0) return;
  std::vector<std::size_t> idx(out.size(), 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t flat = 0;; ++flat) {
    fn(flat, ia, ib);
    if (flat + 1 == n) break;
    for (std::size_t d = out.size(); d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class T>
void matmul_raw(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const T av = a[i * k + l];
      const T* brow = b + l * n;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
std::vector<T> transpose_raw(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting.
// ---------------------------------------------------------------------------

enum class BinaryOp { add, sub, mul, div, max };

template <class T>
TensorT<T> elementwise(BinaryOp op, const TensorT<T>& a, const TensorT<T>& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const auto sa = detail::broadcast_strides(a.shape(), out_shape);
  const auto sb = detail::broadcast_strides(b.shape(), out_shape);
  const auto ad = a.data();
  const auto bd = b.data();

  if (op == BinaryOp::div) {
    for (const T& v : bd) {
      if (v == T(0)) throw arithmetic_error("div: division by exact zero");
    }
  }

  std::vector<T> out(shape_numel(out_shape));
  const char* name = "elementwise";
  switch (op) {
    case BinaryOp::add:
      name = "add";
      detail::for_each_broadcast(out_shape, sa, sb,
                                 [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = ad[ia] + bd[ib]; });
      break;
    case BinaryOp::sub:
      name = "sub";
      detail::for_each_broadcast(out_shape, sa, sb,
                                 [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = ad[ia] - bd[ib]; });
      break;
    case BinaryOp::mul:
      name = "mul";
      detail::for_each_broadcast(out_shape, sa, sb,
                                 [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = ad[ia] * bd[ib]; });
      break;
    case BinaryOp::div:
      name = "div";
      detail::for_each_broadcast(out_shape, sa, sb,
                                 [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = ad[ia] / bd[ib]; });
      break;
    case BinaryOp::max:
      name = "max";
      detail::for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        out[o] = ad[ia] >= bd[ib] ? ad[ia] : bd[ib];
      });
      break;
  }

  TensorT<T> pa = a, pb = b;
  auto backward = [op, out_shape, sa, sb, pa, pb](std::span<const T> g) mutable {
    const auto ad = pa.data();
    const auto bd = pb.data();
    const bool need_a = pa.requires_grad();
    const bool need_b = pb.requires_grad();
    std::vector<T>* ga = need_a ? &pa.grad_accum_buffer() : nullptr;
    std::vector<T>* gb = need_b ? &pb.grad_accum_buffer() : nullptr;
    detail::for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      const T go = g[o];
      switch (op) {
        case BinaryOp::add:
          if (ga) (*ga)[ia] += go;
          if (gb) (*gb)[ib] += go;
          break;
        case BinaryOp::sub:
          if (ga) (*ga)[ia] += go;
          if (gb) (*gb)[ib] -= go;
          break;
        case BinaryOp::mul:
          if (ga) (*ga)[ia] += go * bd[ib];
          if (gb) (*gb)[ib] += go * ad[ia];
          break;
        case BinaryOp::div:
          if (ga) (*ga)[ia] += go / bd[ib];
          if (gb) (*gb)[ib] -= go * ad[ia] / (bd[ib] * bd[ib]);
          break;
        case BinaryOp::max:
          // Ties route to the first operand.
          if (ad[ia] >= bd[ib]) {
            if (ga) (*ga)[ia] += go;
          } else if (gb) {
            (*gb)[ib] += go;
          }
          break;
      }
    });
  };
  return TensorT<T>::make_op(out_shape, std::move(out), {a, b}, std::move(backward), name);
}

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) { return elementwise(BinaryOp::add, a, b); }
template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) { return elementwise(BinaryOp::sub, a, b); }
template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) { return elementwise(BinaryOp::mul, a, b); }
template <class T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) { return elementwise(BinaryOp::div, a, b); }
template <class T>
TensorT<T> maximum(const TensorT<T>& a, const TensorT<T>& b) { return elementwise(BinaryOp::max, a, b); }

template <class T>
TensorT<T> add(const TensorT<T>& a, T s) { return elementwise(BinaryOp::add, a, TensorT<T>::scalar(s)); }
template <class T>
TensorT<T> sub(const TensorT<T>& a, T s) { return elementwise(BinaryOp::sub, a, TensorT<T>::scalar(s)); }
template <class T>
TensorT<T> mul(const TensorT<T>& a, T s) { return elementwise(BinaryOp::mul, a, TensorT<T>::scalar(s)); }
template <class T>
TensorT<T> div(const TensorT<T>& a, T s) { return elementwise(BinaryOp::div, a, TensorT<T>::scalar(s)); }
template <class T>
TensorT<T> maximum(const TensorT<T>& a, T s) { return elementwise(BinaryOp::max, a, TensorT<T>::scalar(s)); }

template <class T> TensorT<T> operator+(const TensorT<T>& a, const TensorT<T>& b) { return add(a, b); }
template <class T> TensorT<T> operator-(const TensorT<T>& a, const TensorT<T>& b) { return sub(a, b); }
template <class T> TensorT<T> operator*(const TensorT<T>& a, const TensorT<T>& b) { return mul(a, b); }
template <class T> TensorT<T> operator/(const TensorT<T>& a, const TensorT<T>& b) { return div(a, b); }

// ---------------------------------------------------------------------------
// Matrix product, 2-D only.
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw shape_error("matmul: expects rank-2 operands, got " + shape_to_string(a.shape()) + " and " +
                      shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw shape_error("matmul: inner extents differ, " + shape_to_string(a.shape()) + " vs " +
                      shape_to_string(b.shape()));
  }
  std::vector<T> out(m * n);
  detail::matmul_raw(a.data().data(), b.data().data(), out.data(), m, k, n);

  TensorT<T> pa = a, pb = b;
  auto backward = [pa, pb, m, k, n](std::span<const T> g) mutable {
    if (pa.requires_grad()) {
      // dA = g * B^T
      std::vector<T> bt = detail::transpose_raw(pb.data().data(), k, n);
      std::vector<T> da(m * k);
      detail::matmul_raw(g.data(), bt.data(), da.data(), m, n, k);
      pa.accumulate_grad(std::span<const T>(da.data(), da.size()));
    }
    if (pb.requires_grad()) {
      // dB = A^T * g
      std::vector<T> at = detail::transpose_raw(pa.data().data(), m, k);
      std::vector<T> db(k * n);
      detail::matmul_raw(at.data(), g.data(), db.data(), k, m, n);
      pb.accumulate_grad(std::span<const T>(db.data(), db.size()));
    }
  };
  return TensorT<T>::make_op({m, n}, std::move(out), {a, b}, std::move(backward), "matmul");
}

template <class T>
TensorT<T> transpose2d(const TensorT<T>& a) {
  if (a.rank() != 2) throw shape_error("transpose2d: expects rank-2, got " + shape_to_string(a.shape()));
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<T> out = detail::transpose_raw(a.data().data(), r, c);
  TensorT<T> pa = a;
  auto backward = [pa, r, c](std::span<const T> g) mutable {
    if (!pa.requires_grad()) return;
    std::vector<T> gt = detail::transpose_raw(g.data(), c, r);
    pa.accumulate_grad(std::span<const T>(gt.data(), gt.size()));
  };
  return TensorT<T>::make_op({c, r}, std::move(out), {a}, std::move(backward), "transpose2d");
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

enum class ReduceOp { sum, mean, max };

namespace detail {

struct ReducePlan {
  Shape out_shape;
  // For each input dim: multiplier into the output flat index (0 on reduced dims).
  std::vector<std::size_t> out_multiplier;
  std::size_t reduced_count = 1;
};

inline ReducePlan make_reduce_plan(const Shape& in, std::vector<std::size_t> axes, bool keepdims) {
  std::sort(axes.begin(), axes.end());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= in.size()) {
      throw index_error("reduce: axis " + std::to_string(axes[i]) + " out of range for shape " +
                        shape_to_string(in));
    }
    if (i > 0 && axes[i] == axes[i - 1]) throw contract_error("reduce: duplicate axis");
  }
  std::vector<bool> reduced(in.size(), false);
  for (std::size_t ax : axes) reduced[ax] = true;

  ReducePlan plan;
  for (std::size_t d = 0; d < in.size(); ++d) {
    if (reduced[d]) {
      plan.reduced_count *= in[d];
      if (keepdims) plan.out_shape.push_back(1);
    } else {
      plan.out_shape.push_back(in[d]);
    }
  }
  // Row-major strides over kept dims only.
  plan.out_multiplier.assign(in.size(), 0);
  std::size_t stride = 1;
  for (std::size_t d = in.size(); d-- > 0;) {
    if (!reduced[d]) {
      plan.out_multiplier[d] = stride;
      stride *= in[d];
    }
  }
  return plan;
}

template <class Fn>
void for_each_reduce(const Shape& in, const std::vector<std::size_t>& mult, Fn&& fn) {
  const std::size_t n = shape_numel(in);
  if (n == 0) return;
  std::vector<std::size_t> idx(in.size(), 0);
  std::size_t out = 0;
  for (std::size_t flat = 0;; ++flat) {
    fn(flat, out);
    if (flat + 1 == n) break;
    for (std::size_t d = in.size(); d-- > 0;) {
      ++idx[d];
      out += mult[d];
      if (idx[d] < in[d]) break;
      out -= mult[d] * in[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

template <class T>
TensorT<T> reduce(ReduceOp op, const TensorT<T>& t, std::vector<std::size_t> axes, bool keepdims = false) {
  const Shape& in_shape = t.shape();
  auto plan = detail::make_reduce_plan(in_shape, std::move(axes), keepdims);
  const std::size_t out_n = shape_numel(plan.out_shape);
  const auto in = t.data();

  if ((op == ReduceOp::mean || op == ReduceOp::max) && (plan.reduced_count == 0 || t.numel() == 0)) {
    throw contract_error("reduce: mean/max over zero elements");
  }

  std::vector<T> out;
  std::vector<std::size_t> argmax;  // flat input index winning each output cell
  const char* name = "sum";
  switch (op) {
    case ReduceOp::sum:
    case ReduceOp::mean: {
      name = op == ReduceOp::sum ? "sum" : "mean";
      out.assign(out_n, T(0));
      detail::for_each_reduce(in_shape, plan.out_multiplier,
                              [&](std::size_t i, std::size_t o) { out[o] += in[i]; });
      if (op == ReduceOp::mean) {
        const T inv = T(1) / static_cast<T>(plan.reduced_count);
        for (T& v : out) v *= inv;
      }
      break;
    }
    case ReduceOp::max: {
      name = "reduce_max";
      out.assign(out_n, std::numeric_limits<T>::lowest());
      argmax.assign(out_n, 0);
      std::vector<bool> seen(out_n, false);
      detail::for_each_reduce(in_shape, plan.out_multiplier, [&](std::size_t i, std::size_t o) {
        if (!seen[o] || in[i] > out[o]) {
          seen[o] = true;
          out[o] = in[i];
          argmax[o] = i;
        }
      });
      break;
    }
  }

  TensorT<T> pt = t;
  const std::size_t reduced_count = plan.reduced_count;
  auto backward = [op, pt, in_shape, mult = plan.out_multiplier, argmax = std::move(argmax),
                   reduced_count](std::span<const T> g) mutable {
    if (!pt.requires_grad()) return;
    std::vector<T>& gin = pt.grad_accum_buffer();
    switch (op) {
      case ReduceOp::sum:
        detail::for_each_reduce(in_shape, mult, [&](std::size_t i, std::size_t o) { gin[i] += g[o]; });
        break;
      case ReduceOp::mean: {
        const T inv = T(1) / static_cast<T>(reduced_count);
        detail::for_each_reduce(in_shape, mult, [&](std::size_t i, std::size_t o) { gin[i] += g[o] * inv; });
        break;
      }
      case ReduceOp::max:
        for (std::size_t o = 0; o < g.size(); ++o) gin[argmax[o]] += g[o];
        break;
    }
  };
  return TensorT<T>::make_op(plan.out_shape, std::move(out), {t}, std::move(backward), name);
}

template <class T>
std::vector<std::size_t> all_axes(const TensorT<T>& t) {
  std::vector<std::size_t> axes(t.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  return axes;
}

template <class T>
TensorT<T> sum(const TensorT<T>& t, std::vector<std::size_t> axes, bool keepdims = false) {
  return reduce(ReduceOp::sum, t, std::move(axes), keepdims);
}
template <class T>
TensorT<T> sum(const TensorT<T>& t) { return reduce(ReduceOp::sum, t, all_axes(t), false); }

template <class T>
TensorT<T> mean(const TensorT<T>& t, std::vector<std::size_t> axes, bool keepdims = false) {
  return reduce(ReduceOp::mean, t, std::move(axes), keepdims);
}
template <class T>
TensorT<T> mean(const TensorT<T>& t) { return reduce(ReduceOp::mean, t, all_axes(t), false); }

template <class T>
TensorT<T> reduce_max(const TensorT<T>& t, std::vector<std::size_t> axes, bool keepdims = false) {
  return reduce(ReduceOp::max, t, std::move(axes), keepdims);
}
template <class T>
TensorT<T> reduce_max(const TensorT<T>& t) { return reduce(ReduceOp::max, t, all_axes(t), false); }

// ---------------------------------------------------------------------------
// Misc tape ops.
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> reshape(const TensorT<T>& t, Shape new_shape) {
  if (shape_numel(new_shape) != t.numel()) {
    throw shape_error("reshape: " + shape_to_string(t.shape()) + " -> " + shape_to_string(new_shape) +
                      " changes element count");
  }
  std::vector<T> out(t.data().begin(), t.data().end());
  TensorT<T> pt = t;
  auto backward = [pt](std::span<const T> g) mutable { pt.accumulate_grad(g); };
  return TensorT<T>::make_op(std::move(new_shape), std::move(out), {t}, std::move(backward), "reshape",
                             /*check_finite=*/false);
}

template <class T>
TensorT<T> exp(const TensorT<T>& t) {
  std::vector<T> out(t.numel());
  const auto in = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(in[i]);
  TensorT<T> pt = t;
  auto backward = [pt, saved = out](std::span<const T> g) mutable {
    if (!pt.requires_grad()) return;
    std::vector<T>& gin = pt.grad_accum_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gin[i] += g[i] * saved[i];
  };
  return TensorT<T>::make_op(t.shape(), std::move(out), {t}, std::move(backward), "exp");
}

template <class T>
TensorT<T> relu(const TensorT<T>& t) {
  return maximum(t, T(0));
}

}  // namespace orchard
