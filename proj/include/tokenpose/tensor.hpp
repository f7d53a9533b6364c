#ifndef TOKENPOSE_TENSOR_HPP
#define TOKENPOSE_TENSOR_HPP

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tokenpose/errors.hpp"
#include "tokenpose/rng.hpp"

namespace tokenpose {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

template <typename T>
class Tensor;

// Thread-local autograd switch; ops built under NoGrad record no graph.
inline bool& grad_mode_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGrad {
  NoGrad() : prev_(grad_mode_enabled()) { grad_mode_enabled() = false; }
  ~NoGrad() { grad_mode_enabled() = prev_; }
  NoGrad(const NoGrad&) = delete;

 private:
  bool prev_;
};

// One node of the recorded computation. Leaves have no backward_fn; op outputs
// keep handles to their parents, which is what keeps the graph alive until the
// last output handle is dropped.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // leaves only; filled by backward()
  bool requires_grad = false;
  std::uint64_t id = 0;  // creation order, fixes traversal order

  std::vector<Tensor<T>> parents;
  // pgrads[i] is a zero-initialized accumulation buffer for parents[i], or
  // nullptr when that parent does not require grad.
  std::function<void(const std::vector<T>& gout, const std::vector<std::vector<T>*>& pgrads)>
      backward_fn;

  std::size_t numel() const { return values.size(); }
  bool is_leaf() const { return !backward_fn; }

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<T> values) {
    check_shape(shape);
    if (shape_numel(shape) != values.size())
      throw ShapeMismatch("tensor data length " + std::to_string(values.size()) +
                          " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    t.node_->id = TensorNode<T>::next_id();
    return t;
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static Tensor full(Shape shape, T value) {
    check_shape(shape);
    std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor scalar(T value) { return from({1}, {value}); }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    check_shape(shape);
    std::size_t n = shape_numel(shape);
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return from(std::move(shape), std::move(v));
  }

  static Tensor normal(Shape shape, Rng& rng, double mean, double stddev) {
    check_shape(shape);
    std::size_t n = shape_numel(shape);
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.normal(mean, stddev));
    return from(std::move(shape), std::move(v));
  }

  static Tensor trunc_normal(Shape shape, Rng& rng, double stddev, double clip = 2.0) {
    check_shape(shape);
    std::size_t n = shape_numel(shape);
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.trunc_normal(stddev, clip));
    return from(std::move(shape), std::move(v));
  }

  // fan-based uniform init for projection matrices: U(-a, a), a = sqrt(6/(fan_in+fan_out))
  static Tensor xavier_uniform(Shape shape, Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform(std::move(shape), rng, -a, a);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t numel() const { return node_->values.size(); }

  const std::vector<T>& values() const { return node_->values; }
  std::vector<T>& mutable_values() { return node_->values; }

  T item() const {
    if (numel() != 1)
      throw NotScalar("expected scalar tensor, got shape " + shape_str(shape()));
    return node_->values[0];
  }

  T at(std::initializer_list<std::size_t> idx) const {
    std::size_t off = 0;
    std::size_t i = 0;
    for (auto v : idx) {
      off = off * node_->shape[i] + v;
      ++i;
    }
    return node_->values[off];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<T>& grad() const { return node_->grad; }
  std::vector<T>& mutable_grad() { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->values.size(), T(0)); }

  // Value copy with no graph attachment.
  Tensor detach() const {
    Tensor t = from(node_->shape, node_->values);
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(node_->values.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<U>(node_->values[i]);
    return Tensor<U>::from(node_->shape, std::move(v));
  }

  TensorNode<T>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<T>>& handle() const { return node_; }

  // Used by ops to construct outputs wired into the graph.
  static Tensor make_op_output(Shape shape, std::vector<T> values, std::vector<Tensor> parents,
                               decltype(TensorNode<T>::backward_fn) backward) {
    Tensor t = from(std::move(shape), std::move(values));
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    rg = rg && grad_mode_enabled();
    if (rg) {
      t.node_->requires_grad = true;
      t.node_->parents = std::move(parents);
      t.node_->backward_fn = std::move(backward);
    }
#ifndef NDEBUG
    for (const T& v : t.node_->values) {
      if (!std::isfinite(static_cast<double>(v)))
        throw InvalidArgument("non-finite value produced by forward op");
    }
#endif
    return t;
  }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeMismatch("rank-0 tensors are not supported");
    for (auto d : shape)
      if (d == 0) throw ShapeMismatch("degenerate shape " + shape_str(shape));
  }

  std::shared_ptr<TensorNode<T>> node_;
};

// Leaf gradients land here when a sink is supplied to backward(); keyed by
// node pointer. Used by the trainer to keep concurrent per-sample backward
// passes from touching shared parameter state.
template <typename T>
using GradMap = std::unordered_map<const TensorNode<T>*, std::vector<T>>;

// Topologically ordered record of the executed operations reachable from a
// root. Traversal order is fixed by construction order of the nodes.
template <typename T>
class Graph {
 public:
  static Graph build(const Tensor<T>& root) {
    Graph g;
    if (!root.defined()) throw InvalidArgument("backward on undefined tensor");
    std::unordered_map<const TensorNode<T>*, bool> state;  // false=open, true=done
    // iterative DFS post-order, children (parents) before node
    std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      auto it = state.find(node);
      if (it != state.end() && it->second) {
        stack.pop_back();
        continue;
      }
      if (next < node->parents.size()) {
        TensorNode<T>* p = node->parents[next].node();
        ++next;
        if (p->requires_grad && !state.count(p)) {
          state.emplace(p, false);
          stack.emplace_back(p, 0);
        }
      } else {
        state[node] = true;
        g.order_.push_back(node);
        stack.pop_back();
      }
    }
    return g;  // order_: parents before consumers; root last
  }

  const std::vector<TensorNode<T>*>& nodes() const { return order_; }

  // Reverse-topological sweep. Leaf grads accumulate into node->grad, or into
  // `sink` when given. `trace` (when given) records the visit order.
  void backward(const Tensor<T>& root, GradMap<T>* sink = nullptr,
                std::vector<std::uint64_t>* trace = nullptr) const {
    if (root.numel() != 1)
      throw NotScalar("backward requires a scalar root, got shape " + shape_str(root.shape()));
    if (!root.requires_grad()) return;

    std::unordered_map<const TensorNode<T>*, std::vector<T>> bufs;
    bufs[root.node()] = std::vector<T>{T(1)};

    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      TensorNode<T>* node = *it;
      if (trace) trace->push_back(node->id);
      auto bit = bufs.find(node);
      std::vector<T> gout;
      if (bit == bufs.end()) {
        gout.assign(node->numel(), T(0));  // reachable but received no contribution
      } else {
        gout = std::move(bit->second);
        bufs.erase(bit);
      }
      if (node->is_leaf()) {
        if (sink) {
          auto& acc = (*sink)[node];
          if (acc.empty()) acc.assign(node->numel(), T(0));
          for (std::size_t i = 0; i < gout.size(); ++i) acc[i] += gout[i];
        } else {
          if (node->grad.empty()) node->grad.assign(node->numel(), T(0));
          for (std::size_t i = 0; i < gout.size(); ++i) node->grad[i] += gout[i];
        }
        continue;
      }
      std::vector<std::vector<T>*> pgrads(node->parents.size(), nullptr);
      for (std::size_t i = 0; i < node->parents.size(); ++i) {
        TensorNode<T>* p = node->parents[i].node();
        if (!p->requires_grad) continue;
        auto& buf = bufs[p];
        if (buf.empty()) buf.assign(p->numel(), T(0));
        pgrads[i] = &buf;
      }
      node->backward_fn(gout, pgrads);
    }
  }

 private:
  std::vector<TensorNode<T>*> order_;
};

template <typename T>
void backward(const Tensor<T>& loss, GradMap<T>* sink = nullptr) {
  Graph<T>::build(loss).backward(loss, sink);
}

// Variant that checks the given leaves were actually reached; unreachable
// leaves get zero-filled grads and a warning on stderr.
template <typename T>
void backward_checked(const Tensor<T>& loss, const std::vector<Tensor<T>>& expected_leaves);

}  // namespace tokenpose

#endif
