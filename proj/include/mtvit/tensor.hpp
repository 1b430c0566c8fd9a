#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mtvit {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
class Tape;

// Dense n-d tensor. Handles share the underlying buffer; ops return fresh
// tensors. A tensor participates in autodiff either as a requires_grad leaf
// (gradient accumulates into its grad buffer) or as an op output recorded on
// the tape that was active when the op ran.
template <typename T>
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(shape_numel(shape_), T(0))) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(std::move(values))) {
    check_shape();
    if (data_->size() != shape_numel(shape_))
      throw std::invalid_argument("tensor data size " +
                                  std::to_string(data_->size()) +
                                  " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t size() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  const std::shared_ptr<std::vector<T>>& buffer() const { return data_; }
  const void* id() const { return data_.get(); }

  T& operator[](size_t i) { return (*data_)[i]; }
  const T& operator[](size_t i) const { return (*data_)[i]; }

  T& at(size_t i, size_t j) { return (*data_)[i * shape_[1] + j]; }
  const T& at(size_t i, size_t j) const { return (*data_)[i * shape_[1] + j]; }
  T& at(size_t i, size_t j, size_t k) {
    return (*data_)[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(size_t i, size_t j, size_t k) const {
    return (*data_)[(i * shape_[1] + j) * shape_[2] + k];
  }

  T item() const {
    if (size() != 1)
      throw std::invalid_argument("item() on tensor of shape " +
                                  shape_str(shape_));
    return (*data_)[0];
  }

  Tensor& set_requires_grad(bool on = true) {
    requires_grad_ = on;
    if (on && !grad_)
      grad_ = std::make_shared<std::vector<T>>(size(), T(0));
    return *this;
  }
  bool requires_grad() const { return requires_grad_; }

  // Leaf gradient, same shape as the value. Accumulated by backward().
  Tensor grad() const {
    if (!grad_) throw std::logic_error("grad() on tensor without gradient");
    Tensor g;
    g.shape_ = shape_;
    g.data_ = grad_;
    return g;
  }
  const std::shared_ptr<std::vector<T>>& grad_buffer() const { return grad_; }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

  // Same buffer, no autodiff participation.
  Tensor detach() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  // Tape linkage for op outputs; managed by Tape<T>.
  mutable uint64_t tape_id = 0;
  mutable int node = -1;

private:
  void check_shape() const {
    for (size_t e : shape_)
      if (e == 0)
        throw std::invalid_argument("zero extent in shape " +
                                    shape_str(shape_));
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> grad_;
  bool requires_grad_ = false;
};

// Reverse-mode gradient tape. Nodes are appended in execution order, so a
// reverse sweep visits every consumer before its producers. Backward rules
// capture the value buffers they need by shared_ptr.
template <typename T>
class Tape {
public:
  using BackwardFn = std::function<void(Tape&, const std::vector<T>&)>;

  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording(const Tensor<T>& t) const {
    return t.requires_grad() || (t.tape_id == id_ && t.node >= 0);
  }

  // Node id of `t` for use as a backward-rule input; -1 marks a constant.
  // requires_grad leaves get a node on first use, keyed by buffer identity so
  // every handle of the same parameter maps to one node.
  int input_node(const Tensor<T>& t) {
    if (t.tape_id == id_ && t.node >= 0) return t.node;
    if (!t.requires_grad()) return -1;
    auto it = leaf_nodes_.find(t.id());
    if (it != leaf_nodes_.end()) return it->second;
    Node n;
    n.size = t.size();
    n.leaf_grad = t.grad_buffer();
    nodes_.push_back(std::move(n));
    int nid = static_cast<int>(nodes_.size()) - 1;
    leaf_nodes_.emplace(t.id(), nid);
    return nid;
  }

  void record(const Tensor<T>& out, BackwardFn fn) {
    Node n;
    n.size = out.size();
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    out.tape_id = id_;
    out.node = static_cast<int>(nodes_.size()) - 1;
  }

  // Accumulation slot for a node's gradient, zero-initialized on first use.
  // Returns nullptr for constants so backward rules can skip the work.
  T* grad_slot(int node) {
    if (node < 0) return nullptr;
    Node& nd = nodes_[static_cast<size_t>(node)];
    if (nd.grad.empty()) nd.grad.assign(nd.size, T(0));
    return nd.grad.data();
  }

  void add_grad(int node, const T* g, size_t n) {
    if (T* dst = grad_slot(node))
      for (size_t i = 0; i < n; ++i) dst[i] += g[i];
  }
  void add_grad(int node, const std::vector<T>& g) {
    add_grad(node, g.data(), g.size());
  }

  // Reverse-topological accumulation from a scalar node. Leaf gradients are
  // flushed additively into the owning tensors' grad buffers.
  void run_backward(int from) {
    Node& seed = nodes_[static_cast<size_t>(from)];
    if (seed.size != 1)
      throw std::invalid_argument("backward() requires a scalar loss, got " +
                                  std::to_string(seed.size) + " elements");
    if (seed.grad.empty()) seed.grad.assign(1, T(0));
    seed.grad[0] += T(1);
    for (int i = from; i >= 0; --i) {
      Node& nd = nodes_[static_cast<size_t>(i)];
      if (nd.grad.empty()) continue;
      if (nd.leaf_grad) {
        T* dst = nd.leaf_grad->data();
        for (size_t j = 0; j < nd.size; ++j) dst[j] += nd.grad[j];
      } else if (nd.backward) {
        nd.backward(*this, nd.grad);
      }
      nd.grad.clear();
      nd.grad.shrink_to_fit();
    }
  }

  size_t num_nodes() const { return nodes_.size(); }
  uint64_t id() const { return id_; }

private:
  struct Node {
    size_t size = 0;
    BackwardFn backward;
    std::vector<T> grad;
    std::shared_ptr<std::vector<T>> leaf_grad;
  };

  static uint64_t next_id() {
    static uint64_t counter = 0;
    return ++counter;
  }

  uint64_t id_;
  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> leaf_nodes_;
};

template <typename T>
inline Tape<T>*& active_tape() {
  thread_local Tape<T>* t = nullptr;
  return t;
}

// RAII activation of a tape on the current thread. Ops record onto the
// innermost active tape; without one they run value-only.
template <typename T>
class TapeScope {
public:
  explicit TapeScope(Tape<T>& tape) : prev_(active_tape<T>()) {
    active_tape<T>() = &tape;
  }
  ~TapeScope() { active_tape<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

private:
  Tape<T>* prev_;
};

// Gradients of `loss` w.r.t. every requires_grad leaf reachable on its tape.
template <typename T>
inline void backward(const Tensor<T>& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward() requires a scalar loss, got shape " +
                                shape_str(loss.shape()));
  Tape<T>* tape = active_tape<T>();
  if (!tape || loss.node < 0 || loss.tape_id != tape->id())
    throw std::invalid_argument("backward() on a tensor that is not on the active tape");
  tape->run_backward(loss.node);
}

[[noreturn]] inline void throw_shape_mismatch(const char* op, const Shape& a,
                                              const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              shape_str(a) + " vs " + shape_str(b));
}

}  // namespace mtvit
