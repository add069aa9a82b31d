#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "epd/pool.hpp"

namespace epd {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
class Tape;

template <class T>
using Buffer = std::vector<T, PoolAllocator<T>>;

/// Shape-carrying array with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage, which is how a
/// tape node refers back to its inputs. Use clone() for a deep copy.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, const std::vector<T>& data, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad) {}

  Tensor(Shape shape, Buffer<T> data, bool requires_grad = false) : impl_(std::make_shared<Storage>()) {
    if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one dimension");
    for (auto d : shape) {
      if (d == 0) throw std::invalid_argument("tensor dimensions must be positive, got " + epd::to_string(shape));
    }
    if (epd::numel(shape) != data.size()) {
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + epd::to_string(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = epd::numel(shape);
    return Tensor(std::move(shape), Buffer<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = epd::numel(shape);
    return Tensor(std::move(shape), Buffer<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) { return full({1}, value, requires_grad); }

  [[nodiscard]] bool defined() const noexcept { return impl_ != nullptr; }
  [[nodiscard]] const Shape& shape() const { return impl_->shape; }
  [[nodiscard]] std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  [[nodiscard]] std::size_t rank() const { return impl_->shape.size(); }
  [[nodiscard]] std::size_t numel() const { return impl_->data.size(); }

  [[nodiscard]] std::span<T> data() { return impl_->data; }
  [[nodiscard]] std::span<const T> data() const { return impl_->data; }
  [[nodiscard]] T* raw() { return impl_->data.data(); }
  [[nodiscard]] const T* raw() const { return impl_->data.data(); }

  [[nodiscard]] T item() const {
    if (numel() != 1) throw std::invalid_argument("item() requires a single-element tensor, got " + epd::to_string(shape()));
    return impl_->data[0];
  }

  [[nodiscard]] bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }

  /// Only leaves may toggle gradient tracking; dropping it also drops the buffer.
  void set_requires_grad(bool on) {
    if (!impl_->leaf) throw std::logic_error("set_requires_grad on a non-leaf tensor");
    impl_->requires_grad = on;
    if (!on) impl_->grad.reset();
  }

  [[nodiscard]] bool is_leaf() const noexcept { return impl_->leaf; }
  [[nodiscard]] bool has_grad() const noexcept { return impl_ && impl_->grad.has_value(); }

  [[nodiscard]] std::span<const T> grad() const {
    if (!impl_->grad) throw std::logic_error("tensor has no gradient buffer");
    return *impl_->grad;
  }
  [[nodiscard]] std::span<T> grad() {
    if (!impl_->grad) throw std::logic_error("tensor has no gradient buffer");
    return *impl_->grad;
  }

  /// Zero-initialised gradient buffer, allocated on first use. Const because
  /// it mutates the shared storage, not the handle.
  std::span<T> grad_buffer() const {
    if (!impl_->requires_grad) throw std::logic_error("gradient requested for a tensor without requires_grad");
    if (!impl_->grad) impl_->grad.emplace(impl_->data.size(), T(0));
    return *impl_->grad;
  }

  void zero_grad() {
    if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), T(0));
  }
  void clear_grad() { impl_->grad.reset(); }

  [[nodiscard]] std::optional<std::size_t> node() const noexcept { return impl_ ? impl_->node : std::nullopt; }

  [[nodiscard]] Tensor clone() const {
    Tensor out(impl_->shape, impl_->data, impl_->requires_grad);
    return out;
  }

  /// Same storage (not value equality).
  [[nodiscard]] bool same(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  struct Storage {
    Shape shape;
    Buffer<T> data;
    bool requires_grad = false;
    bool leaf = true;
    std::optional<Buffer<T>> grad;
    std::optional<std::size_t> node;
  };

  friend class Tape<T>;

  std::shared_ptr<Storage> impl_;
};

enum class OpKind {
  Conv1d,
  Dense,
  Relu,
  ResidualAdd,
  Mul,
  GlobalAvgPool,
  L1Loss,
  WeightStandardize,
  BatchNorm,
  Reshape,
};

inline const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::Conv1d: return "conv1d";
    case OpKind::Dense: return "dense";
    case OpKind::Relu: return "relu";
    case OpKind::ResidualAdd: return "residual_add";
    case OpKind::Mul: return "mul";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::L1Loss: return "l1_loss";
    case OpKind::WeightStandardize: return "weight_standardize";
    case OpKind::BatchNorm: return "batch_norm";
    case OpKind::Reshape: return "reshape";
  }
  return "?";
}

/// Records operations in execution order for reverse-mode differentiation.
///
/// Node ids are indices into the node list, so inputs always precede their
/// consumers. A disabled tape records nothing (inference mode).
template <class T>
class Tape {
 public:
  using Backward = std::function<void(std::span<const T> grad_out)>;

  struct Node {
    OpKind kind;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;  // released after backward unless intermediates are kept
    Backward backward;
  };

  explicit Tape(bool enabled = true) : enabled_(enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  [[nodiscard]] bool enabled() const noexcept { return enabled_; }
  void set_enabled(bool on) noexcept { enabled_ = on; }

  /// True when an op over these inputs must be recorded.
  [[nodiscard]] bool should_record(std::initializer_list<const Tensor<T>*> inputs) const {
    if (!enabled_) return false;
    for (const auto* t : inputs) {
      if (t && t->defined() && t->requires_grad()) return true;
    }
    return false;
  }

  std::size_t record(OpKind kind, std::vector<Tensor<T>> inputs, Tensor<T>& output, Backward backward) {
    const std::size_t id = nodes_.size();
    output.impl_->requires_grad = true;
    output.impl_->leaf = false;
    output.impl_->node = id;
    nodes_.push_back(Node{kind, std::move(inputs), output, std::move(backward)});
    return id;
  }

  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
  [[nodiscard]] const std::vector<Node>& nodes() const noexcept { return nodes_; }

  /// Number of nodes whose backward ran during the last backward().
  [[nodiscard]] std::size_t last_backward_visits() const noexcept { return visits_; }

  void clear() {
    nodes_.clear();
    visits_ = 0;
  }

  /// Populates dLoss/dTensor for every requires_grad tensor reachable from
  /// loss. Gradients accumulate into existing buffers. Intermediate gradient
  /// buffers and saved values are released as the sweep passes them unless
  /// keep_intermediate_grads is set; the tape is spent afterwards.
  void backward(Tensor<T>& loss, bool keep_intermediate_grads = false) {
    if (!loss.defined() || loss.numel() != 1) {
      throw std::invalid_argument("backward requires a scalar loss");
    }
    const auto id = loss.node();
    if (!id || *id >= nodes_.size() || !nodes_[*id].output.same(loss)) {
      throw std::invalid_argument("loss was not recorded on this tape");
    }
    loss.grad_buffer()[0] += T(1);
    visits_ = 0;
    for (std::size_t i = *id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.backward) continue;
      if (node.output.has_grad()) {
        node.backward(node.output.grad());
        ++visits_;
      }
      node.backward = nullptr;
      node.inputs.clear();
      if (!keep_intermediate_grads && i != *id) {
        node.output.clear_grad();
        node.output = Tensor<T>{};
      }
    }
  }

 private:
  std::vector<Node> nodes_;
  bool enabled_ = true;
  std::size_t visits_ = 0;
};

/// Free-function form of Tape::backward.
template <class T>
void backward(Tensor<T>& loss, Tape<T>& tape, bool keep_intermediate_grads = false) {
  tape.backward(loss, keep_intermediate_grads);
}

}  // namespace epd
