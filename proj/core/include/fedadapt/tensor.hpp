#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace fedadapt {

#ifdef FEDADAPT_REAL32
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

class Tensor;

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<real> value;
  std::vector<real> grad;  // sized iff requires_grad
  bool requires_grad = false;
  Tape* tape = nullptr;
};
Tensor wrap_node(std::shared_ptr<TensorNode> node);
}  // namespace detail

// Dense n-dimensional array of real values, row-major. Copying a Tensor
// copies the handle; clone() copies the storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, real v);
  static Tensor from(Shape shape, std::vector<real> values);
  static Tensor scalar(real v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape[axis]; }
  std::size_t size() const { return node_->value.size(); }

  std::vector<real>& values() { return node_->value; }
  const std::vector<real>& values() const { return node_->value; }
  real at(std::size_t i) const { return node_->value[i]; }
  real& at(std::size_t i) { return node_->value[i]; }
  real at(std::size_t i, std::size_t j) const;
  real& at(std::size_t i, std::size_t j);
  real item() const;  // requires size() == 1

  bool requires_grad() const { return node_->requires_grad; }
  // Enables or disables gradient accumulation on this leaf. Enabling
  // allocates a zeroed grad buffer; disabling drops it.
  void set_requires_grad(bool on);
  const std::vector<real>& grad() const;
  std::vector<real>& grad();
  void zero_grad();

  Tape* tape() const { return node_->tape; }
  void bind_tape(Tape* tape) { node_->tape = tape; }

  // Deep copy of values (and requires_grad flag), detached from any
  // recorded history, bound to the given tape.
  Tensor clone(Tape* tape = nullptr) const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend class Tape;
  friend Tensor detail::wrap_node(std::shared_ptr<detail::TensorNode> node);
};

// Ordered record of executed primitives. Replaying the vector-Jacobian
// rules in reverse order implements backward(). One tape per execution
// context; tensors from different tapes must not mix in one op.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }
  std::size_t num_ops() const { return ops_.size(); }

  // Drop all recorded ops. Leaf tensors stay alive; intermediate values
  // recorded by ops are released.
  void rewind() { ops_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays vector-Jacobian rules in
  // reverse. Gradients accumulate additively into leaf grad buffers;
  // the caller owns resetting them between steps.
  void backward(const Tensor& loss);

  void record(std::shared_ptr<detail::TensorNode> out,
              std::function<void()> vjp);

 private:
  struct OpRecord {
    std::shared_ptr<detail::TensorNode> out;
    std::function<void()> vjp;
  };
  std::vector<OpRecord> ops_;
  bool recording_ = true;
};

// Pauses recording on a tape for the guard's lifetime (evaluation mode).
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape* tape) : tape_(tape) {
    if (tape_) {
      prev_ = tape_->recording();
      tape_->set_recording(false);
    }
  }
  ~NoGradGuard() {
    if (tape_) tape_->set_recording(prev_);
  }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* tape_ = nullptr;
  bool prev_ = false;
};

// ---- primitives -----------------------------------------------------------
// Every primitive checks shapes, computes the forward value, and (when any
// input requires grad and the resolved tape is recording) registers its
// vector-Jacobian rule.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);  // equal shape or scalar-vs-tensor
Tensor mul(const Tensor& a, const Tensor& b);  // same broadcasting as add
Tensor scale(const Tensor& x, real c);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor swish(const Tensor& x);

Tensor add_bias(const Tensor& x, const Tensor& b);  // [m,n] + [n], per row
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 real eps);
Tensor softmax_rows(const Tensor& x);
Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor sum(const Tensor& x);

// Mean cross-entropy over masked rows of [n, V] logits.
Tensor softmax_xent(const Tensor& logits, const std::vector<int>& labels,
                    const std::vector<bool>& mask);

// Convenience: loss.tape()->backward(loss).
void backward(const Tensor& loss);

}  // namespace fedadapt
