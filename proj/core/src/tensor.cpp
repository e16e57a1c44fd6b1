#include "fedadapt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fedadapt {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

using detail::TensorNode;

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<real> values) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return node;
}

[[noreturn]] void shape_error(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

void check_rank2(const char* op, const Tensor& t, const char* name) {
  if (t.rank() != 2)
    shape_error(op, std::string(name) + " must be rank 2, got " +
                        shape_str(t.shape()));
}

// Resolves the tape shared by the inputs. Mixing tapes is a context
// violation; a grad-tracked input with no tape is a usage bug.
template <typename... Ts>
Tape* resolve_tape(const char* op, const Ts&... inputs) {
  Tape* tape = nullptr;
  bool any_grad = false;
  auto visit = [&](const Tensor& t) {
    any_grad = any_grad || t.requires_grad();
    if (t.tape() == nullptr) return;
    if (tape != nullptr && tape != t.tape())
      shape_error(op, "operands belong to different tapes");
    tape = t.tape();
  };
  (visit(inputs), ...);
  if (any_grad && tape == nullptr)
    shape_error(op, "operand requires grad but is not bound to a tape");
  return tape;
}

template <typename... Ts>
bool any_requires_grad(const Ts&... inputs) {
  return (inputs.requires_grad() || ...);
}

}  // namespace

namespace detail {
Tensor wrap_node(std::shared_ptr<TensorNode> node) {
  return Tensor(std::move(node));
}
}  // namespace detail

Tensor Tensor::zeros(Shape shape) {
  std::size_t n = shape_size(shape);
  return Tensor(make_node(std::move(shape), std::vector<real>(n, real(0))));
}

Tensor Tensor::full(Shape shape, real v) {
  std::size_t n = shape_size(shape);
  return Tensor(make_node(std::move(shape), std::vector<real>(n, v)));
}

Tensor Tensor::from(Shape shape, std::vector<real> values) {
  if (shape_size(shape) != values.size())
    throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) +
                                " does not match " +
                                std::to_string(values.size()) + " values");
  return Tensor(make_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(real v) { return from({}, {v}); }

real Tensor::at(std::size_t i, std::size_t j) const {
  return node_->value[i * node_->shape[1] + j];
}

real& Tensor::at(std::size_t i, std::size_t j) {
  return node_->value[i * node_->shape[1] + j];
}

real Tensor::item() const {
  if (size() != 1)
    throw std::invalid_argument("Tensor::item: size " +
                                std::to_string(size()) + " != 1");
  return node_->value[0];
}

void Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (on)
    node_->grad.assign(node_->value.size(), real(0));
  else
    node_->grad.clear();
}

const std::vector<real>& Tensor::grad() const {
  if (!node_->requires_grad)
    throw std::logic_error("Tensor::grad: tensor does not require grad");
  return node_->grad;
}

std::vector<real>& Tensor::grad() {
  if (!node_->requires_grad)
    throw std::logic_error("Tensor::grad: tensor does not require grad");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->requires_grad) node_->grad.assign(node_->value.size(), real(0));
}

Tensor Tensor::clone(Tape* tape) const {
  auto node = make_node(node_->shape, node_->value);
  node->tape = tape;
  node->requires_grad = node_->requires_grad;
  if (node->requires_grad) node->grad.assign(node->value.size(), real(0));
  return Tensor(std::move(node));
}

void Tape::record(std::shared_ptr<detail::TensorNode> out,
                  std::function<void()> vjp) {
  ops_.push_back({std::move(out), std::move(vjp)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  if (!loss.requires_grad() || loss.tape() != this)
    throw std::invalid_argument("backward: loss is not recorded on this tape");
  // Intermediate grads are owned by the tape and reset per sweep; leaf
  // grads are owned by the caller and accumulate.
  for (auto& op : ops_) std::fill(op.out->grad.begin(), op.out->grad.end(), real(0));
  loss.node()->grad[0] = real(1);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->vjp();
}

void backward(const Tensor& loss) {
  if (loss.tape() == nullptr)
    throw std::invalid_argument("backward: loss is not bound to a tape");
  loss.tape()->backward(loss);
}

// ---- op plumbing ----------------------------------------------------------

namespace {

// Creates the output tensor for an op and, when tracking is on, records
// the vjp closure. The closure builder receives the output node so the
// rule can read out->grad.
template <typename MakeVjp, typename... Inputs>
Tensor finish_op(const char* op, Shape out_shape, std::vector<real> out_values,
                 MakeVjp&& make_vjp, const Inputs&... inputs) {
  Tape* tape = resolve_tape(op, inputs...);
  bool track = tape != nullptr && tape->recording() &&
               any_requires_grad(inputs...);
  auto node = make_node(std::move(out_shape), std::move(out_values));
  node->tape = tape;
  if (track) {
    node->requires_grad = true;
    node->grad.assign(node->value.size(), real(0));
    tape->record(node, make_vjp(node));
  }
  return detail::wrap_node(std::move(node));
}

void accumulate(std::vector<real>& dst, const std::vector<real>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

// ---- matmul / transpose ---------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2("matmul", a, "lhs");
  check_rank2("matmul", b, "rhs");
  const std::size_t m = a.extent(0), k = a.extent(1);
  const std::size_t k2 = b.extent(0), n = b.extent(1);
  if (k != k2)
    shape_error("matmul", "inner extents differ: " + shape_str(a.shape()) +
                              " vs " + shape_str(b.shape()));
  std::vector<real> out(m * n, real(0));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const real ail = av[i * k + l];
      if (ail == real(0)) continue;
      const real* brow = bv.data() + l * n;
      real* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += ail * brow[j];
    }
  auto an = a.node();
  auto bn = b.node();
  return finish_op(
      "matmul", {m, n}, std::move(out),
      [an, bn, m, k, n](const std::shared_ptr<detail::TensorNode>& o) {
        return [an, bn, o, m, k, n]() {
          const auto& dy = o->grad;
          if (an->requires_grad) {
            // dA = dC * B^T
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t l = 0; l < k; ++l) {
                real acc = 0;
                const real* dyrow = dy.data() + i * n;
                const real* brow = bn->value.data() + l * n;
                for (std::size_t j = 0; j < n; ++j) acc += dyrow[j] * brow[j];
                an->grad[i * k + l] += acc;
              }
          }
          if (bn->requires_grad) {
            // dB = A^T * dC
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t l = 0; l < k; ++l) {
                const real ail = an->value[i * k + l];
                if (ail == real(0)) continue;
                const real* dyrow = dy.data() + i * n;
                real* dbrow = bn->grad.data() + l * n;
                for (std::size_t j = 0; j < n; ++j) dbrow[j] += ail * dyrow[j];
              }
          }
        };
      },
      a, b);
}

Tensor transpose(const Tensor& x) {
  check_rank2("transpose", x, "input");
  const std::size_t m = x.extent(0), n = x.extent(1);
  std::vector<real> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.values()[i * n + j];
  auto xn = x.node();
  return finish_op(
      "transpose", {n, m}, std::move(out),
      [xn, m, n](const std::shared_ptr<detail::TensorNode>& o) {
        return [xn, o, m, n]() {
          if (!xn->requires_grad) return;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              xn->grad[i * n + j] += o->grad[j * m + i];
        };
      },
      x);
}

// ---- elementwise ----------------------------------------------------------

namespace {

enum class Broadcast { equal, a_scalar, b_scalar };

Broadcast classify_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::equal;
  if (a.size() == 1) return Broadcast::a_scalar;
  if (b.size() == 1) return Broadcast::b_scalar;
  shape_error(op, "incompatible shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast bc = classify_broadcast("add", a, b);
  const Tensor& big = bc == Broadcast::a_scalar ? b : a;
  std::vector<real> out(big.size());
  switch (bc) {
    case Broadcast::equal:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.values()[i] + b.values()[i];
      break;
    case Broadcast::a_scalar:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.values()[0] + b.values()[i];
      break;
    case Broadcast::b_scalar:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.values()[i] + b.values()[0];
      break;
  }
  auto an = a.node();
  auto bn = b.node();
  return finish_op(
      "add", big.shape(), std::move(out),
      [an, bn](const std::shared_ptr<detail::TensorNode>& o) {
        return [an, bn, o]() {
          const auto& dy = o->grad;
          if (an->requires_grad) {
            if (an->grad.size() == dy.size())
              accumulate(an->grad, dy);
            else
              for (real g : dy) an->grad[0] += g;
          }
          if (bn->requires_grad) {
            if (bn->grad.size() == dy.size())
              accumulate(bn->grad, dy);
            else
              for (real g : dy) bn->grad[0] += g;
          }
        };
      },
      a, b);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast bc = classify_broadcast("mul", a, b);
  const Tensor& big = bc == Broadcast::a_scalar ? b : a;
  std::vector<real> out(big.size());
  switch (bc) {
    case Broadcast::equal:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.values()[i] * b.values()[i];
      break;
    case Broadcast::a_scalar:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.values()[0] * b.values()[i];
      break;
    case Broadcast::b_scalar:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.values()[i] * b.values()[0];
      break;
  }
  auto an = a.node();
  auto bn = b.node();
  return finish_op(
      "mul", big.shape(), std::move(out),
      [an, bn](const std::shared_ptr<detail::TensorNode>& o) {
        return [an, bn, o]() {
          const auto& dy = o->grad;
          const bool a_small = an->value.size() == 1 && dy.size() > 1;
          const bool b_small = bn->value.size() == 1 && dy.size() > 1;
          if (an->requires_grad) {
            if (a_small)
              for (std::size_t i = 0; i < dy.size(); ++i)
                an->grad[0] += dy[i] * bn->value[i];
            else if (b_small)
              for (std::size_t i = 0; i < dy.size(); ++i)
                an->grad[i] += dy[i] * bn->value[0];
            else
              for (std::size_t i = 0; i < dy.size(); ++i)
                an->grad[i] += dy[i] * bn->value[i];
          }
          if (bn->requires_grad) {
            if (b_small)
              for (std::size_t i = 0; i < dy.size(); ++i)
                bn->grad[0] += dy[i] * an->value[i];
            else if (a_small)
              for (std::size_t i = 0; i < dy.size(); ++i)
                bn->grad[i] += dy[i] * an->value[0];
            else
              for (std::size_t i = 0; i < dy.size(); ++i)
                bn->grad[i] += dy[i] * an->value[i];
          }
        };
      },
      a, b);
}

Tensor scale(const Tensor& x, real c) {
  std::vector<real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * c;
  auto xn = x.node();
  return finish_op(
      "scale", x.shape(), std::move(out),
      [xn, c](const std::shared_ptr<detail::TensorNode>& o) {
        return [xn, o, c]() {
          if (!xn->requires_grad) return;
          for (std::size_t i = 0; i < o->grad.size(); ++i)
            xn->grad[i] += o->grad[i] * c;
        };
      },
      x);
}

namespace {

template <typename Fwd, typename Dfwd>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd, Dfwd dfwd) {
  std::vector<real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.values()[i]);
  auto xn = x.node();
  return finish_op(
      name, x.shape(), std::move(out),
      [xn, dfwd](const std::shared_ptr<detail::TensorNode>& o) {
        return [xn, o, dfwd]() {
          if (!xn->requires_grad) return;
          for (std::size_t i = 0; i < o->grad.size(); ++i)
            xn->grad[i] += o->grad[i] * dfwd(xn->value[i], o->value[i]);
        };
      },
      x);
}

real sigmoid_scalar(real v) { return real(1) / (real(1) + std::exp(-v)); }

}  // namespace

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](real v) { return v > real(0) ? v : real(0); },
      [](real v, real) { return v > real(0) ? real(1) : real(0); });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x, sigmoid_scalar,
      [](real, real y) { return y * (real(1) - y); });
}

Tensor swish(const Tensor& x) {
  return unary_op(
      "swish", x, [](real v) { return v * sigmoid_scalar(v); },
      [](real v, real) {
        const real s = sigmoid_scalar(v);
        return s + v * s * (real(1) - s);
      });
}

// ---- structured ops -------------------------------------------------------

Tensor add_bias(const Tensor& x, const Tensor& b) {
  check_rank2("add_bias", x, "input");
  if (b.rank() != 1 || b.extent(0) != x.extent(1))
    shape_error("add_bias", "bias " + shape_str(b.shape()) +
                                " does not match input " +
                                shape_str(x.shape()));
  const std::size_t m = x.extent(0), n = x.extent(1);
  std::vector<real> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = x.values()[i * n + j] + b.values()[j];
  auto xn = x.node();
  auto bn = b.node();
  return finish_op(
      "add_bias", x.shape(), std::move(out),
      [xn, bn, m, n](const std::shared_ptr<detail::TensorNode>& o) {
        return [xn, bn, o, m, n]() {
          if (xn->requires_grad) accumulate(xn->grad, o->grad);
          if (bn->requires_grad)
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < n; ++j)
                bn->grad[j] += o->grad[i * n + j];
        };
      },
      x, b);
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 real eps) {
  if (x.rank() < 1) shape_error("layernorm", "input must have rank >= 1");
  const std::size_t d = x.extent(x.rank() - 1);
  if (d < 1) shape_error("layernorm", "last extent must be >= 1");
  if (gain.rank() != 1 || gain.extent(0) != d || bias.rank() != 1 ||
      bias.extent(0) != d)
    shape_error("layernorm", "gain/bias must be [" + std::to_string(d) + "]");
  const std::size_t rows = x.size() / d;
  std::vector<real> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const real* xr = x.values().data() + r * d;
    real mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= real(d);
    real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= real(d);
    const real inv = real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j)
      out[r * d + j] = (xr[j] - mean) * inv * gain.values()[j] +
                       bias.values()[j];
  }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return finish_op(
      "layernorm", x.shape(), std::move(out),
      [xn, gn, bn, d, rows, eps](const std::shared_ptr<detail::TensorNode>& o) {
        return [xn, gn, bn, o, d, rows, eps]() {
          for (std::size_t r = 0; r < rows; ++r) {
            const real* xr = xn->value.data() + r * d;
            const real* dyr = o->grad.data() + r * d;
            real mean = 0;
            for (std::size_t j = 0; j < d; ++j) mean += xr[j];
            mean /= real(d);
            real var = 0;
            for (std::size_t j = 0; j < d; ++j)
              var += (xr[j] - mean) * (xr[j] - mean);
            var /= real(d);
            const real inv = real(1) / std::sqrt(var + eps);
            real sum_dxhat = 0, dot_dxhat_xhat = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const real xhat = (xr[j] - mean) * inv;
              const real dxhat = dyr[j] * gn->value[j];
              sum_dxhat += dxhat;
              dot_dxhat_xhat += dxhat * xhat;
            }
            for (std::size_t j = 0; j < d; ++j) {
              const real xhat = (xr[j] - mean) * inv;
              if (xn->requires_grad) {
                const real dxhat = dyr[j] * gn->value[j];
                xn->grad[r * d + j] +=
                    inv * (dxhat - sum_dxhat / real(d) -
                           xhat * dot_dxhat_xhat / real(d));
              }
              if (gn->requires_grad) gn->grad[j] += dyr[j] * xhat;
              if (bn->requires_grad) bn->grad[j] += dyr[j];
            }
          }
        };
      },
      x, gain, bias);
}

Tensor softmax_rows(const Tensor& x) {
  check_rank2("softmax_rows", x, "input");
  const std::size_t m = x.extent(0), n = x.extent(1);
  std::vector<real> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const real* xr = x.values().data() + i * n;
    real mx = xr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    real z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(xr[j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  auto xn = x.node();
  return finish_op(
      "softmax_rows", x.shape(), std::move(out),
      [xn, m, n](const std::shared_ptr<detail::TensorNode>& o) {
        return [xn, o, m, n]() {
          if (!xn->requires_grad) return;
          for (std::size_t i = 0; i < m; ++i) {
            const real* y = o->value.data() + i * n;
            const real* dy = o->grad.data() + i * n;
            real dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
            for (std::size_t j = 0; j < n; ++j)
              xn->grad[i * n + j] += y[j] * (dy[j] - dot);
          }
        };
      },
      x);
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_rank2("depthwise_conv1d", x, "input");
  check_rank2("depthwise_conv1d", w, "kernel");
  const std::size_t T = x.extent(0), d = x.extent(1);
  const std::size_t k = w.extent(0);
  if (w.extent(1) != d)
    shape_error("depthwise_conv1d", "kernel channels " + shape_str(w.shape()) +
                                        " do not match input " +
                                        shape_str(x.shape()));
  if (b.rank() != 1 || b.extent(0) != d)
    shape_error("depthwise_conv1d", "bias must be [" + std::to_string(d) + "]");
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  std::vector<real> out(T * d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < d; ++c) {
      real acc = b.values()[c];
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src =
            static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) -
            pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
        acc += w.values()[j * d + c] * x.values()[src * d + c];
      }
      out[t * d + c] = acc;
    }
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return finish_op(
      "depthwise_conv1d", x.shape(), std::move(out),
      [xn, wn, bn, T, d, k, pad](const std::shared_ptr<detail::TensorNode>& o) {
        return [xn, wn, bn, o, T, d, k, pad]() {
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = 0; c < d; ++c) {
              const real g = o->grad[t * d + c];
              if (g == real(0)) continue;
              if (bn->requires_grad) bn->grad[c] += g;
              for (std::size_t j = 0; j < k; ++j) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) +
                                           static_cast<std::ptrdiff_t>(j) - pad;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
                if (wn->requires_grad)
                  wn->grad[j * d + c] += g * xn->value[src * d + c];
                if (xn->requires_grad)
                  xn->grad[src * d + c] += g * wn->value[j * d + c];
              }
            }
        };
      },
      x, w, b);
}

Tensor sum(const Tensor& x) {
  real acc = 0;
  for (real v : x.values()) acc += v;
  auto xn = x.node();
  return finish_op(
      "sum", {}, {acc},
      [xn](const std::shared_ptr<detail::TensorNode>& o) {
        return [xn, o]() {
          if (!xn->requires_grad) return;
          for (real& g : xn->grad) g += o->grad[0];
        };
      },
      x);
}

Tensor softmax_xent(const Tensor& logits, const std::vector<int>& labels,
                    const std::vector<bool>& mask) {
  check_rank2("softmax_xent", logits, "logits");
  const std::size_t n = logits.extent(0), V = logits.extent(1);
  if (labels.size() != n || mask.size() != n)
    shape_error("softmax_xent", "labels/mask length must equal " +
                                    std::to_string(n) + " rows");
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++count;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= V)
      shape_error("softmax_xent", "label " + std::to_string(labels[i]) +
                                      " out of range [0," + std::to_string(V) +
                                      ")");
  }
  if (count == 0)
    throw std::invalid_argument("softmax_xent: mask selects no positions");
  real loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const real* z = logits.values().data() + i * V;
    real mx = z[0];
    for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, z[j]);
    real lse = 0;
    for (std::size_t j = 0; j < V; ++j) lse += std::exp(z[j] - mx);
    lse = mx + std::log(lse);
    loss += lse - z[labels[i]];
  }
  loss /= real(count);
  auto ln = logits.node();
  return finish_op(
      "softmax_xent", {}, {loss},
      [ln, labels, mask, n, V,
       count](const std::shared_ptr<detail::TensorNode>& o) {
        return [ln, labels, mask, o, n, V, count]() {
          if (!ln->requires_grad) return;
          const real gout = o->grad[0] / real(count);
          for (std::size_t i = 0; i < n; ++i) {
            if (!mask[i]) continue;
            const real* z = ln->value.data() + i * V;
            real mx = z[0];
            for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, z[j]);
            real zsum = 0;
            for (std::size_t j = 0; j < V; ++j) zsum += std::exp(z[j] - mx);
            for (std::size_t j = 0; j < V; ++j) {
              real p = std::exp(z[j] - mx) / zsum;
              if (j == static_cast<std::size_t>(labels[i])) p -= real(1);
              ln->grad[i * V + j] += gout * p;
            }
          }
        };
      },
      logits);
}

}  // namespace fedadapt
