#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major arrays.
//
// A Tape owns every node created during a forward pass. Vars are lightweight
// handles (tape pointer + node index). Nodes whose inputs do not require
// gradients store no backward closure, so forward-only evaluation over a
// frozen checkpoint costs little more than plain arithmetic.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace uocl::ad {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Raised by every operation whose operand shapes are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string_view op, const Shape& lhs, const Shape& rhs);
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// Misuse of the graph: non-scalar loss, second backward, foreign vars.
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> values);

  static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }
  static Array matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  // 2-D helpers; rank-1 arrays are treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double item() const;

  bool has_grad() const { return !grad_.empty(); }
  std::span<const double> grad() const { return grad_; }
  std::span<double> grad() { return grad_; }
  void ensure_grad();
  void clear_grad() { grad_.clear(); }

  bool operator==(const Array& other) const {
    return shape_ == other.shape_ && values_ == other.values_;
  }

 private:
  Shape shape_;
  std::vector<double> values_;
  std::vector<double> grad_;
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Array& value() const;
  std::span<const double> grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  struct Node {
    std::string_view op;
    Array data;  // value + grad
    std::vector<std::size_t> inputs;
    std::function<void(Tape&, std::size_t)> backward;
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value);
  Var leaf(Array value, bool trainable = true);

  /// Records a new node. `backward` receives (tape, own node id) and must
  /// accumulate into the grads of its inputs; it is dropped when no input
  /// requires gradients.
  Var record(std::string_view op, Array value, std::vector<std::size_t> inputs,
             std::function<void(Tape&, std::size_t)> backward);

  /// Populates grads of every trainable leaf with d loss / d leaf.
  /// A second call on the same tape is rejected.
  void backward(Var loss);

  Node& node(std::size_t id) { return nodes_.at(id); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  // Gradient accumulation helper for backward closures.
  std::span<double> grad_of(std::size_t id);

 private:
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// ---- forward operations ------------------------------------------------

Var matmul(Var a, Var b);            // (n×k)·(k×m)
Var matmul_nt(Var a, Var b);         // (n×k)·(m×k)ᵀ
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);               // elementwise, same shape
Var scale(Var a, double s);
Var add_bias(Var a, Var bias);       // (n×m) + broadcast (m)
Var tanh(Var a);
Var relu(Var a);
Var softmax(Var a);                  // row-wise
Var log_softmax(Var a);              // row-wise
Var embedding(Var table, std::span<const int> ids);
Var concat_cols(Var a, Var b);
Var mask(Var a, const Array& mask);  // elementwise multiply by a constant
Var sum(Var a);
Var mean(Var a);
/// Sum of a[r, cols[r]] over rows.
Var pick_sum(Var a, std::span<const int> cols);
/// Depthwise 1-D convolution along rows (time), zero "same" padding.
/// kernel is (width × channels) with odd width.
Var depthwise_conv1d(Var x, Var kernel);
/// softmax(q kᵀ / sqrt(d)) v
Var attention(Var q, Var k, Var v);

// ---- optimizer ----------------------------------------------------------

class Checkpoint;
/// θ ← θ − lr·∇θ, then clears the gradient. Throws if no gradient is present.
void sgd_step(Checkpoint& params, double lr);

}  // namespace uocl::ad
