#pragma once

// Minimal reverse-mode automatic differentiation over dense vectors and
// row-major matrices. Only the operations the agents and probe classifiers
// need are provided.
//
// Values live in an arena owned by the Tape, so spans returned by Var::value()
// are only valid until the next operation is recorded.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace fruitcomm {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 1;

  std::size_t size() const { return rows * cols; }
  bool is_vector() const { return cols == 1; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr && id_ != kNone; }
  std::uint32_t id() const { return id_; }
  Tape* tape() const { return tape_; }

  Shape shape() const;
  std::size_t size() const { return shape().size(); }
  std::span<const double> value() const;
  std::span<const double> grad() const;
  /// Value of a single-element node.
  double item() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = kNone;
};

enum class Op : std::uint8_t {
  constant,
  parameter,
  linear,
  matvec,
  add,
  sub,
  mul,
  scale,
  tanh,
  concat,
  embedding,
  softmax,
  log_softmax,
  log_prob_logits,
  log,
  pick,
  sum,
  square,
};

class Tape {
 public:
  /// With record_gradients = false the tape only evaluates; backward() throws.
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool recording() const { return recording_; }
  std::size_t node_count() const { return nodes_.size(); }

  Var constant(std::span<const double> values, Shape shape);
  Var constant(std::span<const double> values) { return constant(values, Shape{values.size(), 1}); }
  Var zeros(Shape shape);

  /// Leaf whose value is read in place. Gradients are added into `grad`
  /// (same size as `values`) by backward(); with an empty span they are kept
  /// on the tape instead.
  Var parameter(std::span<const double> values, Shape shape, std::span<double> grad = {});

  /// w * x + b, with w of shape (out, in) and x a vector of size in.
  Var linear(Var x, Var w, Var b);
  Var matvec(Var w, Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var tanh(Var a);
  Var concat(std::span<const Var> parts);
  Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }
  /// Row `row` of a (rows, cols) table, as a vector.
  Var embedding(Var table, std::size_t row);
  /// tanh(w_ih x + w_hh h_prev + b): one step of an Elman RNN.
  Var rnn_cell(Var h_prev, Var x, Var w_ih, Var w_hh, Var b);
  Var softmax(Var logits);
  Var log_softmax(Var logits);
  /// log dist[index]. When `dist` is a softmax node the value is computed from
  /// its logits as x_i - logsumexp(x).
  Var log_prob(Var dist, std::size_t index);
  Var log(Var a);
  Var pick(Var a, std::size_t index);
  Var sum(Var a);
  Var square(Var a);

  /// Propagates d(loss)/d(node) to every node and into parameter gradient
  /// spans. Can run once per recording; clear() to reuse the tape.
  void backward(Var loss);

  /// Drops every node.
  void clear();

  // Accessors used by Var.
  Shape shape_of(std::uint32_t id) const { return nodes_.at(id).shape; }
  std::span<const double> value_of(std::uint32_t id) const;
  std::span<const double> grad_of(std::uint32_t id) const;

 private:
  struct Node {
    Op op = Op::constant;
    Shape shape;
    std::uint32_t a = Var::kNone;
    std::uint32_t b = Var::kNone;
    std::uint32_t c = Var::kNone;
    std::size_t index = 0;      // embedding row / pick index / concat input offset
    double factor = 0.0;        // scale
    std::size_t offset = 0;     // into values_ (unless external)
    const double* external = nullptr;
    double* external_grad = nullptr;
  };

  Var push(Node node, bool allocate = true);
  const double* val(std::uint32_t id) const;
  double* mut(std::uint32_t id) { return values_.data() + nodes_[id].offset; }
  // Parameters with an external gradient buffer accumulate straight into it.
  double* grd(std::uint32_t id) {
    const Node& n = nodes_[id];
    return n.external_grad != nullptr ? n.external_grad : grads_.data() + n.offset;
  }
  void check_finite(const Node& node, const char* op) const;
  void require_same_tape(Var v) const;

  bool recording_ = true;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> grads_;
  std::vector<std::uint32_t> concat_inputs_;
};

}  // namespace fruitcomm
