#include "fruitcomm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fruitcomm {

namespace {

std::string shape_str(Shape s) { return "(" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + ")"; }

double log_sum_exp(const double* x, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
  return m + std::log(s);
}

void softmax_into(const double* x, std::size_t n, double* out) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(x[i] - m);
    s += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= s;
}

}  // namespace

Shape Var::shape() const { return tape_->shape_of(id_); }
std::span<const double> Var::value() const { return tape_->value_of(id_); }
std::span<const double> Var::grad() const { return tape_->grad_of(id_); }

double Var::item() const {
  auto v = value();
  if (v.size() != 1) throw ShapeError("item() on a node of size " + std::to_string(v.size()));
  return v[0];
}

std::span<const double> Tape::value_of(std::uint32_t id) const {
  const Node& n = nodes_.at(id);
  return {val(id), n.shape.size()};
}

std::span<const double> Tape::grad_of(std::uint32_t id) const {
  const Node& n = nodes_.at(id);
  if (!backward_done_) throw std::logic_error("gradients requested before backward()");
  if (n.external_grad != nullptr) return {n.external_grad, n.shape.size()};
  return {grads_.data() + n.offset, n.shape.size()};
}

const double* Tape::val(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.external != nullptr ? n.external : values_.data() + n.offset;
}

void Tape::require_same_tape(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) throw std::invalid_argument("Var does not belong to this tape");
}

Var Tape::push(Node node, bool allocate) {
  if (backward_done_) throw std::logic_error("tape already differentiated; clear() before recording");
  node.offset = values_.size();
  if (allocate) values_.resize(values_.size() + node.shape.size(), 0.0);
  nodes_.push_back(node);
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::check_finite(const Node& node, const char* op) const {
  const double* v = values_.data() + node.offset;
  for (std::size_t i = 0; i < node.shape.size(); ++i)
    if (!std::isfinite(v[i])) throw NumericError(std::string("non-finite output in ") + op);
}

Var Tape::constant(std::span<const double> values, Shape shape) {
  if (values.size() != shape.size())
    throw ShapeError("constant: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  Var v = push(Node{.op = Op::constant, .shape = shape});
  std::copy(values.begin(), values.end(), mut(v.id()));
  check_finite(nodes_[v.id()], "constant");
  return v;
}

Var Tape::zeros(Shape shape) { return push(Node{.op = Op::constant, .shape = shape}); }

Var Tape::parameter(std::span<const double> values, Shape shape, std::span<double> grad) {
  if (values.size() != shape.size())
    throw ShapeError("parameter: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  if (!grad.empty() && grad.size() != values.size()) throw ShapeError("parameter: gradient span size mismatch");
  Node n{.op = Op::parameter, .shape = shape};
  n.external = values.data();
  n.external_grad = grad.empty() ? nullptr : grad.data();
  return push(n, /*allocate=*/n.external_grad == nullptr && recording_);
}

namespace {

// Four fixed partial sums: vectorizes without reassociating at runtime.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    s0 += a[k] * b[k];
    s1 += a[k + 1] * b[k + 1];
    s2 += a[k + 2] * b[k + 2];
    s3 += a[k + 3] * b[k + 3];
  }
  for (; k < n; ++k) s0 += a[k] * b[k];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

Var Tape::linear(Var x, Var w, Var b) {
  require_same_tape(x);
  require_same_tape(w);
  const Shape ws = w.shape();
  const Shape xs = x.shape();
  if (!xs.is_vector() || xs.rows != ws.cols)
    throw ShapeError("linear: weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  if (b.valid()) {
    require_same_tape(b);
    if (b.shape() != Shape{ws.rows, 1}) throw ShapeError("linear: bias shape " + shape_str(b.shape()));
  }
  Var out = push(Node{.op = Op::linear, .shape = {ws.rows, 1}, .a = x.id(), .b = w.id(),
                      .c = b.valid() ? b.id() : Var::kNone});
  const double* xv = val(x.id());
  const double* wv = val(w.id());
  double* y = mut(out.id());
  for (std::size_t r = 0; r < ws.rows; ++r) y[r] = dot(wv + r * ws.cols, xv, ws.cols);
  if (b.valid()) {
    const double* bv = val(b.id());
    for (std::size_t r = 0; r < ws.rows; ++r) y[r] += bv[r];
  }
  check_finite(nodes_[out.id()], "linear");
  return out;
}

Var Tape::matvec(Var w, Var x) {
  Var out = linear(x, w, Var{});
  nodes_[out.id()].op = Op::matvec;
  return out;
}

Var Tape::add(Var a, Var b) {
  require_same_tape(a);
  require_same_tape(b);
  if (a.shape() != b.shape()) throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Var out = push(Node{.op = Op::add, .shape = a.shape(), .a = a.id(), .b = b.id()});
  const double* av = val(a.id());
  const double* bv = val(b.id());
  double* y = mut(out.id());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = av[i] + bv[i];
  check_finite(nodes_[out.id()], "add");
  return out;
}

Var Tape::sub(Var a, Var b) {
  require_same_tape(a);
  require_same_tape(b);
  if (a.shape() != b.shape()) throw ShapeError("sub: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Var out = push(Node{.op = Op::sub, .shape = a.shape(), .a = a.id(), .b = b.id()});
  const double* av = val(a.id());
  const double* bv = val(b.id());
  double* y = mut(out.id());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = av[i] - bv[i];
  check_finite(nodes_[out.id()], "sub");
  return out;
}

Var Tape::mul(Var a, Var b) {
  require_same_tape(a);
  require_same_tape(b);
  if (a.shape() != b.shape()) throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Var out = push(Node{.op = Op::mul, .shape = a.shape(), .a = a.id(), .b = b.id()});
  const double* av = val(a.id());
  const double* bv = val(b.id());
  double* y = mut(out.id());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = av[i] * bv[i];
  check_finite(nodes_[out.id()], "mul");
  return out;
}

Var Tape::scale(Var a, double factor) {
  require_same_tape(a);
  Var out = push(Node{.op = Op::scale, .shape = a.shape(), .a = a.id(), .factor = factor});
  const double* av = val(a.id());
  double* y = mut(out.id());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = factor * av[i];
  check_finite(nodes_[out.id()], "scale");
  return out;
}

Var Tape::tanh(Var a) {
  require_same_tape(a);
  Var out = push(Node{.op = Op::tanh, .shape = a.shape(), .a = a.id()});
  const double* av = val(a.id());
  double* y = mut(out.id());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = std::tanh(av[i]);
  return out;
}

Var Tape::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::size_t total = 0;
  for (Var p : parts) {
    require_same_tape(p);
    if (!p.shape().is_vector()) throw ShapeError("concat: inputs must be vectors");
    total += p.size();
  }
  const std::size_t first = concat_inputs_.size();
  for (Var p : parts) concat_inputs_.push_back(p.id());
  Var out = push(Node{.op = Op::concat, .shape = {total, 1}, .b = static_cast<std::uint32_t>(parts.size()),
                      .index = first});
  double* y = mut(out.id());
  for (Var p : parts) {
    const double* pv = val(p.id());
    y = std::copy(pv, pv + p.size(), y);
  }
  return out;
}

Var Tape::embedding(Var table, std::size_t row) {
  require_same_tape(table);
  const Shape ts = table.shape();
  if (row >= ts.rows)
    throw ShapeError("embedding: row " + std::to_string(row) + " out of range for table " + shape_str(ts));
  Var out = push(Node{.op = Op::embedding, .shape = {ts.cols, 1}, .a = table.id(), .index = row});
  const double* src = val(table.id()) + row * ts.cols;
  std::copy(src, src + ts.cols, mut(out.id()));
  return out;
}

Var Tape::rnn_cell(Var h_prev, Var x, Var w_ih, Var w_hh, Var b) {
  return tanh(add(linear(x, w_ih, b), matvec(w_hh, h_prev)));
}

Var Tape::softmax(Var logits) {
  require_same_tape(logits);
  if (!logits.shape().is_vector() || logits.size() == 0) throw ShapeError("softmax: expects a non-empty vector");
  Var out = push(Node{.op = Op::softmax, .shape = logits.shape(), .a = logits.id()});
  softmax_into(val(logits.id()), logits.size(), mut(out.id()));
  check_finite(nodes_[out.id()], "softmax");
  return out;
}

Var Tape::log_softmax(Var logits) {
  require_same_tape(logits);
  if (!logits.shape().is_vector() || logits.size() == 0) throw ShapeError("log_softmax: expects a non-empty vector");
  Var out = push(Node{.op = Op::log_softmax, .shape = logits.shape(), .a = logits.id()});
  const double* x = val(logits.id());
  const double lse = log_sum_exp(x, logits.size());
  double* y = mut(out.id());
  for (std::size_t i = 0; i < logits.size(); ++i) y[i] = x[i] - lse;
  check_finite(nodes_[out.id()], "log_softmax");
  return out;
}

Var Tape::log_prob(Var dist, std::size_t index) {
  require_same_tape(dist);
  if (index >= dist.size()) throw ShapeError("log_prob: index out of range");
  const Node& d = nodes_[dist.id()];
  if (d.op == Op::softmax) {
    const std::uint32_t logits = d.a;
    const std::size_t n = nodes_[logits].shape.size();
    Var out = push(Node{.op = Op::log_prob_logits, .shape = {1, 1}, .a = logits, .index = index});
    const double* x = val(logits);
    mut(out.id())[0] = x[index] - log_sum_exp(x, n);
    check_finite(nodes_[out.id()], "log_prob");
    return out;
  }
  return log(pick(dist, index));
}

Var Tape::log(Var a) {
  require_same_tape(a);
  Var out = push(Node{.op = Op::log, .shape = a.shape(), .a = a.id()});
  const double* av = val(a.id());
  double* y = mut(out.id());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = std::log(av[i]);
  check_finite(nodes_[out.id()], "log");
  return out;
}

Var Tape::pick(Var a, std::size_t index) {
  require_same_tape(a);
  if (index >= a.size()) throw ShapeError("pick: index out of range");
  Var out = push(Node{.op = Op::pick, .shape = {1, 1}, .a = a.id(), .index = index});
  mut(out.id())[0] = val(a.id())[index];
  return out;
}

Var Tape::sum(Var a) {
  require_same_tape(a);
  Var out = push(Node{.op = Op::sum, .shape = {1, 1}, .a = a.id()});
  const double* av = val(a.id());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += av[i];
  mut(out.id())[0] = s;
  return out;
}

Var Tape::square(Var a) {
  require_same_tape(a);
  Var out = push(Node{.op = Op::square, .shape = a.shape(), .a = a.id()});
  const double* av = val(a.id());
  double* y = mut(out.id());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = av[i] * av[i];
  check_finite(nodes_[out.id()], "square");
  return out;
}

void Tape::backward(Var loss) {
  require_same_tape(loss);
  if (!recording_) throw std::logic_error("backward() on a tape that does not record gradients");
  if (backward_done_) throw std::logic_error("backward() called twice; clear() the tape first");
  if (loss.size() != 1) throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));

  grads_.assign(values_.size(), 0.0);
  backward_done_ = true;
  grd(loss.id())[0] = 1.0;

  for (std::uint32_t id = loss.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    const double* g = grd(id);
    const std::size_t size = n.shape.size();

    switch (n.op) {
      case Op::constant:
        break;
      case Op::parameter:
        break;
      case Op::linear:
      case Op::matvec: {
        const Shape ws = nodes_[n.b].shape;
        const double* xv = val(n.a);
        const double* wv = val(n.b);
        double* gx = grd(n.a);
        double* gw = grd(n.b);
        for (std::size_t r = 0; r < ws.rows; ++r) {
          const double gr = g[r];
          if (gr == 0.0) continue;
          const double* row = wv + r * ws.cols;
          double* grow = gw + r * ws.cols;
          for (std::size_t k = 0; k < ws.cols; ++k) {
            gx[k] += row[k] * gr;
            grow[k] += xv[k] * gr;
          }
        }
        if (n.c != Var::kNone) {
          double* gb = grd(n.c);
          for (std::size_t r = 0; r < ws.rows; ++r) gb[r] += g[r];
        }
        break;
      }
      case Op::add: {
        double* ga = grd(n.a);
        double* gb = grd(n.b);
        for (std::size_t i = 0; i < size; ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        break;
      }
      case Op::sub: {
        double* ga = grd(n.a);
        double* gb = grd(n.b);
        for (std::size_t i = 0; i < size; ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
        break;
      }
      case Op::mul: {
        const double* av = val(n.a);
        const double* bv = val(n.b);
        double* ga = grd(n.a);
        double* gb = grd(n.b);
        for (std::size_t i = 0; i < size; ++i) {
          ga[i] += g[i] * bv[i];
          gb[i] += g[i] * av[i];
        }
        break;
      }
      case Op::scale: {
        double* ga = grd(n.a);
        for (std::size_t i = 0; i < size; ++i) ga[i] += n.factor * g[i];
        break;
      }
      case Op::tanh: {
        const double* y = val(id);
        double* ga = grd(n.a);
        for (std::size_t i = 0; i < size; ++i) ga[i] += (1.0 - y[i] * y[i]) * g[i];
        break;
      }
      case Op::concat: {
        const double* src = g;
        for (std::uint32_t k = 0; k < n.b; ++k) {
          const std::uint32_t in = concat_inputs_[n.index + k];
          const std::size_t len = nodes_[in].shape.size();
          double* gi = grd(in);
          for (std::size_t i = 0; i < len; ++i) gi[i] += src[i];
          src += len;
        }
        break;
      }
      case Op::embedding: {
        double* gt = grd(n.a) + n.index * size;
        for (std::size_t i = 0; i < size; ++i) gt[i] += g[i];
        break;
      }
      case Op::softmax: {
        const double* y = val(id);
        double dot = 0.0;
        for (std::size_t i = 0; i < size; ++i) dot += g[i] * y[i];
        double* ga = grd(n.a);
        for (std::size_t i = 0; i < size; ++i) ga[i] += y[i] * (g[i] - dot);
        break;
      }
      case Op::log_softmax: {
        const double* y = val(id);
        double total = 0.0;
        for (std::size_t i = 0; i < size; ++i) total += g[i];
        double* ga = grd(n.a);
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] - std::exp(y[i]) * total;
        break;
      }
      case Op::log_prob_logits: {
        const std::size_t len = nodes_[n.a].shape.size();
        std::vector<double> p(len);
        softmax_into(val(n.a), len, p.data());
        double* ga = grd(n.a);
        for (std::size_t i = 0; i < len; ++i) ga[i] -= g[0] * p[i];
        ga[n.index] += g[0];
        break;
      }
      case Op::log: {
        const double* av = val(n.a);
        double* ga = grd(n.a);
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] / av[i];
        break;
      }
      case Op::pick:
        grd(n.a)[n.index] += g[0];
        break;
      case Op::sum: {
        const std::size_t len = nodes_[n.a].shape.size();
        double* ga = grd(n.a);
        for (std::size_t i = 0; i < len; ++i) ga[i] += g[0];
        break;
      }
      case Op::square: {
        const double* av = val(n.a);
        double* ga = grd(n.a);
        for (std::size_t i = 0; i < size; ++i) ga[i] += 2.0 * av[i] * g[i];
        break;
      }
    }
  }
}

void Tape::clear() {
  nodes_.clear();
  values_.clear();
  grads_.clear();
  concat_inputs_.clear();
  backward_done_ = false;
}

}  // namespace fruitcomm
