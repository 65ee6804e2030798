#include <doctest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "fruitcomm/autodiff.hpp"
#include "fruitcomm/optim.hpp"
#include "fruitcomm/parameters.hpp"
#include "fruitcomm/rng.hpp"

using namespace fruitcomm;

namespace {

// A random graph over a flat parameter vector. `build` must record the same
// structure every time, so all structural choices come from `seed`.
struct RandomGraph {
  std::uint64_t seed;
  std::vector<double> params;
  std::function<Var(Tape&, std::span<const double>, std::span<double>)> build;
};

struct Slot {
  std::size_t offset;
  Shape shape;
};

class Layout {
 public:
  Slot add(Shape s) {
    Slot slot{size_, s};
    size_ += s.size();
    return slot;
  }
  std::size_t size() const { return size_; }

 private:
  std::size_t size_ = 0;
};

Var bind(Tape& t, std::span<const double> p, std::span<double> g, const Slot& s) {
  return t.parameter(p.subspan(s.offset, s.shape.size()), s.shape,
                     g.empty() ? std::span<double>{} : g.subspan(s.offset, s.shape.size()));
}

std::size_t dim(Rng& r) { return 1 + r.below(8); }

RandomGraph make_mlp(std::uint64_t seed) {
  Rng r(seed);
  const std::size_t depth = 1 + r.below(3);
  std::vector<std::size_t> dims{dim(r)};
  for (std::size_t i = 0; i < depth; ++i) dims.push_back(dim(r));
  const std::size_t classes = 2 + r.below(5);
  Layout lay;
  std::vector<std::pair<Slot, Slot>> layers;
  for (std::size_t i = 0; i < depth; ++i) layers.push_back({lay.add({dims[i + 1], dims[i]}), lay.add({dims[i + 1], 1})});
  const Slot wo = lay.add({classes, dims.back()}), bo = lay.add({classes, 1});
  const Slot gate = lay.add({dims.back(), 1});
  std::vector<double> x(dims[0]);
  for (double& v : x) v = r.uniform(-1, 1);
  const std::size_t target = r.below(classes);
  RandomGraph g{seed, std::vector<double>(lay.size()), {}};
  for (double& v : g.params) v = r.uniform(-0.8, 0.8);
  g.build = [=](Tape& t, std::span<const double> p, std::span<double> gr) {
    Var h = t.constant(x);
    for (const auto& [w, b] : layers) h = t.tanh(t.linear(h, bind(t, p, gr, w), bind(t, p, gr, b)));
    const Var gated = t.mul(h, bind(t, p, gr, gate));
    const Var logits = t.linear(gated, bind(t, p, gr, wo), bind(t, p, gr, bo));
    const Var nll = t.scale(t.log_prob(t.softmax(logits), target), -1.0);
    return t.add(nll, t.scale(t.sum(t.square(h)), 0.3));
  };
  return g;
}

RandomGraph make_rnn(std::uint64_t seed, std::size_t steps) {
  Rng r(seed);
  const std::size_t vocab = 2 + r.below(5), emb = dim(r), hid = dim(r), classes = 2 + r.below(4);
  Layout lay;
  const Slot table = lay.add({vocab, emb}), wih = lay.add({hid, emb}), whh = lay.add({hid, hid}), b = lay.add({hid, 1});
  const Slot wo = lay.add({classes, hid}), bo = lay.add({classes, 1});
  std::vector<std::size_t> tokens(steps);
  for (auto& tok : tokens) tok = r.below(vocab);
  const std::size_t target = r.below(classes);
  RandomGraph g{seed, std::vector<double>(lay.size()), {}};
  for (double& v : g.params) v = r.uniform(-0.7, 0.7);
  g.build = [=](Tape& t, std::span<const double> p, std::span<double> gr) {
    const Var e = bind(t, p, gr, table), w1 = bind(t, p, gr, wih), w2 = bind(t, p, gr, whh), bb = bind(t, p, gr, b);
    Var h = t.zeros({hid, 1});
    Var trace = t.zeros({1, 1});
    for (std::size_t tok : tokens) {
      h = t.rnn_cell(h, t.embedding(e, tok), w1, w2, bb);
      trace = t.add(trace, t.pick(h, 0));
    }
    const Var logits = t.linear(h, bind(t, p, gr, wo), bind(t, p, gr, bo));
    return t.add(t.scale(t.pick(t.log_softmax(logits), target), -1.0), t.scale(trace, 0.1));
  };
  return g;
}

RandomGraph make_mixed(std::uint64_t seed) {
  Rng r(seed);
  const std::size_t a = dim(r), b = dim(r), k = dim(r);
  Layout lay;
  const Slot u = lay.add({a, 1}), v = lay.add({b, 1}), w = lay.add({k, a + b}), m = lay.add({k, k});
  const double factor = r.uniform(-2, 2);
  const std::size_t pick = r.below(k);
  RandomGraph g{seed, std::vector<double>(lay.size()), {}};
  for (double& x : g.params) x = r.uniform(-1, 1);
  g.build = [=](Tape& t, std::span<const double> p, std::span<double> gr) {
    const Var uu = bind(t, p, gr, u), vv = bind(t, p, gr, v);
    const Var cat = t.concat({t.tanh(uu), t.scale(vv, factor)});
    const Var y = t.matvec(bind(t, p, gr, w), cat);
    const Var z = t.tanh(t.matvec(bind(t, p, gr, m), y));
    const Var sm = t.softmax(t.sub(z, t.scale(y, 0.5)));
    // log of a softmax output goes through the generic log path.
    const Var lg = t.log(t.mul(sm, sm));
    return t.add(t.sum(t.mul(lg, z)), t.pick(t.square(y), pick));
  };
  return g;
}

double loss_at(const RandomGraph& g, std::span<const double> p) {
  Tape t(false);
  return g.build(t, p, {}).item();
}

// Largest relative error between backward() and central differences.
double max_fd_error(const RandomGraph& g) {
  std::vector<double> grad(g.params.size(), 0.0);
  Tape t;
  t.backward(g.build(t, g.params, grad));
  std::vector<double> p = g.params;
  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = loss_at(g, p);
    p[i] = keep - h;
    const double down = loss_at(g, p);
    p[i] = keep;
    const double fd = (up - down) / (2 * h);
    const double err = std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-3});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST_CASE("forward primitives") {
  Tape t;
  SUBCASE("tanh(0) is 0 with derivative 1") {
    const double zero = 0.0;
    double g = 0.0;
    const Var x = t.parameter(std::span<const double>(&zero, 1), {1, 1}, std::span<double>(&g, 1));
    const Var y = t.tanh(x);
    CHECK(y.item() == 0.0);
    t.backward(y);
    CHECK(g == 1.0);
  }
  SUBCASE("softmax of equal logits is uniform") {
    const std::vector<double> l{2.5, 2.5, 2.5};
    const auto v = t.softmax(t.constant(l)).value();
    for (double p : v) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-15));
  }
  SUBCASE("identity linear leaves the input unchanged") {
    const std::vector<double> x{0.3, -1.2, 7.0}, w{1, 0, 0, 0, 1, 0, 0, 0, 1}, b{0, 0, 0};
    const Var y = t.linear(t.constant(x), t.constant(w, {3, 3}), t.constant(b));
    CHECK(std::vector<double>(y.value().begin(), y.value().end()) == x);
  }
  SUBCASE("shape mismatch raises") {
    const std::vector<double> x{1, 2}, w{1, 2, 3};
    CHECK_THROWS_AS(t.linear(t.constant(x), t.constant(w, {1, 3}), t.constant(std::vector<double>{0})), ShapeError);
    CHECK_THROWS_AS(t.add(t.constant(x), t.constant(w)), ShapeError);
  }
  SUBCASE("non-finite output raises") {
    const std::vector<double> z{0.0};
    CHECK_THROWS_AS(t.log(t.constant(z)), NumericError);
  }
}

TEST_CASE("softmax and log-probabilities are stable") {
  Rng r(9);
  for (int n = 0; n < 200; ++n) {
    std::vector<double> x(2 + r.below(10));
    for (double& v : x) v = r.uniform(-300, 300);
    Tape t(false);
    const Var logits = t.constant(x);
    const Var sm = t.softmax(logits);
    double sum = 0.0;
    for (double p : sm.value()) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    const double mx = *std::max_element(x.begin(), x.end());
    double s = 0.0;
    for (double v : x) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    const std::size_t i = r.below(x.size());
    CHECK(std::abs(t.log_prob(sm, i).item() - (x[i] - lse)) <= 1e-10);
    CHECK(std::abs(t.pick(t.log_softmax(logits), i).item() - (x[i] - lse)) <= 1e-10);
  }
  // Moderate logits: every probability is strictly positive.
  Tape t(false);
  for (double p : t.softmax(t.constant(std::vector<double>{-30, 0, 30})).value()) CHECK(p > 0.0);
}

TEST_CASE("backward") {
  SUBCASE("sum of parameters has all-ones gradient") {
    const std::vector<double> p{0.1, -2, 3, 4.5};
    std::vector<double> g(4, 0.0);
    Tape t;
    t.backward(t.sum(t.parameter(p, {4, 1}, g)));
    CHECK(g == std::vector<double>(4, 1.0));
  }
  SUBCASE("unused parameter gets exactly zero") {
    const std::vector<double> p{1, 2}, q{3, 4};
    std::vector<double> gp(2, 0.0), gq(2, 0.0);
    Tape t;
    const Var a = t.parameter(p, {2, 1}, gp);
    t.parameter(q, {2, 1}, gq);
    t.backward(t.sum(t.square(a)));
    CHECK(gq == std::vector<double>{0.0, 0.0});
    CHECK(gp == std::vector<double>{2.0, 4.0});
  }
  SUBCASE("gradients accumulate over multiple uses") {
    const std::vector<double> p{3.0};
    std::vector<double> g(1, 0.0);
    Tape t;
    const Var a = t.parameter(p, {1, 1}, g);
    t.backward(t.add(t.mul(a, a), t.scale(a, 2.0)));
    CHECK(g[0] == 8.0);
  }
  SUBCASE("non-scalar loss and second backward raise") {
    const std::vector<double> p{1, 2};
    std::vector<double> g(2, 0.0);
    Tape t;
    const Var a = t.parameter(p, {2, 1}, g);
    CHECK_THROWS_AS(t.backward(a), ShapeError);
    const Var l = t.sum(a);
    t.backward(l);
    CHECK_THROWS_AS(t.backward(l), std::logic_error);
    t.clear();
    CHECK(t.node_count() == 0);
  }
}

TEST_CASE("gradients of 100 random graphs match central differences") {
  double worst = 0.0;
  std::size_t rnn20 = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    RandomGraph g = [&] {
      switch (s % 3) {
        case 0: return make_mlp(derive_seed(7, "mlp", s));
        case 1: {
          const std::size_t steps = s % 2 == 1 ? 20 : 1 + s % 19;
          rnn20 += steps == 20;
          return make_rnn(derive_seed(7, "rnn", s), steps);
        }
        default: return make_mixed(derive_seed(7, "mixed", s));
      }
    }();
    const double e = max_fd_error(g);
    CAPTURE(s);
    CHECK(e < 1e-4);
    worst = std::max(worst, e);
  }
  CHECK(rnn20 >= 10);
  MESSAGE("worst relative error " << worst);
}

TEST_CASE("clip_gradients") {
  std::vector<double> g{0.05, 5.0, -5.0, -0.1, 0.1};
  clip_gradients(g, 0.1);
  CHECK(g == std::vector<double>{0.05, 0.1, -0.1, -0.1, 0.1});
  std::vector<double> n{3.0, 4.0};
  clip_gradients(n, 1.0, ClipMode::global_norm);
  CHECK(n[0] == doctest::Approx(0.6));
  CHECK(n[1] == doctest::Approx(0.8));
  CHECK(parse_clip_mode("global_norm") == ClipMode::global_norm);
  CHECK_THROWS(parse_clip_mode("bogus"));
}

TEST_CASE("rmsprop") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    RmsProp opt(3, {});
    std::vector<double> p{1, 2, 3};
    const std::vector<double> g(3, 0.0);
    for (int i = 0; i < 10; ++i) opt.step(p, g);
    CHECK(p == std::vector<double>{1, 2, 3});
  }
  SUBCASE("constant gradient: step size approaches lr") {
    RmsProp opt(1, {0.001, 0.99, 1e-8});
    std::vector<double> p{0.0};
    const std::vector<double> g{0.37};
    double prev = 0.0, step = 0.0;
    for (int i = 0; i < 3000; ++i) {
      opt.step(p, g);
      step = prev - p[0];
      prev = p[0];
    }
    CHECK(step == doctest::Approx(0.001).epsilon(1e-6));
    for (double v : opt.square_avg()) CHECK(v >= 0.0);
  }
  SUBCASE("deterministic") {
    auto run = [] {
      RmsProp opt(4, {});
      std::vector<double> p{1, -1, 2, 0};
      Rng r(3);
      for (int i = 0; i < 100; ++i) {
        std::vector<double> g(4);
        for (double& v : g) v = r.uniform(-1, 1);
        opt.step(p, g);
      }
      return p;
    };
    CHECK(run() == run());
  }
}

TEST_CASE("parameter set slices") {
  ParameterSet ps;
  const auto a = ps.add("w", {2, 3});
  const auto b = ps.add("b", {2, 1});
  CHECK(ps.size() == 8);
  CHECK(ps.values(b).size() == 2);
  CHECK(ps.find("w") == a);
  CHECK_FALSE(ps.find("zz").has_value());
}
