#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "error.hpp"
#include "oracles.hpp"
#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"

using dssc::BnState;
using dssc::Error;
using dssc::Rng;
using dssc::Tensor;
using dssc::TensorPtr;
using dssc::make_tensor;
namespace ops = dssc::ops;

using Tape = dssc::Tape<double>;
using Build = std::function<Tape::Var(Tape&)>;

namespace {

constexpr double kH = 1e-4;
constexpr double kTol = 1e-4;

TensorPtr<double> randp(Rng& rng, std::vector<int> shape, double lo = -1.0,
                        double hi = 1.0) {
  auto t = make_tensor<double>(std::move(shape));
  for (std::int64_t i = 0; i < t->size(); ++i) (*t)[i] = rng.uniform(lo, hi);
  return t;
}

// Fixed projection onto a scalar so every output coordinate matters
// with a distinct weight.
TensorPtr<double> projection(Rng& rng, const std::vector<int>& shape) {
  auto r = make_tensor<double>(shape);
  for (std::int64_t i = 0; i < r->size(); ++i) {
    (*r)[i] = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1 : 1);
  }
  return r;
}

Tape::Var scalarize(Tape& tape, Tape::Var y, TensorPtr<double> r) {
  return tape.sum(tape.mul(y, tape.leaf(std::move(r))));
}

// Checks the tape gradient of every registered tensor ("p0", "p1", ...)
// against a central finite difference at sampled coordinates.
void fd_check(const Build& build,
              const std::vector<TensorPtr<double>>& inputs, int probes = 10,
              double h = kH, double tol = kTol) {
  Tape tape;
  auto loss = build(tape);
  auto grads = tape.backward(loss);
  REQUIRE(grads.size() == inputs.size());

  const auto forward = [&]() {
    Tape t2;
    return t2.value(build(t2))[0];
  };

  Rng rng(999);
  for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
    const Tensor<double>& g = grads.at("p" + std::to_string(pi));
    Tensor<double>& t = *inputs[pi];
    REQUIRE(g.shape() == t.shape());
    const int n = probes < t.size() ? probes : static_cast<int>(t.size());
    for (int probe = 0; probe < n; ++probe) {
      const std::int64_t at = rng.uniform_int(static_cast<int>(t.size()));
      const double numeric = oracle::central_diff(forward, &t[at], h);
      INFO("tensor p" << pi << " coord " << at << " analytic " << g[at]
                      << " numeric " << numeric);
      REQUIRE(oracle::rel_err(g[at], numeric) <= tol);
    }
  }
}

}  // namespace

TEST_CASE("conv2d gradients (same padding)") {
  Rng rng(201);
  auto x = randp(rng, {2, 3, 6, 5});
  auto k = randp(rng, {4, 3, 3, 3});
  auto b = randp(rng, {4});
  auto r = projection(rng, {2, 4, 6, 5});
  fd_check(
      [=](Tape& t) {
        auto y = t.conv2d(t.param("p0", x), t.param("p1", k), t.param("p2", b),
                          ops::Padding::same);
        return scalarize(t, y, r);
      },
      {x, k, b});
}

TEST_CASE("conv2d gradients (valid padding)") {
  Rng rng(202);
  auto x = randp(rng, {1, 2, 7, 6});
  auto k = randp(rng, {3, 2, 3, 3});
  auto b = randp(rng, {3});
  auto r = projection(rng, {1, 3, 5, 4});
  fd_check(
      [=](Tape& t) {
        auto y = t.conv2d(t.param("p0", x), t.param("p1", k), t.param("p2", b),
                          ops::Padding::valid);
        return scalarize(t, y, r);
      },
      {x, k, b});
}

TEST_CASE("maxpool2d gradients") {
  Rng rng(203);
  // Well-separated values keep the argmax stable under the FD step.
  auto x = make_tensor<double>(std::vector<int>{1, 2, 4, 4});
  std::vector<int> order(static_cast<std::size_t>(x->size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  for (std::int64_t i = 0; i < x->size(); ++i) {
    (*x)[i] = 0.05 * order[static_cast<std::size_t>(i)] +
              rng.uniform(-1e-3, 1e-3);
  }
  auto r = projection(rng, {1, 2, 2, 2});
  fd_check(
      [=](Tape& t) {
        return scalarize(t, t.maxpool2d(t.param("p0", x)), r);
      },
      {x}, 16);
}

TEST_CASE("batchnorm train-mode gradients") {
  Rng rng(204);
  auto x = randp(rng, {3, 2, 4, 4});
  auto scale = randp(rng, {2}, 0.5, 1.5);
  auto shift = randp(rng, {2}, -0.5, 0.5);
  auto r = projection(rng, {3, 2, 4, 4});
  auto state = std::make_shared<BnState<double>>();
  state->running_mean = make_tensor<double>(std::vector<int>{2}, 0.0);
  state->running_var = make_tensor<double>(std::vector<int>{2}, 1.0);
  fd_check(
      [=](Tape& t) {
        auto y = t.batchnorm(t.param("p0", x), t.param("p1", scale),
                             t.param("p2", shift), *state, true, 1e-5, 0.1);
        return scalarize(t, y, r);
      },
      {x, scale, shift});
}

TEST_CASE("batchnorm eval-mode gradients") {
  Rng rng(205);
  auto x = randp(rng, {2, 3, 3, 3});
  auto scale = randp(rng, {3}, 0.5, 1.5);
  auto shift = randp(rng, {3}, -0.5, 0.5);
  auto r = projection(rng, {2, 3, 3, 3});
  auto state = std::make_shared<BnState<double>>();
  state->running_mean = randp(rng, {3}, -0.3, 0.3);
  state->running_var = randp(rng, {3}, 0.5, 1.5);
  fd_check(
      [=](Tape& t) {
        auto y = t.batchnorm(t.param("p0", x), t.param("p1", scale),
                             t.param("p2", shift), *state, false, 1e-5, 0.1);
        return scalarize(t, y, r);
      },
      {x, scale, shift});
}

TEST_CASE("batchnorm train mode updates running statistics") {
  Rng rng(206);
  auto x = randp(rng, {2, 2, 3, 3}, 1.0, 3.0);
  auto scale = make_tensor<double>(std::vector<int>{2}, 1.0);
  auto shift = make_tensor<double>(std::vector<int>{2}, 0.0);
  BnState<double> state;
  state.running_mean = make_tensor<double>(std::vector<int>{2}, 0.0);
  state.running_var = make_tensor<double>(std::vector<int>{2}, 1.0);

  Tape t;
  t.batchnorm(t.leaf(x), t.leaf(scale), t.leaf(shift), state, true, 1e-5, 0.1);

  std::vector<double> mean, var;
  oracle::batchnorm_stats(std::vector<double>(x->data(), x->data() + x->size()),
                          2, 2, 3, 3, mean, var);
  for (int c = 0; c < 2; ++c) {
    CHECK(oracle::rel_err((*state.running_mean)[c], 0.1 * mean[c]) <= 1e-9);
    CHECK(oracle::rel_err((*state.running_var)[c], 0.9 + 0.1 * var[c]) <= 1e-9);
  }
}

TEST_CASE("dense gradients with bias") {
  Rng rng(207);
  auto x = randp(rng, {3, 5});
  auto w = randp(rng, {4, 5});
  auto b = randp(rng, {4});
  auto r = projection(rng, {3, 4});
  fd_check(
      [=](Tape& t) {
        auto y = t.dense(t.param("p0", x), t.param("p1", w),
                         t.param("p2", b));
        return scalarize(t, y, r);
      },
      {x, w, b});
}

TEST_CASE("dense gradients without bias") {
  Rng rng(208);
  auto x = randp(rng, {2, 6});
  auto w = randp(rng, {3, 6});
  auto r = projection(rng, {2, 3});
  fd_check(
      [=](Tape& t) {
        auto y = t.dense(t.param("p0", x), t.param("p1", w), Tape::Var{});
        return scalarize(t, y, r);
      },
      {x, w});
}

TEST_CASE("relu gradients away from the kink") {
  Rng rng(209);
  auto x = make_tensor<double>(std::vector<int>{4, 6});
  for (std::int64_t i = 0; i < x->size(); ++i) {
    double v = rng.uniform(-2.0, 2.0);
    if (std::abs(v) < 0.02) v = v < 0 ? -0.02 : 0.02;
    (*x)[i] = v;
  }
  auto r = projection(rng, {4, 6});
  fd_check(
      [=](Tape& t) { return scalarize(t, t.relu(t.param("p0", x)), r); },
      {x}, 16);
}

TEST_CASE("sigmoid gradients") {
  Rng rng(210);
  auto x = randp(rng, {3, 7}, -3.0, 3.0);
  auto r = projection(rng, {3, 7});
  fd_check(
      [=](Tape& t) { return scalarize(t, t.sigmoid(t.param("p0", x)), r); },
      {x}, 16);
}

TEST_CASE("softmax gradients") {
  Rng rng(211);
  auto x = randp(rng, {2, 5}, -2.0, 2.0);
  auto r = projection(rng, {2, 5});
  fd_check(
      [=](Tape& t) { return scalarize(t, t.softmax(t.param("p0", x)), r); },
      {x}, 10);
}

TEST_CASE("global_avg_pool gradients") {
  Rng rng(212);
  auto x = randp(rng, {2, 3, 4, 5});
  auto r = projection(rng, {2, 3});
  fd_check(
      [=](Tape& t) {
        return scalarize(t, t.global_avg_pool(t.param("p0", x)), r);
      },
      {x}, 12);
}

TEST_CASE("channel_scale gradients") {
  Rng rng(213);
  auto x = randp(rng, {2, 3, 4, 4});
  auto s = randp(rng, {2, 3}, 0.2, 1.8);
  auto r = projection(rng, {2, 3, 4, 4});
  fd_check(
      [=](Tape& t) {
        auto y = t.channel_scale(t.param("p0", x), t.param("p1", s));
        return scalarize(t, y, r);
      },
      {x, s});
}

TEST_CASE("bilinear_resize gradients") {
  // The projection loss L = sum(r * resize(x)) is linear in x, so the exact
  // gradient is resize_backward(r). Checked for both up- and downsampling.
  Rng rng(214);
  const int dims[2][4] = {{5, 4, 9, 11}, {9, 11, 5, 4}};
  for (const auto& d : dims) {
    const int h = d[0], w = d[1], oh = d[2], ow = d[3];
    auto x = randp(rng, {h, w});
    auto r = projection(rng, {oh, ow});
    const auto dx = ops::bilinear_resize_backward(*r, h, w);
    const auto forward = [&]() {
      const auto y = ops::bilinear_resize(*x, oh, ow);
      double acc = 0.0;
      for (std::int64_t i = 0; i < y.size(); ++i) acc += y[i] * (*r)[i];
      return acc;
    };
    for (int probe = 0; probe < 12; ++probe) {
      const std::int64_t at = rng.uniform_int(static_cast<int>(x->size()));
      const double numeric = oracle::central_diff(forward, &(*x)[at], kH);
      REQUIRE(oracle::rel_err(dx[at], numeric) <= kTol);
    }
  }
}

TEST_CASE("residual addition with fan-out accumulates both paths") {
  Rng rng(216);
  auto x = randp(rng, {3, 5});
  auto w = randp(rng, {5, 5});
  auto b = randp(rng, {5});
  auto r = projection(rng, {3, 5});
  fd_check(
      [=](Tape& t) {
        auto xin = t.param("p0", x);
        auto f = t.relu(t.dense(xin, t.param("p1", w), t.param("p2", b)));
        return scalarize(t, t.add(f, xin), r);
      },
      {x, w, b});
}

TEST_CASE("weighted cross entropy gradients") {
  Rng rng(217);
  auto logits = randp(rng, {4, 3}, -2.0, 2.0);
  const std::vector<int> labels = {0, 2, 1, 2};
  const std::vector<double> weights = {1.3, 0.7, 1.0};
  fd_check(
      [=](Tape& t) {
        return t.weighted_ce(t.param("p0", logits), labels, weights);
      },
      {logits}, 12);
}

TEST_CASE("backward demands a scalar loss") {
  Rng rng(218);
  auto x = randp(rng, {2, 3});
  Tape t;
  auto y = t.relu(t.param("p0", x));
  CHECK_THROWS_AS(t.backward(y), Error);
}

TEST_CASE("parameters off the loss path get zero gradients") {
  Rng rng(219);
  auto x = randp(rng, {2, 3});
  auto unused = randp(rng, {4});
  Tape t;
  auto loss = t.sum(t.param("p0", x));
  t.param("p1", unused);
  auto grads = t.backward(loss);
  REQUIRE(grads.count("p1") == 1);
  for (std::int64_t i = 0; i < grads.at("p1").size(); ++i) {
    CHECK(grads.at("p1")[i] == 0.0);
  }
  for (std::int64_t i = 0; i < grads.at("p0").size(); ++i) {
    CHECK(grads.at("p0")[i] == 1.0);
  }
}

TEST_CASE("gradients are deterministic") {
  Rng rng(220);
  auto x = randp(rng, {2, 3, 6, 6});
  auto k = randp(rng, {4, 3, 3, 3});
  auto b = randp(rng, {4});
  auto r = projection(rng, {2, 4, 3, 3});

  const auto run = [&]() {
    Tape t;
    auto y = t.conv2d(t.param("p0", x), t.param("p1", k), t.param("p2", b),
                      ops::Padding::same);
    auto loss = scalarize(t, t.maxpool2d(y), r);
    return t.backward(loss);
  };
  auto g1 = run();
  auto g2 = run();
  for (const auto& [name, g] : g1) {
    const auto& h = g2.at(name);
    for (std::int64_t i = 0; i < g.size(); ++i) REQUIRE(g[i] == h[i]);
  }
}

// A scaled-down version of the full network: two conv/bn/relu/pool stages,
// a squeeze-excite reweighting, a projected residual block, and a weighted
// cross entropy head. Every parameter gets finite-difference coverage.
TEST_CASE("composed network gradients") {
  Rng rng(221);
  auto x = randp(rng, {2, 3, 8, 8}, -1.0, 1.0);
  auto k1 = randp(rng, {4, 3, 3, 3}, -0.4, 0.4);
  auto cb1 = randp(rng, {4}, -0.1, 0.1);
  auto g1 = randp(rng, {4}, 0.8, 1.2);
  auto s1 = randp(rng, {4}, -0.1, 0.1);
  auto k2 = randp(rng, {6, 4, 3, 3}, -0.3, 0.3);
  auto cb2 = randp(rng, {6}, -0.1, 0.1);
  auto g2 = randp(rng, {6}, 0.8, 1.2);
  auto s2 = randp(rng, {6}, -0.1, 0.1);
  auto se1 = randp(rng, {3, 6}, -0.5, 0.5);
  auto se2 = randp(rng, {6, 3}, -0.5, 0.5);
  auto f1w = randp(rng, {10, 6}, -0.4, 0.4);
  auto f1b = randp(rng, {10}, -0.1, 0.1);
  auto f2w = randp(rng, {10, 10}, -0.4, 0.4);
  auto f2b = randp(rng, {10}, -0.1, 0.1);
  auto pw = randp(rng, {10, 6}, -0.4, 0.4);
  auto hw = randp(rng, {3, 10}, -0.4, 0.4);
  auto hb = randp(rng, {3}, -0.1, 0.1);

  auto st1 = std::make_shared<BnState<double>>();
  st1->running_mean = make_tensor<double>(std::vector<int>{4}, 0.0);
  st1->running_var = make_tensor<double>(std::vector<int>{4}, 1.0);
  auto st2 = std::make_shared<BnState<double>>();
  st2->running_mean = make_tensor<double>(std::vector<int>{6}, 0.0);
  st2->running_var = make_tensor<double>(std::vector<int>{6}, 1.0);

  const std::vector<int> labels = {0, 2};
  const std::vector<double> weights = {1.2, 0.8, 1.0};

  fd_check(
      [=](Tape& t) {
        auto h1 = t.maxpool2d(t.relu(
            t.batchnorm(t.conv2d(t.leaf(x), t.param("p0", k1),
                                 t.param("p1", cb1), ops::Padding::same),
                        t.param("p2", g1), t.param("p3", s1), *st1, true, 1e-5,
                        0.1)));
        auto h2 = t.maxpool2d(t.relu(
            t.batchnorm(t.conv2d(h1, t.param("p4", k2), t.param("p5", cb2),
                                 ops::Padding::same),
                        t.param("p6", g2), t.param("p7", s2), *st2, true, 1e-5,
                        0.1)));
        auto sq = t.global_avg_pool(h2);
        auto gate = t.sigmoid(t.dense(
            t.relu(t.dense(sq, t.param("p8", se1), Tape::Var{})),
            t.param("p9", se2), Tape::Var{}));
        auto reweighted = t.channel_scale(h2, gate);
        auto emb = t.global_avg_pool(reweighted);
        auto ff = t.dense(
            t.relu(t.dense(emb, t.param("p10", f1w), t.param("p11", f1b))),
            t.param("p12", f2w), t.param("p13", f2b));
        auto skip = t.dense(emb, t.param("p14", pw), Tape::Var{});
        auto res = t.relu(t.add(ff, skip));
        auto logits = t.dense(res, t.param("p15", hw), t.param("p16", hb));
        return t.weighted_ce(logits, labels, weights);
      },
      {k1, cb1, g1, s1, k2, cb2, g2, s2, se1, se2, f1w, f1b, f2w, f2b, pw, hw,
       hb},
      6);
}
