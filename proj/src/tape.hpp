#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "ops.hpp"
#include "tensor.hpp"

namespace dssc {

// Gradients keyed by parameter path, e.g. "conv1.weight".
template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

// Running statistics owned by a batchnorm layer; updated in place by the
// tape's train-mode forward.
template <typename T>
struct BnState {
  TensorPtr<T> running_mean;
  TensorPtr<T> running_var;
};

// Records a forward computation and replays it in reverse for gradients.
// One tape instance is one forward pass; build a fresh tape per step.
template <typename T>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  // An input. track=true requests a gradient for it (used by tests).
  Var leaf(TensorPtr<T> value, bool track = false) {
    return push(std::move(value), track, {});
  }

  // A trainable parameter; its gradient lands in the backward() result
  // under `path`.
  Var param(const std::string& path, TensorPtr<T> value) {
    Var v = push(std::move(value), true, {});
    nodes_[v.id].param_path = path;
    return v;
  }

  const Tensor<T>& value(Var v) const { return *nodes_.at(check(v)).value; }
  TensorPtr<T> value_ptr(Var v) const { return nodes_.at(check(v)).value; }

  Var conv2d(Var x, Var kernel, Var bias, ops::Padding pad) {
    auto xv = value_ptr(x), kv = value_ptr(kernel), bv = value_ptr(bias);
    auto out = make_tensor<T>(ops::conv2d(*xv, *kv, *bv, pad));
    Var y = push(out, false, {x, kernel, bias});
    nodes_[y.id].back = [this, x, kernel, bias, xv, kv, pad, y]() {
      Tensor<T> dx, dk, db;
      const bool want_dx = nodes_[x.id].requires_grad;
      ops::conv2d_backward(*xv, *kv, pad, grad_of(y), want_dx ? &dx : nullptr,
                           &dk, &db);
      if (want_dx) accumulate(x, std::move(dx));
      accumulate(kernel, std::move(dk));
      accumulate(bias, std::move(db));
    };
    return y;
  }

  Var maxpool2d(Var x) {
    auto xv = value_ptr(x);
    auto argmax = std::make_shared<std::vector<std::int64_t>>();
    auto out = make_tensor<T>(ops::maxpool2d(*xv, argmax.get()));
    Var y = push(out, false, {x});
    auto x_shape = xv->shape();
    nodes_[y.id].back = [this, x, argmax, x_shape, y]() {
      accumulate(x, ops::maxpool2d_backward(grad_of(y), *argmax, x_shape));
    };
    return y;
  }

  // Train mode uses batch statistics and folds them into state's running
  // stats; eval mode normalizes with the running stats as constants.
  Var batchnorm(Var x, Var scale, Var shift, BnState<T>& state, bool training,
                T eps, T momentum) {
    auto xv = value_ptr(x), sv = value_ptr(scale), bv = value_ptr(shift);
    if (training) {
      auto mean = std::make_shared<Tensor<T>>();
      auto var = std::make_shared<Tensor<T>>();
      auto out = make_tensor<T>(
          ops::batchnorm_train(*xv, *sv, *bv, eps, mean.get(), var.get()));
      for (std::int64_t c = 0; c < mean->size(); ++c) {
        (*state.running_mean)[c] =
            (T(1) - momentum) * (*state.running_mean)[c] +
            momentum * (*mean)[c];
        (*state.running_var)[c] = (T(1) - momentum) * (*state.running_var)[c] +
                                  momentum * (*var)[c];
      }
      Var y = push(out, false, {x, scale, shift});
      nodes_[y.id].back = [this, x, scale, shift, xv, sv, mean, var, eps, y]() {
        Tensor<T> dx, ds, db;
        ops::batchnorm_backward(*xv, *sv, *mean, *var, eps, grad_of(y),
                                nodes_[x.id].requires_grad ? &dx : nullptr, &ds,
                                &db);
        if (nodes_[x.id].requires_grad) accumulate(x, std::move(dx));
        accumulate(scale, std::move(ds));
        accumulate(shift, std::move(db));
      };
      return y;
    }
    auto rm = state.running_mean, rv = state.running_var;
    auto out = make_tensor<T>(ops::batchnorm_eval(*xv, *sv, *bv, *rm, *rv, eps));
    Var y = push(out, false, {x, scale, shift});
    nodes_[y.id].back = [this, x, scale, shift, xv, sv, rm, rv, eps, y]() {
      // Running stats are constants here, so the chain rule is elementwise.
      const Tensor<T>& dy = grad_of(y);
      const int n = xv->dim(0), c = xv->dim(1);
      const std::int64_t hw =
          static_cast<std::int64_t>(xv->dim(2)) * xv->dim(3);
      Tensor<T> dx(xv->shape()), ds({c}, T(0)), db({c}, T(0));
      for (int ch = 0; ch < c; ++ch) {
        const T inv = T(1) / std::sqrt((*rv)[ch] + eps);
        const T g = (*sv)[ch], mu = (*rm)[ch];
        for (int b = 0; b < n; ++b) {
          const std::int64_t base = (static_cast<std::int64_t>(b) * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            dx[base + i] = dy[base + i] * g * inv;
            ds[ch] += dy[base + i] * ((*xv)[base + i] - mu) * inv;
            db[ch] += dy[base + i];
          }
        }
      }
      if (nodes_[x.id].requires_grad) accumulate(x, std::move(dx));
      accumulate(scale, std::move(ds));
      accumulate(shift, std::move(db));
    };
    return y;
  }

  // bias may be an invalid Var for a bias-free layer.
  Var dense(Var x, Var w, Var bias) {
    auto xv = value_ptr(x), wv = value_ptr(w);
    const Tensor<T>* bp = bias.valid() ? value_ptr(bias).get() : nullptr;
    auto out = make_tensor<T>(ops::dense(*xv, *wv, bp));
    std::vector<Var> ins = {x, w};
    if (bias.valid()) ins.push_back(bias);
    Var y = push(out, false, ins);
    nodes_[y.id].back = [this, x, w, bias, xv, wv, y]() {
      Tensor<T> dx, dw, db;
      const bool want_dx = nodes_[x.id].requires_grad;
      ops::dense_backward(*xv, *wv, grad_of(y), want_dx ? &dx : nullptr, &dw,
                          bias.valid() ? &db : nullptr);
      if (want_dx) accumulate(x, std::move(dx));
      accumulate(w, std::move(dw));
      if (bias.valid()) accumulate(bias, std::move(db));
    };
    return y;
  }

  Var relu(Var x) {
    auto out = make_tensor<T>(ops::relu(value(x)));
    Var y = push(out, false, {x});
    nodes_[y.id].back = [this, x, out, y]() {
      accumulate(x, ops::relu_backward(*out, grad_of(y)));
    };
    return y;
  }

  Var sigmoid(Var x) {
    auto out = make_tensor<T>(ops::sigmoid(value(x)));
    Var y = push(out, false, {x});
    nodes_[y.id].back = [this, x, out, y]() {
      accumulate(x, ops::sigmoid_backward(*out, grad_of(y)));
    };
    return y;
  }

  Var softmax(Var x) {
    auto out = make_tensor<T>(ops::softmax(value(x)));
    Var y = push(out, false, {x});
    nodes_[y.id].back = [this, x, out, y]() {
      accumulate(x, ops::softmax_backward(*out, grad_of(y)));
    };
    return y;
  }

  Var global_avg_pool(Var x) {
    auto xv = value_ptr(x);
    auto out = make_tensor<T>(ops::global_avg_pool(*xv));
    Var y = push(out, false, {x});
    auto x_shape = xv->shape();
    nodes_[y.id].back = [this, x, x_shape, y]() {
      accumulate(x, ops::global_avg_pool_backward(grad_of(y), x_shape));
    };
    return y;
  }

  Var channel_scale(Var x, Var s) {
    auto xv = value_ptr(x), sv = value_ptr(s);
    auto out = make_tensor<T>(ops::channel_scale(*xv, *sv));
    Var y = push(out, false, {x, s});
    nodes_[y.id].back = [this, x, s, xv, sv, y]() {
      Tensor<T> dx, ds;
      ops::channel_scale_backward(*xv, *sv, grad_of(y),
                                  nodes_[x.id].requires_grad ? &dx : nullptr,
                                  &ds);
      if (nodes_[x.id].requires_grad) accumulate(x, std::move(dx));
      accumulate(s, std::move(ds));
    };
    return y;
  }

  Var add(Var a, Var b) {
    auto out = make_tensor<T>(ops::add(value(a), value(b)));
    Var y = push(out, false, {a, b});
    nodes_[y.id].back = [this, a, b, y]() {
      const Tensor<T>& dy = grad_of(y);
      if (nodes_[a.id].requires_grad) accumulate(a, Tensor<T>(dy));
      if (nodes_[b.id].requires_grad) accumulate(b, Tensor<T>(dy));
    };
    return y;
  }

  Var mul(Var a, Var b) {
    auto av = value_ptr(a), bv = value_ptr(b);
    auto out = make_tensor<T>(ops::mul(*av, *bv));
    Var y = push(out, false, {a, b});
    nodes_[y.id].back = [this, a, b, av, bv, y]() {
      const Tensor<T>& dy = grad_of(y);
      if (nodes_[a.id].requires_grad) accumulate(a, ops::mul(dy, *bv));
      if (nodes_[b.id].requires_grad) accumulate(b, ops::mul(dy, *av));
    };
    return y;
  }

  Var sum(Var x) {
    auto xv = value_ptr(x);
    auto out = make_tensor<T>(std::vector<int>{1}, T(0));
    (*out)[0] = ops::sum(*xv);
    Var y = push(out, false, {x});
    auto x_shape = xv->shape();
    nodes_[y.id].back = [this, x, x_shape, y]() {
      accumulate(x, Tensor<T>(x_shape, grad_of(y)[0]));
    };
    return y;
  }

  // Scalar loss; the per-logit gradient is computed alongside the forward
  // value and scaled by the upstream gradient on the way back.
  Var weighted_ce(Var logits, std::vector<int> labels,
                  std::vector<double> weights) {
    auto lv = value_ptr(logits);
    auto dlogits = std::make_shared<Tensor<T>>();
    auto out = make_tensor<T>(std::vector<int>{1}, T(0));
    (*out)[0] = static_cast<T>(
        ops::weighted_cross_entropy(*lv, labels, weights, dlogits.get()));
    Var y = push(out, false, {logits});
    nodes_[y.id].back = [this, logits, dlogits, y]() {
      const T up = grad_of(y)[0];
      Tensor<T> dl(*dlogits);
      for (std::int64_t i = 0; i < dl.size(); ++i) dl[i] *= up;
      accumulate(logits, std::move(dl));
    };
    return y;
  }

  // Reverse pass from a scalar loss. Returns one gradient per param();
  // leaf gradients stay readable through grad() until the tape is reset.
  GradMap<T> backward(Var loss) {
    const Node& ln = nodes_.at(check(loss));
    if (ln.value->size() != 1) {
      throw Error(ErrorCode::invalid_argument,
                  "backward: loss must be a scalar, got " +
                      ln.value->shape_str());
    }
    nodes_[loss.id].grad = Tensor<T>(ln.value->shape(), T(1));
    nodes_[loss.id].has_grad = true;
    for (int i = loss.id; i >= 0; --i) {
      Node& node = nodes_[i];
      if (node.has_grad && node.requires_grad && node.back) node.back();
    }
    GradMap<T> grads;
    for (Node& node : nodes_) {
      if (node.param_path.empty()) continue;
      if (node.has_grad) {
        grads.emplace(node.param_path, std::move(node.grad));
        node.grad = Tensor<T>();
        node.has_grad = false;
      } else {
        grads.emplace(node.param_path, Tensor<T>(node.value->shape(), T(0)));
      }
    }
    return grads;
  }

  // Gradient of a non-param node after backward(); null when none reached it.
  const Tensor<T>* grad(Var v) const {
    const Node& node = nodes_.at(check(v));
    return node.has_grad ? &node.grad : nullptr;
  }

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    TensorPtr<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::function<void()> back;
    std::string param_path;
  };

  int check(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
      throw Error(ErrorCode::internal, "tape: variable out of range");
    }
    return v.id;
  }

  Var push(TensorPtr<T> value, bool track, const std::vector<Var>& inputs) {
    if (!value) throw Error(ErrorCode::internal, "tape: null tensor");
    Node node;
    node.value = std::move(value);
    node.requires_grad = track;
    for (Var in : inputs) {
      if (nodes_.at(check(in)).requires_grad) node.requires_grad = true;
    }
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<T>& grad_of(Var v) { return nodes_[v.id].grad; }

  void accumulate(Var v, Tensor<T>&& g) {
    Node& node = nodes_[v.id];
    if (!node.requires_grad) return;
    if (!node.has_grad) {
      node.grad = std::move(g);
      node.has_grad = true;
      return;
    }
    for (std::int64_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
  }

  std::vector<Node> nodes_;
};

}  // namespace dssc
