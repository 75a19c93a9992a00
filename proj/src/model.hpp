#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tape.hpp"
#include "tensor.hpp"

namespace dssc {

// Network shape: conv stack -> optional SE reweighting -> global average
// pool -> residual FC stack -> linear head. The defaults are the full model;
// the named presets strip components from it.
struct ArchConfig {
  std::vector<int> conv_filters{64, 128, 256};
  bool use_se = true;
  int se_reduction = 16;
  std::vector<int> rb_widths{256, 512, 1024};
  int n_classes = 3;
  int in_channels = 3;
  int image_size = 128;
};

// Presets "C1".."C6" plus "cnn_se_baseline" (conv + SE, no residual stack).
// n_classes is left at the default; set it per corpus.
ArchConfig arch_preset(const std::string& name);
const std::vector<std::string>& arch_preset_names();

// Canonical single-line JSON with sorted keys, bit-stable across runs;
// the parser accepts any field order and ignores unknown keys.
std::string arch_to_json(const ArchConfig& config);
ArchConfig arch_from_json(const std::string& text);

bool arch_equal(const ArchConfig& a, const ArchConfig& b);

// Every reason the config cannot be built, one message each; empty = valid.
std::vector<std::string> arch_violations(const ArchConfig& config);

// Parameter keys: convK.weight/bias, bnK.scale/shift, se.w1/w2 (bias-free),
// rbK.fc1.weight/bias, rbK.fc2.weight/bias, rbK.proj.weight (only where the
// block changes width), head.weight/bias. K is 1-based layer order.
template <typename T>
struct ModelT {
  ArchConfig config;
  std::map<std::string, TensorPtr<T>> params;
  std::map<std::string, BnState<T>> bn_state;  // keyed bn1, bn2, ...

  int feature_channels() const { return config.conv_filters.back(); }
  int embedding_dim() const {
    return config.rb_widths.empty() ? config.conv_filters.back()
                                    : config.rb_widths.back();
  }
};

using Model = ModelT<float>;

// Deterministic in seed: weights U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
// biases zero, batchnorm scale 1 / shift 0, running stats (0, 1).
template <typename T>
ModelT<T> build_model(const ArchConfig& config, std::uint64_t seed);

template <typename T>
std::int64_t param_count(const ModelT<T>& model);

// Tape handles for the nodes later stages read or differentiate.
template <typename T>
struct ForwardNodes {
  typename Tape<T>::Var features;   // conv stack output [N,C,H,W]
  typename Tape<T>::Var attended;   // after SE (== features when SE is off)
  typename Tape<T>::Var pooled;     // per-channel means [N,C]
  typename Tape<T>::Var embedding;  // residual stack output [N,d]
  typename Tape<T>::Var logits;     // [N,n_classes]
};

// Runs the network on the tape; x is [N,in,S,S] or a single [in,S,S].
// training selects batch statistics (updating model.bn_state in place)
// versus running statistics. Parameters register under their map keys.
template <typename T>
ForwardNodes<T> forward(ModelT<T>& model, Tape<T>& tape, TensorPtr<T> x,
                        bool training);

template <typename T>
struct Prediction {
  Tensor<T> probs;      // [N,n_classes], rows sum to 1
  Tensor<T> logits;     // [N,n_classes]
  Tensor<T> embedding;  // [N,d]
};

// Inference with frozen statistics; accepts a single image or a batch.
template <typename T>
Prediction<T> classify(const ModelT<T>& model, const Tensor<T>& x);

// Standalone eval-mode pieces of the same network. Each matches the taped
// pass bitwise; tests hold them to that.
template <typename T>
Tensor<T> forward_features(const ModelT<T>& model, const Tensor<T>& x);

// GAP -> w1 -> relu -> w2 -> sigmoid -> per-channel rescale of x_fe.
template <typename T>
Tensor<T> se_block(const Tensor<T>& x_fe, const Tensor<T>& w1,
                   const Tensor<T>& w2);

template <typename T>
Tensor<T> residual_stack(const ModelT<T>& model, const Tensor<T>& v);

extern template struct ModelT<float>;
extern template struct ModelT<double>;

}  // namespace dssc
