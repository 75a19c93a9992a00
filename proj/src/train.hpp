#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "model.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace dssc {

enum class WeightMode { derived, uniform, explicit_weights };

struct TrainConfig {
  int batch_size = 16;
  double learning_rate = 1e-3;
  int epochs = 10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  WeightMode class_weight_mode = WeightMode::derived;
  std::vector<double> explicit_weights;  // read under explicit_weights mode
};

std::vector<std::string> train_config_violations(const TrainConfig& cfg);

// w_c = N_total / (n_classes * N_c), rescaled so the weights average 1.
// A class with no samples has no defined weight; the error says to switch
// to uniform or explicit weights.
std::vector<double> derive_class_weights(const std::vector<std::int64_t>& counts);

// Per-parameter first and second moments plus the shared step counter.
template <typename T>
struct AdamState {
  std::map<std::string, TensorPtr<T>> m;
  std::map<std::string, TensorPtr<T>> v;
  std::int64_t t = 0;
};

// One bias-corrected Adam update over every gradient entry. Moment tensors
// appear lazily on first use. A non-finite gradient aborts with the
// parameter path in the message.
template <typename T>
void adam_step(ModelT<T>& model, const GradMap<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg);

struct EpochRow {
  int epoch = 0;  // 1-based
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
};

// Serialized as epoch,split,loss,accuracy with round-trip-exact %.17g floats.
void write_training_log(const std::string& path,
                        const std::vector<EpochRow>& rows);

// Return false to stop after the current epoch (used by harnesses that train
// to a target; the recipe itself has no stopping rule).
using EpochCallback = std::function<bool(const EpochRow&)>;

template <typename T>
struct TrainResult {
  std::vector<EpochRow> log;
  std::vector<double> class_weights;
  AdamState<T> opt;
};

// Mini-batch training: per-epoch Fisher-Yates shuffle on a stream derived
// from cfg.seed, last partial batch kept, batchnorm in train mode.
// Deterministic for a fixed config and seed.
template <typename T>
TrainResult<T> train(ModelT<T>& model, const Dataset<T>& data,
                     const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                     AdamState<T>* resume = nullptr);

// Copy of source with the head re-initialized from init_seed when the class
// count changes; everything else transfers bit-exactly. Any other
// architecture difference is an error.
template <typename T>
ModelT<T> restore_for_finetune(const ModelT<T>& source,
                               const ArchConfig& target,
                               std::uint64_t init_seed);

template <typename T>
struct FinetuneResult {
  ModelT<T> model;
  TrainResult<T> train;
};

template <typename T>
FinetuneResult<T> finetune(const ModelT<T>& source, const ArchConfig& target,
                           const Dataset<T>& data, const TrainConfig& cfg,
                           const EpochCallback& on_epoch = {});

// Deep copy: training mutates parameters, so shared tensors would alias.
template <typename T>
ModelT<T> clone_model(const ModelT<T>& model);

}  // namespace dssc
