#include "train.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <utility>

#include "error.hpp"
#include "ops.hpp"
#include "rng.hpp"

namespace dssc {

namespace {

template <typename T>
int argmax_row(const Tensor<T>& logits, int row) {
  const int c = logits.dim(1);
  int best = 0;
  T best_v = logits[static_cast<std::int64_t>(row) * c];
  for (int k = 1; k < c; ++k) {
    const T v = logits[static_cast<std::int64_t>(row) * c + k];
    if (v > best_v) {
      best_v = v;
      best = k;
    }
  }
  return best;
}

template <typename T>
std::vector<double> resolve_class_weights(const TrainConfig& cfg,
                                          const Dataset<T>& data,
                                          int n_classes) {
  switch (cfg.class_weight_mode) {
    case WeightMode::uniform:
      return std::vector<double>(n_classes, 1.0);
    case WeightMode::explicit_weights: {
      if (static_cast<int>(cfg.explicit_weights.size()) != n_classes) {
        throw Error(ErrorCode::config,
                    "explicit class weights have length " +
                        std::to_string(cfg.explicit_weights.size()) +
                        ", expected " + std::to_string(n_classes));
      }
      for (double w : cfg.explicit_weights) {
        if (!(w > 0.0)) {
          throw Error(ErrorCode::config,
                      "explicit class weights must be positive");
        }
      }
      return cfg.explicit_weights;
    }
    case WeightMode::derived: {
      std::vector<std::int64_t> counts(n_classes, 0);
      for (const auto& s : data) ++counts[s.label];
      return derive_class_weights(counts);
    }
  }
  throw Error(ErrorCode::internal, "unreachable weight mode");
}

}  // namespace

std::vector<std::string> train_config_violations(const TrainConfig& cfg) {
  std::vector<std::string> out;
  if (cfg.batch_size < 1) {
    out.push_back("batch_size must be at least 1, got " +
                  std::to_string(cfg.batch_size));
  }
  if (cfg.epochs < 1) {
    out.push_back("epochs must be at least 1, got " +
                  std::to_string(cfg.epochs));
  }
  // Zero is allowed so a run can be replayed as a no-op; negative rates
  // would ascend the loss.
  if (!(cfg.learning_rate >= 0.0)) {
    out.push_back("learning_rate must be non-negative");
  }
  if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0)) {
    out.push_back("adam_beta1 must lie in [0,1)");
  }
  if (!(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0)) {
    out.push_back("adam_beta2 must lie in [0,1)");
  }
  if (!(cfg.adam_eps > 0.0)) {
    out.push_back("adam_eps must be positive");
  }
  if (cfg.class_weight_mode == WeightMode::explicit_weights &&
      cfg.explicit_weights.empty()) {
    out.push_back("explicit_weights is empty under explicit weight mode");
  }
  return out;
}

std::vector<double> derive_class_weights(
    const std::vector<std::int64_t>& counts) {
  if (counts.empty()) {
    throw Error(ErrorCode::invalid_argument, "no class counts given");
  }
  std::int64_t total = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] <= 0) {
      throw Error(ErrorCode::invalid_argument,
                  "class " + std::to_string(c) +
                      " has no samples; derived weights are undefined, use "
                      "uniform or explicit weights");
    }
    total += counts[c];
  }
  const auto n_classes = static_cast<double>(counts.size());
  std::vector<double> w(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    w[c] = static_cast<double>(total) /
           (n_classes * static_cast<double>(counts[c]));
  }
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / n_classes;
  for (double& x : w) x /= mean;
  return w;
}

template <typename T>
void adam_step(ModelT<T>& model, const GradMap<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg) {
  for (const auto& [path, g] : grads) {
    if (!all_finite(g)) {
      throw Error(ErrorCode::numeric,
                  "non-finite gradient for parameter " + path);
    }
    if (model.params.find(path) == model.params.end()) {
      throw Error(ErrorCode::internal,
                  "gradient for unknown parameter " + path);
    }
  }

  state.t += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));

  for (const auto& [path, g] : grads) {
    Tensor<T>& p = *model.params.at(path);
    auto m_it = state.m.find(path);
    if (m_it == state.m.end()) {
      m_it = state.m.emplace(path, make_tensor<T>(p.shape(), T(0))).first;
      state.v.emplace(path, make_tensor<T>(p.shape(), T(0)));
    }
    Tensor<T>& m = *m_it->second;
    Tensor<T>& v = *state.v.at(path);
    if (g.shape() != p.shape()) {
      throw Error(ErrorCode::shape_mismatch,
                  "gradient shape " + g.shape_str() + " for parameter " +
                      path + " of shape " + p.shape_str());
    }
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = cfg.learning_rate * (mi / bc1) /
                          (std::sqrt(vi / bc2) + cfg.adam_eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - step);
    }
  }
}

void write_training_log(const std::string& path,
                        const std::vector<EpochRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f.good()) {
    throw Error(ErrorCode::io, "cannot open " + path + " for writing");
  }
  f << "epoch,split,loss,accuracy\n";
  char buf[128];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.17g,%.17g\n", row.epoch,
                  row.split.c_str(), row.loss, row.accuracy);
    f << buf;
  }
  if (!f.good()) {
    throw Error(ErrorCode::io, "short write to " + path);
  }
}

template <typename T>
TrainResult<T> train(ModelT<T>& model, const Dataset<T>& data,
                     const TrainConfig& cfg, const EpochCallback& on_epoch,
                     AdamState<T>* resume) {
  const auto violations = train_config_violations(cfg);
  if (!violations.empty()) {
    std::string msg = "invalid training config: " + violations[0];
    for (std::size_t i = 1; i < violations.size(); ++i) {
      msg += "; " + violations[i];
    }
    throw Error(ErrorCode::config, msg);
  }
  if (data.empty()) {
    throw Error(ErrorCode::invalid_argument, "training dataset is empty");
  }
  const ArchConfig& arch = model.config;
  const std::vector<int> want = {arch.in_channels, arch.image_size,
                                 arch.image_size};
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data[i].image || data[i].image->shape() != want) {
      throw Error(ErrorCode::shape_mismatch,
                  "sample " + std::to_string(i) + " (" + data[i].source_id +
                      ") does not match the model input shape");
    }
    if (data[i].label < 0 || data[i].label >= arch.n_classes) {
      throw Error(ErrorCode::invalid_argument,
                  "sample " + std::to_string(i) + " (" + data[i].source_id +
                      ") has label " + std::to_string(data[i].label) +
                      ", valid range is [0, " +
                      std::to_string(arch.n_classes) + ")");
    }
  }

  // One BLAS thread keeps batch reductions in a fixed order.
  openblas_set_num_threads(1);

  TrainResult<T> result;
  result.class_weights = resolve_class_weights(cfg, data, arch.n_classes);
  if (resume) result.opt = *resume;

  const int n = static_cast<int>(data.size());
  const std::int64_t plane = static_cast<std::int64_t>(arch.in_channels) *
                             arch.image_size * arch.image_size;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Stream 1 of the seed; stream 0 belongs to parameter initialization.
  Rng rng(Rng::mix(cfg.seed, 1));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    int correct = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, n - start);
      auto batch = make_tensor<T>(std::vector<int>{
          b, arch.in_channels, arch.image_size, arch.image_size});
      std::vector<int> labels(b);
      for (int j = 0; j < b; ++j) {
        const Sample<T>& s = data[order[start + j]];
        std::copy(s.image->data(), s.image->data() + plane,
                  batch->data() + j * plane);
        labels[j] = s.label;
      }

      Tape<T> tape;
      auto nodes = forward(model, tape, batch, true);
      auto loss = tape.weighted_ce(nodes.logits, labels, result.class_weights);
      const double batch_loss = static_cast<double>(tape.value(loss)[0]);
      if (!std::isfinite(batch_loss)) {
        throw Error(ErrorCode::numeric,
                    "non-finite loss in epoch " + std::to_string(epoch));
      }
      const Tensor<T>& logits = tape.value(nodes.logits);
      for (int j = 0; j < b; ++j) {
        if (argmax_row(logits, j) == labels[j]) ++correct;
      }
      loss_sum += batch_loss * b;

      auto grads = tape.backward(loss);
      adam_step(model, grads, result.opt, cfg);
    }

    EpochRow row;
    row.epoch = epoch;
    row.split = "train";
    row.loss = loss_sum / n;
    row.accuracy = static_cast<double>(correct) / n;
    result.log.push_back(row);
    if (on_epoch && !on_epoch(row)) break;
  }
  return result;
}

template <typename T>
ModelT<T> clone_model(const ModelT<T>& model) {
  ModelT<T> out;
  out.config = model.config;
  for (const auto& [key, t] : model.params) {
    out.params[key] = make_tensor<T>(*t);
  }
  for (const auto& [key, st] : model.bn_state) {
    out.bn_state[key] = BnState<T>{make_tensor<T>(*st.running_mean),
                                   make_tensor<T>(*st.running_var)};
  }
  return out;
}

template <typename T>
ModelT<T> restore_for_finetune(const ModelT<T>& source,
                               const ArchConfig& target,
                               std::uint64_t init_seed) {
  ArchConfig source_like = source.config;
  source_like.n_classes = target.n_classes;
  if (!arch_equal(source_like, target)) {
    throw Error(ErrorCode::config,
                "checkpoint architecture " + arch_to_json(source.config) +
                    " is incompatible with requested " + arch_to_json(target) +
                    " (only n_classes may differ)");
  }
  ModelT<T> out = clone_model(source);
  out.config = target;
  if (source.config.n_classes != target.n_classes) {
    ModelT<T> fresh = build_model<T>(target, init_seed);
    out.params["head.weight"] = fresh.params.at("head.weight");
    out.params["head.bias"] = fresh.params.at("head.bias");
  }
  return out;
}

template <typename T>
FinetuneResult<T> finetune(const ModelT<T>& source, const ArchConfig& target,
                           const Dataset<T>& data, const TrainConfig& cfg,
                           const EpochCallback& on_epoch) {
  FinetuneResult<T> out;
  out.model = restore_for_finetune(source, target, cfg.seed);
  out.train = train<T>(out.model, data, cfg, on_epoch, nullptr);
  return out;
}

#define DSSC_INSTANTIATE_TRAIN(T)                                           \
  template void adam_step<T>(ModelT<T>&, const GradMap<T>&, AdamState<T>&,  \
                             const TrainConfig&);                           \
  template TrainResult<T> train<T>(ModelT<T>&, const Dataset<T>&,           \
                                   const TrainConfig&, const EpochCallback&, \
                                   AdamState<T>*);                          \
  template ModelT<T> clone_model<T>(const ModelT<T>&);                      \
  template ModelT<T> restore_for_finetune<T>(const ModelT<T>&,              \
                                             const ArchConfig&,             \
                                             std::uint64_t);                \
  template FinetuneResult<T> finetune<T>(const ModelT<T>&,                  \
                                         const ArchConfig&,                 \
                                         const Dataset<T>&,                 \
                                         const TrainConfig&,                \
                                         const EpochCallback&);

DSSC_INSTANTIATE_TRAIN(float)
DSSC_INSTANTIATE_TRAIN(double)

#undef DSSC_INSTANTIATE_TRAIN

}  // namespace dssc
