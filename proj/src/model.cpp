#include "model.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "error.hpp"
#include "ops.hpp"
#include "rng.hpp"

namespace dssc {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

std::string conv_key(std::size_t i) { return "conv" + std::to_string(i + 1); }
std::string bn_key(std::size_t i) { return "bn" + std::to_string(i + 1); }
std::string rb_key(std::size_t i) { return "rb" + std::to_string(i + 1); }

template <typename T>
TensorPtr<T> init_weight(Rng& rng, std::vector<int> shape, int fan_in) {
  auto t = make_tensor<T>(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t->size(); ++i) {
    (*t)[i] = static_cast<T>(rng.uniform(-bound, bound));
  }
  return t;
}

template <typename T>
Tensor<T> ensure_batched(const Tensor<T>& x) {
  if (x.ndim() == 3) {
    return Tensor<T>::from(
        {1, x.dim(0), x.dim(1), x.dim(2)},
        std::vector<T>(x.data(), x.data() + x.size()));
  }
  return x;
}

template <typename T>
void check_input_shape(const ArchConfig& c, const Tensor<T>& x) {
  if (x.ndim() != 4 || x.dim(1) != c.in_channels ||
      x.dim(2) != c.image_size || x.dim(3) != c.image_size) {
    throw Error(ErrorCode::shape_mismatch,
                "model input must be [N, " + std::to_string(c.in_channels) +
                    ", " + std::to_string(c.image_size) + ", " +
                    std::to_string(c.image_size) + "] or a single image, got " +
                    x.shape_str());
  }
}

}  // namespace

ArchConfig arch_preset(const std::string& name) {
  ArchConfig c;
  if (name == "C1") return c;
  if (name == "C2") {
    c.use_se = false;
    return c;
  }
  if (name == "C3") {
    c.conv_filters = {128, 256};
    return c;
  }
  if (name == "C4") {
    c.conv_filters = {256};
    c.rb_widths = {256, 512};
    return c;
  }
  if (name == "C5") {
    c.rb_widths = {512, 1024};
    return c;
  }
  if (name == "C6") {
    c.rb_widths = {1024};
    return c;
  }
  if (name == "cnn_se_baseline") {
    c.rb_widths = {};
    return c;
  }
  throw Error(ErrorCode::not_found,
              "unknown architecture preset \"" + name +
                  "\"; known presets: C1, C2, C3, C4, C5, C6, cnn_se_baseline");
}

const std::vector<std::string>& arch_preset_names() {
  static const std::vector<std::string> names = {
      "C1", "C2", "C3", "C4", "C5", "C6", "cnn_se_baseline"};
  return names;
}

std::string arch_to_json(const ArchConfig& c) {
  std::ostringstream os;
  auto list = [&os](const std::vector<int>& v) {
    os << '[';
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) os << ',';
      os << v[i];
    }
    os << ']';
  };
  os << "{\"conv_filters\":";
  list(c.conv_filters);
  os << ",\"image_size\":" << c.image_size
     << ",\"in_channels\":" << c.in_channels
     << ",\"n_classes\":" << c.n_classes << ",\"rb_widths\":";
  list(c.rb_widths);
  os << ",\"se_reduction\":" << c.se_reduction << ",\"use_se\":"
     << (c.use_se ? "true" : "false") << '}';
  return os.str();
}

ArchConfig arch_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::format, std::string("arch json: ") + e.what());
  }
  if (!j.is_object()) {
    throw Error(ErrorCode::format, "arch json: expected an object");
  }
  try {
    ArchConfig c;
    c.conv_filters = j.at("conv_filters").get<std::vector<int>>();
    c.use_se = j.at("use_se").get<bool>();
    c.se_reduction = j.at("se_reduction").get<int>();
    c.rb_widths = j.at("rb_widths").get<std::vector<int>>();
    c.n_classes = j.at("n_classes").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.image_size = j.at("image_size").get<int>();
    return c;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::format, std::string("arch json: ") + e.what());
  }
}

bool arch_equal(const ArchConfig& a, const ArchConfig& b) {
  return a.conv_filters == b.conv_filters && a.use_se == b.use_se &&
         a.se_reduction == b.se_reduction && a.rb_widths == b.rb_widths &&
         a.n_classes == b.n_classes && a.in_channels == b.in_channels &&
         a.image_size == b.image_size;
}

std::vector<std::string> arch_violations(const ArchConfig& c) {
  std::vector<std::string> out;
  if (c.conv_filters.empty()) {
    out.push_back("conv_filters must not be empty");
  }
  for (std::size_t i = 0; i < c.conv_filters.size(); ++i) {
    if (c.conv_filters[i] < 1) {
      out.push_back("conv_filters[" + std::to_string(i) +
                    "] must be positive, got " +
                    std::to_string(c.conv_filters[i]));
    }
  }
  for (std::size_t i = 0; i < c.rb_widths.size(); ++i) {
    if (c.rb_widths[i] < 1) {
      out.push_back("rb_widths[" + std::to_string(i) +
                    "] must be positive, got " + std::to_string(c.rb_widths[i]));
    }
  }
  if (c.n_classes < 2) {
    out.push_back("n_classes must be at least 2, got " +
                  std::to_string(c.n_classes));
  }
  if (c.se_reduction < 1) {
    out.push_back("se_reduction must be positive, got " +
                  std::to_string(c.se_reduction));
  } else if (c.use_se && !c.conv_filters.empty() &&
             c.conv_filters.back() > 0 &&
             c.conv_filters.back() % c.se_reduction != 0) {
    out.push_back("last conv width " + std::to_string(c.conv_filters.back()) +
                  " is not divisible by se_reduction " +
                  std::to_string(c.se_reduction));
  }
  if (c.in_channels < 1) {
    out.push_back("in_channels must be positive, got " +
                  std::to_string(c.in_channels));
  }
  if (c.image_size < 1) {
    out.push_back("image_size must be positive, got " +
                  std::to_string(c.image_size));
  } else {
    int extent = c.image_size;
    for (std::size_t i = 0; i < c.conv_filters.size(); ++i) {
      if (extent % 2 != 0) {
        out.push_back("image_size " + std::to_string(c.image_size) +
                      " does not survive " +
                      std::to_string(c.conv_filters.size()) +
                      " rounds of 2x2 pooling");
        break;
      }
      extent /= 2;
    }
  }
  return out;
}

template <typename T>
ModelT<T> build_model(const ArchConfig& config, std::uint64_t seed) {
  const auto violations = arch_violations(config);
  if (!violations.empty()) {
    std::string msg = "invalid architecture: " + violations[0];
    for (std::size_t i = 1; i < violations.size(); ++i) {
      msg += "; " + violations[i];
    }
    throw Error(ErrorCode::config, msg);
  }

  ModelT<T> model;
  model.config = config;
  Rng rng(seed);

  int c_in = config.in_channels;
  for (std::size_t i = 0; i < config.conv_filters.size(); ++i) {
    const int f = config.conv_filters[i];
    model.params[conv_key(i) + ".weight"] =
        init_weight<T>(rng, {f, c_in, 3, 3}, c_in * 9);
    model.params[conv_key(i) + ".bias"] = make_tensor<T>(std::vector<int>{f}, T(0));
    model.params[bn_key(i) + ".scale"] = make_tensor<T>(std::vector<int>{f}, T(1));
    model.params[bn_key(i) + ".shift"] = make_tensor<T>(std::vector<int>{f}, T(0));
    model.bn_state[bn_key(i)] =
        BnState<T>{make_tensor<T>(std::vector<int>{f}, T(0)), make_tensor<T>(std::vector<int>{f}, T(1))};
    c_in = f;
  }

  const int channels = config.conv_filters.back();
  if (config.use_se) {
    const int bottleneck = channels / config.se_reduction;
    model.params["se.w1"] =
        init_weight<T>(rng, {bottleneck, channels}, channels);
    model.params["se.w2"] =
        init_weight<T>(rng, {channels, bottleneck}, bottleneck);
  }

  int d_in = channels;
  for (std::size_t i = 0; i < config.rb_widths.size(); ++i) {
    const int width = config.rb_widths[i];
    const std::string rb = rb_key(i);
    model.params[rb + ".fc1.weight"] = init_weight<T>(rng, {width, d_in}, d_in);
    model.params[rb + ".fc1.bias"] = make_tensor<T>(std::vector<int>{width}, T(0));
    model.params[rb + ".fc2.weight"] =
        init_weight<T>(rng, {width, width}, width);
    model.params[rb + ".fc2.bias"] = make_tensor<T>(std::vector<int>{width}, T(0));
    if (d_in != width) {
      model.params[rb + ".proj.weight"] =
          init_weight<T>(rng, {width, d_in}, d_in);
    }
    d_in = width;
  }

  model.params["head.weight"] =
      init_weight<T>(rng, {config.n_classes, d_in}, d_in);
  model.params["head.bias"] = make_tensor<T>(std::vector<int>{config.n_classes}, T(0));
  return model;
}

template <typename T>
std::int64_t param_count(const ModelT<T>& model) {
  std::int64_t n = 0;
  for (const auto& [key, tensor] : model.params) n += tensor->size();
  return n;
}

template <typename T>
ForwardNodes<T> forward(ModelT<T>& model, Tape<T>& tape, TensorPtr<T> x,
                        bool training) {
  using Var = typename Tape<T>::Var;
  const ArchConfig& c = model.config;
  if (x->ndim() == 3) {
    x = make_tensor<T>(ensure_batched(*x));
  }
  check_input_shape(c, *x);

  auto P = [&](const std::string& key) {
    auto it = model.params.find(key);
    if (it == model.params.end()) {
      throw Error(ErrorCode::internal, "missing parameter " + key);
    }
    return tape.param(key, it->second);
  };

  Var h = tape.leaf(std::move(x));
  for (std::size_t i = 0; i < c.conv_filters.size(); ++i) {
    h = tape.conv2d(h, P(conv_key(i) + ".weight"), P(conv_key(i) + ".bias"),
                    ops::Padding::same);
    h = tape.batchnorm(h, P(bn_key(i) + ".scale"), P(bn_key(i) + ".shift"),
                       model.bn_state.at(bn_key(i)), training, T(kBnEps),
                       T(kBnMomentum));
    h = tape.relu(h);
    h = tape.maxpool2d(h);
  }

  ForwardNodes<T> nodes;
  nodes.features = h;
  if (c.use_se) {
    Var squeezed = tape.global_avg_pool(h);
    Var z = tape.relu(tape.dense(squeezed, P("se.w1"), Var{}));
    Var s = tape.sigmoid(tape.dense(z, P("se.w2"), Var{}));
    h = tape.channel_scale(h, s);
  }
  nodes.attended = h;

  Var v = tape.global_avg_pool(h);
  nodes.pooled = v;

  int d_in = c.conv_filters.back();
  for (std::size_t i = 0; i < c.rb_widths.size(); ++i) {
    const std::string rb = rb_key(i);
    const int width = c.rb_widths[i];
    Var f = tape.dense(v, P(rb + ".fc1.weight"), P(rb + ".fc1.bias"));
    f = tape.relu(f);
    f = tape.dense(f, P(rb + ".fc2.weight"), P(rb + ".fc2.bias"));
    Var skip =
        d_in == width ? v : tape.dense(v, P(rb + ".proj.weight"), Var{});
    v = tape.relu(tape.add(f, skip));
    d_in = width;
  }
  nodes.embedding = v;
  nodes.logits = tape.dense(v, P("head.weight"), P("head.bias"));
  return nodes;
}

template <typename T>
Prediction<T> classify(const ModelT<T>& model, const Tensor<T>& x) {
  // Shallow copy: tensors are shared, and an eval pass only reads them.
  ModelT<T> shared = model;
  Tape<T> tape;
  auto nodes = forward(shared, tape, make_tensor<T>(x), false);
  Prediction<T> out;
  out.logits = tape.value(nodes.logits);
  out.probs = ops::softmax(out.logits);
  out.embedding = tape.value(nodes.embedding);
  return out;
}

template <typename T>
Tensor<T> forward_features(const ModelT<T>& model, const Tensor<T>& x) {
  const ArchConfig& c = model.config;
  Tensor<T> h = ensure_batched(x);
  check_input_shape(c, h);
  for (std::size_t i = 0; i < c.conv_filters.size(); ++i) {
    const auto& st = model.bn_state.at(bn_key(i));
    h = ops::conv2d(h, *model.params.at(conv_key(i) + ".weight"),
                    *model.params.at(conv_key(i) + ".bias"),
                    ops::Padding::same);
    h = ops::batchnorm_eval(h, *model.params.at(bn_key(i) + ".scale"),
                            *model.params.at(bn_key(i) + ".shift"),
                            *st.running_mean, *st.running_var, T(kBnEps));
    h = ops::relu(h);
    h = ops::maxpool2d(h, nullptr);
  }
  return h;
}

template <typename T>
Tensor<T> se_block(const Tensor<T>& x_fe, const Tensor<T>& w1,
                   const Tensor<T>& w2) {
  const Tensor<T> squeezed = ops::global_avg_pool(x_fe);
  const Tensor<T> z = ops::relu(ops::dense<T>(squeezed, w1, nullptr));
  const Tensor<T> s = ops::sigmoid(ops::dense<T>(z, w2, nullptr));
  return ops::channel_scale(x_fe, s);
}

template <typename T>
Tensor<T> residual_stack(const ModelT<T>& model, const Tensor<T>& v_in) {
  const ArchConfig& c = model.config;
  const int d0 = c.conv_filters.back();
  const int got = v_in.dim(v_in.ndim() - 1);
  if (got != d0) {
    throw Error(ErrorCode::shape_mismatch,
                "residual stack expects width " + std::to_string(d0) +
                    ", got " + v_in.shape_str());
  }
  Tensor<T> v = v_in;
  int d_in = d0;
  for (std::size_t i = 0; i < c.rb_widths.size(); ++i) {
    const std::string rb = rb_key(i);
    const int width = c.rb_widths[i];
    Tensor<T> f =
        ops::dense(v, *model.params.at(rb + ".fc1.weight"),
                   model.params.at(rb + ".fc1.bias").get());
    f = ops::relu(f);
    f = ops::dense(f, *model.params.at(rb + ".fc2.weight"),
                   model.params.at(rb + ".fc2.bias").get());
    const Tensor<T> skip =
        d_in == width
            ? v
            : ops::dense<T>(v, *model.params.at(rb + ".proj.weight"), nullptr);
    v = ops::relu(ops::add(f, skip));
    d_in = width;
  }
  return v;
}

template struct ModelT<float>;
template struct ModelT<double>;

#define DSSC_INSTANTIATE_MODEL(T)                                            \
  template ModelT<T> build_model<T>(const ArchConfig&, std::uint64_t);       \
  template std::int64_t param_count<T>(const ModelT<T>&);                    \
  template ForwardNodes<T> forward<T>(ModelT<T>&, Tape<T>&, TensorPtr<T>,    \
                                      bool);                                 \
  template Prediction<T> classify<T>(const ModelT<T>&, const Tensor<T>&);    \
  template Tensor<T> forward_features<T>(const ModelT<T>&, const Tensor<T>&); \
  template Tensor<T> se_block<T>(const Tensor<T>&, const Tensor<T>&,         \
                                 const Tensor<T>&);                          \
  template Tensor<T> residual_stack<T>(const ModelT<T>&, const Tensor<T>&);

DSSC_INSTANTIATE_MODEL(float)
DSSC_INSTANTIATE_MODEL(double)

#undef DSSC_INSTANTIATE_MODEL

}  // namespace dssc
