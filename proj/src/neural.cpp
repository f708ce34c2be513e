#include "mvtn/neural.hpp"

#include <algorithm>
#include <cmath>

#include "mvtn/error.hpp"
#include "mvtn/rng.hpp"

namespace mvtn {

namespace {

using ad::Tape;
using ad::TensorView;
using ad::Var;

void check_mlp_spec(const MlpSpec& spec) {
  if (spec.widths.size() < 2) fail(ErrorCode::WidthMismatch, "MLP needs at least 2 widths");
  for (int w : spec.widths) {
    if (w < 1) fail(ErrorCode::WidthMismatch, "MLP widths must be >= 1");
  }
}

void he_uniform_fill(std::vector<double>& data, int fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / fan_in);
  for (double& v : data) v = rng.uniform(-limit, limit);
}

Var activate(Var x, Activation act) {
  return act == Activation::Relu ? ad::relu(x) : ad::tanh(x);
}

// One linear layer on a vector input: y = W x + b, W stored [out, in] row-major.
TensorView linear_forward(const StoreVars& params, const std::string& weight_name,
                          const std::string& bias_name, const TensorView& input) {
  const auto w = params.of(weight_name);
  const auto b = params.of(bias_name);
  const int in = static_cast<int>(input.elems.size());
  const int out = static_cast<int>(b.size());
  if (static_cast<int>(w.size()) != in * out) {
    fail(ErrorCode::WidthMismatch, weight_name + " does not match input width " + std::to_string(in));
  }
  TensorView y;
  y.shape = {out};
  y.elems.reserve(out);
  for (int o = 0; o < out; ++o) {
    y.elems.push_back(ad::dot(std::span<const Var>(input.elems.data(), input.elems.size()),
                              w.subspan(static_cast<std::size_t>(o) * in, in), b[o]));
  }
  return y;
}

struct MlpResult {
  TensorView output;
  TensorView prelogit;  // input to the final linear layer
};

MlpResult mlp_forward_full(const MlpSpec& spec, const StoreVars& params, const TensorView& input) {
  check_mlp_spec(spec);
  if (static_cast<int>(input.elems.size()) != spec.widths.front()) {
    fail(ErrorCode::WidthMismatch, "MLP input width mismatch");
  }
  TensorView x = input;
  MlpResult result;
  const int layers = static_cast<int>(spec.widths.size()) - 1;
  for (int l = 0; l < layers; ++l) {
    if (l == layers - 1) result.prelogit = x;
    const std::string tag = "layer" + std::to_string(l);
    x = linear_forward(params, tag + ".weight", tag + ".bias", x);
    if (l + 1 < layers) {
      for (Var& v : x.elems) v = activate(v, spec.hidden);
    }
  }
  result.output = std::move(x);
  return result;
}

}  // namespace

std::int64_t ParameterStore::total_parameters() const {
  std::int64_t n = 0;
  for (const ParamArray& a : arrays) n += a.size();
  return n;
}

const ParamArray& ParameterStore::find(std::string_view name) const {
  for (const ParamArray& a : arrays) {
    if (a.name == name) return a;
  }
  fail(ErrorCode::WidthMismatch, "no parameter array named " + std::string(name));
}

ParamArray& ParameterStore::find(std::string_view name) {
  return const_cast<ParamArray&>(static_cast<const ParameterStore*>(this)->find(name));
}

bool ParameterStore::has(std::string_view name) const {
  for (const ParamArray& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

bool ParameterStore::all_finite() const {
  for (const ParamArray& a : arrays) {
    for (double v : a.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

MlpSpec mvtn_regressor_spec(int views, int point_feature_dim) {
  const int m = views, b = point_feature_dim;
  MlpSpec spec;
  spec.widths = {b + 2 * m, b, b, 5 * m, 2 * m, 2 * m};
  spec.hidden = Activation::Tanh;
  spec.zero_init_final = true;
  return spec;
}

MlpSpec classifier_spec(int feature_dim, int classes) {
  MlpSpec spec;
  spec.widths = {feature_dim, 64, classes};
  spec.hidden = Activation::Relu;
  return spec;
}

std::int64_t mlp_parameter_count(const MlpSpec& spec) {
  std::int64_t n = 0;
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    n += static_cast<std::int64_t>(spec.widths[l]) * spec.widths[l + 1] + spec.widths[l + 1];
  }
  return n;
}

ParameterStore init_mlp_params(const MlpSpec& spec, std::uint64_t seed) {
  check_mlp_spec(spec);
  Rng rng(seed);
  ParameterStore store;
  const int layers = static_cast<int>(spec.widths.size()) - 1;
  for (int l = 0; l < layers; ++l) {
    const int in = spec.widths[l], out = spec.widths[l + 1];
    ParamArray weight;
    weight.name = "layer" + std::to_string(l) + ".weight";
    weight.shape = {out, in};
    weight.data.resize(static_cast<std::size_t>(out) * in, 0.0);
    const bool zero = spec.zero_init_final && l == layers - 1;
    if (!zero) he_uniform_fill(weight.data, in, rng);
    store.arrays.push_back(std::move(weight));

    ParamArray bias;
    bias.name = "layer" + std::to_string(l) + ".bias";
    bias.shape = {out};
    bias.data.resize(out, 0.0);
    store.arrays.push_back(std::move(bias));
  }
  return store;
}

ParameterStore init_point_encoder_params(const PointEncoderSpec& spec, std::uint64_t seed) {
  if (spec.point_mlp.empty() || spec.point_mlp.front() != 3) {
    fail(ErrorCode::WidthMismatch, "point MLP must start at width 3");
  }
  if (spec.head.empty() || spec.head.front() != spec.point_mlp.back()) {
    fail(ErrorCode::WidthMismatch, "head must start at the pooled width");
  }
  Rng rng(seed);
  ParameterStore store;
  auto add_layers = [&store, &rng](const std::vector<int>& widths, const std::string& prefix) {
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const int in = widths[l], out = widths[l + 1];
      ParamArray weight;
      weight.name = prefix + std::to_string(l) + ".weight";
      weight.shape = {out, in};
      weight.data.resize(static_cast<std::size_t>(out) * in);
      he_uniform_fill(weight.data, in, rng);
      store.arrays.push_back(std::move(weight));
      ParamArray bias;
      bias.name = prefix + std::to_string(l) + ".bias";
      bias.shape = {out};
      bias.data.resize(out, 0.0);
      store.arrays.push_back(std::move(bias));
    }
  };
  add_layers(spec.point_mlp, "point");
  add_layers(spec.head, "head");
  return store;
}

ParameterStore init_view_cnn_params(const ViewCnnSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  ParameterStore store;
  int channels = spec.in_channels;
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    const ConvStage& stage = spec.stages[s];
    ParamArray kernel;
    kernel.name = "stage" + std::to_string(s) + ".kernel";
    kernel.shape = {stage.kernel, stage.kernel, channels, stage.out_channels};
    kernel.data.resize(static_cast<std::size_t>(stage.kernel) * stage.kernel * channels *
                       stage.out_channels);
    he_uniform_fill(kernel.data, stage.kernel * stage.kernel * channels, rng);
    store.arrays.push_back(std::move(kernel));
    ParamArray bias;
    bias.name = "stage" + std::to_string(s) + ".bias";
    bias.shape = {stage.out_channels};
    bias.data.resize(stage.out_channels, 0.0);
    store.arrays.push_back(std::move(bias));
    channels = stage.out_channels;
  }
  ParamArray head_w;
  head_w.name = "head.weight";
  head_w.shape = {spec.feature_dim, channels};
  head_w.data.resize(static_cast<std::size_t>(spec.feature_dim) * channels);
  he_uniform_fill(head_w.data, channels, rng);
  store.arrays.push_back(std::move(head_w));
  ParamArray head_b;
  head_b.name = "head.bias";
  head_b.shape = {spec.feature_dim};
  head_b.data.resize(spec.feature_dim, 0.0);
  store.arrays.push_back(std::move(head_b));
  return store;
}

std::span<const Var> StoreVars::of(std::string_view name) const {
  for (std::size_t i = 0; i < store->arrays.size(); ++i) {
    if (store->arrays[i].name == name) return vars[i];
  }
  fail(ErrorCode::WidthMismatch, "no parameter array named " + std::string(name));
}

namespace {

StoreVars make_store_vars(Tape& tape, const ParameterStore& store, bool trainable) {
  StoreVars out;
  out.store = &store;
  out.vars.reserve(store.arrays.size());
  for (const ParamArray& a : store.arrays) {
    std::vector<Var> vars;
    vars.reserve(a.data.size());
    for (double v : a.data) vars.push_back(trainable ? tape.leaf(v) : tape.constant(v));
    out.vars.push_back(std::move(vars));
  }
  return out;
}

}  // namespace

StoreVars make_store_leaves(Tape& tape, const ParameterStore& store) {
  return make_store_vars(tape, store, true);
}

StoreVars make_store_constants(Tape& tape, const ParameterStore& store) {
  return make_store_vars(tape, store, false);
}

std::vector<std::vector<double>> read_store_grads(const StoreVars& vars) {
  std::vector<std::vector<double>> grads;
  grads.reserve(vars.vars.size());
  for (const auto& array : vars.vars) {
    std::vector<double> g;
    g.reserve(array.size());
    for (const Var& v : array) g.push_back(v.grad());
    grads.push_back(std::move(g));
  }
  return grads;
}

TensorView mlp_forward(Tape& tape, const MlpSpec& spec, const StoreVars& params,
                       const TensorView& input) {
  (void)tape;
  return mlp_forward_full(spec, params, input).output;
}

TensorView point_encoder_forward(Tape& tape, const PointEncoderSpec& spec,
                                 const StoreVars& params, const PointCloud& cloud) {
  if (cloud.points.empty()) fail(ErrorCode::ShapeMismatch, "point cloud is empty");
  const int pooled_width = spec.point_mlp.back();
  const std::size_t point_count = cloud.points.size();

  // Shared MLP per point. Features are stored feature-major so the pooling
  // pass walks contiguous memory.
  std::vector<std::vector<Var>> features(pooled_width);
  for (auto& f : features) f.reserve(point_count);

  TensorView coords;
  coords.shape = {3};
  for (const Vec3& p : cloud.points) {
    coords.elems = {tape.constant(p.x), tape.constant(p.y), tape.constant(p.z)};
    TensorView x = coords;
    for (std::size_t l = 0; l + 1 < spec.point_mlp.size(); ++l) {
      const std::string tag = "point" + std::to_string(l);
      x = linear_forward(params, tag + ".weight", tag + ".bias", x);
      for (Var& v : x.elems) v = activate(v, Activation::Relu);
    }
    for (int f = 0; f < pooled_width; ++f) features[f].push_back(x.elems[f]);
  }

  // Coordinate-wise max over points: order-independent, exact.
  TensorView pooled;
  pooled.shape = {pooled_width};
  pooled.elems.reserve(pooled_width);
  for (int f = 0; f < pooled_width; ++f) {
    std::size_t best = 0;
    for (std::size_t p = 1; p < point_count; ++p) {
      if (features[f][p].value() > features[f][best].value()) best = p;
    }
    pooled.elems.push_back(tape.make_node(features[f][best].value(), features[f][best], 1.0));
  }

  TensorView x = pooled;
  for (std::size_t l = 0; l + 1 < spec.head.size(); ++l) {
    const std::string tag = "head" + std::to_string(l);
    x = linear_forward(params, tag + ".weight", tag + ".bias", x);
    if (l + 2 < spec.head.size()) {
      for (Var& v : x.elems) v = activate(v, Activation::Relu);
    }
  }
  return x;
}

TensorView mvtn_forward(Tape& tape, const MlpSpec& spec, const StoreVars& params,
                        const SceneParams& u0, const TensorView& shape_features,
                        MvtnVariant variant) {
  const int m = u0.view_count();
  const int b = static_cast<int>(shape_features.elems.size());
  if (spec.widths.front() != b + 2 * m) {
    fail(ErrorCode::LengthMismatch, "regressor input width does not match b + 2M");
  }
  TensorView input;
  input.shape = {b + 2 * m};
  input.elems.reserve(static_cast<std::size_t>(b) + 2 * m);
  // Angles scaled to O(1); the direct variant has no u0 and feeds zeros.
  for (int i = 0; i < 2 * m; ++i) {
    const double angle = variant == MvtnVariant::Direct ? 0.0 : u0.values[i] / 180.0;
    input.elems.push_back(tape.constant(angle));
  }
  for (const Var& v : shape_features.elems) input.elems.push_back(v);
  return mlp_forward_full(spec, params, input).output;
}

TensorView view_cnn_forward(Tape& tape, const ViewCnnSpec& spec, const StoreVars& params,
                            const TensorView& image) {
  (void)tape;
  if (image.shape.size() != 3 || image.shape[2] != spec.in_channels) {
    fail(ErrorCode::ShapeMismatch, "view CNN expects [h,w,c] input with matching channels");
  }
  TensorView x = image;
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    const ConvStage& stage = spec.stages[s];
    const std::string tag = "stage" + std::to_string(s);
    TensorView bias;
    bias.shape = {stage.out_channels};
    bias.elems.assign(params.of(tag + ".bias").begin(), params.of(tag + ".bias").end());
    TensorView kernel;
    kernel.shape = {stage.kernel, stage.kernel, x.shape[2], stage.out_channels};
    kernel.elems.assign(params.of(tag + ".kernel").begin(), params.of(tag + ".kernel").end());
    x = ad::conv2d_valid(x, kernel, bias, stage.stride);
    x = ad::relu(x);
    if (stage.pool > 1) x = ad::max_pool(x, stage.pool);
  }
  TensorView gap = ad::global_avg_pool(x);
  const auto w = params.of("head.weight");
  const auto b = params.of("head.bias");
  TensorView out;
  out.shape = {spec.feature_dim};
  out.elems.reserve(spec.feature_dim);
  const int in = static_cast<int>(gap.elems.size());
  for (int o = 0; o < spec.feature_dim; ++o) {
    Var y = ad::dot(std::span<const Var>(gap.elems.data(), gap.elems.size()),
                    w.subspan(static_cast<std::size_t>(o) * in, in), b[o]);
    out.elems.push_back(ad::relu(y));
  }
  return out;
}

HeadOutput mvcnn_head_forward(Tape& tape, const MlpSpec& spec, const StoreVars& params,
                              std::span<const TensorView> view_features) {
  if (view_features.empty()) fail(ErrorCode::ShapeMismatch, "no view features");
  TensorView pooled = ad::elementwise_max(view_features);
  MlpResult result = mlp_forward_full(spec, params, pooled);
  (void)tape;
  return {std::move(result.output), std::move(result.prelogit)};
}

HeadOutput late_fusion_forward(Tape& tape, const MlpSpec& joint_spec, const StoreVars& joint_params,
                               const TensorView& point_feature,
                               const TensorView& pooled_view_feature) {
  if (point_feature.elems.size() != pooled_view_feature.elems.size()) {
    fail(ErrorCode::WidthMismatch, "fusion branches have different widths");
  }
  const TensorView branches[2] = {point_feature, pooled_view_feature};
  TensorView fused = ad::elementwise_max(branches);
  MlpResult result = mlp_forward_full(joint_spec, joint_params, fused);
  (void)tape;
  return {std::move(result.output), std::move(result.prelogit)};
}

}  // namespace mvtn
