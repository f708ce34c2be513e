#include "mvtn/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <span>
#include <thread>

#include "mvtn/dataset.hpp"
#include "mvtn/error.hpp"
#include "mvtn/rng.hpp"

namespace mvtn {

namespace {

using ad::Tape;
using ad::TensorView;
using ad::Var;

// Seed stream tags; every random choice hangs off (seed, tag, epoch, shape id),
// so the fixed and MVTN pipelines consume identical randomness.
constexpr std::uint64_t kSeedPoints = 0xA1;
constexpr std::uint64_t kSeedLight = 0xB2;
constexpr std::uint64_t kSeedDropout = 0xC3;
constexpr std::uint64_t kSeedNoise = 0xD4;
constexpr std::uint64_t kSeedRandomBase = 0x10;
constexpr std::uint64_t kSeedInitH = 1, kSeedInitG = 2, kSeedInitF = 3, kSeedInitC = 4,
                         kSeedInitFusion = 5;

int worker_count(const TrainConfig& config) {
  if (config.workers > 0) return config.workers;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

ViewCnnSpec view_cnn_for(int image_size, int channels, int feature_dim) {
  ViewCnnSpec spec;
  spec.in_channels = channels;
  spec.feature_dim = feature_dim;
  if (image_size >= 22) {
    spec.stages = {{8, 3, 1, 2}, {16, 3, 1, 2}, {32, 3, 1, 1}};
  } else if (image_size >= 12) {
    spec.stages = {{8, 3, 1, 2}, {16, 3, 1, 1}};
  } else {
    spec.stages = {{8, 3, 1, 1}};
  }
  return spec;
}

struct Pipeline {
  TrainConfig config;
  int num_classes = 0;
  PointEncoderSpec h_spec;
  MlpSpec g_spec;
  ViewCnnSpec f_spec;
  MlpSpec c_spec;
  PointEncoderSpec fusion_spec;
  SceneParams u0;
  ParamBounds bounds;
  RenderSettings settings;

  bool needs_mvtn() const { return config.variant != MvtnVariant::Fixed; }
};

Pipeline make_pipeline(const TrainConfig& config, int num_classes) {
  Pipeline pipe;
  pipe.config = config;
  pipe.num_classes = num_classes;
  pipe.h_spec.point_mlp = {3, 16, 32};
  pipe.h_spec.head = {32, config.point_feature_dim};
  pipe.g_spec = mvtn_regressor_spec(config.views, config.point_feature_dim);
  pipe.f_spec = view_cnn_for(config.image_size, config.channels, config.view_feature_dim);
  pipe.c_spec = classifier_spec(config.view_feature_dim, num_classes);
  pipe.fusion_spec.point_mlp = {3, 16, 32};
  pipe.fusion_spec.head = {32, config.view_feature_dim};
  switch (config.base_config) {
    case BaseConfig::Circular:
      pipe.u0 = circular_config(config.views, config.initial_elevation_deg, config.distance);
      break;
    case BaseConfig::Spherical:
      pipe.u0 = spherical_config(config.views, config.distance);
      break;
    case BaseConfig::Random:
      pipe.u0 =
          random_config(config.views, derive_seed(config.seed, kSeedRandomBase), config.distance);
      break;
  }
  pipe.bounds = default_bounds(config.variant, config.views);
  pipe.settings = config.render_settings();
  return pipe;
}

Pipeline pipeline_from_checkpoint(const Checkpoint& ckpt) {
  Pipeline pipe = make_pipeline(ckpt.config, ckpt.num_classes);
  pipe.u0 = ckpt.u0;  // random base configs live in the checkpoint
  return pipe;
}

enum class ForwardMode { Train, Eval };

struct ForwardSpec {
  const Pipeline* pipe = nullptr;
  const ParameterStore* h = nullptr;
  const ParameterStore* g = nullptr;
  const ParameterStore* f = nullptr;
  const ParameterStore* c = nullptr;
  const ParameterStore* fusion = nullptr;
  bool grads_h_g = false;
  bool grads_f_c = false;
  ForwardMode mode = ForwardMode::Eval;
  int epoch = 0;
};

struct StoreBundle {
  StoreVars h, g, f, c, fusion;
};

StoreVars bind_store(Tape& tape, const ParameterStore* store, bool trainable) {
  if (store == nullptr || store->empty()) return {};
  return trainable ? make_store_leaves(tape, *store) : make_store_constants(tape, *store);
}

struct SceneVars {
  std::vector<Var> azimuths;
  std::vector<Var> elevations;
  Var distance;
};

// u = u0 + bound * tanh(raw) (offset), bound * tanh(raw) (direct), u0 (fixed).
SceneVars predict_scene(Tape& tape, const ForwardSpec& fs, const StoreBundle& bundle,
                        const LabeledShape& shape) {
  const Pipeline& pipe = *fs.pipe;
  const TrainConfig& cfg = pipe.config;
  const int m = cfg.views;
  SceneVars scene;
  scene.azimuths.reserve(m);
  scene.elevations.reserve(m);

  if (cfg.regularizers.learn_distance && fs.g != nullptr && fs.g->has("distance")) {
    scene.distance = bundle.g.of("distance")[0];
  } else {
    scene.distance = tape.constant(pipe.u0.distance);
  }

  if (cfg.variant == MvtnVariant::Fixed) {
    for (int i = 0; i < m; ++i) {
      scene.azimuths.push_back(tape.constant(pipe.u0.azimuth(i)));
      scene.elevations.push_back(tape.constant(pipe.u0.elevation(i)));
    }
    return scene;
  }

  const PointCloud cloud =
      sample_points(shape.mesh, cfg.points, derive_seed(cfg.seed, kSeedPoints, fs.epoch, shape.id));
  TensorView features = point_encoder_forward(tape, pipe.h_spec, bundle.h, cloud);
  TensorView raw = mvtn_forward(tape, pipe.g_spec, bundle.g, pipe.u0, features, cfg.variant);

  for (int i = 0; i < 2 * m; ++i) {
    const double bound = i < m ? pipe.bounds.azimuth_deg : pipe.bounds.elevation_deg;
    Var bounded = ad::mul_const(ad::tanh(raw.elems[i]), bound);
    if (cfg.variant == MvtnVariant::Offset) {
      bounded = ad::add_const(bounded, pipe.u0.values[i]);
    }
    (i < m ? scene.azimuths : scene.elevations).push_back(bounded);
  }
  return scene;
}

struct ForwardOutput {
  Var loss;
  std::vector<double> logits;
  std::vector<double> prelogit;
  std::vector<double> u_values;
  bool correct = false;
};

ForwardOutput forward_sample(Tape& tape, const ForwardSpec& fs, const LabeledShape& shape,
                             StoreBundle& bundle) {
  const Pipeline& pipe = *fs.pipe;
  const TrainConfig& cfg = pipe.config;
  const int m = cfg.views;

  bundle.h = bind_store(tape, fs.h, fs.grads_h_g);
  bundle.g = bind_store(tape, fs.g, fs.grads_h_g);
  bundle.f = bind_store(tape, fs.f, fs.grads_f_c);
  bundle.c = bind_store(tape, fs.c, fs.grads_f_c);
  bundle.fusion = bind_store(tape, fs.fusion, fs.grads_f_c);

  SceneVars scene = predict_scene(tape, fs, bundle, shape);

  if (fs.mode == ForwardMode::Train && cfg.regularizers.view_noise_std_deg > 0) {
    Rng rng(derive_seed(cfg.seed, kSeedNoise, fs.epoch, shape.id));
    for (int i = 0; i < m; ++i) {
      scene.azimuths[i] =
          ad::add_const(scene.azimuths[i], cfg.regularizers.view_noise_std_deg * rng.normal());
    }
    Var lo = tape.constant(-90.0), hi = tape.constant(90.0);
    for (int i = 0; i < m; ++i) {
      Var noisy =
          ad::add_const(scene.elevations[i], cfg.regularizers.view_noise_std_deg * rng.normal());
      scene.elevations[i] = ad::max2(ad::min2(noisy, hi), lo);
    }
  }

  RenderLight light;
  light.ambient = cfg.light_ambient;
  light.diffuse = cfg.light_diffuse;
  if (fs.mode == ForwardMode::Train && cfg.random_train_light) {
    light.mode = LightMode::RandomDirection;
    light.random_direction =
        random_light_direction(derive_seed(cfg.seed, kSeedLight, fs.epoch, shape.id));
  } else {
    light.mode = LightMode::FixedToCamera;
  }

  std::vector<RenderedView> views = render_views_ad(
      tape, shape.mesh, scene.azimuths, scene.elevations, scene.distance, pipe.settings, light);

  if (fs.mode == ForwardMode::Train && cfg.regularizers.view_dropout_p > 0) {
    const auto keep = view_dropout_mask(m, cfg.regularizers.view_dropout_p,
                                        derive_seed(cfg.seed, kSeedDropout, fs.epoch, shape.id));
    for (int i = 0; i < m; ++i) {
      if (keep[i]) continue;
      TensorView blank;
      blank.shape = views[i].pixels.shape;
      blank.elems.reserve(views[i].pixels.elems.size());
      for (std::size_t p = 0; p < views[i].pixels.elems.size(); ++p) {
        blank.elems.push_back(tape.constant(pipe.settings.background[p % pipe.settings.channels]));
      }
      views[i].pixels = std::move(blank);
    }
  }

  std::vector<TensorView> features;
  features.reserve(m);
  for (const RenderedView& view : views) {
    features.push_back(view_cnn_forward(tape, pipe.f_spec, bundle.f, view.pixels));
  }

  HeadOutput head;
  if (cfg.late_fusion) {
    const PointCloud cloud = sample_points(
        shape.mesh, cfg.points, derive_seed(cfg.seed, kSeedPoints, fs.epoch, shape.id));
    TensorView point_feature = point_encoder_forward(tape, pipe.fusion_spec, bundle.fusion, cloud);
    TensorView pooled = ad::elementwise_max(features);
    head = late_fusion_forward(tape, pipe.c_spec, bundle.c, point_feature, pooled);
  } else {
    head = mvcnn_head_forward(tape, pipe.c_spec, bundle.c, features);
  }

  ForwardOutput out;
  out.loss = ad::softmax_cross_entropy(head.logits, shape.class_id);
  out.logits.reserve(head.logits.elems.size());
  for (const Var& v : head.logits.elems) out.logits.push_back(v.value());
  out.prelogit.reserve(head.prelogit.elems.size());
  for (const Var& v : head.prelogit.elems) out.prelogit.push_back(v.value());
  out.u_values.reserve(2 * static_cast<std::size_t>(m));
  for (const Var& v : scene.azimuths) out.u_values.push_back(v.value());
  for (const Var& v : scene.elevations) out.u_values.push_back(v.value());
  const int predicted = static_cast<int>(
      std::max_element(out.logits.begin(), out.logits.end()) - out.logits.begin());
  out.correct = predicted == shape.class_id;
  return out;
}

struct GradGroups {
  std::vector<std::vector<double>> mvtn;  // point encoder arrays, then regressor
  std::vector<std::vector<double>> main;  // backbone, classifier, fusion
};

void append_grads(std::vector<std::vector<double>>& into, const StoreVars& vars) {
  if (vars.store == nullptr) return;
  auto grads = read_store_grads(vars);
  for (auto& a : grads) into.push_back(std::move(a));
}

struct SampleResult {
  double loss = 0;
  bool correct = false;
  GradGroups grads;
  std::vector<double> logits, prelogit, u_values;
  int shape_index = -1;
};

// Deterministic result order regardless of worker count: results land in the
// slot of their index, and all reductions happen on the caller's thread.
std::vector<SampleResult> run_samples(const Dataset& dataset, std::span<const int> indices,
                                      const ForwardSpec& fs, bool with_grads, bool keep_outputs,
                                      int workers) {
  std::vector<SampleResult> results(indices.size());
  std::atomic<std::size_t> cursor{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto worker_fn = [&]() {
    Tape tape;  // reused across samples; clear() keeps the buffers
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= indices.size()) return;
      try {
        const LabeledShape& shape = dataset.shapes[indices[i]];
        tape.clear();
        StoreBundle bundle;
        ForwardOutput out = forward_sample(tape, fs, shape, bundle);
        SampleResult& r = results[i];
        r.loss = out.loss.value();
        r.correct = out.correct;
        r.shape_index = indices[i];
        if (keep_outputs) {
          r.logits = std::move(out.logits);
          r.prelogit = std::move(out.prelogit);
          r.u_values = std::move(out.u_values);
        }
        if (with_grads) {
          tape.backward(out.loss);
          if (fs.grads_h_g) {
            append_grads(r.grads.mvtn, bundle.h);
            append_grads(r.grads.mvtn, bundle.g);
          }
          if (fs.grads_f_c) {
            append_grads(r.grads.main, bundle.f);
            append_grads(r.grads.main, bundle.c);
            append_grads(r.grads.main, bundle.fusion);
          }
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  const int n_workers = std::max(1, std::min<int>(workers, static_cast<int>(indices.size())));
  if (n_workers == 1) {
    worker_fn();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker_fn);
    for (auto& t : threads) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

// AdamW over a group of stores with one shared state and step counter.
void adamw_step_group(std::vector<ParameterStore*> stores,
                      const std::vector<std::vector<double>>& grads, AdamState& state, double lr,
                      double weight_decay) {
  std::size_t expected = 0;
  for (ParameterStore* s : stores) expected += s->arrays.size();
  if (grads.size() != expected) {
    fail(ErrorCode::ShapeMismatch, "gradient group does not match store group");
  }
  if (state.m.empty()) {
    state.m.resize(expected);
    state.v.resize(expected);
    std::size_t a = 0;
    for (ParameterStore* s : stores) {
      for (const ParamArray& array : s->arrays) {
        state.m[a].assign(array.data.size(), 0.0);
        state.v[a].assign(array.data.size(), 0.0);
        ++a;
      }
    }
  }
  state.step += 1;
  const double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  std::size_t a = 0;
  for (ParameterStore* s : stores) {
    for (ParamArray& array : s->arrays) {
      if (grads[a].size() != array.data.size()) {
        fail(ErrorCode::ShapeMismatch, "gradient shape mismatch in " + array.name);
      }
      for (std::size_t i = 0; i < array.data.size(); ++i) {
        const double g = grads[a][i];
        state.m[a][i] = beta1 * state.m[a][i] + (1.0 - beta1) * g;
        state.v[a][i] = beta2 * state.v[a][i] + (1.0 - beta2) * g * g;
        const double m_hat = state.m[a][i] / bc1;
        const double v_hat = state.v[a][i] / bc2;
        array.data[i] -= lr * (m_hat / (std::sqrt(v_hat) + epsilon) + weight_decay * array.data[i]);
      }
      ++a;
    }
  }
}

struct EpochStats {
  double loss_sum = 0;
  int correct = 0;
  int total = 0;

  EpochMetrics metrics(int epoch) const {
    return {epoch, total > 0 ? loss_sum / total : 0.0,
            total > 0 ? static_cast<double>(correct) / total : 0.0};
  }
};

void train_in_place(Checkpoint& ckpt, const Dataset& dataset, bool freeze_mvtn) {
  const TrainConfig& config = ckpt.config;
  Pipeline pipe = pipeline_from_checkpoint(ckpt);
  const std::vector<int> train_indices = dataset.indices(Split::Train);
  if (train_indices.empty()) fail(ErrorCode::SpecInvalid, "dataset has no training shapes");
  const int workers = worker_count(config);
  const bool update_mvtn = pipe.needs_mvtn() && !freeze_mvtn;

  ForwardSpec fs;
  fs.pipe = &pipe;
  fs.h = ckpt.point_encoder.empty() ? nullptr : &ckpt.point_encoder;
  fs.g = ckpt.regressor.empty() ? nullptr : &ckpt.regressor;
  fs.f = &ckpt.backbone;
  fs.c = &ckpt.classifier;
  fs.fusion = ckpt.fusion_encoder.empty() ? nullptr : &ckpt.fusion_encoder;

  // Epoch-0 forward pass: metrics with the initial parameters, no updates.
  {
    fs.mode = ForwardMode::Train;
    fs.epoch = 0;
    fs.grads_h_g = false;
    fs.grads_f_c = false;
    auto results =
        run_samples(dataset, train_indices, fs, /*with_grads=*/false, /*keep_outputs=*/false,
                    workers);
    EpochStats stats;
    for (const SampleResult& r : results) {
      stats.loss_sum += r.loss;
      stats.correct += r.correct ? 1 : 0;
      stats.total += 1;
    }
    ckpt.history.initial = stats.metrics(0);
  }

  std::vector<ParameterStore*> mvtn_group = {&ckpt.point_encoder, &ckpt.regressor};
  std::vector<ParameterStore*> main_group = {&ckpt.backbone, &ckpt.classifier};
  if (!ckpt.fusion_encoder.empty()) main_group.push_back(&ckpt.fusion_encoder);

  Rng master(config.seed);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<int> order = train_indices;
    master.shuffle(order);

    EpochStats stats;
    fs.mode = ForwardMode::Train;
    fs.epoch = epoch;
    fs.grads_h_g = update_mvtn;
    fs.grads_f_c = true;

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t count =
          std::min<std::size_t>(config.batch_size, order.size() - start);
      auto batch = std::span<const int>(order).subspan(start, count);
      auto results =
          run_samples(dataset, batch, fs, /*with_grads=*/true, /*keep_outputs=*/false, workers);

      GradGroups sum = std::move(results[0].grads);
      stats.loss_sum += results[0].loss;
      stats.correct += results[0].correct ? 1 : 0;
      stats.total += 1;
      for (std::size_t s = 1; s < results.size(); ++s) {
        const SampleResult& r = results[s];
        stats.loss_sum += r.loss;
        stats.correct += r.correct ? 1 : 0;
        stats.total += 1;
        for (std::size_t a = 0; a < sum.mvtn.size(); ++a)
          for (std::size_t i = 0; i < sum.mvtn[a].size(); ++i) sum.mvtn[a][i] += r.grads.mvtn[a][i];
        for (std::size_t a = 0; a < sum.main.size(); ++a)
          for (std::size_t i = 0; i < sum.main[a].size(); ++i) sum.main[a][i] += r.grads.main[a][i];
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& a : sum.mvtn)
        for (double& g : a) g *= inv;
      for (auto& a : sum.main)
        for (double& g : a) g *= inv;

      try {
        if (update_mvtn) clip_global_norm(sum.mvtn, config.clip_norm);
        if (config.clip_main) {
          clip_global_norm(sum.main, config.clip_norm);
        } else {
          for (const auto& a : sum.main) {
            for (double g : a) {
              if (!std::isfinite(g)) fail(ErrorCode::NonFiniteGradient, "non-finite main gradient");
            }
          }
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteGradient) throw;
        ckpt.history.skipped_steps += 1;  // renderer instability: skip, keep training
        continue;
      }

      if (update_mvtn) {
        adamw_step_group(mvtn_group, sum.mvtn, ckpt.opt_mvtn, config.lr_mvtn, config.weight_decay);
      }
      adamw_step_group(main_group, sum.main, ckpt.opt_main, config.lr_main, config.weight_decay);
    }

    ckpt.history.epochs.push_back(stats.metrics(epoch));
    ckpt.trained_epochs = epoch;
    if (config.stop_at_train_accuracy >= 0 &&
        stats.metrics(epoch).train_accuracy >= config.stop_at_train_accuracy) {
      break;
    }
  }
  ckpt.rng_state = master.serialize();
}

EvalOutputs evaluate_impl(const Checkpoint& ckpt, const Dataset& dataset, Split split) {
  if (dataset.num_classes() != ckpt.num_classes) {
    fail(ErrorCode::ClassCountMismatch,
         "checkpoint has " + std::to_string(ckpt.num_classes) + " classes, dataset has " +
             std::to_string(dataset.num_classes()));
  }
  Pipeline pipe = pipeline_from_checkpoint(ckpt);
  ForwardSpec fs;
  fs.pipe = &pipe;
  fs.h = ckpt.point_encoder.empty() ? nullptr : &ckpt.point_encoder;
  fs.g = ckpt.regressor.empty() ? nullptr : &ckpt.regressor;
  fs.f = &ckpt.backbone;
  fs.c = &ckpt.classifier;
  fs.fusion = ckpt.fusion_encoder.empty() ? nullptr : &ckpt.fusion_encoder;
  fs.mode = ForwardMode::Eval;
  fs.epoch = 0;

  const std::vector<int> indices = dataset.indices(split);
  EvalOutputs outputs;
  if (indices.empty()) return outputs;
  auto results = run_samples(dataset, indices, fs, /*with_grads=*/false, /*keep_outputs=*/true,
                             worker_count(ckpt.config));
  int correct = 0;
  for (const SampleResult& r : results) {
    const LabeledShape& shape = dataset.shapes[r.shape_index];
    SampleOutput sample;
    sample.shape_id = shape.id;
    sample.class_id = shape.class_id;
    sample.logits = r.logits;
    sample.prelogit = r.prelogit;
    sample.view_angles = r.u_values;
    sample.predicted = static_cast<int>(
        std::max_element(r.logits.begin(), r.logits.end()) - r.logits.begin());
    correct += sample.predicted == shape.class_id ? 1 : 0;
    outputs.samples.push_back(std::move(sample));
  }
  outputs.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
  return outputs;
}

}  // namespace

// --- config -------------------------------------------------------------------

RenderSettings TrainConfig::render_settings() const {
  RenderSettings settings;
  settings.image_height = image_size;
  settings.image_width = image_size;
  settings.channels = channels;
  settings.sigma = sigma;
  settings.gamma = gamma;
  return settings;
}

void TrainConfig::validate() const {
  if (views < 1) fail(ErrorCode::InvalidViewCount, "views must be >= 1");
  if (epochs < 0) fail(ErrorCode::InvalidRange, "epochs must be >= 0");
  if (batch_size < 1) fail(ErrorCode::InvalidRange, "batch size must be >= 1");
  if (!(lr_main > 0) || !(lr_mvtn > 0)) fail(ErrorCode::InvalidRange, "learning rates must be > 0");
  if (!(clip_norm > 0)) fail(ErrorCode::InvalidRange, "clip norm must be > 0");
  if (regularizers.view_dropout_p < 0 || regularizers.view_dropout_p >= 1) {
    fail(ErrorCode::InvalidRange, "view dropout probability must lie in [0, 1)");
  }
  if (regularizers.view_noise_std_deg < 0) {
    fail(ErrorCode::InvalidRange, "view noise std must be >= 0");
  }
  if (regularizers.learn_distance && variant == MvtnVariant::Fixed) {
    fail(ErrorCode::InvalidRange, "learn_distance requires an MVTN variant");
  }
  if (points < 1) fail(ErrorCode::InvalidRange, "points must be >= 1");
  if (image_size < 4) fail(ErrorCode::InvalidRange, "image size must be >= 4");
  if (channels != 1 && channels != 3) fail(ErrorCode::InvalidRange, "channels must be 1 or 3");
  if (light_ambient < 0 || light_diffuse < 0 || light_ambient + light_diffuse > 1.0 + 1e-12) {
    fail(ErrorCode::InvalidRange, "light ambient + diffuse must stay within [0, 1]");
  }
  if (!(distance > 0)) fail(ErrorCode::InvalidRange, "camera distance must be > 0");
  render_settings().validate();
}

// --- optimization primitives ----------------------------------------------------

double cross_entropy_loss(std::span<const double> logits, int label) {
  if (label < 0 || label >= static_cast<int>(logits.size())) {
    fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(label) + " for " +
                                         std::to_string(logits.size()) + " logits");
  }
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  double denom = 0;
  for (double l : logits) denom += std::exp(l - max_logit);
  return std::log(denom) + max_logit - logits[label];
}

void adamw_step(ParameterStore& params, const std::vector<std::vector<double>>& grads,
                AdamState& state, double lr, double weight_decay, double beta1, double beta2,
                double epsilon) {
  if (grads.size() != params.arrays.size()) {
    fail(ErrorCode::ShapeMismatch, "gradient group does not match parameter store");
  }
  if (state.m.empty()) {
    state.m.resize(params.arrays.size());
    state.v.resize(params.arrays.size());
    for (std::size_t a = 0; a < params.arrays.size(); ++a) {
      state.m[a].assign(params.arrays[a].data.size(), 0.0);
      state.v[a].assign(params.arrays[a].data.size(), 0.0);
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t a = 0; a < params.arrays.size(); ++a) {
    auto& data = params.arrays[a].data;
    if (grads[a].size() != data.size()) {
      fail(ErrorCode::ShapeMismatch, "gradient shape mismatch in " + params.arrays[a].name);
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grads[a][i];
      state.m[a][i] = beta1 * state.m[a][i] + (1.0 - beta1) * g;
      state.v[a][i] = beta2 * state.v[a][i] + (1.0 - beta2) * g * g;
      const double m_hat = state.m[a][i] / bc1;
      const double v_hat = state.v[a][i] / bc2;
      data[i] -= lr * (m_hat / (std::sqrt(v_hat) + epsilon) + weight_decay * data[i]);
    }
  }
}

void sgd_momentum_step(ParameterStore& params, const std::vector<std::vector<double>>& grads,
                       std::vector<std::vector<double>>& velocity, double lr, double momentum) {
  if (grads.size() != params.arrays.size()) {
    fail(ErrorCode::ShapeMismatch, "gradient group does not match parameter store");
  }
  if (velocity.empty()) {
    velocity.resize(params.arrays.size());
    for (std::size_t a = 0; a < params.arrays.size(); ++a) {
      velocity[a].assign(params.arrays[a].data.size(), 0.0);
    }
  }
  for (std::size_t a = 0; a < params.arrays.size(); ++a) {
    auto& data = params.arrays[a].data;
    if (grads[a].size() != data.size()) {
      fail(ErrorCode::ShapeMismatch, "gradient shape mismatch in " + params.arrays[a].name);
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      velocity[a][i] = momentum * velocity[a][i] + grads[a][i];
      data[i] -= lr * velocity[a][i];
    }
  }
}

double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm) {
  double norm_sq = 0;
  for (const auto& a : grads) {
    for (double g : a) {
      if (!std::isfinite(g)) fail(ErrorCode::NonFiniteGradient, "non-finite gradient entry");
      norm_sq += g * g;
    }
  }
  const double norm = std::sqrt(norm_sq);
  if (norm <= max_norm) return 1.0;
  const double scale = max_norm / norm;
  for (auto& a : grads) {
    for (double& g : a) g *= scale;
  }
  return scale;
}

std::vector<bool> view_dropout_mask(int views, double p, std::uint64_t seed) {
  if (p < 0 || p >= 1) fail(ErrorCode::InvalidRange, "dropout probability must lie in [0, 1)");
  Rng rng(seed);
  std::vector<bool> keep(views, true);
  if (p == 0) return keep;
  for (;;) {
    bool any = false;
    for (int i = 0; i < views; ++i) {
      keep[i] = rng.uniform() >= p;
      any = any || keep[i];
    }
    if (any) return keep;  // all-dropped draws are resampled, never emitted
  }
}

std::vector<Image> view_dropout(const std::vector<Image>& views, double p, std::uint64_t seed,
                                double background) {
  const auto keep = view_dropout_mask(static_cast<int>(views.size()), p, seed);
  std::vector<Image> out = views;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!keep[i]) {
      out[i] = Image(views[i].height, views[i].width, views[i].channels, background);
    }
  }
  return out;
}

SceneParams view_noise(const SceneParams& params, double std_deg, std::uint64_t seed) {
  if (std_deg < 0) fail(ErrorCode::InvalidRange, "noise std must be >= 0");
  SceneParams out = params;
  if (std_deg == 0) return out;
  Rng rng(seed);
  const int m = params.view_count();
  for (int i = 0; i < m; ++i) out.azimuth(i) += std_deg * rng.normal();
  for (int i = 0; i < m; ++i) {
    out.elevation(i) = std::clamp(out.elevation(i) + std_deg * rng.normal(), -90.0, 90.0);
  }
  return out;
}

// --- training and evaluation -----------------------------------------------------

Checkpoint train(const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.shapes.empty()) fail(ErrorCode::SpecInvalid, "dataset is empty");

  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.num_classes = dataset.num_classes();
  Pipeline pipe = make_pipeline(config, ckpt.num_classes);
  ckpt.u0 = pipe.u0;

  if (pipe.needs_mvtn()) {
    ckpt.point_encoder =
        init_point_encoder_params(pipe.h_spec, derive_seed(config.seed, kSeedInitH));
    ckpt.regressor = init_mlp_params(pipe.g_spec, derive_seed(config.seed, kSeedInitG));
    if (config.regularizers.learn_distance) {
      ParamArray distance;
      distance.name = "distance";
      distance.shape = {1};
      distance.data = {config.distance};
      ckpt.regressor.arrays.push_back(std::move(distance));
    }
  }
  ckpt.backbone = init_view_cnn_params(pipe.f_spec, derive_seed(config.seed, kSeedInitF));
  ckpt.classifier = init_mlp_params(pipe.c_spec, derive_seed(config.seed, kSeedInitC));
  if (config.late_fusion) {
    ckpt.fusion_encoder =
        init_point_encoder_params(pipe.fusion_spec, derive_seed(config.seed, kSeedInitFusion));
  }

  train_in_place(ckpt, dataset, /*freeze_mvtn=*/false);
  return ckpt;
}

Checkpoint train_with_frozen_mvtn(const Checkpoint& source, const Dataset& dataset,
                                  TrainConfig config) {
  if (!source.has_mvtn()) {
    fail(ErrorCode::MissingMvtn, "source checkpoint has no trained view regressor");
  }
  // Architecture and view geometry come from the source; optimization
  // hyperparameters come from the caller.
  config.variant = source.config.variant;
  config.base_config = source.config.base_config;
  config.views = source.config.views;
  config.points = source.config.points;
  config.point_feature_dim = source.config.point_feature_dim;
  config.distance = source.config.distance;
  config.initial_elevation_deg = source.config.initial_elevation_deg;
  config.regularizers.learn_distance = source.config.regularizers.learn_distance;
  config.validate();

  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.num_classes = dataset.num_classes();
  Pipeline pipe = make_pipeline(config, ckpt.num_classes);
  ckpt.u0 = source.u0;
  ckpt.point_encoder = source.point_encoder;
  ckpt.regressor = source.regressor;
  ckpt.backbone = init_view_cnn_params(pipe.f_spec, derive_seed(config.seed, kSeedInitF));
  ckpt.classifier = init_mlp_params(pipe.c_spec, derive_seed(config.seed, kSeedInitC));
  if (config.late_fusion) {
    ckpt.fusion_encoder =
        init_point_encoder_params(pipe.fusion_spec, derive_seed(config.seed, kSeedInitFusion));
  }

  train_in_place(ckpt, dataset, /*freeze_mvtn=*/true);
  return ckpt;
}

double evaluate_accuracy(const Checkpoint& checkpoint, const Dataset& dataset, Split split) {
  return evaluate_impl(checkpoint, dataset, split).accuracy;
}

EvalOutputs evaluate_with_outputs(const Checkpoint& checkpoint, const Dataset& dataset,
                                  Split split) {
  return evaluate_impl(checkpoint, dataset, split);
}

RobustnessReport robustness_eval(const Checkpoint& checkpoint, const Dataset& dataset,
                                 RotationMode mode, double max_angle_deg, int repeats,
                                 std::uint64_t seed) {
  if (repeats < 1) fail(ErrorCode::InvalidRange, "repeats must be >= 1");
  const bool bypass = max_angle_deg == 0.0;  // identity rotations, for protocol checks
  if (!bypass && (!(max_angle_deg > 0.0) || max_angle_deg > 180.0)) {
    fail(ErrorCode::InvalidRange, "max angle must lie in (0, 180] (or exactly 0 to bypass)");
  }

  RobustnessReport report;
  report.mode = mode;
  report.max_angle_deg = max_angle_deg;
  report.repeats = repeats;

  for (int r = 0; r < repeats; ++r) {
    Dataset rotated;
    rotated.class_names = dataset.class_names;
    for (const LabeledShape& shape : dataset.shapes) {
      if (shape.split != Split::Test) continue;
      LabeledShape copy = shape;
      if (!bypass) {
        copy.mesh = rotate(shape.mesh, random_rotation(derive_seed(seed, r, shape.id), mode,
                                                       max_angle_deg));
      }
      rotated.shapes.push_back(std::move(copy));
    }
    report.accuracies.push_back(evaluate_accuracy(checkpoint, rotated, Split::Test));
  }

  double sum = 0;
  for (double a : report.accuracies) sum += a;
  report.mean = sum / repeats;
  double var = 0;
  for (double a : report.accuracies) var += (a - report.mean) * (a - report.mean);
  report.stddev = std::sqrt(var / repeats);
  return report;
}

// --- view distribution export ------------------------------------------------------

namespace {

double wrap_azimuth(double a) {
  double w = std::fmod(a + 180.0, 360.0);
  if (w < 0) w += 360.0;
  return w - 180.0;
}

// Silverman bandwidth with a 1 degree floor (keeps point masses integrable on
// the evaluation grid).
double silverman_bandwidth(const std::vector<double>& samples) {
  const double n = static_cast<double>(samples.size());
  if (samples.size() < 2) return 1.0;
  double mean = 0;
  for (double s : samples) mean += s;
  mean /= n;
  double var = 0;
  for (double s : samples) var += (s - mean) * (s - mean);
  const double sd = std::sqrt(var / (n - 1));
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const auto quantile = [&sorted](double q) {
    const double pos = q * (sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  double spread = sd;
  if (iqr > 0) spread = std::min(spread, iqr / 1.34);
  const double h = 0.9 * spread * std::pow(n, -0.2);
  return std::max(h, 1.0);
}

KdeSeries kde_series(const std::vector<std::vector<double>>& samples_per_class) {
  KdeSeries series;
  series.bandwidth.reserve(samples_per_class.size());
  double lo = 0, hi = 0, h_max = 1.0;
  bool any = false;
  for (const auto& samples : samples_per_class) {
    const double h = silverman_bandwidth(samples);
    series.bandwidth.push_back(h);
    h_max = std::max(h_max, h);
    for (double s : samples) {
      if (!any) {
        lo = hi = s;
        any = true;
      }
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
  }
  if (!any) {
    lo = -1;
    hi = 1;
  }
  const double margin = 5.0 * h_max;
  const double step = 0.5;
  const double grid_lo = std::floor(lo - margin);
  const double grid_hi = std::ceil(hi + margin);
  for (double x = grid_lo; x <= grid_hi + 1e-9; x += step) series.grid.push_back(x);

  const double inv_sqrt_2pi = 0.3989422804014327;
  for (std::size_t c = 0; c < samples_per_class.size(); ++c) {
    const auto& samples = samples_per_class[c];
    const double h = series.bandwidth[c];
    std::vector<double> density(series.grid.size(), 0.0);
    if (!samples.empty()) {
      const double scale = inv_sqrt_2pi / (h * static_cast<double>(samples.size()));
      for (std::size_t g = 0; g < series.grid.size(); ++g) {
        double acc = 0;
        for (double s : samples) {
          const double z = (series.grid[g] - s) / h;
          acc += std::exp(-0.5 * z * z);
        }
        density[g] = scale * acc;
      }
    }
    series.density.push_back(std::move(density));
  }
  return series;
}

}  // namespace

ViewDistribution export_view_distribution(const Checkpoint& checkpoint, const Dataset& dataset) {
  if (!checkpoint.has_mvtn()) {
    fail(ErrorCode::MissingMvtn, "view distribution export needs an MVTN checkpoint");
  }
  const EvalOutputs outputs = evaluate_impl(checkpoint, dataset, Split::Test);
  const int m = checkpoint.config.views;

  ViewDistribution dist;
  std::vector<std::vector<double>> az_per_class(dataset.num_classes());
  std::vector<std::vector<double>> el_per_class(dataset.num_classes());
  for (const SampleOutput& sample : outputs.samples) {
    for (int v = 0; v < m; ++v) {
      ViewDistributionRow row;
      row.class_id = sample.class_id;
      row.shape_id = sample.shape_id;
      row.view_index = v;
      row.azimuth_deg = wrap_azimuth(sample.view_angles[v]);
      row.elevation_deg = sample.view_angles[m + v];
      az_per_class[row.class_id].push_back(row.azimuth_deg);
      el_per_class[row.class_id].push_back(row.elevation_deg);
      dist.rows.push_back(row);
    }
  }
  dist.azimuth = kde_series(az_per_class);
  dist.elevation = kde_series(el_per_class);
  return dist;
}

}  // namespace mvtn
