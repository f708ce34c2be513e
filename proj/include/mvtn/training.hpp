#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvtn/camera.hpp"
#include "mvtn/neural.hpp"
#include "mvtn/renderer.hpp"

namespace mvtn {

struct Dataset;  // dataset.hpp
enum class Split;

enum class BaseConfig { Circular, Spherical, Random };

struct Regularizers {
  double view_dropout_p = 0.0;      // in [0, 1)
  double view_noise_std_deg = 0.0;  // >= 0
  bool learn_distance = false;
};

struct TrainConfig {
  MvtnVariant variant = MvtnVariant::Offset;
  BaseConfig base_config = BaseConfig::Circular;
  int views = 4;
  int epochs = 20;
  int batch_size = 4;
  double lr_main = 3e-4;
  double lr_mvtn = 1e-3;
  double weight_decay = 0.01;
  double clip_norm = 30.0;        // applied to the (H, G) group
  bool clip_main = false;
  bool random_train_light = true; // evaluation always uses the fixed light
  Regularizers regularizers;
  int points = 256;               // P fed to the point encoder
  int point_feature_dim = 40;     // b
  int view_feature_dim = 128;     // d
  int image_size = 32;
  int channels = 1;
  double distance = 2.2;
  double initial_elevation_deg = 30.0;
  double sigma = 1e-4;
  double gamma = 1e-2;
  double light_ambient = 0.3;
  double light_diffuse = 0.7;
  bool late_fusion = false;
  double stop_at_train_accuracy = -1.0;  // < 0 disables early stopping
  int workers = 0;                       // 0 = hardware concurrency
  std::uint64_t seed = 0;

  RenderSettings render_settings() const;
  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
};

struct MetricsHistory {
  // Forward-only pass with the initial parameters (the epoch-0 forward pass);
  // with a zero-initialized regressor this is bitwise equal between the fixed
  // and offset pipelines.
  EpochMetrics initial;
  std::vector<EpochMetrics> epochs;
  int skipped_steps = 0;  // batches dropped due to non-finite gradients
};

struct AdamState {
  std::vector<std::vector<double>> m, v;  // parallel to the store group arrays
  std::int64_t step = 0;
};

struct Checkpoint {
  int version = 1;
  TrainConfig config;
  int num_classes = 0;
  int trained_epochs = 0;
  SceneParams u0;
  ParameterStore point_encoder;   // empty when variant == Fixed
  ParameterStore regressor;       // empty when variant == Fixed
  ParameterStore backbone;
  ParameterStore classifier;
  ParameterStore fusion_encoder;  // empty unless config.late_fusion
  AdamState opt_mvtn;
  AdamState opt_main;
  MetricsHistory history;
  std::string rng_state;

  bool has_mvtn() const { return !regressor.empty(); }
};

struct RobustnessReport {
  std::vector<double> accuracies;  // one per repeat
  double mean = 0;
  double stddev = 0;
  RotationMode mode = RotationMode::YOnly;
  double max_angle_deg = 0;
  int repeats = 0;
};

// --- optimization primitives -------------------------------------------------

double cross_entropy_loss(std::span<const double> logits, int label);

// Decoupled weight decay: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
void adamw_step(ParameterStore& params, const std::vector<std::vector<double>>& grads,
                AdamState& state, double lr, double weight_decay, double beta1 = 0.9,
                double beta2 = 0.999, double epsilon = 1e-8);

void sgd_momentum_step(ParameterStore& params, const std::vector<std::vector<double>>& grads,
                       std::vector<std::vector<double>>& velocity, double lr,
                       double momentum = 0.9);

// Scales the whole group so its global L2 norm is at most max_norm. Returns
// the applied scale. Throws NonFiniteGradient on NaN/Inf entries.
double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm = 30.0);

// Bernoulli keep mask over M views; resamples until at least one survives.
std::vector<bool> view_dropout_mask(int views, double p, std::uint64_t seed);
// Replaces dropped views with background-valued images.
std::vector<Image> view_dropout(const std::vector<Image>& views, double p, std::uint64_t seed,
                                double background = 0.0);

// Gaussian angle jitter; elevations clamped to [-90, 90].
SceneParams view_noise(const SceneParams& params, double std_deg, std::uint64_t seed);

// --- training and evaluation --------------------------------------------------

Checkpoint train(const Dataset& dataset, const TrainConfig& config);

double evaluate_accuracy(const Checkpoint& checkpoint, const Dataset& dataset, Split split);

struct SampleOutput {
  int shape_id = 0;
  int class_id = 0;
  int predicted = 0;
  std::vector<double> logits;
  std::vector<double> prelogit;  // retrieval signature source
  std::vector<double> view_angles;  // 2M predicted [azims, elevs]
};

struct EvalOutputs {
  double accuracy = 0;
  std::vector<SampleOutput> samples;
};

EvalOutputs evaluate_with_outputs(const Checkpoint& checkpoint, const Dataset& dataset,
                                  Split split);

RobustnessReport robustness_eval(const Checkpoint& checkpoint, const Dataset& dataset,
                                 RotationMode mode, double max_angle_deg, int repeats,
                                 std::uint64_t seed);

// Copies theta_H / theta_G from the source and trains only the backbone and
// classifier on the frozen predicted views.
Checkpoint train_with_frozen_mvtn(const Checkpoint& source, const Dataset& dataset,
                                  TrainConfig config);

struct ViewDistributionRow {
  int class_id = 0;
  int shape_id = 0;
  int view_index = 0;
  double azimuth_deg = 0;   // wrapped to [-180, 180)
  double elevation_deg = 0;
};

struct KdeSeries {
  std::vector<double> grid;
  std::vector<std::vector<double>> density;  // [class][grid point]
  std::vector<double> bandwidth;             // per class, Silverman with a 1 degree floor
};

struct ViewDistribution {
  std::vector<ViewDistributionRow> rows;  // test split
  KdeSeries azimuth;
  KdeSeries elevation;
};

ViewDistribution export_view_distribution(const Checkpoint& checkpoint, const Dataset& dataset);

}  // namespace mvtn
