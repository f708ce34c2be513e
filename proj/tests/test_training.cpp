#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "mvtn/dataset.hpp"
#include "mvtn/error.hpp"
#include "mvtn/retrieval.hpp"
#include "mvtn/rng.hpp"

using namespace mvtn;

namespace {

TrainConfig tiny_config(MvtnVariant variant, std::uint64_t seed = 0) {
  TrainConfig config;
  config.variant = variant;
  config.views = 2;
  config.epochs = 2;
  config.batch_size = 2;
  config.image_size = 12;
  config.points = 32;
  config.point_feature_dim = 8;
  config.view_feature_dim = 16;
  config.workers = 2;
  config.seed = seed;
  return config;
}

Dataset tiny_dataset(std::uint64_t seed = 3) { return generate_synthetic(overfit_spec(2, 3, seed)); }

bool histories_equal(const MetricsHistory& a, const MetricsHistory& b) {
  if (a.initial.train_loss != b.initial.train_loss) return false;
  if (a.initial.train_accuracy != b.initial.train_accuracy) return false;
  if (a.epochs.size() != b.epochs.size()) return false;
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    if (a.epochs[i].train_loss != b.epochs[i].train_loss) return false;
    if (a.epochs[i].train_accuracy != b.epochs[i].train_accuracy) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("cross entropy on uniform logits is log K") {
  const std::vector<double> logits(4, 0.0);
  CHECK(cross_entropy_loss(logits, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
}

TEST_CASE("cross entropy on a confident correct prediction") {
  const std::vector<double> logits = {10.0, 0.0, 0.0};
  // -log(e^10 / (e^10 + 2)) = log(1 + 2 e^-10)
  CHECK(cross_entropy_loss(logits, 0) == doctest::Approx(9.0795e-5).epsilon(1e-4));
}

TEST_CASE("cross entropy rejects bad labels") {
  const std::vector<double> logits = {0.0, 0.0};
  CHECK_THROWS_AS(cross_entropy_loss(logits, 2), Error);
  CHECK_THROWS_AS(cross_entropy_loss(logits, -1), Error);
}

TEST_CASE("adamw first step moves by about lr in the gradient direction") {
  ParameterStore store;
  store.arrays.push_back({"w", {2}, {1.0, -2.0}});
  AdamState state;
  const std::vector<std::vector<double>> grads = {{0.5, -3.0}};
  adamw_step(store, grads, state, 0.001, 0.0);
  CHECK(store.find("w").data[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-6));
  CHECK(store.find("w").data[1] == doctest::Approx(-2.0 + 0.001).epsilon(1e-6));
  CHECK(state.step == 1);
}

TEST_CASE("adamw with zero gradient and zero decay is a no-op") {
  ParameterStore store;
  store.arrays.push_back({"w", {1}, {0.7}});
  AdamState state;
  adamw_step(store, {{0.0}}, state, 0.01, 0.0);
  CHECK(store.find("w").data[0] == 0.7);
}

TEST_CASE("adamw decoupled decay shrinks parameters without gradients") {
  ParameterStore store;
  store.arrays.push_back({"w", {1}, {1.0}});
  AdamState state;
  adamw_step(store, {{0.0}}, state, 0.001, 0.01);
  CHECK(store.find("w").data[0] == doctest::Approx(1.0 - 1e-5).epsilon(1e-12));
}

TEST_CASE("sgd with momentum unrolls the heavy-ball recurrence") {
  ParameterStore store;
  store.arrays.push_back({"w", {1}, {0.0}});
  std::vector<std::vector<double>> velocity;
  const std::vector<std::vector<double>> grads = {{1.0}};
  sgd_momentum_step(store, grads, velocity, 0.1, 0.9);
  CHECK(store.find("w").data[0] == doctest::Approx(-0.1).epsilon(1e-15));
  sgd_momentum_step(store, grads, velocity, 0.1, 0.9);
  // Displacement after two steps: lr*g*(1 + 1.9)
  CHECK(store.find("w").data[0] == doctest::Approx(-0.1 * 2.9).epsilon(1e-15));

  // Zero gradient: velocity decays by the momentum factor.
  sgd_momentum_step(store, {{0.0}}, velocity, 0.1, 0.9);
  CHECK(velocity[0][0] == doctest::Approx(1.9 * 0.9).epsilon(1e-15));

  // Momentum zero reduces to vanilla SGD.
  ParameterStore plain;
  plain.arrays.push_back({"w", {1}, {1.0}});
  std::vector<std::vector<double>> v2;
  sgd_momentum_step(plain, grads, v2, 0.5, 0.0);
  CHECK(plain.find("w").data[0] == 0.5);
}

TEST_CASE("global norm clipping rescales exactly to the threshold") {
  std::vector<std::vector<double>> grads = {{36.0}, {48.0}};  // norm 60
  const double scale = clip_global_norm(grads, 30.0);
  CHECK(scale == doctest::Approx(0.5));
  double norm = std::sqrt(grads[0][0] * grads[0][0] + grads[1][0] * grads[1][0]);
  CHECK(norm == doctest::Approx(30.0).epsilon(1e-12));
  // Direction preserved.
  CHECK(grads[0][0] / grads[1][0] == doctest::Approx(36.0 / 48.0).epsilon(1e-12));

  std::vector<std::vector<double>> small = {{3.0}, {4.0}};
  CHECK(clip_global_norm(small, 30.0) == 1.0);
  CHECK(small[0][0] == 3.0);

  std::vector<std::vector<double>> bad = {{std::nan("")}};
  try {
    clip_global_norm(bad, 30.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteGradient);
  }
}

TEST_CASE("view dropout keeps at least one view and matches the conditional mean") {
  CHECK(view_dropout_mask(4, 0.0, 1) == std::vector<bool>(4, true));

  const int trials = 10000;
  const double p = 0.5;
  double kept_sum = 0;
  for (int t = 0; t < trials; ++t) {
    const auto mask = view_dropout_mask(4, p, derive_seed(9, t));
    int kept = 0;
    for (bool k : mask) kept += k ? 1 : 0;
    REQUIRE(kept >= 1);
    kept_sum += kept;
  }
  // Enumerate the 2^4 masks for the conditional mean given >= 1 survivor.
  double expected = 0, mass = 0;
  for (int mask = 1; mask < 16; ++mask) {
    const int kept = __builtin_popcount(mask);
    const double prob = std::pow(1.0 - p, kept) * std::pow(p, 4 - kept);
    expected += kept * prob;
    mass += prob;
  }
  expected /= mass;
  CHECK(kept_sum / trials == doctest::Approx(expected).epsilon(0.03));
}

TEST_CASE("view dropout blanks images to the background") {
  std::vector<Image> views(3, Image(4, 4, 1, 0.8));
  const auto out = view_dropout(views, 0.9, 123, 0.25);
  int blanked = 0;
  for (const Image& img : out) {
    if (img.data[0] == 0.25) blanked += 1;
  }
  CHECK(blanked >= 1);
  CHECK(blanked <= 2);
}

TEST_CASE("view noise perturbs angles and clamps elevations") {
  SceneParams params = circular_config(4);
  CHECK(view_noise(params, 0.0, 5).values == params.values);

  params.elevation(0) = 89.0;
  const SceneParams noisy = view_noise(params, 5.0, 6);
  for (int i = 0; i < 4; ++i) {
    CHECK(noisy.elevation(i) <= 90.0);
    CHECK(noisy.elevation(i) >= -90.0);
  }

  double sum = 0, sum2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const SceneParams p = view_noise(circular_config(1), 5.0, derive_seed(31, i));
    const double delta = p.azimuth(0);
    sum += delta;
    sum2 += delta * delta;
  }
  const double std_hat = std::sqrt(sum2 / n - (sum / n) * (sum / n));
  CHECK(std_hat == doctest::Approx(5.0).epsilon(0.02));
}

TEST_CASE("training produces one metrics row per epoch plus the initial pass") {
  const Dataset dataset = tiny_dataset();
  const Checkpoint ckpt = train(dataset, tiny_config(MvtnVariant::Offset));
  CHECK(ckpt.history.epochs.size() == 2);
  CHECK(ckpt.history.initial.epoch == 0);
  CHECK(ckpt.history.epochs[0].epoch == 1);
  CHECK(ckpt.trained_epochs == 2);
  CHECK(ckpt.history.initial.train_loss > 0);
}

TEST_CASE("training is bitwise reproducible") {
  const Dataset dataset = tiny_dataset();
  const Checkpoint a = train(dataset, tiny_config(MvtnVariant::Offset, 5));
  const Checkpoint b = train(dataset, tiny_config(MvtnVariant::Offset, 5));
  CHECK(histories_equal(a.history, b.history));
  CHECK(encode_checkpoint(a) == encode_checkpoint(b));
}

TEST_CASE("zero-initialized offset training starts bitwise at the fixed pipeline") {
  const Dataset dataset = tiny_dataset();
  const Checkpoint fixed = train(dataset, tiny_config(MvtnVariant::Fixed, 7));
  const Checkpoint offset = train(dataset, tiny_config(MvtnVariant::Offset, 7));
  CHECK(fixed.history.initial.train_loss == offset.history.initial.train_loss);
  CHECK(fixed.history.initial.train_accuracy == offset.history.initial.train_accuracy);
}

TEST_CASE("direct variant trains and stays within bounds") {
  const Dataset dataset = tiny_dataset();
  TrainConfig config = tiny_config(MvtnVariant::Direct, 11);
  config.epochs = 1;
  const Checkpoint ckpt = train(dataset, config);
  const EvalOutputs outputs = evaluate_with_outputs(ckpt, dataset, Split::Train);
  for (const SampleOutput& s : outputs.samples) {
    for (int i = 0; i < config.views; ++i) {
      CHECK(std::abs(s.view_angles[i]) <= 180.0);
      CHECK(std::abs(s.view_angles[config.views + i]) <= 90.0);
    }
  }
}

TEST_CASE("evaluation is deterministic") {
  const Dataset dataset = tiny_dataset();
  const Checkpoint ckpt = train(dataset, tiny_config(MvtnVariant::Offset, 13));
  const double a = evaluate_accuracy(ckpt, dataset, Split::Train);
  const double b = evaluate_accuracy(ckpt, dataset, Split::Train);
  CHECK(a == b);
  const EvalOutputs oa = evaluate_with_outputs(ckpt, dataset, Split::Train);
  const EvalOutputs ob = evaluate_with_outputs(ckpt, dataset, Split::Train);
  REQUIRE(oa.samples.size() == ob.samples.size());
  for (std::size_t i = 0; i < oa.samples.size(); ++i) {
    CHECK(oa.samples[i].logits == ob.samples[i].logits);
    CHECK(oa.samples[i].prelogit == ob.samples[i].prelogit);
  }
}

TEST_CASE("class count mismatches are rejected at evaluation") {
  const Dataset dataset = tiny_dataset();
  const Checkpoint ckpt = train(dataset, tiny_config(MvtnVariant::Fixed, 17));
  Dataset other = generate_synthetic(overfit_spec(3, 2, 4));
  try {
    evaluate_accuracy(ckpt, other, Split::Train);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ClassCountMismatch);
  }
}

TEST_CASE("frozen transfer keeps the regressor bitwise and retrains the rest") {
  Dataset dataset = generate_synthetic(overfit_spec(2, 3, 5));
  // Give the dataset a test split so accuracies are well-defined downstream.
  dataset.shapes[2].split = Split::Test;
  dataset.shapes[5].split = Split::Test;

  const Checkpoint source = train(dataset, tiny_config(MvtnVariant::Offset, 19));
  TrainConfig transfer_config = tiny_config(MvtnVariant::Offset, 23);
  transfer_config.epochs = 1;
  const Checkpoint transferred = train_with_frozen_mvtn(source, dataset, transfer_config);

  REQUIRE(transferred.regressor.arrays.size() == source.regressor.arrays.size());
  for (std::size_t a = 0; a < source.regressor.arrays.size(); ++a) {
    CHECK(transferred.regressor.arrays[a].data == source.regressor.arrays[a].data);
  }
  for (std::size_t a = 0; a < source.point_encoder.arrays.size(); ++a) {
    CHECK(transferred.point_encoder.arrays[a].data == source.point_encoder.arrays[a].data);
  }
  // The backbone did train.
  bool backbone_changed = false;
  for (std::size_t a = 0; a < source.backbone.arrays.size(); ++a) {
    backbone_changed =
        backbone_changed || transferred.backbone.arrays[a].data != source.backbone.arrays[a].data;
  }
  CHECK(backbone_changed);
  // The frozen optimizer group never stepped.
  CHECK(transferred.opt_mvtn.step == 0);

  try {
    train_with_frozen_mvtn(train(dataset, tiny_config(MvtnVariant::Fixed, 29)), dataset,
                           transfer_config);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingMvtn);
  }
}

TEST_CASE("robustness with the zero-angle bypass equals plain evaluation") {
  Dataset dataset = generate_synthetic(overfit_spec(2, 4, 6));
  dataset.shapes[3].split = Split::Test;
  dataset.shapes[7].split = Split::Test;
  const Checkpoint ckpt = train(dataset, tiny_config(MvtnVariant::Offset, 31));

  const double plain = evaluate_accuracy(ckpt, dataset, Split::Test);
  const RobustnessReport bypass =
      robustness_eval(ckpt, dataset, RotationMode::YOnly, 0.0, 3, 99);
  for (double a : bypass.accuracies) CHECK(a == plain);

  const RobustnessReport rotated =
      robustness_eval(ckpt, dataset, RotationMode::YOnly, 180.0, 10, 99);
  REQUIRE(rotated.accuracies.size() == 10);
  double mean = 0;
  for (double a : rotated.accuracies) mean += a;
  mean /= 10.0;
  CHECK(std::abs(mean - rotated.mean) < 1e-15);

  try {
    robustness_eval(ckpt, dataset, RotationMode::YOnly, 181.0, 2, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidRange);
  }
}

TEST_CASE("view distribution export covers the test split with a unit-mass KDE") {
  Dataset dataset = generate_synthetic(overfit_spec(2, 4, 8));
  dataset.shapes[3].split = Split::Test;
  dataset.shapes[7].split = Split::Test;

  TrainConfig config = tiny_config(MvtnVariant::Direct, 37);
  config.epochs = 0;  // untrained: zero-initialized regressor
  const Checkpoint ckpt = train(dataset, config);
  const ViewDistribution dist = export_view_distribution(ckpt, dataset);

  // 2 test shapes x M views.
  CHECK(dist.rows.size() == 2 * 2);
  for (const auto& row : dist.rows) {
    CHECK(row.azimuth_deg == 0.0);  // direct variant at zero init predicts 0
    CHECK(row.elevation_deg == 0.0);
  }

  // Trapezoid mass of each populated class is 1 within 1%.
  for (const KdeSeries* series : {&dist.azimuth, &dist.elevation}) {
    for (std::size_t c = 0; c < series->density.size(); ++c) {
      bool populated = false;
      for (double d : series->density[c]) populated = populated || d != 0;
      if (!populated) continue;
      double mass = 0;
      for (std::size_t g = 0; g + 1 < series->grid.size(); ++g) {
        mass += 0.5 * (series->density[c][g] + series->density[c][g + 1]) *
                (series->grid[g + 1] - series->grid[g]);
      }
      CHECK(mass == doctest::Approx(1.0).epsilon(0.01));
    }
  }

  const Checkpoint fixed = train(dataset, tiny_config(MvtnVariant::Fixed, 41));
  try {
    export_view_distribution(fixed, dataset);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingMvtn);
  }
}

TEST_CASE("late fusion training runs end to end") {
  const Dataset dataset = tiny_dataset();
  TrainConfig config = tiny_config(MvtnVariant::Fixed, 43);
  config.late_fusion = true;
  config.epochs = 1;
  const Checkpoint ckpt = train(dataset, config);
  CHECK(!ckpt.fusion_encoder.empty());
  CHECK(evaluate_accuracy(ckpt, dataset, Split::Train) >= 0.0);
}

TEST_CASE("config validation rejects bad ranges") {
  TrainConfig config = tiny_config(MvtnVariant::Offset);
  config.regularizers.view_dropout_p = 1.0;
  CHECK_THROWS_AS(config.validate(), Error);
  config = tiny_config(MvtnVariant::Fixed);
  config.regularizers.learn_distance = true;
  CHECK_THROWS_AS(config.validate(), Error);
  config = tiny_config(MvtnVariant::Offset);
  config.lr_main = 0.0;
  CHECK_THROWS_AS(config.validate(), Error);
}

TEST_CASE("learned distance stays trainable when enabled") {
  const Dataset dataset = tiny_dataset();
  TrainConfig config = tiny_config(MvtnVariant::Offset, 47);
  config.regularizers.learn_distance = true;
  config.epochs = 1;
  const Checkpoint ckpt = train(dataset, config);
  REQUIRE(ckpt.regressor.has("distance"));
  CHECK(std::isfinite(ckpt.regressor.find("distance").data[0]));
}
