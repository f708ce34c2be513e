#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvtn/autodiff.hpp"
#include "mvtn/camera.hpp"
#include "mvtn/mesh.hpp"

namespace mvtn {

enum class Activation { Relu, Tanh };

struct MlpSpec {
  std::vector<int> widths;  // input -> ... -> output, >= 2 entries
  Activation hidden = Activation::Relu;
  bool zero_init_final = false;  // regressor heads start at the identity offset
};

struct PointEncoderSpec {
  std::vector<int> point_mlp{3, 16, 32};  // shared per-point MLP, first width 3
  std::vector<int> head{32, 40};          // pooled feature -> ... -> b
  int feature_dim() const { return head.back(); }
};

struct ConvStage {
  int out_channels = 8;
  int kernel = 3;
  int stride = 1;
  int pool = 2;  // max-pool window after the activation; 1 = none
};

struct ViewCnnSpec {
  int in_channels = 1;
  std::vector<ConvStage> stages{{8, 3, 1, 2}, {16, 3, 1, 2}, {32, 3, 1, 2}};
  int feature_dim = 128;  // d, linear head after global average pooling
};

struct ParamArray {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
};

struct ParameterStore {
  std::vector<ParamArray> arrays;

  std::int64_t total_parameters() const;
  bool empty() const { return arrays.empty(); }
  const ParamArray& find(std::string_view name) const;
  ParamArray& find(std::string_view name);
  bool has(std::string_view name) const;
  bool all_finite() const;
};

// The regressor G: (b + 2M) -> b -> b -> 5M -> 2M -> 2M, tanh hidden layers,
// final layer zero-initialized so training starts at the base configuration.
MlpSpec mvtn_regressor_spec(int views, int point_feature_dim);
MlpSpec classifier_spec(int feature_dim, int classes);
std::int64_t mlp_parameter_count(const MlpSpec& spec);

// He-uniform weights (U[-sqrt(6/fan_in), +sqrt(6/fan_in)]), zero biases.
ParameterStore init_mlp_params(const MlpSpec& spec, std::uint64_t seed);
ParameterStore init_point_encoder_params(const PointEncoderSpec& spec, std::uint64_t seed);
ParameterStore init_view_cnn_params(const ViewCnnSpec& spec, std::uint64_t seed);

// Tape-side view of a store: one Var per parameter. Leaves participate in
// gradients; constants freeze the store for the current pass.
struct StoreVars {
  const ParameterStore* store = nullptr;
  std::vector<std::vector<ad::Var>> vars;  // parallel to store->arrays

  std::span<const ad::Var> of(std::string_view name) const;
};

StoreVars make_store_leaves(ad::Tape& tape, const ParameterStore& store);
StoreVars make_store_constants(ad::Tape& tape, const ParameterStore& store);

// Gradients per array, in array order; call after tape.backward().
std::vector<std::vector<double>> read_store_grads(const StoreVars& vars);

ad::TensorView mlp_forward(ad::Tape& tape, const MlpSpec& spec, const StoreVars& params,
                           const ad::TensorView& input);

// Shared per-point MLP, coordinate-wise max over points, head MLP to b.
ad::TensorView point_encoder_forward(ad::Tape& tape, const PointEncoderSpec& spec,
                                     const StoreVars& params, const PointCloud& cloud);

// Raw (pre-tanh) 2M offsets. Direct variant feeds zeros in the u0 slot.
// Angles are scaled by 1/180 before entering the MLP.
ad::TensorView mvtn_forward(ad::Tape& tape, const MlpSpec& spec, const StoreVars& params,
                            const SceneParams& u0, const ad::TensorView& shape_features,
                            MvtnVariant variant);

ad::TensorView view_cnn_forward(ad::Tape& tape, const ViewCnnSpec& spec,
                                const StoreVars& params, const ad::TensorView& image);

struct HeadOutput {
  ad::TensorView logits;
  ad::TensorView prelogit;  // input of the final linear layer
};

// C = MLP(max_i f(x_i)).
HeadOutput mvcnn_head_forward(ad::Tape& tape, const MlpSpec& spec, const StoreVars& params,
                              std::span<const ad::TensorView> view_features);

// Elementwise max of the point-branch feature and the pooled view feature,
// then the joint classifier head.
HeadOutput late_fusion_forward(ad::Tape& tape, const MlpSpec& joint_spec,
                               const StoreVars& joint_params,
                               const ad::TensorView& point_feature,
                               const ad::TensorView& pooled_view_feature);

}  // namespace mvtn
