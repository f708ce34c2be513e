#include "mvtn/serialize.hpp"

#include <set>
#include <sstream>

#include "mvtn/dataset.hpp"
#include "mvtn/error.hpp"

namespace mvtn {

namespace {

// Reads known keys and rejects the rest, so config typos fail loudly.
class StrictReader {
 public:
  StrictReader(const json& j, std::string context, bool strict)
      : j_(j), context_(std::move(context)), strict_(strict) {
    if (!j_.is_object()) fail(ErrorCode::SpecInvalid, context_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorCode::SpecInvalid, context_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  ~StrictReader() noexcept(false) {
    if (!strict_ || std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) {
        fail(ErrorCode::SpecInvalid, "unknown key '" + context_ + "." + key + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string context_;
  bool strict_;
  std::set<std::string> seen_;
};

template <typename Enum>
Enum enum_from_string(const std::string& s,
                      std::initializer_list<std::pair<const char*, Enum>> table,
                      const char* what) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  fail(ErrorCode::SpecInvalid, std::string("unknown ") + what + " '" + s + "'");
}

}  // namespace

std::string to_string(MvtnVariant v) {
  switch (v) {
    case MvtnVariant::Fixed: return "fixed";
    case MvtnVariant::Direct: return "direct";
    case MvtnVariant::Offset: return "offset";
  }
  return "offset";
}

std::string to_string(BaseConfig c) {
  switch (c) {
    case BaseConfig::Circular: return "circular";
    case BaseConfig::Spherical: return "spherical";
    case BaseConfig::Random: return "random";
  }
  return "circular";
}

std::string to_string(RotationMode m) {
  return m == RotationMode::YOnly ? "y_only" : "any_axis";
}

std::string to_string(Projection p) {
  return p == Projection::Perspective ? "perspective" : "orthographic";
}

MvtnVariant variant_from_string(const std::string& s) {
  return enum_from_string<MvtnVariant>(
      s, {{"fixed", MvtnVariant::Fixed}, {"direct", MvtnVariant::Direct}, {"offset", MvtnVariant::Offset}},
      "variant");
}

BaseConfig base_config_from_string(const std::string& s) {
  return enum_from_string<BaseConfig>(s,
                                      {{"circular", BaseConfig::Circular},
                                       {"spherical", BaseConfig::Spherical},
                                       {"random", BaseConfig::Random}},
                                      "base config");
}

RotationMode rotation_mode_from_string(const std::string& s) {
  return enum_from_string<RotationMode>(
      s, {{"y_only", RotationMode::YOnly}, {"any_axis", RotationMode::AnyAxis}}, "rotation mode");
}

Projection projection_from_string(const std::string& s) {
  return enum_from_string<Projection>(
      s, {{"perspective", Projection::Perspective}, {"orthographic", Projection::Orthographic}},
      "projection");
}

json scene_params_to_json(const SceneParams& params) {
  return json{{"values", params.values}, {"distance", params.distance}};
}

SceneParams scene_params_from_json(const json& j) {
  SceneParams params;
  StrictReader r(j, "scene_params", true);
  r.get("values", params.values);
  r.get("distance", params.distance);
  if (params.values.size() % 2 != 0) {
    fail(ErrorCode::SpecInvalid, "scene parameter vector must have even length");
  }
  return params;
}

json train_config_to_json(const TrainConfig& c) {
  return json{
      {"variant", to_string(c.variant)},
      {"base_config", to_string(c.base_config)},
      {"views", c.views},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"lr_main", c.lr_main},
      {"lr_mvtn", c.lr_mvtn},
      {"weight_decay", c.weight_decay},
      {"clip_norm", c.clip_norm},
      {"clip_main", c.clip_main},
      {"random_train_light", c.random_train_light},
      {"regularizers",
       {{"view_dropout_p", c.regularizers.view_dropout_p},
        {"view_noise_std_deg", c.regularizers.view_noise_std_deg},
        {"learn_distance", c.regularizers.learn_distance}}},
      {"points", c.points},
      {"point_feature_dim", c.point_feature_dim},
      {"view_feature_dim", c.view_feature_dim},
      {"image_size", c.image_size},
      {"channels", c.channels},
      {"distance", c.distance},
      {"initial_elevation_deg", c.initial_elevation_deg},
      {"sigma", c.sigma},
      {"gamma", c.gamma},
      {"light_ambient", c.light_ambient},
      {"light_diffuse", c.light_diffuse},
      {"late_fusion", c.late_fusion},
      {"stop_at_train_accuracy", c.stop_at_train_accuracy},
      {"workers", c.workers},
      {"seed", c.seed},
  };
}

TrainConfig train_config_from_json(const json& j, bool strict) {
  TrainConfig c;
  StrictReader r(j, "train", strict);
  std::string variant = to_string(c.variant);
  std::string base = to_string(c.base_config);
  r.get("variant", variant);
  r.get("base_config", base);
  c.variant = variant_from_string(variant);
  c.base_config = base_config_from_string(base);
  r.get("views", c.views);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("lr_main", c.lr_main);
  r.get("lr_mvtn", c.lr_mvtn);
  r.get("weight_decay", c.weight_decay);
  r.get("clip_norm", c.clip_norm);
  r.get("clip_main", c.clip_main);
  r.get("random_train_light", c.random_train_light);
  if (r.has("regularizers")) {
    StrictReader rr(r.at("regularizers"), "train.regularizers", strict);
    rr.get("view_dropout_p", c.regularizers.view_dropout_p);
    rr.get("view_noise_std_deg", c.regularizers.view_noise_std_deg);
    rr.get("learn_distance", c.regularizers.learn_distance);
  }
  r.get("points", c.points);
  r.get("point_feature_dim", c.point_feature_dim);
  r.get("view_feature_dim", c.view_feature_dim);
  r.get("image_size", c.image_size);
  r.get("channels", c.channels);
  r.get("distance", c.distance);
  r.get("initial_elevation_deg", c.initial_elevation_deg);
  r.get("sigma", c.sigma);
  r.get("gamma", c.gamma);
  r.get("light_ambient", c.light_ambient);
  r.get("light_diffuse", c.light_diffuse);
  r.get("late_fusion", c.late_fusion);
  r.get("stop_at_train_accuracy", c.stop_at_train_accuracy);
  r.get("workers", c.workers);
  r.get("seed", c.seed);
  return c;
}

json render_settings_to_json(const RenderSettings& s) {
  return json{
      {"image_height", s.image_height},
      {"image_width", s.image_width},
      {"sigma", s.sigma},
      {"gamma", s.gamma},
      {"background", s.background},
      {"channels", s.channels},
      {"projection", to_string(s.projection)},
      {"fov_deg", s.fov_deg},
      {"ortho_half_extent", s.ortho_half_extent},
      {"near_clip", s.near_clip},
      {"depth_near", s.depth_near},
      {"depth_far", s.depth_far},
  };
}

RenderSettings render_settings_from_json(const json& j, bool strict) {
  RenderSettings s;
  StrictReader r(j, "render", strict);
  r.get("image_height", s.image_height);
  r.get("image_width", s.image_width);
  r.get("sigma", s.sigma);
  r.get("gamma", s.gamma);
  r.get("background", s.background);
  r.get("channels", s.channels);
  std::string projection = to_string(s.projection);
  r.get("projection", projection);
  s.projection = projection_from_string(projection);
  r.get("fov_deg", s.fov_deg);
  r.get("ortho_half_extent", s.ortho_half_extent);
  r.get("near_clip", s.near_clip);
  r.get("depth_near", s.depth_near);
  r.get("depth_far", s.depth_far);
  return s;
}

namespace {

std::string to_string(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::Box: return "box";
    case PrimitiveKind::Sphere: return "sphere";
    case PrimitiveKind::Cylinder: return "cylinder";
    case PrimitiveKind::Cone: return "cone";
    case PrimitiveKind::Torus: return "torus";
  }
  return "box";
}

PrimitiveKind primitive_from_string(const std::string& s) {
  return enum_from_string<PrimitiveKind>(s,
                                         {{"box", PrimitiveKind::Box},
                                          {"sphere", PrimitiveKind::Sphere},
                                          {"cylinder", PrimitiveKind::Cylinder},
                                          {"cone", PrimitiveKind::Cone},
                                          {"torus", PrimitiveKind::Torus}},
                                         "primitive");
}

std::string to_string(ShapeRotationMode m) {
  switch (m) {
    case ShapeRotationMode::None: return "none";
    case ShapeRotationMode::YOnly: return "y_only";
    case ShapeRotationMode::AnyAxis: return "any_axis";
  }
  return "none";
}

ShapeRotationMode shape_rotation_from_string(const std::string& s) {
  return enum_from_string<ShapeRotationMode>(s,
                                             {{"none", ShapeRotationMode::None},
                                              {"y_only", ShapeRotationMode::YOnly},
                                              {"any_axis", ShapeRotationMode::AnyAxis}},
                                             "shape rotation mode");
}

}  // namespace

json synthetic_spec_to_json(const SyntheticSpec& spec) {
  json classes = json::array();
  for (const ClassSpec& c : spec.classes) {
    classes.push_back(json{
        {"name", c.name},
        {"kind", to_string(c.kind)},
        {"param_a", {c.param_a.lo, c.param_a.hi}},
        {"param_b", {c.param_b.lo, c.param_b.hi}},
        {"tessellation", c.tessellation},
    });
  }
  return json{
      {"classes", classes},
      {"train_per_class", spec.train_per_class},
      {"test_per_class", spec.test_per_class},
      {"seed", spec.seed},
      {"rotation", to_string(spec.rotation)},
      {"face_cap", spec.face_cap},
      {"self_check", spec.self_check},
  };
}

SyntheticSpec synthetic_spec_from_json(const json& j, bool strict) {
  SyntheticSpec spec = standard_benchmark_spec();
  StrictReader r(j, "dataset.synthetic", strict);
  if (r.has("classes")) {
    spec.classes.clear();
    for (const json& cj : r.at("classes")) {
      ClassSpec c;
      StrictReader cr(cj, "dataset.synthetic.classes[]", strict);
      cr.get("name", c.name);
      std::string kind = "box";
      cr.get("kind", kind);
      c.kind = primitive_from_string(kind);
      std::vector<double> a{c.param_a.lo, c.param_a.hi}, b{c.param_b.lo, c.param_b.hi};
      cr.get("param_a", a);
      cr.get("param_b", b);
      if (a.size() != 2 || b.size() != 2) {
        fail(ErrorCode::SpecInvalid, "parameter ranges must be [lo, hi]");
      }
      c.param_a = {a[0], a[1]};
      c.param_b = {b[0], b[1]};
      cr.get("tessellation", c.tessellation);
      spec.classes.push_back(std::move(c));
    }
  }
  r.get("train_per_class", spec.train_per_class);
  r.get("test_per_class", spec.test_per_class);
  r.get("seed", spec.seed);
  std::string rotation = to_string(spec.rotation);
  r.get("rotation", rotation);
  spec.rotation = shape_rotation_from_string(rotation);
  r.get("face_cap", spec.face_cap);
  r.get("self_check", spec.self_check);
  return spec;
}

json metrics_history_to_json(const MetricsHistory& history) {
  json epochs = json::array();
  for (const EpochMetrics& e : history.epochs) {
    epochs.push_back(json{{"epoch", e.epoch}, {"loss", e.train_loss}, {"accuracy", e.train_accuracy}});
  }
  return json{
      {"initial",
       {{"epoch", history.initial.epoch},
        {"loss", history.initial.train_loss},
        {"accuracy", history.initial.train_accuracy}}},
      {"epochs", epochs},
      {"skipped_steps", history.skipped_steps},
  };
}

MetricsHistory metrics_history_from_json(const json& j) {
  MetricsHistory history;
  history.initial.epoch = j.at("initial").at("epoch").get<int>();
  history.initial.train_loss = j.at("initial").at("loss").get<double>();
  history.initial.train_accuracy = j.at("initial").at("accuracy").get<double>();
  for (const json& e : j.at("epochs")) {
    history.epochs.push_back(
        {e.at("epoch").get<int>(), e.at("loss").get<double>(), e.at("accuracy").get<double>()});
  }
  history.skipped_steps = j.at("skipped_steps").get<int>();
  return history;
}

json robustness_report_to_json(const RobustnessReport& report) {
  return json{
      {"accuracies", report.accuracies}, {"mean", report.mean},
      {"stddev", report.stddev},         {"mode", to_string(report.mode)},
      {"max_angle_deg", report.max_angle_deg}, {"repeats", report.repeats},
  };
}

std::string metrics_history_to_csv(const MetricsHistory& history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,split,loss,accuracy\n";
  os << history.initial.epoch << ",train," << history.initial.train_loss << ','
     << history.initial.train_accuracy << '\n';
  for (const EpochMetrics& e : history.epochs) {
    os << e.epoch << ",train," << e.train_loss << ',' << e.train_accuracy << '\n';
  }
  return os.str();
}

}  // namespace mvtn
