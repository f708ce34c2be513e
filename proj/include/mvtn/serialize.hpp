#pragma once

#include <string>

#include "json.hpp"
#include "mvtn/camera.hpp"
#include "mvtn/mesh.hpp"
#include "mvtn/renderer.hpp"
#include "mvtn/training.hpp"

namespace mvtn {

struct SyntheticSpec;  // dataset.hpp

using json = nlohmann::json;

// Enum <-> string. Unknown names raise SpecInvalid.
std::string to_string(MvtnVariant v);
std::string to_string(BaseConfig c);
std::string to_string(RotationMode m);
std::string to_string(Projection p);
MvtnVariant variant_from_string(const std::string& s);
BaseConfig base_config_from_string(const std::string& s);
RotationMode rotation_mode_from_string(const std::string& s);
Projection projection_from_string(const std::string& s);

json scene_params_to_json(const SceneParams& params);
SceneParams scene_params_from_json(const json& j);

json train_config_to_json(const TrainConfig& config);
// Missing keys keep defaults; unknown keys raise SpecInvalid when strict.
TrainConfig train_config_from_json(const json& j, bool strict = true);

json render_settings_to_json(const RenderSettings& settings);
RenderSettings render_settings_from_json(const json& j, bool strict = true);

json synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const json& j, bool strict = true);

json metrics_history_to_json(const MetricsHistory& history);
MetricsHistory metrics_history_from_json(const json& j);

json robustness_report_to_json(const RobustnessReport& report);

std::string metrics_history_to_csv(const MetricsHistory& history);

}  // namespace mvtn
