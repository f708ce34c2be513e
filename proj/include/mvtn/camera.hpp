#pragma once

#include <cstdint>
#include <vector>

#include "mvtn/vec3.hpp"

namespace mvtn {

struct CameraPose {
  double azimuth_deg = 0;
  double elevation_deg = 0;  // in [-90, 90]
  double distance = 2.2;     // > 0; target fixed at origin, up fixed at +Y
};

// The scene parameter vector u: [azim_1..azim_M, elev_1..elev_M] in degrees,
// plus the shared camera distance.
struct SceneParams {
  std::vector<double> values;
  double distance = 2.2;

  int view_count() const { return static_cast<int>(values.size()) / 2; }
  double azimuth(int i) const { return values[i]; }
  double elevation(int i) const { return values[view_count() + i]; }
  double& azimuth(int i) { return values[i]; }
  double& elevation(int i) { return values[static_cast<std::size_t>(view_count()) + i]; }
  CameraPose pose(int i) const { return {azimuth(i), elevation(i), distance}; }
};

struct ParamBounds {
  double azimuth_deg = 180;   // > 0
  double elevation_deg = 90;  // > 0
};

enum class Projection { Perspective, Orthographic };

struct Intrinsics {
  Projection kind = Projection::Perspective;
  double fov_deg = 45.0;          // perspective: full vertical/horizontal angle
  double ortho_half_extent = 1.2; // orthographic: world units mapped to |ndc| = 1
  int image_width = 32;
  int image_height = 32;
};

// World-to-view transform: p_view = rotation * p_world + translation.
// View axes: x right, y down (pixel order), z forward; z_view > 0 in front.
struct ViewMatrix {
  Mat3 rotation;
  Vec3 translation;
  Intrinsics intrinsics;

  Vec3 to_view(const Vec3& p) const { return rotation * p + translation; }
};

enum class MvtnVariant { Fixed, Direct, Offset };

SceneParams circular_config(int view_count, double elevation_deg = 30.0,
                            double distance = 2.2);
SceneParams spherical_config(int view_count, double distance = 2.2);
SceneParams random_config(int view_count, std::uint64_t seed, double distance = 2.2);

ParamBounds default_bounds(MvtnVariant variant, int view_count);

// u_i = bound_i * tanh(raw_i)
SceneParams apply_direct(const std::vector<double>& raw, const ParamBounds& bounds,
                         double distance = 2.2);
// u_i = u0_i + bound_i * tanh(raw_i)
SceneParams apply_offset(const SceneParams& u0, const std::vector<double>& raw,
                         const ParamBounds& bounds);

ViewMatrix look_at(const CameraPose& pose, const Intrinsics& intrinsics);

Vec3 camera_position(const CameraPose& pose);

}  // namespace mvtn
