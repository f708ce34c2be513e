#include "mvtn/camera.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mvtn/error.hpp"
#include "mvtn/rng.hpp"

namespace mvtn {

namespace {

void check_view_count(int view_count) {
  if (view_count < 1) {
    fail(ErrorCode::InvalidViewCount, "need at least one view, got " + std::to_string(view_count));
  }
}

void check_raw(const std::vector<double>& raw, std::size_t expected) {
  if (raw.size() != expected) {
    fail(ErrorCode::LengthMismatch, "expected " + std::to_string(expected) +
                                        " raw values, got " + std::to_string(raw.size()));
  }
  for (double v : raw) {
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteInput, "raw parameter is not finite");
  }
}

double bound_for(const ParamBounds& bounds, int index, int view_count) {
  return index < view_count ? bounds.azimuth_deg : bounds.elevation_deg;
}

// tanh saturates to exactly 1.0 in doubles near |x| ~ 19, which would violate
// the strict |u| < bound contract. The cap leaves a margin of bound * 1e-12
// (~1e-10 degrees), comfortably above the ULP of u0 + bound for any angle in
// range, so u0 + bound * strict_tanh(x) stays strictly inside the interval
// even after rounding.
double strict_tanh(double x) {
  const double t = std::tanh(x);
  const double cap = 1.0 - 1e-12;
  return std::clamp(t, -cap, cap);
}

}  // namespace

SceneParams circular_config(int view_count, double elevation_deg, double distance) {
  check_view_count(view_count);
  SceneParams params;
  params.distance = distance;
  params.values.resize(2 * static_cast<std::size_t>(view_count));
  for (int k = 0; k < view_count; ++k) {
    params.azimuth(k) = 360.0 * k / view_count;
    params.elevation(k) = elevation_deg;
  }
  return params;
}

SceneParams spherical_config(int view_count, double distance) {
  check_view_count(view_count);
  SceneParams params;
  params.distance = distance;
  params.values.resize(2 * static_cast<std::size_t>(view_count));
  // Equal-area spiral: z_k = -1 + 2(k - 1/2)/M, phi_k = phi_{k-1} + 3.6/sqrt(M(1-z_k^2)).
  double phi = 0;
  for (int k = 0; k < view_count; ++k) {
    const double z = -1.0 + 2.0 * (k + 0.5) / view_count;
    const double ring = 1.0 - z * z;
    if (k > 0) {
      phi += ring > 1e-12 ? 3.6 / std::sqrt(view_count * ring) : 0.0;  // pole: increment 0
    }
    params.azimuth(k) = std::fmod(phi * kRadToDeg, 360.0);
    params.elevation(k) = std::asin(std::clamp(z, -1.0, 1.0)) * kRadToDeg;
  }
  return params;
}

SceneParams random_config(int view_count, std::uint64_t seed, double distance) {
  check_view_count(view_count);
  Rng rng(seed);
  SceneParams params;
  params.distance = distance;
  params.values.resize(2 * static_cast<std::size_t>(view_count));
  for (int k = 0; k < view_count; ++k) {
    const double z = rng.uniform(-1.0, 1.0);
    params.azimuth(k) = rng.uniform(0.0, 360.0);
    params.elevation(k) = std::asin(z) * kRadToDeg;
  }
  return params;
}

ParamBounds default_bounds(MvtnVariant variant, int view_count) {
  check_view_count(view_count);
  ParamBounds bounds;
  bounds.elevation_deg = 90.0;
  bounds.azimuth_deg = variant == MvtnVariant::Direct ? 180.0 : 180.0 / view_count;
  return bounds;
}

SceneParams apply_direct(const std::vector<double>& raw, const ParamBounds& bounds,
                         double distance) {
  if (raw.empty() || raw.size() % 2 != 0) {
    fail(ErrorCode::LengthMismatch, "raw parameter vector must have even positive length");
  }
  check_raw(raw, raw.size());
  const int view_count = static_cast<int>(raw.size()) / 2;
  SceneParams params;
  params.distance = distance;
  params.values.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    params.values[i] = bound_for(bounds, static_cast<int>(i), view_count) * strict_tanh(raw[i]);
  }
  return params;
}

SceneParams apply_offset(const SceneParams& u0, const std::vector<double>& raw,
                         const ParamBounds& bounds) {
  check_raw(raw, u0.values.size());
  const int view_count = u0.view_count();
  SceneParams params = u0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    params.values[i] =
        u0.values[i] + bound_for(bounds, static_cast<int>(i), view_count) * strict_tanh(raw[i]);
  }
  return params;
}

Vec3 camera_position(const CameraPose& pose) {
  const double a = pose.azimuth_deg * kDegToRad;
  const double e = pose.elevation_deg * kDegToRad;
  return {pose.distance * std::cos(e) * std::sin(a), pose.distance * std::sin(e),
          pose.distance * std::cos(e) * std::cos(a)};
}

ViewMatrix look_at(const CameraPose& pose, const Intrinsics& intrinsics) {
  if (!(pose.distance > 0)) fail(ErrorCode::DegeneratePose, "camera distance must be > 0");
  const Vec3 eye = camera_position(pose);
  const Vec3 forward = normalized(-eye);

  // Up flips to +Z near the poles, where +Y is parallel to the view ray.
  Vec3 up{0, 1, 0};
  if (cross(forward, up).norm() < 1e-9) up = {0, 0, 1};
  const Vec3 right = normalized(cross(forward, up));
  const Vec3 down = cross(forward, right);

  ViewMatrix view;
  view.intrinsics = intrinsics;
  for (int c = 0; c < 3; ++c) {
    view.rotation(0, c) = c == 0 ? right.x : (c == 1 ? right.y : right.z);
    view.rotation(1, c) = c == 0 ? down.x : (c == 1 ? down.y : down.z);
    view.rotation(2, c) = c == 0 ? forward.x : (c == 1 ? forward.y : forward.z);
  }
  view.translation = -(view.rotation * eye);
  return view;
}

}  // namespace mvtn
