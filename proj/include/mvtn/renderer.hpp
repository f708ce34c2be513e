#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mvtn/autodiff.hpp"
#include "mvtn/camera.hpp"
#include "mvtn/mesh.hpp"

namespace mvtn {

struct RenderSettings {
  int image_height = 32;
  int image_width = 32;
  double sigma = 1e-4;  // edge softness, squared normalized-screen units
  double gamma = 1e-2;  // depth blending temperature
  std::array<double, 3> background{0.0, 0.0, 0.0};
  int channels = 1;  // 1 = grayscale shading, 3 = replicated with per-channel background
  Projection projection = Projection::Perspective;
  double fov_deg = 45.0;
  double ortho_half_extent = 1.2;
  double near_clip = 0.05;
  // View-space depth mapped to [0,1] for blending; near end maps to 1.
  double depth_near = 0.5;
  double depth_far = 5.0;

  Intrinsics intrinsics() const {
    return {projection, fov_deg, ortho_half_extent, image_width, image_height};
  }
  void validate() const;
};

struct LightSpec {
  Vec3 direction{0, 0, -1};  // unit, world frame
  double ambient = 0.1;
  double diffuse = 0.9;  // ambient + diffuse <= 1 keeps pixels in [0,1]
};

enum class LightMode { FixedToCamera, RandomDirection };

struct RenderLight {
  LightMode mode = LightMode::FixedToCamera;
  Vec3 random_direction{0, 0, -1};
  double ambient = 0.1;
  double diffuse = 0.9;
};

// Plain value image, row-major [h][w][c].
struct Image {
  int height = 0, width = 0, channels = 1;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {}
  double& at(int y, int x, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

struct RenderedView {
  ad::TensorView pixels;  // [h, w, c]
  int pose_index = 0;
};

Image snapshot(const ad::TensorView& pixels);

// Camera quantities as tape nodes so pixels stay differentiable in the pose.
struct CameraVars {
  std::array<ad::Var, 3> eye;
  std::array<ad::Var, 3> right;
  std::array<ad::Var, 3> down;
  std::array<ad::Var, 3> forward;
  Intrinsics intrinsics;
};

CameraVars make_camera_vars(ad::Tape& tape, ad::Var azimuth_deg, ad::Var elevation_deg,
                            ad::Var distance, const Intrinsics& intrinsics);

// Normalized screen coordinates (x right, y down, each spanning [-1,1] across
// the image) plus clamped view depth.
struct ProjectedVertex {
  ad::Var x, y, z;
  double z_unclamped = 0;
};

std::vector<ProjectedVertex> project_vertices(ad::Tape& tape, const TriangleMesh& mesh,
                                              const CameraVars& camera,
                                              double near_clip = 0.05);

// Soft per-pixel, per-triangle occupancy: sigmoid(sign * d^2 / sigma) where
// sign is +1 inside the projected triangle. One fused node whose partials to
// the six screen coordinates are exact. Degenerate triangles yield a constant
// zero node.
ad::Var triangle_influence(ad::Tape& tape, double px, double py,
                           const std::array<ad::Var, 6>& tri, double sigma);

ad::TensorView soft_silhouette(ad::Tape& tape, const TriangleMesh& mesh,
                               const std::vector<ProjectedVertex>& projected,
                               const RenderSettings& settings);

ad::TensorView shade_lambertian(ad::Tape& tape, const TriangleMesh& mesh,
                                const std::vector<ProjectedVertex>& projected,
                                const std::array<ad::Var, 3>& light_direction,
                                double ambient, double diffuse,
                                const RenderSettings& settings);

// Differentiable M-view render; gradients flow from every geometry-influenced
// pixel to the azimuth/elevation (and distance) vars.
std::vector<RenderedView> render_views_ad(ad::Tape& tape, const TriangleMesh& mesh,
                                          std::span<const ad::Var> azimuths_deg,
                                          std::span<const ad::Var> elevations_deg,
                                          ad::Var distance, const RenderSettings& settings,
                                          const RenderLight& light);

// Value-only convenience; random light mode draws one shared direction per call.
std::vector<Image> render_views(const TriangleMesh& mesh, const SceneParams& params,
                                const RenderSettings& settings, LightMode mode,
                                std::uint64_t seed = 0);

Vec3 random_light_direction(std::uint64_t seed);

// Non-differentiable reference rasterization (binary coverage).
Image hard_silhouette(const TriangleMesh& mesh, const CameraPose& pose,
                      const RenderSettings& settings);

// 8-bit binary PPM: P5 for 1 channel, P6 for 3.
std::string encode_ppm(const Image& image);
void write_ppm(const Image& image, const std::string& path);

namespace detail {
// Shared 2D helpers (screen-space geometry), exposed for tests and the hard
// rasterizer. tri = {x0,y0,x1,y1,x2,y2}.
bool point_in_triangle(double px, double py, const double* tri);
double point_triangle_distance_sq(double px, double py, const double* tri);
}  // namespace detail

}  // namespace mvtn
