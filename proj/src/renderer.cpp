#include "mvtn/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "mvtn/error.hpp"
#include "mvtn/rng.hpp"

namespace mvtn {

namespace {

using ad::Tape;
using ad::Var;

constexpr double kDegenerateArea2 = 1e-18;  // squared-units threshold on 2*area
constexpr double kPruneRadiusScale = 4.5;   // in units of sqrt(sigma); pruned influence < 2e-9

struct EdgeGrad {
  double d_ax, d_ay, d_bx, d_by;
};

// Squared distance from p to segment a-b plus gradient w.r.t. the endpoints.
// With t* the clamped projection parameter, d(d^2)/da = -2(1-t*)(p-q) and
// d(d^2)/db = -2 t* (p-q); the interior-t dependence drops out at the optimum.
double segment_distance_sq(double px, double py, double ax, double ay, double bx, double by,
                           EdgeGrad* grad) {
  const double ex = bx - ax, ey = by - ay;
  const double wx = px - ax, wy = py - ay;
  const double ee = ex * ex + ey * ey;
  double t = ee > 1e-24 ? (wx * ex + wy * ey) / ee : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (ax + t * ex);
  const double dy = py - (ay + t * ey);
  if (grad) {
    grad->d_ax = -2.0 * dx * (1.0 - t);
    grad->d_ay = -2.0 * dy * (1.0 - t);
    grad->d_bx = -2.0 * dx * t;
    grad->d_by = -2.0 * dy * t;
  }
  return dx * dx + dy * dy;
}

double stable_sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

struct InfluenceEval {
  double value = 0;
  std::array<double, 6> partials{};  // d(value)/d(x0,y0,x1,y1,x2,y2)
  bool degenerate = false;
};

InfluenceEval influence_eval(double px, double py, const double* tri, double sigma) {
  InfluenceEval out;
  const double area2 = (tri[2] - tri[0]) * (tri[5] - tri[1]) -
                       (tri[4] - tri[0]) * (tri[3] - tri[1]);
  if (std::abs(area2) < kDegenerateArea2) {
    out.degenerate = true;
    return out;
  }

  double best = std::numeric_limits<double>::infinity();
  int best_edge = 0;
  EdgeGrad best_grad{};
  for (int e = 0; e < 3; ++e) {
    const int a = e, b = (e + 1) % 3;
    EdgeGrad g;
    const double d2 =
        segment_distance_sq(px, py, tri[2 * a], tri[2 * a + 1], tri[2 * b], tri[2 * b + 1], &g);
    if (d2 < best) {
      best = d2;
      best_edge = e;
      best_grad = g;
    }
  }

  const double sign = detail::point_in_triangle(px, py, tri) ? 1.0 : -1.0;
  const double d = stable_sigmoid(sign * best / sigma);
  const double scale = d * (1.0 - d) * sign / sigma;
  out.value = d;
  const int a = best_edge, b = (best_edge + 1) % 3;
  out.partials[2 * a] = scale * best_grad.d_ax;
  out.partials[2 * a + 1] = scale * best_grad.d_ay;
  out.partials[2 * b] += scale * best_grad.d_bx;
  out.partials[2 * b + 1] += scale * best_grad.d_by;
  return out;
}

std::array<Var, 3> normalize_vars(Tape& tape, const std::array<Var, 3>& v) {
  Var n2 = ad::add(ad::add(ad::mul(v[0], v[0]), ad::mul(v[1], v[1])), ad::mul(v[2], v[2]));
  Var inv = ad::pow_const(n2, -0.5);
  (void)tape;
  return {ad::mul(v[0], inv), ad::mul(v[1], inv), ad::mul(v[2], inv)};
}

std::array<Var, 3> cross_vars(const std::array<Var, 3>& a, const std::array<Var, 3>& b) {
  return {ad::sub(ad::mul(a[1], b[2]), ad::mul(a[2], b[1])),
          ad::sub(ad::mul(a[2], b[0]), ad::mul(a[0], b[2])),
          ad::sub(ad::mul(a[0], b[1]), ad::mul(a[1], b[0]))};
}

// dot of a var triple against a constant vector, as a single fused node.
Var dot_const(Tape& tape, const std::array<Var, 3>& v, const Vec3& c) {
  const double value = v[0].value() * c.x + v[1].value() * c.y + v[2].value() * c.z;
  Var node = tape.make_node(value);
  tape.add_edge(v[0], c.x);
  tape.add_edge(v[1], c.y);
  tape.add_edge(v[2], c.z);
  return node;
}

Var dot_vars(const std::array<Var, 3>& a, const std::array<Var, 3>& b) {
  return ad::add(ad::add(ad::mul(a[0], b[0]), ad::mul(a[1], b[1])), ad::mul(a[2], b[2]));
}

struct FaceCandidate {
  int face = -1;
  std::array<Var, 6> tri;
  std::array<double, 6> values;
  int j0, j1, i0, i1;  // inclusive pixel bounds of the inflated bbox
  bool visible = false;
};

// Screen bbox -> pixel index range under px(j) = (2j + 1 - W)/W.
void pixel_range(double lo, double hi, int n, int& first, int& last) {
  first = static_cast<int>(std::ceil((n * (1.0 + lo) - 1.0) / 2.0));
  last = static_cast<int>(std::floor((n * (1.0 + hi) - 1.0) / 2.0));
  first = std::max(first, 0);
  last = std::min(last, n - 1);
}

std::vector<FaceCandidate> gather_candidates(const TriangleMesh& mesh,
                                             const std::vector<ProjectedVertex>& projected,
                                             const RenderSettings& settings,
                                             double near_clip) {
  std::vector<FaceCandidate> candidates;
  candidates.reserve(mesh.faces.size());
  const double inflate = kPruneRadiusScale * std::sqrt(settings.sigma);
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    FaceCandidate cand;
    cand.face = static_cast<int>(f);
    bool any_in_front = false;
    double x_min = 1e30, x_max = -1e30, y_min = 1e30, y_max = -1e30;
    for (int k = 0; k < 3; ++k) {
      const ProjectedVertex& pv = projected[mesh.faces[f][k]];
      cand.tri[2 * k] = pv.x;
      cand.tri[2 * k + 1] = pv.y;
      cand.values[2 * k] = pv.x.value();
      cand.values[2 * k + 1] = pv.y.value();
      any_in_front = any_in_front || pv.z_unclamped > near_clip;
      x_min = std::min(x_min, pv.x.value());
      x_max = std::max(x_max, pv.x.value());
      y_min = std::min(y_min, pv.y.value());
      y_max = std::max(y_max, pv.y.value());
    }
    if (!any_in_front) continue;  // fully behind the near plane
    if (mesh.face_areas()[f] <= 0.0) continue;
    pixel_range(x_min - inflate, x_max + inflate, settings.image_width, cand.j0, cand.j1);
    pixel_range(y_min - inflate, y_max + inflate, settings.image_height, cand.i0, cand.i1);
    if (cand.j0 > cand.j1 || cand.i0 > cand.i1) continue;
    cand.visible = true;
    candidates.push_back(cand);
  }
  return candidates;
}

double pixel_center_x(int j, int w) { return (2.0 * j + 1.0 - w) / w; }
double pixel_center_y(int i, int h) { return (2.0 * i + 1.0 - h) / h; }

}  // namespace

void RenderSettings::validate() const {
  if (!(sigma > 0) || !(gamma > 0)) fail(ErrorCode::InvalidRange, "sigma and gamma must be > 0");
  if (image_height < 4 || image_width < 4) fail(ErrorCode::InvalidRange, "image dims must be >= 4");
  if (channels != 1 && channels != 3) fail(ErrorCode::InvalidRange, "channels must be 1 or 3");
  for (double b : background) {
    if (b < 0 || b > 1) fail(ErrorCode::InvalidRange, "background must lie in [0,1]");
  }
}

Image snapshot(const ad::TensorView& pixels) {
  Image img(pixels.shape[0], pixels.shape[1], pixels.shape.size() > 2 ? pixels.shape[2] : 1);
  for (std::size_t i = 0; i < pixels.elems.size(); ++i) img.data[i] = pixels.elems[i].value();
  return img;
}

CameraVars make_camera_vars(Tape& tape, Var azimuth_deg, Var elevation_deg, Var distance,
                            const Intrinsics& intrinsics) {
  if (!(distance.value() > 0)) fail(ErrorCode::DegeneratePose, "camera distance must be > 0");
  Var az = ad::mul_const(azimuth_deg, kDegToRad);
  Var el = ad::mul_const(elevation_deg, kDegToRad);
  Var cos_el = ad::cos(el);
  Var sin_el = ad::sin(el);
  Var cos_az = ad::cos(az);
  Var sin_az = ad::sin(az);

  CameraVars cam;
  cam.intrinsics = intrinsics;
  cam.eye = {ad::mul(distance, ad::mul(cos_el, sin_az)), ad::mul(distance, sin_el),
             ad::mul(distance, ad::mul(cos_el, cos_az))};
  // Forward looks at the origin: -eye / |eye| = -eye / distance.
  Var inv_d = ad::pow_const(distance, -1.0);
  cam.forward = {ad::neg(ad::mul(cam.eye[0], inv_d)), ad::neg(ad::mul(cam.eye[1], inv_d)),
                 ad::neg(ad::mul(cam.eye[2], inv_d))};

  // right = normalize(forward x up). Near the poles +Y degenerates; use +Z.
  const double fz = cam.forward[2].value();
  const double fx = cam.forward[0].value();
  if (fx * fx + fz * fz > 1e-18) {
    std::array<Var, 3> raw_right = {ad::neg(cam.forward[2]), tape.constant(0.0), cam.forward[0]};
    cam.right = normalize_vars(tape, raw_right);
  } else {
    // forward == +-Y; up = +Z gives right = forward x up.
    std::array<Var, 3> up = {tape.constant(0.0), tape.constant(0.0), tape.constant(1.0)};
    cam.right = normalize_vars(tape, cross_vars(cam.forward, up));
  }
  cam.down = cross_vars(cam.forward, cam.right);
  return cam;
}

std::vector<ProjectedVertex> project_vertices(Tape& tape, const TriangleMesh& mesh,
                                              const CameraVars& camera, double near_clip) {
  const Intrinsics& intr = camera.intrinsics;
  const double inv_tan = intr.kind == Projection::Perspective
                             ? 1.0 / std::tan(0.5 * intr.fov_deg * kDegToRad)
                             : 0.0;

  // Rotate-then-translate: p_view = B (p - eye) with basis rows B. Computing
  // B*eye once per view keeps per-vertex work at three fused dots.
  Var re = dot_vars(camera.right, camera.eye);
  Var de = dot_vars(camera.down, camera.eye);
  Var fe = dot_vars(camera.forward, camera.eye);

  std::vector<ProjectedVertex> out;
  out.reserve(mesh.vertices.size());
  Var near_node = tape.constant(near_clip);
  bool any_in_front = false;
  for (const Vec3& v : mesh.vertices) {
    Var xv = ad::sub(dot_const(tape, camera.right, v), re);
    Var yv = ad::sub(dot_const(tape, camera.down, v), de);
    Var zv = ad::sub(dot_const(tape, camera.forward, v), fe);
    ProjectedVertex pv;
    pv.z_unclamped = zv.value();
    any_in_front = any_in_front || pv.z_unclamped > near_clip;
    pv.z = ad::max2(zv, near_node);
    if (intr.kind == Projection::Perspective) {
      Var denom = ad::mul_const(pv.z, 1.0 / inv_tan);
      pv.x = ad::div(xv, denom);
      pv.y = ad::div(yv, denom);
    } else {
      pv.x = ad::mul_const(xv, 1.0 / intr.ortho_half_extent);
      pv.y = ad::mul_const(yv, 1.0 / intr.ortho_half_extent);
    }
    out.push_back(pv);
  }
  if (!any_in_front) fail(ErrorCode::AllBehindCamera, "every vertex is behind the near plane");
  return out;
}

Var triangle_influence(Tape& tape, double px, double py, const std::array<Var, 6>& tri,
                       double sigma) {
  double values[6];
  for (int i = 0; i < 6; ++i) values[i] = tri[i].value();
  const InfluenceEval eval = influence_eval(px, py, values, sigma);
  if (eval.degenerate) return tape.constant(0.0);
  Var node = tape.make_node(eval.value);
  for (int i = 0; i < 6; ++i) {
    if (eval.partials[i] != 0.0) tape.add_edge(tri[i], eval.partials[i]);
  }
  return node;
}

ad::TensorView soft_silhouette(Tape& tape, const TriangleMesh& mesh,
                               const std::vector<ProjectedVertex>& projected,
                               const RenderSettings& settings) {
  settings.validate();
  const int h = settings.image_height, w = settings.image_width;
  const auto candidates = gather_candidates(mesh, projected, settings, settings.near_clip);

  Var one = tape.constant(1.0);
  std::vector<Var> survival(static_cast<std::size_t>(h) * w, one);
  for (const FaceCandidate& cand : candidates) {
    for (int i = cand.i0; i <= cand.i1; ++i) {
      const double py = pixel_center_y(i, h);
      for (int j = cand.j0; j <= cand.j1; ++j) {
        const double px = pixel_center_x(j, w);
        Var d = triangle_influence(tape, px, py, cand.tri, settings.sigma);
        survival[static_cast<std::size_t>(i) * w + j] =
            ad::mul(survival[static_cast<std::size_t>(i) * w + j], ad::sub(one, d));
      }
    }
  }

  ad::TensorView out;
  out.shape = {h, w};
  out.elems.reserve(survival.size());
  for (const Var& s : survival) out.elems.push_back(ad::sub(one, s));
  return out;
}

ad::TensorView shade_lambertian(Tape& tape, const TriangleMesh& mesh,
                                const std::vector<ProjectedVertex>& projected,
                                const std::array<Var, 3>& light_direction, double ambient,
                                double diffuse, const RenderSettings& settings) {
  settings.validate();
  if (ambient + diffuse > 1.0 + 1e-12) {
    fail(ErrorCode::InvalidRange, "ambient + diffuse must be <= 1");
  }
  const int h = settings.image_height, w = settings.image_width;
  const auto candidates = gather_candidates(mesh, projected, settings, settings.near_clip);

  // Per-face depth (centroid, mapped so near = 1) and Lambertian intensity.
  const double depth_span = settings.depth_far - settings.depth_near;
  std::vector<Var> z_tilde(candidates.size());
  std::vector<Var> intensity(candidates.size());
  Var zero = tape.constant(0.0);
  Var one = tape.constant(1.0);
  double max_z_tilde = 0.0;  // background sits at 0
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const auto& face = mesh.faces[candidates[c].face];
    Var z_sum = ad::add(ad::add(projected[face[0]].z, projected[face[1]].z), projected[face[2]].z);
    Var z_mapped = ad::mul_const(ad::add_const(ad::mul_const(z_sum, -1.0 / 3.0), settings.depth_far),
                                 1.0 / depth_span);
    z_tilde[c] = ad::max2(ad::min2(z_mapped, one), zero);
    max_z_tilde = std::max(max_z_tilde, z_tilde[c].value());

    const Vec3& n = mesh.face_normals()[candidates[c].face];
    Var lambert = ad::abs(dot_const(tape, light_direction, n));
    intensity[c] = ad::add_const(ad::mul_const(lambert, diffuse), ambient);
  }

  // Blend weights w_j ~ D_j * exp(z~_j / gamma), background w_b ~ exp(0 / gamma).
  // The shared shift by the max exponent cancels in the normalized result and
  // is treated as a constant, so exp never overflows.
  std::vector<Var> depth_weight(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    depth_weight[c] =
        ad::exp(ad::mul_const(ad::add_const(z_tilde[c], -max_z_tilde), 1.0 / settings.gamma));
  }
  const double background_weight = std::exp(-max_z_tilde / settings.gamma);

  const std::size_t pixel_count = static_cast<std::size_t>(h) * w;
  std::vector<Var> numerator(pixel_count, zero);
  std::vector<Var> denominator(pixel_count, zero);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const FaceCandidate& cand = candidates[c];
    for (int i = cand.i0; i <= cand.i1; ++i) {
      const double py = pixel_center_y(i, h);
      for (int j = cand.j0; j <= cand.j1; ++j) {
        const double px = pixel_center_x(j, w);
        Var d = triangle_influence(tape, px, py, cand.tri, settings.sigma);
        Var term = ad::mul(d, depth_weight[c]);
        const std::size_t idx = static_cast<std::size_t>(i) * w + j;
        denominator[idx] = ad::add(denominator[idx], term);
        numerator[idx] = ad::add(numerator[idx], ad::mul(term, intensity[c]));
      }
    }
  }

  ad::TensorView out;
  out.shape = {h, w, settings.channels};
  out.elems.reserve(pixel_count * settings.channels);
  for (std::size_t idx = 0; idx < pixel_count; ++idx) {
    Var den = ad::add_const(denominator[idx], background_weight);
    for (int ch = 0; ch < settings.channels; ++ch) {
      Var num = ad::add_const(numerator[idx], background_weight * settings.background[ch]);
      out.elems.push_back(ad::div(num, den));
    }
  }
  return out;
}

std::vector<RenderedView> render_views_ad(Tape& tape, const TriangleMesh& mesh,
                                          std::span<const Var> azimuths_deg,
                                          std::span<const Var> elevations_deg, Var distance,
                                          const RenderSettings& settings,
                                          const RenderLight& light) {
  settings.validate();
  if (azimuths_deg.size() != elevations_deg.size()) {
    fail(ErrorCode::LengthMismatch, "azimuth/elevation counts differ");
  }
  std::vector<RenderedView> views;
  views.reserve(azimuths_deg.size());
  for (std::size_t i = 0; i < azimuths_deg.size(); ++i) {
    CameraVars cam = make_camera_vars(tape, azimuths_deg[i], elevations_deg[i], distance,
                                      settings.intrinsics());
    auto projected = project_vertices(tape, mesh, cam, settings.near_clip);
    std::array<Var, 3> light_dir;
    if (light.mode == LightMode::FixedToCamera) {
      light_dir = cam.forward;  // from the camera toward the object center
    } else {
      light_dir = {tape.constant(light.random_direction.x),
                   tape.constant(light.random_direction.y),
                   tape.constant(light.random_direction.z)};
    }
    RenderedView view;
    view.pose_index = static_cast<int>(i);
    view.pixels = shade_lambertian(tape, mesh, projected, light_dir, light.ambient,
                                   light.diffuse, settings);
    views.push_back(std::move(view));
  }
  return views;
}

Vec3 random_light_direction(std::uint64_t seed) {
  Rng rng(seed);
  const double z = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(phi), z, r * std::sin(phi)};
}

std::vector<Image> render_views(const TriangleMesh& mesh, const SceneParams& params,
                                const RenderSettings& settings, LightMode mode,
                                std::uint64_t seed) {
  Tape tape;
  std::vector<Var> az, el;
  const int m = params.view_count();
  az.reserve(m);
  el.reserve(m);
  for (int i = 0; i < m; ++i) {
    az.push_back(tape.constant(params.azimuth(i)));
    el.push_back(tape.constant(params.elevation(i)));
  }
  RenderLight light;
  light.mode = mode;
  if (mode == LightMode::RandomDirection) light.random_direction = random_light_direction(seed);
  auto views = render_views_ad(tape, mesh, az, el, tape.constant(params.distance), settings, light);
  std::vector<Image> images;
  images.reserve(views.size());
  for (const RenderedView& v : views) images.push_back(snapshot(v.pixels));
  return images;
}

Image hard_silhouette(const TriangleMesh& mesh, const CameraPose& pose,
                      const RenderSettings& settings) {
  settings.validate();
  const ViewMatrix view = look_at(pose, settings.intrinsics());
  const double inv_tan = settings.projection == Projection::Perspective
                             ? 1.0 / std::tan(0.5 * settings.fov_deg * kDegToRad)
                             : 0.0;
  const int h = settings.image_height, w = settings.image_width;

  std::vector<std::array<double, 6>> tris;
  tris.reserve(mesh.faces.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    if (mesh.face_areas()[f] <= 0.0) continue;
    std::array<double, 6> tri;
    bool any_in_front = false;
    for (int k = 0; k < 3; ++k) {
      const Vec3 pv = view.to_view(mesh.vertices[mesh.faces[f][k]]);
      any_in_front = any_in_front || pv.z > settings.near_clip;
      const double z = std::max(pv.z, settings.near_clip);
      if (settings.projection == Projection::Perspective) {
        tri[2 * k] = pv.x * inv_tan / z;
        tri[2 * k + 1] = pv.y * inv_tan / z;
      } else {
        tri[2 * k] = pv.x / settings.ortho_half_extent;
        tri[2 * k + 1] = pv.y / settings.ortho_half_extent;
      }
    }
    if (any_in_front) tris.push_back(tri);
  }

  Image img(h, w, 1, 0.0);
  for (int i = 0; i < h; ++i) {
    const double py = pixel_center_y(i, h);
    for (int j = 0; j < w; ++j) {
      const double px = pixel_center_x(j, w);
      for (const auto& tri : tris) {
        if (detail::point_in_triangle(px, py, tri.data())) {
          img.at(i, j) = 1.0;
          break;
        }
      }
    }
  }
  return img;
}

std::string encode_ppm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    fail(ErrorCode::InvalidRange, "PPM export supports 1 or 3 channels");
  }
  std::string out = image.channels == 1 ? "P5" : "P6";
  out += "\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.data.size());
  for (double v : image.data) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
  return out;
}

void write_ppm(const Image& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  const std::string bytes = encode_ppm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "failed writing " + path);
}

namespace detail {

bool point_in_triangle(double px, double py, const double* tri) {
  double sign = 0;
  for (int e = 0; e < 3; ++e) {
    const int a = e, b = (e + 1) % 3;
    const double c = (tri[2 * b] - tri[2 * a]) * (py - tri[2 * a + 1]) -
                     (tri[2 * b + 1] - tri[2 * a + 1]) * (px - tri[2 * a]);
    if (c != 0.0) {
      if (sign == 0.0) {
        sign = c > 0 ? 1.0 : -1.0;
      } else if ((c > 0 ? 1.0 : -1.0) != sign) {
        return false;
      }
    }
  }
  return true;
}

double point_triangle_distance_sq(double px, double py, const double* tri) {
  double best = std::numeric_limits<double>::infinity();
  for (int e = 0; e < 3; ++e) {
    const int a = e, b = (e + 1) % 3;
    best = std::min(best, segment_distance_sq(px, py, tri[2 * a], tri[2 * a + 1], tri[2 * b],
                                              tri[2 * b + 1], nullptr));
  }
  return best;
}

}  // namespace detail

}  // namespace mvtn
