#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvtn/mesh.hpp"

namespace mvtn {

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;

  bool passed() const { return max_rel_error < tolerance; }
};

// Built-in fixtures: analytic primitives, renderer pose gradients on small
// meshes, and end-to-end pipeline gradients into the encoder and regressor.
std::vector<GradcheckResult> run_gradcheck_fixtures();

// Randomized perturbed-icosahedron mesh (20 faces) for renderer checks.
TriangleMesh random_blob_mesh(std::uint64_t seed);

// d(sum of pixels)/d(azimuth, elevation) vs central differences (eps in
// degrees) on a 16x16 render; returns the max relative error.
double renderer_pose_gradcheck(const TriangleMesh& mesh, double azimuth_deg,
                               double elevation_deg, double eps_deg = 1e-4,
                               int image_size = 16);

// Full offset pipeline gradient w.r.t. `coords` randomly chosen coordinates of
// theta_G and theta_H (half each); returns the max relative error.
double pipeline_theta_gradcheck(std::uint64_t seed, int coords = 10, double eps = 1e-5);

}  // namespace mvtn
