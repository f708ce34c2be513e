#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mvtn/vec3.hpp"

namespace mvtn {

class TriangleMesh {
 public:
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;

  // Unit face normals; zero vector for degenerate (zero-area) faces.
  // Rebuilt by refresh_derived(); loaders and transforms keep it current.
  const std::vector<Vec3>& face_normals() const { return normals_; }
  const std::vector<double>& face_areas() const { return areas_; }
  double total_area() const { return total_area_; }

  void refresh_derived();

  Vec3 centroid() const;
  double max_vertex_norm() const;

 private:
  std::vector<Vec3> normals_;
  std::vector<double> areas_;
  double total_area_ = 0;
};

struct PointCloud {
  std::vector<Vec3> points;
};

struct RigidRotation {
  Vec3 axis{0, 1, 0};  // unit vector
  double angle_deg = 0;
};

enum class RotationMode { YOnly, AnyAxis };

// Parsers accept the raw file bytes. Polygonal faces are fan-triangulated.
TriangleMesh load_off(std::string_view bytes, int face_cap = 2000);
TriangleMesh load_obj(std::string_view bytes, int face_cap = 2000);

std::string write_off(const TriangleMesh& mesh);

// Centroid to origin, max vertex norm scaled to exactly 1.
TriangleMesh normalize_unit(const TriangleMesh& mesh);

// Area-proportional surface sampling with uniform barycentric coordinates.
PointCloud sample_points(const TriangleMesh& mesh, int point_count,
                         std::uint64_t seed);

Mat3 rotation_matrix(const RigidRotation& rotation);
TriangleMesh rotate(const TriangleMesh& mesh, const RigidRotation& rotation);
PointCloud rotate(const PointCloud& cloud, const RigidRotation& rotation);

RigidRotation random_rotation(std::uint64_t seed, RotationMode mode,
                              double max_angle_deg);

}  // namespace mvtn
