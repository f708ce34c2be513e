#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mvtn/mesh.hpp"
#include "mvtn/neural.hpp"
#include "mvtn/training.hpp"

namespace mvtn {

enum class Split { Train, Test };

struct LabeledShape {
  int id = 0;
  std::string name;
  TriangleMesh mesh;  // normalized before use
  int class_id = 0;
  Split split = Split::Train;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<LabeledShape> shapes;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::vector<int> indices(Split split) const;
};

enum class PrimitiveKind { Box, Sphere, Cylinder, Cone, Torus };

struct Range {
  double lo = 0, hi = 1;
};

struct ClassSpec {
  std::string name;
  PrimitiveKind kind = PrimitiveKind::Box;
  Range param_a{0.5, 1.0};  // kind-specific: aspect / radius / tube ratio
  Range param_b{0.5, 1.0};
  int tessellation = 12;    // segments (cylinder/cone/torus) or subdivisions (sphere)
};

enum class ShapeRotationMode { None, YOnly, AnyAxis };

struct SyntheticSpec {
  std::vector<ClassSpec> classes;
  int train_per_class = 40;
  int test_per_class = 20;
  std::uint64_t seed = 7;
  ShapeRotationMode rotation = ShapeRotationMode::None;
  int face_cap = 2000;
  bool self_check = true;

  void validate() const;
};

// Primitive builders (unnormalized; generate_synthetic normalizes).
TriangleMesh make_box(double sx, double sy, double sz);
TriangleMesh make_icosphere(int subdivisions, double sx, double sy, double sz);
TriangleMesh make_cylinder(int segments, double radius, double height);
TriangleMesh make_cone(int segments, double radius, double height);
TriangleMesh make_torus(int rings, int segments, double major, double minor);

// Deterministic per (spec, seed). The self-check renders one canonical
// exemplar per class with the circular 4-view config and rejects specs whose
// hard silhouettes differ by less than 5% of pixels.
Dataset generate_synthetic(const SyntheticSpec& spec);

// The 5-class desk benchmark used by the trend experiments and the CLI default.
SyntheticSpec standard_benchmark_spec(int train_per_class = 40, int test_per_class = 20,
                                      std::uint64_t seed = 7);
SyntheticSpec overfit_spec(int classes = 4, int per_class = 5, std::uint64_t seed = 3);

struct RejectionRecord {
  std::string file;
  std::string reason;
};

struct ImportReport {
  std::vector<RejectionRecord> rejected;
  int accepted = 0;
};

// ModelNet-style layout: root/<class>/{train,test}/*.off. Per-file load errors
// are collected in the report, not fatal. Empty class list = discover.
Dataset import_modelnet_off(const std::string& root, std::vector<std::string> class_names,
                            int face_cap, ImportReport* report);

// Dataset directory: one OFF file per shape plus manifest.json.
void save_dataset(const Dataset& dataset, const std::string& directory);
Dataset load_dataset(const std::string& directory);

// Checkpoint container: JSON header + raw little-endian float64 blocks + checksum.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace mvtn
