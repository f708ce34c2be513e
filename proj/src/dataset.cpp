#include "mvtn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "mvtn/error.hpp"
#include "mvtn/rng.hpp"
#include "mvtn/serialize.hpp"

namespace fs = std::filesystem;

namespace mvtn {

std::vector<int> Dataset::indices(Split split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (shapes[i].split == split) out.push_back(static_cast<int>(i));
  }
  return out;
}

void SyntheticSpec::validate() const {
  if (classes.empty()) fail(ErrorCode::SpecInvalid, "no classes in spec");
  if (train_per_class < 1 || test_per_class < 0) {
    fail(ErrorCode::SpecInvalid, "per-class counts must be positive");
  }
  std::set<std::string> names;
  for (const ClassSpec& c : classes) {
    if (c.name.empty()) fail(ErrorCode::SpecInvalid, "class without a name");
    if (!names.insert(c.name).second) fail(ErrorCode::SpecInvalid, "duplicate class " + c.name);
    if (!(c.param_a.lo <= c.param_a.hi) || !(c.param_b.lo <= c.param_b.hi)) {
      fail(ErrorCode::SpecInvalid, "empty parameter range in class " + c.name);
    }
    if (c.tessellation < 3) fail(ErrorCode::SpecInvalid, "tessellation too low in " + c.name);
  }
}

// --- primitives ---------------------------------------------------------------

TriangleMesh make_box(double sx, double sy, double sz) {
  TriangleMesh mesh;
  for (int corner = 0; corner < 8; ++corner) {
    mesh.vertices.push_back({(corner & 1 ? sx : -sx), (corner & 2 ? sy : -sy),
                             (corner & 4 ? sz : -sz)});
  }
  const int quads[6][4] = {{0, 1, 3, 2}, {4, 6, 7, 5}, {0, 4, 5, 1},
                           {2, 3, 7, 6}, {0, 2, 6, 4}, {1, 5, 7, 3}};
  for (const auto& q : quads) {
    mesh.faces.push_back({q[0], q[1], q[2]});
    mesh.faces.push_back({q[0], q[2], q[3]});
  }
  mesh.refresh_derived();
  return mesh;
}

TriangleMesh make_icosphere(int subdivisions, double sx, double sy, double sz) {
  // Icosahedron seed.
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},
      {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},   {3, 4, 2},
      {3, 2, 6},  {3, 6, 8},  {3, 8, 9},   {4, 9, 5},  {2, 4, 11},  {6, 2, 10},
      {8, 6, 7},  {9, 8, 1}};
  for (Vec3& v : verts) v = normalized(v);

  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      verts.push_back(normalized((verts[a] + verts[b]) * 0.5));
      const int idx = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }

  TriangleMesh mesh;
  mesh.vertices.reserve(verts.size());
  for (const Vec3& v : verts) mesh.vertices.push_back({v.x * sx, v.y * sy, v.z * sz});
  mesh.faces = std::move(faces);
  mesh.refresh_derived();
  return mesh;
}

namespace {

// Shared cap/disc helper: ring of vertices at a given height.
std::vector<int> add_ring(TriangleMesh& mesh, int segments, double radius, double y) {
  std::vector<int> ring;
  ring.reserve(segments);
  for (int s = 0; s < segments; ++s) {
    const double a = 2.0 * kPi * s / segments;
    ring.push_back(static_cast<int>(mesh.vertices.size()));
    mesh.vertices.push_back({radius * std::cos(a), y, radius * std::sin(a)});
  }
  return ring;
}

void add_disc(TriangleMesh& mesh, const std::vector<int>& ring, int center, bool up) {
  const int n = static_cast<int>(ring.size());
  for (int s = 0; s < n; ++s) {
    const int a = ring[s], b = ring[(s + 1) % n];
    if (up) {
      mesh.faces.push_back({center, b, a});
    } else {
      mesh.faces.push_back({center, a, b});
    }
  }
}

}  // namespace

TriangleMesh make_cylinder(int segments, double radius, double height) {
  TriangleMesh mesh;
  const double h = height / 2.0;
  const auto bottom = add_ring(mesh, segments, radius, -h);
  const auto top = add_ring(mesh, segments, radius, h);
  for (int s = 0; s < segments; ++s) {
    const int b0 = bottom[s], b1 = bottom[(s + 1) % segments];
    const int t0 = top[s], t1 = top[(s + 1) % segments];
    mesh.faces.push_back({b0, b1, t1});
    mesh.faces.push_back({b0, t1, t0});
  }
  const int cb = static_cast<int>(mesh.vertices.size());
  mesh.vertices.push_back({0, -h, 0});
  const int ct = static_cast<int>(mesh.vertices.size());
  mesh.vertices.push_back({0, h, 0});
  add_disc(mesh, bottom, cb, false);
  add_disc(mesh, top, ct, true);
  mesh.refresh_derived();
  return mesh;
}

TriangleMesh make_cone(int segments, double radius, double height) {
  TriangleMesh mesh;
  const double h = height / 2.0;
  const auto base = add_ring(mesh, segments, radius, -h);
  const int apex = static_cast<int>(mesh.vertices.size());
  mesh.vertices.push_back({0, h, 0});
  const int cb = static_cast<int>(mesh.vertices.size());
  mesh.vertices.push_back({0, -h, 0});
  for (int s = 0; s < segments; ++s) {
    mesh.faces.push_back({base[s], base[(s + 1) % segments], apex});
  }
  add_disc(mesh, base, cb, false);
  mesh.refresh_derived();
  return mesh;
}

TriangleMesh make_torus(int rings, int segments, double major, double minor) {
  TriangleMesh mesh;
  mesh.vertices.reserve(static_cast<std::size_t>(rings) * segments);
  for (int r = 0; r < rings; ++r) {
    const double u = 2.0 * kPi * r / rings;
    for (int s = 0; s < segments; ++s) {
      const double v = 2.0 * kPi * s / segments;
      const double w = major + minor * std::cos(v);
      mesh.vertices.push_back({w * std::cos(u), minor * std::sin(v), w * std::sin(u)});
    }
  }
  auto vid = [&](int r, int s) { return (r % rings) * segments + (s % segments); };
  for (int r = 0; r < rings; ++r) {
    for (int s = 0; s < segments; ++s) {
      const int a = vid(r, s), b = vid(r + 1, s), c = vid(r + 1, s + 1), d = vid(r, s + 1);
      mesh.faces.push_back({a, b, c});
      mesh.faces.push_back({a, c, d});
    }
  }
  mesh.refresh_derived();
  return mesh;
}

// --- synthetic dataset ---------------------------------------------------------

namespace {

TriangleMesh build_primitive(const ClassSpec& spec, double a, double b) {
  switch (spec.kind) {
    case PrimitiveKind::Box:
      return make_box(a, b, 1.0);
    case PrimitiveKind::Sphere: {
      // Tessellation <= 6 keeps icospheres at 1 subdivision (80 faces).
      const int subdiv = spec.tessellation > 6 ? 2 : 1;
      return make_icosphere(subdiv, 1.0, a, b);
    }
    case PrimitiveKind::Cylinder:
      return make_cylinder(spec.tessellation, a, 2.0 * b);
    case PrimitiveKind::Cone:
      return make_cone(spec.tessellation, a, 2.0 * b);
    case PrimitiveKind::Torus: {
      const int rings = spec.tessellation;
      const int segments = std::max(3, spec.tessellation * 2 / 3);
      return make_torus(rings, segments, 1.0, a);
    }
  }
  fail(ErrorCode::SpecInvalid, "unknown primitive kind");
}

double midpoint(const Range& r) { return 0.5 * (r.lo + r.hi); }

void self_check_silhouettes(const SyntheticSpec& spec) {
  RenderSettings settings;
  settings.image_height = 32;
  settings.image_width = 32;
  const SceneParams views = circular_config(4);
  std::vector<std::vector<Image>> renders;
  for (const ClassSpec& c : spec.classes) {
    TriangleMesh exemplar =
        normalize_unit(build_primitive(c, midpoint(c.param_a), midpoint(c.param_b)));
    std::vector<Image> images;
    for (int v = 0; v < views.view_count(); ++v) {
      images.push_back(hard_silhouette(exemplar, views.pose(v), settings));
    }
    renders.push_back(std::move(images));
  }
  const double total = 4.0 * 32 * 32;
  for (std::size_t i = 0; i < renders.size(); ++i) {
    for (std::size_t j = i + 1; j < renders.size(); ++j) {
      double differing = 0;
      for (int v = 0; v < 4; ++v) {
        for (std::size_t p = 0; p < renders[i][v].data.size(); ++p) {
          if (renders[i][v].data[p] != renders[j][v].data[p]) differing += 1;
        }
      }
      if (differing / total < 0.05) {
        fail(ErrorCode::SilhouetteCollision,
             "classes '" + spec.classes[i].name + "' and '" + spec.classes[j].name +
                 "' differ by less than 5% of silhouette pixels");
      }
    }
  }
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  if (spec.self_check) self_check_silhouettes(spec);

  Dataset dataset;
  for (const ClassSpec& c : spec.classes) dataset.class_names.push_back(c.name);

  int next_id = 0;
  for (std::size_t ci = 0; ci < spec.classes.size(); ++ci) {
    const ClassSpec& c = spec.classes[ci];
    const int total = spec.train_per_class + spec.test_per_class;
    for (int i = 0; i < total; ++i) {
      Rng rng(derive_seed(spec.seed, ci, static_cast<std::uint64_t>(i)));
      const double a = rng.uniform(c.param_a.lo, c.param_a.hi);
      const double b = rng.uniform(c.param_b.lo, c.param_b.hi);
      TriangleMesh mesh = normalize_unit(build_primitive(c, a, b));
      if (static_cast<int>(mesh.faces.size()) > spec.face_cap) {
        fail(ErrorCode::FaceCountExceedsCap,
             "class " + c.name + " exceeds the face cap at its tessellation");
      }
      if (spec.rotation != ShapeRotationMode::None) {
        const RotationMode mode = spec.rotation == ShapeRotationMode::YOnly
                                      ? RotationMode::YOnly
                                      : RotationMode::AnyAxis;
        mesh = rotate(mesh, random_rotation(derive_seed(spec.seed, ci, i, 0x52), mode, 180.0));
      }
      LabeledShape shape;
      shape.id = next_id++;
      shape.name = c.name + "_" + std::to_string(i);
      shape.mesh = std::move(mesh);
      shape.class_id = static_cast<int>(ci);
      shape.split = i < spec.train_per_class ? Split::Train : Split::Test;
      dataset.shapes.push_back(std::move(shape));
    }
  }
  return dataset;
}

SyntheticSpec standard_benchmark_spec(int train_per_class, int test_per_class,
                                      std::uint64_t seed) {
  SyntheticSpec spec;
  spec.train_per_class = train_per_class;
  spec.test_per_class = test_per_class;
  spec.seed = seed;
  spec.classes = {
      {"box", PrimitiveKind::Box, {0.35, 0.6}, {0.9, 1.1}, 12},
      {"sphere", PrimitiveKind::Sphere, {0.85, 1.1}, {0.85, 1.1}, 6},
      {"cylinder", PrimitiveKind::Cylinder, {0.28, 0.42}, {0.9, 1.2}, 14},
      {"cone", PrimitiveKind::Cone, {0.55, 0.8}, {0.9, 1.2}, 14},
      {"torus", PrimitiveKind::Torus, {0.22, 0.34}, {0.0, 1.0}, 12},
  };
  return spec;
}

SyntheticSpec overfit_spec(int classes, int per_class, std::uint64_t seed) {
  SyntheticSpec spec = standard_benchmark_spec(per_class, 0, seed);
  spec.classes.resize(std::min<std::size_t>(classes, spec.classes.size()));
  return spec;
}

// --- ModelNet-style import -----------------------------------------------------

Dataset import_modelnet_off(const std::string& root, std::vector<std::string> class_names,
                            int face_cap, ImportReport* report) {
  if (!fs::is_directory(root)) fail(ErrorCode::IoError, root + " is not a directory");
  if (class_names.empty()) {
    for (const auto& entry : fs::directory_iterator(root)) {
      if (entry.is_directory()) class_names.push_back(entry.path().filename().string());
    }
    std::sort(class_names.begin(), class_names.end());
    if (class_names.empty()) fail(ErrorCode::MissingClass, "no class directories in " + root);
  }

  Dataset dataset;
  dataset.class_names = class_names;
  int next_id = 0;
  for (std::size_t ci = 0; ci < class_names.size(); ++ci) {
    const fs::path class_dir = fs::path(root) / class_names[ci];
    if (!fs::is_directory(class_dir)) {
      fail(ErrorCode::MissingClass, "missing class directory " + class_dir.string());
    }
    for (const char* split_name : {"train", "test"}) {
      const fs::path split_dir = class_dir / split_name;
      if (!fs::is_directory(split_dir)) continue;
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(split_dir)) {
        if (entry.path().extension() == ".off") files.push_back(entry.path());
      }
      std::sort(files.begin(), files.end());
      for (const fs::path& file : files) {
        std::ifstream in(file, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        try {
          LabeledShape shape;
          shape.mesh = normalize_unit(load_off(bytes, face_cap));
          shape.id = next_id++;
          shape.name = file.stem().string();
          shape.class_id = static_cast<int>(ci);
          shape.split = std::string(split_name) == "train" ? Split::Train : Split::Test;
          dataset.shapes.push_back(std::move(shape));
          if (report) report->accepted += 1;
        } catch (const Error& e) {
          if (report) report->rejected.push_back({file.string(), e.what()});
        }
      }
    }
  }
  return dataset;
}

// --- dataset directory -----------------------------------------------------------

void save_dataset(const Dataset& dataset, const std::string& directory) {
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + directory);

  json shapes = json::array();
  for (const LabeledShape& shape : dataset.shapes) {
    const std::string file = shape.name + ".off";
    std::ofstream out(fs::path(directory) / file, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write " + file);
    out << write_off(shape.mesh);
    shapes.push_back(json{{"id", shape.id},
                          {"name", shape.name},
                          {"class_id", shape.class_id},
                          {"split", shape.split == Split::Train ? "train" : "test"},
                          {"file", file}});
  }
  json manifest{{"version", 1}, {"classes", dataset.class_names}, {"shapes", shapes}};
  std::ofstream out(fs::path(directory) / "manifest.json");
  if (!out) fail(ErrorCode::IoError, "cannot write manifest.json");
  out << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::string& directory) {
  std::ifstream in(fs::path(directory) / "manifest.json");
  if (!in) fail(ErrorCode::IoError, "cannot open " + directory + "/manifest.json");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptFile, std::string("manifest: ") + e.what());
  }
  Dataset dataset;
  dataset.class_names = manifest.at("classes").get<std::vector<std::string>>();
  for (const json& sj : manifest.at("shapes")) {
    LabeledShape shape;
    shape.id = sj.at("id").get<int>();
    shape.name = sj.at("name").get<std::string>();
    shape.class_id = sj.at("class_id").get<int>();
    shape.split = sj.at("split").get<std::string>() == "train" ? Split::Train : Split::Test;
    const fs::path file = fs::path(directory) / sj.at("file").get<std::string>();
    std::ifstream mesh_in(file, std::ios::binary);
    if (!mesh_in) fail(ErrorCode::IoError, "cannot open " + file.string());
    std::string bytes((std::istreambuf_iterator<char>(mesh_in)), std::istreambuf_iterator<char>());
    shape.mesh = load_off(bytes, std::numeric_limits<int>::max());
    if (shape.class_id < 0 || shape.class_id >= dataset.num_classes()) {
      fail(ErrorCode::CorruptFile, "shape class out of range in manifest");
    }
    dataset.shapes.push_back(std::move(shape));
  }
  return dataset;
}

// --- checkpoint container --------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'V', 'T', 'N', 'C', 'K', 'P', 'T'};
constexpr int kCheckpointVersion = 1;

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  append_u64(out, bits);  // little-endian on the wire
}

std::uint32_t read_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

double read_f64(const std::uint8_t* p) {
  const std::uint64_t bits = read_u64(p);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

json store_to_header(const ParameterStore& store) {
  json arrays = json::array();
  for (const ParamArray& a : store.arrays) {
    arrays.push_back(json{{"name", a.name}, {"shape", a.shape}, {"count", a.data.size()}});
  }
  return arrays;
}

json adam_to_header(const AdamState& state) {
  std::vector<std::size_t> counts;
  for (const auto& m : state.m) counts.push_back(m.size());
  return json{{"step", state.step}, {"counts", counts}};
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  const ParameterStore* stores[] = {&ckpt.point_encoder, &ckpt.regressor, &ckpt.backbone,
                                    &ckpt.classifier, &ckpt.fusion_encoder};
  const char* store_names[] = {"point_encoder", "regressor", "backbone", "classifier",
                               "fusion_encoder"};

  json header{
      {"format_version", kCheckpointVersion},
      {"config", train_config_to_json(ckpt.config)},
      {"num_classes", ckpt.num_classes},
      {"trained_epochs", ckpt.trained_epochs},
      {"u0", scene_params_to_json(ckpt.u0)},
      {"history", metrics_history_to_json(ckpt.history)},
      {"rng_state", ckpt.rng_state},
      {"optimizer", {{"mvtn", adam_to_header(ckpt.opt_mvtn)}, {"main", adam_to_header(ckpt.opt_main)}}},
  };
  json stores_json = json::object();
  for (int s = 0; s < 5; ++s) stores_json[store_names[s]] = store_to_header(*stores[s]);
  header["stores"] = stores_json;

  const std::string header_text = header.dump();

  std::vector<std::uint8_t> payload;
  for (const ParameterStore* store : stores) {
    for (const ParamArray& a : store->arrays) {
      for (double v : a.data) append_f64(payload, v);
    }
  }
  for (const AdamState* state : {&ckpt.opt_mvtn, &ckpt.opt_main}) {
    for (const auto& m : state->m) {
      for (double v : m) append_f64(payload, v);
    }
    for (const auto& v_arr : state->v) {
      for (double v : v_arr) append_f64(payload, v);
    }
  }

  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 + header_text.size() + payload.size() + 8);
  out.insert(out.end(), kMagic, kMagic + 8);
  append_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out.insert(out.end(), header_text.begin(), header_text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  append_u64(out, fnv1a(payload.data(), payload.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    fail(ErrorCode::CorruptFile, "bad checkpoint magic");
  }
  const std::uint32_t header_len = read_u32(bytes.data() + 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(header_len) + 8) {
    fail(ErrorCode::CorruptFile, "checkpoint truncated in header");
  }
  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptFile, std::string("checkpoint header: ") + e.what());
  }
  const int version = header.at("format_version").get<int>();
  if (version != kCheckpointVersion) {
    fail(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) +
                                         ", this build reads version " +
                                         std::to_string(kCheckpointVersion));
  }

  Checkpoint ckpt;
  ckpt.config = train_config_from_json(header.at("config"), /*strict=*/false);
  ckpt.num_classes = header.at("num_classes").get<int>();
  ckpt.trained_epochs = header.at("trained_epochs").get<int>();
  ckpt.u0 = scene_params_from_json(header.at("u0"));
  ckpt.history = metrics_history_from_json(header.at("history"));
  ckpt.rng_state = header.at("rng_state").get<std::string>();

  ParameterStore* stores[] = {&ckpt.point_encoder, &ckpt.regressor, &ckpt.backbone,
                              &ckpt.classifier, &ckpt.fusion_encoder};
  const char* store_names[] = {"point_encoder", "regressor", "backbone", "classifier",
                               "fusion_encoder"};

  const std::uint8_t* cursor = bytes.data() + 12 + header_len;
  const std::uint8_t* payload_begin = cursor;
  const std::uint8_t* end = bytes.data() + bytes.size() - 8;
  auto take_array = [&cursor, end](std::size_t count, std::vector<double>& out) {
    if (cursor + count * 8 > end) fail(ErrorCode::CorruptFile, "checkpoint truncated in payload");
    out.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      out[i] = read_f64(cursor);
      cursor += 8;
    }
  };

  for (int s = 0; s < 5; ++s) {
    for (const json& aj : header.at("stores").at(store_names[s])) {
      ParamArray array;
      array.name = aj.at("name").get<std::string>();
      array.shape = aj.at("shape").get<std::vector<int>>();
      take_array(aj.at("count").get<std::size_t>(), array.data);
      stores[s]->arrays.push_back(std::move(array));
    }
  }
  AdamState* states[] = {&ckpt.opt_mvtn, &ckpt.opt_main};
  const char* state_names[] = {"mvtn", "main"};
  for (int s = 0; s < 2; ++s) {
    const json& sj = header.at("optimizer").at(state_names[s]);
    states[s]->step = sj.at("step").get<std::int64_t>();
    const auto counts = sj.at("counts").get<std::vector<std::size_t>>();
    states[s]->m.resize(counts.size());
    states[s]->v.resize(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) take_array(counts[i], states[s]->m[i]);
    for (std::size_t i = 0; i < counts.size(); ++i) take_array(counts[i], states[s]->v[i]);
  }

  if (cursor != end) fail(ErrorCode::CorruptFile, "checkpoint payload length mismatch");
  const std::uint64_t expected = read_u64(end);
  const std::uint64_t actual = fnv1a(payload_begin, static_cast<std::size_t>(end - payload_begin));
  if (expected != actual) fail(ErrorCode::CorruptFile, "checkpoint checksum mismatch");
  return ckpt;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace mvtn
