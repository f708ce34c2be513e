#include "mvtn/mesh.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

#include "mvtn/error.hpp"
#include "mvtn/rng.hpp"

namespace mvtn {

namespace {

// Whitespace/comment-skipping tokenizer over the raw bytes. '#' comments run
// to end of line (both OFF and OBJ allow them).
class Tokenizer {
 public:
  explicit Tokenizer(std::string_view bytes) : bytes_(bytes) {}

  bool next(std::string_view& token) {
    skip_separators();
    if (pos_ >= bytes_.size()) return false;
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      ++pos_;
    }
    token = bytes_.substr(start, pos_ - start);
    return true;
  }

  bool next_on_line(std::string_view& token) {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '\n' || c == '#') return false;
      if (!std::isspace(static_cast<unsigned char>(c))) break;
      ++pos_;
    }
    if (pos_ >= bytes_.size()) return false;
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      ++pos_;
    }
    token = bytes_.substr(start, pos_ - start);
    return true;
  }

  void skip_line() {
    while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
  }

 private:
  void skip_separators() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        skip_line();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

double parse_double(std::string_view token, const char* what) {
  double value = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    fail(ErrorCode::MalformedHeader,
         std::string("expected number for ") + what + ", got '" + std::string(token) + "'");
  }
  if (!std::isfinite(value)) {
    fail(ErrorCode::NonFiniteCoordinate, std::string(what) + " is not finite");
  }
  return value;
}

long parse_long(std::string_view token, const char* what) {
  long value = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    fail(ErrorCode::MalformedHeader,
         std::string("expected integer for ") + what + ", got '" + std::string(token) + "'");
  }
  return value;
}

void append_fan(TriangleMesh& mesh, const std::vector<int>& polygon, int face_cap) {
  for (std::size_t k = 1; k + 1 < polygon.size(); ++k) {
    if (static_cast<int>(mesh.faces.size()) >= face_cap) {
      fail(ErrorCode::FaceCountExceedsCap,
           "triangulated face count exceeds cap of " + std::to_string(face_cap));
    }
    mesh.faces.push_back({polygon[0], polygon[k], polygon[k + 1]});
  }
}

void check_face_indices(const TriangleMesh& mesh) {
  const int vertex_count = static_cast<int>(mesh.vertices.size());
  for (const auto& face : mesh.faces) {
    for (int idx : face) {
      if (idx < 0 || idx >= vertex_count) {
        fail(ErrorCode::IndexOutOfRange,
             "face index " + std::to_string(idx) + " on a mesh with " +
                 std::to_string(vertex_count) + " vertices");
      }
    }
  }
}

}  // namespace

void TriangleMesh::refresh_derived() {
  normals_.resize(faces.size());
  areas_.resize(faces.size());
  total_area_ = 0;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Vec3& a = vertices[faces[f][0]];
    const Vec3& b = vertices[faces[f][1]];
    const Vec3& c = vertices[faces[f][2]];
    const Vec3 n = cross(b - a, c - a);
    const double len = n.norm();
    areas_[f] = 0.5 * len;
    normals_[f] = len > 1e-14 ? n / len : Vec3{0, 0, 0};
    total_area_ += areas_[f];
  }
}

Vec3 TriangleMesh::centroid() const {
  Vec3 sum{};
  for (const Vec3& v : vertices) sum += v;
  return sum / static_cast<double>(vertices.size());
}

double TriangleMesh::max_vertex_norm() const {
  double m = 0;
  for (const Vec3& v : vertices) m = std::max(m, v.norm());
  return m;
}

TriangleMesh load_off(std::string_view bytes, int face_cap) {
  Tokenizer tok(bytes);
  std::string_view token;
  if (!tok.next(token)) fail(ErrorCode::MalformedHeader, "empty OFF input");

  long vertex_count = 0;
  // ModelNet has files with the counts glued to the magic ("OFF492 ...").
  if (token == "OFF") {
    if (!tok.next(token)) fail(ErrorCode::MalformedHeader, "missing OFF counts");
    vertex_count = parse_long(token, "vertex count");
  } else if (token.substr(0, 3) == "OFF" && token.size() > 3) {
    vertex_count = parse_long(token.substr(3), "vertex count");
  } else {
    fail(ErrorCode::MalformedHeader, "input does not start with OFF");
  }

  if (!tok.next(token)) fail(ErrorCode::MalformedHeader, "missing face count");
  const long face_count = parse_long(token, "face count");
  if (!tok.next(token)) fail(ErrorCode::MalformedHeader, "missing edge count");
  parse_long(token, "edge count");

  if (vertex_count < 0 || face_count < 0) {
    fail(ErrorCode::MalformedHeader, "negative counts in OFF header");
  }

  TriangleMesh mesh;
  mesh.vertices.reserve(static_cast<std::size_t>(vertex_count));
  for (long i = 0; i < vertex_count; ++i) {
    Vec3 v;
    for (double* coord : {&v.x, &v.y, &v.z}) {
      if (!tok.next(token)) fail(ErrorCode::MalformedHeader, "truncated vertex list");
      *coord = parse_double(token, "vertex coordinate");
    }
    mesh.vertices.push_back(v);
  }

  std::vector<int> polygon;
  for (long f = 0; f < face_count; ++f) {
    if (!tok.next(token)) fail(ErrorCode::MalformedHeader, "truncated face list");
    const long arity = parse_long(token, "face vertex count");
    if (arity < 3) fail(ErrorCode::MalformedHeader, "face with fewer than 3 vertices");
    polygon.clear();
    for (long k = 0; k < arity; ++k) {
      if (!tok.next(token)) fail(ErrorCode::MalformedHeader, "truncated face record");
      polygon.push_back(static_cast<int>(parse_long(token, "face index")));
    }
    append_fan(mesh, polygon, face_cap);
  }

  check_face_indices(mesh);
  mesh.refresh_derived();
  return mesh;
}

TriangleMesh load_obj(std::string_view bytes, int face_cap) {
  Tokenizer tok(bytes);
  std::string_view token;
  TriangleMesh mesh;
  std::vector<int> polygon;

  while (tok.next(token)) {
    if (token == "v") {
      Vec3 v;
      for (double* coord : {&v.x, &v.y, &v.z}) {
        if (!tok.next_on_line(token)) fail(ErrorCode::MalformedHeader, "truncated OBJ vertex");
        *coord = parse_double(token, "vertex coordinate");
      }
      mesh.vertices.push_back(v);
      tok.skip_line();  // ignore optional w / color components
    } else if (token == "f") {
      polygon.clear();
      while (tok.next_on_line(token)) {
        // "f v", "f v/vt", "f v/vt/vn", "f v//vn" — the vertex index leads.
        const std::size_t slash = token.find('/');
        const std::string_view head = slash == std::string_view::npos ? token : token.substr(0, slash);
        long idx = parse_long(head, "face index");
        if (idx < 0) idx = static_cast<long>(mesh.vertices.size()) + idx;  // negative = relative
        else idx -= 1;                                                     // OBJ is 1-based
        polygon.push_back(static_cast<int>(idx));
      }
      if (polygon.size() < 3) fail(ErrorCode::MalformedHeader, "OBJ face with fewer than 3 vertices");
      append_fan(mesh, polygon, face_cap);
    } else {
      tok.skip_line();  // vn / vt / usemtl / o / g / s / mtllib ...
    }
  }

  check_face_indices(mesh);
  mesh.refresh_derived();
  return mesh;
}

std::string write_off(const TriangleMesh& mesh) {
  std::ostringstream os;
  os.precision(17);
  os << "OFF\n" << mesh.vertices.size() << ' ' << mesh.faces.size() << " 0\n";
  for (const Vec3& v : mesh.vertices) {
    os << v.x << ' ' << v.y << ' ' << v.z << '\n';
  }
  for (const auto& f : mesh.faces) {
    os << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  }
  return os.str();
}

TriangleMesh normalize_unit(const TriangleMesh& mesh) {
  if (mesh.vertices.empty()) fail(ErrorCode::DegenerateMesh, "mesh has no vertices");
  TriangleMesh out = mesh;
  const Vec3 c = mesh.centroid();
  double radius = 0;
  for (Vec3& v : out.vertices) {
    v = v - c;
    radius = std::max(radius, v.norm());
  }
  if (radius < 1e-12) fail(ErrorCode::DegenerateMesh, "all vertices coincide");
  const double inv = 1.0 / radius;
  for (Vec3& v : out.vertices) v = v * inv;
  out.refresh_derived();
  return out;
}

PointCloud sample_points(const TriangleMesh& mesh, int point_count, std::uint64_t seed) {
  if (point_count < 1) fail(ErrorCode::InvalidRange, "point count must be >= 1");
  if (mesh.total_area() <= 0) fail(ErrorCode::DegenerateMesh, "mesh has zero surface area");

  // Cumulative areas; zero-area faces get zero weight.
  std::vector<double> cumulative(mesh.faces.size());
  double acc = 0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    acc += mesh.face_areas()[f];
    cumulative[f] = acc;
  }

  Rng rng(seed);
  PointCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(point_count));
  for (int i = 0; i < point_count; ++i) {
    const double u = rng.uniform() * acc;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    const std::size_t f = std::min<std::size_t>(
        static_cast<std::size_t>(it - cumulative.begin()), mesh.faces.size() - 1);
    const Vec3& a = mesh.vertices[mesh.faces[f][0]];
    const Vec3& b = mesh.vertices[mesh.faces[f][1]];
    const Vec3& c = mesh.vertices[mesh.faces[f][2]];
    // Uniform barycentric via the sqrt trick.
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    const double wa = 1.0 - r1;
    const double wb = r1 * (1.0 - r2);
    const double wc = r1 * r2;
    cloud.points.push_back(a * wa + b * wb + c * wc);
  }
  return cloud;
}

Mat3 rotation_matrix(const RigidRotation& rotation) {
  const double axis_norm = rotation.axis.norm();
  if (std::abs(axis_norm - 1.0) > 1e-9) {
    fail(ErrorCode::InvalidRange, "rotation axis must be unit length");
  }
  const Vec3 u = rotation.axis;
  const double t = rotation.angle_deg * kDegToRad;
  const double c = std::cos(t);
  const double s = std::sin(t);
  const double ic = 1.0 - c;
  // Rodrigues, right-handed: counter-clockwise positive viewed from +axis.
  Mat3 r;
  r(0, 0) = c + u.x * u.x * ic;
  r(0, 1) = u.x * u.y * ic - u.z * s;
  r(0, 2) = u.x * u.z * ic + u.y * s;
  r(1, 0) = u.y * u.x * ic + u.z * s;
  r(1, 1) = c + u.y * u.y * ic;
  r(1, 2) = u.y * u.z * ic - u.x * s;
  r(2, 0) = u.z * u.x * ic - u.y * s;
  r(2, 1) = u.z * u.y * ic + u.x * s;
  r(2, 2) = c + u.z * u.z * ic;
  return r;
}

TriangleMesh rotate(const TriangleMesh& mesh, const RigidRotation& rotation) {
  const Mat3 r = rotation_matrix(rotation);
  TriangleMesh out = mesh;
  for (Vec3& v : out.vertices) v = r * v;
  out.refresh_derived();
  return out;
}

PointCloud rotate(const PointCloud& cloud, const RigidRotation& rotation) {
  const Mat3 r = rotation_matrix(rotation);
  PointCloud out;
  out.points.reserve(cloud.points.size());
  for (const Vec3& p : cloud.points) out.points.push_back(r * p);
  return out;
}

RigidRotation random_rotation(std::uint64_t seed, RotationMode mode, double max_angle_deg) {
  if (!(max_angle_deg > 0.0) || max_angle_deg > 180.0) {
    fail(ErrorCode::InvalidRange, "max angle must lie in (0, 180]");
  }
  Rng rng(seed);
  RigidRotation rotation;
  if (mode == RotationMode::YOnly) {
    rotation.axis = {0, 1, 0};
    rotation.angle_deg = rng.uniform(-max_angle_deg, max_angle_deg);
  } else {
    // Uniform direction: z uniform in [-1,1], azimuth uniform in [0, 2pi).
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * kPi);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    rotation.axis = {r * std::cos(phi), z, r * std::sin(phi)};
    rotation.angle_deg = rng.uniform(-180.0, 180.0);
  }
  return rotation;
}

}  // namespace mvtn
