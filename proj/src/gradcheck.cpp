#include "mvtn/gradcheck.hpp"

#include <cmath>

#include "mvtn/autodiff.hpp"
#include "mvtn/camera.hpp"
#include "mvtn/dataset.hpp"
#include "mvtn/neural.hpp"
#include "mvtn/renderer.hpp"
#include "mvtn/rng.hpp"

namespace mvtn {

namespace {

using ad::Tape;
using ad::TensorView;
using ad::Var;

// Parameter store bound as constants except for chosen coordinates, which are
// replaced by externally created leaves; lets finite_diff_check perturb a
// handful of weights without rebuilding the whole store as leaves.
struct CoordOverride {
  int array = 0;
  int index = 0;
};

StoreVars bind_with_overrides(Tape& tape, const ParameterStore& store,
                              std::span<const CoordOverride> coords,
                              std::span<const Var> replacements) {
  StoreVars out;
  out.store = &store;
  out.vars.reserve(store.arrays.size());
  for (std::size_t a = 0; a < store.arrays.size(); ++a) {
    std::vector<Var> vars;
    vars.reserve(store.arrays[a].data.size());
    for (std::size_t i = 0; i < store.arrays[a].data.size(); ++i) {
      Var var = tape.constant(store.arrays[a].data[i]);
      for (std::size_t c = 0; c < coords.size(); ++c) {
        if (coords[c].array == static_cast<int>(a) && coords[c].index == static_cast<int>(i)) {
          var = replacements[c];
        }
      }
      vars.push_back(var);
    }
    out.vars.push_back(std::move(vars));
  }
  return out;
}

std::vector<CoordOverride> pick_coords(const ParameterStore& store, int count, Rng& rng) {
  std::vector<CoordOverride> coords;
  for (int c = 0; c < count; ++c) {
    for (;;) {
      const int a = static_cast<int>(rng.below(store.arrays.size()));
      if (store.arrays[a].data.empty()) continue;
      const int i = static_cast<int>(rng.below(store.arrays[a].data.size()));
      coords.push_back({a, i});
      break;
    }
  }
  return coords;
}

}  // namespace

TriangleMesh random_blob_mesh(std::uint64_t seed) {
  Rng rng(seed);
  TriangleMesh mesh = make_icosphere(0, 1.0, 1.0, 1.0);
  const Vec3 scale{rng.uniform(0.5, 1.1), rng.uniform(0.5, 1.1), rng.uniform(0.5, 1.1)};
  for (Vec3& v : mesh.vertices) {
    v = {v.x * scale.x + rng.uniform(-0.2, 0.2), v.y * scale.y + rng.uniform(-0.2, 0.2),
         v.z * scale.z + rng.uniform(-0.2, 0.2)};
  }
  mesh.refresh_derived();
  return normalize_unit(mesh);
}

double renderer_pose_gradcheck(const TriangleMesh& mesh, double azimuth_deg,
                               double elevation_deg, double eps_deg, int image_size) {
  RenderSettings settings;
  settings.image_height = image_size;
  settings.image_width = image_size;

  const auto fn = [&mesh, &settings](Tape& tape, std::span<const Var> pose) {
    RenderLight light;  // fixed to the camera, so the light moves with the pose
    auto views = render_views_ad(tape, mesh, std::span<const Var>(&pose[0], 1),
                                 std::span<const Var>(&pose[1], 1), tape.constant(2.2), settings,
                                 light);
    return ad::sum(views[0].pixels.elems);
  };
  const double params[2] = {azimuth_deg, elevation_deg};
  return ad::finite_diff_check(fn, params, eps_deg).max_rel_error;
}

double pipeline_theta_gradcheck(std::uint64_t seed, int coords, double eps) {
  Rng rng(seed);
  const TriangleMesh mesh = random_blob_mesh(derive_seed(seed, 1));
  const int views = 2, b = 16, d = 32, classes = 3, points = 64;
  const int label = 1;

  PointEncoderSpec h_spec;
  h_spec.point_mlp = {3, 8, 16};
  h_spec.head = {16, b};
  MlpSpec g_spec = mvtn_regressor_spec(views, b);
  ViewCnnSpec f_spec;
  f_spec.in_channels = 1;
  f_spec.feature_dim = d;
  f_spec.stages = {{8, 3, 1, 2}, {16, 3, 1, 1}};
  MlpSpec c_spec = classifier_spec(d, classes);

  ParameterStore h_store = init_point_encoder_params(h_spec, derive_seed(seed, 2));
  ParameterStore g_store = init_mlp_params(g_spec, derive_seed(seed, 3));
  ParameterStore f_store = init_view_cnn_params(f_spec, derive_seed(seed, 4));
  ParameterStore c_store = init_mlp_params(c_spec, derive_seed(seed, 5));

  // A zero final layer would hide regressor gradients behind tanh(0); give it
  // small nonzero weights so the check exercises a generic operating point.
  {
    ParamArray& final_w = g_store.find("layer4.weight");
    Rng wrng(derive_seed(seed, 6));
    for (double& w : final_w.data) w = wrng.uniform(-0.05, 0.05);
  }

  const SceneParams u0 = circular_config(views, 30.0, 2.2);
  const ParamBounds bounds = default_bounds(MvtnVariant::Offset, views);
  const PointCloud cloud = sample_points(mesh, points, derive_seed(seed, 7));

  RenderSettings settings;
  settings.image_height = 16;
  settings.image_width = 16;

  const int half = coords / 2;
  std::vector<CoordOverride> g_coords = pick_coords(g_store, half, rng);
  std::vector<CoordOverride> h_coords = pick_coords(h_store, coords - half, rng);

  std::vector<double> start;
  for (const CoordOverride& c : g_coords) start.push_back(g_store.arrays[c.array].data[c.index]);
  for (const CoordOverride& c : h_coords) start.push_back(h_store.arrays[c.array].data[c.index]);

  const auto fn = [&](Tape& tape, std::span<const Var> leaves) {
    StoreVars g_vars = bind_with_overrides(
        tape, g_store, g_coords, leaves.subspan(0, g_coords.size()));
    StoreVars h_vars = bind_with_overrides(
        tape, h_store, h_coords, leaves.subspan(g_coords.size(), h_coords.size()));
    StoreVars f_vars = make_store_constants(tape, f_store);
    StoreVars c_vars = make_store_constants(tape, c_store);

    TensorView features = point_encoder_forward(tape, h_spec, h_vars, cloud);
    TensorView raw = mvtn_forward(tape, g_spec, g_vars, u0, features, MvtnVariant::Offset);
    std::vector<Var> azim, elev;
    for (int i = 0; i < 2 * views; ++i) {
      const double bound = i < views ? bounds.azimuth_deg : bounds.elevation_deg;
      Var bounded = ad::add_const(ad::mul_const(ad::tanh(raw.elems[i]), bound), u0.values[i]);
      (i < views ? azim : elev).push_back(bounded);
    }
    RenderLight light;
    auto rendered = render_views_ad(tape, mesh, azim, elev, tape.constant(u0.distance),
                                    settings, light);
    std::vector<TensorView> feats;
    for (const RenderedView& view : rendered) {
      feats.push_back(view_cnn_forward(tape, f_spec, f_vars, view.pixels));
    }
    HeadOutput head = mvcnn_head_forward(tape, c_spec, c_vars, feats);
    return ad::softmax_cross_entropy(head.logits, label);
  };

  return ad::finite_diff_check(fn, start, eps).max_rel_error;
}

std::vector<GradcheckResult> run_gradcheck_fixtures() {
  std::vector<GradcheckResult> results;

  {
    const auto quadratic = [](Tape& tape, std::span<const Var> p) {
      (void)tape;
      Var acc = ad::mul(p[0], p[0]);
      for (std::size_t i = 1; i < p.size(); ++i) acc = ad::add(acc, ad::mul(p[i], p[i]));
      return acc;
    };
    const double params[8] = {0.3, -1.2, 2.0, 0.7, -0.4, 1.5, -2.2, 0.9};
    results.push_back(
        {"quadratic", ad::finite_diff_check(quadratic, params, 1e-5).max_rel_error, 1e-8});
  }

  {
    const auto composite = [](Tape& tape, std::span<const Var> p) {
      (void)tape;
      Var a = ad::tanh(ad::mul(p[0], p[1]));
      Var b = ad::sigmoid(ad::sub(p[2], p[0]));
      Var c = ad::log(ad::add_const(ad::mul(p[1], p[1]), 1.0));
      Var d = ad::atan2(p[2], ad::add_const(p[0], 3.0));
      Var e = ad::sqrt(ad::add_const(ad::mul(p[2], p[2]), 0.5));
      return ad::add(ad::add(ad::mul(a, b), ad::div(c, e)), ad::mul_const(d, 0.7));
    };
    const double params[3] = {0.4, -0.8, 1.3};
    results.push_back(
        {"composite_ops", ad::finite_diff_check(composite, params, 1e-6).max_rel_error, 1e-6});
  }

  {
    TriangleMesh tetra;
    tetra.vertices = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
    tetra.faces = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
    tetra.refresh_derived();
    tetra = normalize_unit(tetra);
    results.push_back(
        {"renderer_pose_tetra", renderer_pose_gradcheck(tetra, 33.0, 21.0), 1e-3});
  }

  {
    results.push_back({"renderer_pose_blob",
                       renderer_pose_gradcheck(random_blob_mesh(11), -70.0, 40.0), 1e-3});
  }

  results.push_back({"pipeline_theta", pipeline_theta_gradcheck(17), 1e-3});

  return results;
}

}  // namespace mvtn
