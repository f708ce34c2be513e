#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mvtn/dataset.hpp"
#include "mvtn/error.hpp"
#include "mvtn/gradcheck.hpp"
#include "mvtn/retrieval.hpp"
#include "mvtn/run_config.hpp"

namespace fs = std::filesystem;
using mvtn::json;

namespace {

struct GlobalOptions {
  std::string config_file;
  std::string output_dir;
  std::string data_dir;
  std::int64_t seed = -1;  // -1 = unset; falls back to MVTN_SEED, then config
  int workers = -1;
  std::map<std::string, std::string> overrides;
};

std::int64_t env_seed() {
  const char* env = std::getenv("MVTN_SEED");
  if (env == nullptr) return -1;
  try {
    return std::stoll(env);
  } catch (...) {
    return -1;
  }
}

mvtn::RunConfig resolve_config(const GlobalOptions& opts) {
  json doc = json::object();
  if (!opts.config_file.empty()) {
    std::ifstream in(opts.config_file);
    if (!in) mvtn::fail(mvtn::ErrorCode::IoError, "cannot open " + opts.config_file);
    try {
      in >> doc;
    } catch (const json::exception& e) {
      mvtn::fail(mvtn::ErrorCode::SpecInvalid, opts.config_file + ": " + e.what());
    }
  }
  for (const auto& [key, value] : opts.overrides) {
    mvtn::apply_override(doc, key, value);
  }
  mvtn::RunConfig config = mvtn::run_config_from_json(doc, /*strict=*/true);
  if (!opts.output_dir.empty()) config.output_dir = opts.output_dir;
  if (!opts.data_dir.empty()) {
    config.dataset.source = "directory";
    config.dataset.directory = opts.data_dir;
  }
  std::int64_t seed = opts.seed >= 0 ? opts.seed : env_seed();
  if (seed >= 0) {
    config.train.seed = static_cast<std::uint64_t>(seed);
    config.dataset.synthetic.seed = static_cast<std::uint64_t>(seed);
  }
  if (opts.workers > 0) config.train.workers = opts.workers;
  return config;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) mvtn::fail(mvtn::ErrorCode::IoError, "cannot create output directory " + dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) mvtn::fail(mvtn::ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Timestamps are confined to the log file so every other output is
// byte-identical across reruns.
void append_log(const std::string& dir, const std::string& line) {
  std::ofstream log(fs::path(dir) / "run.log", std::ios::app);
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%S", std::gmtime(&t));
  log << stamp << " " << line << "\n";
}

void echo_config(const mvtn::RunConfig& config) {
  ensure_dir(config.output_dir);
  write_json(fs::path(config.output_dir) / "config.resolved.json",
             mvtn::run_config_to_json(config));
}

mvtn::TriangleMesh load_mesh_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) mvtn::fail(mvtn::ErrorCode::IoError, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (fs::path(path).extension() == ".obj") return mvtn::load_obj(bytes);
  return mvtn::load_off(bytes);
}

std::string format_csv_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// --- commands -----------------------------------------------------------------

int cmd_gen_data(const GlobalOptions& opts) {
  mvtn::RunConfig config = resolve_config(opts);
  echo_config(config);
  const mvtn::Dataset dataset = mvtn::generate_synthetic(config.dataset.synthetic);
  mvtn::save_dataset(dataset, config.output_dir);
  append_log(config.output_dir, "gen-data");
  std::cout << "gen-data: " << dataset.shapes.size() << " shapes, " << dataset.num_classes()
            << " classes -> " << config.output_dir << "\n";
  return 0;
}

int cmd_train(const GlobalOptions& opts) {
  mvtn::RunConfig config = resolve_config(opts);
  echo_config(config);
  const mvtn::Dataset dataset = mvtn::resolve_dataset(config.dataset);
  const mvtn::Checkpoint ckpt = mvtn::train(dataset, config.train);

  const fs::path out(config.output_dir);
  mvtn::save_checkpoint(ckpt, (out / "checkpoint.ckpt").string());
  write_text(out / "metrics.csv", mvtn::metrics_history_to_csv(ckpt.history));
  const double final_acc =
      ckpt.history.epochs.empty() ? ckpt.history.initial.train_accuracy
                                  : ckpt.history.epochs.back().train_accuracy;
  write_json(out / "summary.json",
             json{{"variant", mvtn::to_string(ckpt.config.variant)},
                  {"trained_epochs", ckpt.trained_epochs},
                  {"final_train_accuracy", final_acc},
                  {"skipped_steps", ckpt.history.skipped_steps},
                  {"history", mvtn::metrics_history_to_json(ckpt.history)}});
  append_log(config.output_dir, "train");
  std::cout << "train: " << mvtn::to_string(ckpt.config.variant) << ", "
            << ckpt.trained_epochs << " epochs, final train accuracy " << final_acc << " -> "
            << config.output_dir << "\n";
  return 0;
}

int cmd_eval(const GlobalOptions& opts, const std::string& checkpoint_path,
             const std::string& split_name) {
  mvtn::RunConfig config = resolve_config(opts);
  echo_config(config);
  const mvtn::Checkpoint ckpt = mvtn::load_checkpoint(checkpoint_path);
  const mvtn::Dataset dataset = mvtn::resolve_dataset(config.dataset);
  const mvtn::Split split = split_name == "train" ? mvtn::Split::Train : mvtn::Split::Test;
  const double accuracy = mvtn::evaluate_accuracy(ckpt, dataset, split);
  write_json(fs::path(config.output_dir) / "eval.json",
             json{{"accuracy", accuracy},
                  {"split", split_name},
                  {"samples", dataset.indices(split).size()}});
  append_log(config.output_dir, "eval");
  std::cout << "eval: " << split_name << " accuracy " << accuracy << "\n";
  return 0;
}

int cmd_robustness(const GlobalOptions& opts, const std::string& checkpoint_path,
                   const std::string& mode_name, double max_angle, int repeats) {
  mvtn::RunConfig config = resolve_config(opts);
  echo_config(config);
  const mvtn::Checkpoint ckpt = mvtn::load_checkpoint(checkpoint_path);
  const mvtn::Dataset dataset = mvtn::resolve_dataset(config.dataset);
  const mvtn::RobustnessReport report = mvtn::robustness_eval(
      ckpt, dataset, mvtn::rotation_mode_from_string(mode_name), max_angle, repeats,
      ckpt.config.seed);
  write_json(fs::path(config.output_dir) / "robustness.json",
             mvtn::robustness_report_to_json(report));
  append_log(config.output_dir, "robustness");
  std::cout << "robustness: mean " << report.mean << " +- " << report.stddev << " over "
            << repeats << " repeats\n";
  return 0;
}

int cmd_retrieve(const GlobalOptions& opts, const std::string& checkpoint_path, int rank,
                 bool use_lfda, const std::string& ap_mode_name) {
  mvtn::RunConfig config = resolve_config(opts);
  echo_config(config);
  const mvtn::Checkpoint ckpt = mvtn::load_checkpoint(checkpoint_path);
  const mvtn::Dataset dataset = mvtn::resolve_dataset(config.dataset);
  const mvtn::ApMode ap_mode =
      ap_mode_name == "paper" ? mvtn::ApMode::PaperLiteral : mvtn::ApMode::Standard;

  std::vector<mvtn::ShapeSignature> signatures = mvtn::extract_signatures(ckpt, dataset);
  std::vector<mvtn::ShapeSignature> gallery, queries;
  for (const auto& sig : signatures) {
    (sig.split == mvtn::Split::Train ? gallery : queries).push_back(sig);
  }
  if (gallery.empty() || queries.empty()) {
    mvtn::fail(mvtn::ErrorCode::TooFewSamples, "retrieval needs both train and test shapes");
  }

  if (use_lfda) {
    const int d = static_cast<int>(gallery[0].feature.size());
    const int r = rank > 0 ? std::min(rank, d) : std::min(d, 64);
    const mvtn::LfdaModel model = mvtn::lfda_fit(gallery, r);
    mvtn::project_signatures(model, gallery);
    mvtn::project_signatures(model, queries);
  }

  std::ostringstream sig_csv;
  sig_csv << "id,label,split";
  for (std::size_t i = 0; i < signatures[0].feature.size(); ++i) sig_csv << ",f" << i;
  sig_csv << "\n";
  for (const auto& sig : signatures) {
    sig_csv << sig.shape_id << ',' << sig.label << ','
            << (sig.split == mvtn::Split::Train ? "train" : "test");
    for (double f : sig.feature) sig_csv << ',' << format_csv_double(f);
    sig_csv << "\n";
  }

  std::ostringstream res_csv;
  res_csv << "query_id,rank,gallery_id,distance,relevant\n";
  std::vector<std::vector<int>> relevance;
  std::vector<int> gtps;
  for (const auto& query : queries) {
    const std::vector<int> ranked = mvtn::retrieve(query, gallery);
    std::vector<int> rel;
    int gtp = 0;
    for (const auto& g : gallery) gtp += g.label == query.label ? 1 : 0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const auto& g = gallery[ranked[r]];
      const std::vector<double>& qf = query.projected.empty() ? query.feature : query.projected;
      const std::vector<double>& gf = g.projected.empty() ? g.feature : g.projected;
      double dist = 0;
      for (std::size_t k = 0; k < qf.size(); ++k) dist += (qf[k] - gf[k]) * (qf[k] - gf[k]);
      const bool relevant = g.label == query.label;
      rel.push_back(relevant ? 1 : 0);
      res_csv << query.shape_id << ',' << r + 1 << ',' << g.shape_id << ','
              << format_csv_double(std::sqrt(dist)) << ',' << (relevant ? 1 : 0) << "\n";
    }
    relevance.push_back(std::move(rel));
    gtps.push_back(gtp);
  }
  const double map = mvtn::mean_ap(relevance, gtps, ap_mode);

  const fs::path out(config.output_dir);
  write_text(out / "signatures.csv", sig_csv.str());
  write_text(out / "retrieval.csv", res_csv.str());
  write_json(out / "retrieval.json", json{{"mAP", map},
                                          {"queries", queries.size()},
                                          {"gallery", gallery.size()},
                                          {"lfda", use_lfda},
                                          {"ap_mode", ap_mode_name}});
  append_log(config.output_dir, "retrieve");
  std::cout << "retrieve: mAP " << map << " over " << queries.size() << " queries\n";
  return 0;
}

int cmd_render(const GlobalOptions& opts, const std::string& mesh_path,
               const std::string& config_name, int views, double elevation, double distance) {
  mvtn::RunConfig config = resolve_config(opts);
  echo_config(config);
  const mvtn::TriangleMesh mesh = mvtn::normalize_unit(load_mesh_file(mesh_path));

  mvtn::SceneParams params;
  if (config_name == "circular") {
    params = mvtn::circular_config(views, elevation, distance);
  } else if (config_name == "spherical") {
    params = mvtn::spherical_config(views, distance);
  } else if (config_name == "random") {
    params = mvtn::random_config(views, config.train.seed, distance);
  } else {
    mvtn::fail(mvtn::ErrorCode::SpecInvalid, "unknown view config '" + config_name + "'");
  }

  const auto images =
      mvtn::render_views(mesh, params, config.render, mvtn::LightMode::FixedToCamera);
  const fs::path out(config.output_dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::ostringstream name;
    name << "view_" << std::setw(2) << std::setfill('0') << i << ".ppm";
    mvtn::write_ppm(images[i], (out / name.str()).string());
  }
  write_json(out / "views.json", mvtn::scene_params_to_json(params));
  append_log(config.output_dir, "render");
  std::cout << "render: " << images.size() << " views of " << mesh_path << " -> "
            << config.output_dir << "\n";
  return 0;
}

int cmd_views_dist(const GlobalOptions& opts, const std::string& checkpoint_path) {
  mvtn::RunConfig config = resolve_config(opts);
  echo_config(config);
  const mvtn::Checkpoint ckpt = mvtn::load_checkpoint(checkpoint_path);
  const mvtn::Dataset dataset = mvtn::resolve_dataset(config.dataset);
  const mvtn::ViewDistribution dist = mvtn::export_view_distribution(ckpt, dataset);

  std::ostringstream rows;
  rows << "class,shape_id,view_index,azimuth,elevation\n";
  for (const auto& row : dist.rows) {
    rows << dataset.class_names[row.class_id] << ',' << row.shape_id << ',' << row.view_index
         << ',' << format_csv_double(row.azimuth_deg) << ','
         << format_csv_double(row.elevation_deg) << "\n";
  }

  std::ostringstream kde;
  kde << "angle_type,class,grid,density\n";
  const auto dump_series = [&](const char* type, const mvtn::KdeSeries& series) {
    for (std::size_t c = 0; c < series.density.size(); ++c) {
      for (std::size_t g = 0; g < series.grid.size(); ++g) {
        kde << type << ',' << dataset.class_names[c] << ',' << format_csv_double(series.grid[g])
            << ',' << format_csv_double(series.density[c][g]) << "\n";
      }
    }
  };
  dump_series("azimuth", dist.azimuth);
  dump_series("elevation", dist.elevation);

  const fs::path out(config.output_dir);
  write_text(out / "views.csv", rows.str());
  write_text(out / "views_kde.csv", kde.str());
  append_log(config.output_dir, "views-dist");
  std::cout << "views-dist: " << dist.rows.size() << " rows -> " << config.output_dir << "\n";
  return 0;
}

int cmd_gradcheck(const GlobalOptions& opts) {
  const auto results = mvtn::run_gradcheck_fixtures();
  bool all_passed = true;
  std::cout << "fixture                     max_rel_error   tolerance   status\n";
  for (const auto& r : results) {
    all_passed = all_passed && r.passed();
    std::cout << std::left << std::setw(28) << r.name << std::scientific
              << std::setprecision(3) << r.max_rel_error << "       " << r.tolerance << "    "
              << (r.passed() ? "pass" : "FAIL") << "\n";
    std::cout.unsetf(std::ios::scientific);
  }
  if (!opts.output_dir.empty()) {
    ensure_dir(opts.output_dir);
    json rows = json::array();
    for (const auto& r : results) {
      rows.push_back(json{{"name", r.name},
                          {"max_rel_error", r.max_rel_error},
                          {"tolerance", r.tolerance},
                          {"passed", r.passed()}});
    }
    write_json(fs::path(opts.output_dir) / "gradcheck.json", rows);
    append_log(opts.output_dir, "gradcheck");
  }
  std::cout << (all_passed ? "gradcheck: all fixtures passed\n"
                           : "gradcheck: FAILURES detected\n");
  return all_passed ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned multi-view rendering toolkit"};
  app.require_subcommand(1);

  GlobalOptions opts;
  app.add_option("--config", opts.config_file, "Run configuration JSON file");
  app.add_option("--out", opts.output_dir, "Output directory");
  app.add_option("--data", opts.data_dir, "Dataset directory (manifest.json layout)");
  app.add_option("--seed", opts.seed, "Global seed (falls back to MVTN_SEED)");
  app.add_option("--workers", opts.workers, "Worker threads (default: available cores)");

  // Every leaf of the config schema is addressable as --<dotted.name> <value>.
  for (const std::string& key : mvtn::run_config_flat_keys()) {
    app.add_option_function<std::string>(
        "--" + key, [&opts, key](const std::string& v) { opts.overrides[key] = v; },
        "Override config key " + key);
  }

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");

  auto* train = app.add_subcommand("train", "Train a classifier (fixed or MVTN variants)");

  std::string checkpoint_path;
  std::string split_name = "test";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval->add_option("--split", split_name, "Dataset split (train|test)");

  std::string mode_name = "y_only";
  double max_angle = 180.0;
  int repeats = 10;
  auto* robust = app.add_subcommand("robustness", "Rotation-robustness evaluation");
  robust->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  robust->add_option("--mode", mode_name, "Rotation mode (y_only|any_axis)");
  robust->add_option("--max-angle", max_angle, "Max rotation angle in degrees (0 = bypass)");
  robust->add_option("--repeats", repeats, "Number of repeats");

  int rank = 0;
  bool no_lfda = false;
  std::string ap_mode_name = "standard";
  auto* retr = app.add_subcommand("retrieve", "Shape retrieval with mAP evaluation");
  retr->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  retr->add_option("--rank", rank, "LFDA output dimension (default min(d, 64))");
  retr->add_flag("--no-lfda", no_lfda, "Skip the LFDA projection");
  retr->add_option("--ap-mode", ap_mode_name, "AP formula (standard|paper)");

  std::string mesh_path, view_config = "circular";
  int views = 12;
  double elevation = 30.0, distance = 2.2;
  auto* render = app.add_subcommand("render", "Render views of a mesh to PPM files");
  render->add_option("--mesh", mesh_path, "OFF or OBJ mesh file")->required();
  // Shadows the global --config when given after the subcommand.
  render->add_option("--config,--view-config", view_config, "circular|spherical|random");
  render->add_option("--views", views, "Number of views");
  render->add_option("--elevation", elevation, "Circular config elevation (degrees)");
  render->add_option("--distance", distance, "Camera distance");

  auto* vdist = app.add_subcommand("views-dist", "Export the learned view distribution");
  vdist->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient fixtures");

  for (CLI::App* sub : app.get_subcommands(nullptr)) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage errors are exit 1, --help is 0
  }

  try {
    if (gen->parsed()) return cmd_gen_data(opts);
    if (train->parsed()) return cmd_train(opts);
    if (eval->parsed()) return cmd_eval(opts, checkpoint_path, split_name);
    if (robust->parsed()) return cmd_robustness(opts, checkpoint_path, mode_name, max_angle, repeats);
    if (retr->parsed()) return cmd_retrieve(opts, checkpoint_path, rank, !no_lfda, ap_mode_name);
    if (render->parsed()) return cmd_render(opts, mesh_path, view_config, views, elevation, distance);
    if (vdist->parsed()) return cmd_views_dist(opts, checkpoint_path);
    if (gradcheck->parsed()) return cmd_gradcheck(opts);
  } catch (const mvtn::Error& e) {
    if (e.code() == mvtn::ErrorCode::SpecInvalid) {
      std::cerr << "usage error: " << e.what() << "\n";
      return 1;
    }
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
