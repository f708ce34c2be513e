#pragma once

#include <string>
#include <vector>

#include "mvtn/dataset.hpp"
#include "mvtn/serialize.hpp"

namespace mvtn {

struct DatasetSource {
  std::string source = "synthetic";  // "synthetic" | "directory"
  std::string directory;
  SyntheticSpec synthetic = standard_benchmark_spec();
};

// Mirrors the training and rendering configuration; every leaf is also
// overridable with a --<dotted.name> command-line flag.
struct RunConfig {
  DatasetSource dataset;
  TrainConfig train;
  RenderSettings render;
  std::string output_dir = "out";
};

json run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const json& j, bool strict = true);

// Dotted leaf paths of the config schema (for flag registration).
std::vector<std::string> run_config_flat_keys();

// Sets doc[dotted.path]; the value is parsed as JSON when possible and kept
// as a string otherwise. Unknown paths surface later in strict parsing.
void apply_override(json& doc, const std::string& dotted_key, const std::string& value);

Dataset resolve_dataset(const DatasetSource& source);

}  // namespace mvtn
