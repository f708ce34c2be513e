#include "mvtn/run_config.hpp"

#include "mvtn/error.hpp"

namespace mvtn {

namespace {

void collect_keys(const json& node, const std::string& prefix, std::vector<std::string>& out) {
  if (node.is_object()) {
    for (const auto& [key, value] : node.items()) {
      collect_keys(value, prefix.empty() ? key : prefix + "." + key, out);
    }
  } else {
    out.push_back(prefix);
  }
}

}  // namespace

json run_config_to_json(const RunConfig& config) {
  return json{
      {"dataset",
       {{"source", config.dataset.source},
        {"directory", config.dataset.directory},
        {"synthetic", synthetic_spec_to_json(config.dataset.synthetic)}}},
      {"train", train_config_to_json(config.train)},
      {"render", render_settings_to_json(config.render)},
      {"output_dir", config.output_dir},
  };
}

RunConfig run_config_from_json(const json& j, bool strict) {
  if (!j.is_object()) fail(ErrorCode::SpecInvalid, "run config must be a JSON object");
  RunConfig config;
  for (const auto& [key, value] : j.items()) {
    if (key == "dataset") {
      if (!value.is_object()) fail(ErrorCode::SpecInvalid, "dataset must be an object");
      for (const auto& [dkey, dvalue] : value.items()) {
        if (dkey == "source") {
          config.dataset.source = dvalue.get<std::string>();
          if (config.dataset.source != "synthetic" && config.dataset.source != "directory") {
            fail(ErrorCode::SpecInvalid, "dataset.source must be 'synthetic' or 'directory'");
          }
        } else if (dkey == "directory") {
          config.dataset.directory = dvalue.get<std::string>();
        } else if (dkey == "synthetic") {
          config.dataset.synthetic = synthetic_spec_from_json(dvalue, strict);
        } else if (strict) {
          fail(ErrorCode::SpecInvalid, "unknown key 'dataset." + dkey + "'");
        }
      }
    } else if (key == "train") {
      config.train = train_config_from_json(value, strict);
    } else if (key == "render") {
      config.render = render_settings_from_json(value, strict);
    } else if (key == "output_dir") {
      config.output_dir = value.get<std::string>();
    } else if (strict) {
      fail(ErrorCode::SpecInvalid, "unknown key '" + key + "'");
    }
  }
  return config;
}

std::vector<std::string> run_config_flat_keys() {
  std::vector<std::string> keys;
  collect_keys(run_config_to_json(RunConfig{}), "", keys);
  return keys;
}

void apply_override(json& doc, const std::string& dotted_key, const std::string& value) {
  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = dotted_key.find('.', start);
    const std::string part = dotted_key.substr(start, dot - start);
    if (part.empty()) fail(ErrorCode::SpecInvalid, "empty path segment in '" + dotted_key + "'");
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
      (*node)[part] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

Dataset resolve_dataset(const DatasetSource& source) {
  if (source.source == "directory") {
    if (source.directory.empty()) {
      fail(ErrorCode::SpecInvalid, "dataset.source is 'directory' but no directory given");
    }
    return load_dataset(source.directory);
  }
  return generate_synthetic(source.synthetic);
}

}  // namespace mvtn
