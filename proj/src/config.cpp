#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "shadowmamba/model.hpp"

namespace sm {

using nlohmann::json;

std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::boundary_region: return "BR";
    case BlockKind::global: return "G";
    case BlockKind::local: return "L";
  }
  throw UsageError("to_string: unknown block kind");
}

BlockKind block_kind_from_string(const std::string& s) {
  if (s == "BR") return BlockKind::boundary_region;
  if (s == "G") return BlockKind::global;
  if (s == "L") return BlockKind::local;
  throw UsageError("unknown block kind '" + s + "' (expected BR, G, or L)");
}

void ModelConfig::validate() const {
  if (stages() < 3 || stages() % 2 == 0)
    throw UsageError("config: arrangement must have an odd length >= 3");
  if ((int)blocks_per_layer.size() != stages())
    throw UsageError("config: blocks_per_layer length must match arrangement");
  for (int b : blocks_per_layer)
    if (b < 1) throw UsageError("config: blocks_per_layer entries must be >= 1");
  if (base_width < 1) throw UsageError("config: base_width must be >= 1");
  if (window != 4 && window != 8 && window != 10 && window != 16)
    throw UsageError("config: window must be one of 4, 8, 10, 16");
  if (ssm_state_dim < 1)
    throw UsageError("config: ssm_state_dim must be >= 1");
  if (ffn_expansion < 1)
    throw UsageError("config: ffn_expansion must be >= 1");
  if (precision != "f64" && precision != "f32")
    throw UsageError("config: precision must be f64 or f32");
}

namespace {
constexpr int kConfigSchema = 1;
}

std::string to_json(const ModelConfig& cfg) {
  json j;
  j["schema_version"] = kConfigSchema;
  j["base_width"] = cfg.base_width;
  j["blocks_per_layer"] = cfg.blocks_per_layer;
  json arr = json::array();
  for (BlockKind k : cfg.arrangement) arr.push_back(to_string(k));
  j["arrangement"] = arr;
  j["window"] = cfg.window;
  j["ssm_state_dim"] = cfg.ssm_state_dim;
  j["ffn_expansion"] = cfg.ffn_expansion;
  j["seed"] = cfg.seed;
  j["precision"] = cfg.precision;
  return j.dump(2) + "\n";
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("config: top level must be an object");

  static const std::set<std::string> known = {
      "schema_version", "base_width", "blocks_per_layer", "arrangement",
      "window",         "ssm_state_dim", "ffn_expansion", "seed",
      "precision"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw DataError("config: unknown key '" + it.key() + "'");

  ModelConfig cfg;
  try {
    if (j.contains("schema_version") &&
        j["schema_version"].get<int>() != kConfigSchema)
      throw DataError("config: unsupported schema_version");
    if (j.contains("base_width")) cfg.base_width = j["base_width"].get<int>();
    if (j.contains("blocks_per_layer"))
      cfg.blocks_per_layer = j["blocks_per_layer"].get<std::vector<int>>();
    if (j.contains("arrangement")) {
      cfg.arrangement.clear();
      for (const auto& v : j["arrangement"])
        cfg.arrangement.push_back(
            block_kind_from_string(v.get<std::string>()));
    }
    if (j.contains("window")) cfg.window = j["window"].get<int>();
    if (j.contains("ssm_state_dim"))
      cfg.ssm_state_dim = j["ssm_state_dim"].get<int>();
    if (j.contains("ffn_expansion"))
      cfg.ffn_expansion = j["ffn_expansion"].get<int>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("precision")) cfg.precision = j["precision"].get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("config: malformed field: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(e.what());  // bad enum token in the file
  }
  try {
    cfg.validate();
  } catch (const UsageError& e) {
    throw DataError(e.what());  // bad file contents, not a caller bug
  }
  return cfg;
}

ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return model_config_from_json(ss.str());
}

void save_model_config(const std::string& path, const ModelConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("config: cannot write " + path);
  out << to_json(cfg);
}

}  // namespace sm
