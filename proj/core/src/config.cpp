#include "hvit/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hvit {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    if (v == 0) throw std::invalid_argument("zero");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "' needs a positive integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "' needs a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw std::invalid_argument("config key '" + key + "' needs true/false, got '" + value + "'");
}

bool apply_stage_key(StageConfig& stage, const std::string& field, const std::string& key,
                     const std::string& value) {
  if (field == "embed_dim") {
    stage.embed_dim = parse_size(key, value);
  } else if (field == "depth") {
    stage.depth = parse_size(key, value);
  } else if (field == "num_heads") {
    stage.num_heads = parse_size(key, value);
  } else if (field == "mlp_ratio") {
    stage.mlp_ratio = parse_double(key, value);
    if (stage.mlp_ratio <= 0.0) throw std::invalid_argument("config key '" + key + "' must be positive");
  } else {
    return false;
  }
  return true;
}

}  // namespace

KvPairs read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  KvPairs pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(content.substr(0, eq));
    const std::string value = trim(content.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    pairs.emplace_back(key, value);
  }
  return pairs;
}

void write_kv_file(const std::string& path, const KvPairs& pairs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config: " + path);
  for (const auto& [key, value] : pairs) out << key << " = " << value << "\n";
  if (!out) throw std::runtime_error("config write failed: " + path);
}

RunConfig run_config_from_kv(const KvPairs& pairs) {
  RunConfig cfg;
  for (const auto& [key, value] : pairs) {
    const auto dot = key.find('.');
    const std::string group = dot == std::string::npos ? key : key.substr(0, dot);
    const std::string field = dot == std::string::npos ? "" : key.substr(dot + 1);
    if (group == "geometry") {
      if (field == "region_size") {
        cfg.model.geometry.region_size = parse_size(key, value);
      } else if (field == "patch_size") {
        cfg.model.geometry.patch_size = parse_size(key, value);
      } else if (field == "minipatch_size") {
        cfg.model.geometry.minipatch_size = parse_size(key, value);
      } else {
        throw std::invalid_argument("unknown config key '" + key + "'");
      }
    } else if (group == "patch_vit" || group == "region_vit" || group == "slide_vit") {
      StageConfig& stage = group == "patch_vit"    ? cfg.model.patch
                           : group == "region_vit" ? cfg.model.region
                                                   : cfg.model.slide;
      if (!apply_stage_key(stage, field, key, value)) {
        throw std::invalid_argument("unknown config key '" + key + "'");
      }
    } else if (key == "scheme") {
      cfg.model.scheme = scheme_from_name(value);
    } else if (group == "train") {
      if (field == "epochs") {
        cfg.train.epochs = parse_size(key, value);
      } else if (field == "lr") {
        cfg.train.lr = parse_double(key, value);
        if (cfg.train.lr <= 0.0) throw std::invalid_argument("config key 'train.lr' must be positive");
      } else if (field == "momentum") {
        cfg.train.momentum = parse_double(key, value);
        if (cfg.train.momentum < 0.0 || cfg.train.momentum >= 1.0) {
          throw std::invalid_argument("config key 'train.momentum' must be in [0, 1)");
        }
      } else if (field == "batch_size") {
        cfg.train.batch_size = parse_size(key, value);
      } else if (field == "seed") {
        cfg.train.seed = parse_size(key, value);
      } else if (field == "cache_frozen") {
        cfg.train.cache_frozen = parse_bool(key, value);
      } else {
        throw std::invalid_argument("unknown config key '" + key + "'");
      }
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
  cfg.model.geometry.validate();
  return cfg;
}

RunConfig read_run_config(const std::string& path) { return run_config_from_kv(read_kv_file(path)); }

}  // namespace hvit
