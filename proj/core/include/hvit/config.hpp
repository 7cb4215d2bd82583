#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hvit/evaluation.hpp"
#include "hvit/model.hpp"

namespace hvit {

/// Flat `key = value` text; '#' starts a comment, blank lines are ignored.
/// Later duplicates of a key win.
using KvPairs = std::vector<std::pair<std::string, std::string>>;

KvPairs read_kv_file(const std::string& path);
void write_kv_file(const std::string& path, const KvPairs& pairs);

/// Model geometry, stage sizes, freeze scheme and training defaults in one
/// file; every key is validated and unknown keys are rejected. Keys:
///   geometry.region_size / .patch_size / .minipatch_size
///   patch_vit.embed_dim / .depth / .num_heads / .mlp_ratio
///   region_vit.*, slide_vit.*   (same four keys)
///   scheme = local | global
///   train.epochs / .lr / .momentum / .batch_size / .seed / .cache_frozen
struct RunConfig {
  ModelConfig model{Geometry{64, 16, 4}, {}, {}, {}, FreezeScheme::local()};  // desk-scale defaults
  TrainConfig train;
};

RunConfig run_config_from_kv(const KvPairs& pairs);
RunConfig read_run_config(const std::string& path);

}  // namespace hvit
