#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "hvit/vit.hpp"

namespace hvit {

/// The three scale sizes, in pixels. Each must divide the one above.
struct Geometry {
  std::size_t region_size = 2048;
  std::size_t patch_size = 256;
  std::size_t minipatch_size = 16;

  static Geometry paper() { return {2048, 256, 16}; }
  void validate() const;
  std::size_t patches_per_side() const { return region_size / patch_size; }
  std::size_t minipatches_per_side() const { return patch_size / minipatch_size; }
};

enum class Stage { kPatch, kRegion, kSlide };

/// Which stages stay frozen during finetuning. Global trains only the
/// slide-level stage; Local trains region- and slide-level stages. The
/// slide-level stage is never frozen in a trainable scheme.
struct FreezeScheme {
  bool patch = true;
  bool region = false;
  bool slide = false;

  static constexpr int kStages = 3;
  static FreezeScheme global() { return {true, true, false}; }
  static FreezeScheme local() { return {true, false, false}; }

  bool frozen(Stage s) const {
    switch (s) {
      case Stage::kPatch: return patch;
      case Stage::kRegion: return region;
      case Stage::kSlide: return slide;
    }
    return false;
  }
  int frozen_count() const { return (patch ? 1 : 0) + (region ? 1 : 0) + (slide ? 1 : 0); }
  std::string name() const;
  void validate() const;  // rejects a frozen slide stage
};

FreezeScheme scheme_from_name(const std::string& name);

/// Per-stage transformer sizes; token dims and positional grids are derived
/// from the geometry and the stage chain.
struct StageConfig {
  std::size_t embed_dim = 16;
  std::size_t depth = 1;
  std::size_t num_heads = 2;
  double mlp_ratio = 2.0;
};

struct ModelConfig {
  Geometry geometry;
  StageConfig patch;
  StageConfig region;
  StageConfig slide;
  FreezeScheme scheme = FreezeScheme::local();
};

/// Three ViT stages plus a linear head mapping the slide embedding to one
/// continuous grade.
struct HViTModel {
  Geometry geometry;
  ViTWeights patch_vit;
  ViTWeights region_vit;
  ViTWeights slide_vit;
  Tensor head_w;  // [slide embed_dim, 1]
  Tensor head_b;  // [1]
  FreezeScheme scheme;

  const ViTWeights& stage(Stage s) const;
  ViTWeights& stage(Stage s);
};

HViTModel init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Per-level CLS-attention fields at native token granularity, tagged with
/// the freeze flags that drive the factorized blend.
struct AttentionBundle {
  std::vector<Tensor> patch_attn;   // per region: [patches, minipatches] rows sum to 1
  std::vector<Tensor> region_attn;  // per region: [patches], sums to 1
  Tensor slide_attn;                // [regions], sums to 1
  bool patch_frozen = true;
  bool region_frozen = false;
  bool slide_frozen = false;
};

/// Memoizes frozen-stage outputs keyed by region content, so training loops
/// can skip recomputing stages whose weights cannot change. Entries are the
/// bit-exact outputs of the fresh computation. Invalidate (drop) the cache
/// whenever frozen weights are replaced.
class FrozenCache {
public:
  struct PatchEntry {
    Tensor tokens;  // [patches, patch embed_dim]
    Tensor attns;   // [patches, minipatches]
  };
  struct RegionEntry {
    Tensor token;  // [region embed_dim]
    Tensor attn;   // [patches]
  };

  static std::uint64_t key_of(const Tensor& region_pixels);

  const PatchEntry* find_patch(std::uint64_t key) const;
  const RegionEntry* find_region(std::uint64_t key) const;
  void store_patch(std::uint64_t key, PatchEntry entry);
  void store_region(std::uint64_t key, RegionEntry entry);
  std::size_t size() const { return patch_.size() + region_.size(); }

private:
  std::unordered_map<std::uint64_t, PatchEntry> patch_;
  std::unordered_map<std::uint64_t, RegionEntry> region_;
};

// Token assembly helpers shared by every forward path.
Tensor minipatch_tokens(const Tensor& patch_pixels, const Geometry& geo);  // [minipatches, mp*mp*3]
Tensor patch_pixels_of_region(const Tensor& region_pixels, const Geometry& geo, std::size_t patch_index);

struct PatchEmbed {
  Tensor token;           // [patch embed_dim]
  Tensor minipatch_attn;  // [minipatches]
};
PatchEmbed embed_patch(const HViTModel& model, const Tensor& patch_pixels);

struct RegionEmbed {
  Tensor token;                    // [region embed_dim]
  Tensor region_attn;              // [patches]
  std::vector<Tensor> patch_attns; // per patch: [minipatches]
};
RegionEmbed embed_region(const HViTModel& model, const Tensor& region_pixels);

struct ForwardOptions {
  bool want_bundle = true;
  FrozenCache* cache = nullptr;
};

struct SlideOutput {
  double score = 0.0;
  AttentionBundle bundle;
};
SlideOutput forward_slide(const HViTModel& model, const std::vector<Tensor>& regions,
                          const ForwardOptions& opts = {});

/// Graph form of the full slide forward. Frozen stages run off-graph and
/// enter as constants; non-frozen stages and the head become trainable
/// leaves when for_training is set, returned under their checkpoint names.
struct SlideGraphResult {
  Value score;  // [1, 1]
  std::map<std::string, Value> trainable;
  AttentionBundle bundle;
};
SlideGraphResult build_slide_graph(Graph& g, const HViTModel& model, const std::vector<Tensor>& regions,
                                   bool for_training, bool want_bundle, FrozenCache* cache);

/// Parameters of non-frozen stages plus the head.
std::size_t trainable_param_count(const HViTModel& model);

/// All model tensors under "patch."/"region."/"slide."/"head." prefixes.
ParamSet model_params(const HViTModel& model);
ParamSet stage_params_prefixed(const HViTModel& model, Stage s);

void save_model(const HViTModel& model, const std::string& path);
/// Replaces every model tensor from a full checkpoint; shapes must match.
void load_model(HViTModel& model, const std::string& path);
/// Replaces only frozen-stage tensors; finetunable stages stay untouched.
/// Missing or mismatched tensors raise errors naming the offender.
void load_frozen(HViTModel& model, const std::string& checkpoint_path);

/// Locates a parameter tensor by its prefixed checkpoint name.
Tensor* find_param(HViTModel& model, const std::string& prefixed_name);

}  // namespace hvit
