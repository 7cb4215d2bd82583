#include "hvit/model.hpp"

#include <cstring>
#include <stdexcept>

#include "hvit/rng.hpp"

namespace hvit {

namespace {

const char* stage_prefix(Stage s) {
  switch (s) {
    case Stage::kPatch: return "patch";
    case Stage::kRegion: return "region";
    case Stage::kSlide: return "slide";
  }
  return "?";
}

constexpr Stage kStageOrder[3] = {Stage::kPatch, Stage::kRegion, Stage::kSlide};

void require_region_shape(const Tensor& t, const Geometry& geo, std::size_t index) {
  const std::size_t rs = geo.region_size;
  if (t.rank() != 3 || t.dim(0) != rs || t.dim(1) != rs || t.dim(2) != 3) {
    throw std::invalid_argument("region " + std::to_string(index) + " has shape " + t.shape_str() +
                                ", expected [" + std::to_string(rs) + ", " + std::to_string(rs) + ", 3]");
  }
}

FrozenCache::PatchEntry compute_patch_entry(const HViTModel& m, const Tensor& region_pixels) {
  const std::size_t pps = m.geometry.patches_per_side();
  const std::size_t patches = pps * pps;
  const std::size_t mps = m.geometry.minipatches_per_side();
  FrozenCache::PatchEntry e;
  e.tokens = Tensor({patches, m.patch_vit.cfg.embed_dim});
  e.attns = Tensor({patches, mps * mps});
  for (std::size_t p = 0; p < patches; ++p) {
    const Tensor patch = patch_pixels_of_region(region_pixels, m.geometry, p);
    const Tensor toks = minipatch_tokens(patch, m.geometry);
    ViTOutput out = vit_forward(m.patch_vit.cfg, m.patch_vit.params, toks);
    std::copy(out.cls_embedding.data().begin(), out.cls_embedding.data().end(),
              e.tokens.data().begin() + p * m.patch_vit.cfg.embed_dim);
    std::copy(out.attn.data().begin(), out.attn.data().end(), e.attns.data().begin() + p * mps * mps);
  }
  return e;
}

}  // namespace

void Geometry::validate() const {
  if (minipatch_size == 0 || patch_size == 0 || region_size == 0) {
    throw std::invalid_argument("geometry sizes must be positive");
  }
  if (region_size % patch_size != 0) {
    throw std::invalid_argument("region_size " + std::to_string(region_size) +
                                " not divisible by patch_size " + std::to_string(patch_size));
  }
  if (patch_size % minipatch_size != 0) {
    throw std::invalid_argument("patch_size " + std::to_string(patch_size) +
                                " not divisible by minipatch_size " + std::to_string(minipatch_size));
  }
}

std::string FreezeScheme::name() const {
  if (patch && region && !slide) return "global";
  if (patch && !region && !slide) return "local";
  return "custom";
}

void FreezeScheme::validate() const {
  if (slide) throw std::invalid_argument("the slide-level stage is never frozen");
}

FreezeScheme scheme_from_name(const std::string& name) {
  if (name == "global") return FreezeScheme::global();
  if (name == "local") return FreezeScheme::local();
  throw std::invalid_argument("unknown scheme '" + name + "' (have: local, global)");
}

const ViTWeights& HViTModel::stage(Stage s) const {
  switch (s) {
    case Stage::kPatch: return patch_vit;
    case Stage::kRegion: return region_vit;
    case Stage::kSlide: return slide_vit;
  }
  throw std::logic_error("bad stage");
}

ViTWeights& HViTModel::stage(Stage s) {
  return const_cast<ViTWeights&>(static_cast<const HViTModel&>(*this).stage(s));
}

HViTModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.geometry.validate();
  const std::size_t mps = cfg.geometry.minipatches_per_side();
  const std::size_t pps = cfg.geometry.patches_per_side();

  ViTConfig patch_cfg{cfg.geometry.minipatch_size * cfg.geometry.minipatch_size * 3,
                      cfg.patch.embed_dim,
                      cfg.patch.depth,
                      cfg.patch.num_heads,
                      cfg.patch.mlp_ratio,
                      GridShape{mps, mps}};
  ViTConfig region_cfg{cfg.patch.embed_dim, cfg.region.embed_dim,     cfg.region.depth,
                       cfg.region.num_heads, cfg.region.mlp_ratio, GridShape{pps, pps}};
  ViTConfig slide_cfg{cfg.region.embed_dim, cfg.slide.embed_dim, cfg.slide.depth,
                      cfg.slide.num_heads, cfg.slide.mlp_ratio, std::nullopt};

  HViTModel m;
  m.geometry = cfg.geometry;
  m.scheme = cfg.scheme;
  m.patch_vit = init_weights(patch_cfg, mix_seed(seed, 1));
  m.region_vit = init_weights(region_cfg, mix_seed(seed, 2));
  m.slide_vit = init_weights(slide_cfg, mix_seed(seed, 3));
  Rng rng(mix_seed(seed, 4));
  m.head_w = Tensor({cfg.slide.embed_dim, 1});
  for (double& v : m.head_w.data()) v = 0.02 * rng.normal();
  m.head_b = Tensor::zeros({1});
  return m;
}

std::uint64_t FrozenCache::key_of(const Tensor& region_pixels) {
  std::uint64_t h = 14695981039346656037ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(region_pixels.data().data());
  const std::size_t n = region_pixels.size() * sizeof(double);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

const FrozenCache::PatchEntry* FrozenCache::find_patch(std::uint64_t key) const {
  auto it = patch_.find(key);
  return it == patch_.end() ? nullptr : &it->second;
}

const FrozenCache::RegionEntry* FrozenCache::find_region(std::uint64_t key) const {
  auto it = region_.find(key);
  return it == region_.end() ? nullptr : &it->second;
}

void FrozenCache::store_patch(std::uint64_t key, PatchEntry entry) { patch_[key] = std::move(entry); }
void FrozenCache::store_region(std::uint64_t key, RegionEntry entry) { region_[key] = std::move(entry); }

Tensor minipatch_tokens(const Tensor& patch_pixels, const Geometry& geo) {
  const std::size_t ps = geo.patch_size;
  const std::size_t mp = geo.minipatch_size;
  if (patch_pixels.rank() != 3 || patch_pixels.dim(0) != ps || patch_pixels.dim(1) != ps ||
      patch_pixels.dim(2) != 3) {
    throw std::invalid_argument("patch has shape " + patch_pixels.shape_str() + ", expected [" +
                                std::to_string(ps) + ", " + std::to_string(ps) + ", 3]");
  }
  const std::size_t side = ps / mp;
  const std::size_t token_dim = mp * mp * 3;
  Tensor tokens({side * side, token_dim});
  for (std::size_t gy = 0; gy < side; ++gy) {
    for (std::size_t gx = 0; gx < side; ++gx) {
      double* dst = tokens.data().data() + (gy * side + gx) * token_dim;
      for (std::size_t dy = 0; dy < mp; ++dy) {
        const double* src = patch_pixels.data().data() + ((gy * mp + dy) * ps + gx * mp) * 3;
        std::copy(src, src + mp * 3, dst + dy * mp * 3);
      }
    }
  }
  return tokens;
}

Tensor patch_pixels_of_region(const Tensor& region_pixels, const Geometry& geo, std::size_t patch_index) {
  const std::size_t rs = geo.region_size;
  const std::size_t ps = geo.patch_size;
  const std::size_t pps = geo.patches_per_side();
  if (patch_index >= pps * pps) throw std::invalid_argument("patch index out of range");
  const std::size_t py = patch_index / pps, px = patch_index % pps;
  Tensor out({ps, ps, 3});
  for (std::size_t y = 0; y < ps; ++y) {
    const double* src = region_pixels.data().data() + ((py * ps + y) * rs + px * ps) * 3;
    std::copy(src, src + ps * 3, out.data().data() + y * ps * 3);
  }
  return out;
}

PatchEmbed embed_patch(const HViTModel& model, const Tensor& patch_pixels) {
  const Tensor tokens = minipatch_tokens(patch_pixels, model.geometry);
  ViTOutput out = vit_forward(model.patch_vit.cfg, model.patch_vit.params, tokens);
  return PatchEmbed{std::move(out.cls_embedding), std::move(out.attn)};
}

RegionEmbed embed_region(const HViTModel& model, const Tensor& region_pixels) {
  require_region_shape(region_pixels, model.geometry, 0);
  const std::size_t pps = model.geometry.patches_per_side();
  const std::size_t patches = pps * pps;
  Tensor tokens({patches, model.patch_vit.cfg.embed_dim});
  RegionEmbed out;
  out.patch_attns.reserve(patches);
  for (std::size_t p = 0; p < patches; ++p) {
    PatchEmbed pe = embed_patch(model, patch_pixels_of_region(region_pixels, model.geometry, p));
    std::copy(pe.token.data().begin(), pe.token.data().end(),
              tokens.data().begin() + p * model.patch_vit.cfg.embed_dim);
    out.patch_attns.push_back(std::move(pe.minipatch_attn));
  }
  ViTOutput r = vit_forward(model.region_vit.cfg, model.region_vit.params, tokens);
  out.token = std::move(r.cls_embedding);
  out.region_attn = std::move(r.attn);
  return out;
}

SlideGraphResult build_slide_graph(Graph& g, const HViTModel& model, const std::vector<Tensor>& regions,
                                   bool for_training, bool want_bundle, FrozenCache* cache) {
  if (regions.empty()) throw std::invalid_argument("forward_slide needs at least one region");
  model.geometry.validate();
  if (for_training) model.scheme.validate();
  for (std::size_t r = 0; r < regions.size(); ++r) require_region_shape(regions[r], model.geometry, r);

  const std::size_t num_regions = regions.size();
  const std::size_t pps = model.geometry.patches_per_side();
  const std::size_t patches = pps * pps;

  // A frozen stage can leave the graph only when everything upstream of it
  // is frozen too; otherwise it stays on-graph with non-trainable leaves so
  // gradients flow through it.
  const bool patch_off = model.scheme.patch;
  const bool region_off = model.scheme.region && model.scheme.patch;

  SlideGraphResult res;
  res.bundle.patch_frozen = model.scheme.patch;
  res.bundle.region_frozen = model.scheme.region;
  res.bundle.slide_frozen = model.scheme.slide;
  if (want_bundle) {
    res.bundle.patch_attn.resize(num_regions);
    res.bundle.region_attn.resize(num_regions);
  }

  VitNodes patch_nodes, region_nodes;
  if (!patch_off) patch_nodes = vit_leaves(g, model.patch_vit.params, for_training && !model.scheme.patch);
  if (!region_off) region_nodes = vit_leaves(g, model.region_vit.params, for_training && !model.scheme.region);
  VitNodes slide_nodes = vit_leaves(g, model.slide_vit.params, for_training && !model.scheme.slide);
  Value head_w = g.leaf(model.head_w, for_training);
  Value head_b = g.leaf(model.head_b, for_training);

  // Region tokens arrive either as graph values (region stage on-graph) or
  // as plain rows (region stage off-graph).
  std::vector<Value> region_token_vals;
  Tensor region_token_rows;
  if (region_off) region_token_rows = Tensor({num_regions, model.region_vit.cfg.embed_dim});

  for (std::size_t r = 0; r < num_regions; ++r) {
    const std::uint64_t key = cache ? FrozenCache::key_of(regions[r]) : 0;

    if (region_off) {
      const FrozenCache::RegionEntry* re = cache ? cache->find_region(key) : nullptr;
      FrozenCache::RegionEntry fresh;
      if (!re || want_bundle) {
        const FrozenCache::PatchEntry* pe = cache ? cache->find_patch(key) : nullptr;
        FrozenCache::PatchEntry pe_fresh;
        if (!pe) {
          pe_fresh = compute_patch_entry(model, regions[r]);
          if (cache) {
            cache->store_patch(key, pe_fresh);
            pe = cache->find_patch(key);
          } else {
            pe = &pe_fresh;
          }
        }
        if (want_bundle) res.bundle.patch_attn[r] = pe->attns;
        if (!re) {
          ViTOutput out = vit_forward(model.region_vit.cfg, model.region_vit.params, pe->tokens);
          fresh.token = std::move(out.cls_embedding);
          fresh.attn = std::move(out.attn);
          if (cache) {
            cache->store_region(key, fresh);
            re = cache->find_region(key);
          } else {
            re = &fresh;
          }
        }
      }
      if (want_bundle) res.bundle.region_attn[r] = re->attn;
      std::copy(re->token.data().begin(), re->token.data().end(),
                region_token_rows.data().begin() + r * model.region_vit.cfg.embed_dim);
      continue;
    }

    // Region stage on-graph; patch tokens come in frozen or on-graph.
    Value patch_tokens_val;
    if (patch_off) {
      const FrozenCache::PatchEntry* pe = cache ? cache->find_patch(key) : nullptr;
      FrozenCache::PatchEntry pe_fresh;
      if (!pe) {
        pe_fresh = compute_patch_entry(model, regions[r]);
        if (cache) {
          cache->store_patch(key, pe_fresh);
          pe = cache->find_patch(key);
        } else {
          pe = &pe_fresh;
        }
      }
      if (want_bundle) res.bundle.patch_attn[r] = pe->attns;
      patch_tokens_val = g.leaf(pe->tokens);
    } else {
      const std::size_t mps = model.geometry.minipatches_per_side();
      Value stacked;
      Tensor attns({patches, mps * mps});
      for (std::size_t p = 0; p < patches; ++p) {
        const Tensor toks = minipatch_tokens(patch_pixels_of_region(regions[r], model.geometry, p),
                                             model.geometry);
        VitGraphOutput out =
            vit_forward_graph(g, model.patch_vit.cfg, patch_nodes, g.leaf(toks), false);
        stacked = (p == 0) ? out.cls : g.concat_rows(stacked, out.cls);
        std::copy(out.attn.data().begin(), out.attn.data().end(), attns.data().begin() + p * mps * mps);
      }
      if (want_bundle) res.bundle.patch_attn[r] = std::move(attns);
      patch_tokens_val = stacked;
    }

    VitGraphOutput out =
        vit_forward_graph(g, model.region_vit.cfg, region_nodes, patch_tokens_val, false);
    if (want_bundle) res.bundle.region_attn[r] = out.attn;
    region_token_vals.push_back(out.cls);
  }

  Value slide_tokens;
  if (region_off) {
    slide_tokens = g.leaf(region_token_rows);
  } else {
    slide_tokens = region_token_vals[0];
    for (std::size_t r = 1; r < num_regions; ++r) {
      slide_tokens = g.concat_rows(slide_tokens, region_token_vals[r]);
    }
  }

  VitGraphOutput slide_out = vit_forward_graph(g, model.slide_vit.cfg, slide_nodes, slide_tokens, false);
  res.bundle.slide_attn = slide_out.attn;
  res.score = g.add_row_bias(g.matmul(slide_out.cls, head_w), head_b);

  if (for_training) {
    const auto add_stage = [&](Stage s, const VitNodes& nodes) {
      if (model.scheme.frozen(s)) return;
      const std::string prefix = std::string(stage_prefix(s)) + ".";
      for (const auto& [name, val] : nodes.leaves) res.trainable.emplace(prefix + name, val);
    };
    add_stage(Stage::kPatch, patch_nodes);
    add_stage(Stage::kRegion, region_nodes);
    res.trainable.emplace("head.w", head_w);
    res.trainable.emplace("head.b", head_b);
    add_stage(Stage::kSlide, slide_nodes);
  }
  return res;
}

SlideOutput forward_slide(const HViTModel& model, const std::vector<Tensor>& regions,
                          const ForwardOptions& opts) {
  Graph g;
  SlideGraphResult res = build_slide_graph(g, model, regions, false, opts.want_bundle, opts.cache);
  SlideOutput out;
  out.score = g.value(res.score)[0];
  out.bundle = std::move(res.bundle);
  return out;
}

std::size_t trainable_param_count(const HViTModel& model) {
  std::size_t n = model.head_w.size() + model.head_b.size();
  for (Stage s : kStageOrder) {
    if (model.scheme.frozen(s)) continue;
    for (const auto& [name, tensor] : model.stage(s).params) n += tensor.size();
  }
  return n;
}

ParamSet stage_params_prefixed(const HViTModel& model, Stage s) {
  ParamSet out;
  const std::string prefix = std::string(stage_prefix(s)) + ".";
  for (const auto& [name, tensor] : model.stage(s).params) out.emplace(prefix + name, tensor);
  return out;
}

ParamSet model_params(const HViTModel& model) {
  ParamSet out;
  for (Stage s : kStageOrder) {
    for (auto& [name, tensor] : stage_params_prefixed(model, s)) out.emplace(name, tensor);
  }
  out.emplace("head.w", model.head_w);
  out.emplace("head.b", model.head_b);
  return out;
}

void save_model(const HViTModel& model, const std::string& path) {
  write_checkpoint_file(path, model_params(model));
}

Tensor* find_param(HViTModel& model, const std::string& prefixed_name) {
  if (prefixed_name == "head.w") return &model.head_w;
  if (prefixed_name == "head.b") return &model.head_b;
  const auto dot = prefixed_name.find('.');
  if (dot == std::string::npos) return nullptr;
  const std::string stage_name = prefixed_name.substr(0, dot);
  const std::string rest = prefixed_name.substr(dot + 1);
  for (Stage s : kStageOrder) {
    if (stage_name != stage_prefix(s)) continue;
    auto it = model.stage(s).params.find(rest);
    return it == model.stage(s).params.end() ? nullptr : &it->second;
  }
  return nullptr;
}

namespace {

void replace_from_checkpoint(HViTModel& model, const ParamSet& loaded, const std::string& name) {
  Tensor* dst = find_param(model, name);
  if (!dst) throw std::runtime_error("model has no tensor named '" + name + "'");
  auto it = loaded.find(name);
  if (it == loaded.end()) throw std::runtime_error("checkpoint missing tensor '" + name + "'");
  if (it->second.shape() != dst->shape()) {
    throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + it->second.shape_str() +
                             ", model expects " + dst->shape_str());
  }
  *dst = it->second;
}

}  // namespace

void load_model(HViTModel& model, const std::string& path) {
  const ParamSet loaded = read_checkpoint_file(path);
  const ParamSet own = model_params(model);
  for (const auto& [name, tensor] : loaded) {
    if (!own.count(name)) throw std::runtime_error("checkpoint has unexpected tensor '" + name + "'");
  }
  for (const auto& [name, tensor] : own) replace_from_checkpoint(model, loaded, name);
}

void load_frozen(HViTModel& model, const std::string& checkpoint_path) {
  const ParamSet loaded = read_checkpoint_file(checkpoint_path);
  for (Stage s : kStageOrder) {
    if (!model.scheme.frozen(s)) continue;
    for (const auto& [name, tensor] : stage_params_prefixed(model, s)) {
      replace_from_checkpoint(model, loaded, name);
    }
  }
}

}  // namespace hvit
