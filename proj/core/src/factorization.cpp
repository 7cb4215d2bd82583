#include "hvit/factorization.hpp"

#include <algorithm>
#include <cmath>

#include "hvit/checkpoint.hpp"

namespace hvit {

const char* level_name(Level level) {
  switch (level) {
    case Level::kPatch: return "patch";
    case Level::kRegion: return "region";
    case Level::kSlide: return "slide";
  }
  return "?";
}

Level level_from_name(const std::string& name) {
  if (name == "patch") return Level::kPatch;
  if (name == "region") return Level::kRegion;
  if (name == "slide") return Level::kSlide;
  throw std::invalid_argument("unknown level '" + name + "' (have: patch, region, slide)");
}

PixelField upsample_to_pixels(const Tensor& token_grid, std::size_t token_px) {
  if (token_grid.rank() != 2) {
    throw std::invalid_argument("token grid must be rank-2, got " + token_grid.shape_str());
  }
  if (token_px == 0) throw std::invalid_argument("token footprint must be positive");
  PixelField field;
  field.width = token_grid.cols() * token_px;
  field.height = token_grid.rows() * token_px;
  field.values.resize(field.width * field.height);
  field.covered.assign(field.width * field.height, 1);
  for (std::size_t gy = 0; gy < token_grid.rows(); ++gy) {
    for (std::size_t gx = 0; gx < token_grid.cols(); ++gx) {
      const double v = token_grid.at2(gy, gx);
      for (std::size_t dy = 0; dy < token_px; ++dy) {
        double* row = field.values.data() + (gy * token_px + dy) * field.width + gx * token_px;
        std::fill(row, row + token_px, v);
      }
    }
  }
  return field;
}

namespace {

Tensor as_grid(const Tensor& flat, std::size_t side) {
  if (flat.size() != side * side) {
    throw std::invalid_argument("attention field of size " + std::to_string(flat.size()) +
                                " does not fit a " + std::to_string(side) + "x" + std::to_string(side) +
                                " grid");
  }
  return Tensor({side, side}, flat.data());
}

void splat(PixelField& field, const Tensor& grid, std::size_t token_px, std::size_t x0, std::size_t y0) {
  for (std::size_t gy = 0; gy < grid.rows(); ++gy) {
    for (std::size_t gx = 0; gx < grid.cols(); ++gx) {
      const double v = grid.at2(gy, gx);
      for (std::size_t dy = 0; dy < token_px; ++dy) {
        const std::size_t y = y0 + gy * token_px + dy;
        if (y >= field.height) continue;
        const std::size_t x_begin = x0 + gx * token_px;
        for (std::size_t dx = 0; dx < token_px && x_begin + dx < field.width; ++dx) {
          field.values[y * field.width + x_begin + dx] = v;
          field.covered[y * field.width + x_begin + dx] = 1;
        }
      }
    }
  }
}

}  // namespace

PixelField assemble_level_field(const AttentionBundle& bundle, Level level, const RegionSet& regions) {
  regions.geometry.validate();
  const std::size_t count = regions.regions.size();
  if (count == 0) throw std::invalid_argument("cannot assemble a field over zero regions");
  if (bundle.patch_attn.size() != count || bundle.region_attn.size() != count ||
      bundle.slide_attn.size() != count) {
    throw std::invalid_argument("attention bundle does not match the region set");
  }
  PixelField field;
  field.width = regions.slide_width;
  field.height = regions.slide_height;
  field.values.assign(field.width * field.height, 0.0);
  field.covered.assign(field.width * field.height, 0);
  field.level = level;

  const Geometry& geo = regions.geometry;
  const std::size_t pps = geo.patches_per_side();
  const std::size_t mps = geo.minipatches_per_side();

  for (std::size_t r = 0; r < count; ++r) {
    const Region& region = regions.regions[r];
    switch (level) {
      case Level::kSlide: {
        const Tensor one({1, 1}, {bundle.slide_attn[r]});
        splat(field, one, geo.region_size, region.x, region.y);
        field.frozen = bundle.slide_frozen;
        break;
      }
      case Level::kRegion: {
        splat(field, as_grid(bundle.region_attn[r], pps), geo.patch_size, region.x, region.y);
        field.frozen = bundle.region_frozen;
        break;
      }
      case Level::kPatch: {
        const Tensor& per_patch = bundle.patch_attn[r];  // [patches, minipatches]
        for (std::size_t p = 0; p < pps * pps; ++p) {
          Tensor row({per_patch.cols()},
                     std::vector<double>(per_patch.data().begin() + p * per_patch.cols(),
                                         per_patch.data().begin() + (p + 1) * per_patch.cols()));
          const std::size_t px = region.x + (p % pps) * geo.patch_size;
          const std::size_t py = region.y + (p / pps) * geo.patch_size;
          splat(field, as_grid(row, mps), geo.minipatch_size, px, py);
        }
        field.frozen = bundle.patch_frozen;
        break;
      }
    }
  }
  return field;
}

PixelField normalize_level(const PixelField& field) {
  PixelField out = field;
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < field.values.size(); ++i) {
    if (!field.covered[i]) continue;
    if (!any) {
      lo = hi = field.values[i];
      any = true;
    } else {
      lo = std::min(lo, field.values[i]);
      hi = std::max(hi, field.values[i]);
    }
  }
  if (!any) return out;
  const double span = hi - lo;
  for (std::size_t i = 0; i < field.values.size(); ++i) {
    if (!out.covered[i]) continue;
    out.values[i] = span == 0.0 ? 0.5 : (field.values[i] - lo) / span;
  }
  return out;
}

double blend_beta(int frozen, int total, double gamma) {
  return frozen * (1.0 - gamma) + (total - frozen) * gamma;
}

PixelField factorize(const std::vector<PixelField>& fields, double gamma) {
  if (fields.empty()) throw std::invalid_argument("factorize needs at least one level field");
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("gamma must be in [0, 1]");
  const PixelField& first = fields.front();
  int frozen = 0;
  for (const PixelField& f : fields) {
    if (f.width != first.width || f.height != first.height || f.covered != first.covered) {
      throw std::invalid_argument("level fields must cover identical pixel domains");
    }
    frozen += f.frozen ? 1 : 0;
  }
  const int total = static_cast<int>(fields.size());
  const double beta = blend_beta(frozen, total, gamma);
  if (beta < 1e-12) {
    throw DegenerateBlendError("degenerate blend: beta = 0 (gamma " + std::to_string(gamma) + " with " +
                               std::to_string(frozen) + "/" + std::to_string(total) + " levels frozen)");
  }
  PixelField out;
  out.width = first.width;
  out.height = first.height;
  out.values.assign(first.values.size(), 0.0);
  out.covered = first.covered;
  out.frozen = false;
  for (const PixelField& f : fields) {
    const double weight = (f.frozen ? (1.0 - gamma) : gamma) / beta;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      if (out.covered[i]) out.values[i] += weight * f.values[i];
    }
  }
  return out;
}

std::vector<PixelField> gamma_sweep(const std::vector<PixelField>& fields,
                                    const std::vector<double>& gammas) {
  std::vector<PixelField> out;
  out.reserve(gammas.size());
  for (double gamma : gammas) out.push_back(factorize(fields, gamma));
  return out;
}

Image render_heatmap(const PixelField& field, const Image& base, Colormap cmap, double alpha) {
  if (field.width != base.width || field.height != base.height) {
    throw std::invalid_argument("field " + std::to_string(field.width) + "x" + std::to_string(field.height) +
                                " does not match image " + std::to_string(base.width) + "x" +
                                std::to_string(base.height));
  }
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must be in [0, 1]");
  Image out = base;
  for (std::size_t i = 0; i < field.values.size(); ++i) {
    if (!field.covered[i]) continue;
    const auto color = map_color(field.values[i], cmap);
    for (int c = 0; c < 3; ++c) {
      const double blended = (1.0 - alpha) * base.rgb[3 * i + c] + alpha * color[c];
      out.rgb[3 * i + c] = static_cast<std::uint8_t>(std::lround(blended));
    }
  }
  return out;
}

void write_field(const std::string& path, const PixelField& field) {
  ParamSet params;
  params.emplace("field.values", Tensor({field.height, field.width}, field.values));
  Tensor covered({field.height, field.width});
  for (std::size_t i = 0; i < field.covered.size(); ++i) covered[i] = field.covered[i] ? 1.0 : 0.0;
  params.emplace("field.covered", std::move(covered));
  write_checkpoint_file(path, params);
}

PixelField read_field(const std::string& path) {
  const ParamSet params = read_checkpoint_file(path);
  auto values = params.find("field.values");
  auto covered = params.find("field.covered");
  if (values == params.end() || covered == params.end()) {
    throw std::runtime_error("not a field export: " + path);
  }
  PixelField field;
  field.height = values->second.dim(0);
  field.width = values->second.dim(1);
  field.values = values->second.data();
  field.covered.resize(covered->second.size());
  for (std::size_t i = 0; i < field.covered.size(); ++i) field.covered[i] = covered->second[i] != 0.0;
  return field;
}

}  // namespace hvit
