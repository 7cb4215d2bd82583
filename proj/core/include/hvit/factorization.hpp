#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "hvit/image.hpp"
#include "hvit/model.hpp"
#include "hvit/preprocessing.hpp"

namespace hvit {

enum class Level { kPatch, kRegion, kSlide };
const char* level_name(Level level);
Level level_from_name(const std::string& name);

/// One transformer level's attention scores materialized per slide pixel.
/// `covered` marks pixels inside retained regions; everything outside stays
/// out of normalization and blending.
struct PixelField {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> covered;
  Level level = Level::kPatch;
  bool frozen = false;

  double& at(std::size_t x, std::size_t y) { return values[y * width + x]; }
  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
};

/// Raised when the blend weights vanish: every level frozen with gamma = 1,
/// or none frozen with gamma = 0.
class DegenerateBlendError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Nearest-neighbor broadcast: token (r, c) of the grid fills its
/// token_px x token_px pixel footprint exactly.
PixelField upsample_to_pixels(const Tensor& token_grid, std::size_t token_px);

/// Whole-slide field for one level: every region's token grid broadcast into
/// its pixel footprint. Fields from different levels of the same bundle
/// cover identical pixel domains.
PixelField assemble_level_field(const AttentionBundle& bundle, Level level, const RegionSet& regions);

/// Min-max rescale to [0, 1] over covered pixels; constant fields map to
/// 0.5. Applied per level before blending so levels with long softmax
/// sequences are not drowned out (disable with the CLI flag).
PixelField normalize_level(const PixelField& field);

/// Blend normalizer: n frozen of total levels at the given gamma.
double blend_beta(int frozen, int total, double gamma);

/// The factorized attention score per pixel: each level contributes its
/// score weighted by gamma when finetuned and (1 - gamma) when frozen, and
/// the sum is divided by beta = n(1-gamma) + (N-n)gamma. Weights over beta
/// sum to 1, so all-equal inputs pass through unchanged for every valid
/// gamma.
PixelField factorize(const std::vector<PixelField>& fields, double gamma);

std::vector<PixelField> gamma_sweep(const std::vector<PixelField>& fields,
                                    const std::vector<double>& gammas);

/// Colormapped field alpha-blended over the base image; pixels outside the
/// field's coverage keep the base. Byte-deterministic for fixed inputs.
Image render_heatmap(const PixelField& field, const Image& base, Colormap cmap, double alpha);

/// Exports values and coverage in the checkpoint tensor format
/// ("field.values" [h, w] and "field.covered" [h, w]).
void write_field(const std::string& path, const PixelField& field);
PixelField read_field(const std::string& path);

}  // namespace hvit
