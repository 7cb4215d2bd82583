#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hvit/tensor.hpp"

namespace hvit {

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  static Image filled(std::size_t w, std::size_t h, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  std::uint8_t* px(std::size_t x, std::size_t y) { return rgb.data() + 3 * (y * width + x); }
  const std::uint8_t* px(std::size_t x, std::size_t y) const { return rgb.data() + 3 * (y * width + x); }
};

/// Pixel grid with physical spacing (microns per pixel).
struct SlideRaster {
  Image image;
  double spacing = 0.5;
};

// Binary portable pixmap (P6, 8-bit). Slides carry spacing in a
// "# spacing <microns>" header comment; plain P6 readers ignore it.
Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& img);
SlideRaster read_slide(const std::string& path);
void write_slide(const std::string& path, const SlideRaster& slide);

/// Crops [x0, x0+w) x [y0, y0+h) into a [h, w, 3] tensor scaled to [0, 1].
/// Out-of-bounds pixels read as white, matching the region padding rule.
Tensor crop_to_tensor(const Image& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h);

/// Box-filter rescale to a target spacing, for inputs whose spacing differs
/// from the target by more than ~5%.
SlideRaster rescale_to_spacing(const SlideRaster& slide, double target_spacing);

enum class Colormap { kJet, kGray };
Colormap colormap_from_name(const std::string& name);
std::array<std::uint8_t, 3> map_color(double v, Colormap cmap);  // v clamped to [0, 1]

}  // namespace hvit
