#include "hvit/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hvit {

namespace {

// Reads one whitespace-delimited PNM header token, honoring '#' comments.
// Comments that look like "# spacing 0.5" are reported through `spacing`.
std::string next_token(std::istream& in, double* spacing) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      std::string comment;
      while ((c = in.get()) != EOF && c != '\n') comment.push_back(static_cast<char>(c));
      std::istringstream cs(comment);
      std::string key;
      double value = 0.0;
      if (spacing && (cs >> key >> value) && key == "spacing" && value > 0.0) *spacing = value;
      c = in.get();
      continue;
    }
    if (!std::isspace(c)) break;
    c = in.get();
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  return tok;
}

Image read_ppm_stream(std::istream& in, const std::string& path, double* spacing) {
  if (next_token(in, spacing) != "P6") throw std::runtime_error("not a P6 pixmap: " + path);
  const std::string ws = next_token(in, spacing);
  const std::string hs = next_token(in, spacing);
  const std::string ms = next_token(in, spacing);
  std::size_t w = 0, h = 0;
  unsigned long maxval = 0;
  try {
    w = std::stoul(ws);
    h = std::stoul(hs);
    maxval = std::stoul(ms);
  } catch (const std::exception&) {
    throw std::runtime_error("bad P6 header in " + path);
  }
  if (w == 0 || h == 0) throw std::runtime_error("bad P6 dimensions in " + path);
  if (maxval != 255) throw std::runtime_error("unsupported P6 maxval (want 255) in " + path);
  Image img;
  img.width = w;
  img.height = h;
  img.rgb.resize(w * h * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
    throw std::runtime_error("P6 pixel data truncated in " + path);
  }
  return img;
}

}  // namespace

Image Image::filled(std::size_t w, std::size_t h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img;
  img.width = w;
  img.height = h;
  img.rgb.resize(w * h * 3);
  for (std::size_t i = 0; i < w * h; ++i) {
    img.rgb[3 * i] = r;
    img.rgb[3 * i + 1] = g;
    img.rgb[3 * i + 2] = b;
  }
  return img;
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  return read_ppm_stream(in, path, nullptr);
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open image for writing: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw std::runtime_error("image write failed: " + path);
}

SlideRaster read_slide(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open slide: " + path);
  SlideRaster slide;
  slide.image = read_ppm_stream(in, path, &slide.spacing);
  return slide;
}

void write_slide(const std::string& path, const SlideRaster& slide) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open slide for writing: " + path);
  std::ostringstream sp;
  sp.precision(17);
  sp << slide.spacing;
  out << "P6\n# spacing " << sp.str() << "\n" << slide.image.width << " " << slide.image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(slide.image.rgb.data()),
            static_cast<std::streamsize>(slide.image.rgb.size()));
  if (!out) throw std::runtime_error("slide write failed: " + path);
}

Tensor crop_to_tensor(const Image& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  Tensor t({h, w, 3});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = x0 + x, sy = y0 + y;
      double* dst = t.data().data() + 3 * (y * w + x);
      if (sx < img.width && sy < img.height) {
        const std::uint8_t* p = img.px(sx, sy);
        dst[0] = p[0] / 255.0;
        dst[1] = p[1] / 255.0;
        dst[2] = p[2] / 255.0;
      } else {
        dst[0] = dst[1] = dst[2] = 1.0;  // white padding
      }
    }
  }
  return t;
}

SlideRaster rescale_to_spacing(const SlideRaster& slide, double target_spacing) {
  if (target_spacing <= 0.0) throw std::invalid_argument("target spacing must be positive");
  const double factor = slide.spacing / target_spacing;  // output px per input px
  const auto out_w = static_cast<std::size_t>(std::max(1.0, std::floor(slide.image.width * factor)));
  const auto out_h = static_cast<std::size_t>(std::max(1.0, std::floor(slide.image.height * factor)));
  SlideRaster out;
  out.spacing = target_spacing;
  out.image.width = out_w;
  out.image.height = out_h;
  out.image.rgb.resize(out_w * out_h * 3);
  const double step_x = static_cast<double>(slide.image.width) / static_cast<double>(out_w);
  const double step_y = static_cast<double>(slide.image.height) / static_cast<double>(out_h);
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto sy0 = static_cast<std::size_t>(y * step_y);
    auto sy1 = static_cast<std::size_t>(std::ceil((y + 1) * step_y));
    sy1 = std::min(sy1, slide.image.height);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto sx0 = static_cast<std::size_t>(x * step_x);
      auto sx1 = static_cast<std::size_t>(std::ceil((x + 1) * step_x));
      sx1 = std::min(sx1, slide.image.width);
      double acc[3] = {0, 0, 0};
      std::size_t count = 0;
      for (std::size_t sy = sy0; sy < sy1; ++sy) {
        for (std::size_t sx = sx0; sx < sx1; ++sx) {
          const std::uint8_t* p = slide.image.px(sx, sy);
          acc[0] += p[0];
          acc[1] += p[1];
          acc[2] += p[2];
          ++count;
        }
      }
      std::uint8_t* dst = out.image.px(x, y);
      for (int c = 0; c < 3; ++c) {
        dst[c] = static_cast<std::uint8_t>(std::lround(acc[c] / static_cast<double>(count)));
      }
    }
  }
  return out;
}

Colormap colormap_from_name(const std::string& name) {
  if (name == "jet") return Colormap::kJet;
  if (name == "gray") return Colormap::kGray;
  throw std::invalid_argument("unknown colormap '" + name + "' (have: jet, gray)");
}

std::array<std::uint8_t, 3> map_color(double v, Colormap cmap) {
  v = std::clamp(v, 0.0, 1.0);
  const auto to8 = [](double c) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
  };
  switch (cmap) {
    case Colormap::kGray:
      return {to8(v), to8(v), to8(v)};
    case Colormap::kJet: {
      const double r = std::min(4.0 * v - 1.5, -4.0 * v + 4.5);
      const double g = std::min(4.0 * v - 0.5, -4.0 * v + 3.5);
      const double b = std::min(4.0 * v + 0.5, -4.0 * v + 2.5);
      return {to8(r), to8(g), to8(b)};
    }
  }
  return {0, 0, 0};
}

}  // namespace hvit
