#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vtlab/image.hpp"
#include "vtlab/rng.hpp"

namespace vtlab {

// Seeded synthetic scenes: a solid background, one colored shape, mild pixel
// noise. Captions name the shape, its color, and the background color, so
// caption content is a learnable function of the pixels.
namespace synth {

struct NamedColor {
  const char* name;
  double r, g, b;
};

inline const std::vector<NamedColor>& palette() {
  static const std::vector<NamedColor> p = {
      {"red", 0.85, 0.15, 0.15},  {"green", 0.15, 0.70, 0.20}, {"blue", 0.15, 0.25, 0.80},
      {"gold", 0.90, 0.75, 0.20}, {"teal", 0.10, 0.65, 0.65},  {"pink", 0.90, 0.45, 0.65},
      {"gray", 0.50, 0.50, 0.50}, {"brown", 0.55, 0.35, 0.15}};
  return p;
}

inline const std::vector<const char*>& shapes() {
  static const std::vector<const char*> s = {"square", "disk", "bar", "ring"};
  return s;
}

}  // namespace synth

struct CaptionedImage {
  Image image;
  std::string caption;
};

// `contrast` blends colors toward mid-gray: 1 keeps the palette, lower
// values produce subtler scenes (small content response in embedding space,
// which is what makes small-budget pixel attacks effective against real
// encoders too).
inline CaptionedImage make_synthetic_sample(Rng& rng, int h, int w, int c = 3,
                                            double noise = 0.02, double contrast = 1.0) {
  const auto& pal = synth::palette();
  const int bg = rng.below(static_cast<int>(pal.size()));
  int fg = rng.below(static_cast<int>(pal.size()));
  while (fg == bg) fg = rng.below(static_cast<int>(pal.size()));
  const int shape = rng.below(static_cast<int>(synth::shapes().size()));

  const double cy = rng.uniform(0.3, 0.7) * h;
  const double cx = rng.uniform(0.3, 0.7) * w;
  const double radius = rng.uniform(0.15, 0.3) * std::min(h, w);

  Image img(h, w, c);
  auto put = [&](int y, int x, const synth::NamedColor& col) {
    const double rgb[3] = {0.5 + contrast * (col.r - 0.5), 0.5 + contrast * (col.g - 0.5),
                           0.5 + contrast * (col.b - 0.5)};
    for (int ch = 0; ch < c; ++ch) img.at(y, x, ch) = rgb[ch % 3];
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      put(y, x, pal[bg]);
      const double dy = y - cy, dx = x - cx;
      bool inside = false;
      switch (shape) {
        case 0: inside = std::max(std::fabs(dy), std::fabs(dx)) <= radius; break;
        case 1: inside = dy * dy + dx * dx <= radius * radius; break;
        case 2: inside = std::fabs(dy) <= radius * 0.45; break;  // horizontal bar
        case 3: {
          const double d2 = std::sqrt(dy * dy + dx * dx);
          inside = d2 <= radius && d2 >= radius * 0.55;
          break;
        }
      }
      if (inside) put(y, x, pal[fg]);
    }
  if (noise > 0.0)
    for (auto& v : img.pix) v = std::min(1.0, std::max(0.0, v + rng.uniform(-noise, noise)));

  CaptionedImage out;
  out.image = std::move(img);
  out.caption = std::string(pal[fg].name) + " " + synth::shapes()[shape] + " on " + pal[bg].name;
  return out;
}

inline std::vector<Image> make_synthetic_set(uint64_t seed, int count, int h, int w, int c = 3,
                                             double noise = 0.02, double contrast = 1.0) {
  Rng rng(seed);
  std::vector<Image> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i)
    out.push_back(make_synthetic_sample(rng, h, w, c, noise, contrast).image);
  return out;
}

// Bilinear resize into the victim resolution (used by the directory loader
// so arbitrary photos can be attacked).
inline Image resize_bilinear(const Image& src, int h, int w) {
  Image dst(h, w, src.c);
  for (int y = 0; y < h; ++y) {
    const double sy = (h == 1) ? 0.0 : static_cast<double>(y) * (src.h - 1) / (h - 1);
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, src.h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < w; ++x) {
      const double sx = (w == 1) ? 0.0 : static_cast<double>(x) * (src.w - 1) / (w - 1);
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, src.w - 1);
      const double fx = sx - x0;
      for (int ch = 0; ch < src.c; ++ch) {
        const double top = src.at(y0, x0, ch) * (1 - fx) + src.at(y0, x1, ch) * fx;
        const double bot = src.at(y1, x0, ch) * (1 - fx) + src.at(y1, x1, ch) * fx;
        dst.at(y, x, ch) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return dst;
}

}  // namespace vtlab
