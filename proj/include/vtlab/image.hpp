#pragma once

#include <cmath>
#include <vector>

#include "vtlab/errors.hpp"
#include "vtlab/matrix.hpp"

namespace vtlab {

// H x W x C pixel array with values in [0, 1]. Storage is interleaved
// (y, x, channel) row-major.
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<double> pix;

  Image() = default;
  Image(int h_, int w_, int c_, double fill = 0.0)
      : h(h_), w(w_), c(c_), pix(static_cast<size_t>(h_) * w_ * c_, fill) {}

  size_t size() const { return pix.size(); }

  double& at(int y, int x, int ch) { return pix[(static_cast<size_t>(y) * w + x) * c + ch]; }
  double at(int y, int x, int ch) const { return pix[(static_cast<size_t>(y) * w + x) * c + ch]; }

  bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }

  void validate() const {
    if (h <= 0 || w <= 0 || c <= 0 || pix.size() != static_cast<size_t>(h) * w * c)
      throw DimensionError("image storage does not match its declared shape");
    for (double v : pix) {
      if (!std::isfinite(v)) throw PreconditionError("image contains a non-finite pixel");
      if (v < 0.0 || v > 1.0) throw PreconditionError("image pixel outside [0,1]");
    }
  }

  // Channel-planar view used by the convolutional encoder: c rows, h*w cols.
  Matrix to_planar() const {
    Matrix m(c, h * w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch) m(ch, y * w + x) = at(y, x, ch);
    return m;
  }

  static Image from_planar(const Matrix& m, int h, int w) {
    if (m.cols() != h * w) throw DimensionError("from_planar: cols != h*w");
    Image img(h, w, m.rows());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < m.rows(); ++ch) img.at(y, x, ch) = m(ch, y * w + x);
    return img;
  }
};

inline double linf_distance(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw DimensionError("linf_distance: shape mismatch");
  double d = 0.0;
  for (size_t i = 0; i < a.pix.size(); ++i) d = std::max(d, std::fabs(a.pix[i] - b.pix[i]));
  return d;
}

inline Image clamp01(Image img) {
  for (double& v : img.pix) v = std::min(std::max(v, 0.0), 1.0);
  return img;
}

}  // namespace vtlab
