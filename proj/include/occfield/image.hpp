#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

namespace occfield {

/// Row-major interleaved image, values normally in [0, 1] for color and
/// meters for depth maps. Double storage keeps the photometric loss smooth
/// in the fit parameters; files quantize at their own precision on write.
struct Image {
  int width = 0, height = 0, channels = 1;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

  double& at(int x, int y, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

struct ImageSample {
  bool valid = false;
  std::array<double, 4> value{};  // first `channels` entries are meaningful
};

/// Bilinear lookup at (u, v) in pixel coordinates, pixel centers on the
/// integer lattice. Queries outside [0, W-1] x [0, H-1] are invalid; the
/// caller decides what to do with them (losses drop these pixels).
inline ImageSample bilinear_sample(const Image& img, double u, double v) {
  ImageSample out;
  if (!(u >= 0.0 && u <= img.width - 1 && v >= 0.0 && v <= img.height - 1)) return out;
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = u - x0;
  const double fy = v - y0;
  const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
  const double w01 = (1 - fx) * fy, w11 = fx * fy;
  for (int c = 0; c < img.channels && c < 4; ++c) {
    out.value[c] = w00 * img.at(x0, y0, c) + w10 * img.at(x1, y0, c) +
                   w01 * img.at(x0, y1, c) + w11 * img.at(x1, y1, c);
  }
  out.valid = true;
  return out;
}

/// Spatial derivative of the bilinear lookup, d(value)/du and d(value)/dv per
/// channel. Piecewise constant in u on cell interiors, matching the forward
/// interpolation exactly.
inline bool bilinear_gradient(const Image& img, double u, double v,
                              std::array<double, 4>& dval_du, std::array<double, 4>& dval_dv) {
  if (!(u >= 0.0 && u <= img.width - 1 && v >= 0.0 && v <= img.height - 1)) return false;
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = u - x0;
  const double fy = v - y0;
  for (int c = 0; c < img.channels && c < 4; ++c) {
    const double i00 = img.at(x0, y0, c), i10 = img.at(x1, y0, c);
    const double i01 = img.at(x0, y1, c), i11 = img.at(x1, y1, c);
    dval_du[c] = (1 - fy) * (i10 - i00) + fy * (i11 - i01);
    dval_dv[c] = (1 - fx) * (i01 - i00) + fx * (i11 - i10);
  }
  return true;
}

}  // namespace occfield
