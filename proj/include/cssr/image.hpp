#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cssr/errors.hpp"

namespace cssr {

struct ValueRange {
  double lo = 0.0;
  double hi = 255.0;
  bool operator==(const ValueRange&) const = default;
};

/// Row-major grayscale raster of doubles. Quantization happens only at
/// file output.
class Image {
 public:
  Image(int width, int height, double fill = 0.0, ValueRange range = {})
      : width_(width), height_(height), range_(range) {
    check_dims();
    pixels_.assign(static_cast<std::size_t>(width) * height, fill);
    check_finite();
  }

  Image(int width, int height, std::vector<double> pixels, ValueRange range = {})
      : width_(width), height_(height), pixels_(std::move(pixels)), range_(range) {
    check_dims();
    if (pixels_.size() != static_cast<std::size_t>(width) * height)
      throw InvalidArgument("pixel buffer length does not match width*height");
    check_finite();
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  const ValueRange& range() const noexcept { return range_; }

  double operator()(int row, int col) const { return pixels_[index(row, col)]; }
  double& operator()(int row, int col) { return pixels_[index(row, col)]; }

  /// Replicate-padded read.
  double clamped(int row, int col) const {
    row = std::clamp(row, 0, height_ - 1);
    col = std::clamp(col, 0, width_ - 1);
    return pixels_[index(row, col)];
  }

  std::span<const double> pixels() const noexcept { return pixels_; }
  std::span<double> pixels() noexcept { return pixels_; }

  double mean() const {
    double sum = 0.0;
    for (double v : pixels_) sum += v;
    return sum / static_cast<double>(pixels_.size());
  }

  bool same_shape(const Image& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int row, int col) const noexcept {
    return static_cast<std::size_t>(row) * width_ + col;
  }
  void check_dims() const {
    if (width_ < 1 || height_ < 1) throw InvalidArgument("image dimensions must be >= 1");
  }
  void check_finite() const {
    for (double v : pixels_)
      if (!std::isfinite(v)) throw InvalidArgument("image contains a non-finite pixel");
  }

  int width_;
  int height_;
  std::vector<double> pixels_;
  ValueRange range_;
};

/// Square block with its origin in the source image.
struct Patch {
  int size = 0;
  int row = 0;
  int col = 0;
  std::vector<double> values;  // size*size, row-major

  double operator()(int r, int c) const { return values[static_cast<std::size_t>(r) * size + c]; }

  double mean() const {
    double sum = 0.0;
    for (double v : values) sum += v;
    return values.empty() ? 0.0 : sum / static_cast<double>(values.size());
  }
};

inline Patch crop_patch(const Image& img, int row, int col, int size) {
  if (size < 1 || row < 0 || col < 0 || row + size > img.height() || col + size > img.width())
    throw InvalidArgument("patch does not fit inside the image");
  Patch p{size, row, col, {}};
  p.values.resize(static_cast<std::size_t>(size) * size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) p.values[static_cast<std::size_t>(r) * size + c] = img(row + r, col + c);
  return p;
}

/// Squared Euclidean distance between two equally sized patches.
inline double patch_distance2(const Patch& a, const Patch& b) {
  if (a.values.size() != b.values.size()) throw InvalidArgument("patch size mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double t = a.values[i] - b.values[i];
    d += t * t;
  }
  return d;
}

struct PatchGrid {
  int imageWidth = 0;
  int imageHeight = 0;
  int patchSize = 0;
  int overlap = 0;
  std::vector<int> rowOrigins;
  std::vector<int> colOrigins;
  std::vector<Patch> patches;  // raster order over (rowOrigins x colOrigins)
};

/// Origins along one axis: stride steps from 0, with the last origin clamped
/// to dim - size so the far edge is always covered.
inline std::vector<int> axis_origins(int dim, int size, int stride) {
  std::vector<int> out;
  const int last = dim - size;
  for (int o = 0; o <= last; o += stride) out.push_back(o);
  if (out.back() != last) out.push_back(last);
  return out;
}

inline PatchGrid extract_patches(const Image& img, int size, int overlap) {
  if (size < 1 || overlap < 0 || overlap >= size)
    throw InvalidArgument("extract_patches requires 0 <= overlap < size");
  if (size > std::min(img.width(), img.height()))
    throw InvalidArgument("patch size " + std::to_string(size) + " exceeds image dimensions");
  PatchGrid grid;
  grid.imageWidth = img.width();
  grid.imageHeight = img.height();
  grid.patchSize = size;
  grid.overlap = overlap;
  grid.rowOrigins = axis_origins(img.height(), size, size - overlap);
  grid.colOrigins = axis_origins(img.width(), size, size - overlap);
  grid.patches.reserve(grid.rowOrigins.size() * grid.colOrigins.size());
  for (int r : grid.rowOrigins)
    for (int c : grid.colOrigins) grid.patches.push_back(crop_patch(img, r, c, size));
  return grid;
}

/// Averages overlapping patch values into a width x height frame.
///
/// The average is accumulated incrementally (m += (v - m) / k), so a pixel
/// whose contributions are all equal reproduces that value bit-exactly.
inline Image aggregate_patches(const PatchGrid& grid, int width, int height, ValueRange range = {}) {
  Image out(width, height, 0.0, range);
  std::vector<int> count(out.size(), 0);
  auto data = out.pixels();
  for (const Patch& p : grid.patches) {
    if (p.row < 0 || p.col < 0 || p.row + p.size > height || p.col + p.size > width ||
        p.values.size() != static_cast<std::size_t>(p.size) * p.size)
      throw InconsistentGridError("patch at (" + std::to_string(p.row) + "," + std::to_string(p.col) +
                                  ") does not fit the target frame");
    for (int r = 0; r < p.size; ++r) {
      for (int c = 0; c < p.size; ++c) {
        const std::size_t i = static_cast<std::size_t>(p.row + r) * width + (p.col + c);
        const int k = ++count[i];
        data[i] += (p(r, c) - data[i]) / k;
      }
    }
  }
  for (std::size_t i = 0; i < count.size(); ++i)
    if (count[i] == 0)
      throw InconsistentGridError("pixel (" + std::to_string(i / width) + "," + std::to_string(i % width) +
                                  ") is not covered by any patch");
  return out;
}

/// Square, point-symmetric, normalized blur kernel.
class BlurKernel {
 public:
  BlurKernel(int radius, std::vector<double> taps) : radius_(radius), taps_(std::move(taps)) {
    const int side = 2 * radius_ + 1;
    if (radius_ < 0 || taps_.size() != static_cast<std::size_t>(side) * side)
      throw InvalidArgument("blur kernel taps do not match its radius");
    double sum = 0.0;
    for (double t : taps_) sum += t;
    if (std::abs(sum - 1.0) > 1e-12) throw InvalidArgument("blur kernel must sum to 1");
    for (std::size_t i = 0; i < taps_.size(); ++i)
      if (taps_[i] != taps_[taps_.size() - 1 - i]) throw InvalidArgument("blur kernel must be symmetric");
  }

  static BlurKernel identity() { return BlurKernel(0, {1.0}); }

  /// Sampled Gaussian truncated at 3 sigma, normalized to unit sum.
  static BlurKernel gaussian(double sigma) {
    if (!(sigma > 0.0)) throw InvalidArgument("gaussian sigma must be positive");
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> line(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) sum += line[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& v : line) v /= sum;
    const int side = 2 * radius + 1;
    std::vector<double> taps(static_cast<std::size_t>(side) * side);
    double total = 0.0;
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) total += taps[static_cast<std::size_t>(r) * side + c] = line[r] * line[c];
    for (double& t : taps) t /= total;
    // Re-impose exact point symmetry after the division.
    for (std::size_t i = 0; i < taps.size() / 2; ++i) taps[taps.size() - 1 - i] = taps[i];
    return BlurKernel(radius, std::move(taps));
  }

  int radius() const noexcept { return radius_; }
  int side() const noexcept { return 2 * radius_ + 1; }
  double operator()(int dr, int dc) const {
    return taps_[static_cast<std::size_t>(dr + radius_) * side() + (dc + radius_)];
  }
  std::span<const double> taps() const noexcept { return taps_; }

 private:
  int radius_;
  std::vector<double> taps_;
};

/// Replicate-padded 2-D filtering. The kernel is point-symmetric, so this is
/// both the convolution and its adjoint up to border handling.
inline Image convolve(const Image& img, const BlurKernel& k) {
  Image out(img.width(), img.height(), 0.0, img.range());
  const int rad = k.radius();
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c) {
      double acc = 0.0;
      for (int dr = -rad; dr <= rad; ++dr)
        for (int dc = -rad; dc <= rad; ++dc) acc += k(dr, dc) * img.clamped(r + dr, c + dc);
      out(r, c) = acc;
    }
  }
  return out;
}

/// HR -> LR model: blur, then keep every scale-th sample starting at (0, 0).
struct DegradationModel {
  BlurKernel blur = BlurKernel::identity();
  int scale = 2;

  static double default_sigma(int scale) { return 0.8 * scale / 2.0; }

  static DegradationModel gaussian(int scale, double sigma = 0.0) {
    if (scale < 2 || scale > 4) throw InvalidArgument("scale must be 2, 3 or 4");
    return {BlurKernel::gaussian(sigma > 0.0 ? sigma : default_sigma(scale)), scale};
  }
};

inline Image decimate(const Image& img, int scale) {
  const int w = (img.width() + scale - 1) / scale;
  const int h = (img.height() + scale - 1) / scale;
  Image out(w, h, 0.0, img.range());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out(r, c) = img(r * scale, c * scale);
  return out;
}

inline Image degrade(const Image& img, const DegradationModel& model) {
  if (model.scale < 1) throw InvalidArgument("scale must be positive");
  return decimate(convolve(img, model.blur), model.scale);
}

/// Keys cubic convolution kernel with a = -0.5.
inline double keys_cubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace detail {
struct CubicTaps {
  int base;
  double w[4];
};

inline CubicTaps cubic_taps(double pos) {
  const double f = std::floor(pos);
  const double t = pos - f;
  CubicTaps taps{static_cast<int>(f) - 1, {keys_cubic(t + 1.0), keys_cubic(t), keys_cubic(1.0 - t), keys_cubic(2.0 - t)}};
  const double s = taps.w[0] + taps.w[1] + taps.w[2] + taps.w[3];
  for (double& v : taps.w) v /= s;
  return taps;
}
}  // namespace detail

/// Separable bicubic resampling onto an out_width x out_height grid. Output
/// sample (r, c) reads the input at (r * step_y, c * step_x): sample grids are
/// aligned at the top-left pixel, which is the same alignment decimate() uses.
inline Image resample_bicubic(const Image& img, int out_width, int out_height, double step_x, double step_y) {
  if (out_width < 1 || out_height < 1) throw InvalidArgument("resampled image would be empty");
  std::vector<detail::CubicTaps> col_taps(out_width);
  for (int c = 0; c < out_width; ++c) col_taps[c] = detail::cubic_taps(c * step_x);
  Image tmp(out_width, img.height(), 0.0, img.range());
  for (int r = 0; r < img.height(); ++r)
    for (int c = 0; c < out_width; ++c) {
      const auto& t = col_taps[c];
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += t.w[k] * img.clamped(r, t.base + k);
      tmp(r, c) = acc;
    }
  Image out(out_width, out_height, 0.0, img.range());
  for (int r = 0; r < out_height; ++r) {
    const auto t = detail::cubic_taps(r * step_y);
    for (int c = 0; c < out_width; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += t.w[k] * tmp.clamped(t.base + k, c);
      out(r, c) = acc;
    }
  }
  return out;
}

/// Bicubic resize by factor; output dims are round(dims * factor).
inline Image bicubic_resample(const Image& img, double factor) {
  if (!(factor > 0.0)) throw InvalidArgument("resample factor must be positive");
  const long w = std::lround(img.width() * factor);
  const long h = std::lround(img.height() * factor);
  if (w < 1 || h < 1) throw InvalidArgument("resample factor produces an empty image");
  if (factor == 1.0) return img;
  return resample_bicubic(img, static_cast<int>(w), static_cast<int>(h), 1.0 / factor, 1.0 / factor);
}

/// Upsamples an LR image onto the HR grid of the given size (the
/// "mid-resolution" image).
inline Image upsample_to(const Image& lr, int scale, int width, int height) {
  return resample_bicubic(lr, width, height, 1.0 / scale, 1.0 / scale);
}

// --- luminance handling ----------------------------------------------------

struct ColorImage {
  Image r, g, b;
};

struct YCbCrImage {
  Image y, cb, cr;
};

inline void check_same_shape(const Image& a, const Image& b, const Image& c) {
  if (!a.same_shape(b) || !a.same_shape(c)) throw InvalidArgument("channel dimensions differ");
}

/// Full-range ITU-R BT.601 (JPEG) conversion, chroma centered at 128.
inline YCbCrImage to_ycbcr(const ColorImage& rgb) {
  check_same_shape(rgb.r, rgb.g, rgb.b);
  YCbCrImage out{rgb.r, rgb.r, rgb.r};
  for (std::size_t i = 0; i < rgb.r.size(); ++i) {
    const double R = rgb.r.pixels()[i], G = rgb.g.pixels()[i], B = rgb.b.pixels()[i];
    out.y.pixels()[i] = 0.299 * R + 0.587 * G + 0.114 * B;
    out.cb.pixels()[i] = 128.0 - 0.168735891647856 * R - 0.331264108352144 * G + 0.5 * B;
    out.cr.pixels()[i] = 128.0 + 0.5 * R - 0.418687589158970 * G - 0.081312410841030 * B;
  }
  return out;
}

inline Image luma_extract(const ColorImage& rgb) { return to_ycbcr(rgb).y; }

inline ColorImage luma_merge(const Image& y, const Image& cb, const Image& cr) {
  check_same_shape(y, cb, cr);
  ColorImage out{y, y, y};
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double Y = y.pixels()[i], Cb = cb.pixels()[i] - 128.0, Cr = cr.pixels()[i] - 128.0;
    out.r.pixels()[i] = Y + 1.402 * Cr;
    out.g.pixels()[i] = Y - 0.344136286201022 * Cb - 0.714136286201022 * Cr;
    out.b.pixels()[i] = Y + 1.772 * Cb;
  }
  return out;
}

}  // namespace cssr
