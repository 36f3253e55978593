#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include "cssr/errors.hpp"
#include "cssr/image.hpp"

namespace cssr {

inline constexpr double kPeak = 255.0;
inline constexpr double kSsimC1 = (0.01 * kPeak) * (0.01 * kPeak);
inline constexpr double kSsimC2 = (0.03 * kPeak) * (0.03 * kPeak);

namespace detail {
inline void check_same_dims(const Image& x, const Image& y) {
  if (!x.same_shape(y))
    throw InvalidArgument("images differ in size: " + std::to_string(x.width()) + "x" + std::to_string(x.height()) +
                          " vs " + std::to_string(y.width()) + "x" + std::to_string(y.height()));
}
}  // namespace detail

inline double mse(const Image& x, const Image& y) {
  detail::check_same_dims(x, y);
  const auto a = x.pixels(), b = y.pixels();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

inline double psnr_from_mse(double m) {
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(kPeak * kPeak / m);
}

/// Peak 255 regardless of the input's range; +inf for identical images.
inline double psnr(const Image& x, const Image& y) { return psnr_from_mse(mse(x, y)); }

/// Mean local SSIM over all window x window blocks at stride 1, with uniform
/// weights and population statistics.
inline double ssim(const Image& x, const Image& y, int window = 8) {
  detail::check_same_dims(x, y);
  if (window < 1) throw InvalidArgument("SSIM window must be positive");
  if (x.width() < window || x.height() < window)
    throw InvalidArgument("image is smaller than the " + std::to_string(window) + "x" + std::to_string(window) +
                          " SSIM window");
  const double n = static_cast<double>(window) * window;
  double total = 0.0;
  long count = 0;
  for (int r = 0; r + window <= x.height(); ++r)
    for (int c = 0; c + window <= x.width(); ++c) {
      double sx = 0.0, sy = 0.0;
      for (int i = 0; i < window; ++i)
        for (int j = 0; j < window; ++j) {
          sx += x(r + i, c + j);
          sy += y(r + i, c + j);
        }
      const double mx = sx / n, my = sy / n;
      double vx = 0.0, vy = 0.0, cxy = 0.0;
      for (int i = 0; i < window; ++i)
        for (int j = 0; j < window; ++j) {
          const double dx = x(r + i, c + j) - mx, dy = y(r + i, c + j) - my;
          vx += dx * dx;
          vy += dy * dy;
          cxy += dx * dy;
        }
      vx /= n;
      vy /= n;
      cxy /= n;
      total += ((2.0 * mx * my + kSsimC1) * (2.0 * cxy + kSsimC2)) /
               ((mx * mx + my * my + kSsimC1) * (vx + vy + kSsimC2));
      ++count;
    }
  return total / static_cast<double>(count);
}

struct MetricReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
  double runtimeMs = 0.0;
};

inline MetricReport score(const Image& estimate, const Image& truth) {
  MetricReport r;
  r.mse = mse(estimate, truth);
  r.psnr = psnr_from_mse(r.mse);
  r.ssim = ssim(estimate, truth);
  return r;
}

/// "inf" for the identical-image sentinel, otherwise fixed notation.
inline std::string format_psnr(double v, int digits = 4) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace cssr
