#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cssr/errors.hpp"
#include "cssr/image.hpp"
#include "cssr/rng.hpp"

namespace cssr {

enum class PhantomKind { Disks, SheppLike, CheckerEdge };

inline std::string_view to_string(PhantomKind k) {
  switch (k) {
    case PhantomKind::Disks: return "disks";
    case PhantomKind::SheppLike: return "shepp-like";
    case PhantomKind::CheckerEdge: return "checker-edge";
  }
  return "?";
}

inline std::optional<PhantomKind> parse_phantom_kind(std::string_view s) {
  if (s == "disks") return PhantomKind::Disks;
  if (s == "shepp-like") return PhantomKind::SheppLike;
  if (s == "checker-edge") return PhantomKind::CheckerEdge;
  return std::nullopt;
}

/// Ground-truth region of a pixel. Edge marks pixels straddling a region
/// boundary.
enum class RegionLabel : std::uint8_t { Background, Smooth, Texture, Edge };

struct Phantom {
  Image image;
  std::vector<RegionLabel> labels;  // row-major, one per pixel

  RegionLabel label(int row, int col) const {
    return labels[static_cast<std::size_t>(row) * image.width() + col];
  }
};

namespace detail {

struct Shade {
  double value;
  RegionLabel region;
  int part;  // distinct per connected component, for boundary detection
};

struct Ellipse {
  double cx, cy, ax, ay, angle;

  bool contains(double x, double y) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = ((x - cx) * c + (y - cy) * s) / ax;
    const double v = (-(x - cx) * s + (y - cy) * c) / ay;
    return u * u + v * v <= 1.0;
  }
};

/// Renders a scene given in normalized coordinates x, y in [-1, 1] with 4x4
/// supersampling. A pixel whose subsamples disagree on the part is labeled
/// Edge.
template <class Scene>
Phantom render(int width, int height, Scene&& scene) {
  if (width < 8 || height < 8) throw InvalidArgument("phantom must be at least 8x8");
  constexpr int kSub = 4;
  Phantom out{Image(width, height), std::vector<RegionLabel>(static_cast<std::size_t>(width) * height)};
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      double acc = 0.0;
      int firstPart = -1;
      bool mixed = false;
      RegionLabel region = RegionLabel::Background;
      for (int i = 0; i < kSub; ++i)
        for (int j = 0; j < kSub; ++j) {
          const double x = 2.0 * (c + (j + 0.5) / kSub) / width - 1.0;
          const double y = 2.0 * (r + (i + 0.5) / kSub) / height - 1.0;
          const Shade s = scene(x, y);
          acc += s.value;
          if (firstPart < 0) {
            firstPart = s.part;
            region = s.region;
          } else if (s.part != firstPart) {
            mixed = true;
          }
        }
      out.image(r, c) = acc / (kSub * kSub);
      out.labels[static_cast<std::size_t>(r) * width + c] = mixed ? RegionLabel::Edge : region;
    }
  return out;
}

inline Phantom shepp_like(int width, int height, Rng& rng) {
  auto jitter = [&](double amount) { return (2.0 * rng.uniform() - 1.0) * amount; };
  const Ellipse skull{jitter(0.02), jitter(0.02), 0.72 + jitter(0.03), 0.92 + jitter(0.03), jitter(0.05)};
  const Ellipse brain{skull.cx, skull.cy - 0.02, skull.ax - 0.07, skull.ay - 0.08, skull.angle};
  const Ellipse ventricleL{-0.20 + jitter(0.03), -0.05 + jitter(0.03), 0.10, 0.28, 0.30 + jitter(0.05)};
  const Ellipse ventricleR{0.20 + jitter(0.03), -0.05 + jitter(0.03), 0.12, 0.32, -0.30 + jitter(0.05)};
  const Ellipse texture{jitter(0.05), 0.50 + jitter(0.04), 0.30, 0.20, jitter(0.2)};
  const Ellipse blobA{-0.35 + jitter(0.04), 0.30 + jitter(0.04), 0.07, 0.07, 0.0};
  const Ellipse blobB{0.30 + jitter(0.04), -0.45 + jitter(0.04), 0.06, 0.09, 0.4};
  const double period = 0.16 + jitter(0.03);  // in normalized units
  const double theta = std::numbers::pi / 4.0 + jitter(0.4);
  const double fx = std::cos(theta) / period, fy = std::sin(theta) / period;
  const double skullLevel = 225.0 + jitter(10.0), tissueLevel = 105.0 + jitter(10.0);
  const double ventricleLevel = 45.0 + jitter(8.0), blobLevel = 165.0 + jitter(10.0);

  return render(width, height, [&](double x, double y) -> Shade {
    if (!skull.contains(x, y)) return {0.0, RegionLabel::Background, 0};
    if (!brain.contains(x, y)) return {skullLevel, RegionLabel::Smooth, 1};
    if (ventricleL.contains(x, y)) return {ventricleLevel, RegionLabel::Smooth, 3};
    if (ventricleR.contains(x, y)) return {ventricleLevel, RegionLabel::Smooth, 4};
    if (blobA.contains(x, y)) return {blobLevel, RegionLabel::Smooth, 5};
    if (blobB.contains(x, y)) return {blobLevel, RegionLabel::Smooth, 6};
    if (texture.contains(x, y)) {
      const double wave = std::sin(2.0 * std::numbers::pi * (fx * x + fy * y));
      return {tissueLevel + 12.0 + 30.0 * wave, RegionLabel::Texture, 7};
    }
    // Gentle shading keeps tissue smooth but not flat.
    return {tissueLevel + 10.0 * x - 6.0 * y, RegionLabel::Smooth, 2};
  });
}

inline Phantom disks(int width, int height, Rng& rng) {
  struct Disk {
    Ellipse shape;
    double level;
  };
  std::vector<Disk> list;
  const int count = 5 + static_cast<int>(rng.below(3));
  for (int i = 0; i < count; ++i) {
    const double radius = 0.12 + 0.16 * rng.uniform();
    list.push_back({{-0.75 + 1.5 * rng.uniform(), -0.75 + 1.5 * rng.uniform(), radius, radius, 0.0},
                    70.0 + 160.0 * rng.uniform()});
  }
  const double background = 30.0 + 20.0 * rng.uniform();
  return render(width, height, [&](double x, double y) -> Shade {
    // Later disks are drawn on top.
    for (int i = static_cast<int>(list.size()) - 1; i >= 0; --i)
      if (list[i].shape.contains(x, y)) return {list[i].level, RegionLabel::Smooth, i + 1};
    return {background, RegionLabel::Background, 0};
  });
}

inline Phantom checker_edge(int width, int height, Rng& rng) {
  const double cell = 0.18 + 0.08 * rng.uniform();  // normalized checker cell
  const double lo = 50.0 + 30.0 * rng.uniform(), hi = 170.0 + 40.0 * rng.uniform();
  const double slope = 0.3 + 0.4 * rng.uniform(), offset = -0.2 + 0.4 * rng.uniform();
  const double gradBase = 90.0 + 30.0 * rng.uniform();
  return render(width, height, [&](double x, double y) -> Shade {
    if (x < -0.05) {
      const long i = static_cast<long>(std::floor((x + 1.0) / cell)), j = static_cast<long>(std::floor((y + 1.0) / cell));
      const bool dark = ((i + j) & 1) == 0;
      return {dark ? lo : hi, RegionLabel::Texture, dark ? 1 : 2};
    }
    if (y > slope * x + offset) return {gradBase + 40.0 * x + 20.0 * y, RegionLabel::Smooth, 3};
    return {gradBase + 90.0 - 15.0 * y, RegionLabel::Smooth, 4};
  });
}

}  // namespace detail

/// Deterministic synthetic test image with a per-pixel region label map.
inline Phantom make_phantom(int width, int height, PhantomKind kind, std::uint64_t seed) {
  Rng rng(seed);
  switch (kind) {
    case PhantomKind::Disks: return detail::disks(width, height, rng);
    case PhantomKind::SheppLike: return detail::shepp_like(width, height, rng);
    case PhantomKind::CheckerEdge: return detail::checker_edge(width, height, rng);
  }
  throw InvalidArgument("unknown phantom kind");
}

}  // namespace cssr
