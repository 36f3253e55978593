#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cssr/errors.hpp"
#include "cssr/image.hpp"
#include "cssr/sparse.hpp"

namespace cssr {

enum class PatchClass : std::uint8_t { Smooth = 0, Texture = 1, Edge = 2 };

inline constexpr std::array<PatchClass, 3> kAllClasses{PatchClass::Smooth, PatchClass::Texture, PatchClass::Edge};

inline std::string_view to_string(PatchClass c) {
  switch (c) {
    case PatchClass::Smooth: return "smooth";
    case PatchClass::Texture: return "texture";
    case PatchClass::Edge: return "edge";
  }
  return "unknown";
}

inline std::optional<PatchClass> parse_patch_class(std::string_view s) {
  for (PatchClass c : kAllClasses)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

/// Gain applied to the raw measurement-domain activity before comparing it
/// with T1/T2. Frozen from one gain sweep (`cssr sweep`) over the labeled
/// shepp-like phantom at 8x8 blocks, rate 0.4; re-run the sweep when moving
/// to another block size or intensity scale.
inline constexpr double kCalibratedFeatureGain = 316.22776601683796;  // 10^2.5

struct ClassifierConfig {
  int blockSize = 8;
  double samplingRate = 0.4;
  double t1 = 3e6;
  double t2 = 3e7;
  double featureGain = kCalibratedFeatureGain;
  std::uint64_t seed = 20190401;

  int dimension() const { return blockSize * blockSize; }
  int measurement_count() const {
    return std::clamp(static_cast<int>(std::ceil(samplingRate * dimension() - 1e-9)), 1, dimension());
  }

  void validate() const {
    if (blockSize < 2) throw InvalidArgument("classifier block size must be >= 2");
    if (!(samplingRate > 0.0 && samplingRate <= 1.0)) throw InvalidArgument("sampling rate must be in (0, 1]");
    if (!(t1 > 0.0 && t1 < t2)) throw InvalidArgument("thresholds must satisfy 0 < T1 < T2");
    if (!(featureGain > 0.0)) throw InvalidArgument("feature gain must be positive");
  }

  /// Non-fatal findings, for the caller to log.
  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    if (samplingRate < 0.4)
      out.push_back("sampling rate " + std::to_string(samplingRate) +
                    " is below 0.4; measurement-domain classification becomes unreliable");
    return out;
  }
};

/// Gaussian measurement matrix sized for the config's block.
inline MeasurementMatrix classifier_matrix(const ClassifierConfig& cfg) {
  cfg.validate();
  return gaussian_matrix(cfg.measurement_count(), cfg.dimension(), cfg.seed);
}

inline Vector patch_vector(const Patch& p) {
  return Eigen::Map<const Vector>(p.values.data(), static_cast<Eigen::Index>(p.values.size()));
}

/// Phi * vec(p), with row-major vectorization.
inline Vector measure_patch(const Patch& p, const MeasurementMatrix& phi) {
  if (static_cast<std::size_t>(phi.cols()) != p.values.size())
    throw InvalidArgument("measurement matrix has " + std::to_string(phi.cols()) + " columns, patch has " +
                          std::to_string(p.values.size()) + " values");
  return phi.entries * patch_vector(p);
}

/// Sum of squared deviations of the measurements about their mean.
inline double activity_feature(const Vector& y) {
  if (y.size() < 2) throw InvalidArgument("activity feature needs at least two measurements");
  const double mean = y.mean();
  return (y.array() - mean).square().sum();
}

/// Activity of the zero-mean patch in the measurement domain, times gain.
/// Removing the block mean is the same as subtracting mean * (Phi 1) from
/// the measurements, so only the block's DC value is needed alongside y.
inline double patch_feature(const Patch& p, const MeasurementMatrix& phi, double gain) {
  Patch centered = p;
  const double m = p.mean();
  for (double& v : centered.values) v -= m;
  return gain * activity_feature(measure_patch(centered, phi));
}

/// Half-open bands: [0, T1) smooth, [T1, T2) texture, [T2, inf) edge.
inline PatchClass classify_feature(double f, const ClassifierConfig& cfg) {
  if (f < cfg.t1) return PatchClass::Smooth;
  if (f < cfg.t2) return PatchClass::Texture;
  return PatchClass::Edge;
}

inline PatchClass classify_patch(const Patch& p, const ClassifierConfig& cfg, const MeasurementMatrix& phi) {
  if (p.size != cfg.blockSize) throw InvalidArgument("patch size does not match classifier block size");
  return classify_feature(patch_feature(p, phi, cfg.featureGain), cfg);
}

/// Classifies arbitrary patches of one image through the co-centered
/// classification block (clamped to the image), bridging reconstruction
/// patch sizes and the classifier's block size.
class BlockClassifier {
 public:
  BlockClassifier(const Image& img, ClassifierConfig cfg, const MeasurementMatrix& phi)
      : img_(&img), cfg_(cfg), phi_(&phi) {
    cfg_.validate();
    if (cfg_.blockSize > std::min(img.width(), img.height()))
      throw InvalidArgument("image is smaller than the classification block");
    if (phi.cols() != cfg_.dimension()) throw InvalidArgument("measurement matrix does not match block size");
  }

  /// Origin of the classification block co-centered with a patch.
  std::pair<int, int> block_origin(int row, int col, int patchSize) const {
    const int off = static_cast<int>(std::floor((patchSize - cfg_.blockSize) / 2.0));
    return {std::clamp(row + off, 0, img_->height() - cfg_.blockSize),
            std::clamp(col + off, 0, img_->width() - cfg_.blockSize)};
  }

  double feature_at(int row, int col, int patchSize) const {
    const auto [r, c] = block_origin(row, col, patchSize);
    return patch_feature(crop_patch(*img_, r, c, cfg_.blockSize), *phi_, cfg_.featureGain);
  }

  PatchClass classify_at(int row, int col, int patchSize) const {
    return classify_feature(feature_at(row, col, patchSize), cfg_);
  }

 private:
  const Image* img_;
  ClassifierConfig cfg_;
  const MeasurementMatrix* phi_;
};

struct ClassCounts {
  std::array<std::size_t, 3> counts{};
  std::size_t& operator[](PatchClass c) { return counts[static_cast<std::size_t>(c)]; }
  std::size_t operator[](PatchClass c) const { return counts[static_cast<std::size_t>(c)]; }
  std::size_t total() const { return counts[0] + counts[1] + counts[2]; }
};

inline std::uint8_t class_gray_level(PatchClass c) {
  switch (c) {
    case PatchClass::Smooth: return 0;
    case PatchClass::Texture: return 128;
    case PatchClass::Edge: return 255;
  }
  return 0;
}

struct ClassMap {
  Image levels;  // 0 / 128 / 255 per pixel, constant over each block
  std::vector<PatchClass> blockClasses;
  int blocksPerRow = 0;
  ClassCounts counts;
};

/// Classifies the image on a block grid (stride = block size, last block
/// clamped to the edge) and paints a three-level map.
inline ClassMap class_map(const Image& img, const ClassifierConfig& cfg, const MeasurementMatrix& phi) {
  const PatchGrid grid = extract_patches(img, cfg.blockSize, 0);
  ClassMap out{Image(img.width(), img.height()), {}, static_cast<int>(grid.colOrigins.size()), {}};
  for (const Patch& p : grid.patches) {
    const PatchClass c = classify_patch(p, cfg, phi);
    out.blockClasses.push_back(c);
    ++out.counts[c];
    for (int r = 0; r < p.size; ++r)
      for (int col = 0; col < p.size; ++col) out.levels(p.row + r, p.col + col) = class_gray_level(c);
  }
  return out;
}

// --- measurement/frequency covariance relation ---------------------------------

/// Orthonormal 2-D DCT-II basis for size x size blocks. Row k is the k-th
/// basis vector (row-major vectorization) in zigzag order, lowest frequency
/// first.
inline Matrix dct_basis_2d(int size) {
  const int n = size * size;
  std::vector<std::pair<int, int>> order;
  for (int s = 0; s <= 2 * (size - 1); ++s) {
    std::vector<std::pair<int, int>> diag;
    for (int u = 0; u < size; ++u) {
      const int v = s - u;
      if (v >= 0 && v < size) diag.emplace_back(u, v);
    }
    if (s % 2 == 0) std::reverse(diag.begin(), diag.end());
    order.insert(order.end(), diag.begin(), diag.end());
  }
  auto coef = [size](int k, int x) {
    const double a = k == 0 ? std::sqrt(1.0 / size) : std::sqrt(2.0 / size);
    return a * std::cos(std::numbers::pi * (2 * x + 1) * k / (2.0 * size));
  };
  Matrix basis(n, n);
  for (int k = 0; k < n; ++k) {
    const auto [u, v] = order[k];
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) basis(k, r * size + c) = coef(u, r) * coef(v, c);
  }
  return basis;
}

struct CovarianceDiagnostic {
  double relativeError = 0.0;   // trace-normalized Frobenius mismatch
  double traceRatio = 0.0;      // tr(C_y) / tr(C_q)
  double predictedRatio = 0.0;  // n / m
};

namespace detail {
inline Matrix sample_covariance(const Matrix& samples) {  // one sample per column
  const Vector mean = samples.rowwise().mean();
  const Matrix centered = samples.colwise() - mean;
  return centered * centered.transpose() / static_cast<double>(samples.cols() - 1);
}
}  // namespace detail

/// Empirical check of the measurement/frequency covariance relation.
///
/// C_y is the sample covariance of the m measurements per patch divided by
/// m, C_q that of the n DCT coefficients divided by n (per-sample
/// normalization), so tr(C_y)/tr(C_q) estimates n/m when Phi has N(0, 1/m)
/// entries. relativeError compares the shapes: the trace-normalized C_y
/// against the trace-normalized leading dctDim x dctDim block of C_q, which
/// needs dctDim == m. Identical patches give zero covariances; the error is
/// then 0 and the ratio NaN.
inline CovarianceDiagnostic covariance_linearity_check(std::span<const Patch> patches, const MeasurementMatrix& phi,
                                                       int dctDim, bool removePatchMean = true) {
  if (patches.size() < 2) throw InvalidArgument("covariance check needs at least two patches");
  const int size = patches.front().size;
  const int n = size * size;
  const int m = phi.rows();
  if (phi.cols() != n) throw InvalidArgument("measurement matrix does not match patch size");
  if (dctDim != m) throw InvalidArgument("dctDim must equal the number of measurements");

  const Matrix dct = dct_basis_2d(size);
  Matrix xs(n, static_cast<Eigen::Index>(patches.size()));
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (patches[i].size != size) throw InvalidArgument("patches differ in size");
    Vector v = patch_vector(patches[i]);
    if (removePatchMean) v.array() -= v.mean();
    xs.col(static_cast<Eigen::Index>(i)) = v;
  }
  const Matrix cy = detail::sample_covariance(phi.entries * xs) / m;
  const Matrix cq = detail::sample_covariance(dct * xs) / n;

  CovarianceDiagnostic out;
  out.predictedRatio = static_cast<double>(n) / m;
  const double try_ = cy.trace();
  const double trq = cq.trace();
  const Matrix cq_lead = cq.topLeftCorner(dctDim, dctDim);
  const double trq_lead = cq_lead.trace();
  // Rounding in the sample mean leaves residue of order eps^2 * |x|^2.
  const double floor = 1e-24 * xs.squaredNorm() / static_cast<double>(xs.cols());
  if (try_ <= floor && trq <= floor) {
    out.relativeError = 0.0;
    out.traceRatio = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  out.traceRatio = trq > 0.0 ? try_ / trq : std::numeric_limits<double>::infinity();
  if (trq_lead <= 0.0 || try_ <= 0.0) {
    out.relativeError = 1.0;
    return out;
  }
  const Matrix ny = cy / try_;
  const Matrix nq = cq_lead / trq_lead;
  out.relativeError = (ny - nq).norm() / nq.norm();
  return out;
}

}  // namespace cssr
