#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cssr/classifier.hpp"
#include "cssr/errors.hpp"
#include "cssr/image.hpp"
#include "cssr/parallel.hpp"
#include "cssr/rng.hpp"
#include "cssr/sparse.hpp"

namespace cssr {

// --- LR feature operator F ---------------------------------------------------------

enum class FeatureMode : std::uint8_t { GradientLaplacian = 0, Identity = 1 };

inline int lr_dimension(FeatureMode mode, int patchSize) {
  return (mode == FeatureMode::GradientLaplacian ? 4 : 1) * patchSize * patchSize;
}

/// Margin a neighborhood needs around the patch for the widest stencil.
inline constexpr int kFeatureMargin = 2;

namespace detail {
// Responses at (r, c) of an image-like accessor: d/dx [-1 0 1], d/dy, and the
// [1 0 -2 0 1] second differences along x and y.
template <class At>
std::array<double, 4> stencil_responses(At&& at, int r, int c) {
  return {at(r, c + 1) - at(r, c - 1), at(r + 1, c) - at(r - 1, c),
          at(r, c - 2) - 2.0 * at(r, c) + at(r, c + 2), at(r - 2, c) - 2.0 * at(r, c) + at(r + 2, c)};
}
}  // namespace detail

/// Gradient/Laplacian feature bank of the central patchSize x patchSize
/// block of a neighborhood with a two-pixel margin. Output layout is the
/// four response blocks concatenated, each row-major: [gx | gy | lx | ly].
inline Vector lr_feature_operator(const Patch& neighborhood, int patchSize) {
  if (neighborhood.size != patchSize + 2 * kFeatureMargin)
    throw InvalidArgument("feature neighborhood must be patchSize + 4 wide");
  const int n = patchSize * patchSize;
  Vector f(4 * n);
  auto at = [&](int r, int c) { return neighborhood(r, c); };
  for (int r = 0; r < patchSize; ++r)
    for (int c = 0; c < patchSize; ++c) {
      const auto resp = detail::stencil_responses(at, r + kFeatureMargin, c + kFeatureMargin);
      for (int k = 0; k < 4; ++k) f[k * n + r * patchSize + c] = resp[k];
    }
  return f;
}

/// Whole-image feature responses with replicate borders, so per-patch
/// features are gathered instead of recomputed.
struct FeatureMaps {
  FeatureMode mode = FeatureMode::GradientLaplacian;
  std::vector<Image> maps;  // four response images, or the source image in Identity mode
};

inline FeatureMaps compute_feature_maps(const Image& mid, FeatureMode mode) {
  FeatureMaps out{mode, {}};
  if (mode == FeatureMode::Identity) {
    out.maps.push_back(mid);
    return out;
  }
  for (int k = 0; k < 4; ++k) out.maps.emplace_back(mid.width(), mid.height(), 0.0, mid.range());
  auto at = [&](int r, int c) { return mid.clamped(r, c); };
  for (int r = 0; r < mid.height(); ++r)
    for (int c = 0; c < mid.width(); ++c) {
      const auto resp = detail::stencil_responses(at, r, c);
      for (int k = 0; k < 4; ++k) out.maps[k](r, c) = resp[k];
    }
  return out;
}

/// Feature vector F y of the patch at (row, col). Identity mode returns the
/// zero-mean patch.
inline Vector gather_feature(const FeatureMaps& fm, int row, int col, int patchSize) {
  const int n = patchSize * patchSize;
  if (fm.mode == FeatureMode::Identity) {
    Vector v(n);
    for (int r = 0; r < patchSize; ++r)
      for (int c = 0; c < patchSize; ++c) v[r * patchSize + c] = fm.maps[0](row + r, col + c);
    v.array() -= v.mean();
    return v;
  }
  Vector v(4 * n);
  for (int k = 0; k < 4; ++k)
    for (int r = 0; r < patchSize; ++r)
      for (int c = 0; c < patchSize; ++c) v[k * n + r * patchSize + c] = fm.maps[k](row + r, col + c);
  return v;
}

// --- training data ---------------------------------------------------------------

struct TrainingPair {
  Vector hrVector;   // HR patch minus its mean
  Vector lrFeature;  // F applied to the co-located mid-resolution patch
  PatchClass cls = PatchClass::Smooth;
};

using TrainingSet = std::map<PatchClass, std::vector<TrainingPair>>;

struct TrainingSetOptions {
  int patchSize = 5;
  int sampleStride = 1;
  std::size_t perClassCap = 20000;
  std::size_t minPerClass = 0;  // usually the atom count K
  std::uint64_t seed = 1;
  FeatureMode featureMode = FeatureMode::GradientLaplacian;
};

/// Degrades each HR image, upsamples it back to the HR grid, and buckets
/// co-located (HR, LR-feature) patch pairs by the class of the
/// mid-resolution patch. Buckets over the cap are uniformly subsampled.
inline TrainingSet build_training_set(std::span<const Image> hrImages, const DegradationModel& model,
                                      const ClassifierConfig& cfg, const TrainingSetOptions& opt) {
  if (hrImages.empty()) throw InvalidArgument("training needs at least one HR image");
  const MeasurementMatrix phi = classifier_matrix(cfg);
  TrainingSet set;
  for (PatchClass c : kAllClasses) set[c];
  const int p = opt.patchSize;
  for (const Image& hr : hrImages) {
    if (hr.width() <= p * model.scale || hr.height() <= p * model.scale)
      throw InvalidArgument("training image is too small for the patch size and scale");
    const Image lr = degrade(hr, model);
    const Image mid = upsample_to(lr, model.scale, hr.width(), hr.height());
    const FeatureMaps fm = compute_feature_maps(mid, opt.featureMode);
    const BlockClassifier classifier(mid, cfg, phi);
    for (int r : axis_origins(hr.height(), p, opt.sampleStride))
      for (int c : axis_origins(hr.width(), p, opt.sampleStride)) {
        TrainingPair pair;
        pair.hrVector = patch_vector(crop_patch(hr, r, c, p));
        pair.hrVector.array() -= pair.hrVector.mean();
        pair.lrFeature = gather_feature(fm, r, c, p);
        pair.cls = classifier.classify_at(r, c, p);
        set[pair.cls].push_back(std::move(pair));
      }
  }
  Rng rng(opt.seed);
  for (PatchClass c : kAllClasses) {
    auto& bucket = set[c];
    if (bucket.size() > opt.perClassCap) {
      // Partial Fisher-Yates: the first perClassCap slots become a uniform sample.
      for (std::size_t i = 0; i < opt.perClassCap; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(bucket.size() - i));
        std::swap(bucket[i], bucket[j]);
      }
      bucket.resize(opt.perClassCap);
    }
  }
  for (PatchClass c : kAllClasses) {
    if (set[c].size() < opt.minPerClass) {
      std::string msg = "insufficient training data: class '" + std::string(to_string(c)) + "' has " +
                        std::to_string(set[c].size()) + " samples, needs " + std::to_string(opt.minPerClass);
      throw InsufficientDataError(msg, std::string(to_string(c)), set[c].size(), opt.minPerClass);
    }
  }
  return set;
}

/// All classes merged, for single-dictionary training.
inline std::vector<TrainingPair> pool_training_set(const TrainingSet& set) {
  std::vector<TrainingPair> all;
  for (const auto& [cls, bucket] : set) all.insert(all.end(), bucket.begin(), bucket.end());
  return all;
}

// --- coupled dictionaries ----------------------------------------------------------

struct TrainingMeta {
  std::size_t sampleCount = 0;
  int iterations = 0;
  std::uint64_t seed = 0;
  std::vector<double> objectiveTrace;  // mean squared stacked residual after each coding step
};

struct DictionaryPair {
  std::optional<PatchClass> cls;  // nullopt: pooled over all classes
  Matrix dh;                      // hrDim x K
  Matrix dl;                      // lrDim x K
  int patchSize = 5;
  int scale = 2;
  TrainingMeta meta;

  int atoms() const { return static_cast<int>(dh.cols()); }
  int hr_dim() const { return static_cast<int>(dh.rows()); }
  int lr_dim() const { return static_cast<int>(dl.rows()); }
  FeatureMode feature_mode() const {
    return lr_dim() == patchSize * patchSize ? FeatureMode::Identity : FeatureMode::GradientLaplacian;
  }

  /// Dimension-balanced stacked dictionary [Dh/sqrt(hrDim); Dl/sqrt(lrDim)].
  Matrix stacked() const {
    Matrix s(dh.rows() + dl.rows(), dh.cols());
    s.topRows(dh.rows()) = dh / std::sqrt(static_cast<double>(hr_dim()));
    s.bottomRows(dl.rows()) = dl / std::sqrt(static_cast<double>(lr_dim()));
    return s;
  }
};

inline bool same_content(const DictionaryPair& a, const DictionaryPair& b) {
  return a.cls == b.cls && a.patchSize == b.patchSize && a.scale == b.scale && a.meta.seed == b.meta.seed &&
         a.dh.rows() == b.dh.rows() && a.dh.cols() == b.dh.cols() && a.dl.rows() == b.dl.rows() &&
         a.dl.cols() == b.dl.cols() && a.dh == b.dh && a.dl == b.dl;
}

struct DictionaryTrainingOptions {
  int atoms = 512;
  int sparsity = 3;
  int iterations = 20;
  std::uint64_t seed = 1;
  int scale = 2;
  int powerSteps = 10;  // power iterations per rank-1 atom update
};

namespace detail {
struct SparseColumn {
  std::vector<int> idx;
  std::vector<double> val;
};
}  // namespace detail

/// Coupled K-SVD on stacked, dimension-balanced [hr/sqrt(hrDim); lr/sqrt(lrDim)]
/// vectors, so HR and LR atoms share one sparse code.
///
/// Each iteration sparse-codes all samples with OMP (a sample keeps its
/// previous code when the new one is not better, so the mean squared
/// residual never increases) and then updates atoms one at a time with a
/// rank-1 fit of their residual, computed by power iteration started from
/// the current atom. Atoms no sample uses are replaced by the
/// worst-represented sample. iterations = 0 returns the initial atoms.
inline DictionaryPair train_dictionary_pair(std::span<const TrainingPair> pairs, const DictionaryTrainingOptions& opt) {
  const int K = opt.atoms;
  if (K < 1 || opt.sparsity < 1) throw InvalidArgument("atoms and sparsity must be positive");
  if (pairs.size() < static_cast<std::size_t>(K))
    throw InsufficientDataError("insufficient training data: " + std::to_string(pairs.size()) +
                                    " samples for " + std::to_string(K) + " atoms",
                                "samples", pairs.size(), static_cast<std::size_t>(K));
  const int hrDim = static_cast<int>(pairs.front().hrVector.size());
  const int lrDim = static_cast<int>(pairs.front().lrFeature.size());
  const int patchSize = static_cast<int>(std::lround(std::sqrt(static_cast<double>(hrDim))));
  if (patchSize * patchSize != hrDim) throw InvalidArgument("HR vectors are not square patches");
  const int dim = hrDim + lrDim;
  const auto N = static_cast<Eigen::Index>(pairs.size());
  std::optional<PatchClass> cls = pairs.front().cls;
  for (const auto& p : pairs) {
    if (p.hrVector.size() != hrDim || p.lrFeature.size() != lrDim)
      throw InvalidArgument("training pairs differ in dimension");
    if (cls && p.cls != *cls) cls.reset();
  }

  Matrix V(dim, N);
  const double wh = 1.0 / std::sqrt(static_cast<double>(hrDim));
  const double wl = 1.0 / std::sqrt(static_cast<double>(lrDim));
  for (Eigen::Index i = 0; i < N; ++i) {
    V.col(i).head(hrDim) = pairs[i].hrVector * wh;
    V.col(i).tail(lrDim) = pairs[i].lrFeature * wl;
  }
  const Vector sample_norms = V.colwise().norm();
  if (sample_norms.maxCoeff() <= 0.0) throw DegenerateDataError("all training samples are zero");

  // Initialization: K distinct nonzero samples in seeded random order.
  Rng rng(opt.seed);
  std::vector<Eigen::Index> order(N);
  std::iota(order.begin(), order.end(), 0);
  for (Eigen::Index i = N - 1; i > 0; --i)
    std::swap(order[i], order[static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
  Matrix D(dim, K);
  int filled = 0;
  for (Eigen::Index i : order) {
    if (filled == K) break;
    if (sample_norms[i] <= 1e-12) continue;
    const Vector atom = V.col(i) / sample_norms[i];
    bool duplicate = false;
    for (int k = 0; k < filled && !duplicate; ++k) duplicate = D.col(k) == atom;
    if (!duplicate) D.col(filled++) = atom;
  }
  if (filled < K)
    throw InsufficientDataError("insufficient training data: only " + std::to_string(filled) +
                                    " distinct nonzero samples for " + std::to_string(K) + " atoms",
                                "distinct samples", static_cast<std::size_t>(filled), static_cast<std::size_t>(K));

  std::vector<detail::SparseColumn> codes(N);
  Matrix R = V;  // residuals under the current codes (all-zero codes to start)
  Vector res2 = R.colwise().squaredNorm();
  TrainingMeta meta{pairs.size(), opt.iterations, opt.seed, {}};

  for (int iter = 0;; ++iter) {
    // (a) sparse coding
    const Matrix gram = D.transpose() * D;
    const Matrix corr = D.transpose() * V;
    parallel_for(static_cast<std::size_t>(N), [&](std::size_t ui) {
      const auto i = static_cast<Eigen::Index>(ui);
      const double energy = sample_norms[i] * sample_norms[i];
      if (energy <= 0.0) return;
      SparseCode sc;
      try {
        sc = omp_solve_gram(gram, corr.col(i), energy, opt.sparsity, 0.0);
      } catch (const RankDeficiencyError&) {
        return;  // keep the previous code
      }
      detail::SparseColumn col;
      Vector recon = Vector::Zero(dim);
      for (int j : sc.support) {
        col.idx.push_back(j);
        col.val.push_back(sc.coefficients[j]);
        recon.noalias() += D.col(j) * sc.coefficients[j];
      }
      const Vector r = V.col(i) - recon;
      const double e = r.squaredNorm();
      if (iter == 0 || e < res2[i]) {
        codes[ui] = std::move(col);
        R.col(i) = r;
        res2[i] = e;
      }
    });
    meta.objectiveTrace.push_back(res2.sum() / static_cast<double>(N));
    if (iter >= opt.iterations) break;

    // (b) atom updates
    std::vector<std::vector<std::pair<Eigen::Index, std::size_t>>> users(K);  // (sample, slot in code)
    for (Eigen::Index i = 0; i < N; ++i)
      for (std::size_t s = 0; s < codes[i].idx.size(); ++s) users[codes[i].idx[s]].emplace_back(i, s);
    std::vector<char> taken(N, 0);
    for (int k = 0; k < K; ++k) {
      auto& us = users[k];
      if (us.empty()) {
        Eigen::Index worst = -1;
        double worst_err = 0.0;
        for (Eigen::Index i = 0; i < N; ++i)
          if (!taken[i] && res2[i] > worst_err) {
            worst_err = res2[i];
            worst = i;
          }
        if (worst >= 0) {
          D.col(k) = V.col(worst) / sample_norms[worst];
          taken[worst] = 1;
        }
        continue;
      }
      const auto m = static_cast<Eigen::Index>(us.size());
      Matrix E(dim, m);
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto [i, s] = us[j];
        E.col(j) = R.col(i) + D.col(k) * codes[i].val[s];
      }
      Vector u = D.col(k);
      for (int step = 0; step < opt.powerSteps; ++step) {
        Vector next = E * (E.transpose() * u);
        const double nn = next.norm();
        if (nn <= 0.0) break;
        next /= nn;
        const double change = (next - u).norm();
        u = next;
        if (change < 1e-12) break;
      }
      u.normalize();
      const Vector x = E.transpose() * u;
      D.col(k) = u;
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto [i, s] = us[j];
        codes[i].val[s] = x[j];
        R.col(i) = E.col(j) - u * x[j];
        res2[i] = R.col(i).squaredNorm();
      }
    }
  }

  DictionaryPair out;
  out.cls = cls;
  out.patchSize = patchSize;
  out.scale = opt.scale;
  out.dh = D.topRows(hrDim) * std::sqrt(static_cast<double>(hrDim));
  out.dl = D.bottomRows(lrDim) * std::sqrt(static_cast<double>(lrDim));
  out.meta = std::move(meta);
  return out;
}

}  // namespace cssr
