#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cssr/classifier.hpp"
#include "cssr/dictionary.hpp"
#include "cssr/errors.hpp"
#include "cssr/image.hpp"
#include "cssr/nonlocal.hpp"
#include "cssr/parallel.hpp"
#include "cssr/sparse.hpp"

namespace cssr {

enum class SolverKind { Ista, Omp };
enum class JointScheme { TwoStage, FullJoint };

struct ReconConfig {
  int patchSize = 5;
  int overlap = 4;
  double lambda = 0.1;  // relative to the anchor's feature norm
  int scale = 2;
  int ibpIterations = 20;
  double ibpStep = 1.0;
  SearchConfig search;
  SolverKind solver = SolverKind::Ista;
  std::uint64_t seed = 1;

  JointScheme jointScheme = JointScheme::TwoStage;
  int refinementPasses = 1;
  int ompSparsity = 3;
  int istaMaxIter = 300;
  double istaTol = 1e-4;
  bool accelerated = true;  // monotone FISTA for the coding sub-problems
  double blurSigma = 0.0;  // 0 selects the default for the scale
  ClassifierConfig classifier;

  void validate() const {
    if (patchSize < 2) throw InvalidArgument("patch size must be >= 2");
    if (overlap < 0 || overlap >= patchSize) throw InvalidArgument("overlap must satisfy 0 <= overlap < patch size");
    if (!(lambda > 0.0)) throw InvalidArgument("lambda must be positive");
    if (scale < 2 || scale > 4) throw InvalidArgument("scale must be 2, 3 or 4");
    if (ibpIterations < 0) throw InvalidArgument("IBP iterations must be non-negative");
    if (!(ibpStep >= 0.0)) throw InvalidArgument("IBP step must be non-negative");
    if (refinementPasses < 0) throw InvalidArgument("refinement passes must be non-negative");
    if (ompSparsity < 1) throw InvalidArgument("OMP sparsity must be positive");
    if (istaMaxIter < 1 || !(istaTol > 0.0)) throw InvalidArgument("ISTA limits must be positive");
    if (blurSigma < 0.0) throw InvalidArgument("blur sigma must be non-negative");
    search.validate();
    classifier.validate();
  }

  DegradationModel degradation() const { return DegradationModel::gaussian(scale, blurSigma); }
};

// --- coding dictionary ---------------------------------------------------------------

/// A dictionary pair in the dimension-balanced coordinates used for coding,
/// with its Gram matrices and their spectral bounds.
class CodingDictionary {
 public:
  explicit CodingDictionary(const DictionaryPair& d) : pair_(&d) {
    if (d.atoms() < 1) throw InvalidArgument("dictionary has no atoms");
    if (d.dh.cols() != d.dl.cols()) throw InvalidArgument("HR and LR dictionaries differ in atom count");
    lrWeight_ = 1.0 / std::sqrt(static_cast<double>(d.lr_dim()));
    hrWeight_ = 1.0 / std::sqrt(static_cast<double>(d.hr_dim()));
    bl_ = d.dl * lrWeight_;
    bh_ = d.dh * hrWeight_;
    gl_ = bl_.transpose() * bl_;
    gh_ = bh_.transpose() * bh_;
    lipL_ = largest_eigenvalue(gl_, 100) * 1.001;
    lipH_ = largest_eigenvalue(gh_, 100) * 1.001;
  }

  const DictionaryPair& pair() const { return *pair_; }
  int atoms() const { return pair_->atoms(); }
  double lr_weight() const { return lrWeight_; }
  const Matrix& lr_basis() const { return bl_; }
  const Matrix& hr_basis() const { return bh_; }
  const Matrix& lr_gram() const { return gl_; }
  const Matrix& hr_gram() const { return gh_; }
  double lr_bound() const { return lipL_; }
  double hr_bound() const { return lipH_; }

 private:
  const DictionaryPair* pair_;
  double lrWeight_ = 1.0, hrWeight_ = 1.0;
  Matrix bl_, bh_, gl_, gh_;
  double lipL_ = 0.0, lipH_ = 0.0;
};

namespace detail {
/// wa * A + wb * B as a Gram operator.
struct CombinedGram {
  const Matrix& a;
  const Matrix& b;
  double wa;
  double wb;

  Vector apply(const Vector& v) const {
    Vector out = wa * (a * v);
    if (wb != 0.0) out.noalias() += wb * (b * v);
    return out;
  }
  void add_column(Eigen::Index j, double s, Vector& out) const {
    out.noalias() += (wa * s) * a.col(j);
    if (wb != 0.0) out.noalias() += (wb * s) * b.col(j);
  }
};
}  // namespace detail

// --- joint coding problem ---------------------------------------------------------------

/// One anchor with its similar blocks, in balanced coordinates:
///   |t - Bl a|^2 + sum_i |t_i - Bl a_i|^2 + lambda (|a|_1 + sum_i |a_i|_1)
///     + sum_i gamma_i |Bh (a - a_i)|^2
struct JointProblem {
  const CodingDictionary* dict = nullptr;
  Vector target;
  std::vector<Vector> similarTargets;
  std::vector<double> gammas;
  double lambda = 0.1;
};

struct JointSolveOptions {
  SolverKind solver = SolverKind::Ista;
  int refinementPasses = 1;
  int ompSparsity = 3;
  int maxIter = 300;
  double tol = 1e-4;
  bool accelerated = true;
};

struct JointSolution {
  Vector alpha;
  std::vector<Vector> similarCodes;
  std::vector<double> objectiveTrace;  // after stage two, then after each refinement pass
  int objectiveIncreases = 0;          // passes that raised the objective by more than 1e-9 (relative)
};

inline double joint_objective(const JointProblem& pb, const Vector& alpha, std::span<const Vector> similar) {
  const CodingDictionary& d = *pb.dict;
  double j = (pb.target - d.lr_basis() * alpha).squaredNorm() + pb.lambda * alpha.lpNorm<1>();
  const Vector hrAnchor = d.hr_basis() * alpha;
  for (std::size_t i = 0; i < similar.size(); ++i) {
    j += (pb.similarTargets[i] - d.lr_basis() * similar[i]).squaredNorm() + pb.lambda * similar[i].lpNorm<1>();
    j += pb.gammas[i] * (hrAnchor - d.hr_basis() * similar[i]).squaredNorm();
  }
  return j;
}

namespace detail {

inline void check_problem(const JointProblem& pb) {
  if (pb.dict == nullptr) throw InvalidArgument("joint problem has no dictionary");
  if (pb.target.size() != pb.dict->lr_basis().rows()) throw InvalidArgument("anchor feature has the wrong dimension");
  if (pb.similarTargets.size() != pb.gammas.size()) throw InvalidArgument("one gamma per similar block is required");
  for (const Vector& t : pb.similarTargets)
    if (t.size() != pb.target.size()) throw InvalidArgument("similar feature has the wrong dimension");
  if (!(pb.lambda > 0.0)) throw InvalidArgument("lambda must be positive");
}

/// min |t - Bl a|^2 + w |Bh (a - anchor)|^2 + lambda |a|_1, with w = 0 for
/// plain coding.
inline Vector code_against(const CodingDictionary& d, const Vector& t, double w, const Vector* anchor, double lambda,
                           const JointSolveOptions& opt, const Vector* warm) {
  if (opt.solver == SolverKind::Omp) {
    if (w == 0.0) return omp_solve(d.lr_basis(), t, opt.ompSparsity, 0.0).coefficients;
    Matrix A(d.lr_basis().rows() + d.hr_basis().rows(), d.atoms());
    A << d.lr_basis(), std::sqrt(w) * d.hr_basis();
    Vector y(A.rows());
    y << t, std::sqrt(w) * (d.hr_basis() * *anchor);
    return omp_solve(A, y, opt.ompSparsity, 0.0).coefficients;
  }
  Vector b = 2.0 * (d.lr_basis().transpose() * t);
  double c = t.squaredNorm();
  if (w != 0.0) {
    const Vector ga = d.hr_gram() * *anchor;
    b.noalias() += 2.0 * w * ga;
    c += w * anchor->dot(ga);
  }
  const CombinedGram q{d.lr_gram(), d.hr_gram(), 2.0, 2.0 * w};
  const double L = 2.0 * (d.lr_bound() + w * d.hr_bound());
  return solve_quadratic_l1_op(q, b, c, L, IstaOptions{lambda, opt.maxIter, opt.tol, false, opt.accelerated}, warm).coefficients;
}

/// Anchor update with all similar codes fixed:
///   min |t - Bl a|^2 + sum_i gamma_i |Bh (a - a_i)|^2 + lambda |a|_1
inline Vector code_anchor(const JointProblem& pb, std::span<const Vector> similar, const JointSolveOptions& opt,
                          const Vector* warm) {
  const CodingDictionary& d = *pb.dict;
  double total = 0.0;
  Vector pull = Vector::Zero(d.atoms());
  for (std::size_t i = 0; i < similar.size(); ++i) {
    total += pb.gammas[i];
    pull.noalias() += pb.gammas[i] * similar[i];
  }
  if (total == 0.0) return code_against(d, pb.target, 0.0, nullptr, pb.lambda, opt, warm);
  if (opt.solver == SolverKind::Omp) {
    const auto rows = d.lr_basis().rows(), hr = d.hr_basis().rows();
    Matrix A(rows + hr * static_cast<Eigen::Index>(similar.size()), d.atoms());
    Vector y(A.rows());
    A.topRows(rows) = d.lr_basis();
    y.head(rows) = pb.target;
    for (std::size_t i = 0; i < similar.size(); ++i) {
      const double s = std::sqrt(pb.gammas[i]);
      A.middleRows(rows + hr * static_cast<Eigen::Index>(i), hr) = s * d.hr_basis();
      y.segment(rows + hr * static_cast<Eigen::Index>(i), hr) = s * (d.hr_basis() * similar[i]);
    }
    return omp_solve(A, y, opt.ompSparsity, 0.0).coefficients;
  }
  Vector b = 2.0 * (d.lr_basis().transpose() * pb.target + d.hr_gram() * pull);
  double c = pb.target.squaredNorm();
  for (std::size_t i = 0; i < similar.size(); ++i) c += pb.gammas[i] * similar[i].dot(d.hr_gram() * similar[i]);
  const CombinedGram q{d.lr_gram(), d.hr_gram(), 2.0, 2.0 * total};
  const double L = 2.0 * (d.lr_bound() + total * d.hr_bound());
  return solve_quadratic_l1_op(q, b, c, L, IstaOptions{pb.lambda, opt.maxIter, opt.tol, false, opt.accelerated}, warm).coefficients;
}

}  // namespace detail

/// Block-coordinate solver. Stage one codes each similar block on its own,
/// stage two codes the anchor against them; each refinement pass re-codes
/// every similar block with the anchor fixed and then the anchor again.
/// Warm starts, when given, must be in the problem's coordinates.
inline JointSolution solve_joint_two_stage(const JointProblem& pb, const JointSolveOptions& opt,
                                           const Vector* anchorWarm = nullptr,
                                           std::span<const Vector> similarWarm = {}) {
  detail::check_problem(pb);
  const CodingDictionary& d = *pb.dict;
  const std::size_t n = pb.similarTargets.size();
  JointSolution out;
  out.similarCodes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector* warm = i < similarWarm.size() ? &similarWarm[i] : nullptr;
    out.similarCodes[i] = detail::code_against(d, pb.similarTargets[i], 0.0, nullptr, pb.lambda, opt, warm);
  }
  out.alpha = detail::code_anchor(pb, out.similarCodes, opt, anchorWarm);
  out.objectiveTrace.push_back(joint_objective(pb, out.alpha, out.similarCodes));
  for (int pass = 0; pass < opt.refinementPasses && n > 0; ++pass) {
    for (std::size_t i = 0; i < n; ++i)
      out.similarCodes[i] =
          detail::code_against(d, pb.similarTargets[i], pb.gammas[i], &out.alpha, pb.lambda, opt, &out.similarCodes[i]);
    out.alpha = detail::code_anchor(pb, out.similarCodes, opt, &out.alpha);
    const double j = joint_objective(pb, out.alpha, out.similarCodes);
    const double prev = out.objectiveTrace.back();
    if (j > prev + 1e-9 * std::max(1.0, std::abs(prev))) ++out.objectiveIncreases;
    out.objectiveTrace.push_back(j);
  }
  return out;
}

/// Proximal gradient on the full joint variable (a, a_1, ..., a_n), with the
/// same backtracking safeguard as ISTA. Slow; meant for checking the
/// two-stage solver.
inline JointSolution solve_joint_full(const JointProblem& pb, int maxIter, double tol) {
  detail::check_problem(pb);
  const CodingDictionary& d = *pb.dict;
  const std::size_t n = pb.similarTargets.size();
  const Eigen::Index K = d.atoms();
  double total = 0.0;
  for (double g : pb.gammas) total += g;

  std::vector<Vector> x(n + 1, Vector::Zero(K));  // x[0] = anchor
  std::vector<Vector> lin(n + 1);                 // Bl^T t terms
  lin[0] = d.lr_basis().transpose() * pb.target;
  for (std::size_t i = 0; i < n; ++i) lin[i + 1] = d.lr_basis().transpose() * pb.similarTargets[i];

  auto value = [&](const std::vector<Vector>& v) {
    return joint_objective(pb, v[0], std::span<const Vector>(v).subspan(1));
  };
  auto gradient = [&](const std::vector<Vector>& v) {
    std::vector<Vector> g(n + 1);
    Vector pullDiff = Vector::Zero(K);
    for (std::size_t i = 0; i < n; ++i) pullDiff.noalias() += pb.gammas[i] * (v[0] - v[i + 1]);
    g[0] = 2.0 * (d.lr_gram() * v[0] - lin[0] + d.hr_gram() * pullDiff);
    for (std::size_t i = 0; i < n; ++i)
      g[i + 1] = 2.0 * (d.lr_gram() * v[i + 1] - lin[i + 1] - pb.gammas[i] * (d.hr_gram() * (v[0] - v[i + 1])));
    return g;
  };

  double L = 2.0 * (d.lr_bound() + 2.0 * total * d.hr_bound());
  double f = value(x);
  JointSolution out;
  int backtracks = 0;
  for (int it = 0; it < maxIter; ++it) {
    const auto g = gradient(x);
    std::vector<Vector> next(n + 1, Vector(K));
    double change = 0.0;
    for (std::size_t b = 0; b <= n; ++b) {
      for (Eigen::Index k = 0; k < K; ++k) next[b][k] = soft_threshold(x[b][k] - g[b][k] / L, pb.lambda / L);
      change = std::max(change, (next[b] - x[b]).lpNorm<Eigen::Infinity>());
    }
    const double fn = value(next);
    if (!std::isfinite(fn)) throw DivergenceError("joint proximal gradient produced non-finite values");
    if (fn > f + 1e-12 * std::max(1.0, std::abs(f))) {
      if (++backtracks > 60) throw DivergenceError("joint proximal gradient step could not be stabilized");
      L *= 2.0;
      continue;
    }
    x.swap(next);
    f = fn;
    if (change < tol) break;
  }
  out.alpha = x[0];
  out.similarCodes.assign(x.begin() + 1, x.end());
  out.objectiveTrace.push_back(f);
  return out;
}

// --- feature-level coding ------------------------------------------------------------------

inline JointSolveOptions joint_options(const ReconConfig& cfg) {
  return {cfg.solver, cfg.refinementPasses, cfg.ompSparsity, cfg.istaMaxIter, cfg.istaTol, cfg.accelerated};
}

namespace detail {
// Anchors whose balanced feature norm is below this carry no structure and get the zero code.
inline constexpr double kFlatFeatureNorm = 1e-9;

inline SparseCode finish_code(const CodingDictionary& d, const Vector& feature, Vector alpha) {
  SparseCode sc;
  sc.residualNorm = (feature - d.pair().dl * alpha).norm();
  sc.support = support_of(alpha);
  sc.coefficients = std::move(alpha);
  return sc;
}

inline void check_feature(const CodingDictionary& d, const Vector& feature) {
  if (feature.size() != d.pair().lr_dim())
    throw InvalidArgument("feature has " + std::to_string(feature.size()) + " entries, dictionary expects " +
                          std::to_string(d.pair().lr_dim()));
}
}  // namespace detail

/// Plain sparse code of one LR feature vector. The penalty is applied after
/// scaling the balanced feature to unit norm, so lambda is relative to the
/// patch's own contrast. warm is in returned (feature) units.
inline SparseCode plain_sparse_code(const Vector& feature, const CodingDictionary& d, const ReconConfig& cfg,
                                    const Vector* warm = nullptr) {
  detail::check_feature(d, feature);
  const Vector t = feature * d.lr_weight();
  const double norm = t.norm();
  if (norm <= detail::kFlatFeatureNorm) return detail::finish_code(d, feature, Vector::Zero(d.atoms()));
  Vector w;
  if (warm) w = *warm / norm;
  const Vector alpha =
      detail::code_against(d, t / norm, 0.0, nullptr, cfg.lambda, joint_options(cfg), warm ? &w : nullptr);
  return detail::finish_code(d, feature, alpha * norm);
}

/// Sparse code of an anchor feature coupled with its similar blocks' features.
/// All features share the anchor's normalization. An empty similar set gives
/// exactly plain_sparse_code. Warm starts are in returned (feature) units.
inline SparseCode joint_sparse_code(const Vector& feature, PatchClass anchorClass,
                                    std::span<const Vector> similarFeatures, std::span<const double> gammas,
                                    const CodingDictionary& d, const ReconConfig& cfg, const Vector* anchorWarm = nullptr,
                                    std::span<const Vector> similarWarm = {}, int* objectiveIncreases = nullptr) {
  if (d.pair().cls && *d.pair().cls != anchorClass)
    throw ContractViolation("anchor classified as " + std::string(to_string(anchorClass)) + " but coded with the " +
                            std::string(to_string(*d.pair().cls)) + " dictionary");
  if (similarFeatures.size() != gammas.size()) throw InvalidArgument("one gamma per similar block is required");
  detail::check_feature(d, feature);
  for (const Vector& f : similarFeatures) detail::check_feature(d, f);
  if (similarFeatures.empty()) return plain_sparse_code(feature, d, cfg, anchorWarm);

  const Vector t = feature * d.lr_weight();
  const double norm = t.norm();
  if (norm <= detail::kFlatFeatureNorm) return detail::finish_code(d, feature, Vector::Zero(d.atoms()));

  JointProblem pb{&d, t / norm, {}, std::vector<double>(gammas.begin(), gammas.end()), cfg.lambda};
  for (const Vector& f : similarFeatures) pb.similarTargets.push_back(f * (d.lr_weight() / norm));
  Vector aw;
  std::vector<Vector> sw;
  if (anchorWarm) aw = *anchorWarm / norm;
  for (const Vector& v : similarWarm) sw.push_back(v / norm);

  Vector alpha;
  if (cfg.jointScheme == JointScheme::FullJoint) {
    alpha = solve_joint_full(pb, cfg.istaMaxIter * 10, cfg.istaTol).alpha;
  } else {
    const JointSolution sol = solve_joint_two_stage(pb, joint_options(cfg), anchorWarm ? &aw : nullptr, sw);
    if (objectiveIncreases) *objectiveIncreases += sol.objectiveIncreases;
    alpha = sol.alpha;
  }
  return detail::finish_code(d, feature, alpha * norm);
}

/// HR patch Dh alpha + dcLevel at the given origin.
inline Patch synthesize_patch(const Vector& alpha, const DictionaryPair& d, double dcLevel, int row = 0, int col = 0) {
  if (alpha.size() != d.atoms()) throw InvalidArgument("code length does not match the atom count");
  const Vector v = d.dh * alpha;
  Patch p{d.patchSize, row, col, std::vector<double>(static_cast<std::size_t>(v.size()))};
  for (Eigen::Index i = 0; i < v.size(); ++i) p.values[static_cast<std::size_t>(i)] = v[i] + dcLevel;
  return p;
}

// --- global refinement ----------------------------------------------------------------------

struct IbpResult {
  Image image;
  std::vector<double> residuals;  // |yObs - degrade(x)| for the input and each accepted iterate
  int violations = 0;             // iterations rejected because the residual grew
};

inline double consistency_residual(const Image& x, const Image& yObs, const DegradationModel& model) {
  const Image y = degrade(x, model);
  double s = 0.0;
  const auto a = y.pixels(), b = yObs.pixels();
  for (std::size_t i = 0; i < a.size(); ++i) s += (b[i] - a[i]) * (b[i] - a[i]);
  return std::sqrt(s);
}

/// Iterative back-projection: x += step * blur(bicubic_up(yObs - degrade(x))).
/// Stops at the first iteration that would raise the residual and keeps the
/// previous iterate.
inline IbpResult ibp_refine(const Image& xHat, const Image& yObs, const DegradationModel& model, int iterations,
                            double step) {
  {
    const Image probe = degrade(xHat, model);
    if (!probe.same_shape(yObs))
      throw InvalidArgument("observed image is " + std::to_string(yObs.width()) + "x" +
                            std::to_string(yObs.height()) + ", degraded estimate is " +
                            std::to_string(probe.width()) + "x" + std::to_string(probe.height()));
  }
  IbpResult out{xHat, {}, 0};
  out.residuals.push_back(consistency_residual(xHat, yObs, model));
  if (step == 0.0) return out;
  for (int it = 0; it < iterations; ++it) {
    if (out.residuals.back() == 0.0) break;
    const Image y = degrade(out.image, model);
    Image diff(yObs.width(), yObs.height(), 0.0, yObs.range());
    for (int r = 0; r < yObs.height(); ++r)
      for (int c = 0; c < yObs.width(); ++c) diff(r, c) = yObs(r, c) - y(r, c);
    const Image back = convolve(upsample_to(diff, model.scale, xHat.width(), xHat.height()), model.blur);
    Image next = out.image;
    for (int r = 0; r < next.height(); ++r)
      for (int c = 0; c < next.width(); ++c) next(r, c) += step * back(r, c);
    const double res = consistency_residual(next, yObs, model);
    if (res > out.residuals.back()) {
      ++out.violations;
      break;
    }
    out.image = std::move(next);
    out.residuals.push_back(res);
  }
  return out;
}

/// Clamps every pixel into the image's declared range; returns how many moved.
inline std::size_t clamp_to_range(Image& img) {
  std::size_t n = 0;
  const ValueRange r = img.range();
  for (double& v : img.pixels()) {
    const double c = std::clamp(v, r.lo, r.hi);
    n += c != v;
    v = c;
  }
  return n;
}

// --- full pipeline ------------------------------------------------------------------------------

/// Dictionary per patch class. One shared pooled dictionary in all three
/// slots gives single-dictionary reconstruction.
struct DictionarySet {
  std::array<std::shared_ptr<const DictionaryPair>, 3> slots;

  static DictionarySet uniform(std::shared_ptr<const DictionaryPair> d) { return {{d, d, d}}; }

  void set(PatchClass c, std::shared_ptr<const DictionaryPair> d) { slots[static_cast<std::size_t>(c)] = std::move(d); }

  const std::shared_ptr<const DictionaryPair>& get(PatchClass c) const { return slots[static_cast<std::size_t>(c)]; }
};

struct ReconReport {
  ClassCounts patchClasses;
  std::size_t patches = 0;
  double meanSimilarSetSize = 0.0;
  int objectiveIncreases = 0;
  std::vector<double> ibpResiduals;
  int ibpViolations = 0;
  std::size_t clampedPixels = 0;
};

struct ReconResult {
  Image image;
  ReconReport report;
};

namespace detail {

inline void check_dictionary(const DictionaryPair& d, const ReconConfig& cfg, const std::string& slot) {
  if (d.scale != cfg.scale)
    throw ConfigError(slot + " dictionary was trained for scale " + std::to_string(d.scale) + ", run uses scale " +
                      std::to_string(cfg.scale));
  if (d.patchSize != cfg.patchSize)
    throw ConfigError(slot + " dictionary uses " + std::to_string(d.patchSize) + "px patches, run uses " +
                      std::to_string(cfg.patchSize));
  if (d.hr_dim() != cfg.patchSize * cfg.patchSize || d.atoms() < 1)
    throw ConfigError(slot + " dictionary has inconsistent dimensions");
}

inline void check_lr(const Image& lr, const ReconConfig& cfg) {
  if (lr.width() * cfg.scale < cfg.patchSize || lr.height() * cfg.scale < cfg.patchSize)
    throw InvalidArgument("LR image is too small for the patch size at this scale");
}

struct PatchStage {
  Image mid;
  FeatureMaps features;
  PatchGrid grid;
};

inline PatchStage prepare_patches(const Image& lr, const ReconConfig& cfg, FeatureMode mode) {
  const int W = lr.width() * cfg.scale, H = lr.height() * cfg.scale;
  PatchStage s{upsample_to(lr, cfg.scale, W, H), {}, {}};
  s.features = compute_feature_maps(s.mid, mode);
  s.grid = extract_patches(s.mid, cfg.patchSize, cfg.overlap);
  return s;
}

inline ReconResult finish_reconstruction(const Image& lr, const PatchGrid& grid, const ReconConfig& cfg,
                                         ReconReport report) {
  const int W = lr.width() * cfg.scale, H = lr.height() * cfg.scale;
  const Image initial = aggregate_patches(grid, W, H, lr.range());
  IbpResult ibp = ibp_refine(initial, lr, cfg.degradation(), cfg.ibpIterations, cfg.ibpStep);
  report.ibpResiduals = std::move(ibp.residuals);
  report.ibpViolations = ibp.violations;
  report.clampedPixels = clamp_to_range(ibp.image);
  return {std::move(ibp.image), std::move(report)};
}

}  // namespace detail

/// Classical single-dictionary sparse-coding SR: plain coding of every
/// patch, aggregation and back-projection.
inline ReconResult sparse_coding_sr(const Image& lr, const DictionaryPair& dict, const ReconConfig& cfg) {
  cfg.validate();
  detail::check_dictionary(dict, cfg, "the");
  detail::check_lr(lr, cfg);
  const CodingDictionary coder(dict);
  detail::PatchStage stage = detail::prepare_patches(lr, cfg, dict.feature_mode());
  auto& patches = stage.grid.patches;
  parallel_for(patches.size(), [&](std::size_t i) {
    Patch& p = patches[i];
    const Vector f = gather_feature(stage.features, p.row, p.col, cfg.patchSize);
    const SparseCode sc = plain_sparse_code(f, coder, cfg);
    p = synthesize_patch(sc.coefficients, dict, p.mean(), p.row, p.col);
  });
  ReconReport report;
  report.patches = patches.size();
  return detail::finish_reconstruction(lr, stage.grid, cfg, std::move(report));
}

/// Classified, nonlocally regularized sparse-coding SR.
///
/// The LR image is bicubic-upsampled onto the HR grid; each overlapping
/// patch of that mid-resolution image is classified, matched against
/// similar patches, jointly coded with them on its class dictionary and
/// synthesized with the mid-resolution patch mean as DC. Patches are
/// averaged and the result is back-projected and clamped.
inline ReconResult super_resolve(const Image& lr, const DictionarySet& dicts, const ReconConfig& cfg,
                                 const MeasurementMatrix& phi) {
  cfg.validate();
  for (PatchClass c : kAllClasses) {
    const auto& d = dicts.get(c);
    if (!d) throw ConfigError("no dictionary for class '" + std::string(to_string(c)) + "'");
    detail::check_dictionary(*d, cfg, std::string(to_string(c)));
    if (d->cls && *d->cls != c)
      throw ConfigError("the " + std::string(to_string(*d->cls)) + " dictionary is in the " +
                        std::string(to_string(c)) + " slot");
    if (d->feature_mode() != dicts.get(PatchClass::Smooth)->feature_mode() ||
        d->atoms() != dicts.get(PatchClass::Smooth)->atoms())
      throw ConfigError("class dictionaries differ in feature mode or atom count");
  }
  detail::check_lr(lr, cfg);

  std::map<const DictionaryPair*, std::unique_ptr<CodingDictionary>> coders;
  std::array<const CodingDictionary*, 3> coderFor{};
  for (PatchClass c : kAllClasses) {
    const DictionaryPair* d = dicts.get(c).get();
    auto& slot = coders[d];
    if (!slot) slot = std::make_unique<CodingDictionary>(*d);
    coderFor[static_cast<std::size_t>(c)] = slot.get();
  }

  const int p = cfg.patchSize;
  detail::PatchStage stage = detail::prepare_patches(lr, cfg, dicts.get(PatchClass::Smooth)->feature_mode());
  const Image& mid = stage.mid;
  auto& patches = stage.grid.patches;
  const std::size_t N = patches.size();
  const BlockClassifier classifier(mid, cfg.classifier, phi);

  // Pass one: class, feature and plain code of every patch.
  std::vector<PatchClass> classes(N);
  std::vector<Vector> features(N), plain(N);
  parallel_for(N, [&](std::size_t i) {
    const Patch& q = patches[i];
    classes[i] = classifier.classify_at(q.row, q.col, p);
    features[i] = gather_feature(stage.features, q.row, q.col, p);
    plain[i] = plain_sparse_code(features[i], *coderFor[static_cast<std::size_t>(classes[i])], cfg).coefficients;
  });

  // Grid index of every patch origin, for reusing pass-one results.
  const int originsPerRow = mid.width() - p + 1;
  std::vector<int> gridIndex(static_cast<std::size_t>(originsPerRow) * (mid.height() - p + 1), -1);
  for (std::size_t i = 0; i < N; ++i)
    gridIndex[static_cast<std::size_t>(patches[i].row) * originsPerRow + patches[i].col] = static_cast<int>(i);

  // Pass two: nonlocal joint coding.
  std::vector<Vector> codes(N);
  std::vector<std::size_t> setSizes(N, 0);
  std::vector<int> increases(N, 0);
  parallel_for(N, [&](std::size_t i) {
    const std::size_t ci = static_cast<std::size_t>(classes[i]);
    if (cfg.search.nMax == 0) {
      codes[i] = plain[i];
      return;
    }
    const SimilarSet set = spiral_search(mid, patches[i], cfg.search);
    setSizes[i] = set.members.size();
    if (set.members.empty()) {
      codes[i] = plain[i];
      return;
    }
    std::vector<Vector> simFeatures, simWarm;
    for (const SimilarMember& m : set.members) {
      const int j = gridIndex[static_cast<std::size_t>(m.patch.row) * originsPerRow + m.patch.col];
      if (j >= 0) {
        simFeatures.push_back(features[static_cast<std::size_t>(j)]);
        simWarm.push_back(static_cast<std::size_t>(classes[static_cast<std::size_t>(j)]) == ci
                              ? plain[static_cast<std::size_t>(j)]
                              : Vector::Zero(coderFor[ci]->atoms()));
      } else {
        simFeatures.push_back(gather_feature(stage.features, m.patch.row, m.patch.col, p));
        simWarm.push_back(Vector::Zero(coderFor[ci]->atoms()));
      }
    }
    codes[i] = joint_sparse_code(features[i], classes[i], simFeatures, set.gammas, *coderFor[ci], cfg, &plain[i],
                                 simWarm, &increases[i])
                   .coefficients;
  });

  ReconReport report;
  report.patches = N;
  std::size_t members = 0;
  for (std::size_t i = 0; i < N; ++i) {
    ++report.patchClasses[classes[i]];
    members += setSizes[i];
    report.objectiveIncreases += increases[i];
    Patch& q = patches[i];
    q = synthesize_patch(codes[i], coderFor[static_cast<std::size_t>(classes[i])]->pair(), q.mean(), q.row, q.col);
  }
  report.meanSimilarSetSize = N ? static_cast<double>(members) / static_cast<double>(N) : 0.0;
  return detail::finish_reconstruction(lr, stage.grid, cfg, std::move(report));
}

}  // namespace cssr
