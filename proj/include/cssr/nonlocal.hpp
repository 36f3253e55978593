#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "cssr/errors.hpp"
#include "cssr/image.hpp"

namespace cssr {

struct SearchConfig {
  int nMax = 10;
  double h = 75.0;
  int spiralRadius = 20;
  int farStepInit = 4;
  std::optional<double> distanceCutoff;  // defaults to 3 h^2
  int minMembers = 0;

  double cutoff() const { return distanceCutoff.value_or(3.0 * h * h); }

  void validate() const {
    if (nMax < 0 || minMembers < 0) throw InvalidArgument("similar-set sizes must be non-negative");
    if (!(h > 0.0)) throw InvalidArgument("h must be positive");
    if (spiralRadius < 1) throw InvalidArgument("spiral radius must be positive");
    if (farStepInit < 1) throw InvalidArgument("far step must be >= 1");
    if (!(cutoff() > 0.0)) throw InvalidArgument("distance cutoff must be positive");
  }
};

struct SimilarMember {
  Patch patch;
  double distance2 = 0.0;
};

struct SimilarSet {
  Patch anchor;
  std::vector<SimilarMember> members;  // ascending distance2
  std::vector<double> gammas;
};

/// Unnormalized window similarity exp(-|a - b|^2 / h^2), in (0, 1].
inline double nl_weight(const Patch& a, const Patch& b, double h) {
  if (a.size != b.size) throw InvalidArgument("windows differ in size");
  if (!(h > 0.0)) throw InvalidArgument("h must be positive");
  return std::exp(-patch_distance2(a, b) / (h * h));
}

/// gamma_i = exp(-d_i^2 / h^2) / sum_j exp(-d_j^2 / h^2); uniform when every
/// term underflows.
inline std::vector<double> gamma_weights(std::span<const double> distances2, double h) {
  if (!(h > 0.0)) throw InvalidArgument("h must be positive");
  std::vector<double> g(distances2.size());
  double z = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) z += g[i] = std::exp(-distances2[i] / (h * h));
  if (g.empty()) return g;
  if (!(z > 0.0)) {
    std::fill(g.begin(), g.end(), 1.0 / static_cast<double>(g.size()));
    return g;
  }
  for (double& v : g) v /= z;
  return g;
}

namespace detail {

/// Visits the origins on the square ring of Chebyshev radius rho around
/// (r0, c0), clockwise from the top-left corner, keeping every step-th cell
/// along the perimeter.
template <class Visit>
void visit_ring(int r0, int c0, int rho, int step, Visit&& visit) {
  if (rho == 0) {
    visit(r0, c0);
    return;
  }
  const int side = 2 * rho;
  int t = 0;
  auto emit = [&](int r, int c) {
    if (t++ % step == 0) visit(r, c);
  };
  for (int i = 0; i < side; ++i) emit(r0 - rho, c0 - rho + i);  // top, left to right
  for (int i = 0; i < side; ++i) emit(r0 - rho + i, c0 + rho);  // right, downwards
  for (int i = 0; i < side; ++i) emit(r0 + rho, c0 + rho - i);  // bottom, right to left
  for (int i = 0; i < side; ++i) emit(r0 + rho - i, c0 - rho);  // left, upwards
}

class MemberSet {
 public:
  MemberSet(int nMax, double cutoff, int minMembers) : nMax_(nMax), cutoff_(cutoff), minMembers_(minMembers) {}

  /// Squared distance above which a candidate cannot be admitted.
  double bound() const {
    if (minMembers_ > 0) return std::numeric_limits<double>::infinity();
    if (static_cast<int>(kept_.size()) < nMax_) return cutoff_;
    return std::min(cutoff_, kept_.back().second);
  }

  /// Stable insertion: ties keep the earlier-visited candidate first.
  void offer(int r, int c, double d2) {
    if (d2 < best_) best_ = d2;
    auto& list = d2 <= cutoff_ ? kept_ : rejected_;
    const int cap = d2 <= cutoff_ ? nMax_ : minMembers_;
    if (cap == 0) return;
    if (static_cast<int>(list.size()) == cap && !(d2 < list.back().second)) return;
    auto it = std::upper_bound(list.begin(), list.end(), d2,
                               [](double v, const auto& e) { return v < e.second; });
    list.insert(it, {{r, c}, d2});
    if (static_cast<int>(list.size()) > cap) list.pop_back();
  }

  double best() const { return best_; }

  std::vector<std::pair<std::pair<int, int>, double>> result() const {
    auto out = kept_;
    for (const auto& e : rejected_) {
      if (static_cast<int>(out.size()) >= std::min(nMax_, std::max(minMembers_, 0))) break;
      out.push_back(e);
    }
    return out;
  }

 private:
  int nMax_;
  double cutoff_;
  int minMembers_;
  double best_ = std::numeric_limits<double>::infinity();
  std::vector<std::pair<std::pair<int, int>, double>> kept_;
  std::vector<std::pair<std::pair<int, int>, double>> rejected_;
};

/// Squared distance with early exit once it exceeds bound (the return value
/// is then some partial sum > bound).
inline double bounded_distance2(const Image& img, const Patch& anchor, int r, int c, double bound) {
  double d = 0.0;
  const int p = anchor.size;
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      const double t = img(r + i, c + j) - anchor(i, j);
      d += t * t;
    }
    if (d > bound) return d;
  }
  return d;
}

}  // namespace detail

/// Tentative nonlocal search for blocks similar to the anchor.
///
/// Phase 1 walks square rings of Chebyshev radius 1..spiralRadius around the
/// anchor origin, visiting every origin. Phase 2 continues with rings
/// further out, visiting every step-th origin on each ring and advancing the
/// radius by the step. After each ring the step is halved (min 1) if the
/// best squared distance improved on that ring and doubled (max
/// 2 * farStepInit) otherwise. Candidates beyond distanceCutoff are dropped;
/// the nMax closest are kept, never including the anchor origin itself.
inline SimilarSet spiral_search(const Image& img, const Patch& anchor, const SearchConfig& cfg) {
  cfg.validate();
  const int p = anchor.size;
  const int maxR = img.height() - p, maxC = img.width() - p;
  if (anchor.row < 0 || anchor.col < 0 || anchor.row > maxR || anchor.col > maxC)
    throw InvalidArgument("anchor does not lie within the image");
  SimilarSet out{anchor, {}, {}};
  if (cfg.nMax == 0) return out;

  detail::MemberSet set(cfg.nMax, cfg.cutoff(), cfg.minMembers);
  const int r0 = anchor.row, c0 = anchor.col;
  auto visit = [&](int r, int c) {
    if (r < 0 || c < 0 || r > maxR || c > maxC) return;
    const double bound = set.bound();
    const double d2 = detail::bounded_distance2(img, anchor, r, c, bound);
    if (d2 <= bound) set.offer(r, c, d2);
  };
  const int extent = std::max({r0, maxR - r0, c0, maxC - c0});
  const int phase1 = std::min(cfg.spiralRadius, extent);
  for (int rho = 1; rho <= phase1; ++rho) detail::visit_ring(r0, c0, rho, 1, visit);

  int step = cfg.farStepInit;
  for (int rho = cfg.spiralRadius + step; rho <= extent; rho += step) {
    const double before = set.best();
    detail::visit_ring(r0, c0, rho, step, visit);
    step = set.best() < before ? std::max(1, step / 2) : std::min(2 * cfg.farStepInit, step * 2);
  }

  std::vector<double> d2s;
  for (const auto& [origin, d2] : set.result()) {
    out.members.push_back({crop_patch(img, origin.first, origin.second, p), d2});
    d2s.push_back(d2);
  }
  out.gammas = gamma_weights(d2s, cfg.h);
  return out;
}

/// Similarity heat map over all origins for one anchor, scaled to 0-255.
inline Image similarity_map(const Image& img, const Patch& anchor, double h) {
  const int p = anchor.size;
  Image out(img.width() - p + 1, img.height() - p + 1);
  for (int r = 0; r < out.height(); ++r)
    for (int c = 0; c < out.width(); ++c) out(r, c) = 255.0 * nl_weight(anchor, crop_patch(img, r, c, p), h);
  return out;
}

}  // namespace cssr
