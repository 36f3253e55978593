#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cssr/classifier.hpp"
#include "cssr/errors.hpp"
#include "cssr/phantom.hpp"

namespace cssr {

/// Ground truth of one classification block, from the phantom's labels.
enum class BlockTruth : std::uint8_t {
  Background,  // every pixel is background
  Boundary,    // background and foreground pixels both present
  Texture,     // every pixel is texture
  Interior,    // everything else inside the object
};

struct LabeledBlocks {
  std::vector<double> rawFeatures;  // activity at unit gain
  std::vector<BlockTruth> truth;
};

/// Classification blocks of a phantom on the classifier's block grid.
inline LabeledBlocks labeled_blocks(const Phantom& ph, const ClassifierConfig& cfg, const MeasurementMatrix& phi) {
  const PatchGrid grid = extract_patches(ph.image, cfg.blockSize, 0);
  LabeledBlocks out;
  for (const Patch& p : grid.patches) {
    int background = 0, texture = 0;
    for (int r = 0; r < p.size; ++r)
      for (int c = 0; c < p.size; ++c) {
        const RegionLabel l = ph.label(p.row + r, p.col + c);
        background += l == RegionLabel::Background;
        texture += l == RegionLabel::Texture;
      }
    const int n = p.size * p.size;
    out.rawFeatures.push_back(patch_feature(p, phi, 1.0));
    out.truth.push_back(background == n  ? BlockTruth::Background
                        : background > 0 ? BlockTruth::Boundary
                        : texture == n   ? BlockTruth::Texture
                                         : BlockTruth::Interior);
  }
  return out;
}

struct GainScore {
  double gain = 1.0;
  std::array<ClassCounts, 4> outcome;  // per BlockTruth
  double backgroundSmooth = 0.0;       // share of background blocks labeled Smooth
  bool boundaryMajorityEdge = false;   // Edge is the strict plurality on boundary blocks
  double balancedAccuracy = 0.0;       // mean hit rate: background/interior->Smooth, texture->Texture, boundary->Edge

  bool meets_targets() const { return backgroundSmooth >= 0.95 && boundaryMajorityEdge; }
};

inline GainScore score_gain(const LabeledBlocks& blocks, double gain, const ClassifierConfig& cfg) {
  GainScore s;
  s.gain = gain;
  for (std::size_t i = 0; i < blocks.rawFeatures.size(); ++i)
    ++s.outcome[static_cast<std::size_t>(blocks.truth[i])][classify_feature(gain * blocks.rawFeatures[i], cfg)];
  auto share = [&](BlockTruth t, PatchClass c) {
    const ClassCounts& k = s.outcome[static_cast<std::size_t>(t)];
    return k.total() ? static_cast<double>(k[c]) / static_cast<double>(k.total()) : -1.0;
  };
  s.backgroundSmooth = share(BlockTruth::Background, PatchClass::Smooth);
  const ClassCounts& b = s.outcome[static_cast<std::size_t>(BlockTruth::Boundary)];
  s.boundaryMajorityEdge = b[PatchClass::Edge] > b[PatchClass::Smooth] && b[PatchClass::Edge] > b[PatchClass::Texture];
  const std::array<std::pair<BlockTruth, PatchClass>, 4> targets{{{BlockTruth::Background, PatchClass::Smooth},
                                                                  {BlockTruth::Boundary, PatchClass::Edge},
                                                                  {BlockTruth::Texture, PatchClass::Texture},
                                                                  {BlockTruth::Interior, PatchClass::Smooth}}};
  int groups = 0;
  for (const auto& [t, c] : targets) {
    const double v = share(t, c);
    if (v < 0.0) continue;
    s.balancedAccuracy += v;
    ++groups;
  }
  if (groups) s.balancedAccuracy /= groups;
  return s;
}

/// Log-spaced gains, perDecade per factor of ten, from lo to hi inclusive.
inline std::vector<double> gain_grid(double lo, double hi, int perDecade) {
  if (!(lo > 0.0 && hi >= lo) || perDecade < 1) throw InvalidArgument("invalid gain grid");
  std::vector<double> out;
  const int steps = static_cast<int>(std::lround(std::log10(hi / lo) * perDecade));
  for (int k = 0; k <= steps; ++k) out.push_back(lo * std::pow(10.0, static_cast<double>(k) / perDecade));
  return out;
}

inline std::vector<GainScore> sweep_feature_gain(const LabeledBlocks& blocks, const ClassifierConfig& cfg,
                                                 const std::vector<double>& gains) {
  std::vector<GainScore> out;
  for (double g : gains) out.push_back(score_gain(blocks, g, cfg));
  return out;
}

/// Highest balanced accuracy among gains meeting the targets; ties go to
/// the smaller gain. Throws when no gain meets the targets.
inline GainScore select_feature_gain(const std::vector<GainScore>& scores) {
  const GainScore* best = nullptr;
  for (const GainScore& s : scores)
    if (s.meets_targets() && (!best || s.balancedAccuracy > best->balancedAccuracy)) best = &s;
  if (!best) throw DegenerateDataError("no gain in the sweep meets the background/boundary targets");
  return *best;
}

/// The labeled phantom the shipped gain was calibrated on.
inline Phantom calibration_phantom() { return make_phantom(128, 128, PhantomKind::SheppLike, 1); }

}  // namespace cssr
